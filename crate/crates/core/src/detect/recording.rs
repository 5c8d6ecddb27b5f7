use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;

/// Half-open sample range `[start, end)` on one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRange {
    pub channel: String,
    pub start: usize,
    pub end: usize,
}

impl SampleRange {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// Known anomalies in a recording: whole channels (e.g. an obstructed
/// sensor) and sample ranges on particular channels (e.g. spikes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub anomalous_channels: Vec<String>,
    pub anomalous_ranges: Vec<SampleRange>,
}

impl Default for GroundTruth {
    fn default() -> Self {
        Self {
            schema_version: GROUND_TRUTH_SCHEMA_VERSION,
            anomalous_channels: Vec::new(),
            anomalous_ranges: Vec::new(),
        }
    }
}

impl GroundTruth {
    /// Whether samples `[start, end)` of `channel` are anomalous.
    pub fn is_anomalous(&self, channel: &str, start: usize, end: usize) -> bool {
        self.anomalous_channels.iter().any(|c| c == channel)
            || self
                .anomalous_ranges
                .iter()
                .any(|r| r.channel == channel && r.overlaps(start, end))
    }

    /// Every channel name the truth refers to.
    pub fn referenced_channels(&self) -> impl Iterator<Item = &str> {
        self.anomalous_channels
            .iter()
            .map(String::as_str)
            .chain(self.anomalous_ranges.iter().map(|r| r.channel.as_str()))
    }
}

/// Multichannel time series, one column per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecording {
    channels: Vec<String>,
    sample_rate_hz: f64,
    samples: Array2<f64>,
    ground_truth: Option<GroundTruth>,
}

impl SensorRecording {
    pub fn new(channels: Vec<String>, sample_rate_hz: f64, samples: Array2<f64>) -> Result<Self> {
        let (t, d) = samples.dim();
        if t == 0 || d == 0 {
            return Err(Error::Empty("recording"));
        }
        if channels.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                found: channels.len(),
            });
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        for (i, name) in channels.iter().enumerate() {
            if channels[..i].contains(name) {
                return Err(Error::InvalidInput(format!(
                    "duplicate channel name `{name}`"
                )));
            }
        }
        ensure_finite(samples.iter(), "recording samples")?;
        Ok(Self {
            channels,
            sample_rate_hz,
            samples,
            ground_truth: None,
        })
    }

    pub fn with_ground_truth(mut self, truth: GroundTruth) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.samples.ncols()
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn channel(&self, index: usize) -> Vec<f64> {
        self.samples.column(index).to_vec()
    }
}

/// Output of [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Array2<f64>,
    /// Channels with `max == min`, mapped to all zeros.
    pub constant_channels: Vec<usize>,
}

/// Min-max scales every channel to `[-1, 1]` over the whole recording:
/// `y = 2(x - min)/(max - min) - 1`. Mean removal happens per segment.
pub fn normalize(samples: ArrayView2<'_, f64>) -> Result<Normalized> {
    let (t, d) = samples.dim();
    if t == 0 || d == 0 {
        return Err(Error::Empty("recording"));
    }
    ensure_finite(samples.iter(), "recording samples")?;
    let mut values = samples.to_owned();
    let mut constant_channels = Vec::new();
    for (j, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
        let (min, max) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if max == min {
            col.fill(0.0);
            constant_channels.push(j);
            continue;
        }
        let span = max - min;
        col.mapv_inplace(|v| 2.0 * ((v - min) / span) - 1.0);
    }
    Ok(Normalized {
        values,
        constant_channels,
    })
}

/// Normalises a single channel; returns the values and whether it was
/// constant.
pub fn normalize_channel(channel: &[f64]) -> Result<(Vec<f64>, bool)> {
    let column = ArrayView2::from_shape((channel.len(), 1), channel)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let normalized = normalize(column)?;
    let constant = !normalized.constant_channels.is_empty();
    Ok((normalized.values.into_raw_vec_and_offset().0, constant))
}

pub(crate) fn center_columns(m: &mut Array2<f64>) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / col.len() as f64;
        col.mapv_inplace(|v| v - mean);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn linear_endpoints() {
        let n = normalize(array![[0.0], [5.0], [10.0]].view()).unwrap();
        assert_eq!(n.values, array![[-1.0], [0.0], [1.0]]);
        assert!(n.constant_channels.is_empty());
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let n = normalize(array![[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]].view()).unwrap();
        assert_eq!(n.values.column(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(n.constant_channels, vec![0]);
        let (v, constant) = normalize_channel(&[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(v, vec![0.0; 3]);
        assert!(constant);
    }

    #[test]
    fn random_channels_hit_exact_bounds() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let t = rng.random_range(2..300);
            let scale = rng.random_range(1e-3..1e3);
            let x = Array2::from_shape_fn((t, 3), |_| rng.random_range(-scale..scale));
            let n = normalize(x.view()).unwrap();
            for col in n.values.columns() {
                let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(min, -1.0);
                assert_eq!(max, 1.0);
            }
        }
    }

    #[test]
    fn recording_validation() {
        let ok = SensorRecording::new(names(2), 2.0, array![[1.0, 2.0]]);
        assert!(ok.is_ok());
        assert!(SensorRecording::new(names(3), 2.0, array![[1.0, 2.0]]).is_err());
        assert!(SensorRecording::new(names(2), 0.0, array![[1.0, 2.0]]).is_err());
        assert!(SensorRecording::new(names(2), 2.0, array![[1.0, f64::NAN]]).is_err());
        assert!(SensorRecording::new(vec![], 2.0, Array2::zeros((0, 0))).is_err());
        assert!(
            SensorRecording::new(vec!["a".into(), "a".into()], 2.0, array![[1.0, 2.0]]).is_err()
        );
        assert_eq!(ok.unwrap().channel_index("s2"), Some(1));
    }

    #[test]
    fn truth_lookup() {
        let truth = GroundTruth {
            anomalous_channels: vec!["s2".into()],
            anomalous_ranges: vec![SampleRange {
                channel: "s3".into(),
                start: 10,
                end: 20,
            }],
            ..GroundTruth::default()
        };
        assert!(truth.is_anomalous("s2", 0, 5));
        assert!(truth.is_anomalous("s3", 19, 30));
        assert!(!truth.is_anomalous("s3", 20, 30));
        assert!(!truth.is_anomalous("s3", 0, 10));
        assert!(!truth.is_anomalous("s1", 0, 100));
    }
}
