//! The two detection protocols.
//!
//! Multi-sensor: each segment of the `T × D` recording is fitted on its own,
//! every row is reconstructed from the leading direction(s), and each
//! channel's CSD over the segment is its score.
//!
//! Single-sensor: `L` neighbouring windows of `N` samples from one channel
//! form an `N × L` matrix; each window's CSD after reconstruction is its
//! score.
//!
//! In both, a score strictly above the calibrated threshold flags the cell,
//! and a channel becomes anomalous once it is flagged in `persistence`
//! consecutive rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recording::{normalize, normalize_channel, SensorRecording};
use super::score::{calibrate_threshold, column_csd, reconstruct, Calibration, DEFAULT_ALPHA};
use super::segment::{segment, window_blocks, SegmentMatrix};
use crate::error::{Error, Result};
use crate::pca::{fit, PcaMethod};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEGMENT_LEN: usize = 500;
pub const DEFAULT_PERSISTENCE: usize = 2;
pub const DEFAULT_WINDOW_LEN: usize = 224;
pub const DEFAULT_WINDOW_COUNT: usize = 5;

const NORMALIZATION_NOTE: &str =
    "per-channel min-max to [-1, 1] over the whole input; per-segment, per-column mean removal";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiSensorConfig {
    pub method: PcaMethod,
    pub segment_len: usize,
    pub components: usize,
    pub alpha: f64,
    pub persistence: usize,
}

impl Default for MultiSensorConfig {
    fn default() -> Self {
        Self {
            method: PcaMethod::L1Kernel,
            segment_len: DEFAULT_SEGMENT_LEN,
            components: 1,
            alpha: DEFAULT_ALPHA,
            persistence: DEFAULT_PERSISTENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleSensorConfig {
    pub method: PcaMethod,
    pub window_len: usize,
    pub window_count: usize,
    pub components: usize,
    pub alpha: f64,
    pub persistence: usize,
}

impl Default for SingleSensorConfig {
    fn default() -> Self {
        Self {
            method: PcaMethod::L1Kernel,
            window_len: DEFAULT_WINDOW_LEN,
            window_count: DEFAULT_WINDOW_COUNT,
            components: 1,
            alpha: DEFAULT_ALPHA,
            persistence: DEFAULT_PERSISTENCE,
        }
    }
}

fn check_common(
    method: &PcaMethod,
    components: usize,
    alpha: f64,
    persistence: usize,
) -> Result<()> {
    method.validate()?;
    if components == 0 {
        return Err(Error::InvalidInput("components must be at least 1".into()));
    }
    if persistence == 0 {
        return Err(Error::InvalidInput("persistence must be at least 1".into()));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha"));
    }
    Ok(())
}

/// Where the threshold comes from: scores of a clean input processed with
/// the same configuration, or a fixed value.
#[derive(Debug, Clone, Copy)]
pub enum ThresholdSource<T> {
    Calibrate(T),
    Fixed(f64),
}

/// A single channel with its name and sample rate.
#[derive(Debug, Clone, Copy)]
pub struct ChannelSeries<'a> {
    pub name: &'a str,
    pub samples: &'a [f64],
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    MultiSensor,
    SingleSensor,
}

/// One row of the report: a segment (multi-sensor) or a window
/// (single-sensor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: usize,
    /// Block of `window_count` windows this row belongs to (single-sensor).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    pub start_sample: usize,
    pub end_sample: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// One CSD per report channel.
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    /// The fit's leading eigenvalue was tied, or the segment was all zeros.
    pub degenerate: bool,
    pub converged: bool,
}

/// CSD scores, threshold and flags for one run of either protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsdReport {
    pub schema_version: u32,
    pub protocol: Protocol,
    pub method: PcaMethod,
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    /// Samples per row: segment length, or window length.
    pub row_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_count: Option<usize>,
    pub components: usize,
    pub normalization: String,
    pub threshold: f64,
    pub calibration: Calibration,
    pub persistence: usize,
    pub rows: Vec<ReportRow>,
    pub anomalous_channels: Vec<String>,
    pub constant_channels: Vec<String>,
}

impl CsdReport {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flags.iter().any(|&f| f))
    }

    pub fn flag_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.flags.iter().filter(|&&f| f).count())
            .sum()
    }

    /// Scores of one channel, row by row.
    pub fn channel_scores(&self, channel: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores[channel]).collect()
    }

    /// Flags of one channel, row by row.
    pub fn channel_flags(&self, channel: usize) -> Vec<bool> {
        self.rows.iter().map(|r| r.flags[channel]).collect()
    }

    pub fn all_scores(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| r.scores.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ScoredRow {
    index: usize,
    block: Option<usize>,
    span: (usize, usize),
    time: (f64, f64),
    scores: Vec<f64>,
    degenerate: bool,
    converged: bool,
}

/// Fits `method` on one segment and returns the per-column CSD, plus the
/// degeneracy and convergence flags of the fit.
pub fn score_segment(
    segment: &SegmentMatrix,
    method: PcaMethod,
    components: usize,
) -> Result<(Vec<f64>, bool, bool)> {
    let x = segment.values.view();
    if x.iter().all(|&v| v == 0.0) {
        // nothing to reconstruct; any basis gives a zero residual
        return Ok((vec![0.0; x.ncols()], true, true));
    }
    let basis = fit(x, method)?;
    let x_hat = reconstruct(x, &basis, components)?;
    Ok((
        column_csd(x, x_hat.view())?,
        basis.degenerate,
        basis.converged,
    ))
}

fn score_multi(
    recording: &SensorRecording,
    config: &MultiSensorConfig,
) -> Result<(Vec<ScoredRow>, Vec<usize>)> {
    check_common(
        &config.method,
        config.components,
        config.alpha,
        config.persistence,
    )?;
    if recording.channel_count() < 2 {
        return Err(Error::InvalidInput(
            "multi-sensor detection needs at least 2 channels".into(),
        ));
    }
    if config.components > recording.channel_count() {
        return Err(Error::InvalidInput(format!(
            "{} components requested for {} channels",
            config.components,
            recording.channel_count()
        )));
    }
    let normalized = normalize(recording.samples())?;
    let segments = segment(
        normalized.values.view(),
        config.segment_len,
        recording.sample_rate_hz(),
    )?;
    let rows = segments
        .par_iter()
        .map(|seg| {
            let (scores, degenerate, converged) =
                score_segment(seg, config.method, config.components)?;
            Ok(ScoredRow {
                index: seg.segment_index,
                block: None,
                span: seg.sample_span,
                time: seg.time_span,
                scores,
                degenerate,
                converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, normalized.constant_channels))
}

fn score_single(
    samples: &[f64],
    sample_rate_hz: f64,
    config: &SingleSensorConfig,
) -> Result<(Vec<ScoredRow>, bool)> {
    check_common(
        &config.method,
        config.components,
        config.alpha,
        config.persistence,
    )?;
    if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )));
    }
    if config.components > config.window_count {
        return Err(Error::InvalidInput(format!(
            "{} components requested for {} windows",
            config.components, config.window_count
        )));
    }
    let block_len = config.window_len * config.window_count;
    if samples.len() < block_len {
        return Err(Error::InvalidInput(format!(
            "channel has {} samples, need at least {block_len}",
            samples.len()
        )));
    }
    let (normalized, constant) = normalize_channel(samples)?;
    let blocks = window_blocks(
        &normalized,
        config.window_len,
        config.window_count,
        sample_rate_hz,
    )?;
    let per_block = blocks
        .par_iter()
        .map(|block| {
            let (scores, degenerate, converged) =
                score_segment(block, config.method, config.components)?;
            Ok(scores
                .into_iter()
                .enumerate()
                .map(|(w, score)| {
                    let start = block.sample_span.0 + w * config.window_len;
                    let end = start + config.window_len;
                    ScoredRow {
                        index: block.segment_index * config.window_count + w,
                        block: Some(block.segment_index),
                        span: (start, end),
                        time: (start as f64 / sample_rate_hz, end as f64 / sample_rate_hz),
                        scores: vec![score],
                        degenerate,
                        converged,
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((per_block.into_iter().flatten().collect(), constant))
}

fn resolve_threshold(source: ThresholdSource<Vec<f64>>, alpha: f64) -> Result<Calibration> {
    match source {
        ThresholdSource::Calibrate(training) => calibrate_threshold(&training, alpha),
        ThresholdSource::Fixed(t) => Calibration::fixed(t, alpha),
    }
}

fn flag_rows(rows: Vec<ScoredRow>, threshold: f64) -> Vec<ReportRow> {
    rows.into_iter()
        .map(|r| ReportRow {
            index: r.index,
            block: r.block,
            start_sample: r.span.0,
            end_sample: r.span.1,
            start_s: r.time.0,
            end_s: r.time.1,
            flags: r.scores.iter().map(|&s| s > threshold).collect(),
            scores: r.scores,
            degenerate: r.degenerate,
            converged: r.converged,
        })
        .collect()
}

/// Channels flagged in at least `persistence` consecutive rows.
pub fn persistent_channels(
    rows: &[ReportRow],
    channels: &[String],
    persistence: usize,
) -> Vec<String> {
    channels
        .iter()
        .enumerate()
        .filter(|(c, _)| {
            let mut run = 0;
            rows.iter().any(|r| {
                run = if r.flags[*c] { run + 1 } else { 0 };
                run >= persistence
            })
        })
        .map(|(_, name)| name.clone())
        .collect()
}

/// Scores from the multi-sensor protocol without thresholding; the training
/// set for [`ThresholdSource::Calibrate`].
pub fn multi_sensor_scores(
    recording: &SensorRecording,
    config: &MultiSensorConfig,
) -> Result<Vec<f64>> {
    let (rows, _) = score_multi(recording, config)?;
    Ok(rows.into_iter().flat_map(|r| r.scores).collect())
}

/// Per-window scores from the single-sensor protocol without thresholding.
pub fn single_sensor_scores(
    samples: &[f64],
    sample_rate_hz: f64,
    config: &SingleSensorConfig,
) -> Result<Vec<f64>> {
    let (rows, _) = score_single(samples, sample_rate_hz, config)?;
    Ok(rows.into_iter().flat_map(|r| r.scores).collect())
}

pub fn detect_multi_sensor(
    recording: &SensorRecording,
    config: &MultiSensorConfig,
    threshold: ThresholdSource<&SensorRecording>,
) -> Result<CsdReport> {
    let (rows, constant) = score_multi(recording, config)?;
    let source = match threshold {
        ThresholdSource::Calibrate(clean) => {
            if clean.channel_count() != recording.channel_count() {
                return Err(Error::LengthMismatch {
                    expected: recording.channel_count(),
                    found: clean.channel_count(),
                });
            }
            ThresholdSource::Calibrate(multi_sensor_scores(clean, config)?)
        }
        ThresholdSource::Fixed(t) => ThresholdSource::Fixed(t),
    };
    let calibration = resolve_threshold(source, config.alpha)?;
    let rows = flag_rows(rows, calibration.threshold);
    let channels = recording.channels().to_vec();
    Ok(CsdReport {
        schema_version: REPORT_SCHEMA_VERSION,
        protocol: Protocol::MultiSensor,
        method: config.method,
        anomalous_channels: persistent_channels(&rows, &channels, config.persistence),
        constant_channels: constant.iter().map(|&c| channels[c].clone()).collect(),
        channels,
        sample_rate_hz: recording.sample_rate_hz(),
        row_len: config.segment_len,
        window_count: None,
        components: config.components,
        normalization: NORMALIZATION_NOTE.to_string(),
        threshold: calibration.threshold,
        calibration,
        persistence: config.persistence,
        rows,
    })
}

pub fn detect_single_sensor(
    channel: ChannelSeries<'_>,
    config: &SingleSensorConfig,
    threshold: ThresholdSource<&[f64]>,
) -> Result<CsdReport> {
    let (rows, constant) = score_single(channel.samples, channel.sample_rate_hz, config)?;
    let source = match threshold {
        ThresholdSource::Calibrate(clean) => {
            ThresholdSource::Calibrate(single_sensor_scores(clean, channel.sample_rate_hz, config)?)
        }
        ThresholdSource::Fixed(t) => ThresholdSource::Fixed(t),
    };
    let calibration = resolve_threshold(source, config.alpha)?;
    let rows = flag_rows(rows, calibration.threshold);
    let channels = vec![channel.name.to_string()];
    Ok(CsdReport {
        schema_version: REPORT_SCHEMA_VERSION,
        protocol: Protocol::SingleSensor,
        method: config.method,
        anomalous_channels: persistent_channels(&rows, &channels, config.persistence),
        constant_channels: if constant {
            channels.clone()
        } else {
            Vec::new()
        },
        channels,
        sample_rate_hz: channel.sample_rate_hz,
        row_len: config.window_len,
        window_count: Some(config.window_count),
        components: config.components,
        normalization: NORMALIZATION_NOTE.to_string(),
        threshold: calibration.threshold,
        calibration,
        persistence: config.persistence,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn recording(samples: Array2<f64>) -> SensorRecording {
        let names = (1..=samples.ncols())
            .map(|i| format!("sensor{i}"))
            .collect();
        SensorRecording::new(names, 2.0, samples).unwrap()
    }

    fn wave(i: usize) -> f64 {
        (i as f64 * 0.013).sin() + 0.3 * (i as f64 * 0.0041).cos()
    }

    #[test]
    fn identical_channels_score_zero() {
        let x = Array2::from_shape_fn((1000, 3), |(i, _)| wave(i));
        let rec = recording(x);
        for method in [
            PcaMethod::Regular,
            PcaMethod::L1Kernel,
            PcaMethod::recursive_l1(),
        ] {
            let config = MultiSensorConfig {
                method,
                ..MultiSensorConfig::default()
            };
            let report =
                detect_multi_sensor(&rec, &config, ThresholdSource::Calibrate(&rec)).unwrap();
            assert_eq!(report.rows.len(), 2);
            assert!(report.all_scores().iter().all(|&s| s < 1e-20), "{method}");
            assert!(!report.any_flagged());
            assert!(report.anomalous_channels.is_empty());
        }
    }

    #[test]
    fn flat_segments_do_not_error() {
        let x = Array2::from_shape_fn((1000, 3), |(i, _)| if i < 500 { 0.0 } else { wave(i) });
        let rec = recording(x);
        let report = detect_multi_sensor(
            &rec,
            &MultiSensorConfig::default(),
            ThresholdSource::Fixed(1.0),
        )
        .unwrap();
        assert!(report.rows[0].degenerate);
        assert_eq!(report.rows[0].scores, vec![0.0; 3]);
    }

    #[test]
    fn short_recording_rejected() {
        let rec = recording(Array2::from_shape_fn((200, 3), |(i, j)| wave(i + j)));
        let err = detect_multi_sensor(
            &rec,
            &MultiSensorConfig::default(),
            ThresholdSource::Fixed(1.0),
        );
        assert!(err.is_err());
        let one = recording(Array2::from_shape_fn((1000, 1), |(i, _)| wave(i)));
        assert!(detect_multi_sensor(
            &one,
            &MultiSensorConfig::default(),
            ThresholdSource::Fixed(1.0)
        )
        .is_err());
    }

    #[test]
    fn noise_channel_has_largest_csd() {
        // two channels share a waveform, the third is an unrelated oscillation
        let x = Array2::from_shape_fn((2000, 3), |(i, j)| match j {
            0 => wave(i),
            1 => 0.8 * wave(i) + 0.1,
            _ => ((i * 7919) % 113) as f64 / 113.0,
        });
        let rec = recording(x);
        for method in [PcaMethod::Regular, PcaMethod::L1Kernel] {
            let config = MultiSensorConfig {
                method,
                ..MultiSensorConfig::default()
            };
            let report = detect_multi_sensor(&rec, &config, ThresholdSource::Fixed(1e12)).unwrap();
            for row in &report.rows {
                let argmax = (0..3)
                    .max_by(|&a, &b| row.scores[a].total_cmp(&row.scores[b]))
                    .unwrap();
                assert_eq!(argmax, 2, "{method}: {:?}", row.scores);
            }
        }
    }

    #[test]
    fn flags_follow_strict_threshold() {
        let x = Array2::from_shape_fn((2000, 3), |(i, j)| wave(i * (j + 1)));
        let rec = recording(x);
        let base = detect_multi_sensor(
            &rec,
            &MultiSensorConfig::default(),
            ThresholdSource::Fixed(1e12),
        )
        .unwrap();
        let scores = base.all_scores();
        let t = scores[4];
        let report = detect_multi_sensor(
            &rec,
            &MultiSensorConfig::default(),
            ThresholdSource::Fixed(t),
        )
        .unwrap();
        for row in &report.rows {
            for (s, f) in row.scores.iter().zip(&row.flags) {
                assert_eq!(*f, *s > t);
            }
        }
        // the cell whose score equals the threshold is not flagged
        assert!(!report.rows[1].flags[1]);
        assert_eq!(
            report.calibration.threshold,
            report.calibration.mu + report.calibration.alpha * report.calibration.sigma
        );
    }

    #[test]
    fn persistence_counts_consecutive_rows() {
        let mk = |flags: &[bool]| -> Vec<ReportRow> {
            flags
                .iter()
                .enumerate()
                .map(|(i, &f)| ReportRow {
                    index: i,
                    block: None,
                    start_sample: 0,
                    end_sample: 1,
                    start_s: 0.0,
                    end_s: 0.5,
                    scores: vec![0.0],
                    flags: vec![f],
                    degenerate: false,
                    converged: true,
                })
                .collect()
        };
        let ch = vec!["a".to_string()];
        assert!(persistent_channels(&mk(&[true, false, true, false]), &ch, 2).is_empty());
        assert_eq!(persistent_channels(&mk(&[false, true, true]), &ch, 2), ch);
        assert_eq!(persistent_channels(&mk(&[true]), &ch, 1), ch);
    }

    #[test]
    fn single_sensor_identical_windows() {
        // period divides the window length, so every window holds the same phase
        let samples: Vec<f64> = (0..1120)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 56.0).sin())
            .collect();
        let channel = ChannelSeries {
            name: "s",
            samples: &samples,
            sample_rate_hz: 2.0,
        };
        for method in [PcaMethod::Regular, PcaMethod::L1Kernel] {
            let config = SingleSensorConfig {
                method,
                ..SingleSensorConfig::default()
            };
            let report =
                detect_single_sensor(channel, &config, ThresholdSource::Fixed(1.0)).unwrap();
            assert_eq!(report.rows.len(), 5);
            assert!(report.all_scores().iter().all(|&s| s < 1e-9));
            assert!(!report.any_flagged());
            assert_eq!(report.rows[4].start_sample, 4 * 224);
            assert_eq!(report.rows[4].block, Some(0));
        }
    }

    #[test]
    fn single_sensor_too_short() {
        let samples = vec![0.5; 1000];
        let channel = ChannelSeries {
            name: "s",
            samples: &samples,
            sample_rate_hz: 2.0,
        };
        assert!(detect_single_sensor(
            channel,
            &SingleSensorConfig::default(),
            ThresholdSource::Fixed(1.0)
        )
        .is_err());
    }

    #[test]
    fn reports_are_deterministic() {
        let x = Array2::from_shape_fn((3000, 3), |(i, j)| wave(i * (j + 2)));
        let rec = recording(x);
        for method in [
            PcaMethod::Regular,
            PcaMethod::L1Kernel,
            PcaMethod::recursive_l1(),
        ] {
            let config = MultiSensorConfig {
                method,
                ..MultiSensorConfig::default()
            };
            let a = detect_multi_sensor(&rec, &config, ThresholdSource::Calibrate(&rec)).unwrap();
            let b = detect_multi_sensor(&rec, &config, ThresholdSource::Calibrate(&rec)).unwrap();
            let bits = |r: &CsdReport| {
                r.all_scores()
                    .iter()
                    .map(|s| s.to_bits())
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(&a), bits(&b));
            assert_eq!(a, b);
        }
    }
}
