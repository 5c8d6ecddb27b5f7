//! Seeded generator of correlated gas-sensor waveforms with injectable
//! faults.
//!
//! A shared exposure profile (gas on during episodes, off otherwise) drives
//! every channel through a first-order response
//! `y[t] = y[t-1] + (target[t] - y[t-1]) / tau`. An obstructed channel uses
//! `tau * lag_factor`, so it rises and decays more slowly. A spiked channel
//! gets isolated positive impulses at Bernoulli sample positions.
//!
//! # Random streams
//!
//! All randomness comes from SplitMix64 (state `+= 0x9E3779B97F4A7C15`,
//! then the xor-shift/multiply finaliser). Each purpose uses its own stream,
//! seeded with `seed ^ (stream_id * 0xA0761D6478BD642F)` (wrapping):
//!
//! | stream id   | purpose                               |
//! |-------------|---------------------------------------|
//! | 1           | random exposure episodes              |
//! | 2           | spike positions                       |
//! | 16 + c      | measurement noise of channel `c`      |
//!
//! Uniforms are `(next_u64 >> 11) * 2^-53`. Gaussian noise uses one
//! Box-Muller draw per sample: `sqrt(-2 ln(1 - u1)) * cos(2π u2)`.

use ndarray::Array2;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::detect::{GroundTruth, SampleRange, SensorRecording};
use crate::error::{Error, Result};

const STREAM_MULTIPLIER: u64 = 0xA0761D6478BD642F;
const STREAM_PROFILE: u64 = 1;
const STREAM_SPIKES: u64 = 2;
const STREAM_NOISE_BASE: u64 = 16;

/// Uniform and Gaussian draws on top of SplitMix64.
#[derive(Debug, Clone)]
pub struct SynthRng {
    inner: SplitMix64,
}

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn stream(seed: u64, stream_id: u64) -> Self {
        Self::new(seed ^ stream_id.wrapping_mul(STREAM_MULTIPLIER))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Gas exposure between `start` and `start + duration` at concentration
/// `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: usize,
    pub duration: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExposureProfile {
    Episodes {
        episodes: Vec<Episode>,
    },
    /// Alternating gaps and episodes with uniformly drawn lengths and
    /// levels, until `count` episodes or the end of the recording.
    Random {
        count: usize,
        min_gap: usize,
        max_gap: usize,
        min_duration: usize,
        max_duration: usize,
        min_level: f64,
        max_level: f64,
    },
}

impl Default for ExposureProfile {
    fn default() -> Self {
        Self::Random {
            count: 12,
            min_gap: 60,
            max_gap: 300,
            min_duration: 80,
            max_duration: 300,
            min_level: 0.4,
            max_level: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstruction {
    pub channel: usize,
    /// Multiplies the response time constant; `1.0` means no obstruction.
    pub lag_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spikes {
    pub channel: usize,
    /// Probability of an impulse at each sample inside `span`.
    pub rate: f64,
    pub amplitude: f64,
    /// Half-open sample range; the whole recording when absent.
    #[serde(default)]
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub channels: usize,
    pub duration_samples: usize,
    pub sample_rate_hz: f64,
    /// Names written to the CSV header; `sensor1..sensorD` when absent.
    pub channel_names: Option<Vec<String>>,
    pub profile: ExposureProfile,
    /// Response time constant of a clean sensor, in samples.
    pub time_constant: f64,
    pub baseline: f64,
    pub noise_std: f64,
    pub obstruction: Option<Obstruction>,
    pub spikes: Option<Spikes>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            channels: 3,
            duration_samples: 4000,
            sample_rate_hz: 2.0,
            channel_names: None,
            profile: ExposureProfile::default(),
            time_constant: 30.0,
            baseline: 0.1,
            noise_std: 0.01,
            obstruction: None,
            spikes: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidInput(msg));
        if self.channels == 0 || self.duration_samples == 0 {
            return invalid("channels and duration_samples must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return invalid(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            ));
        }
        if !(self.time_constant >= 1.0 && self.time_constant.is_finite()) {
            return invalid(format!(
                "time_constant must be >= 1, got {}",
                self.time_constant
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !self.baseline.is_finite() {
            return invalid("noise_std must be >= 0 and baseline finite".into());
        }
        if let Some(names) = &self.channel_names {
            if names.len() != self.channels {
                return invalid(format!(
                    "{} channel names for {} channels",
                    names.len(),
                    self.channels
                ));
            }
        }
        match &self.profile {
            ExposureProfile::Episodes { episodes } => {
                if episodes.iter().any(|e| !e.level.is_finite()) {
                    return invalid("episode levels must be finite".into());
                }
            }
            ExposureProfile::Random {
                min_gap,
                max_gap,
                min_duration,
                max_duration,
                min_level,
                max_level,
                ..
            } => {
                if min_gap > max_gap || min_duration > max_duration || *min_duration == 0 {
                    return invalid("random profile needs min <= max and min_duration >= 1".into());
                }
                if !(min_level.is_finite() && max_level.is_finite() && min_level <= max_level) {
                    return invalid("random profile needs finite min_level <= max_level".into());
                }
            }
        }
        if let Some(o) = &self.obstruction {
            if o.channel >= self.channels {
                return invalid(format!("obstructed channel {} out of range", o.channel));
            }
            if !(o.lag_factor >= 1.0 && o.lag_factor.is_finite()) {
                return invalid(format!("lag_factor must be >= 1, got {}", o.lag_factor));
            }
        }
        if let Some(s) = &self.spikes {
            if s.channel >= self.channels {
                return invalid(format!("spike channel {} out of range", s.channel));
            }
            if !(0.0..=1.0).contains(&s.rate) {
                return invalid(format!("spike rate must be in [0, 1], got {}", s.rate));
            }
            if !(s.amplitude > 0.0 && s.amplitude.is_finite()) {
                return invalid(format!(
                    "spike amplitude must be positive, got {}",
                    s.amplitude
                ));
            }
            if let Some((a, b)) = s.span {
                if a > b {
                    return invalid(format!("spike span ({a}, {b}) is reversed"));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.channel_names
            .clone()
            .unwrap_or_else(|| (1..=self.channels).map(|i| format!("sensor{i}")).collect())
    }
}

/// Gas concentration target at every sample.
pub fn exposure_target(config: &SynthConfig) -> Vec<f64> {
    let t = config.duration_samples;
    let mut target = vec![0.0; t];
    let mut paint = |e: &Episode| {
        let end = e.start.saturating_add(e.duration).min(t);
        for v in target.iter_mut().take(end).skip(e.start) {
            *v = e.level;
        }
    };
    match &config.profile {
        ExposureProfile::Episodes { episodes } => episodes.iter().for_each(&mut paint),
        ExposureProfile::Random {
            count,
            min_gap,
            max_gap,
            min_duration,
            max_duration,
            min_level,
            max_level,
        } => {
            let mut rng = SynthRng::stream(config.seed, STREAM_PROFILE);
            let mut cursor = 0usize;
            for _ in 0..*count {
                let gap = rng.range_inclusive(*min_gap, *max_gap);
                let duration = rng.range_inclusive(*min_duration, *max_duration);
                let level = min_level + (max_level - min_level) * rng.uniform();
                cursor += gap;
                if cursor >= t {
                    break;
                }
                paint(&Episode {
                    start: cursor,
                    duration,
                    level,
                });
                cursor += duration;
            }
        }
    }
    target
}

/// First-order low-pass with time constant `tau` samples, starting at 0.
pub fn first_order_response(target: &[f64], tau: f64) -> Vec<f64> {
    let mut y = 0.0;
    target
        .iter()
        .map(|&x| {
            y += (x - y) / tau;
            y
        })
        .collect()
}

/// Sample positions that receive a spike.
pub fn spike_positions(config: &SynthConfig) -> Vec<usize> {
    let Some(spikes) = &config.spikes else {
        return Vec::new();
    };
    let t = config.duration_samples;
    let (start, end) = spikes.span.unwrap_or((0, t));
    let end = end.min(t);
    let mut rng = SynthRng::stream(config.seed, STREAM_SPIKES);
    (start..end)
        .filter(|_| rng.uniform() < spikes.rate)
        .collect()
}

/// Merges sorted positions into half-open runs.
fn runs(positions: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &p in positions {
        match out.last_mut() {
            Some(last) if last.1 == p => last.1 = p + 1,
            _ => out.push((p, p + 1)),
        }
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<SensorRecording> {
    config.validate()?;
    let t = config.duration_samples;
    let d = config.channels;
    let names = config.names();

    let target = exposure_target(config);
    let clean = first_order_response(&target, config.time_constant);
    let obstructed = config.obstruction.map(|o| {
        (
            o.channel,
            first_order_response(&target, config.time_constant * o.lag_factor),
        )
    });
    let spikes = spike_positions(config);

    let mut samples = Array2::zeros((t, d));
    for c in 0..d {
        let response = match &obstructed {
            Some((oc, r)) if *oc == c => r,
            _ => &clean,
        };
        let mut noise = SynthRng::stream(config.seed, STREAM_NOISE_BASE + c as u64);
        for (i, &r) in response.iter().enumerate() {
            let n = if config.noise_std > 0.0 {
                config.noise_std * noise.gaussian()
            } else {
                0.0
            };
            samples[[i, c]] = config.baseline + r + n;
        }
    }
    if let Some(s) = &config.spikes {
        for &p in &spikes {
            samples[[p, s.channel]] += s.amplitude;
        }
    }

    let truth = GroundTruth {
        anomalous_channels: config
            .obstruction
            .iter()
            .filter(|o| o.lag_factor > 1.0)
            .map(|o| names[o.channel].clone())
            .collect(),
        anomalous_ranges: config
            .spikes
            .iter()
            .flat_map(|s| {
                runs(&spikes).into_iter().map(|(start, end)| SampleRange {
                    channel: names[s.channel].clone(),
                    start,
                    end,
                })
            })
            .collect(),
        ..GroundTruth::default()
    };

    Ok(SensorRecording::new(names, config.sample_rate_hz, samples)?.with_ground_truth(truth))
}
