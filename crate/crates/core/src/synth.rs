//! Seeded synthetic telemetry with segment-level latent dynamics and
//! threshold-driven fault injection.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64`, with normals drawn by the `rand_distr`
//! ziggurat sampler. Latents, canonical features, residual features and
//! planted duplicates each use their own ChaCha stream, so changing one
//! block's size leaves the others untouched.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;
use crate::prediction::{FaultEvent, FaultLog};
use crate::taxonomy::SegmentTaxonomy;

pub const MIN_SAMPLES: usize = 100;
/// 2025-12-12T00:00:00Z.
pub const DEFAULT_START: i64 = 1_765_497_600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub name: String,
    pub n_features: usize,
    pub loading_range: (f64, f64),
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub cadence: i64,
    pub start: i64,
    pub segments: Vec<SegmentConfig>,
    pub n_residual: usize,
    /// Amplitude of the slow sinusoidal drift added to residual noise.
    pub residual_drift: f64,
    /// Near-copies of existing canonical features, spread round-robin over segments.
    pub n_duplicates: usize,
    pub latent_persistence: f64,
    pub fault_latent_index: usize,
    pub fault_threshold: f64,
    pub fault_lead: i64,
    pub seed: u64,
}

const SEGMENT_NAMES: [&str; 6] = ["Cumulative", "Latency", "Pressure", "Network", "State", "Structural"];

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            cadence: 30,
            start: DEFAULT_START,
            segments: SEGMENT_NAMES
                .iter()
                .map(|n| SegmentConfig {
                    name: n.to_string(),
                    n_features: 4,
                    loading_range: (0.7, 1.0),
                    noise_std: 0.5,
                })
                .collect(),
            n_residual: 20,
            residual_drift: 0.05,
            n_duplicates: 0,
            latent_persistence: 0.95,
            fault_latent_index: 1,
            fault_threshold: 1.8,
            fault_lead: 120,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_samples < MIN_SAMPLES {
            return fail(format!("n_samples must be at least {MIN_SAMPLES}, got {}", self.n_samples));
        }
        if self.cadence <= 0 {
            return fail("cadence must be positive".into());
        }
        if self.segments.is_empty() || self.n_residual == 0 {
            return fail("need at least one segment and one residual feature".into());
        }
        for s in &self.segments {
            if s.n_features == 0 {
                return fail(format!("segment {} has no features", s.name));
            }
            let (lo, hi) = s.loading_range;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) || s.noise_std < 0.0 {
                return fail(format!("segment {} has an invalid loading range or noise", s.name));
            }
        }
        if !(self.residual_drift >= 0.0) {
            return fail("residual drift must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.latent_persistence) {
            return fail("latent persistence must lie in [0,1)".into());
        }
        if self.fault_latent_index >= self.segments.len() {
            return fail("fault latent index out of range".into());
        }
        if self.fault_lead < 0 {
            return fail("fault lead must be non-negative".into());
        }
        Ok(())
    }
}

/// What the generator actually planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub segments: BTreeMap<String, Vec<String>>,
    pub residual: Vec<String>,
    /// `(duplicate, source)` pairs.
    pub duplicates: Vec<(String, String)>,
    pub fault_segment: String,
    /// Timestamps at which the fault latent crossed the threshold upwards.
    pub crossings: Vec<i64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub frame: MetricFrame,
    pub faults: FaultLog,
    pub truth: GroundTruth,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let innovation = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x = normal(rng);
    for _ in 0..n {
        out.push(x);
        x = phi * x + innovation * normal(rng);
    }
    out
}

/// Metric names for a segment: the taxonomy's literal names first, then
/// `_<k>`-suffixed variants so larger segments still match the bundled patterns.
fn feature_names(segment: &str, count: usize, taxonomy: &SegmentTaxonomy) -> Vec<String> {
    let base: Vec<String> = taxonomy
        .canonical_spec(segment)
        .map(|s| s.patterns().filter(|p| !p.contains('*')).map(str::to_string).collect())
        .unwrap_or_default();
    if base.is_empty() {
        return (0..count).map(|k| format!("{}_{k}", segment.to_ascii_lowercase())).collect();
    }
    (0..count)
        .map(|k| {
            let name = &base[k % base.len()];
            match k / base.len() {
                0 => name.clone(),
                round => format!("{name}_{round}"),
            }
        })
        .collect()
}

/// Maps a latent-plus-noise signal to raw telemetry whose segment transform
/// recovers a monotone function of the signal.
fn emit(segment: &str, signal: &[f64], scale: f64) -> Vec<f64> {
    match segment {
        "Cumulative" | "Network" => {
            let mut total = 1000.0 * scale;
            signal
                .iter()
                .map(|s| {
                    total += scale * (0.4 * s).exp();
                    total
                })
                .collect()
        }
        "Latency" => signal.iter().map(|s| 5.0 * scale * (0.5 * s).exp()).collect(),
        "Pressure" => signal.iter().map(|s| 10.0 * scale * (0.3 * s).exp()).collect(),
        "State" => signal.iter().map(|s| scale * (1000.0 + 100.0 * s)).collect(),
        "Structural" => signal.iter().map(|s| scale * (50.0 + 5.0 * s)).collect(),
        _ => signal.to_vec(),
    }
}

fn residual_feature(index: usize, drift: f64, rng: &mut ChaCha8Rng, n: usize) -> (String, Vec<f64>) {
    let period = n as f64 * rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let drift: Vec<f64> = (0..n).map(|t| drift * (std::f64::consts::TAU * t as f64 / period + phase).sin()).collect();
    let noise: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let base = |t: usize| drift[t] + noise[t];
    match index % 4 {
        0 => (
            format!("cassandrabloomfilterfalseratio_r{index:02}"),
            (0..n).map(|t| 1.0 / (1.0 + (-base(t)).exp())).collect(),
        ),
        1 => (
            format!("cassandrakeycachesizebytes_r{index:02}"),
            (0..n).map(|t| 1e6 * (0.1 * base(t)).exp()).collect(),
        ),
        2 => {
            let mut total = 0.0;
            (
                format!("jvmthreadsstatecount_r{index:02}"),
                (0..n)
                    .map(|t| {
                        total += (2.0 + base(t)).max(0.0);
                        total
                    })
                    .collect(),
            )
        }
        _ => (format!("scrapedurationseconds_r{index:02}"), (0..n).map(|t| 0.5 + 0.05 * base(t)).collect()),
    }
}

pub fn generate_telemetry(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let n = config.n_samples;
    let taxonomy = SegmentTaxonomy::bundled();
    let timestamps: Vec<i64> = (0..n as i64).map(|i| config.start + i * config.cadence).collect();

    let mut latent_rng = stream(config.seed, 1);
    let latents: Vec<Vec<f64>> = config
        .segments
        .iter()
        .map(|_| ar1(&mut latent_rng, n, config.latent_persistence))
        .collect();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let mut segments = BTreeMap::new();
    let mut signals: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut feature_rng = stream(config.seed, 2);
    for (seg, latent) in config.segments.iter().zip(&latents) {
        let names = feature_names(&seg.name, seg.n_features, &taxonomy);
        let mut seg_signals = Vec::new();
        for name in &names {
            let (lo, hi) = seg.loading_range;
            let loading = if hi > lo { feature_rng.random_range(lo..=hi) } else { lo };
            let scale = feature_rng.random_range(1.0..4.0);
            let signal: Vec<f64> = latent.iter().map(|&z| loading * z + seg.noise_std * normal(&mut feature_rng)).collect();
            columns.push((name.clone(), emit(&seg.name, &signal, scale)));
            seg_signals.push(signal);
        }
        segments.insert(seg.name.clone(), names);
        signals.push(seg_signals);
    }

    let mut dup_rng = stream(config.seed, 4);
    let mut duplicates = Vec::new();
    for d in 0..config.n_duplicates {
        let si = d % config.segments.len();
        let seg = &config.segments[si];
        let fi = (d / config.segments.len()) % seg.n_features;
        let source = segments[&seg.name][fi].clone();
        let name = format!("{source}_dup{d}");
        let signal: Vec<f64> = signals[si][fi].iter().map(|&s| s + 0.01 * normal(&mut dup_rng)).collect();
        let scale = dup_rng.random_range(1.0..4.0);
        columns.push((name.clone(), emit(&seg.name, &signal, scale)));
        segments.get_mut(&seg.name).expect("segment exists").push(name.clone());
        duplicates.push((name, source));
    }

    let mut residual_rng = stream(config.seed, 3);
    let mut residual = Vec::new();
    for r in 0..config.n_residual {
        let (name, values) = residual_feature(r, config.residual_drift, &mut residual_rng, n);
        residual.push(name.clone());
        columns.push((name, values));
    }

    let fault_latent = &latents[config.fault_latent_index];
    let last = timestamps[n - 1];
    let crossings: Vec<i64> = (1..n)
        .filter(|&t| fault_latent[t - 1] < config.fault_threshold && fault_latent[t] >= config.fault_threshold)
        .map(|t| timestamps[t])
        .collect();
    let faults = FaultLog::new(
        (1..n)
            .filter(|&t| fault_latent[t - 1] < config.fault_threshold && fault_latent[t] >= config.fault_threshold)
            .map(|t| FaultEvent {
                timestamp: timestamps[t] + config.fault_lead,
                magnitude: (4.0 * fault_latent[t]).round(),
            })
            .filter(|e| e.timestamp <= last)
            .collect(),
    );

    let (names, values): (Vec<String>, Vec<Vec<f64>>) = columns.into_iter().unzip();
    Ok(SynthOutput {
        frame: MetricFrame::new(timestamps, names, values)?,
        faults,
        truth: GroundTruth {
            segments,
            residual,
            duplicates,
            fault_segment: config.segments[config.fault_latent_index].name.clone(),
            crossings,
            seed: config.seed,
        },
    })
}
