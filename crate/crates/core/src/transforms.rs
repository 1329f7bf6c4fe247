//! Segment-specific semantic transforms, normalizations, and the pipeline
//! that produces time-aligned canonical and residual frames.

use std::collections::BTreeMap;
use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;
use crate::stats;
use crate::taxonomy::{NormalizationId, SegmentTaxonomy, SegmentedSpace, TransformId};

pub const DEFAULT_WINDOW: usize = 12;
pub const DEFAULT_EPSILON: f64 = 1e-6;

const DEGENERATE_IQR: f64 = 1e-12;
const ZSCORE_MIN_STD: f64 = 1e-9;

/// Rolling median window and the additive guard used in ratio denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingBaseline {
    pub window: usize,
    pub epsilon: f64,
}

impl RollingBaseline {
    pub fn new(window: usize, epsilon: f64) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("rolling window must be >= 2, got {window}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { window, epsilon })
    }
}

impl Default for RollingBaseline {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

fn need(len: usize, needed: usize) -> Result<()> {
    if len < needed {
        Err(Error::InsufficientData { needed, got: len })
    } else {
        Ok(())
    }
}

fn check_nonnegative(series: &[f64]) -> Result<()> {
    match series.iter().position(|&x| x < 0.0) {
        Some(index) => Err(Error::Domain {
            index,
            reason: format!("negative value {}", series[index]),
        }),
        None => Ok(()),
    }
}

fn check_finite(series: &[f64]) -> Result<()> {
    match series.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::Domain {
            index,
            reason: "non-finite result (zero baseline with epsilon = 0?)".into(),
        }),
        None => Ok(()),
    }
}

/// Trailing-window medians `median(x[t-w+1..=t])` for `t >= w-1`.
pub fn rolling_median(series: &[f64], window: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(window);
    series
        .windows(window)
        .map(|w| {
            buf.clear();
            buf.extend_from_slice(w);
            buf.sort_by(f64::total_cmp);
            stats::quantile_sorted(&buf, 0.5)
        })
        .collect()
}

/// Monotonic counter rate: `max(0, x_t - x_{t-1})`.
pub fn transform_mcr(series: &[f64]) -> Result<Vec<f64>> {
    need(series.len(), 2)?;
    Ok(series.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect())
}

/// Logarithmic tail compression: `ln(1 + x)`.
pub fn transform_ltc(series: &[f64]) -> Result<Vec<f64>> {
    check_nonnegative(series)?;
    Ok(series.iter().map(|x| x.ln_1p()).collect())
}

/// Baseline stress ratio: `x_t / (rolling_median_t + eps)`, warmup dropped.
pub fn transform_bsr(series: &[f64], baseline: &RollingBaseline) -> Result<Vec<f64>> {
    need(series.len(), baseline.window)?;
    let medians = rolling_median(series, baseline.window);
    let out: Vec<f64> = series[baseline.window - 1..]
        .iter()
        .zip(&medians)
        .map(|(x, m)| x / (m + baseline.epsilon))
        .collect();
    check_finite(&out)?;
    Ok(out)
}

/// Clipped first difference divided by the sampling interval.
pub fn transform_network_rate(series: &[f64], timestamps: &[i64]) -> Result<Vec<f64>> {
    if series.len() != timestamps.len() {
        return Err(Error::LengthMismatch {
            left: series.len(),
            right: timestamps.len(),
        });
    }
    need(series.len(), 2)?;
    if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::TemporalOrder { index: i + 1 });
    }
    Ok(series
        .windows(2)
        .zip(timestamps.windows(2))
        .map(|(x, t)| (x[1] - x[0]).max(0.0) / (t[1] - t[0]) as f64)
        .collect())
}

/// Global baseline deviation: `(x_t - median) / (|median| + eps)`.
pub fn transform_gbd(series: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    need(series.len(), 1)?;
    let m = stats::median(series);
    let denom = m.abs() + epsilon;
    if denom == 0.0 {
        // zero median and eps = 0: only a constant-zero series is well defined
        return if series.iter().all(|&x| x == 0.0) {
            Ok(vec![0.0; series.len()])
        } else {
            Err(Error::Domain {
                index: 0,
                reason: "zero median with epsilon = 0".into(),
            })
        };
    }
    Ok(series.iter().map(|x| (x - m) / denom).collect())
}

/// Rolling baseline drift ratio: `(x_t - m_t) / (m_t + eps)`, warmup dropped.
pub fn transform_rbdr(series: &[f64], baseline: &RollingBaseline) -> Result<Vec<f64>> {
    need(series.len(), baseline.window)?;
    let medians = rolling_median(series, baseline.window);
    let out: Vec<f64> = series[baseline.window - 1..]
        .iter()
        .zip(&medians)
        .map(|(x, m)| {
            if x == m {
                0.0
            } else {
                (x - m) / (m + baseline.epsilon)
            }
        })
        .collect();
    check_finite(&out)?;
    Ok(out)
}

/// Location and spread used by [`robust_scale`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScaling {
    pub median: f64,
    pub iqr: f64,
    /// IQR was below 1e-12, so only the median shift was applied.
    pub degenerate: bool,
}

/// `(x - median) / IQR` with type-7 quantiles.
pub fn robust_scale(series: &[f64]) -> Result<(Vec<f64>, RobustScaling)> {
    need(series.len(), 4)?;
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = stats::quantile_sorted(&sorted, 0.5);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let degenerate = iqr < DEGENERATE_IQR;
    let scale = if degenerate { 1.0 } else { iqr };
    let out = series.iter().map(|x| (x - median) / scale).collect();
    Ok((out, RobustScaling { median, iqr, degenerate }))
}

/// Z-score when the (population) standard deviation exceeds 1e-9, identity otherwise.
pub fn conditional_zscore(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let m = stats::mean(series);
    let sd = stats::variance(series).sqrt();
    if sd > ZSCORE_MIN_STD {
        series.iter().map(|x| (x - m) / sd).collect()
    } else {
        series.to_vec()
    }
}

/// Samples dropped from the front of a series by `transform`.
pub fn warmup(transform: TransformId, baseline: &RollingBaseline) -> usize {
    match transform {
        TransformId::Mcr | TransformId::NetRate | TransformId::ResidDiff => 1,
        TransformId::Bsr | TransformId::Rbdr => baseline.window - 1,
        TransformId::Ltc
        | TransformId::Gbd
        | TransformId::ResidNone
        | TransformId::ResidSqrt
        | TransformId::ResidLog1p => 0,
    }
}

/// Semantic step only; output is `warmup(transform)` samples shorter.
pub fn apply_transform(
    transform: TransformId,
    series: &[f64],
    timestamps: &[i64],
    baseline: &RollingBaseline,
) -> Result<Vec<f64>> {
    match transform {
        TransformId::Mcr => transform_mcr(series),
        TransformId::Ltc => transform_ltc(series),
        TransformId::Bsr => transform_bsr(series, baseline),
        TransformId::NetRate => transform_network_rate(series, timestamps),
        TransformId::Gbd => transform_gbd(series, baseline.epsilon),
        TransformId::Rbdr => transform_rbdr(series, baseline),
        TransformId::ResidNone => Ok(series.to_vec()),
        TransformId::ResidSqrt => {
            check_nonnegative(series)?;
            Ok(series.iter().map(|x| x.sqrt()).collect())
        }
        TransformId::ResidLog1p => transform_ltc(series),
        TransformId::ResidDiff => {
            need(series.len(), 2)?;
            let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
            let max_abs = diff.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            Ok(if max_abs > 0.0 {
                diff.iter().map(|x| x / max_abs).collect()
            } else {
                diff
            })
        }
    }
}

/// Normalization step; returns robust-scaling parameters when applicable.
pub fn apply_normalization(
    normalization: NormalizationId,
    series: &[f64],
) -> Result<(Vec<f64>, Option<RobustScaling>)> {
    match normalization {
        NormalizationId::Robust => robust_scale(series).map(|(v, s)| (v, Some(s))),
        NormalizationId::Log1p => Ok((series.iter().map(|x| x.max(0.0).ln_1p()).collect(), None)),
        NormalizationId::ZscoreCond => Ok((conditional_zscore(series), None)),
        NormalizationId::None => Ok((series.to_vec(), None)),
    }
}

/// Residual-family treatment: transform followed by the family's normalization.
pub fn transform_residual(
    series: &[f64],
    transform: TransformId,
    normalization: NormalizationId,
) -> Result<Vec<f64>> {
    let timestamps: Vec<i64> = (0..series.len() as i64).collect();
    let transformed = apply_transform(transform, series, &timestamps, &RollingBaseline::default())?;
    apply_normalization(normalization, &transformed).map(|(v, _)| v)
}

/// How a transformed column was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub group: String,
    pub transform: TransformId,
    pub normalization: NormalizationId,
    pub window: Option<usize>,
    pub epsilon: Option<f64>,
    pub warmup: usize,
    pub robust: Option<RobustScaling>,
}

/// Transformed values plus per-column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedFrame {
    frame: MetricFrame,
    provenance: BTreeMap<String, Provenance>,
}

impl TransformedFrame {
    pub fn new(frame: MetricFrame, provenance: BTreeMap<String, Provenance>) -> Self {
        Self { frame, provenance }
    }

    /// Wraps already-transformed columns; handy for analysis-only use and tests.
    pub fn from_columns(timestamps: Vec<i64>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let (names, values) = columns.into_iter().unzip();
        Ok(Self::new(MetricFrame::new(timestamps, names, values)?, BTreeMap::new()))
    }

    pub fn frame(&self) -> &MetricFrame {
        &self.frame
    }

    pub fn provenance(&self) -> &BTreeMap<String, Provenance> {
        &self.provenance
    }

    pub fn select(&self, names: &[String]) -> Result<Self> {
        let frame = self.frame.select(names)?;
        let provenance = names
            .iter()
            .filter_map(|n| self.provenance.get(n).map(|p| (n.clone(), p.clone())))
            .collect();
        Ok(Self { frame, provenance })
    }

    /// Column-wise concatenation of two frames over identical timestamps.
    pub fn concat(&self, other: &TransformedFrame) -> Result<Self> {
        if self.timestamps() != other.timestamps() {
            return Err(Error::Data("frames do not share timestamps".into()));
        }
        let mut names = self.columns().to_vec();
        names.extend(other.columns().iter().cloned());
        let values = self
            .iter_columns()
            .chain(other.iter_columns())
            .map(|(_, v)| v.to_vec())
            .collect();
        let mut provenance = self.provenance.clone();
        provenance.extend(other.provenance.clone());
        Ok(Self {
            frame: MetricFrame::new(self.timestamps().to_vec(), names, values)?,
            provenance,
        })
    }
}

impl Deref for TransformedFrame {
    type Target = MetricFrame;

    fn deref(&self) -> &MetricFrame {
        &self.frame
    }
}

struct ColumnJob<'a> {
    name: &'a str,
    group: &'a str,
    transform: TransformId,
    normalization: NormalizationId,
}

fn column_jobs<'a>(
    groups: &'a BTreeMap<String, Vec<String>>,
    lookup: impl Fn(&str) -> Option<(TransformId, NormalizationId)>,
) -> Result<Vec<ColumnJob<'a>>> {
    let mut out = Vec::new();
    for (group, cols) in groups {
        let (transform, normalization) =
            lookup(group).ok_or_else(|| Error::Config(format!("group {group} missing from taxonomy")))?;
        out.extend(cols.iter().map(|c| ColumnJob {
            name: c,
            group,
            transform,
            normalization,
        }));
    }
    Ok(out)
}

/// Transforms canonical columns per segment and residual columns per family,
/// trims everything to the shared post-warmup range, then normalizes.
pub fn apply_pipeline(
    frame: &MetricFrame,
    space: &SegmentedSpace,
    taxonomy: &SegmentTaxonomy,
    baseline: &RollingBaseline,
) -> Result<(TransformedFrame, TransformedFrame)> {
    if !frame.is_complete() {
        return Err(Error::Data("frame must be cleaned before transformation".into()));
    }
    let canonical_jobs = column_jobs(&space.canonical, |g| {
        taxonomy.canonical_spec(g).map(|s| (s.transform, s.normalization))
    })?;
    let residual_jobs = column_jobs(&space.residual, |g| {
        taxonomy.residual_spec(g).map(|s| (s.transform, s.normalization))
    })?;

    let max_warmup = canonical_jobs
        .iter()
        .chain(&residual_jobs)
        .map(|j| warmup(j.transform, baseline))
        .max()
        .unwrap_or(0);
    let n = frame.n_rows();
    if n <= max_warmup {
        return Err(Error::InsufficientData {
            needed: max_warmup + 1,
            got: n,
        });
    }
    let out_len = n - max_warmup;
    let timestamps = frame.timestamps()[max_warmup..].to_vec();

    let run = |jobs: &[ColumnJob<'_>]| -> Result<TransformedFrame> {
        let results: Vec<(String, Vec<f64>, Provenance)> = jobs
            .par_iter()
            .map(|job| {
                let series = frame
                    .column(job.name)
                    .ok_or_else(|| Error::Data(format!("column {} not in frame", job.name)))?;
                let wrap = |e| Error::in_column(job.name, e);
                let transformed =
                    apply_transform(job.transform, series, frame.timestamps(), baseline).map_err(wrap)?;
                let trimmed = &transformed[transformed.len() - out_len..];
                let (values, robust) = apply_normalization(job.normalization, trimmed).map_err(wrap)?;
                check_finite(&values).map_err(wrap)?;
                let rolling = matches!(job.transform, TransformId::Bsr | TransformId::Rbdr);
                let uses_eps = rolling || job.transform == TransformId::Gbd;
                let prov = Provenance {
                    group: job.group.to_string(),
                    transform: job.transform,
                    normalization: job.normalization,
                    window: rolling.then_some(baseline.window),
                    epsilon: uses_eps.then_some(baseline.epsilon),
                    warmup: warmup(job.transform, baseline),
                    robust,
                };
                Ok((job.name.to_string(), values, prov))
            })
            .collect::<Result<_>>()?;
        let mut names = Vec::with_capacity(results.len());
        let mut values = Vec::with_capacity(results.len());
        let mut provenance = BTreeMap::new();
        for (name, v, p) in results {
            provenance.insert(name.clone(), p);
            names.push(name);
            values.push(v);
        }
        Ok(TransformedFrame::new(
            MetricFrame::new(timestamps.clone(), names, values)?,
            provenance,
        ))
    };
    Ok((run(&canonical_jobs)?, run(&residual_jobs)?))
}
