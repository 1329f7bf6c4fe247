//! Spearman correlation structure within and across canonical segments,
//! the one-sided Mann-Whitney separability test, and the circular-shift
//! perturbation test.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;
use crate::stats;

/// Largest pooled sample size for which Mann-Whitney p-values are exact.
pub const EXACT_MWU_MAX: usize = 20;
pub const DEFAULT_SHIFT_REPEATS: usize = 20;

/// Spearman rank correlation (Pearson correlation of mid-ranks).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: x.len(),
        });
    }
    stats::pearson(&stats::mid_ranks(x), &stats::mid_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("constant input".into()))
}

/// Columns of one segment with precomputed ranks; constant columns carry `None`.
struct RankedSegment {
    name: String,
    features: Vec<(String, Option<Vec<f64>>)>,
}

impl RankedSegment {
    fn usable(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.features.iter().filter_map(|(_, r)| r.as_ref())
    }

    fn n_usable(&self) -> usize {
        self.usable().count()
    }
}

fn rank_column(values: &[f64]) -> Option<Vec<f64>> {
    if values.len() < 3 || values.iter().all(|&v| v == values[0]) {
        None
    } else {
        Some(stats::mid_ranks(values))
    }
}

fn rank_segments(frame: &MetricFrame, segments: &BTreeMap<String, Vec<String>>) -> Result<Vec<RankedSegment>> {
    segments
        .iter()
        .map(|(name, cols)| {
            let features = cols
                .par_iter()
                .map(|c| {
                    let v = frame
                        .column(c)
                        .ok_or_else(|| Error::Data(format!("segment {name}: column {c} not in frame")))?;
                    Ok((c.clone(), rank_column(v)))
                })
                .collect::<Result<_>>()?;
            Ok(RankedSegment {
                name: name.clone(),
                features,
            })
        })
        .collect()
}

fn rank_corr(a: &[f64], b: &[f64]) -> f64 {
    stats::pearson(a, b).expect("ranked columns are non-constant")
}

fn pairwise_within(ranks: &[&Vec<f64>]) -> Vec<f64> {
    let pairs: Vec<(usize, usize)> = (0..ranks.len())
        .flat_map(|i| (i + 1..ranks.len()).map(move |j| (i, j)))
        .collect();
    pairs.par_iter().map(|&(i, j)| rank_corr(ranks[i], ranks[j])).collect()
}

fn pairwise_across(a: &[&Vec<f64>], b: &[&Vec<f64>]) -> Vec<f64> {
    let pairs: Vec<(usize, usize)> = (0..a.len()).flat_map(|i| (0..b.len()).map(move |j| (i, j))).collect();
    pairs.par_iter().map(|&(i, j)| rank_corr(a[i], b[j])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCoherence {
    pub segment: String,
    pub icc: f64,
    pub median: f64,
    pub n_features: usize,
    pub n_pairs: usize,
    /// Features skipped because they are constant over the analysed window.
    pub constant_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentExclusion {
    pub segment: String,
    pub usable_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub per_segment: Vec<SegmentCoherence>,
    pub omega_in: Vec<f64>,
    pub excluded: Vec<SegmentExclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPairCorrelation {
    pub segment_a: String,
    pub segment_b: String,
    pub icor: f64,
    pub median: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcorResult {
    pub pairs: Vec<SegmentPairCorrelation>,
    pub omega_out: Vec<f64>,
}

fn icc_from_ranked(ranked: &[RankedSegment]) -> Result<IccResult> {
    let mut per_segment = Vec::new();
    let mut excluded = Vec::new();
    let mut omega_in = Vec::new();
    for seg in ranked {
        let usable: Vec<&Vec<f64>> = seg.usable().collect();
        if usable.len() < 2 {
            excluded.push(SegmentExclusion {
                segment: seg.name.clone(),
                usable_features: usable.len(),
            });
            continue;
        }
        let rhos = pairwise_within(&usable);
        per_segment.push(SegmentCoherence {
            segment: seg.name.clone(),
            icc: stats::mean(&rhos),
            median: stats::median(&rhos),
            n_features: seg.features.len(),
            n_pairs: rhos.len(),
            constant_features: seg
                .features
                .iter()
                .filter(|(_, r)| r.is_none())
                .map(|(n, _)| n.clone())
                .collect(),
        });
        omega_in.extend(rhos);
    }
    if per_segment.is_empty() {
        return Err(Error::EmptyAnalysis);
    }
    Ok(IccResult {
        per_segment,
        omega_in,
        excluded,
    })
}

fn icor_from_ranked(ranked: &[RankedSegment]) -> Result<IcorResult> {
    let usable: Vec<(&str, Vec<&Vec<f64>>)> = ranked
        .iter()
        .filter(|s| s.n_usable() > 0)
        .map(|s| (s.name.as_str(), s.usable().collect()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientSegments(usable.len()));
    }
    let mut pairs = Vec::new();
    let mut omega_out = Vec::new();
    for (i, (name_a, a)) in usable.iter().enumerate() {
        for (name_b, b) in &usable[i + 1..] {
            let rhos = pairwise_across(a, b);
            pairs.push(SegmentPairCorrelation {
                segment_a: name_a.to_string(),
                segment_b: name_b.to_string(),
                icor: stats::mean(&rhos),
                median: stats::median(&rhos),
                n_pairs: rhos.len(),
            });
            omega_out.extend(rhos);
        }
    }
    Ok(IcorResult { pairs, omega_out })
}

/// Per-segment intra-canonical correlation and the pooled intra-segment
/// distribution. Segments with fewer than two non-constant features are
/// excluded and listed.
pub fn compute_icc(frame: &MetricFrame, segments: &BTreeMap<String, Vec<String>>) -> Result<IccResult> {
    icc_from_ranked(&rank_segments(frame, segments)?)
}

/// Per-pair inter-segment correlation and the pooled cross-segment distribution.
pub fn compute_icor(frame: &MetricFrame, segments: &BTreeMap<String, Vec<String>>) -> Result<IcorResult> {
    icor_from_ranked(&rank_segments(frame, segments)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u: f64,
    pub p: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub method: PValueMethod,
}

/// One-sided Mann-Whitney U test of "`sample_in` is stochastically greater
/// than `sample_out`". `U` counts (in, out) pairs with in > out, ties as
/// one half.
pub fn mann_whitney_one_sided(sample_in: &[f64], sample_out: &[f64]) -> Result<MannWhitney> {
    let (n_in, n_out) = (sample_in.len(), sample_out.len());
    if n_in == 0 || n_out == 0 {
        return Err(Error::EmptyInput);
    }
    let mut pooled = sample_in.to_vec();
    pooled.extend_from_slice(sample_out);
    let ranks = stats::mid_ranks(&pooled);
    let rank_sum_in: f64 = ranks[..n_in].iter().sum();
    let u = rank_sum_in - (n_in * (n_in + 1)) as f64 / 2.0;

    let (p, method) = if n_in + n_out <= EXACT_MWU_MAX {
        (exact_upper_tail(&ranks, n_in), PValueMethod::Exact)
    } else {
        (normal_upper_tail(u, n_in, n_out, &pooled), PValueMethod::Normal)
    };
    Ok(MannWhitney {
        u,
        p: p.clamp(0.0, 1.0),
        n_in,
        n_out,
        method,
    })
}

/// P(rank sum of a random size-`k` subset >= observed), by counting subsets
/// per doubled rank sum (mid-ranks times two are integers).
fn exact_upper_tail(ranks: &[f64], k: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let observed: usize = doubled[..k].iter().sum();
    let max_sum: usize = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; k + 1];
    counts[0][0] = 1;
    for &d in &doubled {
        for j in (1..=k).rev() {
            for s in (d..=max_sum).rev() {
                counts[j][s] += counts[j - 1][s - d];
            }
        }
    }
    let total: u64 = counts[k].iter().sum();
    let upper: u64 = counts[k][observed..].iter().sum();
    upper as f64 / total as f64
}

fn normal_upper_tail(u: f64, n_in: usize, n_out: usize, pooled: &[f64]) -> f64 {
    let (n1, n2) = (n_in as f64, n_out as f64);
    let n = n1 + n2;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - n1 * n2 / 2.0 - 0.5) / var.sqrt();
    Normal::standard().sf(z)
}

/// Summary statistics of intra- vs inter-segment correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub per_segment_icc: Vec<SegmentCoherence>,
    pub icor_pairs: Vec<SegmentPairCorrelation>,
    pub excluded_segments: Vec<SegmentExclusion>,
    pub icc_micro: f64,
    pub icc_macro: f64,
    pub icor_micro: Option<f64>,
    pub icor_macro: Option<f64>,
    pub delta: Option<f64>,
    pub utest: Option<MannWhitney>,
    pub n_in: usize,
    pub n_out: usize,
    /// Fewer than two usable segments: inter-segment fields are absent.
    pub partial: bool,
    #[serde(skip)]
    pub omega_in: Vec<f64>,
    #[serde(skip)]
    pub omega_out: Vec<f64>,
}

/// Micro statistics are means of the pooled pair-level distributions, macro
/// statistics means of the per-segment (per-pair) averages.
pub fn summarize(icc: IccResult, icor: Option<IcorResult>) -> Result<CorrelationReport> {
    if icc.omega_in.is_empty() {
        return Err(Error::EmptyAnalysis);
    }
    let icc_micro = stats::mean(&icc.omega_in);
    let icc_macro = stats::mean(&icc.per_segment.iter().map(|s| s.icc).collect::<Vec<_>>());
    let (icor_pairs, omega_out) = match icor {
        Some(r) if !r.omega_out.is_empty() => (r.pairs, r.omega_out),
        _ => (Vec::new(), Vec::new()),
    };
    let partial = omega_out.is_empty();
    let (icor_micro, icor_macro, delta, utest) = if partial {
        (None, None, None, None)
    } else {
        let micro = stats::mean(&omega_out);
        let macro_ = stats::mean(&icor_pairs.iter().map(|p| p.icor).collect::<Vec<_>>());
        let test = mann_whitney_one_sided(&icc.omega_in, &omega_out)?;
        (Some(micro), Some(macro_), Some(icc_micro - micro), Some(test))
    };
    Ok(CorrelationReport {
        per_segment_icc: icc.per_segment,
        icor_pairs,
        excluded_segments: icc.excluded,
        icc_micro,
        icc_macro,
        icor_micro,
        icor_macro,
        delta,
        utest,
        n_in: icc.omega_in.len(),
        n_out: omega_out.len(),
        partial,
        omega_in: icc.omega_in,
        omega_out,
    })
}

fn report_from_ranked(ranked: &[RankedSegment]) -> Result<CorrelationReport> {
    let icc = icc_from_ranked(ranked)?;
    let icor = match icor_from_ranked(ranked) {
        Ok(r) => Some(r),
        Err(Error::InsufficientSegments(_)) => None,
        Err(e) => return Err(e),
    };
    summarize(icc, icor)
}

/// ICC, ICOR and the separability test over `segments` in one pass.
pub fn analyze_segments(frame: &MetricFrame, segments: &BTreeMap<String, Vec<String>>) -> Result<CorrelationReport> {
    report_from_ranked(&rank_segments(frame, segments)?)
}

/// `out[t] = series[(t + offset) mod T]`.
pub fn circular_shift(series: &[f64], offset: usize) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let k = offset % n;
    series[k..].iter().chain(&series[..k]).copied().collect()
}

/// How per-column offsets are drawn in the shift test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Each column gets its own uniform offset in `[1, T-1]`.
    Independent,
    /// One uniform offset per repeat, shared by every column.
    Common,
    /// No shift; reproduces the unperturbed statistics.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRepeat {
    pub icc_micro: f64,
    pub icor_micro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub icc_shift: f64,
    pub icor_shift: f64,
    pub delta_shift: f64,
    pub seed: u64,
    pub mode: ShiftMode,
    pub repeats: Vec<ShiftRepeat>,
}

/// Recomputes ICC/ICOR micro after circularly shifting every column, which
/// keeps each marginal distribution intact but breaks cross-column timing.
pub fn circular_shift_test(
    frame: &MetricFrame,
    segments: &BTreeMap<String, Vec<String>>,
    repeats: usize,
    seed: u64,
    mode: ShiftMode,
) -> Result<ShiftResult> {
    let n = frame.n_rows();
    if n < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n });
    }
    if repeats == 0 {
        return Err(Error::Config("shift test needs at least one repeat".into()));
    }
    let ranked = rank_segments(frame, segments)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let common = rng.random_range(1..n);
        // ranks of a shifted column are the shifted ranks
        let shifted: Vec<RankedSegment> = ranked
            .iter()
            .map(|seg| RankedSegment {
                name: seg.name.clone(),
                features: seg
                    .features
                    .iter()
                    .map(|(name, ranks)| {
                        let offset = match mode {
                            ShiftMode::Independent => rng.random_range(1..n),
                            ShiftMode::Common => common,
                            ShiftMode::Zero => 0,
                        };
                        (name.clone(), ranks.as_ref().map(|r| circular_shift(r, offset)))
                    })
                    .collect(),
            })
            .collect();
        let icc = icc_from_ranked(&shifted)?;
        let icor = icor_from_ranked(&shifted)?;
        out.push(ShiftRepeat {
            icc_micro: stats::mean(&icc.omega_in),
            icor_micro: stats::mean(&icor.omega_out),
        });
    }
    let icc_shift = stats::mean(&out.iter().map(|r| r.icc_micro).collect::<Vec<_>>());
    let icor_shift = stats::mean(&out.iter().map(|r| r.icor_micro).collect::<Vec<_>>());
    Ok(ShiftResult {
        icc_shift,
        icor_shift,
        delta_shift: icc_shift - icor_shift,
        seed,
        mode,
        repeats: out,
    })
}
