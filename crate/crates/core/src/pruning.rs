//! Intra-segment redundancy reduction: minimum spanning trees over the
//! distance `1 - |rho|` and removal of near-equivalent features.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;
use crate::separability::{analyze_segments, CorrelationReport};
use crate::stats;

pub const DEFAULT_TAU_RED: f64 = 0.95;

const SUM_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub feature_a: String,
    pub feature_b: String,
    pub rho: f64,
    pub weight: f64,
}

/// Square matrix of pairwise correlations over named features.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    names: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl CorrMatrix {
    pub fn new(names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = names.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::Data(format!("correlation matrix must be {n}x{n}")));
        }
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (values[i][j], values[j][i]);
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::Data(format!("correlation matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { names, values })
    }

    /// Spearman matrix of `columns`; pairs involving a constant column get 0.
    pub fn spearman(frame: &MetricFrame, columns: &[String]) -> Result<Self> {
        let ranks = columns
            .iter()
            .map(|c| {
                let v = frame
                    .column(c)
                    .ok_or_else(|| Error::Data(format!("column {c} not in frame")))?;
                Ok(stats::mid_ranks(v))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = columns.len();
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            values[i][i] = 1.0;
            for j in i + 1..n {
                let rho = stats::pearson(&ranks[i], &ranks[j]).unwrap_or(0.0);
                values[i][j] = rho;
                values[j][i] = rho;
            }
        }
        Ok(Self {
            names: columns.to_vec(),
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Kruskal MST over `subset` (indices into `corr`) with weights `1 - |rho|`.
/// Equal weights are broken by the lexicographic order of the name pair.
fn mst_over(corr: &CorrMatrix, subset: &[usize]) -> Vec<MstEdge> {
    let names = &corr.names;
    let mut candidates: Vec<(f64, &str, &str, usize, usize)> = Vec::new();
    for (p, &i) in subset.iter().enumerate() {
        for &j in &subset[p + 1..] {
            let (i, j) = if names[i] <= names[j] { (i, j) } else { (j, i) };
            let w = 1.0 - corr.values[i][j].abs();
            candidates.push((w, &names[i], &names[j], i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(y.1)).then(x.2.cmp(y.2)));

    let mut parent: Vec<usize> = (0..corr.len()).collect();
    let mut edges = Vec::with_capacity(subset.len().saturating_sub(1));
    for (w, a, b, i, j) in candidates {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            edges.push(MstEdge {
                feature_a: a.to_string(),
                feature_b: b.to_string(),
                rho: corr.values[i][j],
                weight: w,
            });
            if edges.len() + 1 == subset.len() {
                break;
            }
        }
    }
    edges
}

/// Minimum spanning tree of one segment under `d = 1 - |rho|`.
pub fn corr_distance_mst(corr: &CorrMatrix) -> Vec<MstEdge> {
    let all: Vec<usize> = (0..corr.len()).collect();
    mst_over(corr, &all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub feature: String,
    pub reason: String,
    pub partner: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrune {
    pub retained: Vec<String>,
    pub removed: Vec<Removal>,
}

/// Removes near-equivalent features from one segment.
///
/// Repeatedly rebuilds the MST over the retained features and takes its
/// strongest edge with `|rho| >= tau_red` whose endpoints are not both in
/// `keep_list`. Of that edge's endpoints, the one with the larger sum of
/// `|rho|` to the other retained features is removed (ties: the
/// lexicographically larger name), unless it is in `keep_list`, in which case
/// its partner goes. Stops when no such edge remains, so the output is a
/// fixed point.
pub fn prune_segment(corr: &CorrMatrix, tau_red: f64, keep_list: &BTreeSet<String>) -> Result<SegmentPrune> {
    if !(tau_red > 0.0 && tau_red <= 1.0) {
        return Err(Error::Config(format!("tau_red must lie in (0, 1], got {tau_red}")));
    }
    let names = &corr.names;
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut retained: Vec<usize> = (0..names.len()).collect();
    let mut removed = Vec::new();

    loop {
        let mut edges = mst_over(corr, &retained);
        // strongest first; stable sort keeps the name order for equal |rho|
        edges.sort_by(|x, y| y.rho.abs().total_cmp(&x.rho.abs()));
        let chosen = edges.into_iter().find(|e| {
            e.rho.abs() >= tau_red && !(keep_list.contains(&e.feature_a) && keep_list.contains(&e.feature_b))
        });
        let Some(edge) = chosen else { break };

        let (a, b) = (index[edge.feature_a.as_str()], index[edge.feature_b.as_str()]);
        let redundancy = |k: usize| -> f64 {
            retained
                .iter()
                .filter(|&&o| o != k)
                .map(|&o| corr.values[k][o].abs())
                .sum()
        };
        let (sa, sb) = (redundancy(a), redundancy(b));
        let mut victim = if (sa - sb).abs() <= SUM_TIE_TOL {
            if names[a] > names[b] {
                a
            } else {
                b
            }
        } else if sa > sb {
            a
        } else {
            b
        };
        if keep_list.contains(&names[victim]) {
            victim = if victim == a { b } else { a };
        }
        let partner = if victim == a { b } else { a };
        retained.retain(|&k| k != victim);
        removed.push(Removal {
            feature: names[victim].clone(),
            reason: format!("|rho| >= {tau_red}"),
            partner: names[partner].clone(),
            rho: edge.rho,
        });
    }

    Ok(SegmentPrune {
        retained: retained.into_iter().map(|k| names[k].clone()).collect(),
        removed,
    })
}

/// Outcome of the pruning operator over all canonical segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub tau_red: f64,
    pub retained: BTreeMap<String, Vec<String>>,
    pub removed: BTreeMap<String, Vec<Removal>>,
    pub mst_edges: BTreeMap<String, Vec<MstEdge>>,
    pub pre_report: CorrelationReport,
    pub post_report: CorrelationReport,
    pub icc_change: f64,
    pub icor_change: Option<f64>,
}

impl PruneResult {
    pub fn n_retained(&self) -> usize {
        self.retained.values().map(Vec::len).sum()
    }

    pub fn retained_columns(&self) -> Vec<String> {
        self.retained.values().flatten().cloned().collect()
    }
}

/// Prunes every segment independently and recomputes the separability
/// statistics on the reduced segments.
pub fn run_pruning(
    frame: &MetricFrame,
    segments: &BTreeMap<String, Vec<String>>,
    tau_red: f64,
    keep_list: &BTreeSet<String>,
) -> Result<PruneResult> {
    let pre_report = analyze_segments(frame, segments)?;
    let mut retained = BTreeMap::new();
    let mut removed = BTreeMap::new();
    let mut mst_edges = BTreeMap::new();
    for (name, cols) in segments {
        let corr = CorrMatrix::spearman(frame, cols)?;
        mst_edges.insert(name.clone(), corr_distance_mst(&corr));
        let pruned = prune_segment(&corr, tau_red, keep_list)?;
        retained.insert(name.clone(), pruned.retained);
        removed.insert(name.clone(), pruned.removed);
    }
    let post_report = if removed.values().all(Vec::is_empty) {
        pre_report.clone()
    } else {
        analyze_segments(frame, &retained)?
    };
    let icc_change = (post_report.icc_micro - pre_report.icc_micro).abs();
    let icor_change = match (post_report.icor_micro, pre_report.icor_micro) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(PruneResult {
        tau_red,
        retained,
        removed,
        mst_edges,
        pre_report,
        post_report,
        icc_change,
        icor_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(names: &[&str], upper: &[((usize, usize), f64)]) -> CorrMatrix {
        let n = names.len();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &((i, j), r) in upper {
            v[i][j] = r;
            v[j][i] = r;
        }
        CorrMatrix::new(names.iter().map(|s| s.to_string()).collect(), v).unwrap()
    }

    fn pairs(edges: &[MstEdge]) -> Vec<(String, String)> {
        edges.iter().map(|e| (e.feature_a.clone(), e.feature_b.clone())).collect()
    }

    #[test]
    fn mst_two_features() {
        let m = matrix(&["a", "b"], &[((0, 1), -0.3)]);
        let e = corr_distance_mst(&m);
        assert_eq!(e.len(), 1);
        assert!((e[0].weight - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mst_three_features() {
        let m = matrix(&["a", "b", "c"], &[((0, 1), 0.9), ((0, 2), 0.5), ((1, 2), 0.8)]);
        assert_eq!(
            pairs(&corr_distance_mst(&m)),
            [("a".into(), "b".into()), ("b".into(), "c".into())]
        );
    }

    #[test]
    fn mst_tie_break_is_lexicographic() {
        // a-b fixed; c can attach via a or b at equal weight, d via c or b
        let m = matrix(
            &["d", "c", "b", "a"],
            &[((3, 2), 0.9), ((1, 3), 0.5), ((1, 2), 0.5), ((0, 1), 0.4), ((0, 2), 0.4)],
        );
        let p = pairs(&corr_distance_mst(&m));
        assert!(p.contains(&("a".into(), "c".into())), "{p:?}");
        assert!(!p.contains(&("b".into(), "c".into())), "{p:?}");
        assert!(p.contains(&("b".into(), "d".into())), "{p:?}");
    }

    #[test]
    fn mst_rejects_asymmetric() {
        let v = vec![vec![1.0, 0.5], vec![0.4, 1.0]];
        assert!(CorrMatrix::new(vec!["a".into(), "b".into()], v).is_err());
    }

    #[test]
    fn prune_duplicates() {
        let m = matrix(&["x", "y"], &[((0, 1), 1.0)]);
        let p = prune_segment(&m, 0.95, &BTreeSet::new()).unwrap();
        assert_eq!(p.retained, ["x"]);
        assert_eq!(p.removed[0].feature, "y");
        assert_eq!(p.removed[0].partner, "x");
    }

    #[test]
    fn prune_one_of_pair() {
        let m = matrix(&["a", "b", "c"], &[((0, 1), 0.99), ((0, 2), 0.3), ((1, 2), 0.3)]);
        let p = prune_segment(&m, 0.95, &BTreeSet::new()).unwrap();
        assert_eq!(p.removed.len(), 1);
        assert!(p.retained.contains(&"c".to_string()));
    }

    #[test]
    fn prune_keep_list_overrides() {
        // b has the larger |rho| sum, so it would normally go
        let m = matrix(&["a", "b", "c"], &[((0, 1), 0.99), ((0, 2), 0.3), ((1, 2), 0.4)]);
        let plain = prune_segment(&m, 0.95, &BTreeSet::new()).unwrap();
        assert_eq!(plain.removed[0].feature, "b");
        let keep: BTreeSet<String> = ["b".to_string()].into();
        let kept = prune_segment(&m, 0.95, &keep).unwrap();
        assert_eq!(kept.removed[0].feature, "a");
        let both: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
        assert!(prune_segment(&m, 0.95, &both).unwrap().removed.is_empty());
    }

    #[test]
    fn prune_rejects_bad_tau() {
        let m = matrix(&["a", "b"], &[((0, 1), 0.5)]);
        assert!(prune_segment(&m, 0.0, &BTreeSet::new()).is_err());
        assert!(prune_segment(&m, 1.5, &BTreeSet::new()).is_err());
    }

    #[test]
    fn chain_reaches_fixed_point() {
        let m = matrix(&["a", "b", "c"], &[((0, 1), 0.99), ((1, 2), 0.99), ((0, 2), 0.98)]);
        let p = prune_segment(&m, 0.95, &BTreeSet::new()).unwrap();
        assert_eq!(p.retained.len(), 1);
    }
}
