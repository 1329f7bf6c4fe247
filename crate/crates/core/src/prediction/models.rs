//! Deterministic in-repo classifiers: weighted logistic regression, a
//! bootstrap forest of depth-limited trees, and gradient-boosted depth-2
//! regression trees on the log-loss.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLIP: f64 = 1e-6;

const BOOST_LAMBDA: f64 = 5.0;
/// Pseudo-weight pulling forest leaf frequencies toward the training rate.
const LEAF_PRIOR_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Forest,
    Boosted,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Logistic, ModelKind::Forest, ModelKind::Boosted];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Forest => "forest",
            ModelKind::Boosted => "boosted",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model {s}")))
    }
}

/// Model family plus hyperparameters. The same spec is used for every
/// representation in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    pub n_trees: usize,
    pub max_depth: usize,
    pub feature_fraction: f64,
    pub min_leaf: usize,
    pub seed: u64,
    pub class_weighting: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Logistic => Self {
                kind,
                learning_rate: 1.0,
                iterations: 500,
                l2: 2.0,
                n_trees: 1,
                max_depth: 1,
                feature_fraction: 1.0,
                min_leaf: 1,
                seed,
                class_weighting: false,
            },
            ModelKind::Forest => Self {
                kind,
                learning_rate: 1.0,
                iterations: 1,
                l2: 0.0,
                n_trees: 60,
                max_depth: 3,
                feature_fraction: 0.5,
                min_leaf: 15,
                seed,
                class_weighting: false,
            },
            ModelKind::Boosted => Self {
                kind,
                learning_rate: 0.05,
                iterations: 20,
                l2: 0.0,
                n_trees: 1,
                max_depth: 2,
                feature_fraction: 0.8,
                min_leaf: 15,
                seed,
                class_weighting: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.iterations > 0
            && self.l2 >= 0.0
            && self.n_trees > 0
            && self.max_depth > 0
            && self.min_leaf > 0
            && self.feature_fraction > 0.0
            && self.feature_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid hyperparameters for {}", self.kind)))
        }
    }
}

/// Test-set probabilities; `degenerate` marks a single-class training set,
/// in which case every probability is the clipped training base rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub degenerate: bool,
}

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sample_weights(y: &[u8], balanced: bool) -> Vec<f64> {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = n - pos;
    if !balanced || pos == 0.0 || neg == 0.0 {
        return vec![1.0; y.len()];
    }
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * neg));
    y.iter().map(|&v| if v == 1 { wp } else { wn }).collect()
}

fn check_finite(x: &ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Data(format!("non-finite value in {what} features")))
    }
}

/// Fits `spec` on the training rows and returns probabilities for `test`.
pub fn fit_predict(spec: &ModelSpec, train: ArrayView2<'_, f64>, y: &[u8], test: ArrayView2<'_, f64>) -> Result<Prediction> {
    spec.validate()?;
    if train.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: train.nrows(),
            right: y.len(),
        });
    }
    if train.ncols() != test.ncols() {
        return Err(Error::LengthMismatch {
            left: train.ncols(),
            right: test.ncols(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Data(format!("label {bad} is not binary")));
    }
    check_finite(&train, "training")?;
    check_finite(&test, "test")?;

    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() || train.ncols() == 0 {
        let base = clip_probability(pos as f64 / y.len() as f64);
        return Ok(Prediction {
            probabilities: vec![base; test.nrows()],
            degenerate: true,
        });
    }

    let weights = sample_weights(y, spec.class_weighting);
    let raw = match spec.kind {
        ModelKind::Logistic => logistic(spec, train, y, &weights, test),
        ModelKind::Forest => forest(spec, train, y, &weights, test),
        ModelKind::Boosted => boosted(spec, train, y, &weights, test),
    };
    Ok(Prediction {
        probabilities: raw.into_iter().map(clip_probability).collect(),
        degenerate: false,
    })
}

fn logistic(spec: &ModelSpec, train: ArrayView2<'_, f64>, y: &[u8], weights: &[f64], test: ArrayView2<'_, f64>) -> Vec<f64> {
    let d = train.ncols();
    let mean = train.mean_axis(Axis(0)).expect("non-empty training set");
    let sd = train.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let xs = (&train - &mean) / &sd;
    let total_w: f64 = weights.iter().sum();

    // 1/4 * trace of the standardized Gram matrix bounds the loss curvature,
    // so learning_rate <= 1 gives a monotone descent.
    let step = spec.learning_rate / (spec.l2 + 0.25 * (d as f64 + 1.0));
    let mut coef = Array1::<f64>::zeros(d);
    let mut bias = 0.0;
    for _ in 0..spec.iterations {
        let z = xs.dot(&coef) + bias;
        let resid: Array1<f64> = z
            .iter()
            .zip(y)
            .zip(weights)
            .map(|((&zi, &yi), &wi)| wi * (sigmoid(zi) - yi as f64) / total_w)
            .collect();
        let grad = xs.t().dot(&resid) + &coef * spec.l2;
        coef.scaled_add(-step, &grad);
        bias -= step * resid.sum();
    }
    let ts = (&test - &mean) / &sd;
    (ts.dot(&coef) + bias).iter().map(|&z| sigmoid(z)).collect()
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Split scoring over additive per-row statistics `(s1, s2)`.
trait Criterion {
    fn score(&self, s1: f64, s2: f64) -> f64;
    fn leaf(&self, s1: f64, s2: f64) -> f64;
}

/// Weighted Gini with `s1 = sum w*y`, `s2 = sum w`; leaves hold the weighted
/// positive fraction smoothed toward `prior`.
struct Gini {
    prior: f64,
}

impl Criterion for Gini {
    fn score(&self, s1: f64, s2: f64) -> f64 {
        if s2 <= 0.0 {
            0.0
        } else {
            -2.0 * s1 * (s2 - s1) / s2
        }
    }

    fn leaf(&self, s1: f64, s2: f64) -> f64 {
        (s1 + LEAF_PRIOR_WEIGHT * self.prior) / (s2 + LEAF_PRIOR_WEIGHT)
    }
}

/// Second-order boosting gain with `s1 = sum g`, `s2 = sum h`.
struct Newton {
    lambda: f64,
}

impl Criterion for Newton {
    fn score(&self, s1: f64, s2: f64) -> f64 {
        s1 * s1 / (s2 + self.lambda)
    }

    fn leaf(&self, s1: f64, s2: f64) -> f64 {
        -s1 / (s2 + self.lambda)
    }
}

struct TreeBuilder<'a, C: Criterion> {
    x: ArrayView2<'a, f64>,
    s1: &'a [f64],
    s2: &'a [f64],
    criterion: C,
    max_depth: usize,
    min_leaf: usize,
    n_candidate_features: usize,
    nodes: Vec<Node>,
}

impl<C: Criterion> TreeBuilder<'_, C> {
    fn build(mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        self.grow(rows, 0, rng);
        Tree { nodes: self.nodes }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (t1, t2) = rows.iter().fold((0.0, 0.0), |(a, b), &r| (a + self.s1[r], b + self.s2[r]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(self.criterion.leaf(t1, t2)));
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, t1, t2, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x[[i, feature]] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], t1: f64, t2: f64, rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x.ncols();
        let mut features = sample(rng, d, self.n_candidate_features).into_vec();
        features.sort_unstable();
        let parent = self.criterion.score(t1, t2);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let (mut l1, mut l2) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let r = order[k];
                l1 += self.s1[r];
                l2 += self.s2[r];
                let n_left = k + 1;
                if n_left < self.min_leaf || order.len() - n_left < self.min_leaf {
                    continue;
                }
                let (v, next) = (self.x[[r, f]], self.x[[order[k + 1], f]]);
                if v == next {
                    continue;
                }
                let gain = self.criterion.score(l1, l2) + self.criterion.score(t1 - l1, t2 - l2) - parent;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, v + (next - v) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn candidate_count(d: usize, fraction: f64) -> usize {
    ((d as f64 * fraction).round() as usize).clamp(1, d)
}

fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn forest(spec: &ModelSpec, train: ArrayView2<'_, f64>, y: &[u8], weights: &[f64], test: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = train.nrows();
    let s1: Vec<f64> = y.iter().zip(weights).map(|(&v, &w)| w * v as f64).collect();
    let prior = s1.iter().sum::<f64>() / weights.iter().sum::<f64>();
    let mut sums = vec![0.0; test.nrows()];
    for t in 0..spec.n_trees {
        let mut rng = tree_rng(spec.seed, t);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let tree = TreeBuilder {
            x: train,
            s1: &s1,
            s2: weights,
            criterion: Gini { prior },
            max_depth: spec.max_depth,
            min_leaf: spec.min_leaf,
            n_candidate_features: candidate_count(train.ncols(), spec.feature_fraction),
            nodes: Vec::new(),
        }
        .build(rows, &mut rng);
        for (acc, row) in sums.iter_mut().zip(test.rows()) {
            *acc += tree.predict(row.as_slice().expect("standard layout"));
        }
    }
    sums.into_iter().map(|s| s / spec.n_trees as f64).collect()
}

fn boosted(spec: &ModelSpec, train: ArrayView2<'_, f64>, y: &[u8], weights: &[f64], test: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = train.nrows();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let wpos: f64 = weights.iter().zip(&yf).map(|(w, v)| w * v).sum();
    let base = clip_probability(wpos / wsum);
    let init = (base / (1.0 - base)).ln();

    let mut f_train = vec![init; n];
    let mut f_test = vec![init; test.nrows()];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for it in 0..spec.iterations {
        for i in 0..n {
            let p = sigmoid(f_train[i]);
            g[i] = weights[i] * (p - yf[i]);
            h[i] = weights[i] * p * (1.0 - p);
        }
        let mut rng = tree_rng(spec.seed, it);
        let tree = TreeBuilder {
            x: train,
            s1: &g,
            s2: &h,
            criterion: Newton { lambda: BOOST_LAMBDA },
            max_depth: spec.max_depth,
            min_leaf: spec.min_leaf,
            n_candidate_features: candidate_count(train.ncols(), spec.feature_fraction),
            nodes: Vec::new(),
        }
        .build((0..n).collect(), &mut rng);
        for (fv, row) in f_train.iter_mut().zip(train.rows()) {
            *fv += spec.learning_rate * tree.predict(row.as_slice().expect("standard layout"));
        }
        for (fv, row) in f_test.iter_mut().zip(test.rows()) {
            *fv += spec.learning_rate * tree.predict(row.as_slice().expect("standard layout"));
        }
    }
    f_test.into_iter().map(sigmoid).collect()
}
