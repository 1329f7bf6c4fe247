//! Full-space and PCA baselines for the canonical-versus-residual comparison.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;
use crate::prediction::{evaluate_representations, EvalConfig, FaultLog, Representation, RepresentationInput, RiskReport};

const JACOBI_MAX_SWEEPS: usize = 100;
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub means: Vec<f64>,
    /// `k x d`, orthonormal rows in order of decreasing variance.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    /// Components past the numerical rank of the covariance.
    pub rank_deficient: usize,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.n_components() {
            return Err(Error::LengthMismatch {
                left: z.ncols(),
                right: self.n_components(),
            });
        }
        let means = Array1::from(self.means.clone());
        Ok(z.dot(&self.components) + &means)
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors as columns, unsorted.
pub fn jacobi_eigen(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[[p, q]] * a[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Top-`k` principal directions of the sample covariance, each signed so
/// that its largest-magnitude entry (lowest index on ties) is positive.
pub fn pca_fit(x: ArrayView2<'_, f64>, k: usize) -> Result<PcaModel> {
    let (t, d) = x.dim();
    if k == 0 || k > d {
        return Err(Error::Config(format!("component count {k} must lie in 1..={d}")));
    }
    if t <= k {
        return Err(Error::InsufficientData { needed: k + 1, got: t });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in PCA input".into()));
    }
    let means = x.mean_axis(Axis(0)).expect("non-empty input");
    let centered = &x - &means;
    let cov = centered.t().dot(&centered) / (t - 1) as f64;
    let (values, vectors) = jacobi_eigen(&cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);

    let mut components = Array2::<f64>::zeros((k, d));
    let mut explained = Vec::with_capacity(k);
    let mut rank_deficient = 0;
    for (row, &idx) in order.iter().take(k).enumerate() {
        let mut vec = vectors.column(idx).to_owned();
        let mut pivot = 0;
        for j in 1..d {
            if vec[j].abs() > vec[pivot].abs() {
                pivot = j;
            }
        }
        if vec[pivot] < 0.0 {
            vec.mapv_inplace(|v| -v);
        }
        components.row_mut(row).assign(&vec);
        let ev = values[idx].max(0.0);
        if ev <= RANK_TOLERANCE * top.max(1.0) {
            rank_deficient += 1;
            explained.push(0.0);
        } else {
            explained.push(ev);
        }
    }
    Ok(PcaModel {
        means: means.to_vec(),
        components,
        explained_variance: explained,
        rank_deficient,
    })
}

pub fn pca_transform(model: &PcaModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.means.len() {
        return Err(Error::LengthMismatch {
            left: x.ncols(),
            right: model.means.len(),
        });
    }
    let means = Array1::from(model.means.clone());
    Ok((&x - &means).dot(&model.components.t()))
}

/// Four-way comparison: canonical, residual, full, and PCA of the full space
/// with `pca_k` components (the canonical width when `None`), refitted on
/// each training fold.
pub fn compare_representations(
    canonical: &MetricFrame,
    residual: &MetricFrame,
    full: &MetricFrame,
    faults: &FaultLog,
    config: &EvalConfig,
    pca_k: Option<usize>,
) -> Result<RiskReport> {
    if full.n_cols() != canonical.n_cols() + residual.n_cols() {
        return Err(Error::Data("full frame must concatenate the canonical and residual columns".into()));
    }
    let k = pca_k.unwrap_or(canonical.n_cols());
    let input = |representation, frame, pca_components| RepresentationInput {
        representation,
        frame,
        pca_components,
    };
    evaluate_representations(
        &[
            input(Representation::Canonical, canonical, None),
            input(Representation::Residual, residual, None),
            input(Representation::Full, full, None),
            input(Representation::Pca, full, Some(k)),
        ],
        faults,
        config,
    )
}
