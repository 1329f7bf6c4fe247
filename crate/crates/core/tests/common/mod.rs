//! Independent reference implementations used by the oracle tests.
#![allow(dead_code)]

/// Mid-rank by direct counting: `#less + (#equal + 1) / 2`.
pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let equal = x.iter().filter(|w| *w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}

/// Minimum spanning-tree weight over all (n-1)-edge subsets of the complete graph.
pub fn brute_force_mst_weight(weights: &[Vec<f64>]) -> f64 {
    let n = weights.len();
    if n < 2 {
        return 0.0;
    }
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << edges.len()) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut comp: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        for (k, &(i, j)) in edges.iter().enumerate() {
            if mask & (1 << k) != 0 {
                total += weights[i][j];
                let (ci, cj) = (comp[i], comp[j]);
                for c in comp.iter_mut() {
                    if *c == cj {
                        *c = ci;
                    }
                }
            }
        }
        if comp.iter().all(|&c| c == comp[0]) && total < best {
            best = total;
        }
    }
    best
}

fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// One-sided permutation p-value: share of all relabellings with U >= observed.
pub fn enumerated_mwu_p(sample_in: &[f64], sample_out: &[f64]) -> f64 {
    let pooled: Vec<f64> = sample_in.iter().chain(sample_out).copied().collect();
    let n = pooled.len();
    let k = sample_in.len();
    let observed = pairwise_u(sample_in, sample_out);
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let a: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| pooled[i]).collect();
        let b: Vec<f64> = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| pooled[i]).collect();
        total += 1;
        if pairwise_u(&a, &b) >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// Share of (positive, negative) pairs ranked correctly, ties counting one half.
pub fn pairwise_auc(y: &[u8], p: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = y.iter().zip(p).filter(|(l, _)| **l == 1).map(|(_, v)| *v).collect();
    let neg: Vec<f64> = y.iter().zip(p).filter(|(l, _)| **l == 0).map(|(_, v)| *v).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    Some(pairwise_u(&pos, &neg) / (pos.len() * neg.len()) as f64)
}
