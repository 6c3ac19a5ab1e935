// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic two-class Gaussian features for INLP checks.
//!
//! Each base draw `v` yields four rows: `v` and its mirror (non-signal
//! coordinates negated) as bounded, and the same two with the signal
//! coordinates negated as unbounded. The construction makes both class
//! means symmetric about the origin and the signal subspace exactly
//! `span(e_0..e_{m-1})`, so the analytic separator for `m = 1` is `e_0`.

use aspectprobe_core::subspace::FeatureSet;
use aspectprobe_core::types::Boundedness;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn four_rows(fs: &mut FeatureSet, v: Vec<f64>, m: usize) {
    let d = v.len();
    let mut mirror = v.clone();
    mirror[m..d].iter_mut().for_each(|x| *x = -*x);
    let mut neg = v.clone();
    neg[..m].iter_mut().for_each(|x| *x = -*x);
    let mut neg_mirror = mirror.clone();
    neg_mirror[..m].iter_mut().for_each(|x| *x = -*x);
    for (row, label) in [
        (v, Boundedness::Bounded),
        (mirror, Boundedness::Bounded),
        (neg, Boundedness::Unbounded),
        (neg_mirror, Boundedness::Unbounded),
    ] {
        fs.ids.push(format!("r{}", fs.rows.len()));
        fs.rows.push(row);
        fs.labels.push(label);
    }
}

/// One signal coordinate: `v_0 ~ N(0.5, 0.5^2)`, the rest standard normal.
pub fn single_direction(d: usize, n: usize, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fs = FeatureSet::default();
    for _ in 0..n {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        v[0] = 0.5 + 0.5 * v[0];
        four_rows(&mut fs, v, 1);
    }
    fs
}

/// `m` signal coordinates with means `mu (1 + j/2)` and spreads `0.4 (1 + j)`.
pub fn multi_direction(d: usize, m: usize, n: usize, mu: f64, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fs = FeatureSet::default();
    for _ in 0..n {
        let v: Vec<f64> = (0..d)
            .map(|j| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if j < m {
                    mu * (1.0 + 0.5 * j as f64) + z * (0.4 + 0.4 * j as f64)
                } else {
                    z
                }
            })
            .collect();
        four_rows(&mut fs, v, m);
    }
    fs
}

/// Frobenius norm of `P^2 - P`.
pub fn idempotence_error(p: &[Vec<f64>]) -> f64 {
    let d = p.len();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let pp: f64 = (0..d).map(|k| p[i][k] * p[k][j]).sum();
            total += (pp - p[i][j]).powi(2);
        }
    }
    total.sqrt()
}

/// Largest `|w_i . w_j|` over distinct pairs.
pub fn max_cross_dot(dirs: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in 0..i {
            let d: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
            worst = worst.max(d.abs());
        }
    }
    worst
}

/// Angle in radians between `w` and the line spanned by `e_0`.
pub fn angle_to_first_axis(w: &[f64]) -> f64 {
    let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    (w[0].abs() / norm).clamp(-1.0, 1.0).acos()
}
