// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear max-margin classifier trained by plain stochastic gradient descent.
//!
//! Hinge loss with L2 penalty, an unregularized intercept, per-epoch seeded
//! shuffling, and the "adaptive" schedule: the learning rate stays at `eta0`
//! and is divided by 5 whenever `n_iter_no_change` consecutive epochs fail to
//! improve the monitored score by `tol`. Training ends when the rate drops to
//! `1e-6` or below, or after `max_iter` epochs. With early stopping the
//! monitored score is accuracy on a stratified validation split; otherwise it
//! is the summed training loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdParams {
    /// L2 penalty strength.
    pub alpha: f64,
    /// Initial learning rate.
    pub eta0: f64,
    /// Maximum number of epochs.
    pub max_iter: usize,
    /// Minimum improvement that resets the patience counter.
    pub tol: f64,
    /// Patience in epochs.
    pub n_iter_no_change: usize,
    /// Hold out part of the data and monitor its accuracy.
    pub early_stopping: bool,
    /// Share of the data held out when `early_stopping` is set.
    pub validation_fraction: f64,
    /// Divide the rate by 5 on stagnation instead of stopping.
    pub adaptive: bool,
    /// Seed of the shuffling and the validation split.
    pub seed: u64,
}

impl Default for SgdParams {
    fn default() -> Self {
        SgdParams {
            alpha: 1e-4,
            eta0: 0.1,
            max_iter: 1000,
            tol: 1e-3,
            n_iter_no_change: 5,
            early_stopping: true,
            validation_fraction: 0.1,
            adaptive: true,
            seed: 0,
        }
    }
}

/// `sign(w·x + b)` classifier; positive scores predict the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// Weight vector.
    pub weights: Vec<f64>,
    /// Intercept.
    pub intercept: f64,
    /// Epochs run.
    pub epochs: usize,
}

impl LinearClassifier {
    /// Raw score `w·x + b`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }

    /// Predicted class.
    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    /// Fraction of rows classified correctly.
    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len() as f64
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Share of the larger class.
pub fn majority_rate(y: &[bool]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let pos = y.iter().filter(|&&l| l).count();
    pos.max(y.len() - pos) as f64 / y.len() as f64
}

fn stratified_split(y: &[bool], fraction: f64, rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < 2 {
            return None;
        }
        idx.shuffle(rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Some((train, val))
}

/// Fits a hinge-loss linear classifier on rows `x` with boolean labels `y`.
pub fn fit_hinge(x: &[Vec<f64>], y: &[bool], params: &SgdParams) -> Result<LinearClassifier> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty rows and labels, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            actual: bad.len(),
        });
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::InvalidInput("labels contain a single class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let split = if params.early_stopping {
        let s = stratified_split(y, params.validation_fraction, &mut rng);
        if s.is_none() {
            log::warn!("too few rows per class for a validation split; monitoring training loss");
        }
        s
    } else {
        None
    };
    let (mut order, val) = match split {
        Some((t, v)) => (t, v),
        None => ((0..x.len()).collect(), Vec::new()),
    };

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut eta = params.eta0;
    let mut best = if val.is_empty() {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let mut no_improvement = 0usize;
    let mut epochs = 0;
    for _ in 0..params.max_iter {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let target = if y[i] { 1.0 } else { -1.0 };
            let margin = target * (dot(&w, &x[i]) + b);
            let shrink = 1.0 - eta * params.alpha;
            if margin < 1.0 {
                loss_sum += 1.0 - margin;
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj = *wj * shrink + eta * target * xj;
                }
                b += eta * target;
            } else {
                w.iter_mut().for_each(|wj| *wj *= shrink);
            }
        }
        let improved = if val.is_empty() {
            let better = loss_sum < best - params.tol;
            best = best.min(loss_sum);
            better
        } else {
            let hits = val.iter().filter(|&&i| (dot(&w, &x[i]) + b > 0.0) == y[i]).count();
            let score = hits as f64 / val.len() as f64;
            let better = score >= best + params.tol;
            best = best.max(score);
            better
        };
        no_improvement = if improved { 0 } else { no_improvement + 1 };
        if no_improvement >= params.n_iter_no_change {
            if params.adaptive && eta > 1e-6 {
                eta /= 5.0;
                no_improvement = 0;
            } else {
                break;
            }
        }
    }
    Ok(LinearClassifier {
        weights: w,
        intercept: b,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let cx = if pos { 2.0 } else { -2.0 };
            x.push(vec![cx + rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0)]);
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn separates_blobs() {
        let (x, y) = blobs(200, 1);
        let clf = fit_hinge(&x, &y, &SgdParams::default()).unwrap();
        assert_eq!(clf.accuracy(&x, &y), 1.0);
        assert!(clf.weights[0].abs() > clf.weights[1].abs());
        assert!(clf.epochs < 1000);
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = blobs(100, 2);
        let p = SgdParams {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(fit_hinge(&x, &y, &p).unwrap(), fit_hinge(&x, &y, &p).unwrap());
    }

    #[test]
    fn rejects_single_class_and_ragged_rows() {
        assert!(fit_hinge(&[vec![1.0], vec![2.0]], &[true, true], &SgdParams::default()).is_err());
        assert!(fit_hinge(&[vec![1.0], vec![2.0, 1.0]], &[true, false], &SgdParams::default()).is_err());
    }

    #[test]
    fn tiny_sets_fall_back_to_training_loss() {
        let x = vec![vec![1.0], vec![-1.0], vec![2.0]];
        let clf = fit_hinge(&x, &[true, false, true], &SgdParams::default()).unwrap();
        assert_eq!(clf.accuracy(&x, &[true, false, true]), 1.0);
    }
}
