// SPDX-License-Identifier: MIT OR Apache-2.0

//! Boundedness subspace learned by iterative nullspace projection, and the
//! counterfactual push along it.
//!
//! Training alternates two steps for `m` rounds: fit a linear max-margin
//! classifier separating bounded from unbounded cue representations, then
//! remove the classifier's direction from every feature vector. The unit
//! directions, re-orthogonalized against each other, span the rowspace `R`.
//!
//! With `c_i = w_i·h`, the counterfactual of `h` is
//! `P_N h + s·α·Σ_i |c_i| w_i` where `P_N = I − Σ_i w_i w_iᵀ` and `s = +1`
//! pushes towards the bounded side, `s = −1` towards the unbounded side.
//! Each direction is oriented so that bounded features project higher on it
//! than unbounded ones.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::{MaskedLm, TokenId};
use crate::dataset::BoundednessInstance;
use crate::error::{Error, Result};
use crate::types::Boundedness;

pub mod sgd;

pub use sgd::{fit_hinge, majority_rate, LinearClassifier, SgdParams};

use sgd::dot;

/// Counterfactual formula recorded in subspace provenance.
pub const PUSH_FORMULA: &str = "P_N h + s * alpha * sum_i |w_i . h| w_i";

/// Which side of the subspace to push towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PushDirection {
    /// Towards the bounded class.
    Positive,
    /// Towards the unbounded class.
    Negative,
}

impl PushDirection {
    /// `+1` or `−1`.
    pub fn sign(self) -> f64 {
        match self {
            PushDirection::Positive => 1.0,
            PushDirection::Negative => -1.0,
        }
    }

    /// Name used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            PushDirection::Positive => "positive",
            PushDirection::Negative => "negative",
        }
    }
}

impl fmt::Display for PushDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PushDirection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "positive" | "pos" | "bounded" | "+" => Ok(PushDirection::Positive),
            "negative" | "neg" | "unbounded" | "-" => Ok(PushDirection::Negative),
            other => Err(format!("unknown push direction {other:?}")),
        }
    }
}

/// How a subspace was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// `"inlp"` or `"random"`.
    pub kind: String,
    /// Digest of the training configuration.
    #[serde(default)]
    pub config_digest: String,
    /// The counterfactual formula applied with this subspace.
    pub push_formula: String,
    /// Number of feature rows used in training.
    #[serde(default)]
    pub n_features: usize,
    /// Rounds requested.
    #[serde(default)]
    pub requested_m: usize,
    /// Training accuracy of a fresh classifier on nullspace-projected features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_accuracy: Option<f64>,
    /// Majority-class share of the training features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_rate: Option<f64>,
}

/// Orthonormal directions at one layer plus the push strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessSubspace {
    /// Layer whose hidden states the directions live in.
    pub layer: usize,
    /// Push strength α.
    pub alpha: f64,
    /// Model hidden size.
    pub dim: usize,
    /// Unit, mutually orthogonal directions.
    pub directions: Vec<Vec<f64>>,
    /// Training accuracy of each round's classifier.
    #[serde(rename = "accuracies")]
    pub classifier_accuracies: Vec<f64>,
    /// Seed used in training or sampling.
    pub seed: u64,
    /// Origin of the directions.
    pub provenance: Provenance,
}

/// Tolerance of the unit-norm and orthogonality checks.
pub const ORTHO_TOLERANCE: f64 = 1e-6;

impl BoundednessSubspace {
    /// Number of directions `m`.
    pub fn m(&self) -> usize {
        self.directions.len()
    }

    /// Checks unit norms, pairwise orthogonality and dimensions.
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.directions.iter().enumerate() {
            if w.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    actual: w.len(),
                });
            }
            let norm = dot(w, w).sqrt();
            if (norm - 1.0).abs() > ORTHO_TOLERANCE {
                return Err(Error::InvalidInput(format!("direction {i} has norm {norm}")));
            }
            for (j, v) in self.directions.iter().enumerate().skip(i + 1) {
                let c = dot(w, v);
                if c.abs() > ORTHO_TOLERANCE {
                    return Err(Error::InvalidInput(format!(
                        "directions {i} and {j} have dot product {c}"
                    )));
                }
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha {} must be finite and >= 0",
                self.alpha
            )));
        }
        Ok(())
    }

    fn check_dim(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: h.len(),
            });
        }
        Ok(())
    }

    /// Coordinates `c_i = w_i·h`.
    pub fn coefficients(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(h)?;
        Ok(self.directions.iter().map(|w| dot(w, h)).collect())
    }

    /// `P_N h`.
    pub fn project_nullspace(&self, h: &[f64]) -> Result<Vec<f64>> {
        let c = self.coefficients(h)?;
        let mut out = h.to_vec();
        for (ci, w) in c.iter().zip(&self.directions) {
            for (o, wj) in out.iter_mut().zip(w) {
                *o -= ci * wj;
            }
        }
        Ok(out)
    }

    /// `P_R h`.
    pub fn project_rowspace(&self, h: &[f64]) -> Result<Vec<f64>> {
        let c = self.coefficients(h)?;
        let mut out = vec![0.0; self.dim];
        for (ci, w) in c.iter().zip(&self.directions) {
            for (o, wj) in out.iter_mut().zip(w) {
                *o += ci * wj;
            }
        }
        Ok(out)
    }

    /// Dense `P_R = Σ w_i w_iᵀ`.
    pub fn rowspace_projector(&self) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.dim]; self.dim];
        for w in &self.directions {
            for (r, wr) in p.iter_mut().zip(w) {
                for (x, wc) in r.iter_mut().zip(w) {
                    *x += wr * wc;
                }
            }
        }
        p
    }

    /// Dense `P_N = I − P_R`.
    pub fn nullspace_projector(&self) -> Vec<Vec<f64>> {
        let mut p = self.rowspace_projector();
        for (i, row) in p.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = if i == j { 1.0 } else { 0.0 } - *x;
            }
        }
        p
    }

    /// Counterfactual of `h` pushed towards `direction`.
    pub fn counterfactual(&self, h: &[f64], direction: PushDirection) -> Result<Vec<f64>> {
        let c = self.coefficients(h)?;
        let mut out = self.project_nullspace(h)?;
        let s = direction.sign() * self.alpha;
        for (ci, w) in c.iter().zip(&self.directions) {
            for (o, wj) in out.iter_mut().zip(w) {
                *o += s * ci.abs() * wj;
            }
        }
        Ok(out)
    }

    /// Counterfactual of an `f32` hidden state, returned in `f32`.
    pub fn counterfactual_f32(&self, h: &[f32], direction: PushDirection) -> Result<Vec<f32>> {
        let wide: Vec<f64> = h.iter().map(|&x| x as f64).collect();
        Ok(self
            .counterfactual(&wide, direction)?
            .into_iter()
            .map(|x| x as f32)
            .collect())
    }

    /// Writes the subspace as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Reads and validates a subspace; the file may hold one object or an array.
    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let subspaces: Vec<Self> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        for s in &subspaces {
            s.validate()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(subspaces)
    }
}

/// Adds the unit-normalized component of `v` orthogonal to `basis`, if it is not negligible.
fn orthonormalize(v: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let mut u = v.to_vec();
    // two passes of modified Gram-Schmidt against numerical drift
    for _ in 0..2 {
        for b in basis {
            let c = dot(&u, b);
            for (x, bj) in u.iter_mut().zip(b) {
                *x -= c * bj;
            }
        }
    }
    let norm = dot(&u, &u).sqrt();
    let scale = dot(v, v).sqrt().max(f64::MIN_POSITIVE);
    if norm <= 1e-10 * scale || !norm.is_finite() {
        return None;
    }
    u.iter_mut().for_each(|x| *x /= norm);
    Some(u)
}

/// `m` orthonormal directions from seeded Gaussian vectors.
pub fn random_subspace(dim: usize, m: usize, seed: u64, alpha: f64, layer: usize) -> Result<BoundednessSubspace> {
    if m > dim {
        return Err(Error::InvalidInput(format!(
            "cannot draw {m} orthonormal directions in dimension {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(m);
    while directions.len() < m {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(u) = orthonormalize(&v, &directions) {
            directions.push(u);
        }
    }
    Ok(BoundednessSubspace {
        layer,
        alpha,
        dim,
        directions,
        classifier_accuracies: Vec::new(),
        seed,
        provenance: Provenance {
            kind: "random".into(),
            config_digest: String::new(),
            push_formula: PUSH_FORMULA.into(),
            n_features: 0,
            requested_m: m,
            guard_accuracy: None,
            majority_rate: None,
        },
    })
}

/// INLP settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InlpConfig {
    /// Number of rounds.
    pub m: usize,
    /// Push strength stored in the subspace.
    pub alpha: f64,
    /// A round whose classifier does not beat the majority rate by more than
    /// this margin ends training.
    pub degenerate_margin: f64,
    /// Classifier settings; the seed is offset per round.
    pub sgd: SgdParams,
}

impl Default for InlpConfig {
    fn default() -> Self {
        InlpConfig {
            m: 20,
            alpha: 4.0,
            degenerate_margin: 0.01,
            sgd: SgdParams::default(),
        }
    }
}

/// Feature rows with labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    /// One row per cue span.
    pub rows: Vec<Vec<f64>>,
    /// Label of each row.
    pub labels: Vec<Boundedness>,
    /// Instance id of each row.
    pub ids: Vec<String>,
    /// Instances that produced no row, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl FeatureSet {
    /// Labels as booleans (`true` = bounded).
    pub fn bool_labels(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l == Boundedness::Bounded).collect()
    }
}

/// Result of INLP training.
#[derive(Debug, Clone, PartialEq)]
pub struct InlpOutcome {
    /// The learned subspace.
    pub subspace: BoundednessSubspace,
    /// Per-round classifiers (before orientation), for diagnostics.
    pub classifiers: Vec<LinearClassifier>,
    /// Non-fatal problems.
    pub warnings: Vec<String>,
}

impl InlpOutcome {
    /// True if training stopped before `m` rounds.
    pub fn stopped_early(&self) -> bool {
        self.subspace.m() < self.subspace.provenance.requested_m
    }
}

fn round_seed(base: u64, round: usize) -> u64 {
    base.wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs INLP on precomputed features.
pub fn train_inlp_features(features: &FeatureSet, layer: usize, config: &InlpConfig) -> Result<InlpOutcome> {
    let x0 = &features.rows;
    let y = features.bool_labels();
    if x0.is_empty() {
        return Err(Error::InvalidInput("no feature rows to train on".into()));
    }
    let dim = x0[0].len();
    if let Some(bad) = x0.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: bad.len(),
        });
    }
    let majority = majority_rate(&y);
    let mut warnings = Vec::new();
    let (n_pos, n_neg) = (y.iter().filter(|&&l| l).count(), y.iter().filter(|&&l| !l).count());
    if n_pos != n_neg {
        warnings.push(format!(
            "unbalanced training data: {n_pos} bounded vs {n_neg} unbounded rows"
        ));
    }
    let mut subspace = BoundednessSubspace {
        layer,
        alpha: config.alpha,
        dim,
        directions: Vec::new(),
        classifier_accuracies: Vec::new(),
        seed: config.sgd.seed,
        provenance: Provenance {
            kind: "inlp".into(),
            config_digest: crate::report::config_digest(config),
            push_formula: PUSH_FORMULA.into(),
            n_features: x0.len(),
            requested_m: config.m,
            guard_accuracy: None,
            majority_rate: Some(majority),
        },
    };
    let mut classifiers = Vec::new();
    let mut x: Vec<Vec<f64>> = x0.clone();
    for round in 0..config.m {
        let params = SgdParams {
            seed: round_seed(config.sgd.seed, round),
            ..config.sgd.clone()
        };
        let clf = fit_hinge(&x, &y, &params)?;
        let acc = clf.accuracy(&x, &y);
        if acc <= majority + config.degenerate_margin {
            warnings.push(format!(
                "round {}: classifier accuracy {acc:.4} does not beat majority rate {majority:.4}; stopping with {} directions",
                round + 1,
                subspace.m()
            ));
            break;
        }
        let Some(mut w) = orthonormalize(&clf.weights, &subspace.directions) else {
            warnings.push(format!(
                "round {}: classifier direction lies in the existing subspace; stopping",
                round + 1
            ));
            break;
        };
        let (mut sum_pos, mut sum_neg) = (0.0, 0.0);
        for (row, &label) in x.iter().zip(&y) {
            let p = dot(&w, row);
            if label {
                sum_pos += p;
            } else {
                sum_neg += p;
            }
        }
        if sum_pos / n_pos.max(1) as f64 <= sum_neg / n_neg.max(1) as f64 {
            w.iter_mut().for_each(|v| *v = -*v);
        }
        subspace.directions.push(w);
        subspace.classifier_accuracies.push(acc);
        classifiers.push(clf);
        x = x0
            .iter()
            .map(|r| subspace.project_nullspace(r))
            .collect::<Result<_>>()?;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if subspace.m() > 0 {
        let guard = fit_hinge(
            &x,
            &y,
            &SgdParams {
                seed: round_seed(config.sgd.seed, config.m),
                ..config.sgd.clone()
            },
        )?;
        subspace.provenance.guard_accuracy = Some(guard.accuracy(&x, &y));
    }
    Ok(InlpOutcome {
        subspace,
        classifiers,
        warnings,
    })
}

/// Token positions of the characters under `cue` inside the masked sequence
/// of the target, verified against a separate encoding of the cue.
fn cue_positions(
    backend: &dyn MaskedLm,
    inst: &BoundednessInstance,
    masked: &crate::backend::TokenizedTarget,
    cue: crate::types::CharSpan,
) -> Result<Vec<usize>> {
    let c = backend.encode(&inst.text, cue)?;
    let n_target = masked.target_subtokens.len();
    let start = if cue.start < inst.target_span.start {
        c.mask_position
    } else {
        // in the cue encoding the target is unmasked, so it occupies n_target slots
        (c.mask_position + 1)
            .checked_sub(n_target)
            .ok_or_else(|| Error::InvalidInput("cue offset underflow".into()))?
    };
    let positions: Vec<usize> = (start..start + c.target_subtokens.len()).collect();
    let found: Vec<TokenId> = positions
        .iter()
        .filter_map(|&p| masked.token_ids.get(p).copied())
        .collect();
    if found != c.target_subtokens {
        return Err(Error::InvalidInput(format!(
            "cue span {cue} does not tokenize identically in context"
        )));
    }
    Ok(positions)
}

/// Mean hidden state over each cue span's subtokens, with the target masked.
pub fn extract_cue_features(
    backend: &dyn MaskedLm,
    instances: &[BoundednessInstance],
    layer: usize,
) -> Result<FeatureSet> {
    let mut out = FeatureSet::default();
    for inst in instances {
        let result = (|| -> Result<Vec<Vec<f64>>> {
            let masked = backend.encode(&inst.text, inst.target_span)?;
            let mut rows = Vec::new();
            for &cue in &inst.cue_spans {
                let positions = cue_positions(backend, inst, &masked, cue)?;
                let mut mean: Vec<f64> = Vec::new();
                for &p in &positions {
                    let h = backend.hidden_state(&masked.token_ids, p, layer)?;
                    if mean.is_empty() {
                        mean = vec![0.0; h.len()];
                    }
                    for (m, v) in mean.iter_mut().zip(&h) {
                        *m += *v as f64;
                    }
                }
                let n = positions.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                rows.push(mean);
            }
            Ok(rows)
        })();
        match result {
            Ok(rows) => {
                for row in rows {
                    out.rows.push(row);
                    out.labels.push(inst.label);
                    out.ids.push(inst.id.clone());
                }
            }
            Err(e @ (Error::Backend { .. } | Error::InvalidInput(_))) => {
                log::warn!("boundedness instance {} skipped: {e}", inst.id);
                out.skipped.push((inst.id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Extracts cue features at `layer` and runs INLP on them.
pub fn train_inlp(
    backend: &dyn MaskedLm,
    instances: &[BoundednessInstance],
    layer: usize,
    config: &InlpConfig,
) -> Result<(InlpOutcome, FeatureSet)> {
    let features = extract_cue_features(backend, instances, layer)?;
    let mut outcome = train_inlp_features(&features, layer, config)?;
    if !features.skipped.is_empty() {
        outcome
            .warnings
            .push(format!("{} instances produced no features", features.skipped.len()));
    }
    Ok((outcome, features))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dir(alpha: f64) -> BoundednessSubspace {
        BoundednessSubspace {
            layer: 0,
            alpha,
            dim: 2,
            directions: vec![vec![1.0, 0.0]],
            classifier_accuracies: vec![1.0],
            seed: 0,
            provenance: random_subspace(2, 0, 0, 0.0, 0).unwrap().provenance,
        }
    }

    #[test]
    fn hand_computed_push() {
        let s = one_dir(2.0);
        assert_eq!(s.project_nullspace(&[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            s.counterfactual(&[1.0, 1.0], PushDirection::Positive).unwrap(),
            vec![2.0, 1.0]
        );
        assert_eq!(
            s.counterfactual(&[1.0, 1.0], PushDirection::Negative).unwrap(),
            vec![-2.0, 1.0]
        );
        let zero = one_dir(0.0);
        assert_eq!(
            zero.counterfactual(&[3.0, -1.0], PushDirection::Positive).unwrap(),
            zero.project_nullspace(&[3.0, -1.0]).unwrap()
        );
        assert!(matches!(
            s.counterfactual(&[1.0], PushDirection::Positive),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn random_subspace_properties() {
        let a = random_subspace(3, 3, 5, 4.0, 1).unwrap();
        a.validate().unwrap();
        let p = a.rowspace_projector();
        for (i, row) in p.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((x - want).abs() < 1e-6);
            }
        }
        assert_eq!(a, random_subspace(3, 3, 5, 4.0, 1).unwrap());
        assert_ne!(a.directions, random_subspace(3, 3, 6, 4.0, 1).unwrap().directions);
        assert!(random_subspace(3, 4, 5, 4.0, 1).is_err());
        let empty = random_subspace(4, 0, 5, 4.0, 1).unwrap();
        assert_eq!(
            empty.project_nullspace(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn push_direction_parses_class_names() {
        assert_eq!("bounded".parse::<PushDirection>().unwrap(), PushDirection::Positive);
        assert_eq!("negative".parse::<PushDirection>().unwrap(), PushDirection::Negative);
        assert!("sideways".parse::<PushDirection>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = random_subspace(5, 2, 1, 4.0, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        s.save(&path).unwrap();
        assert_eq!(BoundednessSubspace::load_all(&path).unwrap(), vec![s.clone()]);
        std::fs::write(&path, serde_json::to_string(&vec![s.clone(), s.clone()]).unwrap()).unwrap();
        assert_eq!(BoundednessSubspace::load_all(&path).unwrap().len(), 2);
    }
}
