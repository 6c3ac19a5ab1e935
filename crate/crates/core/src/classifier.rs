// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-way aspect head on frozen mask-position representations, F0.5
//! evaluation and Monte Carlo dropout uncertainty.
//!
//! The head is a softmax-regression layer over the hidden state of the masked
//! target at one layer, trained with seeded mini-batch gradient descent and
//! inverted dropout on its input features. Class order everywhere is
//! `[perf, imp]`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backend::{BackendErrorCode, MaskRequest, MaskedLm, TokenizedTarget};
use crate::behavioral::Skipped;
use crate::dataset::ProbingInstance;
use crate::error::{Error, Result};
use crate::lexicon::VocabFeatureMap;
use crate::stats::{mean, population_variance};
use crate::types::{Aspect, ContextType};

/// Class order of the head.
pub const CLASSES: [Aspect; 2] = [Aspect::Perfective, Aspect::Imperfective];

fn class_index(a: Aspect) -> usize {
    match a {
        Aspect::Perfective => 0,
        Aspect::Imperfective => 1,
    }
}

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadParams {
    /// Passes over the training rows.
    pub epochs: usize,
    /// Step size.
    pub learning_rate: f64,
    /// L2 penalty on the weights.
    pub l2: f64,
    /// Rows per update.
    pub batch_size: usize,
    /// Input dropout during training and MC sampling.
    pub dropout_rate: f64,
    /// Share of the rows held out for validation.
    pub validation_fraction: f64,
    /// Standard deviation of the initial weights (0 starts from zero, which
    /// the convex loss allows).
    pub init_std: f64,
    /// Seed of initialization, split, shuffling and dropout.
    pub seed: u64,
}

impl Default for HeadParams {
    fn default() -> Self {
        HeadParams {
            epochs: 20,
            learning_rate: 0.1,
            l2: 1e-4,
            batch_size: 32,
            dropout_rate: 0.1,
            validation_fraction: 0.1,
            init_std: 0.0,
            seed: 0,
        }
    }
}

/// Where a head came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadProvenance {
    /// Settings used.
    pub params: HeadParams,
    /// Training rows.
    pub n_train: usize,
    /// Validation rows.
    pub n_validation: usize,
    /// Accuracy on the training rows.
    pub train_accuracy: f64,
    /// Accuracy on the validation rows, when there were any.
    pub validation_accuracy: Option<f64>,
    /// Digest of the run configuration, filled in by callers.
    #[serde(default)]
    pub config_digest: String,
}

/// Linear two-class head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectHead {
    /// Layer the features come from.
    pub layer: usize,
    /// One weight row per class.
    pub weights: Vec<Vec<f64>>,
    /// One bias per class.
    pub bias: Vec<f64>,
    /// Input dropout rate.
    pub dropout_rate: f64,
    /// Training record.
    pub provenance: HeadProvenance,
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

impl AspectHead {
    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Checks shapes, finiteness and the dropout range.
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != 2 || self.bias.len() != 2 {
            return Err(Error::InvalidInput("head needs exactly two classes".into()));
        }
        let d = self.dim();
        if self.weights[1].len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: self.weights[1].len(),
            });
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("head parameters must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput(format!(
                "dropout rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> [f64; 2] {
        let z = |c: usize| self.weights[c].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c];
        [z(0), z(1)]
    }

    /// Class probabilities without dropout.
    pub fn scores(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check(x)?;
        Ok(softmax2(self.logits(x)))
    }

    /// Class probabilities with one dropout mask drawn from `rng`.
    pub fn scores_with_dropout(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<[f64; 2]> {
        self.check(x)?;
        Ok(softmax2(self.logits(&dropout(x, self.dropout_rate, rng))))
    }

    /// Predicted class; `None` on equal scores.
    pub fn predict(&self, x: &[f64]) -> Result<Option<Aspect>> {
        let s = self.scores(x)?;
        Ok(if s[0] > s[1] {
            Some(Aspect::Perfective)
        } else if s[1] > s[0] {
            Some(Aspect::Imperfective)
        } else {
            None
        })
    }

    /// Share of rows predicted correctly. Equal scores earn half a hit, the
    /// expected value of a coin-flip tie-break, so an all-zero head sits at
    /// chance.
    pub fn accuracy(&self, x: &[Vec<f64>], y: &[Aspect]) -> Result<f64> {
        if x.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0.0;
        for (row, &label) in x.iter().zip(y) {
            match self.predict(row)? {
                Some(p) if p == label => hits += 1.0,
                None => hits += 0.5,
                Some(_) => {}
            }
        }
        Ok(hits / x.len() as f64)
    }

    /// Writes the head as JSON.
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Reads and validates a head.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: AspectHead = serde_json::from_str(&text)?;
        head.validate()?;
        Ok(head)
    }
}

fn dropout(x: &[f64], rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return x.to_vec();
    }
    let keep = 1.0 - rate;
    x.iter()
        .map(|&v| if rng.random::<f64>() < rate { 0.0 } else { v / keep })
        .collect()
}

fn split(y: &[Aspect], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in CLASSES {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(rng);
        let n_val = if fraction > 0.0 && idx.len() >= 2 {
            ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a head on feature rows `x` with gold aspects `y`.
pub fn train_head(x: &[Vec<f64>], y: &[Aspect], layer: usize, params: &HeadParams) -> Result<AspectHead> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty rows and labels, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if CLASSES.iter().any(|c| !y.contains(c)) {
        return Err(Error::InvalidInput("training data contain a single class".into()));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            actual: bad.len(),
        });
    }
    if !(0.0..1.0).contains(&params.dropout_rate) {
        return Err(Error::InvalidInput(format!(
            "dropout rate {} outside [0,1)",
            params.dropout_rate
        )));
    }
    if params.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (mut train, val) = split(y, params.validation_fraction, &mut rng);
    let init = Normal::new(0.0, params.init_std.max(0.0)).map_err(|e| Error::InvalidInput(format!("init_std: {e}")))?;
    let mut w: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..d).map(|_| init.sample(&mut rng)).collect())
        .collect();
    let mut b = vec![0.0; 2];
    for _ in 0..params.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(params.batch_size) {
            let mut gw = vec![vec![0.0; d]; 2];
            let mut gb = [0.0; 2];
            for &i in batch {
                let xi = dropout(&x[i], params.dropout_rate, &mut rng);
                let z = |c: usize| w[c].iter().zip(&xi).map(|(a, v)| a * v).sum::<f64>() + b[c];
                let p = softmax2([z(0), z(1)]);
                let gold = class_index(y[i]);
                for c in 0..2 {
                    let err = p[c] - if c == gold { 1.0 } else { 0.0 };
                    gb[c] += err;
                    for (g, v) in gw[c].iter_mut().zip(&xi) {
                        *g += err * v;
                    }
                }
            }
            let scale = params.learning_rate / batch.len() as f64;
            for c in 0..2 {
                for (wj, g) in w[c].iter_mut().zip(&gw[c]) {
                    *wj -= scale * g + params.learning_rate * params.l2 * *wj;
                }
                b[c] -= scale * gb[c];
            }
        }
    }
    let mut head = AspectHead {
        layer,
        weights: w,
        bias: b,
        dropout_rate: params.dropout_rate,
        provenance: HeadProvenance {
            params: params.clone(),
            n_train: train.len(),
            n_validation: val.len(),
            train_accuracy: 0.0,
            validation_accuracy: None,
            config_digest: String::new(),
        },
    };
    let rows = |ix: &[usize]| -> (Vec<Vec<f64>>, Vec<Aspect>) {
        (
            ix.iter().map(|&i| x[i].clone()).collect(),
            ix.iter().map(|&i| y[i]).collect(),
        )
    };
    let (tx, ty) = rows(&train);
    head.provenance.train_accuracy = head.accuracy(&tx, &ty)?;
    if !val.is_empty() {
        let (vx, vy) = rows(&val);
        head.provenance.validation_accuracy = Some(head.accuracy(&vx, &vy)?);
    }
    head.validate()?;
    Ok(head)
}

/// Mask-position features of probing instances.
#[derive(Debug, Clone, Default)]
pub struct MaskFeatures {
    /// Instance ids.
    pub ids: Vec<String>,
    /// Hidden states at the mask.
    pub rows: Vec<Vec<f64>>,
    /// Gold aspects.
    pub labels: Vec<Aspect>,
    /// Context types.
    pub context_types: Vec<ContextType>,
    /// Encodings, kept for backend dropout sampling.
    pub encoded: Vec<TokenizedTarget>,
    /// Instances that could not be encoded.
    pub skipped: Vec<Skipped>,
}

/// Hidden state at the masked target, per instance.
pub fn mask_features(backend: &dyn MaskedLm, instances: &[ProbingInstance], layer: usize) -> Result<MaskFeatures> {
    let mut out = MaskFeatures::default();
    for inst in instances {
        let got = backend
            .encode(&inst.text, inst.target_span)
            .and_then(|enc| Ok((backend.hidden_state(&enc.token_ids, enc.mask_position, layer)?, enc)));
        match got {
            Ok((h, enc)) => {
                out.ids.push(inst.id.clone());
                out.rows.push(h.iter().map(|&v| v as f64).collect());
                out.labels.push(inst.expected_aspect);
                out.context_types.push(inst.context_type);
                out.encoded.push(enc);
            }
            Err(e @ Error::Backend { .. }) => {
                log::warn!("instance {} skipped: {e}", inst.id);
                out.skipped.push(Skipped {
                    id: inst.id.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Two-class confusion counts, indexed `[gold][predicted]` in [`CLASSES`]
/// order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Counts.
    pub counts: [[u64; 2]; 2],
}

impl Confusion {
    /// The same matrix with the two classes renamed into each other.
    pub fn swapped(&self) -> Confusion {
        let c = self.counts;
        Confusion {
            counts: [[c[1][1], c[1][0]], [c[0][1], c[0][0]]],
        }
    }
}

/// One-vs-rest scores of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScore {
    /// Precision (0 when nothing was predicted as the class).
    pub precision: f64,
    /// Recall (0 when the class has no gold rows).
    pub recall: f64,
    /// F0.5.
    pub f_half: f64,
    /// Gold rows of the class.
    pub support: u64,
    /// Some denominator was zero and the convention value 0 was used.
    pub undefined: bool,
}

/// `(1 + β²)·P·R / (β²·P + R)`, or `None` when the denominator is zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Option<f64> {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    (denom > 0.0).then(|| (1.0 + b2) * precision * recall / denom)
}

/// Per-class F0.5 of a confusion matrix, in [`CLASSES`] order.
pub fn f_half(confusion: &Confusion) -> [ClassScore; 2] {
    let c = confusion.counts;
    let score = |k: usize| {
        let other = 1 - k;
        let tp = c[k][k] as f64;
        let predicted = (c[k][k] + c[other][k]) as f64;
        let gold = (c[k][k] + c[k][other]) as f64;
        let mut undefined = false;
        let mut ratio = |num: f64, den: f64| {
            if den > 0.0 {
                num / den
            } else {
                undefined = true;
                0.0
            }
        };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f = f_beta(precision, recall, 0.5);
        ClassScore {
            precision,
            recall,
            f_half: f.unwrap_or(0.0),
            support: c[k][k] + c[k][other],
            undefined: undefined || f.is_none(),
        }
    };
    [score(0), score(1)]
}

/// F0.5 row of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FHalfRow {
    /// Context type, `None` for all rows pooled.
    pub context_type: Option<ContextType>,
    /// Class.
    pub class: Aspect,
    /// Scores.
    #[serde(flatten)]
    pub score: ClassScore,
}

/// Evaluation of a head on labelled features.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEvaluation {
    /// Confusion per context type (`None` pools all).
    pub confusion: BTreeMap<Option<ContextType>, Confusion>,
    /// Per-class F0.5 rows.
    pub rows: Vec<FHalfRow>,
}

/// Confusion matrices and F0.5 per context type and pooled. Rows with equal
/// class scores count as predictions of the class opposite to gold.
pub fn evaluate_head(head: &AspectHead, features: &MaskFeatures) -> Result<HeadEvaluation> {
    let mut confusion: BTreeMap<Option<ContextType>, Confusion> = BTreeMap::new();
    for ((x, &gold), &ct) in features.rows.iter().zip(&features.labels).zip(&features.context_types) {
        let g = class_index(gold);
        let p = head.predict(x)?.map_or(1 - g, class_index);
        for key in [Some(ct), None] {
            confusion.entry(key).or_default().counts[g][p] += 1;
        }
    }
    let rows = confusion
        .iter()
        .flat_map(|(&ct, conf)| {
            let scores = f_half(conf);
            CLASSES.iter().zip(scores).map(move |(&class, score)| FHalfRow {
                context_type: ct,
                class,
                score,
            })
        })
        .collect();
    Ok(HeadEvaluation { confusion, rows })
}

/// A source of stochastic class scores.
pub trait DropoutScorer {
    /// Number of scorable items.
    fn len(&self) -> usize;

    /// True when there is nothing to score.
    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `n_samples` class-score pairs for item `index`.
    fn sample(&self, index: usize, n_samples: usize, seed: u64) -> Result<Vec<[f64; 2]>>;
}

/// Per-item seed: the run seed mixed with the item index.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples a head with input dropout.
pub struct HeadScorer<'a> {
    /// The head.
    pub head: &'a AspectHead,
    /// Feature rows.
    pub rows: &'a [Vec<f64>],
}

impl DropoutScorer for HeadScorer<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn sample(&self, index: usize, n_samples: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_samples)
            .map(|_| self.head.scores_with_dropout(&self.rows[index], &mut rng))
            .collect()
    }
}

/// Samples the backend's own dropout and reads the tagged aspect masses.
pub struct BackendScorer<'a> {
    backend: &'a dyn MaskedLm,
    encoded: &'a [TokenizedTarget],
    tags: Vec<Option<Aspect>>,
}

impl<'a> BackendScorer<'a> {
    /// Fails with `dropout_unsupported` when the backend cannot sample.
    pub fn new(backend: &'a dyn MaskedLm, encoded: &'a [TokenizedTarget], vocab: &VocabFeatureMap) -> Result<Self> {
        let meta = backend.meta()?;
        if !meta.supports_dropout {
            return Err(Error::backend(BackendErrorCode::DropoutUnsupported));
        }
        let mut tags = vec![None; meta.vocab_size];
        if let Some(first) = encoded.first() {
            // one full-vocabulary request recovers the token strings
            let dist = backend.mask_distributions(&MaskRequest {
                token_ids: first.token_ids.clone(),
                mask_position: first.mask_position,
                layers: vec![meta.n_layers],
                top_n: meta.vocab_size,
                gold_prefix: vec![],
                query_ids: vec![],
            })?;
            for e in dist.iter().flat_map(|d| &d.entries) {
                if let Some(slot) = tags.get_mut(e.id as usize) {
                    *slot = vocab.aspect(&e.token);
                }
            }
        }
        Ok(BackendScorer { backend, encoded, tags })
    }
}

impl DropoutScorer for BackendScorer<'_> {
    fn len(&self) -> usize {
        self.encoded.len()
    }

    fn sample(&self, index: usize, n_samples: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
        let enc = &self.encoded[index];
        let samples = self
            .backend
            .dropout_samples(&enc.token_ids, enc.mask_position, n_samples, seed)?;
        Ok(samples
            .iter()
            .map(|probs| {
                let mut out = [0.0; 2];
                for (p, tag) in probs.iter().zip(&self.tags) {
                    if let Some(a) = tag {
                        out[class_index(*a)] += p;
                    }
                }
                out
            })
            .collect())
    }
}

/// Mean and variance of one item's sampled scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceUncertainty {
    /// Item id.
    pub id: String,
    /// Context type.
    pub context_type: ContextType,
    /// Mean score per class.
    pub mean: [f64; 2],
    /// Population variance per class.
    pub variance: [f64; 2],
}

/// Mean per-item variance of one context type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyRow {
    /// Context type.
    pub context_type: ContextType,
    /// Items.
    pub n: usize,
    /// Mean variance of the perfective score.
    pub mean_variance_perf: f64,
    /// Mean variance of the imperfective score.
    pub mean_variance_imp: f64,
}

/// Result of [`mc_dropout`].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    /// Samples per item.
    pub n_samples: usize,
    /// Per-item statistics in input order.
    pub instances: Vec<InstanceUncertainty>,
    /// Per-context-type means.
    pub rows: Vec<UncertaintyRow>,
}

/// Samples every item `n_samples` times; item `i` uses
/// [`item_seed`]`(seed, i)`.
pub fn mc_dropout(
    scorer: &dyn DropoutScorer,
    items: &[(String, ContextType)],
    n_samples: usize,
    seed: u64,
) -> Result<UncertaintyEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    if items.len() != scorer.len() {
        return Err(Error::InvalidInput(format!(
            "{} items for a scorer over {}",
            items.len(),
            scorer.len()
        )));
    }
    let mut instances = Vec::with_capacity(items.len());
    for (i, (id, ct)) in items.iter().enumerate() {
        let samples = scorer.sample(i, n_samples, item_seed(seed, i))?;
        let column = |c: usize| samples.iter().map(|s| s[c]).collect::<Vec<f64>>();
        let (perf, imp) = (column(0), column(1));
        instances.push(InstanceUncertainty {
            id: id.clone(),
            context_type: *ct,
            mean: [mean(&perf), mean(&imp)],
            variance: [population_variance(&perf), population_variance(&imp)],
        });
    }
    let mut groups: BTreeMap<ContextType, Vec<[f64; 2]>> = BTreeMap::new();
    for inst in &instances {
        groups.entry(inst.context_type).or_default().push(inst.variance);
    }
    let rows = groups
        .into_iter()
        .map(|(context_type, v)| UncertaintyRow {
            context_type,
            n: v.len(),
            mean_variance_perf: mean(&v.iter().map(|x| x[0]).collect::<Vec<_>>()),
            mean_variance_imp: mean(&v.iter().map(|x| x[1]).collect::<Vec<_>>()),
        })
        .collect();
    Ok(UncertaintyEstimate {
        n_samples,
        instances,
        rows,
    })
}
