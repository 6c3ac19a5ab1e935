// SPDX-License-Identifier: MIT OR Apache-2.0

//! Behavioral probing: how much probability the model puts on each aspect
//! form at the masked target, layer by layer.
//!
//! Two scoring methods are provided.
//!
//! *Iterative masking* scores a concrete form `V = V_1..V_n` by running `n`
//! passes. Pass `i` keeps the gold prefix `V_1..V_{i-1}` in place followed by a
//! single mask, and reads `P(V_i)`. The form's score is the mean over passes.
//! Gold probabilities are requested by exact token id, so truncation of the
//! returned distribution never hides them.
//!
//! *Aspect inference* reads the top-`k` of the distribution at a single mask
//! and sums the mass of complete verb forms tagged perfective and
//! imperfective in a [`VocabFeatureMap`].
//!
//! An instance counts as correct when the expected side scores strictly
//! higher. Ties are incorrect and reported separately.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendErrorCode, MaskDistribution, MaskRequest, MaskedLm, TokenizedTarget};
use crate::dataset::ProbingInstance;
use crate::error::{Error, Result};
use crate::lexicon::VocabFeatureMap;
use crate::stats::{quartiles, Quartiles};
use crate::types::{replace_span, Aspect, ContextType};

/// Which of the instance's two forms to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FormChoice {
    /// The form found in the text.
    Expected,
    /// The form of the opposite aspect.
    Complementary,
}

/// Scoring method of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Mean conditional probability of each form's subtokens.
    Iterative,
    /// Tagged top-k aspect mass at a single mask.
    Inference,
}

impl Method {
    /// Name used in tables and flags.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Iterative => "iterative",
            Method::Inference => "inference",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "iterative" => Ok(Method::Iterative),
            "inference" => Ok(Method::Inference),
            other => Err(format!("unknown method {other:?} (expected iterative|inference)")),
        }
    }
}

/// Encodes `instance` with `form` substituted for the target.
pub fn encode_form(backend: &dyn MaskedLm, instance: &ProbingInstance, form: FormChoice) -> Result<TokenizedTarget> {
    let text = match form {
        FormChoice::Expected => instance.expected_form.as_str(),
        FormChoice::Complementary => instance.complementary_form.as_str(),
    };
    let (sentence, span) = replace_span(&instance.text, instance.target_span, text)
        .ok_or_else(|| Error::InvalidInput(format!("instance {}: target span out of range", instance.id)))?;
    backend.encode(&sentence, span)
}

/// Mean conditional probability of the encoded target's subtokens, per layer.
///
/// Returns `(layer, P(V))` in the order of `layers`.
pub fn iterative_masking_encoded(
    backend: &dyn MaskedLm,
    encoded: &TokenizedTarget,
    layers: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let subtokens = &encoded.target_subtokens;
    if subtokens.is_empty() {
        return Err(Error::backend(BackendErrorCode::EmptyTarget));
    }
    let mut sums = vec![0.0; layers.len()];
    for (i, &gold) in subtokens.iter().enumerate() {
        let dists = backend.mask_distributions(&MaskRequest {
            token_ids: encoded.token_ids.clone(),
            mask_position: encoded.mask_position,
            layers: layers.to_vec(),
            top_n: 1,
            gold_prefix: subtokens[..i].to_vec(),
            query_ids: vec![gold],
        })?;
        if dists.len() != layers.len() {
            return Err(Error::Transport(format!(
                "backend returned {} distributions for {} layers",
                dists.len(),
                layers.len()
            )));
        }
        for (sum, d) in sums.iter_mut().zip(&dists) {
            let p = d.prob(gold).ok_or_else(|| {
                Error::backend_detail(
                    BackendErrorCode::SubtokenProbUnavailable,
                    format!("no probability for subtoken {gold} at layer {}", d.layer),
                )
            })?;
            *sum += p;
        }
    }
    let n = subtokens.len() as f64;
    Ok(layers.iter().zip(sums).map(|(&l, s)| (l, s / n)).collect())
}

/// `P(V)` of one of the instance's forms, per layer.
pub fn iterative_masking(
    backend: &dyn MaskedLm,
    instance: &ProbingInstance,
    form: FormChoice,
    layers: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let encoded = encode_form(backend, instance, form)?;
    iterative_masking_encoded(backend, &encoded, layers)
}

/// Both forms' iterative scores at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormScores {
    /// Layer.
    pub layer: usize,
    /// `P(expected form)`.
    pub p_expected: f64,
    /// `P(complementary form)`.
    pub p_complementary: f64,
}

/// Iterative-masking scores of both forms.
pub fn iterative_pair(backend: &dyn MaskedLm, instance: &ProbingInstance, layers: &[usize]) -> Result<Vec<FormScores>> {
    let exp = iterative_masking(backend, instance, FormChoice::Expected, layers)?;
    let comp = iterative_masking(backend, instance, FormChoice::Complementary, layers)?;
    Ok(exp
        .into_iter()
        .zip(comp)
        .map(|((layer, p_expected), (_, p_complementary))| FormScores {
            layer,
            p_expected,
            p_complementary,
        })
        .collect())
}

/// Aspect masses in the top-k at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AspectPreference {
    /// Layer.
    pub layer: usize,
    /// Mass of perfective-tagged tokens.
    pub p_perf: f64,
    /// Mass of imperfective-tagged tokens.
    pub p_imp: f64,
    /// Requested k.
    pub k: usize,
    /// Share of the scanned entries that carry an aspect tag.
    pub complete_verb_fraction: f64,
    /// Share of the scanned entries tagged perfective.
    pub perf_fraction: f64,
    /// Share of the scanned entries tagged imperfective.
    pub imp_fraction: f64,
}

impl AspectPreference {
    /// Mass of `aspect`.
    pub fn mass(&self, aspect: Aspect) -> f64 {
        match aspect {
            Aspect::Perfective => self.p_perf,
            Aspect::Imperfective => self.p_imp,
        }
    }

    /// Preferred aspect, `None` on a tie.
    pub fn preferred(&self) -> Option<Aspect> {
        if self.p_perf > self.p_imp {
            Some(Aspect::Perfective)
        } else if self.p_imp > self.p_perf {
            Some(Aspect::Imperfective)
        } else {
            None
        }
    }
}

/// Aspect masses over the first `k` entries of `dist`.
///
/// Fractions divide by the number of entries actually scanned, which is `k`
/// unless the distribution holds fewer entries.
pub fn preference_from_distribution(dist: &MaskDistribution, vocab: &VocabFeatureMap, k: usize) -> AspectPreference {
    let mut p_perf = 0.0;
    let mut p_imp = 0.0;
    let (mut n_perf, mut n_imp) = (0usize, 0usize);
    let scanned = dist.entries.len().min(k);
    for e in &dist.entries[..scanned] {
        match vocab.aspect(&e.token) {
            Some(Aspect::Perfective) => {
                p_perf += e.prob;
                n_perf += 1;
            }
            Some(Aspect::Imperfective) => {
                p_imp += e.prob;
                n_imp += 1;
            }
            None => {}
        }
    }
    let frac = |n: usize| if scanned == 0 { 0.0 } else { n as f64 / scanned as f64 };
    AspectPreference {
        layer: dist.layer,
        p_perf,
        p_imp,
        k,
        complete_verb_fraction: frac(n_perf + n_imp),
        perf_fraction: frac(n_perf),
        imp_fraction: frac(n_imp),
    }
}

/// Distributions at the masked target of `instance` for `layers`, truncated to `top_n`.
pub fn target_distributions(
    backend: &dyn MaskedLm,
    instance: &ProbingInstance,
    layers: &[usize],
    top_n: usize,
) -> Result<Vec<MaskDistribution>> {
    let enc = backend.encode(&instance.text, instance.target_span)?;
    backend.mask_distributions(&MaskRequest {
        token_ids: enc.token_ids,
        mask_position: enc.mask_position,
        layers: layers.to_vec(),
        top_n,
        gold_prefix: vec![],
        query_ids: vec![],
    })
}

/// Aspect preference of the masked target, per layer.
pub fn aspect_inference(
    backend: &dyn MaskedLm,
    instance: &ProbingInstance,
    vocab: &VocabFeatureMap,
    k: usize,
    layers: &[usize],
) -> Result<Vec<AspectPreference>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    Ok(target_distributions(backend, instance, layers, k)?
        .iter()
        .map(|d| preference_from_distribution(d, vocab, k))
        .collect())
}

/// Result of comparing the expected side against the complementary side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Expected side strictly higher.
    Correct,
    /// Complementary side strictly higher.
    Incorrect,
    /// Equal scores.
    Tie,
}

impl Outcome {
    /// Compares two scores.
    pub fn of(expected: f64, complementary: f64) -> Outcome {
        if expected > complementary {
            Outcome::Correct
        } else if expected < complementary {
            Outcome::Incorrect
        } else {
            Outcome::Tie
        }
    }

    /// Name used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Correct => "correct",
            Outcome::Incorrect => "incorrect",
            Outcome::Tie => "tie",
        }
    }
}

/// Per-instance, per-layer result of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceOutcome {
    /// Instance id.
    pub id: String,
    /// Layer.
    pub layer: usize,
    /// Context type of the instance.
    pub context_type: ContextType,
    /// Expected aspect of the instance.
    pub aspect: Aspect,
    /// Score of the expected side.
    pub score_expected: f64,
    /// Score of the complementary side.
    pub score_complementary: f64,
    /// Comparison result.
    pub outcome: Outcome,
}

/// One accuracy cell; `aspect = None` pools both aspects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyRow {
    /// Layer.
    pub layer: usize,
    /// Expected aspect, or `None` for both.
    pub aspect: Option<Aspect>,
    /// Context type.
    pub context_type: ContextType,
    /// Instances in the cell.
    pub n: usize,
    /// Fraction correct.
    pub accuracy: f64,
    /// Fraction tied.
    pub tie_rate: f64,
    /// Fraction incorrect.
    pub error_rate: f64,
}

/// Accuracy of a random guess between the two aspects.
pub const CHANCE_LEVEL: f64 = 0.5;

/// Aggregates outcomes into cells per layer × aspect × context type,
/// including pooled-aspect cells. Empty cells are omitted.
pub fn aggregate(outcomes: &[InstanceOutcome]) -> Vec<AccuracyRow> {
    let mut cells: BTreeMap<(usize, ContextType, Option<Aspect>), [usize; 3]> = BTreeMap::new();
    for o in outcomes {
        let slot = match o.outcome {
            Outcome::Correct => 0,
            Outcome::Tie => 1,
            Outcome::Incorrect => 2,
        };
        for aspect in [Some(o.aspect), None] {
            cells.entry((o.layer, o.context_type, aspect)).or_default()[slot] += 1;
        }
    }
    cells
        .into_iter()
        .map(|((layer, context_type, aspect), [c, t, e])| {
            let n = c + t + e;
            let nf = n as f64;
            AccuracyRow {
                layer,
                aspect,
                context_type,
                n,
                accuracy: c as f64 / nf,
                tie_rate: t as f64 / nf,
                error_rate: e as f64 / nf,
            }
        })
        .collect()
}

/// Sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    /// Scoring method.
    pub method: Method,
    /// Layers to read.
    pub layers: Vec<usize>,
    /// Top-k size for [`Method::Inference`].
    pub k: usize,
}

/// An instance the sweep could not score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    /// Instance id.
    pub id: String,
    /// Error message.
    pub reason: String,
}

/// Full output of [`layer_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Method used.
    pub method: Method,
    /// Per-instance outcomes, instance-major, in input order.
    pub outcomes: Vec<InstanceOutcome>,
    /// Aggregated accuracy cells.
    pub rows: Vec<AccuracyRow>,
    /// Instances that failed with a backend error.
    pub skipped: Vec<Skipped>,
}

/// Scores of the expected and complementary side for `instance`, per layer.
pub fn instance_scores(
    backend: &dyn MaskedLm,
    instance: &ProbingInstance,
    params: &SweepParams,
    vocab: &VocabFeatureMap,
) -> Result<Vec<(usize, f64, f64)>> {
    Ok(match params.method {
        Method::Iterative => iterative_pair(backend, instance, &params.layers)?
            .into_iter()
            .map(|s| (s.layer, s.p_expected, s.p_complementary))
            .collect(),
        Method::Inference => aspect_inference(backend, instance, vocab, params.k, &params.layers)?
            .into_iter()
            .map(|p| {
                (
                    p.layer,
                    p.mass(instance.expected_aspect),
                    p.mass(instance.complementary_aspect()),
                )
            })
            .collect(),
    })
}

/// Accuracy of every layer on `instances`.
///
/// Backend errors on individual instances (e.g. over-long inputs) skip the
/// instance and are reported; transport errors abort the sweep.
pub fn layer_sweep(
    backend: &dyn MaskedLm,
    instances: &[ProbingInstance],
    params: &SweepParams,
    vocab: &VocabFeatureMap,
) -> Result<SweepResult> {
    if instances.is_empty() {
        return Err(Error::InvalidInput("layer sweep needs at least one instance".into()));
    }
    let mut outcomes = Vec::with_capacity(instances.len() * params.layers.len());
    let mut skipped = Vec::new();
    for inst in instances {
        match instance_scores(backend, inst, params, vocab) {
            Ok(scores) => outcomes.extend(scores.into_iter().map(|(layer, e, c)| InstanceOutcome {
                id: inst.id.clone(),
                layer,
                context_type: inst.context_type,
                aspect: inst.expected_aspect,
                score_expected: e,
                score_complementary: c,
                outcome: Outcome::of(e, c),
            })),
            Err(e @ Error::Backend { .. }) => {
                log::warn!("instance {} skipped: {e}", inst.id);
                skipped.push(Skipped {
                    id: inst.id.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SweepResult {
        method: params.method,
        rows: aggregate(&outcomes),
        outcomes,
        skipped,
    })
}

/// Quartiles of `p_expected - p_complementary` for one layer and context type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DifferenceRow {
    /// Layer.
    pub layer: usize,
    /// Context type.
    pub context_type: ContextType,
    /// Distribution summary of the differences.
    #[serde(flatten)]
    pub stats: Quartiles,
}

/// Summaries of the probability difference from iterative-masking outcomes.
pub fn difference_stats(outcomes: &[InstanceOutcome]) -> Vec<DifferenceRow> {
    let mut groups: BTreeMap<(usize, ContextType), Vec<f64>> = BTreeMap::new();
    for o in outcomes {
        groups
            .entry((o.layer, o.context_type))
            .or_default()
            .push(o.score_expected - o.score_complementary);
    }
    groups
        .into_iter()
        .filter_map(|((layer, context_type), diffs)| {
            quartiles(&diffs).map(|stats| DifferenceRow {
                layer,
                context_type,
                stats,
            })
        })
        .collect()
}

/// Iterative masking over `instances` followed by [`difference_stats`].
pub fn probability_difference(
    backend: &dyn MaskedLm,
    instances: &[ProbingInstance],
    layers: &[usize],
) -> Result<Vec<DifferenceRow>> {
    let params = SweepParams {
        method: Method::Iterative,
        layers: layers.to_vec(),
        k: 1,
    };
    let sweep = layer_sweep(backend, instances, &params, &VocabFeatureMap::default())?;
    Ok(difference_stats(&sweep.outcomes))
}

/// Mean share of complete verbs in the top-k, for one k and layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompleteVerbRow {
    /// Top-k size.
    pub k: usize,
    /// Layer.
    pub layer: usize,
    /// Instances averaged.
    pub n: usize,
    /// Mean share of aspect-tagged entries.
    pub complete: f64,
    /// Mean share of perfective-tagged entries.
    pub perf: f64,
    /// Mean share of imperfective-tagged entries.
    pub imp: f64,
}

/// Share of tagged complete verbs among the top-k at each layer, for each k.
///
/// One backend call per instance at the largest k; smaller k reuse its prefix.
pub fn complete_verb_profile(
    backend: &dyn MaskedLm,
    instances: &[ProbingInstance],
    vocab: &VocabFeatureMap,
    k_values: &[usize],
    layers: &[usize],
) -> Result<Vec<CompleteVerbRow>> {
    let k_max = k_values.iter().copied().max().unwrap_or(0);
    if k_max == 0 {
        return Err(Error::InvalidInput("k values must be positive".into()));
    }
    let mut acc: BTreeMap<(usize, usize), (usize, f64, f64, f64)> = BTreeMap::new();
    for inst in instances {
        let dists = match target_distributions(backend, inst, layers, k_max) {
            Ok(d) => d,
            Err(e @ Error::Backend { .. }) => {
                log::warn!("instance {} skipped: {e}", inst.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        for d in &dists {
            for &k in k_values {
                let p = preference_from_distribution(d, vocab, k);
                let cell = acc.entry((k, d.layer)).or_default();
                cell.0 += 1;
                cell.1 += p.complete_verb_fraction;
                cell.2 += p.perf_fraction;
                cell.3 += p.imp_fraction;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((k, layer), (n, c, p, i))| {
            let nf = n as f64;
            CompleteVerbRow {
                k,
                layer,
                n,
                complete: c / nf,
                perf: p / nf,
                imp: i / nf,
            }
        })
        .collect())
}
