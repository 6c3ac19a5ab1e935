// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counterfactual interventions at the masked target.
//!
//! For every instance the target is masked and the sentence is run once
//! without intervention (the baseline, read at the final layer). Then, for an
//! intervention layer ℓ, the hidden state at the mask position after layer ℓ
//! is replaced by its counterfactual, the remaining layers are recomputed and
//! the final-layer prediction is scored the same way as the baseline.
//!
//! Two scoring methods are available: aspect inference (top-k tagged mass)
//! and iterative masking, where the substitution happens at the mask of every
//! subtoken step. Besides the aspect task, a number task scores singular vs.
//! plural mass and serves as a selectivity control.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::MaskDistribution;
use crate::backend::{insert_gold_prefix, BackendErrorCode, MaskRequest, MaskedLm, SubstituteRequest, TokenizedTarget};
use crate::behavioral::{
    encode_form, iterative_masking_encoded, preference_from_distribution, FormChoice, Method, Outcome, Skipped,
};
use crate::dataset::ProbingInstance;
use crate::error::{Error, Result};
use crate::lexicon::VocabFeatureMap;
use crate::stats::{bootstrap_ci, mean, population_variance};
use crate::subspace::{random_subspace, BoundednessSubspace, PushDirection};
use crate::types::{ContextType, Number};

/// What the final-layer prediction is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Expected vs. complementary aspect.
    Aspect,
    /// Expected vs. opposite grammatical number.
    Number,
}

impl Task {
    /// Name used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Aspect => "aspect",
            Task::Number => "number",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "aspect" => Ok(Task::Aspect),
            "number" => Ok(Task::Number),
            other => Err(format!("unknown task {other:?} (expected aspect|number)")),
        }
    }
}

/// Settings shared by all interventions of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalConfig {
    /// Scoring task.
    pub task: Task,
    /// Scoring method.
    pub method: Method,
    /// Top-k size for inference scoring.
    pub k: usize,
    /// Bootstrap resamples for the shift intervals (0 disables them).
    pub bootstrap_resamples: usize,
    /// Coverage of the shift intervals.
    pub ci_level: f64,
    /// Seed of the bootstrap.
    pub seed: u64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            task: Task::Aspect,
            method: Method::Inference,
            k: 12000,
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

/// The vector written back at the mask position.
#[derive(Debug, Clone, Copy)]
pub enum Intervention<'a> {
    /// The original hidden state, unchanged.
    Identity,
    /// Counterfactual from a subspace.
    Push {
        /// Trained or random subspace.
        subspace: &'a BoundednessSubspace,
        /// Side pushed towards.
        direction: PushDirection,
    },
}

impl Intervention<'_> {
    /// Table label: `identity`, `positive`, `negative`, or `random` for
    /// subspaces drawn by [`random_subspace`].
    pub fn label(&self) -> &'static str {
        match self {
            Intervention::Identity => "identity",
            Intervention::Push { subspace, direction } => {
                if subspace.provenance.kind == "random" {
                    "random"
                } else {
                    direction.as_str()
                }
            }
        }
    }

    /// Push side, if any.
    pub fn direction(&self) -> Option<PushDirection> {
        match self {
            Intervention::Identity => None,
            Intervention::Push { direction, .. } => Some(*direction),
        }
    }

    /// Seed of a random subspace.
    pub fn subspace_seed(&self) -> Option<u64> {
        match self {
            Intervention::Push { subspace, .. } if subspace.provenance.kind == "random" => Some(subspace.seed),
            _ => None,
        }
    }

    /// Counterfactual of `h`.
    pub fn apply(&self, h: &[f32]) -> Result<Vec<f32>> {
        match self {
            Intervention::Identity => Ok(h.to_vec()),
            Intervention::Push { subspace, direction } => subspace.counterfactual_f32(h, *direction),
        }
    }

    fn check(&self, layer: usize, hidden_size: usize) -> Result<()> {
        if let Intervention::Push { subspace, .. } = self {
            if subspace.layer != layer {
                return Err(Error::InvalidInput(format!(
                    "subspace trained at layer {} cannot be applied at layer {layer}",
                    subspace.layer
                )));
            }
            if subspace.dim != hidden_size {
                return Err(Error::Dimension {
                    expected: hidden_size,
                    actual: subspace.dim,
                });
            }
            subspace.validate()?;
        }
        Ok(())
    }
}

/// Singular and plural mass over the first `k` entries.
pub fn number_masses(dist: &MaskDistribution, vocab: &VocabFeatureMap, k: usize) -> (f64, f64) {
    let mut sing = 0.0;
    let mut plur = 0.0;
    for e in dist.entries.iter().take(k) {
        match vocab.number(&e.token) {
            Some(Number::Singular) => sing += e.prob,
            Some(Number::Plural) => plur += e.prob,
            None => {}
        }
    }
    (sing, plur)
}

enum Encoded {
    Inference(TokenizedTarget),
    Iterative {
        expected: TokenizedTarget,
        complementary: TokenizedTarget,
    },
}

struct Prepared {
    index: usize,
    class: &'static str,
    encoded: Encoded,
    before: (f64, f64),
}

/// Unintervened scores of a set of instances, reusable across layers and
/// interventions.
pub struct Baseline<'a> {
    instances: &'a [ProbingInstance],
    vocab: &'a VocabFeatureMap,
    config: CausalConfig,
    n_layers: usize,
    hidden_size: usize,
    prepared: Vec<Prepared>,
    /// Instances that could not be scored.
    pub skipped: Vec<Skipped>,
}

fn class_of(inst: &ProbingInstance, task: Task) -> Option<&'static str> {
    match task {
        Task::Aspect => Some(inst.expected_aspect.as_str()),
        Task::Number => inst.expected_number.map(Number::as_str),
    }
}

fn score_pair(
    dist: &MaskDistribution,
    inst: &ProbingInstance,
    vocab: &VocabFeatureMap,
    config: &CausalConfig,
) -> (f64, f64) {
    match config.task {
        Task::Aspect => {
            let p = preference_from_distribution(dist, vocab, config.k);
            (p.mass(inst.expected_aspect), p.mass(inst.complementary_aspect()))
        }
        Task::Number => {
            let (sing, plur) = number_masses(dist, vocab, config.k);
            match inst.expected_number {
                Some(Number::Singular) => (sing, plur),
                _ => (plur, sing),
            }
        }
    }
}

fn check_config(config: &CausalConfig) -> Result<()> {
    if config.method == Method::Inference && config.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if config.method == Method::Iterative && config.task == Task::Number {
        return Err(Error::InvalidInput("the number task needs inference scoring".into()));
    }
    if !(config.ci_level > 0.0 && config.ci_level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "ci_level must lie in (0,1), got {}",
            config.ci_level
        )));
    }
    Ok(())
}

impl<'a> Baseline<'a> {
    /// Scores every instance without intervention. Backend errors skip the
    /// instance; other errors abort.
    pub fn compute(
        backend: &dyn MaskedLm,
        instances: &'a [ProbingInstance],
        vocab: &'a VocabFeatureMap,
        config: &CausalConfig,
    ) -> Result<Self> {
        check_config(config)?;
        if instances.is_empty() {
            return Err(Error::InvalidInput("intervention needs at least one instance".into()));
        }
        let meta = backend.meta()?;
        let final_layer = meta.n_layers;
        let mut prepared = Vec::new();
        let mut skipped = Vec::new();
        for (index, inst) in instances.iter().enumerate() {
            let Some(class) = class_of(inst, config.task) else {
                skipped.push(Skipped {
                    id: inst.id.clone(),
                    reason: "no gold number".into(),
                });
                continue;
            };
            let attempt = || -> Result<(Encoded, (f64, f64))> {
                match config.method {
                    Method::Inference => {
                        let enc = backend.encode(&inst.text, inst.target_span)?;
                        let dists = backend.mask_distributions(&MaskRequest {
                            token_ids: enc.token_ids.clone(),
                            mask_position: enc.mask_position,
                            layers: vec![final_layer],
                            top_n: config.k,
                            gold_prefix: vec![],
                            query_ids: vec![],
                        })?;
                        let dist = dists
                            .first()
                            .ok_or_else(|| Error::Transport("backend returned no distribution".into()))?;
                        Ok((Encoded::Inference(enc), score_pair(dist, inst, vocab, config)))
                    }
                    Method::Iterative => {
                        let expected = encode_form(backend, inst, FormChoice::Expected)?;
                        let complementary = encode_form(backend, inst, FormChoice::Complementary)?;
                        let e = iterative_masking_encoded(backend, &expected, &[final_layer])?[0].1;
                        let c = iterative_masking_encoded(backend, &complementary, &[final_layer])?[0].1;
                        Ok((
                            Encoded::Iterative {
                                expected,
                                complementary,
                            },
                            (e, c),
                        ))
                    }
                }
            };
            match attempt() {
                Ok((encoded, before)) => prepared.push(Prepared {
                    index,
                    class,
                    encoded,
                    before,
                }),
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
        Ok(Baseline {
            instances,
            vocab,
            config: config.clone(),
            n_layers: meta.n_layers,
            hidden_size: meta.hidden_size,
            prepared,
            skipped,
        })
    }

    /// Number of scored instances.
    pub fn len(&self) -> usize {
        self.prepared.len()
    }

    /// True when no instance could be scored.
    pub fn is_empty(&self) -> bool {
        self.prepared.is_empty()
    }

    /// Configuration the baseline was computed with.
    pub fn config(&self) -> &CausalConfig {
        &self.config
    }
}

fn iterative_after(
    backend: &dyn MaskedLm,
    enc: &TokenizedTarget,
    layer: usize,
    intervention: &Intervention<'_>,
) -> Result<f64> {
    let subtokens = &enc.target_subtokens;
    if subtokens.is_empty() {
        return Err(Error::backend(BackendErrorCode::EmptyTarget));
    }
    let mut sum = 0.0;
    for (i, &gold) in subtokens.iter().enumerate() {
        let (ids, pos) = insert_gold_prefix(&enc.token_ids, enc.mask_position, &subtokens[..i]);
        let h = backend.hidden_state(&ids, pos, layer)?;
        let vector = intervention.apply(&h)?;
        let dist = backend.forward_substituted(&SubstituteRequest {
            token_ids: ids,
            layer,
            position: pos,
            vector,
            top_n: 1,
            query_ids: vec![gold],
        })?;
        sum += dist.prob(gold).ok_or_else(|| {
            Error::backend_detail(
                BackendErrorCode::SubtokenProbUnavailable,
                format!("no probability for subtoken {gold}"),
            )
        })?;
    }
    Ok(sum / subtokens.len() as f64)
}

/// Scores of one instance before and after an intervention.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceShift {
    /// Instance id.
    pub id: String,
    /// Intervention layer.
    pub layer: usize,
    /// Context type.
    pub context_type: ContextType,
    /// Gold class (`perf`/`imp` or `sing`/`plur`).
    pub class: String,
    /// Expected-side score before.
    pub expected_before: f64,
    /// Complementary-side score before.
    pub complementary_before: f64,
    /// Expected-side score after.
    pub expected_after: f64,
    /// Complementary-side score after.
    pub complementary_after: f64,
    /// Outcome before.
    pub before: Outcome,
    /// Outcome after.
    pub after: Outcome,
}

/// Accuracy before and after, for one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    /// Intervention layer.
    pub layer: usize,
    /// Intervention label.
    pub intervention: String,
    /// Seed of a random subspace.
    pub subspace_seed: Option<u64>,
    /// Scoring task.
    pub task: Task,
    /// Gold class, or `all`.
    pub class: String,
    /// Context type.
    pub context_type: ContextType,
    /// Instances in the cell.
    pub n: usize,
    /// Accuracy without intervention.
    pub before: f64,
    /// Accuracy with intervention.
    pub after: f64,
    /// `after - before`.
    pub shift: f64,
    /// Lower bootstrap bound of the shift.
    pub shift_lo: Option<f64>,
    /// Upper bootstrap bound of the shift.
    pub shift_hi: Option<f64>,
}

/// Outcome of one intervention at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionResult {
    /// Intervention layer.
    pub layer: usize,
    /// Intervention label.
    pub intervention: String,
    /// Per-cell accuracies.
    pub rows: Vec<ShiftRow>,
    /// Per-instance scores, in input order.
    pub instances: Vec<InstanceShift>,
    /// Instances skipped at this layer (baseline skips not repeated).
    pub skipped: Vec<Skipped>,
}

impl InterventionResult {
    /// Row for `class` (or `all`) and `context_type`.
    pub fn row(&self, class: &str, context_type: ContextType) -> Option<&ShiftRow> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.context_type == context_type)
    }
}

fn correct(o: Outcome) -> f64 {
    if o == Outcome::Correct {
        1.0
    } else {
        0.0
    }
}

fn shift_rows(
    layer: usize,
    intervention: &Intervention<'_>,
    task: Task,
    shifts: &[InstanceShift],
    config: &CausalConfig,
) -> Vec<ShiftRow> {
    let mut cells: BTreeMap<(String, ContextType), Vec<(f64, f64)>> = BTreeMap::new();
    for s in shifts {
        let pair = (correct(s.before), correct(s.after));
        cells.entry((s.class.clone(), s.context_type)).or_default().push(pair);
        cells.entry(("all".into(), s.context_type)).or_default().push(pair);
    }
    cells
        .into_iter()
        .map(|((class, context_type), pairs)| {
            let n = pairs.len();
            let before = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
            let after = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
            let ci = bootstrap_ci(n, config.bootstrap_resamples, config.ci_level, config.seed, |ix| {
                ix.iter().map(|&i| pairs[i].1 - pairs[i].0).sum::<f64>() / ix.len() as f64
            });
            ShiftRow {
                layer,
                intervention: intervention.label().into(),
                subspace_seed: intervention.subspace_seed(),
                task,
                class,
                context_type,
                n,
                before,
                after,
                shift: after - before,
                shift_lo: ci.map(|c| c.0),
                shift_hi: ci.map(|c| c.1),
            }
        })
        .collect()
}

/// Applies `intervention` at `layer` to every baseline instance.
pub fn run_intervention(
    backend: &dyn MaskedLm,
    baseline: &Baseline<'_>,
    intervention: &Intervention<'_>,
    layer: usize,
) -> Result<InterventionResult> {
    if layer > baseline.n_layers {
        return Err(Error::InvalidInput(format!(
            "layer {layer} out of range 0..={}",
            baseline.n_layers
        )));
    }
    intervention.check(layer, baseline.hidden_size)?;
    let config = &baseline.config;
    let mut shifts = Vec::with_capacity(baseline.prepared.len());
    let mut skipped = Vec::new();
    for p in &baseline.prepared {
        let inst = &baseline.instances[p.index];
        let after = match &p.encoded {
            Encoded::Inference(enc) => (|| {
                let h = backend.hidden_state(&enc.token_ids, enc.mask_position, layer)?;
                let vector = intervention.apply(&h)?;
                let dist = backend.forward_substituted(&SubstituteRequest {
                    token_ids: enc.token_ids.clone(),
                    layer,
                    position: enc.mask_position,
                    vector,
                    top_n: config.k,
                    query_ids: vec![],
                })?;
                Ok(score_pair(&dist, inst, baseline.vocab, config))
            })(),
            Encoded::Iterative {
                expected,
                complementary,
            } => iterative_after(backend, expected, layer, intervention)
                .and_then(|e| Ok((e, iterative_after(backend, complementary, layer, intervention)?))),
        };
        match after {
            Ok((e, c)) => shifts.push(InstanceShift {
                id: inst.id.clone(),
                layer,
                context_type: inst.context_type,
                class: p.class.into(),
                expected_before: p.before.0,
                complementary_before: p.before.1,
                expected_after: e,
                complementary_after: c,
                before: Outcome::of(p.before.0, p.before.1),
                after: Outcome::of(e, c),
            }),
            Err(e @ Error::Backend { .. }) => {
                log::warn!("instance {} skipped at layer {layer}: {e}", inst.id);
                skipped.push(Skipped {
                    id: inst.id.clone(),
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(InterventionResult {
        layer,
        intervention: intervention.label().into(),
        rows: shift_rows(layer, intervention, config.task, &shifts, config),
        instances: shifts,
        skipped,
    })
}

/// Settings of the random-subspace control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomControl {
    /// Directions per random subspace.
    pub m: usize,
    /// Push strength.
    pub alpha: f64,
    /// Number of random subspaces.
    pub n_subspaces: usize,
    /// Side pushed towards.
    pub direction: PushDirection,
    /// Seed of the first subspace; subspace `i` uses `seed + i`.
    pub seed: u64,
}

impl Default for RandomControl {
    fn default() -> Self {
        RandomControl {
            m: 20,
            alpha: 4.0,
            n_subspaces: 20,
            direction: PushDirection::Negative,
            seed: 0,
        }
    }
}

/// Spread of the random-control shifts for one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomSummaryRow {
    /// Intervention layer.
    pub layer: usize,
    /// Scoring task.
    pub task: Task,
    /// Gold class, or `all`.
    pub class: String,
    /// Context type.
    pub context_type: ContextType,
    /// Number of subspaces.
    pub n_subspaces: usize,
    /// Mean shift.
    pub mean_shift: f64,
    /// Population standard deviation of the shifts.
    pub sd_shift: f64,
    /// Mean absolute shift.
    pub mean_abs_shift: f64,
    /// Smallest shift.
    pub min_shift: f64,
    /// Largest shift.
    pub max_shift: f64,
}

/// One intervention per random subspace at `layer`, plus a summary.
pub fn random_control(
    backend: &dyn MaskedLm,
    baseline: &Baseline<'_>,
    layer: usize,
    control: &RandomControl,
) -> Result<(Vec<InterventionResult>, Vec<RandomSummaryRow>)> {
    if control.n_subspaces == 0 {
        return Err(Error::InvalidInput("random control needs at least one subspace".into()));
    }
    let mut results = Vec::with_capacity(control.n_subspaces);
    for i in 0..control.n_subspaces {
        let subspace = random_subspace(
            baseline.hidden_size,
            control.m,
            control.seed.wrapping_add(i as u64),
            control.alpha,
            layer,
        )?;
        let intervention = Intervention::Push {
            subspace: &subspace,
            direction: control.direction,
        };
        results.push(run_intervention(backend, baseline, &intervention, layer)?);
    }
    let summary = summarize_random(&results, baseline.config.task);
    Ok((results, summary))
}

/// Mean and spread of shifts across random-subspace results.
pub fn summarize_random(results: &[InterventionResult], task: Task) -> Vec<RandomSummaryRow> {
    let mut cells: BTreeMap<(usize, String, ContextType), Vec<f64>> = BTreeMap::new();
    for r in results {
        for row in &r.rows {
            cells
                .entry((row.layer, row.class.clone(), row.context_type))
                .or_default()
                .push(row.shift);
        }
    }
    cells
        .into_iter()
        .map(|((layer, class, context_type), shifts)| {
            let abs: Vec<f64> = shifts.iter().map(|s| s.abs()).collect();
            RandomSummaryRow {
                layer,
                task,
                class,
                context_type,
                n_subspaces: shifts.len(),
                mean_shift: mean(&shifts),
                sd_shift: population_variance(&shifts).sqrt(),
                mean_abs_shift: mean(&abs),
                min_shift: shifts.iter().copied().fold(f64::INFINITY, f64::min),
                max_shift: shifts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}
