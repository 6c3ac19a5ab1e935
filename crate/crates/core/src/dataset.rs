// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probing and boundedness instances: JSONL loading, validation, summaries.
//!
//! Both loaders keep going past bad records: every rejected line is returned
//! with its reason code so that a run can report exactly what was dropped.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{normalize_lemma, AspectBank, CueCategory};
use crate::types::{Aspect, Boundedness, CharSpan, ContextType, Number};

/// One context with a target verb and its two aspect forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbingInstance {
    /// Unique identifier.
    pub id: String,
    /// Full context.
    pub text: String,
    /// Character span of the target verb in `text`.
    pub target_span: CharSpan,
    /// Form found in the text.
    pub expected_form: String,
    /// Same verb in the other aspect.
    pub complementary_form: String,
    /// Aspect of `expected_form`.
    pub expected_aspect: Aspect,
    /// Whether both aspects fit the context.
    pub context_type: ContextType,
    /// Lemma of the expected form, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_lemma: Option<String>,
    /// Lemma of the complementary form, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complementary_lemma: Option<String>,
    /// Grammatical number of the target, used by the number control.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_number: Option<Number>,
    /// UD morphological features of the target (`Aspect=Imp|Tense=Past|...`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_feats: Option<String>,
}

impl ProbingInstance {
    /// Aspect of the complementary form.
    pub fn complementary_aspect(&self) -> Aspect {
        self.expected_aspect.complement()
    }

    /// The form carrying `aspect`.
    pub fn form_of(&self, aspect: Aspect) -> &str {
        if aspect == self.expected_aspect {
            &self.expected_form
        } else {
            &self.complementary_form
        }
    }

    /// `(imperfective, perfective)` identity of the aspect pair, by lemma when
    /// both lemmas are present and by form otherwise.
    pub fn pair_key(&self) -> (String, String) {
        let (exp, comp) = match (&self.expected_lemma, &self.complementary_lemma) {
            (Some(a), Some(b)) => (normalize_lemma(a), normalize_lemma(b)),
            _ => (
                normalize_lemma(&self.expected_form),
                normalize_lemma(&self.complementary_form),
            ),
        };
        match self.expected_aspect {
            Aspect::Imperfective => (exp, comp),
            Aspect::Perfective => (comp, exp),
        }
    }

    /// Single-line canonical JSON.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }
}

/// Why a record was not accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Line is not a valid record.
    MalformedRecord,
    /// Identifier seen earlier in the file.
    DuplicateId,
    /// `text[target_span]` differs from `expected_form`, or the span is out of range.
    TargetSpanMismatch,
    /// Both forms coincide, or the bank flags the verb as biaspectual.
    BiaspectualExcluded,
    /// The lemmas are not a pair in the aspect bank.
    AspectPairUnknown,
    /// The bank assigns the expected lemma the other aspect.
    AspectMismatch,
    /// Imperfective present indicative: the perfective side has no such form.
    ParadigmAsymmetry,
    /// Participles and converbs are not probing targets.
    NonFiniteTarget,
    /// A cue span is empty, out of range, or missing.
    InvalidCueSpan,
    /// A cue span overlaps the target.
    CueTargetOverlap,
}

impl RejectReason {
    /// Stable code.
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MalformedRecord => "malformed_record",
            RejectReason::DuplicateId => "duplicate_id",
            RejectReason::TargetSpanMismatch => "target_span_mismatch",
            RejectReason::BiaspectualExcluded => "biaspectual_excluded",
            RejectReason::AspectPairUnknown => "aspect_pair_unknown",
            RejectReason::AspectMismatch => "aspect_mismatch",
            RejectReason::ParadigmAsymmetry => "paradigm_asymmetry",
            RejectReason::NonFiniteTarget => "non_finite_target",
            RejectReason::InvalidCueSpan => "invalid_cue_span",
            RejectReason::CueTargetOverlap => "cue_target_overlap",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rejected record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    /// Record id, if it could be read.
    pub id: Option<String>,
    /// Reason code.
    pub reason: RejectReason,
    /// Human-readable context.
    pub detail: String,
}

/// Instance count of one (context type, aspect) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellCount {
    /// Context type.
    pub context_type: ContextType,
    /// Expected aspect.
    pub aspect: Aspect,
    /// Number of instances.
    pub n: usize,
}

/// Counts of an accepted instance set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    /// Number of instances.
    pub total: usize,
    /// One entry per context type × aspect, in fixed order.
    pub cells: Vec<CellCount>,
    /// Distinct aspect pairs.
    pub distinct_pairs: usize,
}

impl DatasetSummary {
    /// Summarizes `instances`.
    pub fn of(instances: &[ProbingInstance]) -> Self {
        let cells = ContextType::ALL
            .iter()
            .flat_map(|&ctx| {
                Aspect::ALL.iter().map(move |&aspect| CellCount {
                    context_type: ctx,
                    aspect,
                    n: instances
                        .iter()
                        .filter(|i| i.context_type == ctx && i.expected_aspect == aspect)
                        .count(),
                })
            })
            .collect();
        let pairs: BTreeSet<(String, String)> = instances.iter().map(|i| i.pair_key()).collect();
        DatasetSummary {
            total: instances.len(),
            cells,
            distinct_pairs: pairs.len(),
        }
    }

    /// Count of one cell.
    pub fn count(&self, context_type: ContextType, aspect: Aspect) -> usize {
        self.cells
            .iter()
            .find(|c| c.context_type == context_type && c.aspect == aspect)
            .map_or(0, |c| c.n)
    }
}

/// Result of [`load_instances`].
#[derive(Debug, Clone)]
pub struct LoadedInstances {
    /// Accepted instances in file order.
    pub instances: Vec<ProbingInstance>,
    /// Summary of the accepted instances.
    pub summary: DatasetSummary,
    /// Rejected records.
    pub rejected: Vec<Rejection>,
}

fn parse_feats(feats: &str) -> Vec<(&str, &str)> {
    feats
        .split('|')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect()
}

/// Checks one probing instance; `None` means accepted.
pub fn validate_instance(inst: &ProbingInstance, bank: &AspectBank) -> Option<(RejectReason, String)> {
    match inst.target_span.slice(&inst.text) {
        Some(s) if s == inst.expected_form && !inst.target_span.is_empty() => {}
        Some(s) => {
            return Some((
                RejectReason::TargetSpanMismatch,
                format!(
                    "span {} covers {s:?}, expected {:?}",
                    inst.target_span, inst.expected_form
                ),
            ))
        }
        None => {
            return Some((
                RejectReason::TargetSpanMismatch,
                format!("span {} outside text", inst.target_span),
            ))
        }
    }
    if inst.expected_form == inst.complementary_form {
        return Some((
            RejectReason::BiaspectualExcluded,
            format!("both forms are {:?}", inst.expected_form),
        ));
    }
    if let Some(feats) = &inst.expected_feats {
        let feats = parse_feats(feats);
        let has = |k: &str, v: &str| feats.iter().any(|&(fk, fv)| fk == k && fv == v);
        if has("VerbForm", "Part") || has("VerbForm", "Conv") {
            return Some((RejectReason::NonFiniteTarget, "participle or converb".into()));
        }
        if has("Aspect", "Imp") && has("Tense", "Pres") && has("Mood", "Ind") {
            return Some((
                RejectReason::ParadigmAsymmetry,
                "imperfective present indicative has no perfective counterpart".into(),
            ));
        }
    }
    if let (Some(exp), Some(comp)) = (&inst.expected_lemma, &inst.complementary_lemma) {
        if normalize_lemma(exp) == normalize_lemma(comp) || bank.is_biaspectual(exp) || bank.is_biaspectual(comp) {
            return Some((RejectReason::BiaspectualExcluded, format!("lemma {exp:?}")));
        }
        if !bank.contains_pair(exp, comp) {
            return Some((
                RejectReason::AspectPairUnknown,
                format!("({exp:?}, {comp:?}) not in aspect bank"),
            ));
        }
        if let Some(a) = bank.aspect_of(exp) {
            if a != inst.expected_aspect {
                return Some((
                    RejectReason::AspectMismatch,
                    format!("bank lists {exp:?} as {a}, record says {}", inst.expected_aspect),
                ));
            }
        }
    }
    None
}

/// Reads probing instances from JSONL.
pub fn read_instances(reader: impl BufRead, file: &Path, bank: &AspectBank) -> Result<LoadedInstances> {
    let mut instances = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ProbingInstance = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                rejected.push(Rejection {
                    line: line_no,
                    id: record_id(&line),
                    reason: RejectReason::MalformedRecord,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let verdict = if !seen.insert(inst.id.clone()) {
            Some((RejectReason::DuplicateId, format!("id {:?} repeated", inst.id)))
        } else {
            validate_instance(&inst, bank)
        };
        match verdict {
            None => instances.push(inst),
            Some((reason, detail)) => rejected.push(Rejection {
                line: line_no,
                id: Some(inst.id),
                reason,
                detail,
            }),
        }
    }
    for r in &rejected {
        log::warn!("{}:{}: rejected ({}): {}", file.display(), r.line, r.reason, r.detail);
    }
    Ok(LoadedInstances {
        summary: DatasetSummary::of(&instances),
        instances,
        rejected,
    })
}

/// Loads probing instances from a JSONL file.
pub fn load_instances(path: impl AsRef<Path>, bank: &AspectBank) -> Result<LoadedInstances> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_instances(std::io::BufReader::new(file), path, bank)
}

fn record_id(line: &str) -> Option<String> {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()?
        .get("id")?
        .as_str()
        .map(str::to_string)
}

/// Writes records as JSONL, one canonical line each.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A verb occurrence labelled for boundedness, with the cue words that license the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundednessInstance {
    /// Unique identifier.
    pub id: String,
    /// Sentence text.
    pub text: String,
    /// Character span of the target verb.
    pub target_span: CharSpan,
    /// Character spans of the cue words.
    pub cue_spans: Vec<CharSpan>,
    /// Boundedness label.
    pub label: Boundedness,
    /// Cue category that produced the label, when mined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<CueCategory>,
}

/// Checks one boundedness instance; `None` means accepted.
pub fn validate_boundedness(inst: &BoundednessInstance) -> Option<(RejectReason, String)> {
    if inst.target_span.is_empty() || inst.target_span.slice(&inst.text).is_none() {
        return Some((
            RejectReason::TargetSpanMismatch,
            format!("target span {} invalid for text", inst.target_span),
        ));
    }
    if inst.cue_spans.is_empty() {
        return Some((RejectReason::InvalidCueSpan, "no cue spans".into()));
    }
    for cue in &inst.cue_spans {
        if cue.is_empty() || cue.slice(&inst.text).is_none() {
            return Some((RejectReason::InvalidCueSpan, format!("cue span {cue} invalid")));
        }
        if cue.overlaps(&inst.target_span) {
            return Some((
                RejectReason::CueTargetOverlap,
                format!("cue span {cue} overlaps target {}", inst.target_span),
            ));
        }
    }
    None
}

/// Result of [`load_boundedness`].
#[derive(Debug, Clone)]
pub struct LoadedBoundedness {
    /// Accepted instances in file order.
    pub instances: Vec<BoundednessInstance>,
    /// Rejected records.
    pub rejected: Vec<Rejection>,
    /// Non-fatal problems (empty file, class imbalance).
    pub warnings: Vec<String>,
}

impl LoadedBoundedness {
    /// Number of accepted instances with `label`.
    pub fn count(&self, label: Boundedness) -> usize {
        self.instances.iter().filter(|i| i.label == label).count()
    }
}

/// Reads boundedness instances from JSONL.
pub fn read_boundedness(reader: impl BufRead, file: &Path) -> Result<LoadedBoundedness> {
    let mut instances = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: BoundednessInstance = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                rejected.push(Rejection {
                    line: line_no,
                    id: record_id(&line),
                    reason: RejectReason::MalformedRecord,
                    detail: e.to_string(),
                });
                continue;
            }
        };
        let verdict = if !seen.insert(inst.id.clone()) {
            Some((RejectReason::DuplicateId, format!("id {:?} repeated", inst.id)))
        } else {
            validate_boundedness(&inst)
        };
        match verdict {
            None => instances.push(inst),
            Some((reason, detail)) => rejected.push(Rejection {
                line: line_no,
                id: Some(inst.id),
                reason,
                detail,
            }),
        }
    }
    let mut loaded = LoadedBoundedness {
        instances,
        rejected,
        warnings: Vec::new(),
    };
    if loaded.instances.is_empty() {
        loaded
            .warnings
            .push(format!("{}: no boundedness instances", file.display()));
    } else {
        let (b, u) = (loaded.count(Boundedness::Bounded), loaded.count(Boundedness::Unbounded));
        if b != u {
            loaded.warnings.push(format!(
                "{}: class imbalance, {b} bounded vs {u} unbounded",
                file.display()
            ));
        }
    }
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    for r in &loaded.rejected {
        log::warn!("{}:{}: rejected ({}): {}", file.display(), r.line, r.reason, r.detail);
    }
    Ok(loaded)
}

/// Loads boundedness instances from a JSONL file.
pub fn load_boundedness(path: impl AsRef<Path>) -> Result<LoadedBoundedness> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_boundedness(std::io::BufReader::new(file), path)
}
