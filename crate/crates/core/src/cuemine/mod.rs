// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mining boundedness-labelled verb occurrences from parsed corpora, and
//! counting cue words in probing contexts.
//!
//! A verb becomes a target only when a matched cue stands in the relation its
//! category calls for:
//!
//! | category | relation (Universal Dependencies labels, configurable) |
//! |---|---|
//! | Resultative, Iterative | cue is an `advmod`/`obl` dependent of the verb |
//! | Duration | cue is an `obl` dependent of the verb |
//! | Capability, Forget, Inception, Like | verb is an `xcomp` dependent of the cue |
//! | Forbid | verb is an `xcomp`/`csubj`/`ccomp` dependent of the cue |
//!
//! Forbid cues never label anything; a verb they govern is dropped. Verbs
//! with a negation particle, biaspectual verbs, sentences from the probing
//! test data and sentences that hold both a bounded and an unbounded cue
//! construction are dropped as well.

pub mod conllu;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavioral::Outcome;
use crate::dataset::{BoundednessInstance, ProbingInstance};
use crate::error::{Error, Result};
use crate::lexicon::{
    match_cues, normalize_lemma, AspectBank, CueCategory, CueMatch, CuePattern, CuePolarity, CueToken,
};
use crate::types::{Aspect, Boundedness, CharSpan, ContextType};

pub use conllu::{ConlluReader, ConlluToken, ParsedSentence, SkippedSentence};

/// Default number of instances kept per class.
pub const DEFAULT_CAP: usize = 8160;

/// Dependency labels that count as each relation kind. Labels are compared
/// without their subtype (`obl:tmod` matches `obl`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    /// Cue-to-verb labels for Resultative and Iterative cues.
    pub modifier: Vec<String>,
    /// Cue-to-verb labels for Duration cues.
    pub duration: Vec<String>,
    /// Verb-to-cue labels for predicate cues.
    pub complement: Vec<String>,
    /// Verb-to-cue labels under Forbid cues.
    pub forbid: Vec<String>,
}

impl Default for RelationConfig {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        RelationConfig {
            modifier: v(&["advmod", "obl"]),
            duration: v(&["obl"]),
            complement: v(&["xcomp"]),
            forbid: v(&["xcomp", "csubj", "ccomp"]),
        }
    }
}

/// Settings of a mining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    /// Maximum instances kept per class before balancing.
    pub cap: usize,
    /// Relation labels.
    pub relations: RelationConfig,
    /// Universal POS tags a target may carry.
    pub target_upos: Vec<String>,
    /// Lemmas that mark a negated target.
    pub negation_lemmas: Vec<String>,
    /// Recorded in outputs; the mining itself is order-deterministic.
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        MineConfig {
            cap: DEFAULT_CAP,
            relations: RelationConfig::default(),
            target_upos: vec!["VERB".into()],
            negation_lemmas: vec!["не".into()],
            seed: 0,
        }
    }
}

/// Counters of a mining run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MineStats {
    /// Sentences read, including skipped ones.
    pub sentences: usize,
    /// Sentences that could not be parsed.
    pub skipped_sentences: usize,
    /// Verb occurrences related to at least one cue.
    pub candidates: usize,
    /// Candidates in a sentence of the exclusion list.
    pub excluded_test_text: usize,
    /// Candidates with a negation particle.
    pub excluded_negated: usize,
    /// Biaspectual candidates.
    pub excluded_biaspectual: usize,
    /// Candidates governed by a Forbid cue.
    pub excluded_ambiguous: usize,
    /// Candidates in a sentence with cues of both polarities.
    pub excluded_conflict: usize,
    /// Candidates whose every cue span overlapped the target.
    pub excluded_overlap: usize,
    /// Candidates dropped because their class was full.
    pub capped: usize,
    /// Kept instances per class before balancing.
    pub before_balance: BTreeMap<Boundedness, usize>,
    /// Final instances per class.
    pub output: BTreeMap<Boundedness, usize>,
    /// Final instances per labelling category.
    pub per_category: BTreeMap<CueCategory, usize>,
}

/// Instances and counters of a mining run.
#[derive(Debug, Clone)]
pub struct MineResult {
    /// Balanced instances in corpus order.
    pub instances: Vec<BoundednessInstance>,
    /// Counters.
    pub stats: MineStats,
    /// Unparseable sentences.
    pub skipped: Vec<SkippedSentence>,
}

/// Key used to compare sentences with the exclusion list: lowercase with
/// whitespace runs collapsed.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Reads exclusion texts. Lines starting with `{` are JSON records whose
/// `text` field is used (probing JSONL works as is); other non-empty lines are
/// taken verbatim.
pub fn read_exclude_texts(reader: impl BufRead, file: &Path) -> Result<HashSet<String>> {
    #[derive(Deserialize)]
    struct WithText {
        text: String,
    }
    let mut out = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('{') {
            let rec: WithText = serde_json::from_str(trimmed)
                .map_err(|e| Error::parse(file, i + 1, format!("expected a record with \"text\": {e}")))?;
            out.insert(normalize_text(&rec.text));
        } else {
            out.insert(normalize_text(trimmed));
        }
    }
    Ok(out)
}

/// Cue-matching tokens of a parsed sentence.
pub fn sentence_cue_tokens(sentence: &ParsedSentence) -> Vec<CueToken> {
    sentence
        .tokens
        .iter()
        .map(|t| CueToken::new(t.form.clone(), &t.lemma))
        .collect()
}

fn base(label: &str) -> &str {
    label.split(':').next().unwrap_or("")
}

fn label_in(label: &str, set: &[String]) -> bool {
    let b = base(label);
    set.iter().any(|s| s == b || s == label)
}

// Words of the match whose head lies outside it.
fn anchors<'a>(sentence: &'a ParsedSentence, m: &'a CueMatch) -> impl Iterator<Item = usize> + 'a {
    m.token_indices
        .iter()
        .copied()
        .filter(move |&i| match sentence.head_of(i) {
            Some(h) => !m.token_indices.contains(&h),
            None => true,
        })
}

/// Verbs (0-based word indices) that `m` relates to under `config`.
pub fn related_targets(sentence: &ParsedSentence, m: &CueMatch, config: &MineConfig) -> Vec<usize> {
    let is_target =
        |i: usize| !m.token_indices.contains(&i) && config.target_upos.iter().any(|u| *u == sentence.tokens[i].upos);
    let r = &config.relations;
    let mut out = BTreeSet::new();
    for a in anchors(sentence, m) {
        match m.category {
            CueCategory::Resultative | CueCategory::Iterative | CueCategory::Duration => {
                let labels = if m.category == CueCategory::Duration {
                    &r.duration
                } else {
                    &r.modifier
                };
                if let Some(h) = sentence.head_of(a) {
                    if label_in(&sentence.tokens[a].deprel, labels) && is_target(h) {
                        out.insert(h);
                    }
                }
            }
            CueCategory::Capability
            | CueCategory::Forget
            | CueCategory::Inception
            | CueCategory::Like
            | CueCategory::Forbid => {
                let labels = if m.category == CueCategory::Forbid {
                    &r.forbid
                } else {
                    &r.complement
                };
                for d in sentence.dependents(a) {
                    if label_in(&sentence.tokens[d].deprel, labels) && is_target(d) {
                        out.insert(d);
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

fn match_span(sentence: &ParsedSentence, m: &CueMatch) -> CharSpan {
    let first = &sentence.tokens[m.token_indices[0]];
    let last = &sentence.tokens[*m.token_indices.last().expect("matches are non-empty")];
    CharSpan::new(first.span.start, last.span.end)
}

fn label_of(polarity: CuePolarity) -> Option<Boundedness> {
    match polarity {
        CuePolarity::Bounded => Some(Boundedness::Bounded),
        CuePolarity::Unbounded => Some(Boundedness::Unbounded),
        CuePolarity::Ambiguous => None,
    }
}

/// Streaming miner. Feed sentences in corpus order, then call
/// [`Miner::finish`].
pub struct Miner<'a> {
    patterns: &'a [CuePattern],
    bank: &'a AspectBank,
    exclude: &'a HashSet<String>,
    config: &'a MineConfig,
    kept: Vec<BoundednessInstance>,
    stats: MineStats,
    skipped: Vec<SkippedSentence>,
}

impl<'a> Miner<'a> {
    /// New miner. `exclude` holds [`normalize_text`] keys.
    pub fn new(
        patterns: &'a [CuePattern],
        bank: &'a AspectBank,
        exclude: &'a HashSet<String>,
        config: &'a MineConfig,
    ) -> Self {
        Miner {
            patterns,
            bank,
            exclude,
            config,
            kept: Vec::new(),
            stats: MineStats::default(),
            skipped: Vec::new(),
        }
    }

    /// True once both classes are full.
    pub fn saturated(&self) -> bool {
        Boundedness::ALL
            .iter()
            .all(|l| self.stats.before_balance.get(l).copied().unwrap_or(0) >= self.config.cap)
    }

    /// Processes one item of a [`ConlluReader`] stream.
    pub fn push(&mut self, item: std::result::Result<ParsedSentence, SkippedSentence>) {
        self.stats.sentences += 1;
        match item {
            Ok(s) => self.push_sentence(&s),
            Err(skip) => {
                log::warn!("skipping sentence at line {}: {}", skip.line, skip.reason);
                self.stats.skipped_sentences += 1;
                self.skipped.push(skip);
            }
        }
    }

    fn push_sentence(&mut self, sentence: &ParsedSentence) {
        let tokens = sentence_cue_tokens(sentence);
        let matches = match_cues(&tokens, self.patterns);
        // target word -> indices of related matches
        let mut related: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (mi, m) in matches.iter().enumerate() {
            for t in related_targets(sentence, m, self.config) {
                related.entry(t).or_default().push(mi);
            }
        }
        if related.is_empty() {
            return;
        }
        self.stats.candidates += related.len();
        let polarities: HashSet<Boundedness> = related
            .values()
            .flatten()
            .filter_map(|&mi| label_of(matches[mi].polarity))
            .collect();
        let conflict = polarities.len() > 1;
        let excluded_text = self.exclude.contains(&normalize_text(&sentence.text));
        let negation: Vec<String> = self.config.negation_lemmas.iter().map(|l| normalize_lemma(l)).collect();

        for (&t, mis) in &related {
            let word = &sentence.tokens[t];
            let negated = sentence
                .dependents(t)
                .any(|d| negation.contains(&normalize_lemma(&sentence.tokens[d].lemma)));
            let counter = if excluded_text {
                Some(&mut self.stats.excluded_test_text)
            } else if negated {
                Some(&mut self.stats.excluded_negated)
            } else if self.bank.is_biaspectual(&word.lemma) {
                Some(&mut self.stats.excluded_biaspectual)
            } else if mis.iter().any(|&mi| matches[mi].polarity == CuePolarity::Ambiguous) {
                Some(&mut self.stats.excluded_ambiguous)
            } else if conflict {
                Some(&mut self.stats.excluded_conflict)
            } else {
                None
            };
            if let Some(c) = counter {
                *c += 1;
                continue;
            }
            let label = label_of(matches[mis[0]].polarity).expect("ambiguous cues were excluded");
            let mut cue_spans: Vec<CharSpan> = mis
                .iter()
                .map(|&mi| match_span(sentence, &matches[mi]))
                .filter(|s| !s.overlaps(&word.span))
                .collect();
            cue_spans.sort();
            cue_spans.dedup();
            if cue_spans.is_empty() {
                self.stats.excluded_overlap += 1;
                continue;
            }
            let kept = self.stats.before_balance.entry(label).or_insert(0);
            if *kept >= self.config.cap {
                self.stats.capped += 1;
                continue;
            }
            *kept += 1;
            self.kept.push(BoundednessInstance {
                id: format!("{}:{}", sentence.sent_id, word.id),
                text: sentence.text.clone(),
                target_span: word.span,
                cue_spans,
                label,
                category: Some(matches[mis[0]].category),
            });
        }
    }

    /// Balances the classes by keeping the first `min(|bounded|, |unbounded|)`
    /// of each, in corpus order.
    pub fn finish(self) -> MineResult {
        let mut stats = self.stats;
        let n = Boundedness::ALL
            .iter()
            .map(|l| stats.before_balance.get(l).copied().unwrap_or(0))
            .min()
            .unwrap_or(0);
        for l in Boundedness::ALL {
            stats.before_balance.entry(l).or_insert(0);
        }
        let mut taken: BTreeMap<Boundedness, usize> = BTreeMap::new();
        let mut instances = Vec::with_capacity(2 * n);
        for inst in self.kept {
            let c = taken.entry(inst.label).or_insert(0);
            if *c < n {
                *c += 1;
                if let Some(cat) = inst.category {
                    *stats.per_category.entry(cat).or_insert(0) += 1;
                }
                instances.push(inst);
            }
        }
        for l in Boundedness::ALL {
            stats.output.insert(l, n);
        }
        MineResult {
            instances,
            stats,
            skipped: self.skipped,
        }
    }
}

/// Mines a whole corpus stream. Reading stops early once both classes are
/// full.
pub fn mine(
    corpus: impl IntoIterator<Item = std::result::Result<ParsedSentence, SkippedSentence>>,
    patterns: &[CuePattern],
    bank: &AspectBank,
    exclude: &HashSet<String>,
    config: &MineConfig,
) -> MineResult {
    let mut miner = Miner::new(patterns, bank, exclude, config);
    for item in corpus {
        miner.push(item);
        if miner.saturated() {
            break;
        }
    }
    miner.finish()
}

/// A context scanned by [`cue_statistics`].
#[derive(Debug, Clone, PartialEq)]
pub struct CueContext {
    /// Context id.
    pub id: String,
    /// Alternative or non-alternative, when known.
    pub context_type: Option<ContextType>,
    /// Aspect of the target form.
    pub aspect: Option<Aspect>,
    /// Behavioral outcome for the target, when available.
    pub outcome: Option<Outcome>,
    /// Tokens with their character spans.
    pub tokens: Vec<(CueToken, CharSpan)>,
    /// Target span; cue matches touching it are ignored.
    pub target_span: Option<CharSpan>,
}

/// Splits `text` into words (letters, digits, inner hyphens) and uses the
/// lowercased surface as lemma.
pub fn surface_tokens(text: &str) -> Vec<(CueToken, CharSpan)> {
    let chars: Vec<char> = text.chars().collect();
    let word_char = |c: char| c.is_alphanumeric() || c == '-';
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !word_char(chars[i]) || chars[i] == '-' {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && word_char(chars[i]) {
            i += 1;
        }
        let mut end = i;
        while end > start + 1 && chars[end - 1] == '-' {
            end -= 1;
        }
        let surface: String = chars[start..end].iter().collect();
        out.push((CueToken::new(surface.clone(), &surface), CharSpan::new(start, end)));
    }
    out
}

impl CueContext {
    /// Context for a probing instance. With a parse the lemmas come from it;
    /// otherwise surface forms stand in for lemmas, so inflected cue words
    /// are only found when the lexicon lists the inflected form.
    pub fn from_probing(inst: &ProbingInstance, parse: Option<&ParsedSentence>) -> Self {
        let tokens = match parse {
            Some(p) => p
                .tokens
                .iter()
                .map(|t| (CueToken::new(t.form.clone(), &t.lemma), t.span))
                .collect(),
            None => surface_tokens(&inst.text),
        };
        CueContext {
            id: inst.id.clone(),
            context_type: Some(inst.context_type),
            aspect: Some(inst.expected_aspect),
            outcome: None,
            tokens,
            target_span: Some(inst.target_span),
        }
    }

    /// Context for a mined instance; the cue lists are matched afresh.
    pub fn from_boundedness(inst: &BoundednessInstance) -> Self {
        CueContext {
            id: inst.id.clone(),
            context_type: None,
            aspect: None,
            outcome: None,
            tokens: surface_tokens(&inst.text),
            target_span: Some(inst.target_span),
        }
    }

    /// Matches not touching the target.
    pub fn matches(&self, patterns: &[CuePattern]) -> Vec<CueMatch> {
        let toks: Vec<CueToken> = self.tokens.iter().map(|(t, _)| t.clone()).collect();
        match_cues(&toks, patterns)
            .into_iter()
            .filter(|m| match self.target_span {
                Some(target) => m.token_indices.iter().all(|&i| !self.tokens[i].1.overlaps(&target)),
                None => true,
            })
            .collect()
    }
}

/// One group of [`cue_statistics`]. `None` fields pool over that dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CueStatsRow {
    /// Context type.
    pub context_type: Option<ContextType>,
    /// Aspect of the target.
    pub aspect: Option<Aspect>,
    /// Behavioral outcome.
    pub outcome: Option<Outcome>,
    /// Contexts in the group.
    pub n: usize,
    /// Contexts without any cue match.
    pub cueless: usize,
    /// `cueless / n`.
    pub cueless_fraction: f64,
    /// Contexts with at least one match per category.
    pub categories: BTreeMap<CueCategory, usize>,
}

type GroupKey = (Option<ContextType>, Option<Aspect>, Option<Outcome>);

/// Counts cue categories and cue-less contexts, grouped by
/// (context type, aspect, outcome), by (context type, outcome) and by
/// context type alone.
pub fn cue_statistics(contexts: &[CueContext], patterns: &[CuePattern]) -> Vec<CueStatsRow> {
    let mut groups: BTreeMap<GroupKey, CueStatsRow> = BTreeMap::new();
    for ctx in contexts {
        let cats: BTreeSet<CueCategory> = ctx.matches(patterns).iter().map(|m| m.category).collect();
        let keys: BTreeSet<GroupKey> = [
            (ctx.context_type, ctx.aspect, ctx.outcome),
            (ctx.context_type, None, ctx.outcome),
            (ctx.context_type, None, None),
        ]
        .into_iter()
        .collect();
        for key in keys {
            let row = groups.entry(key).or_insert_with(|| CueStatsRow {
                context_type: key.0,
                aspect: key.1,
                outcome: key.2,
                n: 0,
                cueless: 0,
                cueless_fraction: 0.0,
                categories: BTreeMap::new(),
            });
            row.n += 1;
            if cats.is_empty() {
                row.cueless += 1;
            }
            for &c in &cats {
                *row.categories.entry(c).or_insert(0) += 1;
            }
        }
    }
    groups
        .into_values()
        .map(|mut r| {
            r.cueless_fraction = r.cueless as f64 / r.n as f64;
            r
        })
        .collect()
}
