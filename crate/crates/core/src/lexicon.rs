// SPDX-License-Identifier: MIT OR Apache-2.0

//! Aspect bank, vocabulary feature map and the cue-pattern lexicon.
//!
//! All three are immutable after loading and can be shared freely between
//! workers. Lemmas are normalized with [`normalize_lemma`] (NFC, lowercase);
//! `ё` and `е` stay distinct.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::types::{Aspect, Number};

/// Default gap allowed between consecutive slots of a multiword cue.
pub const DEFAULT_MAX_INTERVENERS: usize = 2;

/// NFC + lowercase. Surrounding whitespace is trimmed.
pub fn normalize_lemma(s: &str) -> String {
    s.trim().nfc().collect::<String>().to_lowercase()
}

/// One row of the aspect bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectPair {
    /// Imperfective lemma.
    pub imperfective: String,
    /// Perfective lemma.
    pub perfective: String,
    /// Both aspects share one lemma (e.g. "обещать").
    pub biaspectual: bool,
}

impl AspectPair {
    /// Builds a pair, normalizing both lemmas.
    pub fn new(imperfective: &str, perfective: &str, biaspectual: bool) -> Self {
        AspectPair {
            imperfective: normalize_lemma(imperfective),
            perfective: normalize_lemma(perfective),
            biaspectual,
        }
    }
}

/// Bank of imperfective/perfective lemma pairs with O(1) lookup by either side.
#[derive(Debug, Clone, Default)]
pub struct AspectBank {
    pairs: Vec<AspectPair>,
    // lemma -> indices into `pairs`
    index: HashMap<String, Vec<usize>>,
}

impl AspectBank {
    /// Builds a bank from pairs, deduplicating identical rows.
    pub fn from_pairs(pairs: impl IntoIterator<Item = AspectPair>) -> Result<Self> {
        let mut bank = AspectBank::default();
        for (i, pair) in pairs.into_iter().enumerate() {
            bank.insert(pair)
                .map_err(|rule| Error::parse("<memory>", i + 1, rule))?;
        }
        Ok(bank)
    }

    fn insert(&mut self, pair: AspectPair) -> std::result::Result<(), String> {
        let AspectPair {
            imperfective,
            perfective,
            biaspectual,
        } = pair;
        let imperfective = normalize_lemma(&imperfective);
        let perfective = normalize_lemma(&perfective);
        if imperfective.is_empty() || perfective.is_empty() {
            return Err("empty lemma".into());
        }
        if imperfective == perfective && !biaspectual {
            return Err(format!(
                "lemma {imperfective:?} on both sides of a pair that is not flagged biaspectual"
            ));
        }
        if let Some(existing) = self.find(&imperfective, &perfective) {
            // duplicate row; a biaspectual flag on either copy wins
            self.pairs[existing].biaspectual |= biaspectual;
            return Ok(());
        }
        let idx = self.pairs.len();
        self.index.entry(imperfective.clone()).or_default().push(idx);
        if perfective != imperfective {
            self.index.entry(perfective.clone()).or_default().push(idx);
        }
        self.pairs.push(AspectPair {
            imperfective,
            perfective,
            biaspectual,
        });
        Ok(())
    }

    fn find(&self, imperfective: &str, perfective: &str) -> Option<usize> {
        self.index
            .get(imperfective)?
            .iter()
            .copied()
            .find(|&i| self.pairs[i].imperfective == imperfective && self.pairs[i].perfective == perfective)
    }

    /// Parses the TSV format `imperfective<TAB>perfective[<TAB>biaspectual_flag]`.
    ///
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read(reader: impl BufRead, file: &Path) -> Result<Self> {
        let mut bank = AspectBank::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(file, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(Error::parse(
                    file,
                    line_no,
                    format!("expected 2 or 3 tab-separated columns, found {}", cols.len()),
                ));
            }
            let biaspectual = match cols.get(2).map(|s| s.trim().to_lowercase()) {
                None => false,
                Some(flag) => match flag.as_str() {
                    "" | "0" | "false" | "no" => false,
                    "1" | "true" | "yes" | "b" | "biaspectual" => true,
                    other => {
                        return Err(Error::parse(
                            file,
                            line_no,
                            format!("unrecognized biaspectual flag {other:?}"),
                        ))
                    }
                },
            };
            bank.insert(AspectPair {
                imperfective: cols[0].to_string(),
                perfective: cols[1].to_string(),
                biaspectual,
            })
            .map_err(|rule| Error::parse(file, line_no, rule))?;
        }
        Ok(bank)
    }

    /// Loads a bank file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), path)
    }

    /// Number of unique pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// True for an empty bank.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// All pairs in load order.
    pub fn pairs(&self) -> &[AspectPair] {
        &self.pairs
    }

    /// The first partner of `lemma`, in load order.
    pub fn pair(&self, lemma: &str) -> Option<&str> {
        self.partners(lemma).into_iter().next()
    }

    /// Every lemma paired with `lemma`.
    pub fn partners(&self, lemma: &str) -> Vec<&str> {
        let lemma = normalize_lemma(lemma);
        self.index
            .get(&lemma)
            .map(|idxs| {
                idxs.iter()
                    .map(|&i| {
                        let p = &self.pairs[i];
                        if p.imperfective == lemma {
                            p.perfective.as_str()
                        } else {
                            p.imperfective.as_str()
                        }
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Aspect of `lemma` in the bank, `None` when unknown or biaspectual.
    pub fn aspect_of(&self, lemma: &str) -> Option<Aspect> {
        if self.is_biaspectual(lemma) {
            return None;
        }
        let lemma = normalize_lemma(lemma);
        let idxs = self.index.get(&lemma)?;
        let p = &self.pairs[*idxs.first()?];
        Some(if p.imperfective == lemma {
            Aspect::Imperfective
        } else {
            Aspect::Perfective
        })
    }

    /// True if any pair containing `lemma` is flagged biaspectual.
    pub fn is_biaspectual(&self, lemma: &str) -> bool {
        let lemma = normalize_lemma(lemma);
        self.index
            .get(&lemma)
            .is_some_and(|idxs| idxs.iter().any(|&i| self.pairs[i].biaspectual))
    }

    /// True if the two lemmas form a pair in either order.
    pub fn contains_pair(&self, a: &str, b: &str) -> bool {
        let (a, b) = (normalize_lemma(a), normalize_lemma(b));
        self.find(&a, &b).is_some() || self.find(&b, &a).is_some()
    }
}

/// Vocabulary-level aspect and number annotations of complete verb forms.
#[derive(Debug, Clone, Default)]
pub struct VocabFeatureMap {
    aspect: HashMap<String, Aspect>,
    number: HashMap<String, Number>,
}

impl VocabFeatureMap {
    /// Parses `token<TAB>feature_kind(aspect|number)<TAB>value` rows.
    pub fn read(reader: impl BufRead, file: &Path) -> Result<Self> {
        let mut map = VocabFeatureMap::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(file, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (line.starts_with('#') && !line.starts_with("##")) {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    file,
                    line_no,
                    format!("expected 3 tab-separated columns, found {}", cols.len()),
                ));
            }
            let token = cols[0];
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::parse(
                    file,
                    line_no,
                    "token must be non-empty without whitespace",
                ));
            }
            if token.starts_with("##") {
                return Err(Error::parse(
                    file,
                    line_no,
                    "continuation pieces are not complete verb forms",
                ));
            }
            match cols[1].trim() {
                "aspect" => {
                    let value: Aspect = cols[2].parse().map_err(|e: String| Error::parse(file, line_no, e))?;
                    if let Some(prev) = map.aspect.insert(token.to_string(), value) {
                        if prev != value {
                            return Err(Error::parse(
                                file,
                                line_no,
                                format!("conflicting aspect tags for token {token:?}"),
                            ));
                        }
                    }
                }
                "number" => {
                    let value: Number = cols[2].parse().map_err(|e: String| Error::parse(file, line_no, e))?;
                    if let Some(prev) = map.number.insert(token.to_string(), value) {
                        if prev != value {
                            return Err(Error::parse(
                                file,
                                line_no,
                                format!("conflicting number tags for token {token:?}"),
                            ));
                        }
                    }
                }
                other => {
                    return Err(Error::parse(
                        file,
                        line_no,
                        format!("feature kind must be aspect or number, found {other:?}"),
                    ))
                }
            }
        }
        Ok(map)
    }

    /// Loads a feature map file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file), path)
    }

    /// Builds a map directly.
    pub fn from_entries(
        aspect: impl IntoIterator<Item = (String, Aspect)>,
        number: impl IntoIterator<Item = (String, Number)>,
    ) -> Self {
        VocabFeatureMap {
            aspect: aspect.into_iter().collect(),
            number: number.into_iter().collect(),
        }
    }

    /// Aspect tag of a vocabulary token.
    pub fn aspect(&self, token: &str) -> Option<Aspect> {
        self.aspect.get(token).copied()
    }

    /// Number tag of a vocabulary token.
    pub fn number(&self, token: &str) -> Option<Number> {
        self.number.get(token).copied()
    }

    /// Count of aspect-tagged tokens.
    pub fn aspect_len(&self) -> usize {
        self.aspect.len()
    }

    /// Count of number-tagged tokens.
    pub fn number_len(&self) -> usize {
        self.number.len()
    }
}

/// Semantic cue category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CueCategory {
    /// Sudden or completed result ("вдруг", "наконец").
    #[serde(alias = "Result")]
    Resultative,
    /// Time-span argument ("за час").
    Duration,
    /// Ability predicate ("смочь").
    Capability,
    /// Forget/agree/manage predicates ("забыть").
    Forget,
    /// Phase predicates ("начать").
    Inception,
    /// Repetition adverbials ("всегда", "каждый день").
    Iterative,
    /// Liking/habit predicates ("любить").
    Like,
    /// Modal predicates that allow either aspect ("нельзя").
    Forbid,
}

impl CueCategory {
    /// All categories in canonical order.
    pub const ALL: [CueCategory; 8] = [
        CueCategory::Resultative,
        CueCategory::Duration,
        CueCategory::Capability,
        CueCategory::Forget,
        CueCategory::Inception,
        CueCategory::Iterative,
        CueCategory::Like,
        CueCategory::Forbid,
    ];

    /// Polarity the category carries when a pattern does not state one.
    pub fn default_polarity(self) -> CuePolarity {
        match self {
            CueCategory::Resultative | CueCategory::Duration | CueCategory::Capability | CueCategory::Forget => {
                CuePolarity::Bounded
            }
            CueCategory::Inception | CueCategory::Iterative | CueCategory::Like => CuePolarity::Unbounded,
            CueCategory::Forbid => CuePolarity::Ambiguous,
        }
    }

    /// Name used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            CueCategory::Resultative => "Resultative",
            CueCategory::Duration => "Duration",
            CueCategory::Capability => "Capability",
            CueCategory::Forget => "Forget",
            CueCategory::Inception => "Inception",
            CueCategory::Iterative => "Iterative",
            CueCategory::Like => "Like",
            CueCategory::Forbid => "Forbid",
        }
    }
}

impl fmt::Display for CueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Boundedness signalled by a cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CuePolarity {
    /// Action reaches a limit.
    Bounded,
    /// Action without a limit.
    Unbounded,
    /// Either aspect possible; exclusion only.
    Ambiguous,
}

impl CuePolarity {
    /// Name used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            CuePolarity::Bounded => "bounded",
            CuePolarity::Unbounded => "unbounded",
            CuePolarity::Ambiguous => "ambiguous",
        }
    }
}

/// A lexical cue: one or more slots that must occur in order.
///
/// Each slot lists alternative lemmas; an alternative may itself span several
/// words ("как правило"), which then have to be adjacent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuePattern {
    /// Semantic category.
    pub category: CueCategory,
    /// Alternatives per slot, each alternative a sequence of lemmas.
    pub slots: Vec<Vec<Vec<String>>>,
    /// Maximum number of tokens between consecutive slots.
    pub max_interveners: usize,
    /// Polarity of the construction.
    pub polarity: CuePolarity,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCuePattern {
    category: CueCategory,
    #[serde(default)]
    polarity: Option<CuePolarity>,
    slots: Vec<Vec<String>>,
    #[serde(default)]
    max_interveners: Option<usize>,
}

impl CuePattern {
    /// Builds and validates a pattern. Lemmas are normalized.
    pub fn new(
        category: CueCategory,
        polarity: CuePolarity,
        slots: Vec<Vec<String>>,
        max_interveners: usize,
    ) -> std::result::Result<Self, String> {
        if slots.is_empty() {
            return Err("pattern needs at least one slot".into());
        }
        let mut out = Vec::with_capacity(slots.len());
        for (i, slot) in slots.into_iter().enumerate() {
            if slot.is_empty() {
                return Err(format!("slot {i} is empty"));
            }
            let mut alts = Vec::with_capacity(slot.len());
            for lemma in slot {
                let words: Vec<String> = lemma.split_whitespace().map(normalize_lemma).collect();
                if words.is_empty() {
                    return Err(format!("slot {i} contains an empty lemma"));
                }
                alts.push(words);
            }
            out.push(alts);
        }
        Ok(CuePattern {
            category,
            slots: out,
            max_interveners,
            polarity,
        })
    }

    /// Single-slot pattern with the category's default polarity.
    pub fn single(category: CueCategory, lemmas: &[&str]) -> Self {
        Self::new(
            category,
            category.default_polarity(),
            vec![lemmas.iter().map(|s| s.to_string()).collect()],
            DEFAULT_MAX_INTERVENERS,
        )
        .expect("non-empty literal pattern")
    }

    /// Parses the cue lexicon JSON array.
    pub fn parse_lexicon(json: &str, file: &Path) -> Result<Vec<CuePattern>> {
        if json.trim().is_empty() {
            return Ok(Vec::new());
        }
        let raw: Vec<RawCuePattern> = serde_json::from_str(json)
            .map_err(|e| Error::parse(file, e.line(), format!("invalid cue lexicon JSON: {e}")))?;
        raw.into_iter()
            .enumerate()
            .map(|(i, r)| {
                let polarity = r.polarity.unwrap_or_else(|| r.category.default_polarity());
                CuePattern::new(
                    r.category,
                    polarity,
                    r.slots,
                    r.max_interveners.unwrap_or(DEFAULT_MAX_INTERVENERS),
                )
                .map_err(|rule| Error::parse(file, 1, format!("pattern #{i}: {rule}")))
            })
            .collect()
    }

    /// Loads a cue lexicon file. An empty file yields no patterns.
    pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<CuePattern>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_lexicon(&text, path)
    }

    /// Serializes patterns back to the lexicon JSON format.
    pub fn to_lexicon_json(patterns: &[CuePattern]) -> String {
        let raw: Vec<RawCuePattern> = patterns
            .iter()
            .map(|p| RawCuePattern {
                category: p.category,
                polarity: Some(p.polarity),
                slots: p
                    .slots
                    .iter()
                    .map(|s| s.iter().map(|alt| alt.join(" ")).collect())
                    .collect(),
                max_interveners: Some(p.max_interveners),
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("cue patterns serialize")
    }

    // Lengths of every alternative of `slot` that matches at `pos`.
    fn slot_matches(&self, slot: usize, tokens: &[CueToken], pos: usize) -> Vec<usize> {
        let mut lens: Vec<usize> = self.slots[slot]
            .iter()
            .filter(|alt| pos + alt.len() <= tokens.len() && alt.iter().zip(&tokens[pos..]).all(|(l, t)| *l == t.lemma))
            .map(Vec::len)
            .collect();
        lens.sort_unstable();
        lens.dedup();
        lens
    }

    fn extend(&self, slot: usize, tokens: &[CueToken], pos: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for len in self.slot_matches(slot, tokens, pos) {
            let mark = acc.len();
            acc.extend(pos..pos + len);
            let next = pos + len;
            if slot + 1 == self.slots.len() {
                out.push(acc.clone());
            } else {
                let last = (next + self.max_interveners).min(tokens.len().saturating_sub(1));
                for start in next..=last {
                    if start < tokens.len() {
                        self.extend(slot + 1, tokens, start, acc, out);
                    }
                }
            }
            acc.truncate(mark);
        }
    }
}

/// A token presented to [`match_cues`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueToken {
    /// Surface form as written.
    pub surface: String,
    /// Normalized lemma.
    pub lemma: String,
}

impl CueToken {
    /// Creates a token, normalizing the lemma.
    pub fn new(surface: impl Into<String>, lemma: &str) -> Self {
        CueToken {
            surface: surface.into(),
            lemma: normalize_lemma(lemma),
        }
    }
}

/// One occurrence of a cue pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueMatch {
    /// Category of the matched pattern.
    pub category: CueCategory,
    /// Polarity of the matched pattern.
    pub polarity: CuePolarity,
    /// Index of the pattern in the list passed to [`match_cues`].
    pub pattern: usize,
    /// Matched token indices in increasing order.
    pub token_indices: Vec<usize>,
}

/// Finds every occurrence of every pattern in `tokens`.
///
/// Slots must appear in order with at most `max_interveners` tokens between
/// consecutive slots. Overlapping matches are all reported. The result is
/// ordered by first matched token, then pattern index.
pub fn match_cues(tokens: &[CueToken], patterns: &[CuePattern]) -> Vec<CueMatch> {
    let mut matches = Vec::new();
    for (pi, pattern) in patterns.iter().enumerate() {
        let mut found = Vec::new();
        let mut acc = Vec::new();
        for start in 0..tokens.len() {
            pattern.extend(0, tokens, start, &mut acc, &mut found);
        }
        let mut seen = HashSet::new();
        for indices in found {
            if seen.insert(indices.clone()) {
                matches.push(CueMatch {
                    category: pattern.category,
                    polarity: pattern.polarity,
                    pattern: pi,
                    token_indices: indices,
                });
            }
        }
    }
    matches.sort_by(|a, b| {
        (a.token_indices[0], a.pattern, &a.token_indices).cmp(&(b.token_indices[0], b.pattern, &b.token_indices))
    });
    matches
}

/// The three lexical resources loaded together.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    /// Aspect pairs.
    pub bank: AspectBank,
    /// Token-level features.
    pub vocab: VocabFeatureMap,
    /// Cue patterns.
    pub cues: Vec<CuePattern>,
}

/// Loads bank, vocabulary map and cue lexicon.
pub fn load_lexicons(
    bank_path: impl AsRef<Path>,
    vocab_map_path: impl AsRef<Path>,
    cue_path: impl AsRef<Path>,
) -> Result<Lexicons> {
    Ok(Lexicons {
        bank: AspectBank::load(bank_path)?,
        vocab: VocabFeatureMap::load(vocab_map_path)?,
        cues: CuePattern::load_lexicon(cue_path)?,
    })
}

/// The Russian cue lexicon shipped with the crate.
pub fn default_russian_cues() -> Vec<CuePattern> {
    CuePattern::parse_lexicon(include_str!("../data/cues_ru.json"), Path::new("data/cues_ru.json"))
        .expect("bundled cue lexicon is valid")
}
