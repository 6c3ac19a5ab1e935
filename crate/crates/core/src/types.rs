// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small domain types shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Grammatical aspect of a Russian verb form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aspect {
    /// Perfective.
    #[serde(rename = "perf")]
    Perfective,
    /// Imperfective.
    #[serde(rename = "imp")]
    Imperfective,
}

impl Aspect {
    /// The opposite aspect.
    pub fn complement(self) -> Aspect {
        match self {
            Aspect::Perfective => Aspect::Imperfective,
            Aspect::Imperfective => Aspect::Perfective,
        }
    }

    /// Short tag used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Perfective => "perf",
            Aspect::Imperfective => "imp",
        }
    }

    /// Both values, perfective first.
    pub const ALL: [Aspect; 2] = [Aspect::Perfective, Aspect::Imperfective];
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "perf" | "perfective" => Ok(Aspect::Perfective),
            "imp" | "imperf" | "imperfective" => Ok(Aspect::Imperfective),
            other => Err(format!("unknown aspect value {other:?}")),
        }
    }
}

/// Grammatical number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Number {
    /// Singular.
    Singular,
    /// Plural.
    Plural,
}

impl Number {
    /// Short tag used in tables.
    pub fn as_str(self) -> &'static str {
        match self {
            Number::Singular => "sing",
            Number::Plural => "plur",
        }
    }

    /// The other value.
    pub fn complement(self) -> Number {
        match self {
            Number::Singular => Number::Plural,
            Number::Plural => Number::Singular,
        }
    }

    /// Both values, singular first.
    pub const ALL: [Number; 2] = [Number::Singular, Number::Plural];
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Number {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "sing" | "sg" | "singular" => Ok(Number::Singular),
            "plur" | "pl" | "plural" => Ok(Number::Plural),
            other => Err(format!("unknown number value {other:?}")),
        }
    }
}

/// Whether both aspect forms fit the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextType {
    /// Both aspects are acceptable.
    Alternative,
    /// Only the expected aspect is acceptable.
    NonAlternative,
}

impl ContextType {
    /// Table tag.
    pub fn as_str(self) -> &'static str {
        match self {
            ContextType::Alternative => "alternative",
            ContextType::NonAlternative => "non_alternative",
        }
    }

    /// Both values, non-alternative first.
    pub const ALL: [ContextType; 2] = [ContextType::NonAlternative, ContextType::Alternative];
}

impl fmt::Display for ContextType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Boundedness label of a verb occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundedness {
    /// Bounded (telic, completed, resultative).
    Bounded,
    /// Unbounded (ongoing, iterative, durative).
    Unbounded,
}

impl Boundedness {
    /// Table tag.
    pub fn as_str(self) -> &'static str {
        match self {
            Boundedness::Bounded => "bounded",
            Boundedness::Unbounded => "unbounded",
        }
    }

    /// Both values, bounded first.
    pub const ALL: [Boundedness; 2] = [Boundedness::Bounded, Boundedness::Unbounded];
}

impl fmt::Display for Boundedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Boundedness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "bounded" | "positive" | "+" => Ok(Boundedness::Bounded),
            "unbounded" | "negative" | "-" => Ok(Boundedness::Unbounded),
            other => Err(format!("unknown boundedness value {other:?}")),
        }
    }
}

/// Half-open range `[start, end)` of Unicode scalar values in a text.
///
/// Serialized as a two-element JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct CharSpan {
    /// First character index.
    pub start: usize,
    /// One past the last character index.
    pub end: usize,
}

impl From<(usize, usize)> for CharSpan {
    fn from((start, end): (usize, usize)) -> Self {
        CharSpan { start, end }
    }
}

impl From<CharSpan> for (usize, usize) {
    fn from(s: CharSpan) -> Self {
        (s.start, s.end)
    }
}

impl CharSpan {
    /// Creates a span.
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    /// Number of characters covered.
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    /// True for `start >= end`.
    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    /// True when the two spans share at least one character.
    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Byte range of this span in `text`, or `None` if it runs past the end.
    pub fn byte_range(&self, text: &str) -> Option<std::ops::Range<usize>> {
        if self.start > self.end {
            return None;
        }
        let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start)?;
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1)?
        };
        Some(start..end)
    }

    /// The covered substring.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        self.byte_range(text).map(|r| &text[r])
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// Replaces the characters under `span` with `replacement`, returning the new
/// text and the span the replacement occupies in it.
pub fn replace_span(text: &str, span: CharSpan, replacement: &str) -> Option<(String, CharSpan)> {
    let range = span.byte_range(text)?;
    let mut out = String::with_capacity(text.len() + replacement.len());
    out.push_str(&text[..range.start]);
    out.push_str(replacement);
    out.push_str(&text[range.end..]);
    let new_span = CharSpan::new(span.start, span.start + replacement.chars().count());
    Some((out, new_span))
}
