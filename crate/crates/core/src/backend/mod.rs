// SPDX-License-Identifier: MIT OR Apache-2.0

//! Masked-LM session contract.
//!
//! Every probing engine talks to a model only through [`MaskedLm`]. Two
//! implementations ship with the crate: [`ToyMlm`], a small deterministic
//! transformer used by tests and fixtures, and [`BridgeSession`], an HTTP
//! client for the wire protocol described in [`wire`].
//!
//! Layer indexing: 0 is the embedding output, `1..=n_layers` are the blocks.
//! The distribution at layer `l` is the model's final MLM head (including its
//! normalization) applied to the layer-`l` hidden state at the mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CharSpan;

mod bridge;
pub mod conformance;
mod toy;
pub mod wire;

pub use bridge::BridgeSession;
pub use toy::{ToyMlm, ToyTokenizer};

/// Vocabulary index.
pub type TokenId = u32;

/// Readout strategy for intermediate layers, surfaced in report manifests.
pub const LAYER_READOUT: &str = "head-on-layer: final MLM head applied to each layer's hidden state";

/// Error codes shared by every backend and carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendErrorCode {
    /// Tokenized input exceeds `max_len`.
    InputTooLong,
    /// Requested layer is outside `0..=n_layers`.
    LayerOutOfRange,
    /// Position is outside the token sequence.
    PositionOutOfRange,
    /// Vector length differs from `hidden_size`.
    DimensionMismatch,
    /// The session cannot sample with dropout.
    DropoutUnsupported,
    /// A gold subtoken probability could not be obtained.
    SubtokenProbUnavailable,
    /// Input does not hold exactly one mask token at the stated position.
    MaskMismatch,
    /// Target span does not address the text.
    InvalidSpan,
    /// Target tokenizes to nothing.
    EmptyTarget,
    /// Token id outside the vocabulary.
    TokenOutOfRange,
    /// Request body could not be understood.
    BadRequest,
    /// Any code this client does not know.
    Unknown,
}

impl BackendErrorCode {
    /// Wire spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            BackendErrorCode::InputTooLong => "input_too_long",
            BackendErrorCode::LayerOutOfRange => "layer_out_of_range",
            BackendErrorCode::PositionOutOfRange => "position_out_of_range",
            BackendErrorCode::DimensionMismatch => "dimension_mismatch",
            BackendErrorCode::DropoutUnsupported => "dropout_unsupported",
            BackendErrorCode::SubtokenProbUnavailable => "subtoken_prob_unavailable",
            BackendErrorCode::MaskMismatch => "mask_mismatch",
            BackendErrorCode::InvalidSpan => "invalid_span",
            BackendErrorCode::EmptyTarget => "empty_target",
            BackendErrorCode::TokenOutOfRange => "token_out_of_range",
            BackendErrorCode::BadRequest => "bad_request",
            BackendErrorCode::Unknown => "unknown",
        }
    }
}

impl fmt::Display for BackendErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendErrorCode {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "input_too_long" => BackendErrorCode::InputTooLong,
            "layer_out_of_range" => BackendErrorCode::LayerOutOfRange,
            "position_out_of_range" => BackendErrorCode::PositionOutOfRange,
            "dimension_mismatch" => BackendErrorCode::DimensionMismatch,
            "dropout_unsupported" => BackendErrorCode::DropoutUnsupported,
            "subtoken_prob_unavailable" => BackendErrorCode::SubtokenProbUnavailable,
            "mask_mismatch" => BackendErrorCode::MaskMismatch,
            "invalid_span" => BackendErrorCode::InvalidSpan,
            "empty_target" => BackendErrorCode::EmptyTarget,
            "token_out_of_range" => BackendErrorCode::TokenOutOfRange,
            "bad_request" => BackendErrorCode::BadRequest,
            _ => BackendErrorCode::Unknown,
        })
    }
}

/// Static description of a backend session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendMeta {
    /// Model identifier.
    pub model_id: String,
    /// Number of transformer blocks.
    pub n_layers: usize,
    /// Hidden size `d`.
    pub hidden_size: usize,
    /// Vocabulary size.
    pub vocab_size: usize,
    /// Id of the mask token.
    pub mask_token_id: TokenId,
    /// Maximum tokenized length.
    pub max_len: usize,
    /// Whether [`MaskedLm::dropout_samples`] is available.
    pub supports_dropout: bool,
    /// Whether requests may be issued concurrently.
    pub concurrent_safe: bool,
}

impl BackendMeta {
    /// Checks `n_layers >= 1` and `vocab_size > mask_token_id`.
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidInput("backend reports zero layers".into()));
        }
        if self.vocab_size as u64 <= self.mask_token_id as u64 {
            return Err(Error::InvalidInput("mask token id outside the vocabulary".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::InvalidInput("backend reports zero hidden size".into()));
        }
        Ok(())
    }

    /// All layer indices `0..=n_layers`.
    pub fn all_layers(&self) -> Vec<usize> {
        (0..=self.n_layers).collect()
    }
}

/// Text tokenized with the target replaced by a single mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedTarget {
    /// Full sequence, target replaced by one mask token.
    pub token_ids: Vec<TokenId>,
    /// The target's own subtokens `V_1..V_n`.
    pub target_subtokens: Vec<TokenId>,
    /// Index of the mask in `token_ids`.
    pub mask_position: usize,
}

/// One vocabulary entry of a mask distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    /// Token id.
    pub id: TokenId,
    /// Softmax probability.
    pub prob: f64,
    /// Vocabulary string of the token.
    pub token: String,
}

/// Top-n of the distribution at the mask for one layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskDistribution {
    /// Layer read out.
    pub layer: usize,
    /// Entries sorted by descending probability.
    pub entries: Vec<MaskEntry>,
    /// Exact probabilities for explicitly queried ids, independent of truncation.
    pub queried: Vec<(TokenId, f64)>,
}

impl MaskDistribution {
    /// Probability of `id`: the queried value if present, else the truncated entry.
    pub fn prob(&self, id: TokenId) -> Option<f64> {
        self.queried
            .iter()
            .find(|(q, _)| *q == id)
            .map(|(_, p)| *p)
            .or_else(|| self.entries.iter().find(|e| e.id == id).map(|e| e.prob))
    }

    /// Checks the ordering and mass invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut total = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.prob > 0.0 && e.prob <= 1.0) {
                return Err(format!("entry {i} probability {} outside (0,1]", e.prob));
            }
            if i > 0 && e.prob > self.entries[i - 1].prob {
                return Err(format!("entry {i} breaks descending order"));
            }
            total += e.prob;
        }
        if total > 1.0 + 1e-6 {
            return Err(format!("total mass {total} exceeds 1"));
        }
        Ok(())
    }
}

/// Arguments of [`MaskedLm::mask_distributions`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskRequest {
    /// Sequence with exactly one mask.
    pub token_ids: Vec<TokenId>,
    /// Index of that mask.
    pub mask_position: usize,
    /// Layers to read out.
    pub layers: Vec<usize>,
    /// Truncation of each returned distribution.
    pub top_n: usize,
    /// Gold tokens inserted immediately before the mask.
    #[serde(default)]
    pub gold_prefix: Vec<TokenId>,
    /// Ids whose exact probability must be returned.
    #[serde(default)]
    pub query_ids: Vec<TokenId>,
}

/// Arguments of [`MaskedLm::forward_substituted`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubstituteRequest {
    /// Sequence with exactly one mask; the readout happens at the mask.
    pub token_ids: Vec<TokenId>,
    /// Layer whose output is replaced.
    pub layer: usize,
    /// Position whose layer output is replaced.
    pub position: usize,
    /// Replacement hidden vector of length `hidden_size`.
    pub vector: Vec<f32>,
    /// Truncation of the returned distribution.
    pub top_n: usize,
    /// Ids whose exact probability must be returned.
    #[serde(default)]
    pub query_ids: Vec<TokenId>,
}

/// A masked language model session.
///
/// Implementations must be deterministic: the same arguments give bitwise
/// identical results for the lifetime of the session.
pub trait MaskedLm {
    /// Static session description.
    fn meta(&self) -> Result<BackendMeta>;

    /// Tokenizes `text` with the characters under `target_span` replaced by one mask.
    fn encode(&self, text: &str, target_span: CharSpan) -> Result<TokenizedTarget>;

    /// Per-layer distributions at the mask.
    fn mask_distributions(&self, request: &MaskRequest) -> Result<Vec<MaskDistribution>>;

    /// Hidden vector at `position` after `layer`.
    fn hidden_state(&self, token_ids: &[TokenId], position: usize, layer: usize) -> Result<Vec<f32>>;

    /// Final-layer distribution at the mask after replacing one hidden vector.
    fn forward_substituted(&self, request: &SubstituteRequest) -> Result<MaskDistribution>;

    /// `n_samples` stochastic class-score vectors with dropout active.
    fn dropout_samples(
        &self,
        token_ids: &[TokenId],
        mask_position: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>>;
}

impl<T: MaskedLm + ?Sized> MaskedLm for &T {
    fn meta(&self) -> Result<BackendMeta> {
        (**self).meta()
    }
    fn encode(&self, text: &str, target_span: CharSpan) -> Result<TokenizedTarget> {
        (**self).encode(text, target_span)
    }
    fn mask_distributions(&self, request: &MaskRequest) -> Result<Vec<MaskDistribution>> {
        (**self).mask_distributions(request)
    }
    fn hidden_state(&self, token_ids: &[TokenId], position: usize, layer: usize) -> Result<Vec<f32>> {
        (**self).hidden_state(token_ids, position, layer)
    }
    fn forward_substituted(&self, request: &SubstituteRequest) -> Result<MaskDistribution> {
        (**self).forward_substituted(request)
    }
    fn dropout_samples(
        &self,
        token_ids: &[TokenId],
        mask_position: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        (**self).dropout_samples(token_ids, mask_position, n_samples, seed)
    }
}

impl<T: MaskedLm + ?Sized> MaskedLm for Box<T> {
    fn meta(&self) -> Result<BackendMeta> {
        (**self).meta()
    }
    fn encode(&self, text: &str, target_span: CharSpan) -> Result<TokenizedTarget> {
        (**self).encode(text, target_span)
    }
    fn mask_distributions(&self, request: &MaskRequest) -> Result<Vec<MaskDistribution>> {
        (**self).mask_distributions(request)
    }
    fn hidden_state(&self, token_ids: &[TokenId], position: usize, layer: usize) -> Result<Vec<f32>> {
        (**self).hidden_state(token_ids, position, layer)
    }
    fn forward_substituted(&self, request: &SubstituteRequest) -> Result<MaskDistribution> {
        (**self).forward_substituted(request)
    }
    fn dropout_samples(
        &self,
        token_ids: &[TokenId],
        mask_position: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        (**self).dropout_samples(token_ids, mask_position, n_samples, seed)
    }
}

/// Inserts `prefix` right before the mask; returns the new sequence and mask index.
pub fn insert_gold_prefix(token_ids: &[TokenId], mask_position: usize, prefix: &[TokenId]) -> (Vec<TokenId>, usize) {
    let mut out = Vec::with_capacity(token_ids.len() + prefix.len());
    out.extend_from_slice(&token_ids[..mask_position]);
    out.extend_from_slice(prefix);
    out.extend_from_slice(&token_ids[mask_position..]);
    (out, mask_position + prefix.len())
}

/// Checks that `token_ids` has exactly one mask, at `mask_position`.
pub fn check_single_mask(token_ids: &[TokenId], mask_position: usize, mask_id: TokenId) -> Result<()> {
    let count = token_ids.iter().filter(|&&t| t == mask_id).count();
    if count != 1 || token_ids.get(mask_position) != Some(&mask_id) {
        return Err(Error::backend_detail(
            BackendErrorCode::MaskMismatch,
            format!("expected one mask at {mask_position}, found {count}"),
        ));
    }
    Ok(())
}

/// Position of the single mask token.
pub fn find_single_mask(token_ids: &[TokenId], mask_id: TokenId) -> Result<usize> {
    let mut positions = token_ids.iter().enumerate().filter(|(_, &t)| t == mask_id);
    match (positions.next(), positions.next()) {
        (Some((p, _)), None) => Ok(p),
        _ => Err(Error::backend_detail(
            BackendErrorCode::MaskMismatch,
            "expected exactly one mask token",
        )),
    }
}

/// Sorts `(id, prob)` pairs by descending probability (ties by id) and keeps `top_n`.
pub fn top_entries(probs: &[f64], top_n: usize, token: impl Fn(TokenId) -> String) -> Vec<MaskEntry> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(top_n)
        .filter(|&i| probs[i] > 0.0)
        .map(|i| MaskEntry {
            id: i as TokenId,
            prob: probs[i],
            token: token(i as TokenId),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_prefix_shifts_mask() {
        let (ids, pos) = insert_gold_prefix(&[2, 7, 4, 5, 3], 2, &[48, 52]);
        assert_eq!(ids, vec![2, 7, 48, 52, 4, 5, 3]);
        assert_eq!(pos, 4);
        let (ids, pos) = insert_gold_prefix(&[2, 4, 3], 1, &[]);
        assert_eq!((ids, pos), (vec![2, 4, 3], 1));
    }

    #[test]
    fn single_mask_check() {
        assert!(check_single_mask(&[2, 4, 3], 1, 4).is_ok());
        assert!(check_single_mask(&[2, 4, 4], 1, 4).is_err());
        assert!(check_single_mask(&[2, 4, 3], 0, 4).is_err());
        assert_eq!(find_single_mask(&[2, 4, 3], 4).unwrap(), 1);
        assert!(find_single_mask(&[2, 3], 4).is_err());
    }

    #[test]
    fn top_entries_sorted_and_truncated() {
        let e = top_entries(&[0.1, 0.5, 0.1, 0.3], 3, |i| format!("t{i}"));
        let ids: Vec<TokenId> = e.iter().map(|x| x.id).collect();
        assert_eq!(ids, vec![1, 3, 0]);
        assert_eq!(e[0].token, "t1");
    }

    #[test]
    fn distribution_validation() {
        let mut d = MaskDistribution {
            layer: 0,
            entries: vec![
                MaskEntry {
                    id: 1,
                    prob: 0.6,
                    token: "a".into(),
                },
                MaskEntry {
                    id: 2,
                    prob: 0.3,
                    token: "b".into(),
                },
            ],
            queried: vec![(9, 0.01)],
        };
        assert!(d.validate().is_ok());
        assert_eq!(d.prob(9), Some(0.01));
        assert_eq!(d.prob(2), Some(0.3));
        assert_eq!(d.prob(3), None);
        d.entries[1].prob = 0.7;
        assert!(d.validate().is_err());
    }

    #[test]
    fn error_codes_round_trip() {
        for code in [
            BackendErrorCode::InputTooLong,
            BackendErrorCode::DropoutUnsupported,
            BackendErrorCode::SubtokenProbUnavailable,
            BackendErrorCode::DimensionMismatch,
        ] {
            assert_eq!(code.as_str().parse::<BackendErrorCode>().unwrap(), code);
        }
        assert_eq!("???".parse::<BackendErrorCode>().unwrap(), BackendErrorCode::Unknown);
    }
}
