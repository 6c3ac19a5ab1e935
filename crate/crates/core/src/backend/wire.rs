// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP/JSON wire protocol between probing engines and a model server.
//!
//! One `POST` endpoint per [`MaskedLm`] operation: `/meta`, `/encode`,
//! `/mask_distributions`, `/hidden_state`, `/forward_substituted` and
//! `/dropout_samples`. Every request body carries `"seed"`. Vectors and
//! probabilities travel as JSON numbers with `f32` semantics. Contract
//! violations come back as HTTP 400 with `{"error": code}`.
//!
//! Beyond the six basic operations the protocol carries two optional fields:
//! `query_ids` on distribution requests (answered by `query_probs`, aligned
//! with the ids) and a `token` string on each entry.
//!
//! [`handle`] is a transport-free server: it maps a path and body to a status
//! and body by calling any [`MaskedLm`]. Tests wrap it in an HTTP listener to
//! exercise [`BridgeSession`](super::BridgeSession) end to end.

use serde::{Deserialize, Serialize};

use super::{BackendErrorCode, MaskDistribution, MaskEntry, MaskRequest, MaskedLm, SubstituteRequest, TokenId};
use crate::error::Error;
use crate::types::CharSpan;

/// Body of `/meta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaRequest {
    /// Session seed.
    pub seed: u64,
}

/// Body of `/encode`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeRequest {
    /// Session seed.
    pub seed: u64,
    /// Input text.
    pub text: String,
    /// Character span of the target.
    pub target_span: CharSpan,
}

/// Body of `/mask_distributions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskDistributionsRequest {
    /// Session seed.
    pub seed: u64,
    /// Operation arguments.
    #[serde(flatten)]
    pub request: MaskRequest,
}

/// Body of `/hidden_state`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenStateRequest {
    /// Session seed.
    pub seed: u64,
    /// Token sequence.
    pub token_ids: Vec<TokenId>,
    /// Position to read.
    pub position: usize,
    /// Layer to read.
    pub layer: usize,
}

/// Body of `/forward_substituted`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardSubstitutedRequest {
    /// Session seed.
    pub seed: u64,
    /// Operation arguments.
    #[serde(flatten)]
    pub request: SubstituteRequest,
}

/// Body of `/dropout_samples`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropoutSamplesRequest {
    /// Seed of the dropout masks.
    pub seed: u64,
    /// Sequence with one mask.
    pub token_ids: Vec<TokenId>,
    /// Mask index.
    pub mask_position: usize,
    /// Number of stochastic passes.
    pub n_samples: usize,
}

/// One entry as serialized on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    /// Token id.
    pub id: TokenId,
    /// Probability.
    pub prob: f32,
    /// Vocabulary string.
    #[serde(default)]
    pub token: String,
}

/// A distribution as serialized on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDistribution {
    /// Layer read out.
    pub layer: usize,
    /// Sorted truncated entries.
    pub entries: Vec<WireEntry>,
    /// Probabilities of the requested `query_ids`, in request order.
    #[serde(default)]
    pub query_probs: Vec<f32>,
}

impl WireDistribution {
    /// Narrows a distribution to wire precision.
    pub fn from_distribution(d: &MaskDistribution) -> Self {
        WireDistribution {
            layer: d.layer,
            entries: d
                .entries
                .iter()
                .map(|e| WireEntry {
                    id: e.id,
                    prob: e.prob as f32,
                    token: e.token.clone(),
                })
                .collect(),
            query_probs: d.queried.iter().map(|(_, p)| *p as f32).collect(),
        }
    }

    /// Widens back, pairing `query_probs` with the ids that were requested.
    pub fn into_distribution(self, query_ids: &[TokenId]) -> Result<MaskDistribution, Error> {
        if self.query_probs.len() != query_ids.len() {
            return Err(Error::backend_detail(
                BackendErrorCode::SubtokenProbUnavailable,
                format!(
                    "server answered {} of {} queried ids",
                    self.query_probs.len(),
                    query_ids.len()
                ),
            ));
        }
        Ok(MaskDistribution {
            layer: self.layer,
            entries: self
                .entries
                .into_iter()
                .map(|e| MaskEntry {
                    id: e.id,
                    prob: e.prob as f64,
                    token: e.token,
                })
                .collect(),
            queried: query_ids
                .iter()
                .zip(self.query_probs)
                .map(|(&id, p)| (id, p as f64))
                .collect(),
        })
    }
}

/// Response of `/mask_distributions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskDistributionsResponse {
    /// One distribution per requested layer.
    pub distributions: Vec<WireDistribution>,
}

/// Response of `/hidden_state`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HiddenStateResponse {
    /// Hidden vector.
    pub vector: Vec<f32>,
}

/// Response of `/forward_substituted`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardSubstitutedResponse {
    /// Final-layer distribution.
    pub distribution: WireDistribution,
}

/// Response of `/dropout_samples`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DropoutSamplesResponse {
    /// One score vector per pass.
    pub samples: Vec<Vec<f32>>,
}

/// Error body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    /// Machine-readable code.
    pub error: String,
    /// Optional context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

fn error_body(code: &str, detail: Option<String>) -> String {
    serde_json::to_string(&ErrorResponse {
        error: code.to_string(),
        detail,
    })
    .expect("error body serializes")
}

fn to_reply<T: Serialize>(result: Result<T, Error>) -> (u16, String) {
    match result {
        Ok(v) => (200, serde_json::to_string(&v).expect("response serializes")),
        Err(Error::Backend { code, detail }) => (400, error_body(code.as_str(), detail)),
        Err(e @ (Error::Dimension { .. } | Error::InvalidInput(_))) => (
            400,
            error_body(BackendErrorCode::BadRequest.as_str(), Some(e.to_string())),
        ),
        Err(e) => (500, error_body("internal", Some(e.to_string()))),
    }
}

fn parse<'a, T: Deserialize<'a>>(body: &'a str) -> Result<T, Error> {
    serde_json::from_str(body).map_err(|e| Error::backend_detail(BackendErrorCode::BadRequest, e.to_string()))
}

/// Serves one request against `backend`, returning `(status, json body)`.
pub fn handle(path: &str, body: &str, backend: &dyn MaskedLm) -> (u16, String) {
    match path.trim_end_matches('/') {
        "/meta" => to_reply(parse::<MetaRequest>(body).and_then(|_| backend.meta())),
        "/encode" => to_reply(parse::<EncodeRequest>(body).and_then(|r| backend.encode(&r.text, r.target_span))),
        "/mask_distributions" => to_reply(parse::<MaskDistributionsRequest>(body).and_then(|r| {
            backend
                .mask_distributions(&r.request)
                .map(|ds| MaskDistributionsResponse {
                    distributions: ds.iter().map(WireDistribution::from_distribution).collect(),
                })
        })),
        "/hidden_state" => to_reply(parse::<HiddenStateRequest>(body).and_then(|r| {
            backend
                .hidden_state(&r.token_ids, r.position, r.layer)
                .map(|vector| HiddenStateResponse { vector })
        })),
        "/forward_substituted" => to_reply(parse::<ForwardSubstitutedRequest>(body).and_then(|r| {
            backend
                .forward_substituted(&r.request)
                .map(|d| ForwardSubstitutedResponse {
                    distribution: WireDistribution::from_distribution(&d),
                })
        })),
        "/dropout_samples" => to_reply(parse::<DropoutSamplesRequest>(body).and_then(|r| {
            backend
                .dropout_samples(&r.token_ids, r.mask_position, r.n_samples, r.seed)
                .map(|samples| DropoutSamplesResponse {
                    samples: samples
                        .into_iter()
                        .map(|s| s.into_iter().map(|x| x as f32).collect())
                        .collect(),
                })
        })),
        _ => (404, error_body("not_found", Some(path.to_string()))),
    }
}
