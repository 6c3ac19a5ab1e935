// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP client for a model server speaking the [`wire`](super::wire) protocol.

use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    DropoutSamplesRequest, DropoutSamplesResponse, EncodeRequest, ErrorResponse, ForwardSubstitutedRequest,
    ForwardSubstitutedResponse, HiddenStateRequest, HiddenStateResponse, MaskDistributionsRequest,
    MaskDistributionsResponse, MetaRequest,
};
use super::{
    BackendErrorCode, BackendMeta, MaskDistribution, MaskRequest, MaskedLm, SubstituteRequest, TokenId, TokenizedTarget,
};
use crate::error::{Error, Result};
use crate::types::CharSpan;

/// Remote [`MaskedLm`] session.
///
/// Requests are serialized through a lock unless the server reports
/// `concurrent_safe`.
#[derive(Debug)]
pub struct BridgeSession {
    base_url: String,
    seed: u64,
    client: reqwest::blocking::Client,
    meta: BackendMeta,
    lock: Mutex<()>,
}

impl BridgeSession {
    /// Connects to `base_url` (e.g. `http://127.0.0.1:8080`) and fetches `/meta`.
    pub fn connect(base_url: &str, seed: u64) -> Result<Self> {
        Self::connect_with_timeout(base_url, seed, Duration::from_secs(600))
    }

    /// As [`connect`](Self::connect) with an explicit per-request timeout.
    pub fn connect_with_timeout(base_url: &str, seed: u64, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let base_url = base_url.trim_end_matches('/').to_string();
        let meta: BackendMeta = post(&client, &base_url, "/meta", &MetaRequest { seed })?;
        meta.validate()?;
        Ok(BridgeSession {
            base_url,
            seed,
            client,
            meta,
            lock: Mutex::new(()),
        })
    }

    /// Server address.
    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        if self.meta.concurrent_safe {
            post(&self.client, &self.base_url, path, body)
        } else {
            let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
            post(&self.client, &self.base_url, path, body)
        }
    }
}

fn post<Req: Serialize, Resp: DeserializeOwned>(
    client: &reqwest::blocking::Client,
    base_url: &str,
    path: &str,
    body: &Req,
) -> Result<Resp> {
    let url = format!("{base_url}{path}");
    let response = client
        .post(&url)
        .json(body)
        .send()
        .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
    let status = response.status();
    let text = response.text().map_err(|e| Error::Transport(format!("{url}: {e}")))?;
    if status.as_u16() == 400 {
        let err: ErrorResponse = serde_json::from_str(&text)
            .map_err(|_| Error::Transport(format!("{url}: unparseable error body {text:?}")))?;
        let code = err
            .error
            .parse::<BackendErrorCode>()
            .unwrap_or(BackendErrorCode::Unknown);
        return Err(Error::Backend {
            code,
            detail: err.detail.or(Some(err.error)),
        });
    }
    if !status.is_success() {
        return Err(Error::Transport(format!("{url}: HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| Error::Transport(format!("{url}: {e}")))
}

impl MaskedLm for BridgeSession {
    fn meta(&self) -> Result<BackendMeta> {
        Ok(self.meta.clone())
    }

    fn encode(&self, text: &str, target_span: CharSpan) -> Result<TokenizedTarget> {
        self.call(
            "/encode",
            &EncodeRequest {
                seed: self.seed,
                text: text.to_string(),
                target_span,
            },
        )
    }

    fn mask_distributions(&self, request: &MaskRequest) -> Result<Vec<MaskDistribution>> {
        let resp: MaskDistributionsResponse = self.call(
            "/mask_distributions",
            &MaskDistributionsRequest {
                seed: self.seed,
                request: request.clone(),
            },
        )?;
        if resp.distributions.len() != request.layers.len() {
            return Err(Error::Transport(format!(
                "asked for {} layers, got {}",
                request.layers.len(),
                resp.distributions.len()
            )));
        }
        resp.distributions
            .into_iter()
            .map(|d| d.into_distribution(&request.query_ids))
            .collect()
    }

    fn hidden_state(&self, token_ids: &[TokenId], position: usize, layer: usize) -> Result<Vec<f32>> {
        let resp: HiddenStateResponse = self.call(
            "/hidden_state",
            &HiddenStateRequest {
                seed: self.seed,
                token_ids: token_ids.to_vec(),
                position,
                layer,
            },
        )?;
        if resp.vector.len() != self.meta.hidden_size {
            return Err(Error::Dimension {
                expected: self.meta.hidden_size,
                actual: resp.vector.len(),
            });
        }
        Ok(resp.vector)
    }

    fn forward_substituted(&self, request: &SubstituteRequest) -> Result<MaskDistribution> {
        let resp: ForwardSubstitutedResponse = self.call(
            "/forward_substituted",
            &ForwardSubstitutedRequest {
                seed: self.seed,
                request: request.clone(),
            },
        )?;
        resp.distribution.into_distribution(&request.query_ids)
    }

    fn dropout_samples(
        &self,
        token_ids: &[TokenId],
        mask_position: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        if !self.meta.supports_dropout {
            return Err(Error::backend(BackendErrorCode::DropoutUnsupported));
        }
        let resp: DropoutSamplesResponse = self.call(
            "/dropout_samples",
            &DropoutSamplesRequest {
                seed,
                token_ids: token_ids.to_vec(),
                mask_position,
                n_samples,
            },
        )?;
        Ok(resp
            .samples
            .into_iter()
            .map(|s| s.into_iter().map(f64::from).collect())
            .collect())
    }
}
