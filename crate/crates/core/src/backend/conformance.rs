// SPDX-License-Identifier: MIT OR Apache-2.0

//! Behavioural checks any [`MaskedLm`] implementation must pass.
//!
//! Run against the toy model in unit tests and against a bridge session over
//! real HTTP in integration tests.

use super::{BackendErrorCode, MaskRequest, MaskedLm, SubstituteRequest};
use crate::types::CharSpan;

/// Outcome of one conformance check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    /// Short identifier.
    pub name: &'static str,
    /// Whether the check held.
    pub passed: bool,
    /// Failure context (empty on success).
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, outcome: std::result::Result<(), String>) -> Self {
        match outcome {
            Ok(()) => Check {
                name,
                passed: true,
                detail: String::new(),
            },
            Err(detail) => Check {
                name,
                passed: false,
                detail,
            },
        }
    }
}

/// Tolerance of the identity-intervention check, per probability.
pub const IDENTITY_TOLERANCE: f64 = 1e-5;

/// Runs every check using `text`/`span` as the probe sentence.
pub fn run(backend: &dyn MaskedLm, text: &str, span: CharSpan) -> Vec<Check> {
    let mut checks = Vec::new();
    let meta = match backend.meta() {
        Ok(m) => m,
        Err(e) => return vec![Check::new("meta", Err(e.to_string()))],
    };
    checks.push(Check::new("meta_valid", meta.validate().map_err(|e| e.to_string())));

    let enc = match backend.encode(text, span) {
        Ok(e) => e,
        Err(e) => {
            checks.push(Check::new("encode", Err(e.to_string())));
            return checks;
        }
    };
    checks.push(Check::new("encode_single_mask", {
        let masks = enc.token_ids.iter().filter(|&&t| t == meta.mask_token_id).count();
        if masks == 1
            && enc.token_ids.get(enc.mask_position) == Some(&meta.mask_token_id)
            && !enc.target_subtokens.is_empty()
        {
            Ok(())
        } else {
            Err(format!("{masks} masks, position {}", enc.mask_position))
        }
    }));

    let top_n = meta.vocab_size.min(50);
    let request = MaskRequest {
        token_ids: enc.token_ids.clone(),
        mask_position: enc.mask_position,
        layers: meta.all_layers(),
        top_n,
        gold_prefix: vec![],
        query_ids: enc.target_subtokens.clone(),
    };
    let first = backend.mask_distributions(&request);
    let second = backend.mask_distributions(&request);
    checks.push(Check::new(
        "determinism",
        match (&first, &second) {
            (Ok(a), Ok(b)) if a == b => Ok(()),
            (Ok(_), Ok(_)) => Err("repeated call differs".into()),
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        },
    ));
    let Ok(dists) = first else { return checks };

    checks.push(Check::new("sorted_truncation", {
        let mut out = Ok(());
        for d in &dists {
            if let Err(e) = d.validate() {
                out = Err(format!("layer {}: {e}", d.layer));
                break;
            }
            if d.entries.len() > top_n {
                out = Err(format!("layer {}: {} entries > top_n", d.layer, d.entries.len()));
                break;
            }
        }
        out
    }));

    let last = meta.n_layers;
    let baseline = &dists[dists.len() - 1];
    let identity = (0..=last)
        .map(|layer| -> std::result::Result<(), String> {
            let h = backend
                .hidden_state(&enc.token_ids, enc.mask_position, layer)
                .map_err(|e| e.to_string())?;
            let d = backend
                .forward_substituted(&SubstituteRequest {
                    token_ids: enc.token_ids.clone(),
                    layer,
                    position: enc.mask_position,
                    vector: h,
                    top_n,
                    query_ids: enc.target_subtokens.clone(),
                })
                .map_err(|e| e.to_string())?;
            for e in &baseline.entries {
                let got = d.prob(e.id).unwrap_or(0.0);
                if (got - e.prob).abs() > IDENTITY_TOLERANCE {
                    return Err(format!("layer {layer}, token {}: {got} vs {}", e.id, e.prob));
                }
            }
            Ok(())
        })
        .find(|r| r.is_err())
        .unwrap_or(Ok(()));
    checks.push(Check::new("identity_intervention", identity));

    checks.push(Check::new("dimension_mismatch", {
        let r = backend.forward_substituted(&SubstituteRequest {
            token_ids: enc.token_ids.clone(),
            layer: last,
            position: enc.mask_position,
            vector: vec![0.0; meta.hidden_size + 1],
            top_n,
            query_ids: vec![],
        });
        expect_code(
            r.err().and_then(|e| e.backend_code()),
            BackendErrorCode::DimensionMismatch,
        )
    }));

    checks.push(Check::new("layer_out_of_range", {
        let r = backend.hidden_state(&enc.token_ids, enc.mask_position, last + 1);
        expect_code(
            r.err().and_then(|e| e.backend_code()),
            BackendErrorCode::LayerOutOfRange,
        )
    }));

    checks.push(Check::new("hidden_state_finite", {
        match backend.hidden_state(&enc.token_ids, enc.mask_position, last) {
            Ok(h) if h.len() == meta.hidden_size && h.iter().all(|x| x.is_finite()) => Ok(()),
            Ok(h) => Err(format!("length {} or non-finite entries", h.len())),
            Err(e) => Err(e.to_string()),
        }
    }));
    checks
}

fn expect_code(got: Option<BackendErrorCode>, want: BackendErrorCode) -> std::result::Result<(), String> {
    if got == Some(want) {
        Ok(())
    } else {
        Err(format!("expected {want}, got {got:?}"))
    }
}
