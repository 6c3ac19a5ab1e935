// SPDX-License-Identifier: MIT OR Apache-2.0

//! The bridge client against a real HTTP server speaking the wire protocol.

mod common;

use aspectprobe_core::backend::{
    conformance, BackendErrorCode, BridgeSession, MaskRequest, MaskedLm, SubstituteRequest, ToyMlm,
};
use aspectprobe_core::behavioral::{layer_sweep, Method, SweepParams};
use aspectprobe_core::dataset::ProbingInstance;
use aspectprobe_core::lexicon::VocabFeatureMap;
use aspectprobe_core::types::{Aspect, CharSpan, ContextType};
use aspectprobe_core::Error;
use common::ToyServer;

const TEXT: &str = "yesterday he zapel the song .";

fn span() -> CharSpan {
    CharSpan::new(13, 18)
}

#[test]
fn conformance_suite_passes_over_http() {
    let server = ToyServer::start(ToyMlm::new());
    let session = BridgeSession::connect(&server.url, 3).unwrap();
    let checks = conformance::run(&session, TEXT, span());
    assert!(checks.len() >= 6);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn remote_results_match_in_process_at_f32_precision() {
    let toy = ToyMlm::new();
    let server = ToyServer::start(ToyMlm::new());
    let session = BridgeSession::connect(&server.url, 0).unwrap();
    assert_eq!(session.meta().unwrap(), toy.meta().unwrap());

    let local = toy.encode(TEXT, span()).unwrap();
    let remote = session.encode(TEXT, span()).unwrap();
    assert_eq!(local, remote);

    let req = MaskRequest {
        token_ids: local.token_ids.clone(),
        mask_position: local.mask_position,
        layers: vec![0, 2, 4],
        top_n: 12,
        gold_prefix: local.target_subtokens[..1].to_vec(),
        query_ids: vec![local.target_subtokens[1]],
    };
    let a = toy.mask_distributions(&req).unwrap();
    let b = session.mask_distributions(&req).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.layer, y.layer);
        assert_eq!(x.entries.len(), y.entries.len());
        for (ex, ey) in x.entries.iter().zip(&y.entries) {
            assert_eq!(ex.id, ey.id);
            assert_eq!(ex.token, ey.token);
            assert!((ex.prob - ey.prob).abs() <= 1e-7);
        }
        let q = req.query_ids[0];
        assert!((x.prob(q).unwrap() - y.prob(q).unwrap()).abs() <= 1e-7);
    }

    let h_local = toy.hidden_state(&local.token_ids, local.mask_position, 2).unwrap();
    let h_remote = session.hidden_state(&local.token_ids, local.mask_position, 2).unwrap();
    assert_eq!(h_local, h_remote);

    let sub = SubstituteRequest {
        token_ids: local.token_ids.clone(),
        layer: 2,
        position: local.mask_position,
        vector: h_remote,
        top_n: 64,
        query_ids: vec![],
    };
    let s_local = toy.forward_substituted(&sub).unwrap();
    let s_remote = session.forward_substituted(&sub).unwrap();
    for (ex, ey) in s_local.entries.iter().zip(&s_remote.entries) {
        assert!((ex.prob - ey.prob).abs() <= 1e-7);
    }

    let d_local = toy
        .dropout_samples(&local.token_ids, local.mask_position, 4, 11)
        .unwrap();
    let d_remote = session
        .dropout_samples(&local.token_ids, local.mask_position, 4, 11)
        .unwrap();
    for (x, y) in d_local.iter().zip(&d_remote) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() <= 1e-7);
        }
    }
}

#[test]
fn contract_errors_arrive_as_codes() {
    let server = ToyServer::start(ToyMlm::new());
    let session = BridgeSession::connect(&server.url, 0).unwrap();
    let enc = session.encode(TEXT, span()).unwrap();
    let code = |e: Error| match e {
        Error::Backend { code, .. } => code,
        other => panic!("expected backend error, got {other}"),
    };
    assert_eq!(
        code(session.hidden_state(&enc.token_ids, 0, 9).unwrap_err()),
        BackendErrorCode::LayerOutOfRange
    );
    assert_eq!(
        code(session.hidden_state(&enc.token_ids, 99, 1).unwrap_err()),
        BackendErrorCode::PositionOutOfRange
    );
    let bad = SubstituteRequest {
        token_ids: enc.token_ids.clone(),
        layer: 1,
        position: enc.mask_position,
        vector: vec![0.0; 3],
        top_n: 5,
        query_ids: vec![],
    };
    assert_eq!(
        code(session.forward_substituted(&bad).unwrap_err()),
        BackendErrorCode::DimensionMismatch
    );
    let long = "he ".repeat(40);
    assert_eq!(
        code(session.encode(&long, CharSpan::new(0, 2)).unwrap_err()),
        BackendErrorCode::InputTooLong
    );
}

#[test]
fn sweep_over_http_equals_in_process_sweep() {
    let toy = ToyMlm::new();
    let server = ToyServer::start(ToyMlm::new());
    let session = BridgeSession::connect(&server.url, 0).unwrap();
    let inst = ProbingInstance {
        id: "w1".into(),
        text: TEXT.into(),
        target_span: span(),
        expected_form: "zapel".into(),
        complementary_form: "pel".into(),
        expected_aspect: Aspect::Perfective,
        context_type: ContextType::NonAlternative,
        expected_lemma: None,
        complementary_lemma: None,
        expected_number: None,
        expected_feats: None,
    };
    let params = SweepParams {
        method: Method::Iterative,
        layers: vec![0, 1, 2, 3, 4],
        k: 1,
    };
    let vocab = VocabFeatureMap::default();
    let a = layer_sweep(&toy, std::slice::from_ref(&inst), &params, &vocab).unwrap();
    let b = layer_sweep(&session, std::slice::from_ref(&inst), &params, &vocab).unwrap();
    for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
        assert!((x.score_expected - y.score_expected).abs() <= 1e-7);
        assert!((x.score_complementary - y.score_complementary).abs() <= 1e-7);
    }
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let err =
        BridgeSession::connect_with_timeout("http://127.0.0.1:9", 0, std::time::Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err}");
}
