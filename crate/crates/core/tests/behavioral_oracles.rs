// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::time::Instant;

use aspectprobe_core::backend::{
    BackendMeta, MaskDistribution, MaskEntry, MaskRequest, MaskedLm, SubstituteRequest, TokenId, TokenizedTarget,
    ToyMlm,
};
use aspectprobe_core::behavioral::{
    aspect_inference, iterative_masking, layer_sweep, preference_from_distribution, FormChoice, Method, SweepParams,
};
use aspectprobe_core::dataset::ProbingInstance;
use aspectprobe_core::lexicon::VocabFeatureMap;
use aspectprobe_core::types::{Aspect, CharSpan, ContextType};
use aspectprobe_core::Result;
use common::toy_oracle::Oracle;
use proptest::prelude::*;

fn instance(id: &str, form: &str, other: &str, aspect: Aspect, ct: ContextType) -> ProbingInstance {
    let text = format!("yesterday he {form} the book .");
    ProbingInstance {
        id: id.into(),
        target_span: CharSpan::new(13, 13 + form.chars().count()),
        text,
        expected_form: form.into(),
        complementary_form: other.into(),
        expected_aspect: aspect,
        context_type: ct,
        expected_lemma: None,
        complementary_lemma: None,
        expected_number: None,
        expected_feats: None,
    }
}

#[test]
fn iterative_masking_equals_brute_force_chain() {
    let start = Instant::now();
    let toy = ToyMlm::new();
    let o = Oracle::load();
    let cases: [(&str, &[&str]); 4] = [
        ("chital", &["chital"]),
        ("zapel", &["za", "##pel"]),
        ("perepisyval", &["pere", "##pis", "##yval"]),
        ("rasskazal", &["ras", "##ska", "##zal"]),
    ];
    let layers: Vec<usize> = (0..=4).collect();
    for (form, pieces) in cases {
        let inst = instance(form, form, "x", Aspect::Imperfective, ContextType::NonAlternative);
        let got = iterative_masking(&toy, &inst, FormChoice::Expected, &layers).unwrap();
        for (layer, p) in got {
            let want = o.chain(&["yesterday", "he"], pieces, &["the", "book", "."], layer);
            assert!((p - want).abs() <= 1e-6, "{form} layer {layer}: {p} vs {want}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn single_subtoken_is_exactly_the_single_pass_probability() {
    let toy = ToyMlm::new();
    let inst = instance(
        "a",
        "prochital",
        "chital",
        Aspect::Perfective,
        ContextType::NonAlternative,
    );
    let layers: Vec<usize> = (0..=4).collect();
    let got = iterative_masking(&toy, &inst, FormChoice::Expected, &layers).unwrap();
    let enc = toy.encode(&inst.text, inst.target_span).unwrap();
    assert_eq!(enc.target_subtokens.len(), 1);
    let gold = enc.target_subtokens[0];
    let dists = toy
        .mask_distributions(&MaskRequest {
            token_ids: enc.token_ids,
            mask_position: enc.mask_position,
            layers: layers.clone(),
            top_n: 64,
            ..Default::default()
        })
        .unwrap();
    for ((layer, p), d) in got.iter().zip(&dists) {
        let single = d.entries.iter().find(|e| e.id == gold).unwrap().prob;
        assert_eq!(*p, single, "layer {layer}");
    }
}

fn hand_tags() -> VocabFeatureMap {
    let imp = [
        "chital", "chitali", "pel", "peli", "pisal", "pisali", "delal", "chitat", "pet",
    ];
    let perf = [
        "prochital",
        "prochitali",
        "spel",
        "speli",
        "napisal",
        "napisali",
        "sdelal",
        "prochitat",
        "spet",
    ];
    VocabFeatureMap::from_entries(
        imp.iter()
            .map(|t| (t.to_string(), Aspect::Imperfective))
            .chain(perf.iter().map(|t| (t.to_string(), Aspect::Perfective))),
        [],
    )
}

#[test]
fn aspect_inference_equals_exhaustive_enumeration() {
    let start = Instant::now();
    let toy = ToyMlm::new();
    let o = Oracle::load();
    let tags = hand_tags();
    let inst = instance(
        "a",
        "chital",
        "prochital",
        Aspect::Imperfective,
        ContextType::NonAlternative,
    );
    let ids = o.ids(&["[CLS]", "yesterday", "he", "[MASK]", "the", "book", ".", "[SEP]"]);
    let full = o.layer_distributions(&ids, 3);
    let mut previous: Vec<(f64, f64)> = vec![(0.0, 0.0); 5];
    for k in [1usize, 8, 64] {
        let prefs = aspect_inference(&toy, &inst, &tags, k, &[0, 1, 2, 3, 4]).unwrap();
        for (layer, pref) in prefs.iter().enumerate() {
            let mut order: Vec<usize> = (0..64).collect();
            order.sort_by(|&a, &b| full[layer][b].partial_cmp(&full[layer][a]).unwrap());
            let (mut perf, mut imp) = (0.0, 0.0);
            for &i in &order[..k] {
                match tags.aspect(&o.vocab[i]) {
                    Some(Aspect::Perfective) => perf += full[layer][i],
                    Some(Aspect::Imperfective) => imp += full[layer][i],
                    None => {}
                }
            }
            assert!((pref.p_perf - perf).abs() <= 1e-6, "k={k} layer={layer}");
            assert!((pref.p_imp - imp).abs() <= 1e-6, "k={k} layer={layer}");
            assert!(pref.p_perf >= previous[layer].0 && pref.p_imp >= previous[layer].1);
            previous[layer] = (pref.p_perf, pref.p_imp);
        }
    }
    let top64 = aspect_inference(&toy, &inst, &tags, 64, &[4]).unwrap();
    let total_tagged: f64 = (0..64)
        .filter(|&i| tags.aspect(&o.vocab[i]).is_some())
        .map(|i| full[4][i])
        .sum();
    assert!((top64[0].p_perf + top64[0].p_imp - total_tagged).abs() <= 1e-6);
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn hand_enumerated_preference() {
    let entry = |id: TokenId, token: &str, prob: f64| MaskEntry {
        id,
        prob,
        token: token.into(),
    };
    let dist = MaskDistribution {
        layer: 4,
        entries: vec![
            entry(3, "d", 0.35),
            entry(0, "a", 0.30),
            entry(1, "b", 0.20),
            entry(2, "c", 0.15),
        ],
        queried: vec![],
    };
    let tags = VocabFeatureMap::from_entries(
        [
            ("a".to_string(), Aspect::Perfective),
            ("b".to_string(), Aspect::Imperfective),
            ("c".to_string(), Aspect::Imperfective),
        ],
        [],
    );
    let p = preference_from_distribution(&dist, &tags, 64);
    assert!((p.p_perf - 0.30).abs() < 1e-12);
    assert!((p.p_imp - 0.35).abs() < 1e-12);
    assert_eq!(p.preferred(), Some(Aspect::Imperfective));
    let none = preference_from_distribution(&dist, &VocabFeatureMap::default(), 64);
    assert_eq!((none.p_perf, none.p_imp, none.preferred()), (0.0, 0.0, None));
}

proptest! {
    #[test]
    fn masses_monotone_in_k(probs in prop::collection::vec(0.001f64..1.0, 1..40), tagmask in prop::collection::vec(0u8..3, 40)) {
        let total: f64 = probs.iter().sum();
        let mut entries: Vec<MaskEntry> = probs
            .iter()
            .enumerate()
            .map(|(i, p)| MaskEntry { id: i as TokenId, prob: p / total, token: format!("t{i}") })
            .collect();
        entries.sort_by(|a, b| b.prob.partial_cmp(&a.prob).unwrap());
        let dist = MaskDistribution { layer: 0, entries, queried: vec![] };
        let tags = VocabFeatureMap::from_entries(
            (0..probs.len()).filter_map(|i| match tagmask[i] {
                0 => Some((format!("t{i}"), Aspect::Perfective)),
                1 => Some((format!("t{i}"), Aspect::Imperfective)),
                _ => None,
            }),
            [],
        );
        let mut last = (0.0, 0.0);
        for k in 1..=probs.len() + 2 {
            let p = preference_from_distribution(&dist, &tags, k);
            prop_assert!(p.p_perf >= last.0 && p.p_imp >= last.1);
            prop_assert!(p.p_perf + p.p_imp <= 1.0 + 1e-6);
            last = (p.p_perf, p.p_imp);
        }
    }
}

/// Every token gets the same probability, so every comparison ties.
struct Uniform {
    toy: ToyMlm,
}

impl Uniform {
    fn flat(&self, layer: usize) -> MaskDistribution {
        let p = 1.0 / 64.0;
        MaskDistribution {
            layer,
            entries: (0..64)
                .map(|i| MaskEntry {
                    id: i,
                    prob: p,
                    token: self.toy.token(i).to_string(),
                })
                .collect(),
            queried: vec![],
        }
    }
}

impl MaskedLm for Uniform {
    fn meta(&self) -> Result<BackendMeta> {
        self.toy.meta()
    }
    fn encode(&self, text: &str, span: CharSpan) -> Result<TokenizedTarget> {
        self.toy.encode(text, span)
    }
    fn mask_distributions(&self, request: &MaskRequest) -> Result<Vec<MaskDistribution>> {
        Ok(request
            .layers
            .iter()
            .map(|&l| {
                let mut d = self.flat(l);
                d.entries.truncate(request.top_n);
                d.queried = request.query_ids.iter().map(|&q| (q, 1.0 / 64.0)).collect();
                d
            })
            .collect())
    }
    fn hidden_state(&self, ids: &[TokenId], position: usize, layer: usize) -> Result<Vec<f32>> {
        self.toy.hidden_state(ids, position, layer)
    }
    fn forward_substituted(&self, _: &SubstituteRequest) -> Result<MaskDistribution> {
        Ok(self.flat(4))
    }
    fn dropout_samples(&self, _: &[TokenId], _: usize, n: usize, _: u64) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![1.0 / 64.0; 64]; n])
    }
}

#[test]
fn all_tie_backend_scores_zero_with_full_tie_rate() {
    let backend = Uniform { toy: ToyMlm::new() };
    let tags = hand_tags();
    let instances = vec![
        instance(
            "a",
            "chital",
            "prochital",
            Aspect::Imperfective,
            ContextType::NonAlternative,
        ),
        instance("b", "spel", "pel", Aspect::Perfective, ContextType::Alternative),
    ];
    // Tagged masses tie when both aspects have the same number of tags in the top-k;
    // with k = 64 every tagged token is included (9 per side).
    for method in [Method::Iterative, Method::Inference] {
        let params = SweepParams {
            method,
            layers: vec![0, 2, 4],
            k: 64,
        };
        let sweep = layer_sweep(&backend, &instances, &params, &tags).unwrap();
        assert!(sweep.skipped.is_empty());
        for row in &sweep.rows {
            assert_eq!(row.accuracy, 0.0, "{method} {row:?}");
            assert_eq!(row.tie_rate, 1.0, "{method} {row:?}");
            assert_eq!(row.accuracy + row.tie_rate + row.error_rate, 1.0);
        }
    }
}
