// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Each criterion runs at its stated tolerance and prints
//! one `PASS` or `FAIL` line; the process exits non-zero if any fails.

mod common;
#[path = "../../core/tests/common/synthetic.rs"]
mod synthetic;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use aspectprobe_core::backend::{MaskRequest, MaskedLm, ToyMlm};
use aspectprobe_core::behavioral::{aspect_inference, iterative_masking, FormChoice, Method};
use aspectprobe_core::causal::{run_intervention, Baseline, CausalConfig, Intervention};
use aspectprobe_core::classifier::{f_half, mc_dropout, train_head, Confusion, DropoutScorer, HeadParams, HeadScorer};
use aspectprobe_core::dataset::{load_instances, ProbingInstance};
use aspectprobe_core::subspace::{fit_hinge, majority_rate, train_inlp_features, InlpConfig, SgdParams};
use aspectprobe_core::{
    Aspect, AspectBank, BoundednessSubspace, CharSpan, ContextType, PushDirection, VocabFeatureMap,
};
use common::toy_oracle::Oracle;
use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use synthetic::{angle_to_first_axis, idempotence_error, max_cross_dot, multi_direction, single_direction};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn e<T>(r: aspectprobe_core::Result<T>) -> Result<T, String> {
    r.map_err(|err| err.to_string())
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    if t < limit {
        Ok(())
    } else {
        Err(format!(
            "took {:.2}s, limit {:.0}s",
            t.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn instance(form: &str, other: &str, aspect: Aspect) -> ProbingInstance {
    ProbingInstance {
        id: form.into(),
        text: format!("yesterday he {form} the book ."),
        target_span: CharSpan::new(13, 13 + form.chars().count()),
        expected_form: form.into(),
        complementary_form: other.into(),
        expected_aspect: aspect,
        context_type: ContextType::NonAlternative,
        expected_lemma: None,
        complementary_lemma: None,
        expected_number: None,
        expected_feats: None,
    }
}

fn iterative_masking_oracle() -> Result<String, String> {
    let start = Instant::now();
    let toy = ToyMlm::new();
    let oracle = Oracle::load();
    let cases: [(&str, &[&str]); 3] = [
        ("chital", &["chital"]),
        ("zapel", &["za", "##pel"]),
        ("perepisyval", &["pere", "##pis", "##yval"]),
    ];
    let layers: Vec<usize> = (0..=oracle.n_layers()).collect();
    let mut worst = 0.0f64;
    for (form, pieces) in cases {
        let inst = instance(form, "x", Aspect::Imperfective);
        let enc = e(toy.encode(&inst.text, inst.target_span))?;
        ensure!(
            enc.target_subtokens.len() == pieces.len(),
            "{form}: {} subtokens",
            enc.target_subtokens.len()
        );
        let got = e(iterative_masking(&toy, &inst, FormChoice::Expected, &layers))?;
        for &(layer, p) in &got {
            let want = oracle.chain(&["yesterday", "he"], pieces, &["the", "book", "."], layer);
            worst = worst.max((p - want).abs());
            ensure!((p - want).abs() <= 1e-6, "{form} layer {layer}: {p} vs {want}");
        }
        if pieces.len() == 1 {
            let dists = toy
                .mask_distributions(&MaskRequest {
                    token_ids: enc.token_ids.clone(),
                    mask_position: enc.mask_position,
                    layers: layers.clone(),
                    top_n: 64,
                    ..Default::default()
                })
                .map_err(|e| e.to_string())?;
            for (&(layer, p), d) in got.iter().zip(&dists) {
                let single = d
                    .prob(enc.target_subtokens[0])
                    .ok_or("gold missing from distribution")?;
                ensure!(p == single, "n=1 layer {layer}: {p} != single pass {single}");
            }
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("n=1,2,3 x {} layers, max error {worst:.1e}", layers.len()))
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

fn inference_enumeration() -> Result<String, String> {
    let start = Instant::now();
    let toy = ToyMlm::new();
    let oracle = Oracle::load();
    ensure!(
        oracle.vocab.len() == 64,
        "toy vocabulary has {} tokens",
        oracle.vocab.len()
    );
    let tags = hand_tags();
    let inst = instance("chital", "prochital", Aspect::Imperfective);
    let ids = oracle.ids(&["[CLS]", "yesterday", "he", "[MASK]", "the", "book", ".", "[SEP]"]);
    let full = oracle.layer_distributions(&ids, 3);
    let layers: Vec<usize> = (0..=oracle.n_layers()).collect();
    let mut previous = vec![(0.0f64, 0.0f64); layers.len()];
    for k in [1usize, 8, 64] {
        let prefs = e(aspect_inference(&toy, &inst, &tags, k, &layers))?;
        for (layer, pref) in prefs.iter().enumerate() {
            let mut order: Vec<usize> = (0..64).collect();
            order.sort_by(|&a, &b| full[layer][b].total_cmp(&full[layer][a]));
            let (mut perf, mut imp) = (0.0, 0.0);
            for &i in &order[..k] {
                match tags.aspect(&oracle.vocab[i]) {
                    Some(Aspect::Perfective) => perf += full[layer][i],
                    Some(Aspect::Imperfective) => imp += full[layer][i],
                    None => {}
                }
            }
            ensure!(
                (pref.p_perf - perf).abs() <= 1e-6,
                "k={k} layer {layer}: perf {} vs {perf}",
                pref.p_perf
            );
            ensure!(
                (pref.p_imp - imp).abs() <= 1e-6,
                "k={k} layer {layer}: imp {} vs {imp}",
                pref.p_imp
            );
            ensure!(
                pref.p_perf >= previous[layer].0 && pref.p_imp >= previous[layer].1,
                "k={k} layer {layer}: masses shrank"
            );
            previous[layer] = (pref.p_perf, pref.p_imp);
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok("k=1,8,64 on 5 layers".into())
}

fn inlp_config(m: usize, seed: u64) -> InlpConfig {
    InlpConfig {
        m,
        alpha: 4.0,
        sgd: SgdParams {
            early_stopping: false,
            seed,
            ..SgdParams::default()
        },
        ..InlpConfig::default()
    }
}

fn inlp_invariants() -> Result<String, String> {
    let start = Instant::now();
    let mut notes = Vec::new();
    for m in [1usize, 3, 5] {
        let fs = if m == 1 {
            single_direction(16, 2000, 3)
        } else {
            multi_direction(16, m, 1000, 0.3, 40 + m as u64)
        };
        let out = e(train_inlp_features(&fs, 0, &inlp_config(m, if m == 1 { 3 } else { 7 })))?;
        let s = &out.subspace;
        ensure!(s.m() == m, "m={m}: {} directions ({:?})", s.m(), out.warnings);
        let idem = idempotence_error(&s.nullspace_projector());
        ensure!(idem <= 1e-6, "m={m}: idempotence error {idem}");
        let cross = max_cross_dot(&s.directions);
        ensure!(cross <= 1e-6, "m={m}: cross dot {cross}");
        let y = fs.bool_labels();
        let projected: Vec<Vec<f64>> = fs.rows.iter().map(|r| s.project_nullspace(r).unwrap()).collect();
        let probe = fit_hinge(
            &projected,
            &y,
            &SgdParams {
                early_stopping: false,
                seed: 99,
                ..SgdParams::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let acc = probe.accuracy(&projected, &y);
        let majority = majority_rate(&y);
        ensure!(
            acc <= majority + 0.05,
            "m={m}: post-projection accuracy {acc} > {majority} + 0.05"
        );
        if m == 1 {
            let angle = angle_to_first_axis(&s.directions[0]);
            ensure!(angle <= 1e-2, "m=1: angle {angle} to the analytic separator");
            notes.push(format!("m=1 angle {angle:.1e}"));
        }
        notes.push(format!("m={m} guard {acc:.3}"));
    }
    within(start, Duration::from_secs(30))?;
    Ok(notes.join(", "))
}

fn subspace_from(dim: usize, directions: Vec<Vec<f64>>, alpha: f64) -> BoundednessSubspace {
    let m = directions.len();
    serde_json::from_value(serde_json::json!({
        "layer": 0,
        "alpha": alpha,
        "dim": dim,
        "directions": directions,
        "accuracies": vec![1.0; m],
        "seed": 0,
        "provenance": {"kind": "inlp", "config_digest": "", "push_formula": ""}
    }))
    .expect("valid subspace")
}

fn counterfactual_algebra() -> Result<String, String> {
    let s = subspace_from(2, vec![vec![1.0, 0.0]], 2.0);
    let h = [1.0, 1.0];
    ensure!(e(s.project_nullspace(&h))? == vec![0.0, 1.0], "P_N h");
    let pos = e(s.counterfactual(&h, PushDirection::Positive))?;
    let neg = e(s.counterfactual(&h, PushDirection::Negative))?;
    ensure!(pos == vec![2.0, 1.0], "positive {pos:?}");
    ensure!(neg == vec![-2.0, 1.0], "negative {neg:?}");

    let mut runner = TestRunner::new(ProptestConfig {
        cases: 256,
        ..ProptestConfig::default()
    });
    runner
        .run(
            &(0u64..1000, 0usize..5, prop::collection::vec(-3.0f64..3.0, 6)),
            |(seed, m, h)| {
                let mut s = aspectprobe_core::subspace::random_subspace(6, m, seed, 0.0, 0).unwrap();
                s.alpha = 0.0;
                for d in [PushDirection::Positive, PushDirection::Negative] {
                    prop_assert_eq!(s.counterfactual(&h, d).unwrap(), s.project_nullspace(&h).unwrap());
                }
                Ok(())
            },
        )
        .map_err(|e| format!("alpha=0: {e}"))?;

    let train = single_direction(16, 2000, 21);
    let out = e(train_inlp_features(&train, 0, &inlp_config(1, 21)))?;
    let clf = &out.classifiers[0];
    let held_out = single_direction(16, 50, 22);
    ensure!(held_out.rows.len() == 200, "{} held-out points", held_out.rows.len());
    let mut ordered = 0;
    for h in &held_out.rows {
        let p = e(out.subspace.counterfactual(h, PushDirection::Positive))?;
        let n = e(out.subspace.counterfactual(h, PushDirection::Negative))?;
        if clf.decision(&n) < clf.decision(h) && clf.decision(h) < clf.decision(&p) {
            ordered += 1;
        }
    }
    ensure!(ordered == 200, "ordering holds on {ordered}/200 points");
    Ok("worked example exact, alpha=0 on 256 draws, 200/200 ordered".into())
}

fn identity_null_effect() -> Result<String, String> {
    let bank = e(AspectBank::load(fixture("toy/bank.tsv")))?;
    let vocab = e(VocabFeatureMap::load(fixture("toy/vocab.tsv")))?;
    let data = e(load_instances(fixture("toy/instances.jsonl"), &bank))?;
    let toy = ToyMlm::new();
    let mut cells = 0;
    for method in [Method::Inference, Method::Iterative] {
        let config = CausalConfig {
            method,
            k: 16,
            bootstrap_resamples: 0,
            ..CausalConfig::default()
        };
        let baseline = e(Baseline::compute(&toy, &data.instances, &vocab, &config))?;
        for layer in 0..=4 {
            let res = e(run_intervention(&toy, &baseline, &Intervention::Identity, layer))?;
            ensure!(
                res.skipped.is_empty(),
                "{method:?} layer {layer}: {} skipped",
                res.skipped.len()
            );
            for i in &res.instances {
                ensure!(
                    i.expected_before == i.expected_after && i.complementary_before == i.complementary_after,
                    "{method:?} layer {layer} {}: scores moved",
                    i.id
                );
            }
            for r in &res.rows {
                ensure!(
                    r.shift == 0.0,
                    "{method:?} layer {layer} {} {:?}: shift {}",
                    r.class,
                    r.context_type,
                    r.shift
                );
                cells += 1;
            }
        }
    }
    Ok(format!("{cells} cells, every shift 0"))
}

fn f_half_checks() -> Result<String, String> {
    // perfective: tp 4, fn 4, fp 1
    let conf = Confusion {
        counts: [[4, 4], [1, 3]],
    };
    let s = f_half(&conf);
    ensure!(
        (s[0].precision - 0.8).abs() < 1e-12 && (s[0].recall - 0.5).abs() < 1e-12,
        "P/R {:?}",
        s[0]
    );
    ensure!((s[0].f_half - 0.714286).abs() <= 1e-6, "F0.5 {}", s[0].f_half);
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        ..ProptestConfig::default()
    });
    runner
        .run(&proptest::array::uniform4(0u64..100), |c| {
            let conf = Confusion {
                counts: [[c[0], c[1]], [c[2], c[3]]],
            };
            let a = f_half(&conf);
            let b = f_half(&conf.swapped());
            prop_assert_eq!(&a[0], &b[1]);
            prop_assert_eq!(&a[1], &b[0]);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("F0.5 = {:.6}, swap symmetry on 1000 matrices", s[0].f_half))
}

struct TwoPoint {
    a: f64,
    b: f64,
}

impl DropoutScorer for TwoPoint {
    fn len(&self) -> usize {
        1
    }

    fn sample(&self, _: usize, n: usize, _: u64) -> aspectprobe_core::Result<Vec<[f64; 2]>> {
        Ok((0..n)
            .map(|i| {
                let s = if i % 2 == 0 { self.a } else { self.b };
                [s, 1.0 - s]
            })
            .collect())
    }
}

fn mc_dropout_checks() -> Result<String, String> {
    let item = [("x".to_string(), ContextType::Alternative)];
    for (a, b) in [(0.9, 0.3), (0.5, 0.5), (0.01, 0.99)] {
        let est = e(mc_dropout(&TwoPoint { a, b }, &item, 20, 0))?;
        let want = ((a - b) / 2.0f64).powi(2);
        for c in 0..2 {
            let v = est.instances[0].variance[c];
            ensure!((v - want).abs() <= 1e-9, "({a},{b}) class {c}: {v} vs {want}");
        }
    }

    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0).collect())
        .collect();
    let labels: Vec<Aspect> = (0..40)
        .map(|i| {
            if rows[i][0] > 0.0 {
                Aspect::Perfective
            } else {
                Aspect::Imperfective
            }
        })
        .collect();
    let head = train_head(
        &rows,
        &labels,
        0,
        &HeadParams {
            dropout_rate: 0.0,
            ..HeadParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let items: Vec<(String, ContextType)> = (0..rows.len())
        .map(|i| (i.to_string(), ContextType::NonAlternative))
        .collect();
    let est = e(mc_dropout(
        &HeadScorer {
            head: &head,
            rows: &rows,
        },
        &items,
        20,
        9,
    ))?;
    ensure!(
        est.instances.iter().all(|i| i.variance == [0.0, 0.0]),
        "head without dropout has variance"
    );

    let toy = ToyMlm::new().with_dropout_rate(0.0);
    let enc = e(toy.encode("yesterday he chital the book .", CharSpan::new(13, 19)))?;
    let samples = e(toy.dropout_samples(&enc.token_ids, enc.mask_position, 10, 3))?;
    ensure!(
        samples.windows(2).all(|w| w[0] == w[1]),
        "toy backend without dropout varies"
    );
    Ok("two-point stub within 1e-9, zero-rate head and backend variance 0".into())
}

fn miner_golden() -> Result<String, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = out.path().display().to_string();
    let cfg = fixture("miner/config.json").display().to_string();
    let run = aspectprobe(&["mine-cues", "-c", &cfg, "-o", &dir]);
    ensure!(
        run.status.success(),
        "mine-cues failed: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    let got = fs::read_to_string(out.path().join("boundedness.jsonl")).map_err(|e| e.to_string())?;
    let want = fs::read_to_string(golden("miner_boundedness.jsonl")).map_err(|e| e.to_string())?;
    ensure!(got == want, "output differs from the golden file");
    let corpus = fs::read_to_string(fixture("miner/corpus.conllu")).map_err(|e| e.to_string())?;
    let sentences = corpus.lines().filter(|l| l.starts_with("# text")).count();
    ensure!(sentences == 10, "fixture has {sentences} sentences");
    let (mut bounded, mut unbounded) = (0, 0);
    let mut categories = std::collections::BTreeSet::new();
    for line in got.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        match v["label"].as_str() {
            Some("bounded") => bounded += 1,
            Some("unbounded") => unbounded += 1,
            other => return Err(format!("label {other:?}")),
        }
        categories.insert(v["category"].as_str().unwrap_or("").to_string());
    }
    ensure!(
        bounded == unbounded && bounded > 0,
        "{bounded} bounded vs {unbounded} unbounded"
    );
    ensure!(categories.len() == 7, "categories {categories:?}");
    let stats = fs::read_to_string(out.path().join("mine_stats.csv")).map_err(|e| e.to_string())?;
    let counter = |name: &str| {
        rows(&stats)
            .into_iter()
            .find(|r| r["counter"] == name)
            .map(|r| r["value"].clone())
            .unwrap_or_default()
    };
    ensure!(
        counter("excluded_negated") == "1",
        "negated counter {}",
        counter("excluded_negated")
    );
    ensure!(
        counter("excluded_ambiguous") == "1",
        "ambiguous counter {}",
        counter("excluded_ambiguous")
    );
    Ok(format!(
        "{} instances, {bounded}/{unbounded}, 7 categories",
        bounded + unbounded
    ))
}

fn cli_determinism() -> Result<String, String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let shared = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_all(a.path(), shared.path());
    let second = run_all(b.path(), shared.path());
    let mut csvs = 0;
    for (x, y) in first.iter().zip(&second) {
        let (fx, fy) = (files(x), files(y));
        for (name, bytes) in fx.iter().filter(|(n, _)| n.ends_with(".csv")) {
            ensure!(fy.get(name) == Some(bytes), "{} differs", x.join(name).display());
            csvs += 1;
        }
    }
    Ok(format!("{} pipelines, {csvs} CSV files identical", first.len()))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("iterative masking equals brute-force chain", iterative_masking_oracle),
        ("aspect inference equals enumeration", inference_enumeration),
        ("INLP invariants", inlp_invariants),
        ("counterfactual algebra", counterfactual_algebra),
        ("identity intervention null effect", identity_null_effect),
        ("F0.5", f_half_checks),
        ("MC dropout variance", mc_dropout_checks),
        ("miner golden", miner_golden),
        ("CLI determinism", cli_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({detail}; {secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
