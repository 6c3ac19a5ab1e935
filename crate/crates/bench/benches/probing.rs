// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;
use std::hint::black_box;

use aspectprobe_bench::{conllu_corpus, gaussian_features};
use aspectprobe_core::backend::ToyMlm;
use aspectprobe_core::behavioral::{aspect_inference, iterative_masking, FormChoice};
use aspectprobe_core::cuemine::{mine, ConlluReader, MineConfig};
use aspectprobe_core::lexicon::default_russian_cues;
use aspectprobe_core::subspace::{train_inlp_features, InlpConfig, SgdParams};
use aspectprobe_core::{Aspect, AspectBank, CharSpan, ContextType, ProbingInstance, PushDirection, VocabFeatureMap};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn instance(form: &str) -> ProbingInstance {
    ProbingInstance {
        id: form.into(),
        text: format!("yesterday he {form} the book ."),
        target_span: CharSpan::new(13, 13 + form.chars().count()),
        expected_form: form.into(),
        complementary_form: form.into(),
        expected_aspect: Aspect::Imperfective,
        context_type: ContextType::NonAlternative,
        expected_lemma: None,
        complementary_lemma: None,
        expected_number: None,
        expected_feats: None,
    }
}

fn behavioral(c: &mut Criterion) {
    let toy = ToyMlm::new();
    let layers: Vec<usize> = (0..=4).collect();
    let mut g = c.benchmark_group("iterative_masking");
    for form in ["chital", "zapel", "perepisyval"] {
        let inst = instance(form);
        g.bench_with_input(BenchmarkId::from_parameter(form), &inst, |b, inst| {
            b.iter(|| iterative_masking(&toy, black_box(inst), FormChoice::Expected, &layers).unwrap())
        });
    }
    g.finish();

    let tags = VocabFeatureMap::from_entries(
        [
            ("chital".to_string(), Aspect::Imperfective),
            ("prochital".to_string(), Aspect::Perfective),
        ],
        [],
    );
    let inst = instance("chital");
    c.bench_function("aspect_inference/k=64", |b| {
        b.iter(|| aspect_inference(&toy, black_box(&inst), &tags, 64, &layers).unwrap())
    });
}

fn inlp(c: &mut Criterion) {
    let mut g = c.benchmark_group("inlp");
    g.sample_size(10);
    for m in [1usize, 5] {
        let fs = gaussian_features(64, m, 2000, 11);
        let config = InlpConfig {
            m,
            sgd: SgdParams {
                early_stopping: false,
                ..SgdParams::default()
            },
            ..InlpConfig::default()
        };
        g.bench_with_input(BenchmarkId::new("train", m), &fs, |b, fs| {
            b.iter(|| train_inlp_features(black_box(fs), 0, &config).unwrap())
        });
    }
    g.finish();

    let fs = gaussian_features(1024, 8, 400, 12);
    let config = InlpConfig {
        m: 8,
        ..InlpConfig::default()
    };
    let subspace = train_inlp_features(&fs, 0, &config).unwrap().subspace;
    let h = fs.rows[0].clone();
    c.bench_function("counterfactual/d=1024,m=8", |b| {
        b.iter(|| subspace.counterfactual(black_box(&h), PushDirection::Negative).unwrap())
    });
}

fn miner(c: &mut Criterion) {
    let corpus = conllu_corpus(2000);
    let patterns = default_russian_cues();
    let bank = AspectBank::default();
    let exclude = HashSet::new();
    let config = MineConfig::default();
    c.bench_function("mine/2000_sentences", |b| {
        b.iter(|| {
            mine(
                ConlluReader::new(black_box(corpus.as_bytes())),
                &patterns,
                &bank,
                &exclude,
                &config,
            )
        })
    });
}

criterion_group!(benches, behavioral, inlp, miner);
criterion_main!(benches);
