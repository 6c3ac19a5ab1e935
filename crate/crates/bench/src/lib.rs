// SPDX-License-Identifier: MIT OR Apache-2.0

//! Workloads for the criterion benches: seeded Gaussian features and a
//! generated CoNLL-U corpus.

use aspectprobe_core::subspace::FeatureSet;
use aspectprobe_core::Boundedness;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// `n` rows in `d` dimensions, half of them bounded. The first `m`
/// coordinates carry the class signal.
pub fn gaussian_features(d: usize, m: usize, n: usize, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = Normal::new(0.6, 0.3).expect("valid normal");
    let mut fs = FeatureSet::default();
    for i in 0..n {
        let bounded = i % 2 == 0;
        let mut row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        for x in row.iter_mut().take(m) {
            let s: f64 = shift.sample(&mut rng);
            *x += if bounded { s } else { -s };
        }
        fs.ids.push(format!("r{i}"));
        fs.rows.push(row);
        fs.labels.push(if bounded {
            Boundedness::Bounded
        } else {
            Boundedness::Unbounded
        });
    }
    fs
}

/// A corpus of `n` short parsed sentences that alternate an iterative and a
/// resultative adverb modifying the main verb.
pub fn conllu_corpus(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        let (adv, verb, lemma) = if i % 2 == 0 {
            ("часто", "читал", "читать")
        } else {
            ("вдруг", "прочитал", "прочитать")
        };
        out += &format!("# sent_id = s{i}\n# text = Он {adv} {verb} книгу\n");
        out += "1\tОн\tон\tPRON\t_\t_\t3\tnsubj\t_\t_\n";
        out += &format!("2\t{adv}\t{adv}\tADV\t_\t_\t3\tadvmod\t_\t_\n");
        out += &format!("3\t{verb}\t{lemma}\tVERB\t_\t_\t0\troot\t_\t_\n");
        out += "4\tкнигу\tкнига\tNOUN\t_\t_\t3\tobj\t_\t_\n\n";
    }
    out
}
