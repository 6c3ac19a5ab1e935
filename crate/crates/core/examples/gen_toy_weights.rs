// SPDX-License-Identifier: MIT OR Apache-2.0

//! Regenerates `data/toy_mlm.json`, the fixed weights of the built-in toy MLM.
//!
//! The file is checked in; run this only when the toy architecture changes:
//!
//! ```text
//! cargo run -p aspectprobe-core --example gen_toy_weights > crates/core/data/toy_mlm.json
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

const SEED: u64 = 0x5eed_a59e;
const D: usize = 16;
const FF: usize = 32;
const N_LAYERS: usize = 4;
const MAX_LEN: usize = 32;

const VOCAB: [&str; 64] = [
    "[PAD]",
    "[UNK]",
    "[CLS]",
    "[SEP]",
    "[MASK]",
    ".",
    ",",
    "he",
    "she",
    "they",
    "always",
    "suddenly",
    "began",
    "could",
    "every",
    "day",
    "new",
    "year",
    "forest",
    "in",
    "to",
    "finally",
    "liked",
    "forgot",
    "the",
    "book",
    "song",
    "letter",
    "will",
    "not",
    "chital",
    "prochital",
    "chitali",
    "prochitali",
    "pel",
    "spel",
    "peli",
    "speli",
    "pisal",
    "napisal",
    "pisali",
    "napisali",
    "delal",
    "sdelal",
    "chitat",
    "prochitat",
    "pet",
    "spet",
    "za",
    "pere",
    "ras",
    "bud",
    "##pel",
    "##pisal",
    "##chital",
    "##pis",
    "##yval",
    "##ska",
    "##zal",
    "##zyval",
    "##et",
    "##i",
    "often",
    "yesterday",
];

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Value {
    let normal = Normal::new(0.0, std).unwrap();
    Value::Array(
        (0..rows)
            .map(|_| Value::Array((0..cols).map(|_| json!(round6(normal.sample(rng)))).collect()))
            .collect(),
    )
}

fn vector(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Value {
    let normal = Normal::new(0.0, std).unwrap();
    Value::Array((0..len).map(|_| json!(round6(normal.sample(rng)))).collect())
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let proj = 1.0 / (D as f64).sqrt();
    let token_embedding = matrix(&mut rng, VOCAB.len(), D, 0.6);
    let position_embedding = matrix(&mut rng, MAX_LEN, D, 0.3);
    let blocks: Vec<Value> = (0..N_LAYERS)
        .map(|_| {
            json!({
                "wq": matrix(&mut rng, D, D, proj),
                "wk": matrix(&mut rng, D, D, proj),
                "wv": matrix(&mut rng, D, D, proj),
                "wo": matrix(&mut rng, D, D, proj),
                "w1": matrix(&mut rng, D, FF, proj),
                "b1": vector(&mut rng, FF, 0.02),
                "w2": matrix(&mut rng, FF, D, 1.0 / (FF as f64).sqrt()),
                "b2": vector(&mut rng, D, 0.02),
            })
        })
        .collect();
    let output_bias = vector(&mut rng, VOCAB.len(), 0.5);

    let model = json!({
        "model_id": "toy-mlm-v1",
        "seed": SEED,
        "n_layers": N_LAYERS,
        "n_heads": 2,
        "hidden_size": D,
        "ff_size": FF,
        "max_len": MAX_LEN,
        "dropout_rate": 0.1,
        "vocab": VOCAB.to_vec(),
        "token_embedding": token_embedding,
        "position_embedding": position_embedding,
        "blocks": blocks,
        "output_bias": output_bias,
    });
    println!("{}", serde_json::to_string(&model).unwrap());
}
