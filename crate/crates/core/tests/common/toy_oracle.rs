// SPDX-License-Identifier: MIT OR Apache-2.0

//! Straight-line recomputation of the toy model from its JSON weights.
//!
//! Shares no code with the library: weights are read through untyped JSON,
//! projections are written as explicit index sums, and attention is computed
//! as a full score matrix per head.

use serde_json::Value;

pub struct Oracle {
    pub vocab: Vec<String>,
    d: usize,
    heads: usize,
    tok: Vec<Vec<f64>>,
    pos: Vec<Vec<f64>>,
    out_bias: Vec<f64>,
    blocks: Vec<Block>,
}

struct Block {
    wq: Vec<Vec<f64>>,
    wk: Vec<Vec<f64>>,
    wv: Vec<Vec<f64>>,
    wo: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

fn vec1(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn mat(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().unwrap().iter().map(vec1).collect()
}

/// out[j] = sum_i x[i] * w[i][j]
fn proj(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let cols = w[0].len();
    (0..cols).map(|j| (0..x.len()).map(|i| x[i] * w[i][j]).sum()).collect()
}

fn norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu: f64 = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sd = (var + 1e-5).sqrt();
    x.iter().map(|v| (v - mu) / sd).collect()
}

fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn round32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

impl Oracle {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/toy_mlm.json")).unwrap();
        let w: Value = serde_json::from_str(&text).unwrap();
        let blocks = w["blocks"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| Block {
                wq: mat(&b["wq"]),
                wk: mat(&b["wk"]),
                wv: mat(&b["wv"]),
                wo: mat(&b["wo"]),
                w1: mat(&b["w1"]),
                b1: vec1(&b["b1"]),
                w2: mat(&b["w2"]),
                b2: vec1(&b["b2"]),
            })
            .collect();
        Oracle {
            vocab: w["vocab"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| s.as_str().unwrap().to_string())
                .collect(),
            d: w["hidden_size"].as_u64().unwrap() as usize,
            heads: w["n_heads"].as_u64().unwrap() as usize,
            tok: mat(&w["token_embedding"]),
            pos: mat(&w["position_embedding"]),
            out_bias: vec1(&w["output_bias"]),
            blocks,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.vocab
            .iter()
            .position(|t| t == token)
            .unwrap_or_else(|| panic!("{token} not in vocab")) as u32
    }

    pub fn ids(&self, tokens: &[&str]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    fn block(&self, b: &Block, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = h.len();
        let hd = self.d / self.heads;
        let x: Vec<Vec<f64>> = h.iter().map(|r| norm(r)).collect();
        let q: Vec<Vec<f64>> = x.iter().map(|r| proj(r, &b.wq)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|r| proj(r, &b.wk)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|r| proj(r, &b.wv)).collect();
        let mut ctx = vec![vec![0.0; self.d]; n];
        for head in 0..self.heads {
            let off = head * hd;
            let scores: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..hd).map(|c| q[i][off + c] * k[j][off + c]).sum::<f64>() / (hd as f64).sqrt())
                        .collect()
                })
                .collect();
            for i in 0..n {
                let a = softmax(&scores[i]);
                for c in 0..hd {
                    ctx[i][off + c] = (0..n).map(|j| a[j] * v[j][off + c]).sum();
                }
            }
        }
        (0..n)
            .map(|i| {
                let o = proj(&ctx[i], &b.wo);
                let mid: Vec<f64> = (0..self.d).map(|c| h[i][c] + o[c]).collect();
                let y = norm(&mid);
                let pre: Vec<f64> = proj(&y, &b.w1).iter().zip(&b.b1).map(|(a, c)| a + c).collect();
                let act: Vec<f64> = pre.into_iter().map(gelu_tanh).collect();
                let ff = proj(&act, &b.w2);
                round32((0..self.d).map(|c| mid[c] + ff[c] + b.b2[c]).collect())
            })
            .collect()
    }

    /// Residual states after every layer `0..=n_layers`, with an optional
    /// replacement of `(layer, position)` by `vector`.
    pub fn states(&self, ids: &[u32], substitute: Option<(usize, usize, &[f64])>) -> Vec<Vec<Vec<f64>>> {
        let mut h: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(p, &t)| round32((0..self.d).map(|c| self.tok[t as usize][c] + self.pos[p][c]).collect()))
            .collect();
        let mut all = Vec::new();
        for layer in 0..=self.n_layers() {
            if layer > 0 {
                h = self.block(&self.blocks[layer - 1], &h);
            }
            if let Some((l, p, vec)) = substitute {
                if l == layer {
                    h[p] = vec.to_vec();
                }
            }
            all.push(h.clone());
        }
        all
    }

    /// Full-vocabulary distribution of the MLM head applied to `h`.
    pub fn head(&self, h: &[f64]) -> Vec<f64> {
        let x = norm(h);
        let logits: Vec<f64> = self
            .tok
            .iter()
            .zip(&self.out_bias)
            .map(|(e, b)| e.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect();
        softmax(&logits)
    }

    /// Head-on-layer distribution at `position` for every layer.
    pub fn layer_distributions(&self, ids: &[u32], position: usize) -> Vec<Vec<f64>> {
        self.states(ids, None).iter().map(|s| self.head(&s[position])).collect()
    }

    /// Iterative masking by brute force: average over i of P(V_i | context, V_1..V_{i-1})
    /// where the remaining subtokens collapse into one mask.
    pub fn chain(&self, left: &[&str], gold: &[&str], right: &[&str], layer: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..gold.len() {
            let mut toks: Vec<&str> = vec!["[CLS]"];
            toks.extend_from_slice(left);
            toks.extend_from_slice(&gold[..i]);
            let mask = toks.len();
            toks.push("[MASK]");
            toks.extend_from_slice(right);
            toks.push("[SEP]");
            let ids = self.ids(&toks);
            let dist = &self.layer_distributions(&ids, mask)[layer];
            total += dist[self.id(gold[i]) as usize];
        }
        total / gold.len() as f64
    }
}
