// SPDX-License-Identifier: MIT OR Apache-2.0

//! Built-in toy masked LM: 4 pre-norm blocks, 2 heads, `d = 16`, 64 tokens.
//!
//! Weights ship as `data/toy_mlm.json`. Arithmetic runs in `f64`; the residual
//! stream is rounded to `f32` at every layer boundary so that hidden states
//! handed out by [`MaskedLm::hidden_state`] substitute back bit-exactly.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{
    check_single_mask, find_single_mask, insert_gold_prefix, top_entries, BackendErrorCode, BackendMeta,
    MaskDistribution, MaskRequest, MaskedLm, SubstituteRequest, TokenId, TokenizedTarget,
};
use crate::error::{Error, Result};
use crate::types::CharSpan;

const LN_EPS: f64 = 1e-5;
const PUNCT: [char; 6] = ['.', ',', '!', '?', ';', ':'];

#[derive(Debug, Clone, Deserialize)]
struct BlockWeights {
    wq: Vec<Vec<f64>>,
    wk: Vec<Vec<f64>>,
    wv: Vec<Vec<f64>>,
    wo: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct ToyWeights {
    model_id: String,
    n_layers: usize,
    n_heads: usize,
    hidden_size: usize,
    max_len: usize,
    dropout_rate: f64,
    vocab: Vec<String>,
    token_embedding: Vec<Vec<f64>>,
    position_embedding: Vec<Vec<f64>>,
    blocks: Vec<BlockWeights>,
    output_bias: Vec<f64>,
}

/// Whitespace + punctuation splitter followed by greedy longest-match
/// word pieces (`##` marks a continuation piece).
#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    unk: TokenId,
}

impl ToyTokenizer {
    fn new(vocab: Vec<String>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect::<HashMap<_, _>>();
        let unk = index["[UNK]"];
        ToyTokenizer { vocab, index, unk }
    }

    /// Id of a vocabulary string.
    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Vocabulary string of an id.
    pub fn token(&self, id: TokenId) -> &str {
        self.vocab.get(id as usize).map(String::as_str).unwrap_or("[UNK]")
    }

    /// All vocabulary strings.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Lowercased words with punctuation split off.
    pub fn words(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut cur = String::new();
            for c in chunk.chars() {
                if PUNCT.contains(&c) {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(c.to_string());
                } else {
                    cur.extend(c.to_lowercase());
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }

    fn word_pieces(&self, word: &str) -> Vec<TokenId> {
        if let Some(id) = self.id(word) {
            return vec![id];
        }
        let mut pieces = Vec::new();
        let mut rest = word;
        let mut first = true;
        while !rest.is_empty() {
            let found = rest
                .char_indices()
                .map(|(b, c)| b + c.len_utf8())
                .rev()
                .find_map(|end| {
                    let piece = &rest[..end];
                    let key = if first { piece.to_string() } else { format!("##{piece}") };
                    self.id(&key).map(|id| (id, end))
                });
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    rest = &rest[end..];
                    first = false;
                }
                None => return vec![self.unk],
            }
        }
        pieces
    }

    /// Token ids of `text` (no special tokens).
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        Self::words(text).iter().flat_map(|w| self.word_pieces(w)).collect()
    }

    /// Inverse of [`tokenize`](Self::tokenize) up to normalization; special tokens are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id);
            if tok.starts_with('[') && tok.ends_with(']') && tok != "[UNK]" {
                continue;
            }
            if let Some(rest) = tok.strip_prefix("##") {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }

    /// The normalization `decode(tokenize(text))` applies to in-vocabulary text.
    pub fn normalize(text: &str) -> String {
        Self::words(text).join(" ")
    }
}

/// Deterministic toy transformer implementing [`MaskedLm`].
#[derive(Debug, Clone)]
pub struct ToyMlm {
    weights: ToyWeights,
    tokenizer: ToyTokenizer,
    dropout_rate: f64,
    mask_id: TokenId,
    cls_id: TokenId,
    sep_id: TokenId,
}

impl Default for ToyMlm {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyMlm {
    /// Loads the bundled weights.
    pub fn new() -> Self {
        Self::from_json(include_str!("../../data/toy_mlm.json")).expect("bundled toy weights parse")
    }

    /// Loads weights from their JSON form.
    pub fn from_json(json: &str) -> Result<Self> {
        let weights: ToyWeights = serde_json::from_str(json)?;
        let tokenizer = ToyTokenizer::new(weights.vocab.clone());
        let special = |t: &str| {
            tokenizer
                .id(t)
                .ok_or_else(|| Error::InvalidInput(format!("toy vocab lacks {t}")))
        };
        let mask_id = special("[MASK]")?;
        let cls_id = special("[CLS]")?;
        let sep_id = special("[SEP]")?;
        Ok(ToyMlm {
            dropout_rate: weights.dropout_rate,
            weights,
            tokenizer,
            mask_id,
            cls_id,
            sep_id,
        })
    }

    /// Same model with a different dropout rate for [`MaskedLm::dropout_samples`].
    pub fn with_dropout_rate(mut self, rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        self.dropout_rate = rate;
        self
    }

    /// The tokenizer.
    pub fn tokenizer(&self) -> &ToyTokenizer {
        &self.tokenizer
    }

    /// Vocabulary string of `id`.
    pub fn token(&self, id: TokenId) -> &str {
        self.tokenizer.token(id)
    }

    fn d(&self) -> usize {
        self.weights.hidden_size
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.len() > self.weights.max_len {
            return Err(Error::backend_detail(
                BackendErrorCode::InputTooLong,
                format!("{} tokens > max_len {}", ids.len(), self.weights.max_len),
            ));
        }
        if let Some(bad) = ids.iter().find(|&&t| t as usize >= self.weights.vocab.len()) {
            return Err(Error::backend_detail(
                BackendErrorCode::TokenOutOfRange,
                format!("token id {bad}"),
            ));
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer > self.weights.n_layers {
            return Err(Error::backend_detail(
                BackendErrorCode::LayerOutOfRange,
                format!("layer {layer} > {}", self.weights.n_layers),
            ));
        }
        Ok(())
    }

    fn embed(&self, ids: &[TokenId]) -> Vec<Vec<f32>> {
        ids.iter()
            .enumerate()
            .map(|(p, &t)| {
                let e = &self.weights.token_embedding[t as usize];
                let pe = &self.weights.position_embedding[p];
                e.iter().zip(pe).map(|(a, b)| (a + b) as f32).collect()
            })
            .collect()
    }

    fn block(&self, layer: usize, h: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let w = &self.weights.blocks[layer - 1];
        let d = self.d();
        let heads = self.weights.n_heads;
        let hd = d / heads;
        let seq = h.len();
        let x: Vec<Vec<f64>> = h.iter().map(|r| layer_norm(&widen(r))).collect();
        let q: Vec<Vec<f64>> = x.iter().map(|r| matvec(r, &w.wq)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|r| matvec(r, &w.wk)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|r| matvec(r, &w.wv)).collect();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut ctx = vec![vec![0.0; d]; seq];
        for head in 0..heads {
            let cols = head * hd..(head + 1) * hd;
            for i in 0..seq {
                let scores: Vec<f64> = (0..seq)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() * scale)
                    .collect();
                let attn = softmax(&scores);
                for (j, a) in attn.iter().enumerate() {
                    for c in cols.clone() {
                        ctx[i][c] += a * v[j][c];
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(seq);
        for i in 0..seq {
            let attn_out = matvec(&ctx[i], &w.wo);
            let mid: Vec<f64> = widen(&h[i]).iter().zip(&attn_out).map(|(a, b)| a + b).collect();
            let y = layer_norm(&mid);
            let hidden: Vec<f64> = matvec(&y, &w.w1).iter().zip(&w.b1).map(|(a, b)| gelu(a + b)).collect();
            let ff = matvec(&hidden, &w.w2);
            out.push(
                mid.iter()
                    .zip(ff.iter().zip(&w.b2))
                    .map(|(m, (f, b))| (m + f + b) as f32)
                    .collect(),
            );
        }
        out
    }

    /// Layer states `0..=upto`, optionally replacing one vector and applying dropout.
    fn run(
        &self,
        ids: &[TokenId],
        upto: usize,
        substitute: Option<(usize, usize, &[f32])>,
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Vec<Vec<Vec<f32>>> {
        let mut states = Vec::with_capacity(upto + 1);
        let mut h = self.embed(ids);
        for layer in 0..=upto {
            if layer > 0 {
                h = self.block(layer, &h);
            }
            if let Some((rng, rate)) = dropout.as_mut() {
                apply_dropout(&mut h, rng, *rate);
            }
            if let Some((sub_layer, pos, vector)) = substitute {
                if sub_layer == layer {
                    h[pos] = vector.to_vec();
                }
            }
            states.push(h.clone());
        }
        states
    }

    /// Final MLM head (normalization + tied unembedding) over the full vocabulary.
    fn head(&self, h: &[f32]) -> Vec<f64> {
        let x = layer_norm(&widen(h));
        let logits: Vec<f64> = self
            .weights
            .token_embedding
            .iter()
            .zip(&self.weights.output_bias)
            .map(|(e, b)| dot(&x, e) + b)
            .collect();
        softmax(&logits)
    }

    fn distribution(&self, layer: usize, probs: &[f64], top_n: usize, query: &[TokenId]) -> MaskDistribution {
        let top_n = top_n.min(probs.len());
        MaskDistribution {
            layer,
            entries: top_entries(probs, top_n, |id| self.token(id).to_string()),
            queried: query.iter().map(|&q| (q, probs[q as usize])).collect(),
        }
    }

    fn check_query(&self, query: &[TokenId]) -> Result<()> {
        match query.iter().find(|&&q| q as usize >= self.weights.vocab.len()) {
            Some(bad) => Err(Error::backend_detail(
                BackendErrorCode::SubtokenProbUnavailable,
                format!("token id {bad} outside vocabulary"),
            )),
            None => Ok(()),
        }
    }
}

impl MaskedLm for ToyMlm {
    fn meta(&self) -> Result<BackendMeta> {
        Ok(BackendMeta {
            model_id: self.weights.model_id.clone(),
            n_layers: self.weights.n_layers,
            hidden_size: self.weights.hidden_size,
            vocab_size: self.weights.vocab.len(),
            mask_token_id: self.mask_id,
            max_len: self.weights.max_len,
            supports_dropout: true,
            concurrent_safe: true,
        })
    }

    fn encode(&self, text: &str, target_span: CharSpan) -> Result<TokenizedTarget> {
        let range = target_span
            .byte_range(text)
            .filter(|_| !target_span.is_empty())
            .ok_or_else(|| Error::backend_detail(BackendErrorCode::InvalidSpan, format!("{target_span}")))?;
        let pre = self.tokenizer.tokenize(&text[..range.start]);
        let target = self.tokenizer.tokenize(&text[range.clone()]);
        let post = self.tokenizer.tokenize(&text[range.end..]);
        if target.is_empty() {
            return Err(Error::backend(BackendErrorCode::EmptyTarget));
        }
        let full_len = pre.len() + target.len() + post.len() + 2;
        if full_len > self.weights.max_len {
            return Err(Error::backend_detail(
                BackendErrorCode::InputTooLong,
                format!("{full_len} tokens > max_len {}", self.weights.max_len),
            ));
        }
        let mut token_ids = Vec::with_capacity(pre.len() + post.len() + 3);
        token_ids.push(self.cls_id);
        token_ids.extend(pre);
        let mask_position = token_ids.len();
        token_ids.push(self.mask_id);
        token_ids.extend(post);
        token_ids.push(self.sep_id);
        Ok(TokenizedTarget {
            token_ids,
            target_subtokens: target,
            mask_position,
        })
    }

    fn mask_distributions(&self, request: &MaskRequest) -> Result<Vec<MaskDistribution>> {
        check_single_mask(&request.token_ids, request.mask_position, self.mask_id)?;
        let (ids, mask) = insert_gold_prefix(&request.token_ids, request.mask_position, &request.gold_prefix);
        self.check_ids(&ids)?;
        self.check_query(&request.query_ids)?;
        for &l in &request.layers {
            self.check_layer(l)?;
        }
        if request.top_n > self.weights.vocab.len() {
            log::warn!(
                "top_n {} clipped to vocabulary size {}",
                request.top_n,
                self.weights.vocab.len()
            );
        }
        let upto = request.layers.iter().copied().max().unwrap_or(0);
        let states = self.run(&ids, upto, None, None);
        Ok(request
            .layers
            .iter()
            .map(|&l| {
                let probs = self.head(&states[l][mask]);
                self.distribution(l, &probs, request.top_n, &request.query_ids)
            })
            .collect())
    }

    fn hidden_state(&self, token_ids: &[TokenId], position: usize, layer: usize) -> Result<Vec<f32>> {
        self.check_ids(token_ids)?;
        self.check_layer(layer)?;
        if position >= token_ids.len() {
            return Err(Error::backend_detail(
                BackendErrorCode::PositionOutOfRange,
                format!("position {position} >= {}", token_ids.len()),
            ));
        }
        let states = self.run(token_ids, layer, None, None);
        Ok(states[layer][position].clone())
    }

    fn forward_substituted(&self, request: &SubstituteRequest) -> Result<MaskDistribution> {
        self.check_ids(&request.token_ids)?;
        self.check_layer(request.layer)?;
        self.check_query(&request.query_ids)?;
        if request.vector.len() != self.d() {
            return Err(Error::backend_detail(
                BackendErrorCode::DimensionMismatch,
                format!("vector length {} != {}", request.vector.len(), self.d()),
            ));
        }
        if request.position >= request.token_ids.len() {
            return Err(Error::backend(BackendErrorCode::PositionOutOfRange));
        }
        let mask = find_single_mask(&request.token_ids, self.mask_id)?;
        let n = self.weights.n_layers;
        let states = self.run(
            &request.token_ids,
            n,
            Some((request.layer, request.position, &request.vector)),
            None,
        );
        let probs = self.head(&states[n][mask]);
        Ok(self.distribution(n, &probs, request.top_n, &request.query_ids))
    }

    fn dropout_samples(
        &self,
        token_ids: &[TokenId],
        mask_position: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        check_single_mask(token_ids, mask_position, self.mask_id)?;
        self.check_ids(token_ids)?;
        let n = self.weights.n_layers;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n_samples)
            .map(|_| {
                let dropout = (self.dropout_rate > 0.0).then_some((&mut rng, self.dropout_rate));
                let states = self.run(token_ids, n, None, dropout);
                self.head(&states[n][mask_position])
            })
            .collect())
    }
}

fn apply_dropout(h: &mut [Vec<f32>], rng: &mut ChaCha8Rng, rate: f64) {
    let keep = 1.0 - rate;
    for row in h.iter_mut() {
        for x in row.iter_mut() {
            *x = if rng.random::<f64>() < rate {
                0.0
            } else {
                (*x as f64 / keep) as f32
            };
        }
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// x (len n) times W (n x m, row-major)
fn matvec(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let m = w.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
