//! Tokenization and a small trainable transformer encoder.

pub mod params;
pub mod tape;

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{Adam, CheckpointError, Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};

use crate::text;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const SPLIT: &str = "[SPLIT]";
pub const SEP: &str = "[SEP]";
pub const SPECIALS: [&str; 10] = [PAD, UNK, SPLIT, SEP, "[P0]", "[P1]", "[P2]", "[P3]", "[P4]", "[P5]"];
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SPLIT_ID: usize = 2;
pub const SEP_ID: usize = 3;

/// Id of the `[Pn]` token.
pub fn speaker_token_id(index: usize) -> usize {
    4 + index
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err("vocabulary must start with the special tokens".into());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate token {t:?}"));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocab {
    /// Specials followed by `tokens` in order, skipping duplicates.
    pub fn from_tokens(tokens: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut out: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = out.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for t in tokens {
            let t = t.into();
            if !index.contains_key(&t) {
                index.insert(t.clone(), out.len());
                out.push(t);
            }
        }
        Self { tokens: out, index }
    }

    /// Builds a vocabulary from raw texts, keeping pieces seen at least
    /// `min_count` times, most frequent first, up to `max_size` entries in total.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_size: Option<usize>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for p in text::pieces(t) {
                if SPECIALS.contains(&p) {
                    continue;
                }
                *counts.entry(p.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(SPECIALS.len()));
        Self::from_tokens(ranked.into_iter().take(room).map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text::pieces(text)
            .into_iter()
            .map(|p| {
                if SPECIALS.contains(&p) {
                    self.index[p]
                } else {
                    self.id(&p.to_lowercase()).unwrap_or(UNK_ID)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    Full,
    /// Symmetric half-width: position i sees j when |i - j| <= w.
    Window(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub attention: Attention,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: 64, layers: 2, heads: 2, max_len: 512, attention: Attention::Window(128), dropout: 0.1, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {0} outside the vocabulary")]
    UnknownId(usize),
}

impl EncoderConfig {
    /// Full-size sizing: 2000 tokens, sliding window of 256 total width.
    pub fn full_scale() -> Self {
        Self { dim: 768, layers: 12, heads: 12, max_len: 2000, attention: Attention::Window(128), dropout: 0.1, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.into()));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return bad("dim must be a positive multiple of heads");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if self.attention == Attention::Window(0) {
            return bad("window half-width must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Which (query, key) pairs may interact. `ids` marks padding keys closed.
pub fn attention_mask(ids: &[usize], attention: Attention) -> Array2<bool> {
    let n = ids.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let near = match attention {
            Attention::Full => true,
            Attention::Window(w) => i.abs_diff(j) <= w,
        };
        near && ids[j] != PAD_ID
    })
}

/// Number of (query, key) pairs scored for a length-`len` sequence.
pub fn attention_pair_count(len: usize, attention: Attention) -> u64 {
    let l = len as u64;
    match attention {
        Attention::Full => l * l,
        Attention::Window(w) => {
            // diagonal plus both off-diagonal bands of width min(w, L-1)
            let d = (w as u64).min(l.saturating_sub(1));
            l + 2 * (d * l - d * (d + 1) / 2)
        }
    }
}

struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm transformer over learned token and position embeddings.
pub struct Encoder {
    pub config: EncoderConfig,
    vocab_size: usize,
    tok: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub matrix: Array2<f64>,
    pub ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

const INIT_STD: f64 = 0.02;

impl Encoder {
    /// Registers encoder parameters in `store` under the `enc.` prefix.
    pub fn new(config: EncoderConfig, vocab_size: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self, EncoderError> {
        config.validate()?;
        let d = config.dim;
        let tok = store.add_normal("enc.tok", vocab_size, d, INIT_STD, rng);
        let pos = store.add_normal("enc.pos", config.max_len, d, INIT_STD, rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut w = |name: &str, r: usize, c: usize| store.add_normal(format!("enc.{l}.{name}"), r, c, INIT_STD, rng);
            let (wq, wk, wv, wo) = (w("wq", d, d), w("wk", d, d), w("wv", d, d), w("wo", d, d));
            let (w1, w2) = (w("w1", d, 4 * d), w("w2", 4 * d, d));
            let mut z = |name: &str, c: usize, v: f64| store.add(format!("enc.{l}.{name}"), Array2::from_elem((1, c), v));
            blocks.push(Block {
                ln1_g: z("ln1_g", d, 1.0),
                ln1_b: z("ln1_b", d, 0.0),
                wq,
                bq: z("bq", d, 0.0),
                wk,
                bk: z("bk", d, 0.0),
                wv,
                bv: z("bv", d, 0.0),
                wo,
                bo: z("bo", d, 0.0),
                ln2_g: z("ln2_g", d, 1.0),
                ln2_b: z("ln2_b", d, 0.0),
                w1,
                b1: z("b1", 4 * d, 0.0),
                w2,
                b2: z("b2", d, 0.0),
            });
        }
        let lnf_g = store.add("enc.lnf_g", Array2::ones((1, d)));
        let lnf_b = store.add("enc.lnf_b", Array2::zeros((1, d)));
        Ok(Self { config, vocab_size, tok, pos, blocks, lnf_g, lnf_b })
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<(), EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        if ids.len() > self.config.max_len {
            return Err(EncoderError::SequenceTooLong { len: ids.len(), max: self.config.max_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(EncoderError::UnknownId(bad));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`, returning the L×D hidden states.
    /// Dropout is active only when `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[usize],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, EncoderError> {
        self.check_ids(ids)?;
        let n = ids.len();
        let d = self.config.dim;
        let dh = d / self.config.heads;
        let mask = attention_mask(ids, self.config.attention);
        let positions: Vec<usize> = (0..n).collect();

        let tok = tape.param(store, self.tok);
        let pos = tape.param(store, self.pos);
        let te = tape.gather(tok, ids);
        let pe = tape.gather(pos, &positions);
        let mut x = tape.add(te, pe);

        let p = self.config.dropout;
        let mut dropout = |tape: &mut Tape, v: Var| -> Var {
            match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let dim = tape.value(v).dim();
                    let keep = Array2::from_shape_simple_fn(dim, || if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) });
                    tape.mul_const(v, keep)
                }
                _ => v,
            }
        };

        for b in &self.blocks {
            let h = layer_norm(tape, store, x, b.ln1_g, b.ln1_b);
            let q = linear(tape, store, h, b.wq, b.bq);
            let k = linear(tape, store, h, b.wk, b.bk);
            let v = linear(tape, store, h, b.wv, b.bv);
            let mut heads = Vec::with_capacity(self.config.heads);
            for hi in 0..self.config.heads {
                let qh = tape.cols(q, hi * dh, dh);
                let kh = tape.cols(k, hi * dh, dh);
                let vh = tape.cols(v, hi * dh, dh);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
                let attn = tape.masked_softmax(scores, &mask);
                heads.push(tape.matmul(attn, vh));
            }
            let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
            let o = linear(tape, store, cat, b.wo, b.bo);
            let o = dropout(tape, o);
            x = tape.add(x, o);

            let h = layer_norm(tape, store, x, b.ln2_g, b.ln2_b);
            let f = linear(tape, store, h, b.w1, b.b1);
            let f = tape.gelu(f);
            let f = linear(tape, store, f, b.w2, b.b2);
            let f = dropout(tape, f);
            x = tape.add(x, f);
        }
        Ok(layer_norm(tape, store, x, self.lnf_g, self.lnf_b))
    }

    /// Eval-mode encoding.
    pub fn encode(&self, store: &ParamStore, ids: &[usize]) -> Result<HiddenStates, EncoderError> {
        let mut tape = Tape::new();
        let h = self.forward(&mut tape, store, ids, None)?;
        Ok(HiddenStates {
            matrix: tape.value(h).clone(),
            ids: ids.to_vec(),
            pad_mask: ids.iter().map(|&i| i != PAD_ID).collect(),
        })
    }
}

fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
    let w = tape.param(store, w);
    let b = tape.param(store, b);
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, g: ParamId, b: ParamId) -> Var {
    let g = tape.param(store, g);
    let b = tape.param(store, b);
    tape.layer_norm(x, g, b)
}

/// Seeded generator for parameter init and dropout.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
