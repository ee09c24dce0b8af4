//! Character predictors over anonymized scenes.
//!
//! Three architectures share one encoder, one token scorer and a
//! per-show linear classifier:
//!
//! * `LongformerP` encodes the whole scene once and pools each speaker's
//!   tokens with a softmax restricted to that speaker's mask.
//! * `MrEncoder` encodes short rows anchored on utterances, pools each row,
//!   zeroes rows not anchored by the speaker and classifies the concatenation.
//! * `Vanilla` encodes only the speaker's own utterances.

pub mod input;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{MaskedInstanceSet, Roster, SpeakerId};
use crate::nn::params::{self, CheckpointError, Gradients, ParamId, ParamStore};
use crate::nn::{attention_pair_count, seeded_rng, Encoder, EncoderConfig, EncoderError, HiddenStates, Tape, Var, Vocab};

pub use input::{build_flat_input, build_rows, build_vocab, speaker_only_input, FlatSceneInput, RowBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    LongformerP,
    MrEncoder,
    Vanilla,
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "longformer_p" | "longformerp" => Ok(Self::LongformerP),
            "mr_encoder" | "mr" | "mrencoder" => Ok(Self::MrEncoder),
            "vanilla" => Ok(Self::Vanilla),
            _ => Err(format!("unknown architecture {s:?} (longformer-p, mr, vanilla)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub encoder: EncoderConfig,
    /// Rows per scene for `MrEncoder`.
    pub rows: usize,
    /// Tokens per row for `MrEncoder`.
    pub row_len: usize,
    pub reverse: bool,
    pub fill_empty: bool,
    pub include_background: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::LongformerP,
            encoder: EncoderConfig::default(),
            rows: 12,
            row_len: 128,
            reverse: true,
            fill_empty: true,
            include_background: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate()?;
        if self.architecture == Architecture::MrEncoder {
            if self.rows == 0 || self.row_len < 3 {
                return Err(ModelError::InvalidConfig("rows must be >= 1 and row_len >= 3".into()));
            }
            if self.row_len > self.encoder.max_len {
                return Err(ModelError::InvalidConfig(format!("row_len {} exceeds encoder max_len {}", self.row_len, self.encoder.max_len)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("no dialogue token survives truncation")]
    AllTruncated,
    #[error("pooling mask selects no position")]
    EmptyMask,
    #[error("{present} speaker IDs cannot each get a row out of {rows}")]
    RowsUnrepresentable { present: usize, rows: usize },
    #[error("scene yields no valid row")]
    NoValidRows,
    #[error("speaker {0} does not speak in this scene")]
    SpeakerAbsent(SpeakerId),
    #[error("model has no classifier for show {0:?}")]
    UnknownShow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<CheckpointError> for ModelError {
    fn from(e: CheckpointError) -> Self {
        ModelError::Checkpoint(e.to_string())
    }
}

/// Per present speaker ID: one logit per roster entry.
pub type CharacterLogits = BTreeMap<SpeakerId, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    /// Each ID takes its own best candidate.
    #[default]
    Independent,
    /// One-to-one assignment, highest logit first.
    GreedyJoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub speaker_id: SpeakerId,
    pub predicted: String,
    pub logits: Vec<f64>,
}

struct Head {
    roster: Roster,
    w: ParamId,
    b: ParamId,
}

/// Result of a forward pass recorded on a tape.
pub struct Forward {
    /// 1×C logit rows, one per present ID in ascending order.
    pub logits: Vec<(SpeakerId, Var)>,
    /// Pooled 1×D features: per row for `MrEncoder` (`None` for padded rows),
    /// per ID otherwise.
    pub features: Vec<Option<Var>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    vocab: Vocab,
    rosters: BTreeMap<String, Roster>,
}

pub struct CharacterModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    encoder: Encoder,
    scorer: ParamId,
    heads: BTreeMap<String, Head>,
}

const HEAD_STD: f64 = 0.02;

impl CharacterModel {
    /// Fresh model with parameters drawn from `config.encoder.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, rosters: &BTreeMap<String, Roster>) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded_rng(config.encoder.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config.encoder.clone(), vocab.len(), &mut store, &mut rng)?;
        let d = config.encoder.dim;
        let scorer = store.add_normal("pool.scorer", d, 1, HEAD_STD, &mut rng);
        let in_dim = match config.architecture {
            Architecture::MrEncoder => config.rows * d,
            _ => d,
        };
        let mut heads = BTreeMap::new();
        for (show, roster) in rosters {
            if roster.is_empty() {
                return Err(ModelError::InvalidConfig(format!("empty roster for show {show:?}")));
            }
            let w = store.add_normal(format!("head.{show}.w"), in_dim, roster.len(), HEAD_STD, &mut rng);
            let b = store.add(format!("head.{show}.b"), Array2::zeros((1, roster.len())));
            heads.insert(show.clone(), Head { roster: roster.clone(), w, b });
        }
        Ok(Self { config, vocab, store, encoder, scorer, heads })
    }

    pub fn roster(&self, show: &str) -> Option<&Roster> {
        self.heads.get(show).map(|h| &h.roster)
    }

    pub fn rosters(&self) -> BTreeMap<String, Roster> {
        self.heads.iter().map(|(s, h)| (s.clone(), h.roster.clone())).collect()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn scorer_id(&self) -> ParamId {
        self.scorer
    }

    fn head(&self, show: &str) -> Result<&Head, ModelError> {
        self.heads.get(show).ok_or_else(|| ModelError::UnknownShow(show.to_string()))
    }

    /// Records the forward pass for every present ID of `instance`.
    pub fn forward(&self, tape: &mut Tape, instance: &MaskedInstanceSet, mut dropout: Option<&mut ChaCha8Rng>) -> Result<Forward, ModelError> {
        let head = self.head(&instance.show)?;
        let d = self.config.encoder.dim;
        let scorer = tape.param(&self.store, self.scorer);
        let w = tape.param(&self.store, head.w);
        let b = tape.param(&self.store, head.b);
        let classify = |tape: &mut Tape, features: Var| {
            let y = tape.matmul(features, w);
            tape.add_row(y, b)
        };
        let mut out = Forward { logits: Vec::new(), features: Vec::new() };
        match self.config.architecture {
            Architecture::LongformerP => {
                let flat = build_flat_input(instance, &self.vocab, self.config.encoder.max_len, self.config.include_background)?;
                let h = self.encoder.forward(tape, &self.store, &flat.ids, dropout)?;
                let scores = tape.matmul(h, scorer);
                let scores = tape.transpose(scores);
                for x in instance.present_ids() {
                    let pooled = match flat.masks.get(&x) {
                        Some(m) => pool_on_tape(tape, h, scores, m),
                        None => tape.constant(Array2::zeros((1, d))),
                    };
                    out.features.push(Some(pooled));
                    let logits = classify(tape, pooled);
                    out.logits.push((x, logits));
                }
            }
            Architecture::MrEncoder => {
                let rows = build_rows(
                    instance,
                    &self.vocab,
                    self.config.rows,
                    self.config.row_len,
                    self.config.reverse,
                    self.config.fill_empty,
                    self.config.include_background,
                )?;
                if rows.valid_count() == 0 {
                    return Err(ModelError::NoValidRows);
                }
                for ids in &rows.rows {
                    if ids.is_empty() {
                        out.features.push(None);
                        continue;
                    }
                    let h = self.encoder.forward(tape, &self.store, ids, dropout.as_deref_mut())?;
                    let scores = tape.matmul(h, scorer);
                    let scores = tape.transpose(scores);
                    out.features.push(Some(pool_on_tape(tape, h, scores, &vec![true; ids.len()])));
                }
                let zero = tape.constant(Array2::zeros((1, d)));
                for x in instance.present_ids() {
                    let seg = rows.segment_mask(x);
                    let parts: Vec<Var> = out.features.iter().zip(&seg).map(|(f, &on)| if on { f.expect("anchored row is valid") } else { zero }).collect();
                    let cat = tape.concat_cols(&parts);
                    let logits = classify(tape, cat);
                    out.logits.push((x, logits));
                }
            }
            Architecture::Vanilla => {
                for x in instance.present_ids() {
                    let ids = speaker_only_input(instance, x, &self.vocab, self.config.encoder.max_len)?;
                    let h = self.encoder.forward(tape, &self.store, &ids, dropout.as_deref_mut())?;
                    let scores = tape.matmul(h, scorer);
                    let scores = tape.transpose(scores);
                    let pooled = pool_on_tape(tape, h, scores, &vec![true; ids.len()]);
                    out.features.push(Some(pooled));
                    let logits = classify(tape, pooled);
                    out.logits.push((x, logits));
                }
            }
        }
        Ok(out)
    }

    /// Eval-mode logits for every present ID.
    pub fn logits(&self, instance: &MaskedInstanceSet) -> Result<CharacterLogits, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, instance, None)?;
        Ok(fwd.logits.into_iter().map(|(x, v)| (x, tape.value(v).row(0).to_vec())).collect())
    }

    /// Candidate-restricted decoding.
    pub fn predict(&self, instance: &MaskedInstanceSet, decoding: Decoding) -> Result<Vec<Prediction>, ModelError> {
        let roster = &self.head(&instance.show)?.roster;
        let logits = self.logits(instance)?;
        let cand: Vec<usize> = instance.candidates.iter().filter_map(|c| roster.index_of(c)).collect();
        if cand.is_empty() {
            return Err(ModelError::ShapeMismatch(format!("no candidate of {} is in the model roster", instance.scene_ref())));
        }
        let mut picks: BTreeMap<SpeakerId, usize> = BTreeMap::new();
        match decoding {
            Decoding::Independent => {
                for (x, l) in &logits {
                    picks.insert(*x, argmax_over(l, &cand));
                }
            }
            Decoding::GreedyJoint => {
                let mut pairs: Vec<(f64, SpeakerId, usize)> = logits.iter().flat_map(|(x, l)| cand.iter().map(move |&c| (l[c], *x, c))).collect();
                pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut used = Vec::new();
                for (_, x, c) in pairs {
                    if !picks.contains_key(&x) && !used.contains(&c) {
                        picks.insert(x, c);
                        used.push(c);
                    }
                }
                // more IDs than candidates: fall back to independent picks
                for (x, l) in &logits {
                    picks.entry(*x).or_insert_with(|| argmax_over(l, &cand));
                }
            }
        }
        Ok(logits
            .into_iter()
            .map(|(x, l)| Prediction { speaker_id: x, predicted: roster.names()[picks[&x]].clone(), logits: l })
            .collect())
    }

    /// Mean over scenes of the per-scene mean cross-entropy, with gradients
    /// for every parameter. `candidate_masked` restricts the softmax to the
    /// scene's candidates.
    pub fn loss_and_grads(
        &self,
        batch: &[&MaskedInstanceSet],
        candidate_masked: bool,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        let mut grads = Gradients::zeros_like(&self.store);
        let mut total = 0.0;
        for inst in batch {
            let (loss, g) = self.scene_loss(inst, candidate_masked, dropout.as_deref_mut())?;
            total += loss;
            for id in self.store.ids() {
                *grads.get_mut(id) += g.get(id);
            }
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    fn scene_loss(&self, inst: &MaskedInstanceSet, candidate_masked: bool, dropout: Option<&mut ChaCha8Rng>) -> Result<(f64, Gradients), ModelError> {
        let roster = &self.head(&inst.show)?.roster;
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, inst, dropout)?;
        let allowed: Option<Vec<bool>> = candidate_masked.then(|| roster.names().iter().map(|n| inst.candidates.contains(n)).collect());
        let mut losses = Vec::with_capacity(fwd.logits.len());
        for (x, logits) in &fwd.logits {
            let gold = inst.gold.get(x).ok_or_else(|| ModelError::ShapeMismatch(format!("{} has no gold name for {x}", inst.scene_ref())))?;
            let target = roster
                .index_of(gold)
                .ok_or_else(|| ModelError::ShapeMismatch(format!("gold name {gold:?} is not in the {} roster", inst.show)))?;
            losses.push(tape.cross_entropy(*logits, target, allowed.as_deref()));
        }
        if losses.is_empty() {
            return Err(ModelError::ShapeMismatch(format!("{} has no masked speaker", inst.scene_ref())));
        }
        let sum = tape.sum_scalars(&losses);
        let mean = tape.scale(sum, 1.0 / losses.len() as f64);
        Ok((tape.scalar(mean), tape.backward(mean, &self.store)))
    }

    /// Total attention pairs scored to encode `instance`.
    pub fn attention_pairs(&self, instance: &MaskedInstanceSet) -> Result<u64, ModelError> {
        let att = self.config.encoder.attention;
        Ok(match self.config.architecture {
            Architecture::LongformerP => {
                let flat = build_flat_input(instance, &self.vocab, self.config.encoder.max_len, self.config.include_background)?;
                attention_pair_count(flat.ids.len(), att)
            }
            Architecture::MrEncoder => {
                let rows = build_rows(instance, &self.vocab, self.config.rows, self.config.row_len, self.config.reverse, self.config.fill_empty, self.config.include_background)?;
                rows.rows.iter().filter(|r| !r.is_empty()).map(|r| attention_pair_count(r.len(), att)).sum()
            }
            Architecture::Vanilla => {
                let mut total = 0;
                for x in instance.present_ids() {
                    total += attention_pair_count(speaker_only_input(instance, x, &self.vocab, self.config.encoder.max_len)?.len(), att);
                }
                total
            }
        })
    }

    /// Token scores `H · scorer` for eval-mode hidden states.
    pub fn token_scores(&self, hidden: &HiddenStates) -> Vec<f64> {
        hidden.matrix.dot(&self.store.value(self.scorer).column(0)).to_vec()
    }

    /// Classifier output for precomputed MR row embeddings (R×D), applying
    /// the segment mask of one speaker.
    pub fn mr_head_logits(&self, show: &str, row_embeddings: &Array2<f64>, segment_mask: &[bool]) -> Result<Vec<f64>, ModelError> {
        let head = self.head(show)?;
        let (r, d) = row_embeddings.dim();
        if r != self.config.rows || d != self.config.encoder.dim || segment_mask.len() != r {
            return Err(ModelError::ShapeMismatch(format!("expected {}×{} rows and mask", self.config.rows, self.config.encoder.dim)));
        }
        let mut cat = Array1::zeros(r * d);
        for (i, row) in row_embeddings.rows().into_iter().enumerate() {
            if segment_mask[i] {
                cat.slice_mut(ndarray::s![i * d..(i + 1) * d]).assign(&row);
            }
        }
        let y = cat.dot(self.store.value(head.w)) + self.store.value(head.b).row(0);
        Ok(y.to_vec())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<(), ModelError> {
        let cfg = CheckpointConfig { model: self.config.clone(), vocab: self.vocab.clone(), rosters: self.rosters() };
        let json = serde_json::to_string(&cfg).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let io = |e: std::io::Error| ModelError::Checkpoint(e.to_string());
        params::write_header(out, &json).map_err(io)?;
        self.store.write_tensors(out).map_err(io)
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self, ModelError> {
        let json = params::read_header(input)?;
        let cfg: CheckpointConfig = serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut model = Self::new(cfg.model, cfg.vocab, &cfg.rosters)?;
        model.store.read_tensors(input)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?);
        self.write_to(&mut f)?;
        f.flush().map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| ModelError::Checkpoint(e.to_string()))?);
        Self::read_from(&mut f)
    }
}

fn argmax_over(logits: &[f64], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    for &c in &allowed[1..] {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    best
}

fn pool_on_tape(tape: &mut Tape, h: Var, scores_row: Var, mask: &[bool]) -> Var {
    let mask = Array2::from_shape_vec((1, mask.len()), mask.to_vec()).expect("mask row");
    let alpha = tape.masked_softmax(scores_row, &mask);
    tape.matmul(alpha, h)
}

/// `Hᵀα` with `α` the softmax of `scores` over positions where `mask` holds.
pub fn attentive_pool(h: &Array2<f64>, scores: &[f64], mask: &[bool]) -> Result<Array1<f64>, ModelError> {
    if scores.len() != h.nrows() || mask.len() != h.nrows() {
        return Err(ModelError::ShapeMismatch(format!("{} scores and {} mask entries for {} rows", scores.len(), mask.len(), h.nrows())));
    }
    let max = scores.iter().zip(mask).filter(|(_, &m)| m).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ModelError::EmptyMask);
    }
    let weights: Vec<f64> = scores.iter().zip(mask).map(|(s, &m)| if m { (s - max).exp() } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    let alpha = Array1::from_iter(weights.into_iter().map(|w| w / total));
    Ok(h.t().dot(&alpha))
}

/// Pooled embedding per ID using the model's token scorer.
pub fn pool_characters(hidden: &HiddenStates, masks: &BTreeMap<SpeakerId, Vec<bool>>, model: &CharacterModel) -> Result<BTreeMap<SpeakerId, Array1<f64>>, ModelError> {
    let scores = model.token_scores(hidden);
    masks.iter().map(|(x, m)| Ok((*x, attentive_pool(&hidden.matrix, &scores, m)?))).collect()
}

fn require(model: &CharacterModel, arch: Architecture) -> Result<(), ModelError> {
    if model.config.architecture == arch {
        Ok(())
    } else {
        Err(ModelError::InvalidConfig(format!("model is {:?}, not {arch:?}", model.config.architecture)))
    }
}

pub fn predict_longformer_p(instance: &MaskedInstanceSet, model: &CharacterModel) -> Result<CharacterLogits, ModelError> {
    require(model, Architecture::LongformerP)?;
    model.logits(instance)
}

pub fn predict_mr(instance: &MaskedInstanceSet, model: &CharacterModel) -> Result<CharacterLogits, ModelError> {
    require(model, Architecture::MrEncoder)?;
    model.logits(instance)
}

pub fn predict_vanilla(instance: &MaskedInstanceSet, speaker_id: SpeakerId, model: &CharacterModel) -> Result<Vec<f64>, ModelError> {
    require(model, Architecture::Vanilla)?;
    let ids = speaker_only_input(instance, speaker_id, &model.vocab, model.config.encoder.max_len)?;
    let hidden = model.encoder.encode(&model.store, &ids)?;
    let scores = model.token_scores(&hidden);
    let pooled = attentive_pool(&hidden.matrix, &scores, &vec![true; ids.len()])?;
    let head = model.head(&instance.show)?;
    Ok((pooled.dot(model.store.value(head.w)) + model.store.value(head.b).row(0)).to_vec())
}
