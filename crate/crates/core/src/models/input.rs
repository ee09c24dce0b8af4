//! Token streams fed to the encoders.

use std::collections::BTreeMap;

use crate::anonymizer::{MaskedInstanceSet, MaskedLine, SpeakerId};
use crate::nn::{speaker_token_id, Vocab, SEP_ID, SPLIT_ID};
use crate::parser::LineKind;

use super::ModelError;

/// One serialized line: `[Px] ⊕ U ⊕ [SPLIT]` for masked speakers, the
/// literal speaker name and text for supporting speakers, bare text for
/// background lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub ids: Vec<usize>,
    pub owner: Option<SpeakerId>,
}

/// Surface text a line contributes to the vocabulary.
pub fn line_text(line: &MaskedLine) -> String {
    match (&line.kind, &line.speaker) {
        (LineKind::Dialogue, Some(name)) if line.speaker_id.is_none() => format!("{name} : {}", line.text),
        _ => line.text.clone(),
    }
}

/// Vocabulary over every line of `instances`.
pub fn build_vocab<'a>(instances: impl IntoIterator<Item = &'a MaskedInstanceSet>, min_count: usize, max_size: Option<usize>) -> Vocab {
    let texts: Vec<String> = instances.into_iter().flat_map(|i| i.lines.iter().map(line_text)).collect();
    Vocab::build(texts.iter().map(String::as_str), min_count, max_size)
}

pub fn scene_units(instance: &MaskedInstanceSet, vocab: &Vocab, include_background: bool) -> Vec<Unit> {
    instance
        .lines
        .iter()
        .filter(|l| include_background || l.kind == LineKind::Dialogue)
        .map(|l| {
            let mut ids = Vec::new();
            if let Some(x) = l.speaker_id {
                ids.push(speaker_token_id(x.index()));
            }
            ids.extend(vocab.tokenize(&line_text(l)));
            ids.push(SPLIT_ID);
            Unit { ids, owner: l.speaker_id }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatSceneInput {
    pub ids: Vec<usize>,
    /// Token masks for IDs with at least one surviving token.
    pub masks: BTreeMap<SpeakerId, Vec<bool>>,
    /// Present IDs whose every utterance was truncated away.
    pub dropped: Vec<SpeakerId>,
}

/// Concatenates units in scene order, dropping whole trailing units past
/// `max_len`. A first unit longer than `max_len` is clipped instead.
pub fn build_flat_input(instance: &MaskedInstanceSet, vocab: &Vocab, max_len: usize, include_background: bool) -> Result<FlatSceneInput, ModelError> {
    let units = scene_units(instance, vocab, include_background);
    let mut ids = Vec::new();
    let mut owners: Vec<Option<SpeakerId>> = Vec::new();
    for (i, u) in units.iter().enumerate() {
        if ids.len() + u.ids.len() > max_len {
            if i == 0 {
                ids.extend_from_slice(&u.ids[..max_len]);
                owners.extend(std::iter::repeat(u.owner).take(max_len));
            }
            break;
        }
        ids.extend_from_slice(&u.ids);
        owners.extend(std::iter::repeat(u.owner).take(u.ids.len()));
    }
    let mut masks = BTreeMap::new();
    let mut dropped = Vec::new();
    for x in instance.present_ids() {
        let m: Vec<bool> = owners.iter().map(|o| *o == Some(x)).collect();
        if m.iter().any(|&b| b) {
            masks.insert(x, m);
        } else {
            dropped.push(x);
        }
    }
    if masks.is_empty() {
        return Err(ModelError::AllTruncated);
    }
    Ok(FlatSceneInput { ids, masks, dropped })
}

/// Multi-row input: row i is anchor utterance ⊕ [SEP] ⊕ the units before it,
/// nearest first, cut at `row_len` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBatch {
    /// Token ids per row; empty for padded rows.
    pub rows: Vec<Vec<usize>>,
    /// Unit index of each row's anchor, `None` for padded rows.
    pub anchors: Vec<Option<usize>>,
    pub anchor_speakers: Vec<Option<SpeakerId>>,
}

impl RowBatch {
    pub fn valid(&self) -> Vec<bool> {
        self.anchors.iter().map(Option::is_some).collect()
    }

    /// Rows anchored by `x`.
    pub fn segment_mask(&self, x: SpeakerId) -> Vec<bool> {
        self.anchor_speakers.iter().map(|s| *s == Some(x)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.anchors.iter().flatten().count()
    }
}

/// Chooses anchor unit indices. Only masked-speaker utterances can anchor.
pub fn select_anchors(owners: &[Option<SpeakerId>], rows: usize, reverse: bool, fill_empty: bool) -> Result<Vec<usize>, ModelError> {
    let candidates: Vec<usize> = (0..owners.len()).filter(|&i| owners[i].is_some()).collect();
    let mut chosen: Vec<usize> = Vec::new();
    if fill_empty {
        let mut last: BTreeMap<SpeakerId, usize> = BTreeMap::new();
        for &i in &candidates {
            last.insert(owners[i].expect("anchor candidate"), i);
        }
        if last.len() > rows {
            return Err(ModelError::RowsUnrepresentable { present: last.len(), rows });
        }
        chosen.extend(last.values());
    }
    let order: Box<dyn Iterator<Item = &usize>> = if reverse { Box::new(candidates.iter().rev()) } else { Box::new(candidates.iter()) };
    for &i in order {
        if chosen.len() >= rows {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable_by(|a, b| b.cmp(a));
    Ok(chosen)
}

pub fn build_rows(
    instance: &MaskedInstanceSet,
    vocab: &Vocab,
    rows: usize,
    row_len: usize,
    reverse: bool,
    fill_empty: bool,
    include_background: bool,
) -> Result<RowBatch, ModelError> {
    if rows == 0 || row_len < 3 {
        return Err(ModelError::InvalidConfig("rows must be >= 1 and row_len >= 3".into()));
    }
    let units = scene_units(instance, vocab, include_background);
    let owners: Vec<Option<SpeakerId>> = units.iter().map(|u| u.owner).collect();
    let anchors = select_anchors(&owners, rows, reverse, fill_empty)?;
    let mut batch = RowBatch { rows: Vec::with_capacity(rows), anchors: Vec::with_capacity(rows), anchor_speakers: Vec::with_capacity(rows) };
    for &a in &anchors {
        let mut ids = units[a].ids.clone();
        ids.push(SEP_ID);
        for u in units[..a].iter().rev() {
            if ids.len() >= row_len {
                break;
            }
            ids.extend_from_slice(&u.ids);
        }
        ids.truncate(row_len);
        batch.rows.push(ids);
        batch.anchors.push(Some(a));
        batch.anchor_speakers.push(owners[a]);
    }
    while batch.rows.len() < rows {
        batch.rows.push(Vec::new());
        batch.anchors.push(None);
        batch.anchor_speakers.push(None);
    }
    Ok(batch)
}

/// Concatenated utterances of `x` alone, without ID prefixes.
pub fn speaker_only_input(instance: &MaskedInstanceSet, x: SpeakerId, vocab: &Vocab, max_len: usize) -> Result<Vec<usize>, ModelError> {
    let mut ids = Vec::new();
    let mut found = false;
    for l in instance.lines.iter().filter(|l| l.speaker_id == Some(x)) {
        found = true;
        ids.extend(vocab.tokenize(&l.text));
        ids.push(SPLIT_ID);
    }
    if !found {
        return Err(ModelError::SpeakerAbsent(x));
    }
    ids.truncate(max_len);
    Ok(ids)
}
