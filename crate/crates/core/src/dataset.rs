//! Corpus files, train/dev/test splitting and corpus statistics.
//!
//! A corpus file holds one JSON object per line, one per anonymized scene:
//!
//! ```text
//! {"schema":1,"show":..,"episode_id":..,"scene_index":..,"lines":[{"kind":..,"speaker_id":..,"speaker":..,"text":..}],
//!  "candidates":[..],"gold":{"P0":..},"rng_seed":..}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{roster_from_instances, MaskedInstanceSet, MaskedLine, Roster, SpeakerId};
use crate::parser::{LineKind, Scene};
use crate::text;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("show {show}: {split} split would be empty ({size} scenes)")]
    DegenerateSplit {
        show: String,
        split: SplitName,
        size: usize,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Appends one record to a line-delimited file as a single write.
pub fn append_jsonl<T: Serialize>(item: &T, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut line = serde_json::to_vec(item).map_err(std::io::Error::from)?;
    line.push(b'\n');
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    Ok(())
}

/// Reads one JSON object per line, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, DatasetError> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Schema { line: i + 1, message: e.to_string() })?;
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    schema: u32,
    show: String,
    episode_id: String,
    scene_index: u64,
    lines: Vec<MaskedLine>,
    candidates: Vec<String>,
    gold: BTreeMap<SpeakerId, String>,
    rng_seed: u64,
}

impl From<&MaskedInstanceSet> for CorpusRecord {
    fn from(i: &MaskedInstanceSet) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            show: i.show.clone(),
            episode_id: i.episode_id.clone(),
            scene_index: i.scene_index,
            lines: i.lines.clone(),
            candidates: i.candidates.clone(),
            gold: i.gold.clone(),
            rng_seed: i.rng_seed,
        }
    }
}

impl From<CorpusRecord> for MaskedInstanceSet {
    fn from(r: CorpusRecord) -> Self {
        Self {
            show: r.show,
            episode_id: r.episode_id,
            scene_index: r.scene_index,
            lines: r.lines,
            candidates: r.candidates,
            gold: r.gold,
            rng_seed: r.rng_seed,
        }
    }
}

pub fn write_corpus(instances: &[MaskedInstanceSet], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let records: Vec<CorpusRecord> = instances.iter().map(CorpusRecord::from).collect();
    write_jsonl(&records, path)
}

/// Serializes a corpus to a string in the file format.
pub fn corpus_to_string(instances: &[MaskedInstanceSet]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&CorpusRecord::from(inst)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<MaskedInstanceSet>, DatasetError> {
    parse_corpus(BufReader::new(File::open(path)?))
}

/// Parses and validates corpus records.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<MaskedInstanceSet>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| DatasetError::Schema { line: i + 1, message };
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| schema_err(e.to_string()))?;
        if record.schema != SCHEMA_VERSION {
            return Err(schema_err(format!("unsupported schema version {}", record.schema)));
        }
        let inst = MaskedInstanceSet::from(record);
        inst.validate().map_err(schema_err)?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_scenes(scenes: &[Scene], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_jsonl(scenes, path)
}

pub fn read_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>, DatasetError> {
    read_jsonl(path)
}

/// Sidecar metadata stored next to a corpus file as `<corpus>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    /// How speaker IDs are drawn; always `per_scene` for corpora built here.
    pub id_assignment: String,
    pub base_seed: u64,
    pub rosters: BTreeMap<String, Roster>,
}

impl CorpusMeta {
    pub fn per_scene(base_seed: u64, rosters: BTreeMap<String, Roster>) -> Self {
        Self { id_assignment: "per_scene".to_owned(), base_seed, rosters }
    }

    pub fn sidecar_path(corpus: impl AsRef<Path>) -> PathBuf {
        let mut p = corpus.as_ref().as_os_str().to_owned();
        p.push(".meta.json");
        PathBuf::from(p)
    }

    pub fn write_for(&self, corpus: impl AsRef<Path>) -> Result<(), DatasetError> {
        let raw = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        std::fs::write(Self::sidecar_path(corpus), raw)?;
        Ok(())
    }

    pub fn read_for(corpus: impl AsRef<Path>) -> Result<Option<Self>, DatasetError> {
        let path = Self::sidecar_path(corpus);
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(&path)?;
        serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| DatasetError::Schema { line: e.line(), message: e.to_string() })
    }
}

/// Rosters per show: recorded ones first, otherwise rebuilt from the instances.
pub fn rosters_for(
    instances: &[MaskedInstanceSet],
    recorded: Option<&BTreeMap<String, Roster>>,
) -> BTreeMap<String, Roster> {
    let mut by_show: BTreeMap<&str, Vec<&MaskedInstanceSet>> = BTreeMap::new();
    for inst in instances {
        by_show.entry(inst.show.as_str()).or_default().push(inst);
    }
    by_show
        .into_iter()
        .map(|(show, insts)| {
            let roster = recorded
                .and_then(|r| r.get(show).cloned())
                .unwrap_or_else(|| roster_from_instances(insts));
            (show.to_owned(), roster)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    Chronological,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, dev and test fractions.
    pub ratios: [f64; 3],
    pub policy: SplitPolicy,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [0.9, 0.05, 0.05], policy: SplitPolicy::Chronological, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(DatasetError::InvalidSplit("each ratio must lie in [0, 1]".into()));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Integer split sizes for `n` items by largest remainder.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact: Vec<f64> = self.ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes: [usize; 3] = [0; 3];
        for (s, e) in sizes.iter_mut().zip(&exact) {
            // guards against 0.9 * 100 = 89.99999999999999
            *s = (e + 1e-9).floor() as usize;
        }
        let mut left = n - sizes.iter().sum::<usize>().min(n);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - sizes[a] as f64;
            let fb = exact[b] - sizes[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if self.ratios[i] > 0.0 {
                sizes[i] += 1;
                left -= 1;
            }
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub policy: SplitPolicy,
    pub train: Vec<MaskedInstanceSet>,
    pub dev: Vec<MaskedInstanceSet>,
    pub test: Vec<MaskedInstanceSet>,
}

impl CorpusSplits {
    pub fn get(&self, name: SplitName) -> &[MaskedInstanceSet] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partitions scenes per show into train/dev/test.
pub fn split_corpus(instances: &[MaskedInstanceSet], spec: &SplitSpec) -> Result<CorpusSplits, DatasetError> {
    spec.validate()?;
    if instances.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut by_show: BTreeMap<&str, Vec<&MaskedInstanceSet>> = BTreeMap::new();
    for inst in instances {
        by_show.entry(inst.show.as_str()).or_default().push(inst);
    }
    let mut splits = CorpusSplits { policy: spec.policy, train: vec![], dev: vec![], test: vec![] };
    for (show, mut scenes) in by_show {
        match spec.policy {
            SplitPolicy::Chronological => {
                scenes.sort_by_key(|s| s.scene_index);
            }
            SplitPolicy::SeededRandom => {
                scenes.sort_by_key(|s| s.scene_index);
                let mut rng = ChaCha8Rng::seed_from_u64(text::mix_seed(spec.seed, text::fnv1a(show.as_bytes())));
                scenes.shuffle(&mut rng);
            }
        }
        let sizes = spec.sizes(scenes.len());
        for (i, name) in [SplitName::Train, SplitName::Dev, SplitName::Test].into_iter().enumerate() {
            if spec.ratios[i] > 0.0 && sizes[i] == 0 {
                return Err(DatasetError::DegenerateSplit { show: show.to_owned(), split: name, size: scenes.len() });
            }
        }
        let mut rest = scenes.into_iter();
        splits.train.extend(rest.by_ref().take(sizes[0]).cloned());
        splits.dev.extend(rest.by_ref().take(sizes[1]).cloned());
        splits.test.extend(rest.cloned());
    }
    Ok(splits)
}

/// Average and maximum of a set of token counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg: f64,
    pub max: usize,
    pub count: usize,
    pub total: usize,
}

impl Summary {
    fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        let count = counts.len();
        Self {
            avg: if count == 0 { 0.0 } else { total as f64 / count as f64 },
            max: counts.iter().copied().max().unwrap_or(0),
            count,
            total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowStats {
    pub show: String,
    pub train_scenes: usize,
    pub dev_scenes: usize,
    pub test_scenes: usize,
    pub tokens_per_utterance: Summary,
    pub tokens_per_scene: Summary,
    pub tokens_per_character: Summary,
}

/// Per-show scene counts and token statistics, plus a pooled total row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub split_policy: SplitPolicy,
    pub tokenizer: String,
    pub shows: Vec<ShowStats>,
    pub total: ShowStats,
}

#[derive(Default)]
struct Accum {
    scenes: [usize; 3],
    utterances: Vec<usize>,
    scene_tokens: Vec<usize>,
    characters: BTreeMap<String, usize>,
}

impl Accum {
    fn into_stats(self, show: String) -> ShowStats {
        let chars: Vec<usize> = self.characters.into_values().collect();
        ShowStats {
            show,
            train_scenes: self.scenes[0],
            dev_scenes: self.scenes[1],
            test_scenes: self.scenes[2],
            tokens_per_utterance: Summary::from_counts(&self.utterances),
            tokens_per_scene: Summary::from_counts(&self.scene_tokens),
            tokens_per_character: Summary::from_counts(&chars),
        }
    }
}

/// Computes corpus statistics. Dialogue lines are utterances; scene totals
/// count every line; character totals sum each main character's dialogue.
pub fn compute_stats(splits: &CorpusSplits, rosters: &BTreeMap<String, Roster>) -> StatsReport {
    let mut per_show: BTreeMap<String, Accum> = BTreeMap::new();
    for (si, name) in [SplitName::Train, SplitName::Dev, SplitName::Test].into_iter().enumerate() {
        for inst in splits.get(name) {
            let acc = per_show.entry(inst.show.clone()).or_insert_with(|| {
                let mut a = Accum::default();
                if let Some(r) = rosters.get(&inst.show) {
                    a.characters = r.names().iter().map(|n| (n.clone(), 0)).collect();
                }
                a
            });
            acc.scenes[si] += 1;
            let mut scene_total = 0;
            for line in &inst.lines {
                let n = text::token_count(&line.text);
                scene_total += n;
                if line.kind == LineKind::Dialogue {
                    acc.utterances.push(n);
                }
                if let Some(name) = line.speaker_id.and_then(|id| inst.gold.get(&id)) {
                    let known = rosters.get(&inst.show).map_or(true, |r| r.contains(name));
                    if known {
                        *acc.characters.entry(name.clone()).or_default() += n;
                    }
                }
            }
            acc.scene_tokens.push(scene_total);
        }
    }

    let mut total = Accum::default();
    let mut shows = Vec::new();
    for (show, acc) in per_show {
        for i in 0..3 {
            total.scenes[i] += acc.scenes[i];
        }
        total.utterances.extend(&acc.utterances);
        total.scene_tokens.extend(&acc.scene_tokens);
        for (c, n) in &acc.characters {
            total.characters.insert(format!("{show}/{c}"), *n);
        }
        shows.push(acc.into_stats(show));
    }
    StatsReport {
        split_policy: splits.policy,
        tokenizer: "whitespace split after separating punctuation".to_owned(),
        shows,
        total: total.into_stats("total".to_owned()),
    }
}

/// Fallback when no roster is recorded for a show.
pub fn compute_stats_default(splits: &CorpusSplits) -> StatsReport {
    let all: Vec<MaskedInstanceSet> =
        splits.train.iter().chain(&splits.dev).chain(&splits.test).cloned().collect();
    compute_stats(splits, &rosters_for(&all, None))
}
