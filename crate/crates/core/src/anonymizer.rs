//! Turns canonicalized scenes into guessing instances: main speakers are
//! replaced by anonymous IDs `P0`..`P5`, supporting speakers stay named.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::parser::{AliasTable, LineKind, Scene};
use crate::text;

/// Upper bound on main characters per show, and thus on IDs per scene.
pub const MAX_SPEAKER_IDS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum AnonymizeError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no speaker resolves to a main character")]
    NoMainCharacters,
    #[error("roster is empty")]
    EmptyRoster,
    #[error("scene {0} has {1} main speakers; at most {MAX_SPEAKER_IDS} can be masked")]
    TooManySpeakers(SceneRef, usize),
}

/// Anonymous speaker slot `P0`..`P5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeakerId(u8);

impl SpeakerId {
    pub fn new(index: usize) -> Option<Self> {
        (index < MAX_SPEAKER_IDS).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = SpeakerId> {
        (0..MAX_SPEAKER_IDS as u8).map(SpeakerId)
    }

    /// The special vocabulary token, e.g. `[P2]`.
    pub fn token(self) -> String {
        format!("[P{}]", self.0)
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl FromStr for SpeakerId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('P')
            .and_then(|d| d.parse::<usize>().ok())
            .and_then(SpeakerId::new)
            .ok_or_else(|| format!("invalid speaker id {s:?}"))
    }
}

impl Serialize for SpeakerId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SpeakerId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Identifies a scene within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SceneRef {
    pub show: String,
    pub episode_id: String,
    pub scene_index: u64,
}

impl fmt::Display for SceneRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.show, self.episode_id, self.scene_index)
    }
}

impl Scene {
    pub fn scene_ref(&self) -> SceneRef {
        SceneRef {
            show: self.show.clone(),
            episode_id: self.episode_id.clone(),
            scene_index: self.scene_index,
        }
    }
}

/// A line of an anonymized scene. Main-character dialogue carries
/// `speaker_id`; supporting-character dialogue keeps its literal `speaker`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedLine {
    pub kind: LineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<SpeakerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub text: String,
}

impl MaskedLine {
    fn is_valid(&self) -> bool {
        match self.kind {
            LineKind::Dialogue => self.speaker_id.is_some() != self.speaker.is_some(),
            LineKind::Background => self.speaker_id.is_none() && self.speaker.is_none(),
        }
    }
}

/// One anonymized scene with its candidate set and gold ID → character match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstanceSet {
    pub show: String,
    pub episode_id: String,
    pub scene_index: u64,
    pub lines: Vec<MaskedLine>,
    pub candidates: Vec<String>,
    pub gold: BTreeMap<SpeakerId, String>,
    pub rng_seed: u64,
}

impl MaskedInstanceSet {
    pub fn scene_ref(&self) -> SceneRef {
        SceneRef {
            show: self.show.clone(),
            episode_id: self.episode_id.clone(),
            scene_index: self.scene_index,
        }
    }

    /// Speaker IDs that speak at least once, ascending.
    pub fn present_ids(&self) -> Vec<SpeakerId> {
        self.lines
            .iter()
            .filter_map(|l| l.speaker_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Number of guessing instances (masked speakers) in this scene.
    pub fn instance_count(&self) -> usize {
        self.gold.len()
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(i) = self.lines.iter().position(|l| !l.is_valid()) {
            return Err(format!("line {i}: speaker fields do not match kind"));
        }
        let present = self.present_ids();
        let gold_ids: Vec<SpeakerId> = self.gold.keys().copied().collect();
        if present != gold_ids {
            return Err("gold keys differ from the speaker IDs used in lines".into());
        }
        if self.candidates.is_empty() || self.candidates.len() > MAX_SPEAKER_IDS {
            return Err(format!("candidate set size {} outside 1..=6", self.candidates.len()));
        }
        if self.gold.len() > self.candidates.len() {
            return Err("more masked speakers than candidates".into());
        }
        let distinct: BTreeSet<&String> = self.gold.values().collect();
        if distinct.len() != self.gold.len() {
            return Err("gold match is not injective".into());
        }
        if let Some(g) = self.gold.values().find(|g| !self.candidates.contains(g)) {
            return Err(format!("gold name {g:?} is not a candidate"));
        }
        Ok(())
    }
}

/// Main characters of one show, in classifier index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Roster(Vec<String>);

impl Roster {
    pub fn new(names: Vec<String>) -> Self {
        Self(names)
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }
}

fn top_by_count(counts: HashMap<String, usize>, max_n: usize) -> Vec<String> {
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(max_n).map(|(n, _)| n).collect()
}

/// Picks the `max_n` canonical names with the most dialogue turns
/// (ties broken lexicographically).
pub fn select_main_characters(
    corpus: &[Scene],
    table: &AliasTable,
    max_n: usize,
) -> Result<Roster, AnonymizeError> {
    if corpus.is_empty() {
        return Err(AnonymizeError::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus.iter().flat_map(|s| s.dialogue()) {
        if let Some(c) = line.speaker.as_deref().and_then(|s| table.lookup(s)) {
            *counts.entry(c.to_owned()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(AnonymizeError::NoMainCharacters);
    }
    Ok(Roster(top_by_count(counts, max_n.min(MAX_SPEAKER_IDS))))
}

/// Rebuilds a show roster from anonymized instances, ranking characters by
/// how often they are masked speakers; used when no roster was recorded.
pub fn roster_from_instances<'a>(
    instances: impl IntoIterator<Item = &'a MaskedInstanceSet>,
) -> Roster {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for inst in instances {
        for name in inst.gold.values() {
            *counts.entry(name.clone()).or_default() += 1;
        }
    }
    Roster(top_by_count(counts, MAX_SPEAKER_IDS))
}

/// Seeded Fisher–Yates permutation of `0..n`.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Anonymizes one scene whose speakers are already canonical names.
///
/// Returns `None` when no main character speaks.
pub fn anonymize_scene(
    scene: &Scene,
    roster: &Roster,
    seed: u64,
) -> Result<Option<MaskedInstanceSet>, AnonymizeError> {
    if roster.is_empty() {
        return Err(AnonymizeError::EmptyRoster);
    }
    let speaking: BTreeSet<&str> = scene.dialogue().filter_map(|l| l.speaker.as_deref()).collect();
    let present: Vec<&String> = roster.names().iter().filter(|n| speaking.contains(n.as_str())).collect();
    if present.is_empty() {
        return Ok(None);
    }
    if present.len() > MAX_SPEAKER_IDS {
        return Err(AnonymizeError::TooManySpeakers(scene.scene_ref(), present.len()));
    }

    let perm = seeded_permutation(present.len(), seed);
    let assignment: HashMap<&str, SpeakerId> = present
        .iter()
        .zip(&perm)
        .map(|(name, &p)| (name.as_str(), SpeakerId(p as u8)))
        .collect();

    let lines = scene
        .lines
        .iter()
        .map(|l| {
            let id = l.speaker.as_deref().and_then(|s| assignment.get(s).copied());
            MaskedLine {
                kind: l.kind,
                speaker_id: id,
                speaker: if id.is_some() { None } else { l.speaker.clone() },
                text: l.text.clone(),
            }
        })
        .collect();

    Ok(Some(MaskedInstanceSet {
        show: scene.show.clone(),
        episode_id: scene.episode_id.clone(),
        scene_index: scene.scene_index,
        lines,
        candidates: present.iter().map(|n| (*n).clone()).collect(),
        gold: assignment.iter().map(|(n, id)| (*id, (*n).to_owned())).collect(),
        rng_seed: seed,
    }))
}

/// Per-scene seed; IDs are re-drawn for every scene.
pub fn scene_seed(base_seed: u64, scene: &SceneRef) -> u64 {
    text::mix_seed(base_seed, text::fnv1a(scene.to_string().as_bytes()))
}

/// Anonymizes every scene, dropping scenes without main-character dialogue.
pub fn anonymize_corpus(
    scenes: &[Scene],
    roster: &Roster,
    base_seed: u64,
) -> Result<Vec<MaskedInstanceSet>, AnonymizeError> {
    let mut out = Vec::new();
    for scene in scenes {
        if let Some(inst) = anonymize_scene(scene, roster, scene_seed(base_seed, &scene.scene_ref()))? {
            out.push(inst);
        }
    }
    Ok(out)
}
