//! Seeded synthetic shows for tests and demos.
//!
//! In `Style` mode each main character draws most words from a private
//! vocabulary. In `Mention` mode main characters speak only shared filler
//! and a supporting character names the next main speaker in the line right
//! before it, so the signal sits in other characters' lines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{anonymize_corpus, select_main_characters, AnonymizeError, MaskedInstanceSet, Roster, MAX_SPEAKER_IDS};
use crate::parser::{build_alias_table, Line, Scene};

pub const MAIN_NAMES: [&str; 6] = ["avery", "blake", "casey", "devon", "emery", "finley"];
pub const SUPPORTING_NAMES: [&str; 3] = ["harper", "jules", "kit"];
const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "bu", "da", "fe"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Style,
    Mention,
}

impl std::str::FromStr for SynthMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "style" => Ok(Self::Style),
            "mention" => Ok(Self::Mention),
            _ => Err(format!("unknown synth mode {s:?} (style, mention)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub show: String,
    pub chars: usize,
    pub scenes: usize,
    pub scenes_per_episode: usize,
    pub seed: u64,
    pub mode: SynthMode,
    /// Inclusive range of main characters per scene.
    pub speakers_per_scene: (usize, usize),
    /// Inclusive range of main-character lines per scene.
    pub lines_per_scene: (usize, usize),
    pub words_per_line: (usize, usize),
    pub own_words: usize,
    pub shared_words: usize,
    /// Probability that a main character's word comes from its own vocabulary.
    pub divergence: f64,
    pub background: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            show: "synth".into(),
            chars: 4,
            scenes: 50,
            scenes_per_episode: 10,
            seed: 7,
            mode: SynthMode::Style,
            speakers_per_scene: (2, 4),
            lines_per_scene: (3, 6),
            words_per_line: (3, 6),
            own_words: 12,
            shared_words: 30,
            divergence: 0.8,
            background: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Anonymize(#[from] AnonymizeError),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(2..=MAX_SPEAKER_IDS).contains(&self.chars) {
            return bad(format!("chars must be 2..=6, got {}", self.chars));
        }
        let (lo, hi) = self.speakers_per_scene;
        if lo < 1 || lo > hi {
            return bad("speakers_per_scene must be a non-empty range starting at 1 or more".into());
        }
        if self.lines_per_scene.0 > self.lines_per_scene.1 || self.words_per_line.0 > self.words_per_line.1 || self.words_per_line.0 == 0 {
            return bad("line and word ranges must be non-empty".into());
        }
        if self.scenes == 0 || self.scenes_per_episode == 0 {
            return bad("scenes and scenes_per_episode must be positive".into());
        }
        if self.own_words == 0 || self.shared_words == 0 || !(0.0..=1.0).contains(&self.divergence) {
            return bad("vocabularies must be non-empty and divergence in [0, 1]".into());
        }
        Ok(())
    }
}

fn word(index: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[index % n], SYLLABLES[(index / n) % n], SYLLABLES[(index / (n * n)) % n])
}

struct Lexicon {
    own: Vec<Vec<String>>,
    shared: Vec<String>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let own = (0..cfg.chars).map(|c| (0..cfg.own_words).map(|j| word(c * cfg.own_words + j)).collect()).collect();
        let base = cfg.chars * cfg.own_words;
        let shared = (0..cfg.shared_words).map(|j| word(base + j)).collect();
        Self { own, shared }
    }

    fn line(&self, rng: &mut ChaCha8Rng, cfg: &SynthConfig, speaker: Option<usize>) -> String {
        let n = rng.gen_range(cfg.words_per_line.0..=cfg.words_per_line.1);
        (0..n)
            .map(|_| match speaker {
                Some(c) if rng.gen::<f64>() < cfg.divergence => self.own[c].choose(rng).expect("own words").clone(),
                _ => self.shared.choose(rng).expect("shared words").clone(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Raw scenes with canonical speaker names.
pub fn synth_scenes(cfg: &SynthConfig) -> Result<Vec<Scene>, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon::new(cfg);
    let lo = cfg.speakers_per_scene.0.min(cfg.chars);
    let hi = cfg.speakers_per_scene.1.min(cfg.chars);
    let mut scenes = Vec::with_capacity(cfg.scenes);
    for s in 0..cfg.scenes {
        let k = rng.gen_range(lo..=hi);
        let mut cast: Vec<usize> = (0..cfg.chars).collect();
        cast.shuffle(&mut rng);
        cast.truncate(k);
        let n_lines = rng.gen_range(cfg.lines_per_scene.0..=cfg.lines_per_scene.1).max(k);
        let mut order = cast.clone();
        while order.len() < n_lines {
            order.push(*cast.choose(&mut rng).expect("non-empty cast"));
        }
        order[k..].shuffle(&mut rng);

        let mut lines = Vec::new();
        if cfg.background {
            lines.push(Line::background(format!("INT. {}", lex.line(&mut rng, cfg, None))));
        }
        for &c in &order {
            match cfg.mode {
                SynthMode::Style => lines.push(Line::dialogue(MAIN_NAMES[c], lex.line(&mut rng, cfg, Some(c)))),
                SynthMode::Mention => {
                    let helper = SUPPORTING_NAMES.choose(&mut rng).expect("supporting names");
                    lines.push(Line::dialogue(*helper, format!("{} {}", MAIN_NAMES[c], lex.line(&mut rng, cfg, None))));
                    lines.push(Line::dialogue(MAIN_NAMES[c], lex.line(&mut rng, cfg, None)));
                }
            }
        }
        scenes.push(Scene {
            show: cfg.show.clone(),
            episode_id: format!("e{:02}", s / cfg.scenes_per_episode + 1),
            scene_index: s as u64,
            lines,
        });
    }
    Ok(scenes)
}

/// Anonymized synthetic corpus and its roster.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(Vec<MaskedInstanceSet>, Roster), SynthError> {
    let scenes = synth_scenes(cfg)?;
    let cast: Vec<(String, Vec<String>)> = MAIN_NAMES[..cfg.chars].iter().map(|n| (n.to_string(), vec![n.to_string()])).collect();
    let table = build_alias_table(&scenes, &cast).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let roster = select_main_characters(&scenes, &table, cfg.chars)?;
    let instances = anonymize_corpus(&scenes, &roster, cfg.seed)?;
    Ok((instances, roster))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = SynthConfig::default();
        let (a, roster) = synth_corpus(&cfg).unwrap();
        let (b, _) = synth_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert_eq!(roster.len(), 4);
        for inst in &a {
            inst.validate().unwrap();
            assert!((2..=4).contains(&inst.instance_count()));
        }
    }

    #[test]
    fn mention_mode_names_next_speaker() {
        let cfg = SynthConfig { mode: SynthMode::Mention, ..SynthConfig::default() };
        let scenes = synth_scenes(&cfg).unwrap();
        for s in &scenes {
            let dlg: Vec<&Line> = s.dialogue().collect();
            for pair in dlg.chunks(2) {
                let main = pair[1].speaker.as_deref().unwrap();
                assert!(pair[0].text.starts_with(main));
                assert!(SUPPORTING_NAMES.contains(&pair[0].speaker.as_deref().unwrap()));
            }
        }
    }

    #[test]
    fn own_vocabularies_are_disjoint() {
        let cfg = SynthConfig::default();
        let lex = Lexicon::new(&cfg);
        let mut all: Vec<&String> = lex.own.iter().flatten().chain(&lex.shared).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}
