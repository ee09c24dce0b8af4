//! Transcript parsing: raw episode text into scenes of dialogue and
//! background lines, plus the alias table that folds name variants onto
//! canonical main-character names.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Maximum number of words a speaker prefix may contain.
const MAX_SPEAKER_WORDS: usize = 5;

/// Characters that may not appear before the speaker delimiter.
const NON_NAME_DELIMITERS: &[char] = &['!', '?', ';', ',', '"', '(', ')', '[', ']', '{', '}'];

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("episode {0} contains no dialogue lines")]
    EmptyEpisode(String),
    #[error("rule config: {0}")]
    InvalidRules(String),
    #[error("variant {variant:?} is claimed by both {first:?} and {second:?}")]
    DuplicateVariant {
        variant: String,
        first: String,
        second: String,
    },
    #[error("cast list is empty")]
    EmptyCast,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scene-boundary and speaker rules.
///
/// The default boundary patterns are a reconstruction of common transcript
/// conventions (bracketed locations, `Scene`/`Cut` keywords, `INT.`/`EXT.`
/// slug lines); they are data, not ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub boundary_location_patterns: Vec<String>,
    pub boundary_keywords: Vec<String>,
    pub boundary_bracket_markers: Vec<String>,
    pub speaker_delimiter: String,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            boundary_location_patterns: vec![
                r"^(?:INT|EXT|INT/EXT)[.\s]".to_owned(),
                r"^(?i:location)\s*:".to_owned(),
            ],
            boundary_keywords: vec!["Scene".to_owned(), "Cut".to_owned()],
            boundary_bracket_markers: vec!["[".to_owned()],
            speaker_delimiter: ":".to_owned(),
        }
    }
}

impl RuleConfig {
    /// Reads rules from a TOML key-value file; absent keys keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ParseError> {
        let raw = std::fs::read_to_string(path)?;
        Self::from_toml(&raw)
    }

    pub fn from_toml(raw: &str) -> Result<Self, ParseError> {
        let cfg: RuleConfig =
            toml::from_str(raw).map_err(|e| ParseError::InvalidRules(e.to_string()))?;
        cfg.compile()?;
        Ok(cfg)
    }

    fn compile(&self) -> Result<CompiledRules, ParseError> {
        if self.boundary_location_patterns.is_empty()
            || self.boundary_keywords.is_empty()
            || self.boundary_bracket_markers.is_empty()
        {
            return Err(ParseError::InvalidRules("boundary lists must be non-empty".into()));
        }
        if self.speaker_delimiter.is_empty() {
            return Err(ParseError::InvalidRules("speaker delimiter is empty".into()));
        }
        let locations = self
            .boundary_location_patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|e| ParseError::InvalidRules(format!("{p}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompiledRules {
            locations,
            keywords: self.boundary_keywords.iter().map(|k| k.to_lowercase()).collect(),
            brackets: self.boundary_bracket_markers.clone(),
            delimiter: self.speaker_delimiter.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    Dialogue,
    Background,
}

/// One transcript line. `speaker` is present exactly for dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub kind: LineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    pub text: String,
}

impl Line {
    pub fn dialogue(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self { kind: LineKind::Dialogue, speaker: Some(speaker.into()), text: text.into() }
    }

    pub fn background(text: impl Into<String>) -> Self {
        Self { kind: LineKind::Background, speaker: None, text: text.into() }
    }

    pub fn is_dialogue(&self) -> bool {
        self.kind == LineKind::Dialogue
    }

    /// Renders the line back into transcript form.
    pub fn render(&self, delimiter: &str) -> String {
        match (&self.speaker, self.text.is_empty()) {
            (Some(s), true) => format!("{s}{delimiter}"),
            (Some(s), false) => format!("{s}{delimiter} {}", self.text),
            (None, _) => self.text.clone(),
        }
    }
}

/// A contiguous block of lines; `scene_index` orders scenes within a show.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub show: String,
    pub episode_id: String,
    pub scene_index: u64,
    pub lines: Vec<Line>,
}

impl Scene {
    pub fn dialogue(&self) -> impl Iterator<Item = &Line> {
        self.lines.iter().filter(|l| l.is_dialogue())
    }

    /// All line texts joined by newlines (speaker names excluded).
    pub fn joined_text(&self) -> String {
        self.lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

struct CompiledRules {
    locations: Vec<Regex>,
    keywords: Vec<String>,
    brackets: Vec<String>,
    delimiter: String,
}

impl CompiledRules {
    fn is_boundary(&self, line: &str) -> bool {
        if self.brackets.iter().any(|b| line.starts_with(b.as_str())) {
            return true;
        }
        if self.locations.iter().any(|re| re.is_match(line)) {
            return true;
        }
        let lower = line.to_lowercase();
        self.keywords.iter().any(|k| {
            lower.starts_with(k.as_str())
                && lower[k.len()..].chars().next().map_or(true, |c| !c.is_alphanumeric())
        })
    }

    fn split_speaker<'a>(&self, line: &'a str) -> Option<(&'a str, &'a str)> {
        let at = line.find(self.delimiter.as_str())?;
        let prefix = line[..at].trim();
        let rest = line[at + self.delimiter.len()..].trim();
        let words = prefix.split_whitespace().count();
        let starts_with_letter = prefix.chars().next().is_some_and(char::is_alphabetic);
        if words == 0
            || words > MAX_SPEAKER_WORDS
            || !starts_with_letter
            || prefix.contains(NON_NAME_DELIMITERS)
        {
            return None;
        }
        Some((prefix, rest))
    }
}

/// Splits episodes into scenes with a fixed rule set.
pub struct SceneParser {
    rules: CompiledRules,
}

impl SceneParser {
    pub fn new(rules: &RuleConfig) -> Result<Self, ParseError> {
        Ok(Self { rules: rules.compile()? })
    }

    /// Parses one episode. Scene indices start at `first_index`.
    pub fn parse(
        &self,
        raw_text: &str,
        show: &str,
        episode_id: &str,
        first_index: u64,
    ) -> Result<Vec<Scene>, ParseError> {
        let cleaned = text::strip_controls(raw_text);
        let mut groups: Vec<Vec<Line>> = Vec::new();
        let mut current: Vec<Line> = Vec::new();
        let mut any_dialogue = false;

        for raw_line in cleaned.lines() {
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            if self.rules.is_boundary(line) {
                if !current.is_empty() {
                    groups.push(std::mem::take(&mut current));
                }
                current.push(Line::background(line));
                continue;
            }
            match self.rules.split_speaker(line) {
                Some((speaker, rest)) => {
                    any_dialogue = true;
                    current.push(Line::dialogue(speaker, rest));
                }
                None => current.push(Line::background(line)),
            }
        }
        if !current.is_empty() {
            groups.push(current);
        }
        if !any_dialogue {
            return Err(ParseError::EmptyEpisode(episode_id.to_owned()));
        }
        Ok(groups
            .into_iter()
            .enumerate()
            .map(|(i, lines)| Scene {
                show: show.to_owned(),
                episode_id: episode_id.to_owned(),
                scene_index: first_index + i as u64,
                lines,
            })
            .collect())
    }

    /// Parses a show's episodes in order, numbering scenes globally.
    pub fn parse_show<'a>(
        &self,
        show: &str,
        episodes: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Vec<Scene>, ParseError> {
        let mut scenes = Vec::new();
        for (episode_id, raw) in episodes {
            let next = scenes.len() as u64;
            scenes.extend(self.parse(raw, show, episode_id, next)?);
        }
        Ok(scenes)
    }
}

/// Parses a single episode with scene indices starting at zero.
pub fn parse_episode(
    raw_text: &str,
    rules: &RuleConfig,
    show: &str,
    episode_id: &str,
) -> Result<Vec<Scene>, ParseError> {
    SceneParser::new(rules)?.parse(raw_text, show, episode_id, 0)
}

/// Surface name variant to canonical main-character name, for one show.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    variants: BTreeMap<String, String>,
    folded: BTreeMap<String, String>,
}

impl AliasTable {
    fn insert(&mut self, variant: &str, canonical: &str) -> Result<(), ParseError> {
        let key = text::fold_name(variant);
        if let Some(existing) = self.folded.get(&key) {
            if existing != canonical {
                return Err(ParseError::DuplicateVariant {
                    variant: variant.to_owned(),
                    first: existing.clone(),
                    second: canonical.to_owned(),
                });
            }
        }
        self.folded.insert(key, canonical.to_owned());
        self.variants.insert(variant.to_owned(), canonical.to_owned());
        Ok(())
    }

    /// Surface variants and their canonical names.
    pub fn variants(&self) -> &BTreeMap<String, String> {
        &self.variants
    }

    /// Canonical names, i.e. the main-character roster in lexicographic order.
    pub fn canonical_names(&self) -> BTreeSet<&str> {
        self.variants.values().map(String::as_str).collect()
    }

    pub fn lookup(&self, name: &str) -> Option<&str> {
        self.folded.get(&text::fold_name(name)).map(String::as_str)
    }

    fn rebuild_fold(&mut self) {
        self.folded = self
            .variants
            .iter()
            .map(|(v, c)| (text::fold_name(v), c.clone()))
            .collect();
    }

    /// Reads a TOML cast file: `canonical = ["Variant", ...]` per entry.
    pub fn load_cast(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<String>)>, ParseError> {
        let raw = std::fs::read_to_string(path)?;
        let table: BTreeMap<String, Vec<String>> =
            toml::from_str(&raw).map_err(|e| ParseError::InvalidRules(e.to_string()))?;
        Ok(table.into_iter().collect())
    }
}

impl AliasTable {
    /// Parses a serialized table (variant → canonical JSON object).
    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        let variants: BTreeMap<String, String> = serde_json::from_str(raw)?;
        let mut table = AliasTable { variants, folded: BTreeMap::new() };
        table.rebuild_fold();
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.variants).expect("string map serializes")
    }
}

/// Builds the alias table from a cast list, adding every speaker string in
/// `scenes` that case-insensitively matches a listed variant.
pub fn build_alias_table(
    scenes: &[Scene],
    cast_list: &[(String, Vec<String>)],
) -> Result<AliasTable, ParseError> {
    if cast_list.is_empty() {
        return Err(ParseError::EmptyCast);
    }
    let mut table = AliasTable::default();
    for (canonical, variants) in cast_list {
        for v in variants {
            table.insert(v, canonical)?;
        }
    }
    let observed: BTreeSet<&str> = scenes
        .iter()
        .flat_map(|s| s.lines.iter())
        .filter_map(|l| l.speaker.as_deref())
        .collect();
    for speaker in observed {
        if let Some(canonical) = table.lookup(speaker).map(str::to_owned) {
            table.insert(speaker, &canonical)?;
        }
    }
    Ok(table)
}

/// Canonical name for `name`, if it is a known variant after trimming and case-folding.
pub fn normalize_speaker(name: &str, table: &AliasTable) -> Option<String> {
    table.lookup(name).map(str::to_owned)
}

/// Rewrites dialogue speakers to canonical names; unmatched speakers
/// (supporting characters) keep their surface form.
pub fn canonicalize_scenes(scenes: &[Scene], table: &AliasTable) -> Vec<Scene> {
    scenes
        .iter()
        .map(|s| Scene {
            lines: s
                .lines
                .iter()
                .map(|l| match &l.speaker {
                    Some(sp) => match table.lookup(sp) {
                        Some(c) => Line::dialogue(c, l.text.clone()),
                        None => l.clone(),
                    },
                    None => l.clone(),
                })
                .collect(),
            ..s.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules() -> RuleConfig {
        RuleConfig::default()
    }

    #[test]
    fn bracket_boundaries_split_scenes() {
        let raw = "[Central Perk]\nRoss: Hi.\nRachel: Hey!\n[Monica's apartment]\nMonica: Dinner!";
        let scenes = parse_episode(raw, &rules(), "friends", "e1").unwrap();
        assert_eq!(scenes.len(), 2);
        let kinds = |s: &Scene| {
            (
                s.lines.iter().filter(|l| !l.is_dialogue()).count(),
                s.lines.iter().filter(|l| l.is_dialogue()).count(),
            )
        };
        assert_eq!(kinds(&scenes[0]), (1, 2));
        assert_eq!(kinds(&scenes[1]), (1, 1));
        assert_eq!(scenes[0].lines[0], Line::background("[Central Perk]"));
        assert_eq!(scenes[0].lines[1], Line::dialogue("Ross", "Hi."));
        assert_eq!(scenes[1].scene_index, 1);
    }

    #[test]
    fn no_boundary_means_one_scene() {
        let raw = "Ross: a\nRachel: b\n(they hug)\nRoss: c";
        let scenes = parse_episode(raw, &rules(), "friends", "e1").unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].lines.len(), 4);
    }

    #[test]
    fn keyword_boundaries() {
        let raw = "Scene: kitchen\nA: x\nCut\nB: y";
        let scenes = parse_episode(raw, &rules(), "s", "e").unwrap();
        assert_eq!(scenes.len(), 2);
        assert_eq!(scenes[0].lines[0].text, "Scene: kitchen");
        assert_eq!(scenes[1].lines[0], Line::background("Cut"));
        assert_eq!(scenes[1].lines[1], Line::dialogue("B", "y"));
    }

    #[test]
    fn keyword_must_end_at_word_boundary() {
        let raw = "Cutting: the cake\nRoss: hi";
        let scenes = parse_episode(raw, &rules(), "s", "e").unwrap();
        assert_eq!(scenes.len(), 1);
        assert!(scenes[0].lines[0].is_dialogue());
    }

    #[test]
    fn long_or_punctuated_prefixes_are_background() {
        let raw = "Ross: ok\nThen all of them walk in and: sit\nWait, what: no\nRoss: (phone ringing) Hello?";
        let scenes = parse_episode(raw, &rules(), "s", "e").unwrap();
        let lines = &scenes[0].lines;
        assert!(lines[0].is_dialogue());
        assert!(!lines[1].is_dialogue());
        assert!(!lines[2].is_dialogue());
        assert_eq!(lines[3], Line::dialogue("Ross", "(phone ringing) Hello?"));
    }

    #[test]
    fn no_dialogue_is_an_error() {
        let err = parse_episode("[Somewhere]\njust words", &rules(), "s", "e").unwrap_err();
        assert!(matches!(err, ParseError::EmptyEpisode(_)));
        assert!(matches!(parse_episode("", &rules(), "s", "e"), Err(ParseError::EmptyEpisode(_))));
    }

    #[test]
    fn control_characters_are_stripped() {
        let scenes = parse_episode("Ross:\u{1b} hi\r\nRachel: yo\u{0}", &rules(), "s", "e").unwrap();
        assert_eq!(scenes[0].lines[0], Line::dialogue("Ross", "hi"));
        assert_eq!(scenes[0].lines[1], Line::dialogue("Rachel", "yo"));
    }

    #[test]
    fn rules_from_toml() {
        let cfg = RuleConfig::from_toml("boundary_keywords = [\"Scene\"]\nspeaker_delimiter = \">\"").unwrap();
        assert_eq!(cfg.boundary_keywords, vec!["Scene"]);
        assert_eq!(cfg.boundary_bracket_markers, vec!["["]);
        let scenes = parse_episode("Ross> hi\nScene two\nJoey> yo", &cfg, "s", "e").unwrap();
        assert_eq!(scenes.len(), 2);
        assert!(RuleConfig::from_toml("boundary_keywords = []").is_err());
        assert!(RuleConfig::from_toml("boundary_location_patterns = [\"(\"]").is_err());
        assert!(RuleConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn parse_show_numbers_globally() {
        let parser = SceneParser::new(&rules()).unwrap();
        let scenes = parser
            .parse_show("s", [("e1", "[a]\nA: x\n[b]\nB: y"), ("e2", "C: z")])
            .unwrap();
        let idx: Vec<u64> = scenes.iter().map(|s| s.scene_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(scenes[2].episode_id, "e2");
    }

    fn cast() -> Vec<(String, Vec<String>)> {
        vec![
            ("ross".into(), vec!["Ross".into(), "Ross Geller".into()]),
            ("rachel".into(), vec!["Rachel".into(), "Rach".into()]),
        ]
    }

    #[test]
    fn alias_table_adds_case_variants() {
        let scenes = parse_episode("ROSS: hi\nGunther: coffee", &rules(), "s", "e").unwrap();
        let table = build_alias_table(&scenes, &cast()).unwrap();
        assert_eq!(table.variants().get("ROSS").map(String::as_str), Some("ross"));
        assert!(table.variants().get("Gunther").is_none());
        assert_eq!(table.canonical_names().into_iter().collect::<Vec<_>>(), vec!["rachel", "ross"]);
    }

    #[test]
    fn alias_table_without_corpus_is_the_cast() {
        let table = build_alias_table(&[], &cast()).unwrap();
        let keys: Vec<&str> = table.variants().keys().map(String::as_str).collect();
        assert_eq!(keys, vec!["Rach", "Rachel", "Ross", "Ross Geller"]);
    }

    #[test]
    fn duplicate_variant_rejected() {
        let cast = vec![
            ("joey".to_owned(), vec!["Joe".to_owned()]),
            ("joe".to_owned(), vec!["Joe".to_owned()]),
        ];
        assert!(matches!(build_alias_table(&[], &cast), Err(ParseError::DuplicateVariant { .. })));
        assert!(matches!(build_alias_table(&[], &[]), Err(ParseError::EmptyCast)));
    }

    #[test]
    fn normalize_speaker_folds() {
        let table = build_alias_table(&[], &cast()).unwrap();
        assert_eq!(normalize_speaker("Ross Geller", &table).as_deref(), Some("ross"));
        assert_eq!(normalize_speaker("  rachel  ", &table).as_deref(), Some("rachel"));
        assert_eq!(normalize_speaker("Gunther", &table), None);
    }

    #[test]
    fn alias_table_json_round_trip() {
        let table = build_alias_table(&[], &cast()).unwrap();
        let back = AliasTable::from_json(&table.to_json()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.lookup("RACH"), Some("rachel"));
    }

    #[test]
    fn canonicalize_keeps_supporting_names() {
        let scenes = parse_episode("Rach: hi\nGunther: coffee", &rules(), "s", "e").unwrap();
        let table = build_alias_table(&scenes, &cast()).unwrap();
        let canon = canonicalize_scenes(&scenes, &table);
        assert_eq!(canon[0].lines[0].speaker.as_deref(), Some("rachel"));
        assert_eq!(canon[0].lines[1].speaker.as_deref(), Some("Gunther"));
    }
}
