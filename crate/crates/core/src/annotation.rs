//! Human evidence, dependency and reasoning labels, and agreement statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{MaskedInstanceSet, SceneRef, SpeakerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coarse {
    LinguisticStyle,
    Personality,
    Fact,
    Memory,
    InsideScene,
    Exclusion,
}

impl Coarse {
    pub const ALL: [Coarse; 6] = [Self::LinguisticStyle, Self::Personality, Self::Fact, Self::Memory, Self::InsideScene, Self::Exclusion];

    /// Legal fine labels; empty when the type has no subtypes.
    pub fn fine_options(self) -> &'static [Fine] {
        match self {
            Self::Fact => &[Fine::Attribute, Fine::Relation, Fine::Status],
            Self::InsideScene => &[Fine::Background, Fine::Mention],
            _ => &[],
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Self::LinguisticStyle => "linguistic_style",
            Self::Personality => "personality",
            Self::Fact => "fact",
            Self::Memory => "memory",
            Self::InsideScene => "inside_scene",
            Self::Exclusion => "exclusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fine {
    Attribute,
    Relation,
    Status,
    Background,
    Mention,
}

impl Fine {
    pub fn code(self) -> &'static str {
        match self {
            Self::Attribute => "attribute",
            Self::Relation => "relation",
            Self::Status => "status",
            Self::Background => "background",
            Self::Mention => "mention",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvidenceLabel {
    pub coarse: Coarse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<Fine>,
}

impl EvidenceLabel {
    pub fn new(coarse: Coarse, fine: Option<Fine>) -> Self {
        Self { coarse, fine }
    }

    pub fn is_legal(&self) -> bool {
        let opts = self.coarse.fine_options();
        match self.fine {
            None => opts.is_empty(),
            Some(f) => opts.contains(&f),
        }
    }

    /// `coarse` or `coarse/fine`.
    pub fn code(&self) -> String {
        match self.fine {
            Some(f) => format!("{}/{}", self.coarse.code(), f.code()),
            None => self.coarse.code().to_owned(),
        }
    }

    /// Every legal leaf label.
    pub fn leaves() -> Vec<EvidenceLabel> {
        Coarse::ALL
            .iter()
            .flat_map(|&c| {
                let opts = c.fine_options();
                if opts.is_empty() {
                    vec![EvidenceLabel::new(c, None)]
                } else {
                    opts.iter().map(|&f| EvidenceLabel::new(c, Some(f))).collect()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependency {
    None,
    Direct,
    Indirect,
}

impl Dependency {
    pub fn code(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Direct => "direct",
            Self::Indirect => "indirect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reasoning {
    DefaultConjunction,
    MultihopCharacter,
    MultihopTextual,
    Commonsense,
}

impl Reasoning {
    pub const ALL: [Reasoning; 4] = [Self::DefaultConjunction, Self::MultihopCharacter, Self::MultihopTextual, Self::Commonsense];

    pub fn code(self) -> &'static str {
        match self {
            Self::DefaultConjunction => "default_conjunction",
            Self::MultihopCharacter => "multihop_character",
            Self::MultihopTextual => "multihop_textual",
            Self::Commonsense => "commonsense",
        }
    }
}

/// One annotator's answer for one masked speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub show: String,
    pub episode_id: String,
    pub scene_index: u64,
    pub speaker_id: SpeakerId,
    pub annotator_id: String,
    pub guess: String,
    pub evidence: Vec<EvidenceLabel>,
    pub dependency: Dependency,
    #[serde(default)]
    pub reasoning: Vec<Reasoning>,
    #[serde(default)]
    pub timestamp: u64,
}

impl AnnotationRecord {
    pub fn scene_ref(&self) -> SceneRef {
        SceneRef { show: self.show.clone(), episode_id: self.episode_id.clone(), scene_index: self.scene_index }
    }

    pub fn key(&self) -> (SceneRef, SpeakerId) {
        (self.scene_ref(), self.speaker_id)
    }

    pub fn has_coarse(&self, c: Coarse) -> bool {
        self.evidence.iter().any(|e| e.coarse == c)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("annotation refers to scene {0} which is not in the corpus")]
    UnresolvableScene(SceneRef),
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no labels to compare")]
    Empty,
    #[error("the two record sets share no (scene, speaker) item")]
    NoOverlap,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Validation {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Schema check of `record` against its instance. `siblings` are other
/// records of the same annotator, used for the exclusion transitivity rule.
pub fn validate_annotation(
    record: &AnnotationRecord,
    instance: Option<&MaskedInstanceSet>,
    siblings: &[AnnotationRecord],
) -> Result<Validation, AnnotationError> {
    let instance = match instance {
        Some(i) if i.scene_ref() == record.scene_ref() => i,
        _ => return Err(AnnotationError::UnresolvableScene(record.scene_ref())),
    };
    let mut v = Validation::default();
    if !instance.gold.contains_key(&record.speaker_id) {
        v.errors.push(format!("{} is not a masked speaker of this scene", record.speaker_id));
    }
    if !instance.candidates.contains(&record.guess) {
        v.errors.push(format!("guess {:?} is not among the candidates", record.guess));
    }
    if record.evidence.is_empty() {
        v.errors.push("at least one evidence label is required".into());
    }
    for e in &record.evidence {
        if !e.is_legal() {
            match e.fine {
                None => v.errors.push(format!("{} needs a fine-grained type", e.coarse.code())),
                Some(f) => v.errors.push(format!("{} is not a subtype of {}", f.code(), e.coarse.code())),
            }
        }
    }
    let distinct: BTreeSet<&EvidenceLabel> = record.evidence.iter().collect();
    if distinct.len() != record.evidence.len() {
        v.warnings.push("duplicate evidence labels".into());
    }

    let memory = record.has_coarse(Coarse::Memory);
    let inside = record.has_coarse(Coarse::InsideScene);
    if memory && !inside && record.dependency == Dependency::None {
        v.warnings.push("memory evidence without inside-scene evidence usually carries a history dependency".into());
    }
    if record.has_coarse(Coarse::Exclusion) && record.dependency == Dependency::None {
        let inherited = siblings.iter().any(|s| {
            s.scene_ref() == record.scene_ref()
                && s.annotator_id == record.annotator_id
                && s.speaker_id != record.speaker_id
                && s.dependency != Dependency::None
        });
        if inherited {
            v.warnings.push("exclusion over a history-dependent character should inherit its dependency".into());
        }
    }
    Ok(v)
}

/// Cohen's kappa over two categorical label sequences.
pub fn cohen_kappa<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<f64, AnnotationError> {
    if a.len() != b.len() {
        return Err(AnnotationError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AnnotationError::Empty);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut ma: BTreeMap<&T, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&T, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1.0;
        *mb.entry(y).or_default() += 1.0;
    }
    let p_o = agree / n;
    let p_e: f64 = ma.iter().map(|(k, ca)| ca / n * mb.get(k).copied().unwrap_or(0.0) / n).sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Mean binary kappa over the categories, skipping categories neither side uses.
fn mean_presence_kappa<C: Copy>(categories: &[C], a: &[Vec<bool>], b: &[Vec<bool>]) -> Option<f64> {
    let mut ks = Vec::new();
    for k in 0..categories.len() {
        let xa: Vec<bool> = a.iter().map(|r| r[k]).collect();
        let xb: Vec<bool> = b.iter().map(|r| r[k]).collect();
        if xa.iter().chain(&xb).any(|&v| v) {
            ks.push(cohen_kappa(&xa, &xb).expect("equal non-empty lengths"));
        }
    }
    (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub items: usize,
    /// Group name → kappa; `None` when no item carries a label of the group.
    pub groups: BTreeMap<String, Option<f64>>,
    pub method: String,
}

pub const AGREEMENT_METHOD: &str = "evidence and reasoning: mean of per-category binary kappa over presence indicators, categories unused by both annotators skipped; dependency: categorical kappa";

/// Agreement between two annotators over the items both labeled. When an
/// annotator has several records for an item the first one counts.
pub fn agreement_report(records_a: &[AnnotationRecord], records_b: &[AnnotationRecord]) -> Result<AgreementReport, AnnotationError> {
    let index = |rs: &[AnnotationRecord]| {
        let mut m: BTreeMap<(SceneRef, SpeakerId), AnnotationRecord> = BTreeMap::new();
        for r in rs {
            m.entry(r.key()).or_insert_with(|| r.clone());
        }
        m
    };
    let ia = index(records_a);
    let ib = index(records_b);
    let pairs: Vec<(&AnnotationRecord, &AnnotationRecord)> = ia.iter().filter_map(|(k, ra)| ib.get(k).map(|rb| (ra, rb))).collect();
    if pairs.is_empty() {
        return Err(AnnotationError::NoOverlap);
    }

    let coarse_rows = |r: &AnnotationRecord| Coarse::ALL.iter().map(|&c| r.has_coarse(c)).collect::<Vec<bool>>();
    let leaves = EvidenceLabel::leaves();
    let fine_rows = |r: &AnnotationRecord| leaves.iter().map(|l| r.evidence.contains(l)).collect::<Vec<bool>>();
    let reasoning_rows = |r: &AnnotationRecord| Reasoning::ALL.iter().map(|t| r.reasoning.contains(t)).collect::<Vec<bool>>();

    let split = |f: &dyn Fn(&AnnotationRecord) -> Vec<bool>| -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
        (pairs.iter().map(|(a, _)| f(a)).collect(), pairs.iter().map(|(_, b)| f(b)).collect())
    };
    let mut groups = BTreeMap::new();
    let (ca, cb) = split(&coarse_rows);
    groups.insert("coarse".to_owned(), mean_presence_kappa(&Coarse::ALL, &ca, &cb));
    let (fa, fb) = split(&fine_rows);
    groups.insert("fine".to_owned(), mean_presence_kappa(&leaves, &fa, &fb));
    let (ra, rb) = split(&reasoning_rows);
    groups.insert("reasoning".to_owned(), mean_presence_kappa(&Reasoning::ALL, &ra, &rb));

    let da: Vec<Dependency> = pairs.iter().map(|(a, _)| a.dependency).collect();
    let db: Vec<Dependency> = pairs.iter().map(|(_, b)| b.dependency).collect();
    groups.insert("all_dependency".to_owned(), Some(cohen_kappa(&da, &db)?));
    let direct = |d: &Dependency| *d == Dependency::Direct;
    let xa: Vec<bool> = da.iter().map(direct).collect();
    let xb: Vec<bool> = db.iter().map(direct).collect();
    groups.insert("direct_only".to_owned(), Some(cohen_kappa(&xa, &xb)?));

    Ok(AgreementReport { items: pairs.len(), groups, method: AGREEMENT_METHOD.to_owned() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::MaskedLine;
    use crate::parser::LineKind;

    fn sid(i: usize) -> SpeakerId {
        SpeakerId::new(i).unwrap()
    }

    fn instance() -> MaskedInstanceSet {
        let line = |x: usize| MaskedLine { kind: LineKind::Dialogue, speaker_id: Some(sid(x)), speaker: None, text: "hi".into() };
        MaskedInstanceSet {
            show: "friends".into(),
            episode_id: "e1".into(),
            scene_index: 2,
            lines: vec![line(0), line(1)],
            candidates: vec!["ross".into(), "rachel".into()],
            gold: [(sid(0), "ross".to_string()), (sid(1), "rachel".to_string())].into_iter().collect(),
            rng_seed: 0,
        }
    }

    fn record(x: usize, guess: &str, evidence: Vec<EvidenceLabel>, dependency: Dependency) -> AnnotationRecord {
        AnnotationRecord {
            show: "friends".into(),
            episode_id: "e1".into(),
            scene_index: 2,
            speaker_id: sid(x),
            annotator_id: "a".into(),
            guess: guess.into(),
            evidence,
            dependency,
            reasoning: vec![],
            timestamp: 0,
        }
    }

    #[test]
    fn schema_rules() {
        let inst = instance();
        let fact = record(0, "ross", vec![EvidenceLabel::new(Coarse::Fact, None)], Dependency::None);
        assert!(!validate_annotation(&fact, Some(&inst), &[]).unwrap().is_ok());
        let wrong_sub = record(0, "ross", vec![EvidenceLabel::new(Coarse::Fact, Some(Fine::Mention))], Dependency::None);
        assert!(!validate_annotation(&wrong_sub, Some(&inst), &[]).unwrap().is_ok());
        let outsider = record(0, "gunther", vec![EvidenceLabel::new(Coarse::Personality, None)], Dependency::None);
        assert!(!validate_annotation(&outsider, Some(&inst), &[]).unwrap().is_ok());
        let both = record(
            0,
            "ross",
            vec![EvidenceLabel::new(Coarse::Memory, None), EvidenceLabel::new(Coarse::InsideScene, Some(Fine::Mention))],
            Dependency::None,
        );
        let v = validate_annotation(&both, Some(&inst), &[]).unwrap();
        assert!(v.is_ok() && v.warnings.is_empty());
        let mut elsewhere = instance();
        elsewhere.scene_index = 9;
        assert!(matches!(validate_annotation(&both, Some(&elsewhere), &[]), Err(AnnotationError::UnresolvableScene(_))));
    }

    #[test]
    fn exclusion_transitivity_warns() {
        let inst = instance();
        let other = record(1, "rachel", vec![EvidenceLabel::new(Coarse::Memory, None)], Dependency::Direct);
        let excl = record(0, "ross", vec![EvidenceLabel::new(Coarse::Exclusion, None)], Dependency::None);
        let v = validate_annotation(&excl, Some(&inst), std::slice::from_ref(&other)).unwrap();
        assert!(v.is_ok());
        assert_eq!(v.warnings.len(), 1);
    }

    #[test]
    fn kappa_hand_case() {
        // 20 items: A says yes 12 times, B 10 times, both yes 9 times
        let mut a = vec![true; 12];
        a.extend(vec![false; 8]);
        let mut b = vec![true; 9];
        b.extend(vec![false; 3]);
        b.push(true);
        b.extend(vec![false; 7]);
        let k = cohen_kappa(&a, &b).unwrap();
        assert!((k - 0.6).abs() < 1e-12, "{k}");
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1], &[1, 2]).unwrap_err(), AnnotationError::LengthMismatch(1, 2));
    }

    #[test]
    fn labels_use_string_codes() {
        let l = EvidenceLabel::new(Coarse::InsideScene, Some(Fine::Mention));
        assert_eq!(serde_json::to_string(&l).unwrap(), r#"{"coarse":"inside_scene","fine":"mention"}"#);
        assert_eq!(l.code(), "inside_scene/mention");
        assert_eq!(EvidenceLabel::leaves().len(), 9);
    }

    #[test]
    fn agreement_identical_and_disjoint() {
        let a = vec![
            record(0, "ross", vec![EvidenceLabel::new(Coarse::Personality, None)], Dependency::Indirect),
            record(1, "rachel", vec![EvidenceLabel::new(Coarse::Fact, Some(Fine::Status))], Dependency::Direct),
        ];
        let rep = agreement_report(&a, &a).unwrap();
        assert_eq!(rep.items, 2);
        for (g, k) in &rep.groups {
            if g != "reasoning" {
                assert_eq!(*k, Some(1.0), "{g}");
            }
        }
        assert_eq!(rep.groups["reasoning"], None);
        let mut b = a.clone();
        b.iter_mut().for_each(|r| r.scene_index = 5);
        assert_eq!(agreement_report(&a, &b).unwrap_err(), AnnotationError::NoOverlap);
    }
}
