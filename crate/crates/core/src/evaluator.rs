//! Accuracy metrics, breakdowns and the random baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::AnnotationRecord;
use crate::anonymizer::{MaskedInstanceSet, SceneRef, SpeakerId};
use crate::models::{CharacterModel, Decoding, ModelError};

/// One scored instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub show: String,
    pub episode_id: String,
    pub scene_index: u64,
    pub speaker_id: SpeakerId,
    pub predicted: String,
    pub gold: String,
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn scene_ref(&self) -> SceneRef {
        SceneRef { show: self.show.clone(), episode_id: self.episode_id.clone(), scene_index: self.scene_index }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no predictions to score")]
    EmptyInput,
    #[error("axis {0} needs annotation records")]
    NoAnnotations(Axis),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Runs `model` over `instances` and records every masked speaker.
pub fn predict_records(
    model: &CharacterModel,
    instances: &[MaskedInstanceSet],
    decoding: Decoding,
    keep_logits: bool,
) -> Result<Vec<PredictionRecord>, ModelError> {
    let mut out = Vec::new();
    for inst in instances {
        for p in model.predict(inst, decoding)? {
            out.push(PredictionRecord {
                show: inst.show.clone(),
                episode_id: inst.episode_id.clone(),
                scene_index: inst.scene_index,
                speaker_id: p.speaker_id,
                gold: inst.gold.get(&p.speaker_id).cloned().unwrap_or_default(),
                predicted: p.predicted,
                candidates: inst.candidates.len(),
                logits: keep_logits.then_some(p.logits),
            });
        }
    }
    Ok(out)
}

pub fn instance_accuracy(preds: &[PredictionRecord]) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(preds.iter().filter(|p| p.correct()).count() as f64 / preds.len() as f64)
}

fn by_scene(preds: &[PredictionRecord]) -> BTreeMap<SceneRef, Vec<&PredictionRecord>> {
    let mut m: BTreeMap<SceneRef, Vec<&PredictionRecord>> = BTreeMap::new();
    for p in preds {
        m.entry(p.scene_ref()).or_default().push(p);
    }
    m
}

fn macro_over<'a>(scenes: impl Iterator<Item = &'a Vec<&'a PredictionRecord>>) -> Option<f64> {
    let accs: Vec<f64> = scenes.map(|ps| ps.iter().filter(|p| p.correct()).count() as f64 / ps.len() as f64).collect();
    (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Mean over scenes of per-scene instance accuracy.
pub fn scene_macro_accuracy(preds: &[PredictionRecord]) -> Result<f64, EvalError> {
    let scenes = by_scene(preds);
    macro_over(scenes.values()).ok_or(EvalError::EmptyInput)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Character,
    SpeakersPerScene,
    Evidence,
    Dependency,
    Reasoning,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Character => "character",
            Axis::SpeakersPerScene => "speakers_per_scene",
            Axis::Evidence => "evidence",
            Axis::Dependency => "dependency",
            Axis::Reasoning => "reasoning",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "character" => Ok(Axis::Character),
            "speakers_per_scene" | "speakers" => Ok(Axis::SpeakersPerScene),
            "evidence" => Ok(Axis::Evidence),
            "dependency" => Ok(Axis::Dependency),
            "reasoning" => Ok(Axis::Reasoning),
            _ => Err(format!("unknown axis {s:?}")),
        }
    }
}

impl Axis {
    /// Whether an instance can fall into several categories.
    pub fn multi_label(self) -> bool {
        matches!(self, Axis::Evidence | Axis::Reasoning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub category: String,
    pub accuracy: f64,
    pub support: usize,
    /// Scene-level macro accuracy within the category (speakers-per-scene axis).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_macro: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub axis: Axis,
    pub rows: Vec<BreakdownRow>,
    pub matched: usize,
    pub unmatched: usize,
    pub multi_label: bool,
}

/// Accuracy per category along `axis`. Annotation axes join predictions to
/// the first annotation record of each (scene, speaker); multi-label axes
/// count an instance once per label it carries.
pub fn breakdown(preds: &[PredictionRecord], axis: Axis, annotations: Option<&[AnnotationRecord]>) -> Result<BreakdownReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<&PredictionRecord>> = BTreeMap::new();
    let mut matched = 0;
    let mut unmatched = 0;
    match axis {
        Axis::Character => {
            for p in preds {
                groups.entry(p.gold.clone()).or_default().push(p);
            }
            matched = preds.len();
        }
        Axis::SpeakersPerScene => {
            for ps in by_scene(preds).into_values() {
                let n = ps.len();
                groups.entry(n.to_string()).or_default().extend(ps);
            }
            matched = preds.len();
        }
        Axis::Evidence | Axis::Dependency | Axis::Reasoning => {
            let records = annotations.filter(|a| !a.is_empty()).ok_or(EvalError::NoAnnotations(axis))?;
            let mut index: BTreeMap<(SceneRef, SpeakerId), &AnnotationRecord> = BTreeMap::new();
            for r in records {
                index.entry(r.key()).or_insert(r);
            }
            for p in preds {
                let Some(r) = index.get(&(p.scene_ref(), p.speaker_id)) else {
                    unmatched += 1;
                    continue;
                };
                matched += 1;
                let cats: BTreeSet<String> = match axis {
                    Axis::Evidence => r.evidence.iter().map(|e| e.coarse.code().to_owned()).collect(),
                    Axis::Dependency => [r.dependency.code().to_owned()].into(),
                    _ if r.reasoning.is_empty() => ["none".to_owned()].into(),
                    _ => r.reasoning.iter().map(|t| t.code().to_owned()).collect(),
                };
                for c in cats {
                    groups.entry(c).or_default().push(p);
                }
            }
        }
    }
    let rows = groups
        .into_iter()
        .map(|(category, ps)| {
            let correct = ps.iter().filter(|p| p.correct()).count();
            let scene_macro = (axis == Axis::SpeakersPerScene).then(|| {
                let owned: Vec<PredictionRecord> = ps.iter().map(|p| (*p).clone()).collect();
                scene_macro_accuracy(&owned).expect("non-empty group")
            });
            BreakdownRow { category, accuracy: correct as f64 / ps.len() as f64, support: ps.len(), scene_macro }
        })
        .collect();
    Ok(BreakdownReport { axis, rows, matched, unmatched, multi_label: axis.multi_label() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    Analytic,
    Simulated { trials: usize, seed: u64 },
}

/// Expected accuracy of uniform guessing among each instance's candidates.
pub fn random_baseline(instances: &[MaskedInstanceSet], mode: BaselineMode) -> f64 {
    let sizes: Vec<usize> = instances.iter().flat_map(|i| std::iter::repeat(i.candidates.len()).take(i.instance_count())).filter(|&c| c > 0).collect();
    if sizes.is_empty() {
        return 0.0;
    }
    match mode {
        BaselineMode::Analytic => sizes.iter().map(|&c| 1.0 / c as f64).sum::<f64>() / sizes.len() as f64,
        BaselineMode::Simulated { trials, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hits = 0u64;
            for _ in 0..trials {
                for &c in &sizes {
                    // the gold answer sits at candidate slot 0 without loss of generality
                    hits += u64::from(rng.gen_range(0..c) == 0);
                }
            }
            hits as f64 / (trials.max(1) * sizes.len()) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub instances: usize,
    pub scenes: usize,
    pub instance_accuracy: f64,
    pub scene_macro_accuracy: f64,
}

pub fn summarize(preds: &[PredictionRecord]) -> Result<Summary, EvalError> {
    Ok(Summary {
        instances: preds.len(),
        scenes: by_scene(preds).len(),
        instance_accuracy: instance_accuracy(preds)?,
        scene_macro_accuracy: scene_macro_accuracy(preds)?,
    })
}

/// Plot-ready line: one category of one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub axis: Axis,
    pub category: String,
    pub accuracy: f64,
    pub support: usize,
}

pub fn plot_rows(report: &BreakdownReport) -> Vec<PlotRow> {
    report
        .rows
        .iter()
        .map(|r| PlotRow { axis: report.axis, category: r.category.clone(), accuracy: r.accuracy, support: r.support })
        .collect()
}

pub fn render_table(report: &BreakdownReport) -> String {
    let width = report.rows.iter().map(|r| r.category.len()).max().unwrap_or(0).max(report.axis.to_string().len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>7}", report.axis.to_string(), "accuracy", "support");
    for r in &report.rows {
        let _ = write!(out, "{:<width$}  {:>8.4}  {:>7}", r.category, r.accuracy, r.support);
        if let Some(m) = r.scene_macro {
            let _ = write!(out, "  scene-macro {m:.4}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "matched {}  unmatched {}", report.matched, report.unmatched);
    if report.multi_label {
        out.push_str("multi-label axis: an instance counts once per label\n");
    }
    out
}
