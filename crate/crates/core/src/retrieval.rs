//! Lexical retrieval of earlier scenes as supporting history.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymizer::{MaskedInstanceSet, SceneRef};
use crate::parser::Scene;
use crate::text;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("scene {0} has no earlier scene in its show")]
    NoHistory(SceneRef),
    #[error("window and k must be at least 1")]
    InvalidWindow,
    #[error("query index {0} is outside the corpus")]
    UnknownQuery(usize),
    #[error("query {0} has no relevant scene")]
    EmptyRelevance(usize),
    #[error("{0} result lists for {1} relevance sets")]
    LengthMismatch(usize, usize),
}

/// A scene as a bag of lowercased word pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub scene_ref: SceneRef,
    terms: HashMap<String, usize>,
    len: usize,
}

impl Document {
    pub fn new(scene_ref: SceneRef, text: &str) -> Self {
        let mut terms = HashMap::new();
        let mut len = 0;
        for p in text::pieces(text) {
            if p.chars().any(char::is_alphanumeric) {
                *terms.entry(p.to_lowercase()).or_default() += 1;
                len += 1;
            }
        }
        Self { scene_ref, terms, len }
    }

    pub fn from_scene(scene: &Scene) -> Self {
        Self::new(scene.scene_ref(), &scene.joined_text())
    }

    pub fn from_instance(inst: &MaskedInstanceSet) -> Self {
        let text: Vec<&str> = inst.lines.iter().map(|l| l.text.as_str()).collect();
        Self::new(inst.scene_ref(), &text.join("\n"))
    }
}

/// Documents in show order with collection statistics.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<Document>,
    df: HashMap<String, usize>,
    avg_len: f64,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        for d in &docs {
            for t in d.terms.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let avg_len = if docs.is_empty() { 0.0 } else { docs.iter().map(|d| d.len as f64).sum::<f64>() / docs.len() as f64 };
        Self { docs, df, avg_len }
    }

    pub fn from_scenes(scenes: &[Scene]) -> Self {
        Self::new(scenes.iter().map(Document::from_scene).collect())
    }

    pub fn from_instances(instances: &[MaskedInstanceSet]) -> Self {
        Self::new(instances.iter().map(Document::from_instance).collect())
    }

    pub fn position(&self, scene: &SceneRef) -> Option<usize> {
        self.docs.iter().position(|d| &d.scene_ref == scene)
    }

    fn n(&self) -> f64 {
        self.docs.len() as f64
    }

    fn df(&self, term: &str) -> f64 {
        self.df.get(term).copied().unwrap_or(0) as f64
    }
}

/// Relevance of a document to a query document.
pub trait Scorer {
    fn score(&self, corpus: &Corpus, query: &Document, doc: &Document) -> f64;
}

pub struct TfIdfCosine;

impl TfIdfCosine {
    fn weights(corpus: &Corpus, d: &Document) -> HashMap<String, f64> {
        // smoothed idf: ln((1 + N) / (1 + df)) + 1
        d.terms
            .iter()
            .map(|(t, &tf)| (t.clone(), tf as f64 * (((1.0 + corpus.n()) / (1.0 + corpus.df(t))).ln() + 1.0)))
            .collect()
    }
}

impl Scorer for TfIdfCosine {
    fn score(&self, corpus: &Corpus, query: &Document, doc: &Document) -> f64 {
        let q = Self::weights(corpus, query);
        let d = Self::weights(corpus, doc);
        let dot: f64 = q.iter().filter_map(|(t, w)| d.get(t).map(|v| w * v)).sum();
        let norm = |m: &HashMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm(&q) * norm(&d);
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25 {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25 {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Scorer for Bm25 {
    fn score(&self, corpus: &Corpus, query: &Document, doc: &Document) -> f64 {
        let norm = if corpus.avg_len > 0.0 { doc.len as f64 / corpus.avg_len } else { 1.0 };
        query
            .terms
            .keys()
            .filter_map(|t| doc.terms.get(t).map(|&tf| (t, tf as f64)))
            .map(|(t, tf)| {
                let df = corpus.df(t);
                let idf = ((corpus.n() - df + 0.5) / (df + 0.5) + 1.0).ln();
                idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    TfIdf,
    Bm25,
}

impl ScorerKind {
    pub fn build(self) -> Box<dyn Scorer> {
        match self {
            ScorerKind::TfIdf => Box::new(TfIdfCosine),
            ScorerKind::Bm25 => Box::new(Bm25::default()),
        }
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tfidf" | "tf-idf" => Ok(Self::TfIdf),
            "bm25" => Ok(Self::Bm25),
            _ => Err(format!("unknown scorer {s:?} (tfidf, bm25)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub scene_ref: SceneRef,
    pub score: f64,
}

/// Ranks up to `window` scenes of the same show right before `query`,
/// returning the top `k`. Equal scores go to the more recent scene.
pub fn retrieve_history(corpus: &Corpus, query: usize, window: usize, scorer: &dyn Scorer, k: usize) -> Result<Vec<Ranked>, RetrievalError> {
    if window == 0 || k == 0 {
        return Err(RetrievalError::InvalidWindow);
    }
    let q = corpus.docs.get(query).ok_or(RetrievalError::UnknownQuery(query))?;
    let mut cands: Vec<(usize, f64)> = Vec::new();
    for i in (0..query).rev() {
        if cands.len() == window || corpus.docs[i].scene_ref.show != q.scene_ref.show {
            break;
        }
        cands.push((i, scorer.score(corpus, q, &corpus.docs[i])));
    }
    if cands.is_empty() {
        return Err(RetrievalError::NoHistory(q.scene_ref.clone()));
    }
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    Ok(cands.into_iter().take(k).map(|(i, score)| Ranked { scene_ref: corpus.docs[i].scene_ref.clone(), score }).collect())
}

/// Fraction of queries whose top `k` contains a relevant scene.
pub fn recall_at_k(results: &[Vec<SceneRef>], relevance: &[BTreeSet<SceneRef>], k: usize) -> Result<f64, RetrievalError> {
    if results.len() != relevance.len() {
        return Err(RetrievalError::LengthMismatch(results.len(), relevance.len()));
    }
    if let Some(i) = relevance.iter().position(BTreeSet::is_empty) {
        return Err(RetrievalError::EmptyRelevance(i));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let hits = results.iter().zip(relevance).filter(|(r, rel)| r.iter().take(k).any(|s| rel.contains(s))).count();
    Ok(hits as f64 / results.len() as f64)
}

/// One line of a relevance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub query: SceneRef,
    pub relevant: Vec<SceneRef>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(i: u64, text: &str) -> Document {
        Document::new(SceneRef { show: "s".into(), episode_id: "e".into(), scene_index: i }, text)
    }

    fn corpus() -> Corpus {
        Corpus::new(vec![
            doc(0, "coffee at the shop again"),
            doc(1, "the tachyon drive broke down"),
            doc(2, "coffee and more coffee"),
            doc(3, "a quiet evening at the shop"),
            doc(4, "who fixed the tachyon thing"),
        ])
    }

    #[test]
    fn planted_term_ranks_first() {
        let c = corpus();
        let r = retrieve_history(&c, 4, 20, &Bm25::default(), 3).unwrap();
        assert_eq!(r[0].scene_ref.scene_index, 1);
        assert_eq!(r.len(), 3);
        let r = retrieve_history(&c, 4, 20, &TfIdfCosine, 3).unwrap();
        assert_eq!(r[0].scene_ref.scene_index, 1);
    }

    #[test]
    fn window_one_and_first_scene() {
        let c = corpus();
        let r = retrieve_history(&c, 4, 1, &Bm25::default(), 3).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].scene_ref.scene_index, 3);
        assert!(matches!(retrieve_history(&c, 0, 20, &Bm25::default(), 3), Err(RetrievalError::NoHistory(_))));
    }

    #[test]
    fn ties_prefer_recent() {
        let c = Corpus::new(vec![doc(0, "x"), doc(1, "x"), doc(2, "y")]);
        let r = retrieve_history(&c, 2, 20, &Bm25::default(), 2).unwrap();
        assert_eq!(r[0].scene_ref.scene_index, 1);
    }

    #[test]
    fn recall_errors_and_values() {
        let a = SceneRef { show: "s".into(), episode_id: "e".into(), scene_index: 1 };
        let b = SceneRef { scene_index: 2, ..a.clone() };
        let results = vec![vec![b.clone(), a.clone()]];
        let rel = vec![[a.clone()].into_iter().collect()];
        assert_eq!(recall_at_k(&results, &rel, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&results, &rel, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&results, &[BTreeSet::new()], 2).unwrap_err(), RetrievalError::EmptyRelevance(0));
    }
}
