//! Human-study service: serves masked scenes, records guesses with their
//! evidence labels and reports human accuracy and agreement.
//!
//! State lives under a data directory:
//! `sessions/<id>.json` (rewritten on every change) and
//! `annotations.jsonl` (append-only, one record per answer).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{agreement_report, validate_annotation, AgreementReport, AnnotationError, AnnotationRecord};
use crate::anonymizer::{MaskedInstanceSet, MaskedLine, SceneRef, SpeakerId};
use crate::dataset::{read_jsonl, DatasetError};
use crate::evaluator::{instance_accuracy, PredictionRecord};
use crate::text::{fnv1a, mix_seed};

pub const LOG_FILE: &str = "annotations.jsonl";
pub const SESSION_DIR: &str = "sessions";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} has no items left")]
    SessionExhausted(String),
    #[error("answer rejected: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),
    #[error("answer is for {got}, but the current item is {expected}")]
    OutOfOrder { expected: String, got: String },
    #[error("no answers recorded")]
    EmptyLog,
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub scene: SceneRef,
    pub speaker_id: SpeakerId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub annotator_id: String,
    pub show: Option<String>,
    pub seed: u64,
    pub queue: Vec<QueueItem>,
    pub cursor: usize,
    pub created: u64,
}

/// What an annotator sees for one item. Carries no gold names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub session_id: String,
    pub position: usize,
    pub total: usize,
    pub show: String,
    pub episode_id: String,
    pub scene_index: u64,
    pub speaker_id: SpeakerId,
    pub lines: Vec<MaskedLine>,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    /// `None` when the service hides correctness from annotators.
    pub correct: Option<bool>,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub records: usize,
    pub accuracy: f64,
    pub per_show: BTreeMap<String, f64>,
    pub per_annotator: BTreeMap<String, f64>,
    /// Keyed `a|b` for each annotator pair with overlapping items.
    pub agreement: BTreeMap<String, AgreementReport>,
    pub correctness_revealed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub reveal_correctness: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { reveal_correctness: true }
    }
}

struct Inner {
    sessions: HashMap<String, Session>,
}

pub struct StudyService {
    root: PathBuf,
    instances: Vec<MaskedInstanceSet>,
    by_ref: HashMap<SceneRef, usize>,
    options: StudyOptions,
    inner: Mutex<Inner>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl StudyService {
    /// Opens (or creates) the data directory and reloads saved sessions.
    pub fn open(root: impl Into<PathBuf>, instances: Vec<MaskedInstanceSet>, options: StudyOptions) -> Result<Self, StudyError> {
        let root = root.into();
        std::fs::create_dir_all(root.join(SESSION_DIR))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(root.join(SESSION_DIR))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let s: Session = serde_json::from_str(&std::fs::read_to_string(&path)?)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                sessions.insert(s.session_id.clone(), s);
            }
        }
        let by_ref = instances.iter().enumerate().map(|(i, inst)| (inst.scene_ref(), i)).collect();
        Ok(Self { root, instances, by_ref, options, inner: Mutex::new(Inner { sessions }) })
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    fn instance(&self, scene: &SceneRef) -> Option<&MaskedInstanceSet> {
        self.by_ref.get(scene).map(|&i| &self.instances[i])
    }

    /// Item order for an annotator: every masked speaker of the (filtered)
    /// corpus, shuffled with a seed derived from `seed` and the annotator.
    pub fn queue_for(&self, annotator: &str, show: Option<&str>, seed: u64) -> Vec<QueueItem> {
        let mut queue: Vec<QueueItem> = self
            .instances
            .iter()
            .filter(|i| show.map_or(true, |s| i.show == s))
            .flat_map(|i| i.gold.keys().map(|&x| QueueItem { scene: i.scene_ref(), speaker_id: x }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(annotator.as_bytes())));
        queue.shuffle(&mut rng);
        queue
    }

    fn persist(&self, s: &Session) -> Result<(), StudyError> {
        let dir = self.root.join(SESSION_DIR);
        let tmp = dir.join(format!("{}.json.tmp", s.session_id));
        std::fs::write(&tmp, serde_json::to_vec_pretty(s).map_err(std::io::Error::from)?)?;
        std::fs::rename(tmp, dir.join(format!("{}.json", s.session_id)))?;
        Ok(())
    }

    pub fn create_session(&self, annotator: &str, show: Option<&str>, seed: u64) -> Result<Session, StudyError> {
        let session = Session {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            annotator_id: annotator.to_owned(),
            show: show.map(str::to_owned),
            seed,
            queue: self.queue_for(annotator, show, seed),
            cursor: 0,
            created: now(),
        };
        self.persist(&session)?;
        self.inner.lock().expect("session lock").sessions.insert(session.session_id.clone(), session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Option<Session> {
        self.inner.lock().expect("session lock").sessions.get(id).cloned()
    }

    /// The current item; repeated calls return the same payload until an answer is accepted.
    pub fn next_item(&self, id: &str) -> Result<ItemPayload, StudyError> {
        let inner = self.inner.lock().expect("session lock");
        let s = inner.sessions.get(id).ok_or_else(|| StudyError::UnknownSession(id.to_owned()))?;
        let item = s.queue.get(s.cursor).ok_or_else(|| StudyError::SessionExhausted(id.to_owned()))?;
        let inst = self.instance(&item.scene).expect("queued scenes come from the corpus");
        Ok(ItemPayload {
            session_id: s.session_id.clone(),
            position: s.cursor,
            total: s.queue.len(),
            show: inst.show.clone(),
            episode_id: inst.episode_id.clone(),
            scene_index: inst.scene_index,
            speaker_id: item.speaker_id,
            lines: inst.lines.clone(),
            candidates: inst.candidates.clone(),
        })
    }

    pub fn read_log(&self) -> Result<Vec<AnnotationRecord>, StudyError> {
        if !self.log_path().exists() {
            return Ok(Vec::new());
        }
        Ok(read_jsonl(self.log_path())?)
    }

    pub fn submit_answer(&self, id: &str, mut record: AnnotationRecord) -> Result<AnswerResult, StudyError> {
        let mut inner = self.inner.lock().expect("session lock");
        let s = inner.sessions.get_mut(id).ok_or_else(|| StudyError::UnknownSession(id.to_owned()))?;
        let item = s.queue.get(s.cursor).ok_or_else(|| StudyError::SessionExhausted(id.to_owned()))?.clone();
        if record.scene_ref() != item.scene || record.speaker_id != item.speaker_id {
            return Err(StudyError::OutOfOrder {
                expected: format!("{}#{}", item.scene, item.speaker_id),
                got: format!("{}#{}", record.scene_ref(), record.speaker_id),
            });
        }
        if record.annotator_id.is_empty() {
            record.annotator_id = s.annotator_id.clone();
        }
        if record.annotator_id != s.annotator_id {
            return Err(StudyError::ValidationFailed(vec![format!("session belongs to annotator {:?}", s.annotator_id)]));
        }
        if record.timestamp == 0 {
            record.timestamp = now();
        }
        let inst = self.instance(&item.scene).expect("queued scenes come from the corpus");
        let siblings: Vec<AnnotationRecord> = self.read_log()?.into_iter().filter(|r| r.annotator_id == record.annotator_id).collect();
        let validation = validate_annotation(&record, Some(inst), &siblings)?;
        if !validation.is_ok() {
            return Err(StudyError::ValidationFailed(validation.errors));
        }
        for w in &validation.warnings {
            log::warn!("{}#{}: {w}", item.scene, item.speaker_id);
        }

        let mut line = serde_json::to_vec(&record).map_err(std::io::Error::from)?;
        line.push(b'\n');
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(self.log_path())?;
        f.write_all(&line)?;
        f.flush()?;

        s.cursor += 1;
        let snapshot = s.clone();
        drop(inner);
        self.persist(&snapshot)?;
        let correct = inst.gold.get(&record.speaker_id) == Some(&record.guess);
        Ok(AnswerResult {
            correct: self.options.reveal_correctness.then_some(correct),
            remaining: snapshot.queue.len() - snapshot.cursor,
        })
    }

    /// Human accuracy over the log, optionally restricted to `annotators`.
    pub fn summary(&self, annotators: Option<&[String]>) -> Result<StudySummary, StudyError> {
        let records: Vec<AnnotationRecord> = self
            .read_log()?
            .into_iter()
            .filter(|r| annotators.map_or(true, |a| a.contains(&r.annotator_id)))
            .collect();
        if records.is_empty() {
            return Err(StudyError::EmptyLog);
        }
        let as_pred = |r: &AnnotationRecord| -> Result<PredictionRecord, StudyError> {
            let inst = self.instance(&r.scene_ref()).ok_or_else(|| AnnotationError::UnresolvableScene(r.scene_ref()))?;
            Ok(PredictionRecord {
                show: r.show.clone(),
                episode_id: r.episode_id.clone(),
                scene_index: r.scene_index,
                speaker_id: r.speaker_id,
                predicted: r.guess.clone(),
                gold: inst.gold.get(&r.speaker_id).cloned().unwrap_or_default(),
                candidates: inst.candidates.len(),
                logits: None,
            })
        };
        let preds: Vec<PredictionRecord> = records.iter().map(as_pred).collect::<Result<_, _>>()?;
        let acc = |ps: Vec<PredictionRecord>| instance_accuracy(&ps).unwrap_or(0.0);
        let mut shows: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
        let mut by_annotator: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
        let mut annotator_preds: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
        for (r, p) in records.iter().zip(&preds) {
            shows.entry(p.show.clone()).or_default().push(p.clone());
            by_annotator.entry(r.annotator_id.clone()).or_default().push(r.clone());
            annotator_preds.entry(r.annotator_id.clone()).or_default().push(p.clone());
        }
        let names: Vec<&String> = by_annotator.keys().collect();
        let mut agreement = BTreeMap::new();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                match agreement_report(&by_annotator[*a], &by_annotator[*b]) {
                    Ok(rep) => {
                        agreement.insert(format!("{a}|{b}"), rep);
                    }
                    Err(AnnotationError::NoOverlap) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(StudySummary {
            records: records.len(),
            accuracy: acc(preds),
            per_show: shows.into_iter().map(|(k, v)| (k, acc(v))).collect(),
            per_annotator: annotator_preds.into_iter().map(|(k, v)| (k, acc(v))).collect(),
            agreement,
            correctness_revealed: self.options.reveal_correctness,
        })
    }
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    annotator: String,
    show: Option<String>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct SummaryQuery {
    /// Comma-separated annotator ids.
    annotators: Option<String>,
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    errors: Vec<String>,
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = match &self {
            StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::SessionExhausted(_) => StatusCode::GONE,
            StudyError::ValidationFailed(_) | StudyError::Annotation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::OutOfOrder { .. } => StatusCode::CONFLICT,
            StudyError::EmptyLog => StatusCode::NOT_FOUND,
            StudyError::Io(_) | StudyError::Dataset(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let errors = match &self {
            StudyError::ValidationFailed(e) => e.clone(),
            _ => Vec::new(),
        };
        (status, Json(ErrorBody { error: self.to_string(), errors })).into_response()
    }
}

#[derive(Clone)]
struct AppState {
    service: Arc<StudyService>,
    static_dir: Option<PathBuf>,
}

async fn create_session(State(st): State<AppState>, Query(q): Query<SessionQuery>) -> Result<Json<serde_json::Value>, StudyError> {
    let s = st.service.create_session(&q.annotator, q.show.as_deref(), q.seed)?;
    Ok(Json(serde_json::json!({ "session_id": s.session_id })))
}

async fn next_item(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ItemPayload>, StudyError> {
    st.service.next_item(&id).map(Json)
}

async fn answer(State(st): State<AppState>, UrlPath(id): UrlPath<String>, Json(record): Json<AnnotationRecord>) -> Result<Json<AnswerResult>, StudyError> {
    st.service.submit_answer(&id, record).map(Json)
}

async fn summary(State(st): State<AppState>, Query(q): Query<SummaryQuery>) -> Result<Json<StudySummary>, StudyError> {
    let names: Option<Vec<String>> = q.annotators.map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect());
    st.service.summary(names.as_deref()).map(Json)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

async fn static_file(State(st): State<AppState>, uri: axum::http::Uri) -> Response {
    let Some(dir) = st.static_dir else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let rel = Path::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mut path = dir.join(rel);
    if rel.as_os_str().is_empty() || path.is_dir() {
        path = path.join("index.html");
    }
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// HTTP routes; non-API paths are served from `static_dir` when given.
pub fn router(service: Arc<StudyService>, static_dir: Option<PathBuf>) -> Router {
    Router::new()
        .route("/api/session", get(create_session))
        .route("/api/session/{id}/next", get(next_item))
        .route("/api/session/{id}/answer", post(answer))
        .route("/api/summary", get(summary))
        .fallback(get(static_file))
        .with_state(AppState { service, static_dir })
}

pub async fn serve(addr: std::net::SocketAddr, service: Arc<StudyService>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("study service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service, static_dir)).await
}
