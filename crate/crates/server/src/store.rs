//! Durable sessions.
//!
//! Each session lives in `<data dir>/sessions/<id>/`:
//!
//! - `session.json`: the creation document (config, predictor kind, dataset);
//! - `events.jsonl`: one JSON event per line, fsynced before any response
//!   that depends on it;
//! - `snapshot.json`: the state every few answers, checked during replay.
//!
//! The engine is deterministic, so replaying the events through a fresh
//! engine rebuilds the session. Replay also re-derives every issued
//! question and refuses to continue if one differs from the log.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use yesno_core::harness::{curve_metrics, CurveMetrics, Method, RunRecord};
use yesno_core::predictors::{LogisticModel, ProbabilityFile};
use yesno_core::session::{CurvePoint, Engine, Predictor, Progress};
use yesno_core::synthetic::{generate, Problem};
use yesno_core::{AnnotationState, Guess, SearchConfig};

use crate::error::ServiceError;

/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "ANNOTATOR_DATA_DIR";

/// Answers between state snapshots.
pub const SNAPSHOT_EVERY: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    /// Use the dataset probabilities as given.
    #[default]
    Fixed,
    /// Refit a logistic model on the answers; needs `x` on every item.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub problem: Problem,
    pub seed: u64,
}

/// Body of `POST /sessions`. Exactly one of `dataset` and `synthetic`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub config: Option<SearchConfig>,
    #[serde(default)]
    pub dataset: Option<serde_json::Value>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub predictor: PredictorKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionDoc {
    id: String,
    created_at_ms: u64,
    config: SearchConfig,
    predictor: PredictorKind,
    /// Normalized probability file.
    dataset: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Event {
    QuestionIssued {
        question_id: u64,
        guess: Guess,
        predictor_version: u64,
        at_ms: u64,
    },
    Answered {
        question_id: u64,
        correct: bool,
        at_ms: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    answers: usize,
    state: AnnotationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: usize,
    pub pseudo_label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub question_id: u64,
    pub n: usize,
    pub items: Vec<ItemView>,
    pub predictor_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelView {
    pub id: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub question_id: u64,
    pub correct: bool,
    pub committed: Vec<LabelView>,
    pub progress: Progress,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextQuestion {
    Question(QuestionView),
    Complete { labels: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub curve: Vec<CurvePoint>,
    pub progress: Progress,
    /// Curve summary against a target of every item; absent before the
    /// first answer.
    pub summary: Option<CurveMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: Status,
    pub config: SearchConfig,
    pub predictor: PredictorKind,
    pub predictor_version: u64,
    pub progress: Progress,
    pub state: AnnotationState,
    pub outstanding: Option<QuestionView>,
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Issued {
    question_id: u64,
    guess: Guess,
    predictor_version: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

/// Writes `bytes` to `path` atomically (temp file, fsync, rename).
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        File::open(dir)?.sync_all()?;
    }
    Ok(())
}

pub struct Session {
    doc: SessionDoc,
    dir: PathBuf,
    payloads: Vec<Option<String>>,
    engine: Engine,
    next_question_id: u64,
    outstanding: Option<Issued>,
    answered: HashMap<u64, AnswerResponse>,
    log: File,
}

fn build_engine(doc: &SessionDoc) -> Result<(Engine, Vec<Option<String>>), ServiceError> {
    let file = ProbabilityFile::from_value(doc.dataset.clone())?;
    let predictor = match doc.predictor {
        PredictorKind::Fixed => Predictor::Fixed(file.probs.clone()),
        PredictorKind::Logistic => {
            let points = file.points.clone().ok_or_else(|| {
                ServiceError::validation("logistic predictor needs `x` features on every item")
            })?;
            Predictor::logistic(points, LogisticModel::default())?
        }
    };
    Ok((Engine::new(doc.config.clone(), predictor)?, file.payloads))
}

impl Session {
    fn create(dir: PathBuf, doc: SessionDoc) -> Result<Self, ServiceError> {
        let (engine, payloads) = build_engine(&doc)?;
        fs::create_dir_all(&dir).map_err(internal)?;
        let text = serde_json::to_vec_pretty(&doc).map_err(internal)?;
        write_atomic(&dir.join("session.json"), &text).map_err(internal)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))
            .map_err(internal)?;
        log.sync_all().map_err(internal)?;
        Ok(Self {
            doc,
            dir,
            payloads,
            engine,
            next_question_id: 1,
            outstanding: None,
            answered: HashMap::new(),
            log,
        })
    }

    /// Rebuilds a session from its directory by replaying the event log.
    fn recover(dir: PathBuf) -> Result<Self, ServiceError> {
        let doc: SessionDoc = serde_json::from_slice(
            &fs::read(dir.join("session.json")).map_err(internal)?,
        )
        .map_err(internal)?;
        let snapshot: Option<Snapshot> = match fs::read(dir.join("snapshot.json")) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(internal)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(internal(e)),
        };
        let events_path = dir.join("events.jsonl");
        let events = read_events(&events_path)?;
        let log = OpenOptions::new()
            .append(true)
            .open(&events_path)
            .map_err(internal)?;
        let (engine, payloads) = build_engine(&doc)?;
        let mut s = Self {
            doc,
            dir,
            payloads,
            engine,
            next_question_id: 1,
            outstanding: None,
            answered: HashMap::new(),
            log,
        };
        for event in events {
            match event {
                Event::QuestionIssued {
                    question_id,
                    guess,
                    predictor_version,
                    ..
                } => {
                    let issued = s.issue()?;
                    if issued.guess != guess
                        || issued.question_id != question_id
                        || issued.predictor_version != predictor_version
                    {
                        return Err(ServiceError::Internal(format!(
                            "replay diverged at question {question_id}"
                        )));
                    }
                }
                Event::Answered {
                    question_id,
                    correct,
                    ..
                } => {
                    s.apply(question_id, correct)?;
                }
            }
            if let Some(snap) = &snapshot {
                if s.answered.len() == snap.answers && s.engine.state() != &snap.state {
                    return Err(ServiceError::Internal(
                        "replayed state disagrees with snapshot".into(),
                    ));
                }
            }
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.doc.id
    }

    fn append(&mut self, event: &Event) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(event).map_err(internal)?;
        line.push(b'\n');
        self.log.write_all(&line).map_err(internal)?;
        self.log.sync_data().map_err(internal)
    }

    fn view_question(&self, issued: &Issued) -> QuestionView {
        QuestionView {
            question_id: issued.question_id,
            n: issued.guess.len(),
            items: issued
                .guess
                .iter()
                .map(|(id, label)| ItemView {
                    id,
                    pseudo_label: u8::from(label),
                    payload: self.payloads.get(id).cloned().flatten(),
                })
                .collect(),
            predictor_version: issued.predictor_version,
        }
    }

    fn final_labels(&self) -> Option<Vec<u8>> {
        self.engine
            .state()
            .final_labeling()
            .map(|l| l.iter().map(u8::from).collect())
    }

    /// Engine step for a new question, without persistence.
    fn issue(&mut self) -> Result<Issued, ServiceError> {
        let predictor_version = self.engine.predictor().version();
        let guess = self.engine.next_question()?;
        let issued = Issued {
            question_id: self.next_question_id,
            guess,
            predictor_version,
        };
        self.next_question_id += 1;
        self.outstanding = Some(issued.clone());
        Ok(issued)
    }

    /// Engine step for an answer, without persistence.
    fn apply(&mut self, question_id: u64, correct: bool) -> Result<AnswerResponse, ServiceError> {
        let outcome = self.engine.answer(correct)?;
        self.outstanding = None;
        let response = AnswerResponse {
            question_id,
            correct,
            committed: outcome
                .committed
                .iter()
                .map(|&(id, l)| LabelView { id, label: u8::from(l) })
                .collect(),
            progress: outcome.progress,
            status: if outcome.complete { Status::Complete } else { Status::Active },
        };
        self.answered.insert(question_id, response.clone());
        Ok(response)
    }

    pub fn next_question(&mut self) -> Result<NextQuestion, ServiceError> {
        if let Some(issued) = &self.outstanding {
            return Err(ServiceError::Conflict {
                message: "a question is already outstanding".into(),
                question: Some(self.view_question(issued)),
            });
        }
        if let Some(labels) = self.final_labels() {
            return Ok(NextQuestion::Complete { labels });
        }
        let issued = self.issue()?;
        let event = Event::QuestionIssued {
            question_id: issued.question_id,
            guess: issued.guess.clone(),
            predictor_version: issued.predictor_version,
            at_ms: now_ms(),
        };
        if let Err(e) = self.append(&event) {
            // Not durable, so not issued. Rebuild from disk to undo the
            // in-memory step.
            *self = Self::recover(self.dir.clone())?;
            return Err(e);
        }
        Ok(NextQuestion::Question(self.view_question(&issued)))
    }

    pub fn answer(&mut self, question_id: u64, correct: bool) -> Result<AnswerResponse, ServiceError> {
        if let Some(previous) = self.answered.get(&question_id) {
            return Ok(previous.clone());
        }
        match &self.outstanding {
            Some(issued) if issued.question_id == question_id => {}
            other => {
                return Err(ServiceError::Conflict {
                    message: format!("question {question_id} is not the outstanding question"),
                    question: other.as_ref().map(|i| self.view_question(i)),
                })
            }
        }
        self.append(&Event::Answered {
            question_id,
            correct,
            at_ms: now_ms(),
        })?;
        let response = self.apply(question_id, correct)?;
        if self.answered.len().is_multiple_of(SNAPSHOT_EVERY) || response.status == Status::Complete {
            self.write_snapshot()?;
        }
        Ok(response)
    }

    fn write_snapshot(&self) -> Result<(), ServiceError> {
        let snap = Snapshot {
            answers: self.answered.len(),
            state: self.engine.state().clone(),
        };
        let bytes = serde_json::to_vec(&snap).map_err(internal)?;
        write_atomic(&self.dir.join("snapshot.json"), &bytes).map_err(internal)
    }

    pub fn metrics(&self) -> MetricsView {
        let curve = self.engine.curve().to_vec();
        let progress = self.engine.progress();
        let record = RunRecord {
            seed: self.doc.config.seed,
            method: Method::Ia,
            question_log: Vec::new(),
            questions: progress.questions,
            entropy: self.engine.predictor().probs().joint_entropy(),
            curve: curve.clone(),
            truncated: false,
            cap: usize::MAX,
            labels: None,
        };
        MetricsView {
            summary: curve_metrics(&record, progress.total).ok(),
            curve,
            progress,
        }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.doc.id.clone(),
            status: if self.engine.is_complete() { Status::Complete } else { Status::Active },
            config: self.doc.config.clone(),
            predictor: self.doc.predictor,
            predictor_version: self.engine.predictor().version(),
            progress: self.engine.progress(),
            state: self.engine.state().clone(),
            outstanding: self.outstanding.as_ref().map(|i| self.view_question(i)),
            labels: self.final_labels(),
        }
    }
}

/// Reads the event log. A final line without its newline is a torn write
/// from a crash and is cut off; any other unreadable line is corruption.
fn read_events(path: &Path) -> Result<Vec<Event>, ServiceError> {
    let file = File::open(path).map_err(internal)?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(internal)?;
        if read == 0 {
            break;
        }
        if !line.ends_with('\n') {
            let mut f = OpenOptions::new().write(true).open(path).map_err(internal)?;
            f.set_len(good).map_err(internal)?;
            f.seek(SeekFrom::End(0)).map_err(internal)?;
            f.sync_all().map_err(internal)?;
            break;
        }
        let event: Event = serde_json::from_str(line.trim_end())
            .map_err(|e| ServiceError::Internal(format!("corrupt event log: {e}")))?;
        events.push(event);
        good += read as u64;
    }
    Ok(events)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// All sessions under one data directory.
pub struct Store {
    root: PathBuf,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = dir.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self {
            root,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// Opens the directory named by [`DATA_DIR_ENV`], or `./yesno-data`.
    pub fn from_env() -> std::io::Result<Self> {
        Self::open(std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("yesno-data"), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn create(&self, req: CreateRequest) -> Result<String, ServiceError> {
        let dataset = match (req.dataset, req.synthetic) {
            (Some(d), None) => ProbabilityFile::from_value(d)?.to_json(),
            (None, Some(spec)) => generate(spec.problem, spec.seed).to_file().to_json(),
            _ => {
                return Err(ServiceError::validation(
                    "provide exactly one of `dataset` and `synthetic`",
                ))
            }
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let doc = SessionDoc {
            id: id.clone(),
            created_at_ms: now_ms(),
            config: req.config.unwrap_or_default(),
            predictor: req.predictor,
            dataset,
        };
        let session = Session::create(self.session_dir(&id), doc)?;
        self.sessions
            .lock()
            .map_err(internal)?
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    /// Looks a session up, replaying it from disk on first access.
    pub fn get(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::NotFound);
        }
        let mut map = self.sessions.lock().map_err(internal)?;
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let dir = self.session_dir(id);
        if !dir.join("session.json").is_file() {
            return Err(ServiceError::NotFound);
        }
        let handle = Arc::new(Mutex::new(Session::recover(dir)?));
        map.insert(id.to_string(), handle.clone());
        Ok(handle)
    }
}
