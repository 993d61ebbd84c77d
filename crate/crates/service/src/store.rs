//! Durable session state.
//!
//! Each session lives in its own directory:
//!
//! ```text
//! <root>/<session_id>/session.json    creation record, never rewritten
//! <root>/<session_id>/events.jsonl    append-only judgment and flag log
//! <root>/<session_id>/snapshot.json   state as of some log sequence number
//! ```
//!
//! A mutation is appended to the log and fsynced before it is applied and
//! acknowledged. Recovery loads the snapshot, if any, and replays the log
//! entries after it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use hleval_core::corpus::{write_corpus, CorpusBundle, Judgment, SampleWindow, Verdict};
use hleval_core::sampling::{allocate, annotator_ids, AllocationParams, Assignment, SamplingError};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 100;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    UnknownSession(String),
    #[error("annotator `{0}` is not part of this session")]
    UnknownAnnotator(String),
    #[error("sample `{0}` is not assigned to this annotator")]
    UnknownSample(String),
    #[error("sample `{sample}` already judged by `{annotator}`")]
    Duplicate { annotator: String, sample: String },
    #[error("sample `{got}` is not next for this annotator (expected {expected:?})")]
    OutOfOrder { expected: Option<String>, got: String },
    #[error("sample `{0}` was already flagged once")]
    AlreadyFlagged(String),
    #[error("session is not complete; request a partial export")]
    Incomplete,
    #[error("allocation failed: {0}")]
    Allocation(#[from] SamplingError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session data: {0}")]
    Corrupt(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownAnnotator(_) | ServiceError::UnknownSample(_) => {
                "not_found"
            }
            ServiceError::Duplicate { .. } => "duplicate",
            ServiceError::OutOfOrder { .. } => "out_of_order",
            ServiceError::AlreadyFlagged(_) => "already_flagged",
            ServiceError::Incomplete => "incomplete",
            ServiceError::Allocation(_) => "infeasible",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Io(_) | ServiceError::Corrupt(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub samples: Vec<SampleWindow>,
    pub annotators: Vec<String>,
    pub allocation: AllocationParams,
    /// Clip URL prefix; the percent-encoded sample id is appended.
    pub clip_base_url: String,
}

impl SessionConfig {
    /// Annotators named `a001`... for a sample list.
    pub fn new(
        samples: Vec<SampleWindow>,
        n_annotators: usize,
        allocation: AllocationParams,
        clip_base_url: &str,
    ) -> Self {
        SessionConfig {
            samples,
            annotators: annotator_ids(n_annotators),
            allocation,
            clip_base_url: clip_base_url.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionRecord {
    schema_version: u32,
    session_id: String,
    config: SessionConfig,
    assignment: Assignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Event {
    Judgment {
        seq: u64,
        annotator_id: String,
        sample_id: String,
        verdict: Verdict,
    },
    Flag {
        seq: u64,
        annotator_id: String,
        sample_id: String,
    },
}

impl Event {
    fn seq(&self) -> u64 {
        match self {
            Event::Judgment { seq, .. } | Event::Flag { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorState {
    /// Samples still to judge, head first.
    pub pending: VecDeque<String>,
    /// Judged samples in submission order.
    pub judged: Vec<(String, Verdict)>,
    pub flagged: BTreeSet<String>,
}

/// Everything the event log determines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    /// Sequence number of the last applied event; 0 before any.
    pub seq: u64,
    pub annotators: BTreeMap<String, AnnotatorState>,
}

impl SessionState {
    fn from_assignment(a: &Assignment) -> Self {
        SessionState {
            seq: 0,
            annotators: a
                .queues
                .iter()
                .map(|(id, q)| {
                    let state = AnnotatorState {
                        pending: q.iter().cloned().collect(),
                        ..Default::default()
                    };
                    (id.clone(), state)
                })
                .collect(),
        }
    }

    fn annotator(&self, id: &str) -> Result<&AnnotatorState, ServiceError> {
        self.annotators
            .get(id)
            .ok_or_else(|| ServiceError::UnknownAnnotator(id.to_string()))
    }

    /// Checks that `sample` is at the head of the annotator's queue.
    fn check_head(&self, annotator: &str, sample: &str) -> Result<(), ServiceError> {
        let a = self.annotator(annotator)?;
        if a.pending.front().map(String::as_str) == Some(sample) {
            return Ok(());
        }
        if a.judged.iter().any(|(s, _)| s == sample) {
            return Err(ServiceError::Duplicate {
                annotator: annotator.to_string(),
                sample: sample.to_string(),
            });
        }
        if !a.pending.contains(&sample.to_string()) {
            return Err(ServiceError::UnknownSample(sample.to_string()));
        }
        Err(ServiceError::OutOfOrder {
            expected: a.pending.front().cloned(),
            got: sample.to_string(),
        })
    }

    /// Checks that `event` may be applied next, without changing anything.
    fn check(&self, event: &Event) -> Result<(), ServiceError> {
        if event.seq() != self.seq + 1 {
            return Err(ServiceError::Corrupt(format!(
                "event {} after {}",
                event.seq(),
                self.seq
            )));
        }
        match event {
            Event::Judgment {
                annotator_id,
                sample_id,
                ..
            } => self.check_head(annotator_id, sample_id),
            Event::Flag {
                annotator_id,
                sample_id,
                ..
            } => {
                self.check_head(annotator_id, sample_id)?;
                if self.annotators[annotator_id].flagged.contains(sample_id) {
                    return Err(ServiceError::AlreadyFlagged(sample_id.clone()));
                }
                Ok(())
            }
        }
    }

    fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        self.check(event)?;
        match event {
            Event::Judgment {
                annotator_id,
                sample_id,
                verdict,
                ..
            } => {
                let a = self.annotators.get_mut(annotator_id).expect("checked");
                a.pending.pop_front();
                a.judged.push((sample_id.clone(), *verdict));
            }
            Event::Flag {
                annotator_id,
                sample_id,
                ..
            } => {
                let a = self.annotators.get_mut(annotator_id).expect("checked");
                a.flagged.insert(sample_id.clone());
                let head = a.pending.pop_front().expect("checked");
                a.pending.push_back(head);
            }
        }
        self.seq = event.seq();
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.annotators.values().all(|a| a.pending.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextSample {
    Sample {
        sample_id: String,
        clip_url: String,
        /// 1-based position of this sample in the annotator's queue.
        position: usize,
        total: usize,
    },
    Done {
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub sample_id: String,
    pub judged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub assigned: usize,
    pub judged: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SessionStatus {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub state: SessionStatus,
    pub assigned: usize,
    pub judged: usize,
    pub annotators: BTreeMap<String, AnnotatorProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub complete: bool,
    pub judgments: Vec<Judgment>,
}

impl Export {
    /// The judgments as a corpus file.
    pub fn to_corpus(&self) -> String {
        let bundle = CorpusBundle {
            judgments: self.judgments.clone(),
            ..Default::default()
        };
        let mut out = Vec::new();
        write_corpus(&bundle, &mut out).expect("in-memory write");
        String::from_utf8(out).expect("utf-8")
    }
}

pub struct Session {
    dir: PathBuf,
    record: SessionRecord,
    state: SessionState,
    log: File,
    snapshot_every: u64,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ServiceError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ServiceError::Corrupt(format!("{}: {e}", path.display())))
}

/// Writes via a temporary file and rename so readers never see a torn file.
fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(serde_json::to_string_pretty(value).expect("serializable").as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Session {
    fn create(
        dir: PathBuf,
        session_id: String,
        config: SessionConfig,
        snapshot_every: u64,
    ) -> Result<Session, ServiceError> {
        let assignment = allocate(&config.samples, &config.annotators, &config.allocation)?;
        let record = SessionRecord {
            schema_version: SCHEMA_VERSION,
            session_id,
            config,
            assignment,
        };
        fs::create_dir_all(&dir)?;
        write_json_atomic(&dir.join("session.json"), &record)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))?;
        Ok(Session {
            state: SessionState::from_assignment(&record.assignment),
            dir,
            record,
            log,
            snapshot_every,
        })
    }

    /// Rebuilds a session from disk. A torn final log line, left by a crash
    /// before its fsync completed, is dropped.
    fn recover(dir: PathBuf, snapshot_every: u64) -> Result<Session, ServiceError> {
        let record: SessionRecord = read_json(&dir.join("session.json"))?;
        let snapshot = dir.join("snapshot.json");
        let mut state = if snapshot.exists() {
            read_json(&snapshot)?
        } else {
            SessionState::from_assignment(&record.assignment)
        };
        let log_path = dir.join("events.jsonl");
        let mut valid_len = 0u64;
        if log_path.exists() {
            let mut reader = BufReader::new(File::open(&log_path)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                let event: Event = serde_json::from_str(line.trim_end())
                    .map_err(|e| ServiceError::Corrupt(format!("log line after {valid_len} bytes: {e}")))?;
                if event.seq() > state.seq {
                    state.apply(&event)?;
                }
                valid_len += n as u64;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if log.metadata()?.len() != valid_len {
            log::warn!("dropping torn tail of {}", log_path.display());
            log.set_len(valid_len)?;
        }
        Ok(Session {
            dir,
            record,
            state,
            log,
            snapshot_every,
        })
    }

    pub fn id(&self) -> &str {
        &self.record.session_id
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn assignment(&self) -> &Assignment {
        &self.record.assignment
    }

    fn append(&mut self, event: Event) -> Result<(), ServiceError> {
        // A rejected event never reaches the log.
        self.state.check(&event)?;
        let mut line = serde_json::to_string(&event).expect("serializable");
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()?;
        self.state.apply(&event)?;
        if self.snapshot_every > 0 && self.state.seq.is_multiple_of(self.snapshot_every) {
            write_json_atomic(&self.dir.join("snapshot.json"), &self.state)?;
        }
        Ok(())
    }

    fn clip_url(&self, sample_id: &str) -> String {
        let encoded = utf8_percent_encode(sample_id, NON_ALPHANUMERIC);
        format!("{}{encoded}", self.record.config.clip_base_url)
    }

    pub fn next(&self, annotator: &str) -> Result<NextSample, ServiceError> {
        let a = self.state.annotator(annotator)?;
        let total = a.judged.len() + a.pending.len();
        Ok(match a.pending.front() {
            Some(sample_id) => NextSample::Sample {
                clip_url: self.clip_url(sample_id),
                sample_id: sample_id.clone(),
                position: a.judged.len() + 1,
                total,
            },
            None => NextSample::Done { total },
        })
    }

    pub fn submit(&mut self, annotator: &str, sample_id: &str, verdict: Verdict) -> Result<Ack, ServiceError> {
        self.append(Event::Judgment {
            seq: self.state.seq + 1,
            annotator_id: annotator.to_string(),
            sample_id: sample_id.to_string(),
            verdict,
        })?;
        let a = &self.state.annotators[annotator];
        Ok(Ack {
            sample_id: sample_id.to_string(),
            judged: a.judged.len(),
            total: a.judged.len() + a.pending.len(),
        })
    }

    /// Moves the head sample to the tail of the queue; allowed once per
    /// sample and annotator.
    pub fn flag_unplayable(&mut self, annotator: &str, sample_id: &str) -> Result<NextSample, ServiceError> {
        self.append(Event::Flag {
            seq: self.state.seq + 1,
            annotator_id: annotator.to_string(),
            sample_id: sample_id.to_string(),
        })?;
        self.next(annotator)
    }

    pub fn progress(&self) -> Progress {
        let annotators: BTreeMap<String, AnnotatorProgress> = self
            .state
            .annotators
            .iter()
            .map(|(id, a)| {
                let p = AnnotatorProgress {
                    assigned: a.judged.len() + a.pending.len(),
                    judged: a.judged.len(),
                    pending: a.pending.len(),
                };
                (id.clone(), p)
            })
            .collect();
        Progress {
            state: if self.state.is_complete() {
                SessionStatus::Complete
            } else {
                SessionStatus::Open
            },
            assigned: annotators.values().map(|a| a.assigned).sum(),
            judged: annotators.values().map(|a| a.judged).sum(),
            annotators,
        }
    }

    /// Collected judgments sorted by sample, then annotator.
    pub fn export(&self, partial: bool) -> Result<Export, ServiceError> {
        let complete = self.state.is_complete();
        if !complete && !partial {
            return Err(ServiceError::Incomplete);
        }
        let mut judgments: Vec<Judgment> = self
            .state
            .annotators
            .iter()
            .flat_map(|(a, st)| {
                st.judged
                    .iter()
                    .map(move |(s, v)| Judgment::new(s.clone(), a.clone(), *v))
            })
            .collect();
        judgments.sort_by(|x, y| (&x.sample_id, &x.annotator_id).cmp(&(&y.sample_id, &y.annotator_id)));
        Ok(Export { complete, judgments })
    }
}

/// All sessions under one data directory.
pub struct SessionStore {
    root: PathBuf,
    snapshot_every: u64,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: Mutex<u64>,
}

impl SessionStore {
    /// Opens `root`, recovering every session found there.
    pub fn open(root: impl Into<PathBuf>) -> Result<SessionStore, ServiceError> {
        Self::with_snapshot_interval(root, DEFAULT_SNAPSHOT_EVERY)
    }

    pub fn with_snapshot_interval(root: impl Into<PathBuf>, snapshot_every: u64) -> Result<SessionStore, ServiceError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        let mut max_id = 0;
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            if !path.join("session.json").exists() {
                continue;
            }
            let session = Session::recover(path, snapshot_every)?;
            if let Some(n) = session.id().strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            sessions.insert(session.id().to_string(), Arc::new(Mutex::new(session)));
        }
        Ok(SessionStore {
            root,
            snapshot_every,
            sessions: RwLock::new(sessions),
            next_id: Mutex::new(max_id + 1),
        })
    }

    pub fn create(&self, config: SessionConfig) -> Result<String, ServiceError> {
        let mut next = self.next_id.lock().expect("id lock");
        let id = format!("s{:04}", *next);
        let session = Session::create(self.root.join(&id), id.clone(), config, self.snapshot_every)?;
        *next += 1;
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Runs `f` with the session locked; all mutations of one session are
    /// serialized here.
    pub fn with<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let session = self.session(id)?;
        let mut guard = session.lock().expect("session lock");
        f(&mut guard)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .expect("session map lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }
}
