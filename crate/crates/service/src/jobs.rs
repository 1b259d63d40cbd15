//! Edit jobs: a forward-only state machine, on-disk artifacts under a run
//! directory, and least-recently-used eviction past a cap.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use exprforge_core::pipeline::HyperParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_JOB_CAP: usize = 100;
const JOB_FILE: &str = "job.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }

    fn can_move_to(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (Self::Queued, Self::Running)
                | (Self::Queued, Self::Failed)
                | (Self::Running, Self::Done)
                | (Self::Running, Self::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub width: u32,
    pub height: u32,
    pub selected_pixels: usize,
    pub prompt: String,
    pub negative_prompt: String,
    pub params: HyperParams,
    pub loras: Vec<String>,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditJob {
    pub id: String,
    pub state: JobState,
    pub request: RequestSummary,
    /// Set only once the job is done.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum JobError {
    #[error("unknown job `{0}`")]
    Unknown(String),
    #[error("job `{id}` cannot move from {from:?} to {to:?}")]
    BadTransition { id: String, from: JobState, to: JobState },
    #[error("job store io at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Outcome applied by [`JobStore::finish`].
pub enum Outcome {
    Done { latency_ms: u64, seed: u64 },
    Failed(String),
}

#[derive(Default)]
struct Inner {
    jobs: HashMap<String, EditJob>,
    /// Least recently used first.
    order: VecDeque<String>,
}

impl Inner {
    fn touch(&mut self, id: &str) {
        if let Some(pos) = self.order.iter().position(|x| x == id) {
            let id = self.order.remove(pos).expect("position is in range");
            self.order.push_back(id);
        }
    }
}

pub struct JobStore {
    dir: PathBuf,
    cap: usize,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for JobStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JobStore")
            .field("dir", &self.dir)
            .field("cap", &self.cap)
            .finish()
    }
}

impl JobStore {
    /// Opens `dir`, reloading jobs left by a previous process. Jobs that
    /// were still queued or running are marked failed.
    pub fn open(dir: impl Into<PathBuf>, cap: usize) -> Result<Self, JobError> {
        let dir = dir.into();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| JobError::Io { path, source }
        };
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut found = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io(&dir))? {
            let entry = entry.map_err(io(&dir))?;
            let file = entry.path().join(JOB_FILE);
            let Ok(bytes) = std::fs::read(&file) else { continue };
            let Ok(mut job) = serde_json::from_slice::<EditJob>(&bytes) else {
                continue;
            };
            if !job.state.is_terminal() {
                job.state = JobState::Failed;
                job.error = Some("interrupted by service restart".into());
                job.latency_ms = None;
            }
            let modified = std::fs::metadata(&file).and_then(|m| m.modified()).ok();
            found.push((modified, job));
        }
        found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
        let store = Self {
            dir,
            cap: cap.max(1),
            inner: Mutex::new(Inner::default()),
        };
        {
            let mut inner = store.lock();
            for (_, job) in found {
                inner.order.push_back(job.id.clone());
                inner.jobs.insert(job.id.clone(), job);
            }
        }
        store.evict();
        Ok(store)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.lock().jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    pub fn artifact(&self, id: &str, name: &str) -> PathBuf {
        self.job_dir(id).join(name)
    }

    /// Registers a queued job and writes its input artifacts.
    pub fn create(&self, job: EditJob, files: &[(&str, &[u8])]) -> Result<(), JobError> {
        assert_eq!(job.state, JobState::Queued);
        let dir = self.job_dir(&job.id);
        let io = |source| JobError::Io {
            path: dir.clone(),
            source,
        };
        std::fs::create_dir_all(&dir).map_err(io)?;
        for (name, bytes) in files {
            std::fs::write(dir.join(name), bytes).map_err(io)?;
        }
        write_job(&dir, &job)?;
        {
            let mut inner = self.lock();
            inner.order.push_back(job.id.clone());
            inner.jobs.insert(job.id.clone(), job);
        }
        self.evict();
        Ok(())
    }

    /// Snapshot of a job; counts as a use for eviction.
    pub fn get(&self, id: &str) -> Option<EditJob> {
        let mut inner = self.lock();
        let job = inner.jobs.get(id).cloned();
        if job.is_some() {
            inner.touch(id);
        }
        job
    }

    pub fn list(&self) -> Vec<EditJob> {
        let inner = self.lock();
        inner
            .order
            .iter()
            .filter_map(|id| inner.jobs.get(id).cloned())
            .collect()
    }

    pub fn start(&self, id: &str) -> Result<EditJob, JobError> {
        self.transition(id, JobState::Running, |_| {})
    }

    pub fn finish(&self, id: &str, outcome: Outcome) -> Result<EditJob, JobError> {
        match outcome {
            Outcome::Done { latency_ms, seed } => self.transition(id, JobState::Done, |j| {
                j.latency_ms = Some(latency_ms);
                j.seed = Some(seed);
            }),
            Outcome::Failed(detail) => self.transition(id, JobState::Failed, |j| j.error = Some(detail)),
        }
    }

    fn transition(&self, id: &str, to: JobState, edit: impl FnOnce(&mut EditJob)) -> Result<EditJob, JobError> {
        let mut inner = self.lock();
        let job = inner
            .jobs
            .get_mut(id)
            .ok_or_else(|| JobError::Unknown(id.to_string()))?;
        if !job.state.can_move_to(to) {
            return Err(JobError::BadTransition {
                id: id.to_string(),
                from: job.state,
                to,
            });
        }
        let mut next = job.clone();
        next.state = to;
        edit(&mut next);
        write_job(&self.job_dir(id), &next)?;
        *job = next.clone();
        Ok(next)
    }

    /// Drops least recently used finished jobs until within the cap.
    /// Unfinished jobs are never evicted.
    fn evict(&self) {
        let victims: Vec<String> = {
            let mut inner = self.lock();
            let mut victims = Vec::new();
            let mut i = 0;
            while inner.jobs.len() > self.cap && i < inner.order.len() {
                let id = inner.order[i].clone();
                if inner.jobs[&id].state.is_terminal() {
                    inner.order.remove(i);
                    inner.jobs.remove(&id);
                    victims.push(id);
                } else {
                    i += 1;
                }
            }
            victims
        };
        for id in victims {
            if let Err(e) = std::fs::remove_dir_all(self.job_dir(&id)) {
                tracing::warn!(job = %id, error = %e, "could not remove evicted job directory");
            }
        }
    }
}

fn write_job(dir: &Path, job: &EditJob) -> Result<(), JobError> {
    let io = |source| JobError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let tmp = dir.join("job.json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(job).expect("jobs serialize")).map_err(io)?;
    std::fs::rename(&tmp, dir.join(JOB_FILE)).map_err(io)
}
