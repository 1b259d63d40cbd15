//! HTTP/JSON API over the expression database, retrieval, the edit pipeline
//! and the diff analyzer.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/tags?transformation_free=&q=` | tag summaries |
//! | POST | `/api/retrieve` | ranked tags for a story |
//! | POST | `/api/edits` | multipart `image`, `mask`, `params`; returns a job id |
//! | GET | `/api/edits/{id}` | job status |
//! | GET | `/api/edits/{id}/layer.png`, `/composite.png` | results |
//! | POST | `/api/diff` | multipart `original`, `edited`, optional `mask`, `threshold` |
//! | GET, PUT | `/api/settings` | settings; PUT takes a JSON merge patch |

mod error;
pub mod jobs;
mod routes;
pub mod settings;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use exprforge_core::expression_db::ExpressionDatabase;
use exprforge_core::retrieval::{build_index, RetrievalIndex, TextCompletion};
use tokio::sync::Semaphore;

pub use error::ApiError;
pub use jobs::{EditJob, JobState, JobStore, DEFAULT_JOB_CAP};
pub use routes::router;
pub use settings::{Settings, SettingsStore};

/// Everything a request handler can reach.
pub struct AppState {
    pub db: Arc<ExpressionDatabase>,
    pub index: Arc<RetrievalIndex>,
    pub settings: SettingsStore,
    pub jobs: Arc<JobStore>,
    pub llm: Option<Arc<dyn TextCompletion>>,
    /// Admits one generation at a time, FIFO, for single-tenant backends.
    pub gate: Arc<Semaphore>,
}

impl AppState {
    pub fn new(
        db: ExpressionDatabase,
        settings: SettingsStore,
        jobs: JobStore,
        llm: Option<Arc<dyn TextCompletion>>,
    ) -> Self {
        let index = build_index(&db);
        Self {
            db: Arc::new(db),
            index: Arc::new(index),
            settings,
            jobs: Arc::new(jobs),
            llm,
            gate: Arc::new(Semaphore::new(1)),
        }
    }
}

/// Where a server keeps its state on disk.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn settings_file(&self) -> PathBuf {
        self.0.join("settings.json")
    }

    pub fn jobs_dir(&self) -> PathBuf {
        self.0.join("jobs")
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
