//! Analysis runs shared by the command line and the HTTP service.

use std::path::{Path, PathBuf};

use evocity_core::ingest::{self, IngestError};
use evocity_core::pipeline::{self, AnalyzeOptions, PipelineError};
use evocity_core::store::{self, ProjectRecord, Status, Store, StoreError};
use evocity_core::Dialect;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JobError {
    /// The caller asked for something that cannot work (bad location, branch, ordinal).
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(PipelineError),
}

impl From<PipelineError> for JobError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ingest(
                e @ (IngestError::NotARepository(_) | IngestError::Unreachable { .. } | IngestError::BranchNotFound(_)),
            ) => JobError::Input(e.to_string()),
            e => JobError::Pipeline(e),
        }
    }
}

impl JobError {
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            JobError::Input(_)
                | JobError::Store(StoreError::UnknownProject(_) | StoreError::OrdinalOutOfRange { .. } | StoreError::NotDone { .. })
        )
    }
}

/// What to analyze.
#[derive(Debug, Clone)]
pub struct Request {
    pub location: String,
    pub branch: Option<String>,
    pub dialect: Dialect,
}

/// Canonical form of a repository location: the URL as given, or the absolute local path.
pub fn source_key(location: &str) -> Result<String, JobError> {
    let location = location.trim();
    if location.is_empty() {
        return Err(JobError::Input("repository location is empty".into()));
    }
    if ingest::is_remote(location) {
        return Ok(location.to_string());
    }
    let local = location.strip_prefix("file://").unwrap_or(location);
    std::fs::canonicalize(local)
        .map(|p| p.to_string_lossy().into_owned())
        .map_err(|_| JobError::Input(format!("{location} is neither a URL nor an existing path")))
}

impl Request {
    pub fn record(&self) -> Result<ProjectRecord, JobError> {
        Ok(ProjectRecord::new(&source_key(&self.location)?, self.branch.as_deref(), self.dialect))
    }
}

pub fn cache_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("cache")
}

/// Runs the whole analysis for `record` and publishes it; the record ends up
/// Done or Failed either way.
pub fn run(store: &Store, record: &ProjectRecord, req: &Request) -> Result<ProjectRecord, JobError> {
    let mut running = record.clone();
    running.status = Status::Running;
    store.write_record(&running)?;
    match analyze_and_publish(store, &running, req) {
        Ok(()) => Ok(store.record(&record.id)?),
        Err(e) => {
            let mut failed = running;
            failed.status = Status::Failed { reason: e.to_string() };
            store.write_record(&failed)?;
            Err(e)
        }
    }
}

fn analyze_and_publish(store: &Store, record: &ProjectRecord, req: &Request) -> Result<(), JobError> {
    let mut opts = AnalyzeOptions::new(cache_dir(store.root()));
    opts.branch = req.branch.clone();
    opts.dialect = req.dialect;
    let location = if ingest::is_remote(&req.location) { req.location.as_str() } else { record.source.as_str() };
    let analysis = pipeline::analyze(location, &opts)?;
    store.publish_analysis(record, &analysis)?;
    Ok(())
}

/// Head of a local repository right now; `None` for remotes or on errors.
pub fn local_head(record: &ProjectRecord) -> Option<String> {
    if ingest::is_remote(&record.source) {
        return None;
    }
    let scratch = std::env::temp_dir();
    let repo = ingest::open_repository(&record.source, record.branch.as_deref(), &scratch).ok()?;
    repo.head().map(String::from)
}

/// A Done project whose stored head still matches the repository.
pub fn is_current(record: &ProjectRecord) -> bool {
    if record.status != Status::Done {
        return false;
    }
    if ingest::is_remote(&record.source) {
        return true;
    }
    local_head(record) == record.head
}

pub use store::project_id;
