//! Whole-repository analysis: commits, deltas, per-version metrics, linked
//! histories, the schema timeline and table accesses.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evomodel::{self, ArtifactKind, EvoError, Evolution};
use crate::ingest::{self, Classifier, CommitMeta, DeltaOptions, FileKind, IngestError, KindConfig, Repository, SnapshotDelta};
use crate::metrics::MetricRecord;
use crate::sqlinfer::{self, ConstantTable, Dialect, FileSql, SchemaState, SqlStatement, TableAccess};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    History(#[from] EvoError),
    #[error("blob {oid} for {path} is missing")]
    MissingBlob { oid: String, path: String },
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub branch: Option<String>,
    pub dialect: Dialect,
    /// Where remote repositories are cloned.
    pub cache_dir: PathBuf,
    pub kinds: KindConfig,
    pub rename_threshold: f64,
    /// Blobs read per parallel metrics batch.
    pub batch_size: usize,
    /// Analyze only the first `n` mainline commits.
    pub max_commits: Option<usize>,
}

impl AnalyzeOptions {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        AnalyzeOptions {
            branch: None,
            dialect: Dialect::Generic,
            cache_dir: cache_dir.into(),
            kinds: KindConfig::default(),
            rename_threshold: DeltaOptions::default().rename_threshold,
            batch_size: 256,
            max_commits: None,
        }
    }
}

/// One row of the commit timeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub ordinal: u32,
    pub id: String,
    pub timestamp: i64,
    pub author: String,
    pub message: String,
    pub added: u32,
    pub modified: u32,
    pub deleted: u32,
    pub moved: u32,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// Canonical repository location.
    pub source: String,
    pub branch: Option<String>,
    pub head: String,
    pub dialect: Dialect,
    pub commits: Vec<CommitMeta>,
    pub deltas: Vec<SnapshotDelta>,
    pub evolution: Evolution,
    /// Schema state at every ordinal where it differs from the previous one (always includes 0).
    pub schema_changes: Vec<(u32, SchemaState)>,
    /// Table accesses present in each snapshot.
    pub accesses: Vec<Vec<TableAccess>>,
}

impl Analysis {
    pub fn num_commits(&self) -> u32 {
        self.commits.len() as u32
    }

    pub fn schema_at(&self, ordinal: u32) -> &SchemaState {
        let i = self.schema_changes.partition_point(|(o, _)| *o <= ordinal);
        &self.schema_changes[i.saturating_sub(1)].1
    }

    /// The schema as known after the last commit, with every table ever seen.
    pub fn final_schema(&self) -> &SchemaState {
        &self.schema_changes.last().expect("at least one schema state").1
    }

    pub fn timeline(&self) -> Vec<TimelineEntry> {
        self.commits
            .iter()
            .zip(&self.deltas)
            .map(|(c, d)| TimelineEntry {
                ordinal: c.ordinal,
                id: c.id.clone(),
                timestamp: c.timestamp,
                author: c.author.clone(),
                message: c.message.clone(),
                added: d.added.len() as u32,
                modified: d.modified.len() as u32,
                deleted: d.deleted.len() as u32,
                moved: d.renamed.len() as u32,
            })
            .collect()
    }
}

/// Alive artifacts per kind at one commit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub classes: u32,
    pub data_files: u32,
    pub binaries: u32,
    pub other_text: u32,
    pub folders: u32,
    pub tables: u32,
}

pub fn kind_counts(evo: &Evolution, schema: Option<&SchemaState>, ordinal: u32) -> KindCounts {
    let mut c = KindCounts::default();
    for h in evo.histories.iter().filter(|h| h.alive_at(ordinal)) {
        match h.kind {
            ArtifactKind::SourceClassContainer => c.classes += 1,
            ArtifactKind::DataFile => c.data_files += 1,
            ArtifactKind::BinaryFile => c.binaries += 1,
            ArtifactKind::OtherText => c.other_text += 1,
            ArtifactKind::Folder => c.folders += 1,
        }
    }
    c.tables = schema.map_or(0, |s| s.tables.values().filter(|t| t.alive_at(ordinal)).count() as u32);
    c
}

struct Computed {
    kind: FileKind,
    metrics: MetricRecord,
    sql: Option<Arc<FileSql>>,
}

/// Blob content plus the extension decides both kind and metrics.
type BlobKey = (String, Option<String>);

fn blob_key(oid: &str, path: &str) -> BlobKey {
    let name = path.rsplit('/').next().unwrap_or(path);
    let ext = name.rsplit_once('.').filter(|(stem, _)| !stem.is_empty()).map(|(_, e)| e.to_ascii_lowercase());
    (oid.to_string(), ext)
}

/// Opens (or clones) `location` and analyzes its mainline.
pub fn analyze(location: &str, opts: &AnalyzeOptions) -> Result<Analysis, PipelineError> {
    let repo = ingest::open_repository(location, opts.branch.as_deref(), &opts.cache_dir)?;
    analyze_repository(&repo, opts)
}

pub fn analyze_repository(repo: &Repository, opts: &AnalyzeOptions) -> Result<Analysis, PipelineError> {
    let mut commits = if repo.head().is_some() { repo.enumerate_commits()? } else { Vec::new() };
    if let Some(n) = opts.max_commits {
        commits.truncate(n);
    }
    log::info!("{}: {} commits", repo.source(), commits.len());
    let delta_opts = DeltaOptions { rename_threshold: opts.rename_threshold };
    let deltas = commits.iter().map(|c| repo.snapshot_delta_with(c, delta_opts)).collect::<Result<Vec<_>, _>>()?;

    let computed = compute_blobs(repo, &deltas, opts)?;
    let lookup = |ord: u32, path: &str| -> Option<&Arc<Computed>> {
        let oid = deltas.get(ord as usize)?.blobs.get(path)?;
        computed.get(&blob_key(oid, path))
    };

    let evolution = evomodel::link_versions(&deltas, |ord, path| {
        lookup(ord, path).map(|c| (c.kind, c.metrics.clone()))
    })?;
    log::info!("{} histories", evolution.histories.len());

    // schema and accesses, snapshot by snapshot
    let mut sql_files: BTreeMap<String, Arc<FileSql>> = BTreeMap::new();
    let mut parsed: HashMap<String, SqlStatement> = HashMap::new();
    let mut statements: Vec<SqlStatement> = Vec::new();
    let mut state = SchemaState::default();
    let mut schema_changes: Vec<(u32, SchemaState)> = Vec::new();
    let mut accesses = Vec::with_capacity(commits.len());
    for (ord, delta) in deltas.iter().enumerate() {
        let ord = ord as u32;
        let mut changed = false;
        for p in &delta.deleted {
            changed |= sql_files.remove(p).is_some();
        }
        for r in &delta.renamed {
            changed |= sql_files.remove(&r.from).is_some();
        }
        let touched = delta.added.iter().chain(&delta.modified).chain(delta.renamed.iter().map(|r| &r.to));
        for p in touched {
            // files without strings or constants of interest never matter
            let sql = lookup(ord, p).and_then(|c| c.sql.clone()).filter(|f| !f.templates.is_empty() || !f.constants.is_empty());
            changed |= match sql {
                Some(f) => {
                    sql_files.insert(p.clone(), f);
                    true
                }
                None => sql_files.remove(p).is_some(),
            };
        }
        if changed {
            let table = ConstantTable::from_files(sql_files.values().map(|f| f.as_ref()));
            statements.clear();
            for (path, f) in &sql_files {
                for c in f.candidates(&table) {
                    let mut s = parsed
                        .entry(c.text.clone())
                        .or_insert_with(|| sqlinfer::parse_sql_dialect(&c.text, opts.dialect))
                        .clone();
                    s.path = path.clone();
                    s.line = c.line;
                    s.has_fragment |= c.has_fragment;
                    statements.push(s);
                }
            }
        }
        let next = sqlinfer::infer_schema(&statements, &state, ord);
        if schema_changes.is_empty() || next != state {
            schema_changes.push((ord, next.clone()));
        }
        state = next;

        let alive = if statements.is_empty() { BTreeMap::new() } else { evolution.files_at(ord) };
        let (acc, _) = sqlinfer::count_accesses(&statements, ord, |p| alive.get(p).map(|h| h.id.to_string()));
        accesses.push(acc);
    }

    if schema_changes.is_empty() {
        schema_changes.push((0, SchemaState::default()));
    }
    Ok(Analysis {
        source: repo.source().to_string(),
        branch: repo.branch().map(String::from),
        head: commits.last().map(|c| c.id.clone()).unwrap_or_default(),
        dialect: opts.dialect,
        commits,
        deltas,
        evolution,
        schema_changes,
        accesses,
    })
}

/// Classifies and measures every distinct blob version, in parallel batches.
fn compute_blobs(
    repo: &Repository,
    deltas: &[SnapshotDelta],
    opts: &AnalyzeOptions,
) -> Result<HashMap<BlobKey, Arc<Computed>>, PipelineError> {
    let mut wanted: BTreeMap<BlobKey, &str> = BTreeMap::new();
    for d in deltas {
        for (path, oid) in &d.blobs {
            wanted.entry(blob_key(oid, path)).or_insert(path);
        }
    }
    log::info!("measuring {} blob versions", wanted.len());
    let classifier = Classifier::new(opts.kinds.clone());
    let wanted: Vec<_> = wanted.into_iter().collect();
    let mut out = HashMap::with_capacity(wanted.len());
    for batch in wanted.chunks(opts.batch_size.max(1)) {
        let mut blobs = Vec::with_capacity(batch.len());
        for (key, path) in batch {
            let content = repo
                .read_object(&key.0)?
                .ok_or_else(|| PipelineError::MissingBlob { oid: key.0.clone(), path: path.to_string() })?;
            blobs.push(content);
        }
        let results: Vec<Computed> = batch
            .par_iter()
            .zip(blobs.par_iter())
            .map(|((_, path), content)| {
                let kind = classifier.classify(path, content);
                let metrics = MetricRecord::compute(kind, path, content);
                let sql = (kind == FileKind::SourceClassContainer).then(|| Arc::new(sqlinfer::scan_file(content)));
                Computed { kind, metrics, sql }
            })
            .collect();
        for ((key, _), c) in batch.iter().zip(results) {
            out.insert(key.clone(), Arc::new(c));
        }
    }
    Ok(out)
}
