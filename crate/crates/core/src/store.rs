//! File-backed project store.
//!
//! ```text
//! <root>/projects/<id>/record.json         status and timestamps
//! <root>/projects/<id>/manifest.json       current generation and checksums
//! <root>/projects/<id>/gen-<hash>/...      project, histories, layout, schemas, timeline, scenes/NNNNNN.json
//! ```
//!
//! A generation directory is written under a temporary name and renamed into
//! place, then the manifest is replaced by rename. Readers go through the
//! manifest, so they see the old project or the new one, never a mix. The
//! previous generation is kept for readers still holding the old manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canon;
use crate::evomodel::Evolution;
use crate::layout::CityLayout;
use crate::pipeline::{Analysis, TimelineEntry};
use crate::layout::{self, SizingRule};
use crate::scene::{self, VisualMapping};
use crate::sqlinfer::{Dialect, SchemaState};

pub const STORE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown project {0}")]
    UnknownProject(String),
    #[error("project {id} is {status}, not done")]
    NotDone { id: String, status: String },
    #[error("ordinal {ordinal} out of range (project has {count} commits)")]
    OrdinalOutOfRange { ordinal: u32, count: u32 },
    #[error("corrupt document {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Queued,
    Running,
    Done,
    Failed { reason: String },
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Queued => "queued",
            Status::Running => "running",
            Status::Done => "done",
            Status::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub id: String,
    pub source: String,
    pub branch: Option<String>,
    pub dialect: Dialect,
    pub head: Option<String>,
    pub num_commits: Option<u32>,
    /// Seconds since the epoch of the last completed analysis.
    pub analyzed_at: Option<i64>,
    pub schema_version: u32,
    pub status: Status,
}

impl ProjectRecord {
    pub fn new(source: &str, branch: Option<&str>, dialect: Dialect) -> Self {
        ProjectRecord {
            id: project_id(source, branch),
            source: source.to_string(),
            branch: branch.map(String::from),
            dialect,
            head: None,
            num_commits: None,
            analyzed_at: None,
            schema_version: STORE_SCHEMA_VERSION,
            status: Status::Queued,
        }
    }
}

/// Stable id for a repository location and branch.
pub fn project_id(source: &str, branch: Option<&str>) -> String {
    let mut h = Sha256::new();
    h.update(source.as_bytes());
    h.update([0]);
    h.update(branch.unwrap_or("").as_bytes());
    hex::encode(&h.finalize()[..8])
}

pub fn now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub generation: String,
    pub num_commits: u32,
    /// Relative path → sha256 hex.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectDoc {
    pub schema_version: u32,
    pub id: String,
    pub source: String,
    pub branch: Option<String>,
    pub dialect: Dialect,
    pub head: String,
    pub num_commits: u32,
    pub mapping: VisualMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemasDoc {
    pub schema_version: u32,
    /// Schema state at each ordinal where it changed.
    pub changes: Vec<(u32, SchemaState)>,
}

impl SchemasDoc {
    pub fn at(&self, ordinal: u32) -> Option<&SchemaState> {
        let i = self.changes.partition_point(|(o, _)| *o <= ordinal);
        i.checked_sub(1).map(|i| &self.changes[i].1)
    }
}

type RenderScene<'a> = Box<dyn Fn(u32) -> Vec<u8> + Send + Sync + 'a>;

/// Documents of one analyzed project. Small documents are held in memory;
/// scenes are rendered on demand while the generation is written.
pub struct ProjectDocs<'a> {
    pub files: BTreeMap<String, Vec<u8>>,
    pub num_commits: u32,
    render: RenderScene<'a>,
}

pub fn scene_path(ordinal: u32) -> String {
    format!("scenes/{ordinal:06}.json")
}

const SCENE_CHUNK: u32 = 64;

impl<'a> ProjectDocs<'a> {
    pub fn new(files: BTreeMap<String, Vec<u8>>, num_commits: u32, render: impl Fn(u32) -> Vec<u8> + Send + Sync + 'a) -> Self {
        ProjectDocs { files, num_commits, render: Box::new(render) }
    }

    pub fn build(id: &str, a: &'a Analysis, layout: &'a CityLayout, mapping: &'a VisualMapping) -> Result<Self> {
        let mut files = BTreeMap::new();
        let project = ProjectDoc {
            schema_version: STORE_SCHEMA_VERSION,
            id: id.to_string(),
            source: a.source.clone(),
            branch: a.branch.clone(),
            dialect: a.dialect,
            head: a.head.clone(),
            num_commits: a.num_commits(),
            mapping: mapping.clone(),
        };
        files.insert("project.json".to_string(), canon::to_canonical(&project)?);
        files.insert("histories.json".to_string(), canon::to_canonical(&a.evolution)?);
        files.insert("layout.json".to_string(), canon::to_canonical(layout)?);
        let schemas = SchemasDoc { schema_version: STORE_SCHEMA_VERSION, changes: a.schema_changes.clone() };
        files.insert("schemas.json".to_string(), canon::to_canonical(&schemas)?);
        files.insert("timeline.json".to_string(), canon::to_canonical(&a.timeline())?);
        Ok(ProjectDocs::new(files, a.num_commits(), move |ord| {
            let c = &a.commits[ord as usize];
            let s = scene::build_scene(layout, &a.evolution, a.schema_at(ord), &a.accesses[ord as usize], mapping, c);
            scene::serialize_scene(&s)
        }))
    }

    /// Every document in publishing order: small documents by name, then scenes by ordinal.
    fn for_each(&self, mut f: impl FnMut(&str, &[u8]) -> Result<()>) -> Result<()> {
        for (name, bytes) in &self.files {
            f(name, bytes)?;
        }
        let mut start = 0;
        while start < self.num_commits {
            let end = (start + SCENE_CHUNK).min(self.num_commits);
            let chunk: Vec<Vec<u8>> = (start..end).into_par_iter().map(|o| (self.render)(o)).collect();
            for (o, bytes) in (start..end).zip(chunk) {
                f(&scene_path(o), &bytes)?;
            }
            start = end;
        }
        Ok(())
    }
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    /// Writes left before an injected failure.
    fault_after: Option<Arc<AtomicUsize>>,
}

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        fs::create_dir_all(root.join("projects"))?;
        Ok(Store { root, fault_after: None })
    }

    /// Makes every write after the first `n` fail, as if the disk filled up.
    pub fn with_fault_after(mut self, n: usize) -> Store {
        self.fault_after = Some(Arc::new(AtomicUsize::new(n)));
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_dir(&self, id: &str) -> PathBuf {
        self.root.join("projects").join(id)
    }

    fn check_fault(&self) -> Result<()> {
        if let Some(left) = &self.fault_after {
            if left.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_err() {
                return Err(std::io::Error::other("injected write failure").into());
            }
        }
        Ok(())
    }

    fn write_file(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.check_fault()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    }

    fn tmp_name(&self, dir: &Path, stem: &str) -> PathBuf {
        let n = TMP_SEQ.fetch_add(1, Ordering::Relaxed);
        dir.join(format!(".tmp-{stem}-{}-{n}", std::process::id()))
    }

    /// Writes `bytes` to `path` through a temporary file and a rename.
    fn replace_file(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("store paths have parents");
        fs::create_dir_all(dir)?;
        let tmp = self.tmp_name(dir, "file");
        if let Err(e) = self.write_file(&tmp, bytes) {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn write_record(&self, record: &ProjectRecord) -> Result<()> {
        let path = self.project_dir(&record.id).join("record.json");
        self.replace_file(&path, &canon::to_canonical(record)?)
    }

    pub fn record(&self, id: &str) -> Result<ProjectRecord> {
        let path = self.project_dir(id).join("record.json");
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::UnknownProject(id.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn list_projects(&self) -> Result<Vec<ProjectRecord>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("projects"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            match self.record(&name) {
                Ok(r) => out.push(r),
                Err(StoreError::UnknownProject(_)) => {}
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn manifest(&self, id: &str) -> Result<Manifest> {
        let path = self.project_dir(id).join("manifest.json");
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let r = self.record(id)?;
                Err(StoreError::NotDone { id: id.to_string(), status: r.status.name().to_string() })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Publishes a new generation and marks the record done. On failure the
    /// previously published generation stays current.
    pub fn persist_project(&self, record: &ProjectRecord, docs: &ProjectDocs) -> Result<Manifest> {
        let dir = self.project_dir(&record.id);
        fs::create_dir_all(&dir)?;
        let tmp = self.tmp_name(&dir, "gen");
        let mut hasher = Sha256::new();
        let mut files = BTreeMap::new();
        let written = docs.for_each(|name, bytes| {
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
            files.insert(name.to_string(), checksum(bytes));
            self.write_file(&tmp.join(name), bytes)
        });
        if let Err(e) = written {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let generation = hex::encode(&hasher.finalize()[..8]);
        let gen_dir = dir.join(format!("gen-{generation}"));
        if gen_dir.is_dir() {
            fs::remove_dir_all(&tmp)?;
        } else {
            fs::rename(&tmp, &gen_dir)?;
        }
        let manifest = Manifest {
            schema_version: STORE_SCHEMA_VERSION,
            generation: generation.clone(),
            num_commits: docs.num_commits,
            files,
        };
        let previous = self.manifest(&record.id).ok().map(|m| m.generation);
        self.replace_file(&dir.join("manifest.json"), &canon::to_canonical(&manifest)?)?;

        let mut done = record.clone();
        done.status = Status::Done;
        done.num_commits = Some(docs.num_commits);
        self.write_record(&done)?;
        self.collect_garbage(&dir, &generation, previous.as_deref())?;
        Ok(manifest)
    }

    /// Lays out, renders and publishes an analysis.
    pub fn publish_analysis(&self, record: &ProjectRecord, a: &Analysis) -> Result<Manifest> {
        let rule = SizingRule::default();
        let layout = layout::layout_evolution(&a.evolution, a.final_schema(), &rule);
        let mapping = VisualMapping::from_analysis(a, rule);
        let docs = ProjectDocs::build(&record.id, a, &layout, &mapping)?;
        let mut r = record.clone();
        r.head = Some(a.head.clone());
        r.analyzed_at = Some(now());
        self.persist_project(&r, &docs)
    }

    /// Removes leftovers of failed writes and generations older than the previous one.
    fn collect_garbage(&self, dir: &Path, current: &str, previous: Option<&str>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let keep = match name.strip_prefix("gen-") {
                Some(g) => g == current || Some(g) == previous,
                None => !name.starts_with(".tmp-"),
            };
            if !keep {
                let p = entry.path();
                if p.is_dir() {
                    fs::remove_dir_all(p)?;
                } else {
                    fs::remove_file(p)?;
                }
            }
        }
        Ok(())
    }

    /// Bytes of a document of the current generation.
    pub fn load_doc(&self, id: &str, name: &str) -> Result<Vec<u8>> {
        let m = self.manifest(id)?;
        self.load_from(id, &m, name)
    }

    fn load_from(&self, id: &str, m: &Manifest, name: &str) -> Result<Vec<u8>> {
        let path = self.project_dir(id).join(format!("gen-{}", m.generation)).join(name);
        let expected = m
            .files
            .get(name)
            .ok_or_else(|| StoreError::Corrupt { path: name.to_string(), reason: "not in manifest".into() })?;
        let bytes = fs::read(&path)?;
        if &checksum(&bytes) != expected {
            return Err(StoreError::Corrupt { path: path.display().to_string(), reason: "checksum mismatch".into() });
        }
        Ok(bytes)
    }

    pub fn load_scene(&self, id: &str, ordinal: u32) -> Result<Vec<u8>> {
        let m = self.manifest(id)?;
        if ordinal >= m.num_commits {
            return Err(StoreError::OrdinalOutOfRange { ordinal, count: m.num_commits });
        }
        self.load_from(id, &m, &scene_path(ordinal))
    }

    pub fn load_project(&self, id: &str) -> Result<ProjectDoc> {
        Ok(serde_json::from_slice(&self.load_doc(id, "project.json")?)?)
    }

    pub fn load_histories(&self, id: &str) -> Result<Evolution> {
        let evo: Evolution = serde_json::from_slice(&self.load_doc(id, "histories.json")?)?;
        Ok(Evolution::new(evo.num_commits, evo.histories, evo.moves))
    }

    pub fn load_schemas(&self, id: &str) -> Result<SchemasDoc> {
        Ok(serde_json::from_slice(&self.load_doc(id, "schemas.json")?)?)
    }

    pub fn load_timeline(&self, id: &str) -> Result<Vec<TimelineEntry>> {
        Ok(serde_json::from_slice(&self.load_doc(id, "timeline.json")?)?)
    }

    /// Hash over the manifest and every document of the current generation.
    pub fn content_hash(&self, id: &str) -> Result<String> {
        let m = self.manifest(id)?;
        let mut h = Sha256::new();
        h.update(canon::to_canonical(&m)?);
        for name in m.files.keys() {
            h.update(self.load_from(id, &m, name)?);
        }
        Ok(hex::encode(h.finalize()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(tag: &str, scenes: u32) -> ProjectDocs<'_> {
        let mut files = BTreeMap::new();
        files.insert("project.json".to_string(), format!("{{\"tag\":\"{tag}\"}}\n").into_bytes());
        ProjectDocs::new(files, scenes, move |i| format!("{{\"scene\":{i},\"tag\":\"{tag}\"}}\n").into_bytes())
    }

    fn record() -> ProjectRecord {
        ProjectRecord::new("/tmp/repo", None, Dialect::Generic)
    }

    #[test]
    fn ids_depend_on_source_and_branch() {
        assert_eq!(project_id("a", None), project_id("a", None));
        assert_ne!(project_id("a", None), project_id("a", Some("dev")));
        assert_ne!(project_id("ab", None), project_id("a", Some("b")));
        assert_eq!(project_id("a", None).len(), 16);
    }

    #[test]
    fn empty_store_lists_nothing() {
        let t = tempfile::tempdir().unwrap();
        assert!(Store::open(t.path()).unwrap().list_projects().unwrap().is_empty());
    }

    #[test]
    fn publish_and_read_back() {
        let t = tempfile::tempdir().unwrap();
        let s = Store::open(t.path()).unwrap();
        let r = record();
        s.write_record(&r).unwrap();
        assert!(matches!(s.load_scene(&r.id, 0), Err(StoreError::NotDone { .. })));
        s.persist_project(&r, &docs("a", 3)).unwrap();
        assert_eq!(s.load_scene(&r.id, 2).unwrap(), b"{\"scene\":2,\"tag\":\"a\"}\n");
        assert!(matches!(s.load_scene(&r.id, 3), Err(StoreError::OrdinalOutOfRange { ordinal: 3, count: 3 })));
        assert!(matches!(s.load_scene("nope", 0), Err(StoreError::UnknownProject(_))));
        let listed = s.list_projects().unwrap();
        assert_eq!(listed.len(), 1);
        assert_eq!(listed[0].status, Status::Done);
    }

    #[test]
    fn republishing_same_content_is_byte_identical() {
        let t = tempfile::tempdir().unwrap();
        let s = Store::open(t.path()).unwrap();
        let r = record();
        s.persist_project(&r, &docs("a", 2)).unwrap();
        let h1 = s.content_hash(&r.id).unwrap();
        s.persist_project(&r, &docs("a", 2)).unwrap();
        assert_eq!(s.content_hash(&r.id).unwrap(), h1);
    }

    #[test]
    fn keeps_current_and_previous_generation() {
        let t = tempfile::tempdir().unwrap();
        let s = Store::open(t.path()).unwrap();
        let r = record();
        for tag in ["a", "b", "c"] {
            s.persist_project(&r, &docs(tag, 1)).unwrap();
        }
        let gens = fs::read_dir(s.project_dir(&r.id)).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("gen-")).count();
        assert_eq!(gens, 2);
        assert_eq!(s.load_scene(&r.id, 0).unwrap(), b"{\"scene\":0,\"tag\":\"c\"}\n");
    }

    #[test]
    fn failed_write_leaves_prior_state() {
        let t = tempfile::tempdir().unwrap();
        let r = record();
        let good = Store::open(t.path()).unwrap();
        good.persist_project(&r, &docs("old", 4)).unwrap();
        let before = good.content_hash(&r.id).unwrap();
        // five documents, then the manifest; a failure after that is past the publish point
        for n in 0..6 {
            let faulty = Store::open(t.path()).unwrap().with_fault_after(n);
            assert!(faulty.persist_project(&r, &docs("new", 4)).is_err(), "fault after {n} writes");
            let reopened = Store::open(t.path()).unwrap();
            assert_eq!(reopened.content_hash(&r.id).unwrap(), before);
            assert_eq!(reopened.record(&r.id).unwrap().status, Status::Done);
        }
    }

    #[test]
    fn tampering_is_detected() {
        let t = tempfile::tempdir().unwrap();
        let s = Store::open(t.path()).unwrap();
        let r = record();
        let m = s.persist_project(&r, &docs("a", 1)).unwrap();
        fs::write(s.project_dir(&r.id).join(format!("gen-{}", m.generation)).join(scene_path(0)), b"{}").unwrap();
        assert!(matches!(s.load_scene(&r.id, 0), Err(StoreError::Corrupt { .. })));
    }
}
