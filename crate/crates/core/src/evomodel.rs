//! Histories: per-artifact version chains linked across commits.
//!
//! A file history starts when a path is added and follows the file through
//! renames until it is deleted. A path that is deleted and later added again
//! starts a new history. Folder histories are derived from the files below
//! them: a folder is alive exactly while some descendant file is, and every
//! maximal alive run is its own history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{FileKind, SnapshotDelta};
use crate::metrics::MetricRecord;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvoError {
    #[error("inconsistent history at commit {ordinal}: {path}: {reason}")]
    Structural { ordinal: u32, path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactId(pub String);

impl ArtifactId {
    pub fn new(folder: bool, origin: &Origin) -> Self {
        let mut h = Sha256::new();
        h.update(if folder { b"folder\0" as &[u8] } else { b"file\0" });
        h.update(origin.ordinal.to_string().as_bytes());
        h.update(b"\0");
        h.update(origin.path.as_bytes());
        ArtifactId(hex::encode(&h.finalize()[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a history began.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub ordinal: u32,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArtifactKind {
    SourceClassContainer,
    DataFile,
    BinaryFile,
    OtherText,
    Folder,
}

impl From<FileKind> for ArtifactKind {
    fn from(k: FileKind) -> Self {
        match k {
            FileKind::SourceClassContainer => ArtifactKind::SourceClassContainer,
            FileKind::DataFile => ArtifactKind::DataFile,
            FileKind::BinaryFile => ArtifactKind::BinaryFile,
            FileKind::OtherText => ArtifactKind::OtherText,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Change {
    Added,
    Modified,
    Moved,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Version {
    pub ordinal: u32,
    pub path: String,
    /// Previous path, for `Moved` versions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    pub kind: ArtifactKind,
    pub change: Change,
    /// For `Deleted` versions, the last known metrics.
    pub metrics: MetricRecord,
}

/// `[from, to)`; `to == None` means still alive at the last commit.
pub type Interval = (u32, Option<u32>);

fn contains(iv: &Interval, ordinal: u32) -> bool {
    ordinal >= iv.0 && iv.1.is_none_or(|t| ordinal < t)
}

/// Stretch of a file history spent at one path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub index: u32,
    pub path: String,
    pub from: u32,
    pub to: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHistory {
    pub id: ArtifactId,
    pub origin: Origin,
    pub kind: ArtifactKind,
    pub versions: Vec<Version>,
    pub alive: Vec<Interval>,
}

impl ArtifactHistory {
    pub fn is_folder(&self) -> bool {
        self.kind == ArtifactKind::Folder
    }

    pub fn birth(&self) -> u32 {
        self.origin.ordinal
    }

    pub fn death(&self) -> Option<u32> {
        self.alive.last().and_then(|iv| iv.1)
    }

    pub fn alive_at(&self, ordinal: u32) -> bool {
        self.alive.iter().any(|iv| contains(iv, ordinal))
    }

    /// Ordinals of every commit that touched this artifact.
    pub fn entity_commits(&self) -> BTreeSet<u32> {
        self.versions.iter().map(|v| v.ordinal).collect()
    }

    /// Latest version at or before `ordinal`.
    pub fn version_at(&self, ordinal: u32) -> Option<&Version> {
        let n = self.versions.partition_point(|v| v.ordinal <= ordinal);
        n.checked_sub(1).map(|i| &self.versions[i])
    }

    pub fn path_at(&self, ordinal: u32) -> Option<&str> {
        self.version_at(ordinal).map(|v| v.path.as_str())
    }

    /// Paths held over the lifetime, split at every move.
    pub fn episodes(&self) -> Vec<Episode> {
        let mut out: Vec<Episode> = Vec::new();
        for v in &self.versions {
            match v.change {
                Change::Added => out.push(Episode { index: 0, path: v.path.clone(), from: v.ordinal, to: None }),
                Change::Moved => {
                    if let Some(last) = out.last_mut() {
                        last.to = Some(v.ordinal);
                    }
                    let index = out.len() as u32;
                    out.push(Episode { index, path: v.path.clone(), from: v.ordinal, to: None });
                }
                Change::Deleted => {
                    if let Some(last) = out.last_mut() {
                        last.to = Some(v.ordinal);
                    }
                }
                Change::Modified => {}
            }
        }
        out
    }

    /// Episode the artifact occupies at `ordinal` (alive artifacts only).
    pub fn episode_at(&self, ordinal: u32) -> Option<Episode> {
        self.episodes().into_iter().find(|e| contains(&(e.from, e.to), ordinal))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveEvent {
    pub artifact: ArtifactId,
    pub ordinal: u32,
    pub from: String,
    pub to: String,
}

/// All histories of one repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub num_commits: u32,
    /// Sorted by (birth ordinal, origin path, files before folders).
    pub histories: Vec<ArtifactHistory>,
    pub moves: Vec<MoveEvent>,
    #[serde(skip)]
    index: BTreeMap<ArtifactId, usize>,
}

impl Evolution {
    pub fn new(num_commits: u32, mut histories: Vec<ArtifactHistory>, moves: Vec<MoveEvent>) -> Self {
        histories.sort_by(|a, b| {
            (a.origin.ordinal, &a.origin.path, a.is_folder()).cmp(&(b.origin.ordinal, &b.origin.path, b.is_folder()))
        });
        let index = histories.iter().enumerate().map(|(i, h)| (h.id.clone(), i)).collect();
        Evolution { num_commits, histories, moves, index }
    }

    pub fn get(&self, id: &ArtifactId) -> Option<&ArtifactHistory> {
        if self.index.is_empty() && !self.histories.is_empty() {
            return self.histories.iter().find(|h| &h.id == id);
        }
        self.index.get(id).map(|&i| &self.histories[i])
    }

    pub fn get_str(&self, id: &str) -> Option<&ArtifactHistory> {
        self.get(&ArtifactId(id.to_string()))
    }

    pub fn files(&self) -> impl Iterator<Item = &ArtifactHistory> {
        self.histories.iter().filter(|h| !h.is_folder())
    }

    pub fn folders(&self) -> impl Iterator<Item = &ArtifactHistory> {
        self.histories.iter().filter(|h| h.is_folder())
    }

    /// File histories alive at `ordinal`, keyed by their current path.
    pub fn files_at(&self, ordinal: u32) -> BTreeMap<&str, &ArtifactHistory> {
        self.files()
            .filter(|h| h.alive_at(ordinal))
            .filter_map(|h| Some((h.path_at(ordinal)?, h)))
            .collect()
    }

    pub fn moves_at(&self, ordinal: u32) -> impl Iterator<Item = &MoveEvent> {
        self.moves.iter().filter(move |m| m.ordinal == ordinal)
    }
}

fn structural(ordinal: u32, path: &str, reason: &str) -> EvoError {
    EvoError::Structural { ordinal, path: path.to_string(), reason: reason.to_string() }
}

/// Links the per-commit deltas (in commit order, ordinal = position) into histories.
///
/// `metrics` is asked for the kind and metrics of every added, modified or
/// moved path at its commit.
pub fn link_versions<P>(deltas: &[SnapshotDelta], mut metrics: P) -> Result<Evolution, EvoError>
where
    P: FnMut(u32, &str) -> Option<(FileKind, MetricRecord)>,
{
    let mut histories: Vec<ArtifactHistory> = Vec::new();
    let mut moves = Vec::new();
    let mut live: BTreeMap<String, usize> = BTreeMap::new();

    for (ord, delta) in deltas.iter().enumerate() {
        let ord = ord as u32;
        let mut measure = |path: &str| metrics(ord, path).ok_or_else(|| structural(ord, path, "no metrics available"));

        for path in &delta.deleted {
            let i = live.remove(path).ok_or_else(|| structural(ord, path, "deleted but never added"))?;
            let h = &mut histories[i];
            let last = h.versions.last().expect("history has a version").clone();
            h.versions.push(Version { ordinal: ord, path: path.clone(), from: None, change: Change::Deleted, ..last });
            h.alive.last_mut().expect("history has an interval").1 = Some(ord);
        }

        let mut moving = Vec::new();
        for r in &delta.renamed {
            let i = live.remove(&r.from).ok_or_else(|| structural(ord, &r.from, "renamed but never added"))?;
            moving.push((i, r));
        }
        for (i, r) in moving {
            if live.contains_key(&r.to) {
                return Err(structural(ord, &r.to, "renamed onto a live path"));
            }
            let (kind, m) = measure(&r.to)?;
            let h = &mut histories[i];
            h.versions.push(Version {
                ordinal: ord,
                path: r.to.clone(),
                from: Some(r.from.clone()),
                kind: kind.into(),
                change: Change::Moved,
                metrics: m,
            });
            moves.push(MoveEvent { artifact: h.id.clone(), ordinal: ord, from: r.from.clone(), to: r.to.clone() });
            live.insert(r.to.clone(), i);
        }

        for path in &delta.modified {
            let &i = live.get(path).ok_or_else(|| structural(ord, path, "modified but never added"))?;
            let (kind, m) = measure(path)?;
            histories[i].versions.push(Version {
                ordinal: ord,
                path: path.clone(),
                from: None,
                kind: kind.into(),
                change: Change::Modified,
                metrics: m,
            });
        }

        for path in &delta.added {
            if live.contains_key(path) {
                return Err(structural(ord, path, "added twice"));
            }
            let (kind, m) = measure(path)?;
            let origin = Origin { ordinal: ord, path: path.clone() };
            live.insert(path.clone(), histories.len());
            histories.push(ArtifactHistory {
                id: ArtifactId::new(false, &origin),
                origin,
                kind: kind.into(),
                versions: vec![Version {
                    ordinal: ord,
                    path: path.clone(),
                    from: None,
                    kind: kind.into(),
                    change: Change::Added,
                    metrics: m,
                }],
                alive: vec![(ord, None)],
            });
        }
    }

    let folders = derive_folders(&histories);
    histories.extend(folders);
    Ok(Evolution::new(deltas.len() as u32, histories, moves))
}

/// Every proper ancestor folder of a repository path, outermost first.
pub fn ancestors(path: &str) -> impl Iterator<Item = &str> {
    path.match_indices('/').map(move |(i, _)| &path[..i])
}

pub fn parent_of(path: &str) -> &str {
    path.rsplit_once('/').map_or("", |(p, _)| p)
}

fn derive_folders(files: &[ArtifactHistory]) -> Vec<ArtifactHistory> {
    #[derive(Default)]
    struct Acc {
        intervals: Vec<Interval>,
        // (ordinal, +1/-1) for the alive-file count
        events: Vec<(u32, i32)>,
        touches: BTreeSet<u32>,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for h in files {
        for e in h.episodes() {
            for f in ancestors(&e.path) {
                let a = acc.entry(f.to_string()).or_default();
                a.intervals.push((e.from, e.to));
                a.events.push((e.from, 1));
                if let Some(t) = e.to {
                    a.events.push((t, -1));
                }
            }
        }
        for v in &h.versions {
            for p in std::iter::once(&v.path).chain(v.from.as_ref()) {
                for f in ancestors(p) {
                    acc.entry(f.to_string()).or_default().touches.insert(v.ordinal);
                }
            }
        }
    }

    let mut out = Vec::new();
    for (path, mut a) in acc {
        a.events.sort();
        let count_at = |o: u32| -> u32 {
            let n: i32 = a.events.iter().take_while(|e| e.0 <= o).map(|e| e.1).sum();
            n.max(0) as u32
        };
        for run in merge_intervals(a.intervals) {
            let origin = Origin { ordinal: run.0, path: path.clone() };
            let mut versions = Vec::new();
            let folder_version = |ordinal: u32, change: Change, files: u32| Version {
                ordinal,
                path: path.clone(),
                from: None,
                kind: ArtifactKind::Folder,
                change,
                metrics: MetricRecord::Folder { files },
            };
            versions.push(folder_version(run.0, Change::Added, count_at(run.0)));
            let inner_end = run.1.unwrap_or(u32::MAX);
            for &t in a.touches.range(run.0 + 1..inner_end) {
                versions.push(folder_version(t, Change::Modified, count_at(t)));
            }
            if let Some(end) = run.1 {
                versions.push(folder_version(end, Change::Deleted, count_at(end - 1)));
            }
            out.push(ArtifactHistory {
                id: ArtifactId::new(true, &origin),
                origin,
                kind: ArtifactKind::Folder,
                versions,
                alive: vec![run],
            });
        }
    }
    out
}

fn merge_intervals(mut ivs: Vec<Interval>) -> Vec<Interval> {
    ivs.sort_by_key(|iv| (iv.0, iv.1.map_or(u64::MAX, u64::from)));
    let mut out: Vec<Interval> = Vec::new();
    for iv in ivs {
        if let Some(last) = out.last_mut() {
            let reaches = last.1.is_none_or(|t| iv.0 <= t);
            if reaches {
                last.1 = match (last.1, iv.1) {
                    (None, _) | (_, None) => None,
                    (Some(a), Some(b)) => Some(a.max(b)),
                };
                continue;
            }
        }
        out.push(iv);
    }
    out
}
