//! Git repository access: open or clone, walk the first-parent mainline,
//! compute per-commit file deltas with rename detection, and read blobs.
//!
//! Everything goes through the `git` executable. Commands run with system and
//! global configuration disabled so user settings cannot change the output.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("not a git repository: {0}")]
    NotARepository(String),
    #[error("cannot reach repository {url}: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("branch not found: {0}")]
    BranchNotFound(String),
    #[error("repository has no commits")]
    EmptyRepository,
    #[error("path {path} does not exist in commit {commit}")]
    PathAbsent { path: String, commit: String },
    #[error("git {args} failed: {stderr}")]
    Git { args: String, stderr: String },
    #[error("malformed git output: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FileKind {
    SourceClassContainer,
    DataFile,
    BinaryFile,
    OtherText,
}

/// Extension lists used by [`Classifier`]. Extensions are matched case-insensitively, without the dot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindConfig {
    pub source: Vec<String>,
    pub data: Vec<String>,
    pub binary: Vec<String>,
    /// Bytes inspected for a NUL when sniffing binaries.
    pub sniff_len: usize,
}

impl Default for KindConfig {
    fn default() -> Self {
        let list = |s: &str| s.split_whitespace().map(String::from).collect();
        KindConfig {
            source: list("java"),
            data: list("json xml"),
            binary: list(
                "png jpg jpeg gif bmp ico webp svgz tif tiff psd jar war aar apk dex class so dll dylib exe \
                 a o lib bin zip gz tgz bz2 xz 7z rar tar ttf otf woff woff2 eot pdf mp3 mp4 ogg wav \
                 keystore jks p12 db sqlite",
            ),
            sniff_len: 8000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Classifier {
    config: KindConfig,
}

impl Classifier {
    pub fn new(config: KindConfig) -> Self {
        let lower = |v: Vec<String>| v.into_iter().map(|e| e.trim_start_matches('.').to_ascii_lowercase()).collect();
        Classifier {
            config: KindConfig {
                source: lower(config.source),
                data: lower(config.data),
                binary: lower(config.binary),
                sniff_len: config.sniff_len,
            },
        }
    }

    pub fn classify(&self, path: &str, content: &[u8]) -> FileKind {
        let ext = extension(path);
        let has = |list: &[String]| ext.as_deref().is_some_and(|e| list.iter().any(|x| x == e));
        if has(&self.config.source) {
            FileKind::SourceClassContainer
        } else if has(&self.config.data) {
            FileKind::DataFile
        } else if has(&self.config.binary) || content[..content.len().min(self.config.sniff_len)].contains(&0) {
            FileKind::BinaryFile
        } else {
            FileKind::OtherText
        }
    }
}

fn extension(path: &str) -> Option<String> {
    let name = path.rsplit('/').next().unwrap_or(path);
    let (stem, ext) = name.rsplit_once('.')?;
    if stem.is_empty() {
        return None;
    }
    Some(ext.to_ascii_lowercase())
}

/// Classifies with the default extension lists.
pub fn classify_file(path: &str, content: &[u8]) -> FileKind {
    Classifier::default().classify(path, content)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub id: String,
    /// First parent; `None` for the root commit.
    pub parent: Option<String>,
    pub author: String,
    /// Author time, UTC seconds.
    pub timestamp: i64,
    pub message: String,
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rename {
    pub from: String,
    pub to: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDelta {
    pub commit: String,
    pub added: Vec<String>,
    pub modified: Vec<String>,
    pub deleted: Vec<String>,
    pub renamed: Vec<Rename>,
    /// Blob id of every added, modified or rename-target path.
    pub blobs: BTreeMap<String, String>,
}

impl SnapshotDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.modified.is_empty() && self.deleted.is_empty() && self.renamed.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaOptions {
    /// Minimum content similarity in `[0, 1]` for a delete/add pair to count as a rename.
    pub rename_threshold: f64,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        DeltaOptions { rename_threshold: 0.5 }
    }
}

/// An opened repository at a resolved head.
///
/// Enumeration and deltas are meant to be driven from one thread; blob reads
/// go through a shared `git cat-file --batch` process guarded by a mutex and
/// may be issued concurrently.
pub struct Repository {
    git_dir: PathBuf,
    source: String,
    branch: Option<String>,
    head: Option<String>,
    batch: Mutex<Option<CatFile>>,
}

impl std::fmt::Debug for Repository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Repository")
            .field("git_dir", &self.git_dir)
            .field("branch", &self.branch)
            .field("head", &self.head)
            .finish()
    }
}

/// True when `s` names a remote (URL or scp-like `user@host:path`) rather than a local path.
pub fn is_remote(s: &str) -> bool {
    if let Some((scheme, rest)) = s.split_once("://") {
        return matches!(scheme, "http" | "https" | "git" | "ssh") && !rest.is_empty();
    }
    match s.split_once(':') {
        Some((host, path)) => host.contains('@') && !host.contains('/') && !path.is_empty(),
        None => false,
    }
}

/// Stable cache key for a repository location.
pub fn location_hash(s: &str) -> String {
    hex::encode(&Sha256::digest(s.as_bytes())[..8])
}

/// Opens a local repository, or clones/fetches a remote one into `cache_dir`.
pub fn open_repository(url_or_path: &str, branch: Option<&str>, cache_dir: &Path) -> Result<Repository> {
    let (git_dir, source) = if is_remote(url_or_path) {
        (clone_or_fetch(url_or_path, cache_dir)?, url_or_path.to_string())
    } else {
        let local = url_or_path.strip_prefix("file://").unwrap_or(url_or_path);
        let dir = local_git_dir(Path::new(local))?;
        let source = std::fs::canonicalize(local)?.to_string_lossy().into_owned();
        (dir, source)
    };

    let (branch, head) = match branch {
        Some(b) => {
            let head = rev_parse(&git_dir, &format!("refs/heads/{b}^{{commit}}"))
                .or_else(|| rev_parse(&git_dir, &format!("{b}^{{commit}}")))
                .ok_or_else(|| IngestError::BranchNotFound(b.to_string()))?;
            (Some(b.to_string()), Some(head))
        }
        None => {
            let name = git(&git_dir, &["symbolic-ref", "--quiet", "--short", "HEAD"])
                .ok()
                .map(|o| String::from_utf8_lossy(&o).trim().to_string())
                .filter(|s| !s.is_empty());
            (name, rev_parse(&git_dir, "HEAD^{commit}"))
        }
    };
    Ok(Repository { git_dir, source, branch, head, batch: Mutex::new(None) })
}

fn local_git_dir(path: &Path) -> Result<PathBuf> {
    let not_repo = || IngestError::NotARepository(path.display().to_string());
    let canonical = std::fs::canonicalize(path).map_err(|_| not_repo())?;
    if !canonical.is_dir() {
        return Err(not_repo());
    }
    let out = git(&canonical, &["rev-parse", "--absolute-git-dir", "--is-bare-repository", "--show-toplevel"])
        .map_err(|_| not_repo())?;
    let text = String::from_utf8_lossy(&out);
    let mut lines = text.lines();
    let git_dir = PathBuf::from(lines.next().ok_or_else(not_repo)?);
    let bare = lines.next() == Some("true");
    // a directory nested inside some other work tree is not itself a repository
    let top = if bare { git_dir.clone() } else { PathBuf::from(lines.next().ok_or_else(not_repo)?) };
    let top = std::fs::canonicalize(&top).unwrap_or(top);
    if top != canonical {
        return Err(not_repo());
    }
    Ok(git_dir)
}

fn clone_or_fetch(url: &str, cache_dir: &Path) -> Result<PathBuf> {
    let target = cache_dir.join(location_hash(url));
    if target.join("HEAD").exists() {
        let fetched = git(&target, &["fetch", "--quiet", "--prune", "origin", "+refs/heads/*:refs/heads/*"]);
        if let Err(e) = fetched {
            log::warn!("fetch of {url} failed, using cached clone: {e}");
        }
        return Ok(target);
    }
    std::fs::create_dir_all(cache_dir)?;
    let partial = cache_dir.join(format!("{}.partial", location_hash(url)));
    if partial.exists() {
        std::fs::remove_dir_all(&partial)?;
    }
    let out = git_command(cache_dir)
        .args(["clone", "--bare", "--quiet", "--", url])
        .arg(&partial)
        .stdin(Stdio::null())
        .output()?;
    if !out.status.success() {
        let _ = std::fs::remove_dir_all(&partial);
        return Err(IngestError::Unreachable {
            url: url.to_string(),
            reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    std::fs::rename(&partial, &target)?;
    Ok(target)
}

fn git_command(dir: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.current_dir(dir)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_TERMINAL_PROMPT", "0")
        .env("LC_ALL", "C")
        .args(["-c", "core.quotepath=off", "-c", "log.showSignature=false"]);
    cmd
}

fn git(dir: &Path, args: &[&str]) -> Result<Vec<u8>> {
    let out = git_command(dir).args(args).stdin(Stdio::null()).output()?;
    if !out.status.success() {
        return Err(IngestError::Git {
            args: args.join(" "),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(out.stdout)
}

fn rev_parse(dir: &Path, rev: &str) -> Option<String> {
    let out = git(dir, &["rev-parse", "--verify", "--quiet", rev]).ok()?;
    let s = String::from_utf8_lossy(&out).trim().to_string();
    (!s.is_empty()).then_some(s)
}

fn lossy(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

impl Repository {
    pub fn git_dir(&self) -> &Path {
        &self.git_dir
    }

    /// Canonical location: the URL for remotes, the canonical path for local repositories.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn branch(&self) -> Option<&str> {
        self.branch.as_deref()
    }

    pub fn head(&self) -> Option<&str> {
        self.head.as_deref()
    }

    /// First-parent walk of the selected head, oldest first.
    pub fn enumerate_commits(&self) -> Result<Vec<CommitMeta>> {
        let head = self.head.as_deref().ok_or(IngestError::EmptyRepository)?;
        let out = git(
            &self.git_dir,
            &["log", "--first-parent", "--reverse", "-z", "--no-color", "--format=%H%x1f%P%x1f%an%x1f%at%x1f%B", head],
        )?;
        let mut commits = Vec::new();
        for record in out.split(|&b| b == 0).filter(|r| !r.is_empty()) {
            let fields: Vec<&[u8]> = record.splitn(5, |&b| b == 0x1f).collect();
            let [id, parents, author, time, message] = fields[..] else {
                return Err(IngestError::Parse(lossy(record)));
            };
            let parents = lossy(parents);
            commits.push(CommitMeta {
                id: lossy(id),
                parent: parents.split_whitespace().next().map(String::from),
                author: lossy(author),
                timestamp: lossy(time).trim().parse().map_err(|_| IngestError::Parse(lossy(time)))?,
                message: lossy(message).trim_end().to_string(),
                ordinal: commits.len() as u32,
            });
        }
        if commits.is_empty() {
            return Err(IngestError::EmptyRepository);
        }
        Ok(commits)
    }

    pub fn snapshot_delta(&self, commit: &CommitMeta) -> Result<SnapshotDelta> {
        self.snapshot_delta_with(commit, DeltaOptions::default())
    }

    /// Diff against the first parent (the empty tree for the root commit).
    pub fn snapshot_delta_with(&self, commit: &CommitMeta, opts: DeltaOptions) -> Result<SnapshotDelta> {
        let pct = (opts.rename_threshold.clamp(0.0, 1.0) * 100.0).round() as u32;
        let rename_flag = format!("-M{pct}%");
        let mut args = vec!["diff-tree", "-r", "-z", "--raw", "--no-commit-id", "-l0", rename_flag.as_str()];
        match commit.parent.as_deref() {
            Some(p) => {
                args.push(p);
                args.push(&commit.id);
            }
            None => {
                args.push("--root");
                args.push(&commit.id);
            }
        }
        let out = git(&self.git_dir, &args)?;
        let mut delta = parse_raw_diff(&out)?;
        delta.commit = commit.id.clone();
        Ok(delta)
    }

    /// Every file path (not submodule) in the commit's tree, sorted.
    pub fn list_files(&self, commit: &CommitMeta) -> Result<Vec<String>> {
        let out = git(&self.git_dir, &["ls-tree", "-r", "-z", "--full-tree", &commit.id])?;
        let mut files = Vec::new();
        for entry in out.split(|&b| b == 0).filter(|e| !e.is_empty()) {
            let tab = entry.iter().position(|&b| b == b'\t').ok_or_else(|| IngestError::Parse(lossy(entry)))?;
            let mut meta = entry[..tab].split(|&b| b == b' ');
            let _mode = meta.next();
            if meta.next() == Some(b"blob") {
                files.push(lossy(&entry[tab + 1..]));
            }
        }
        files.sort();
        Ok(files)
    }

    /// Exact bytes of `path` at `commit`.
    pub fn read_blob(&self, commit: &CommitMeta, path: &str) -> Result<Vec<u8>> {
        self.read_object(&format!("{}:{}", commit.id, path))?.ok_or_else(|| IngestError::PathAbsent {
            path: path.to_string(),
            commit: commit.id.clone(),
        })
    }

    /// Bytes of a blob by object name; `None` when it does not exist or is not a blob.
    pub fn read_object(&self, name: &str) -> Result<Option<Vec<u8>>> {
        let mut guard = self.batch.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(CatFile::spawn(&self.git_dir)?);
        }
        let result = guard.as_mut().unwrap().read(name);
        if result.is_err() {
            // the process is in an unknown state; restart it on next use
            *guard = None;
        }
        result
    }
}

fn parse_raw_diff(out: &[u8]) -> Result<SnapshotDelta> {
    let mut delta = SnapshotDelta::default();
    let mut fields = out.split(|&b| b == 0);
    while let Some(header) = fields.next() {
        if header.is_empty() {
            continue;
        }
        let header = lossy(header);
        let bad = || IngestError::Parse(header.clone());
        let parts: Vec<&str> = header.trim_start_matches(':').split(' ').collect();
        let [old_mode, new_mode, _old_oid, new_oid, status] = parts[..] else {
            return Err(bad());
        };
        let path = lossy(fields.next().ok_or_else(bad)?);
        let old_link = old_mode == "160000";
        let new_link = new_mode == "160000";
        match status.chars().next() {
            Some('R') => {
                let to = lossy(fields.next().ok_or_else(bad)?);
                let score: u32 = status[1..].parse().map_err(|_| bad())?;
                delta.blobs.insert(to.clone(), new_oid.to_string());
                delta.renamed.push(Rename { from: path, to, similarity: score as f64 / 100.0 });
            }
            Some('A') if !new_link => {
                delta.blobs.insert(path.clone(), new_oid.to_string());
                delta.added.push(path);
            }
            Some('D') if !old_link => delta.deleted.push(path),
            Some('M' | 'T') => match (old_link, new_link) {
                (false, false) => {
                    delta.blobs.insert(path.clone(), new_oid.to_string());
                    delta.modified.push(path);
                }
                (false, true) => delta.deleted.push(path),
                (true, false) => {
                    delta.blobs.insert(path.clone(), new_oid.to_string());
                    delta.added.push(path);
                }
                (true, true) => {}
            },
            Some('A' | 'D') => {}
            _ => return Err(bad()),
        }
    }
    delta.added.sort();
    delta.modified.sort();
    delta.deleted.sort();
    delta.renamed.sort_by(|a, b| a.to.cmp(&b.to).then_with(|| a.from.cmp(&b.from)));
    Ok(delta)
}

struct CatFile {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl CatFile {
    fn spawn(git_dir: &Path) -> Result<Self> {
        let mut child = git_command(git_dir)
            .args(["cat-file", "--batch"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(CatFile { child, stdin, stdout })
    }

    fn read(&mut self, name: &str) -> Result<Option<Vec<u8>>> {
        if name.contains('\n') {
            return Ok(None);
        }
        writeln!(self.stdin, "{name}")?;
        self.stdin.flush()?;
        let mut header = String::new();
        self.stdout.read_line(&mut header)?;
        let header = header.trim_end();
        if header.ends_with(" missing") || header.ends_with(" ambiguous") {
            return Ok(None);
        }
        let mut parts = header.rsplitn(3, ' ');
        let size: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| IngestError::Parse(header.to_string()))?;
        let kind = parts.next().unwrap_or_default().to_string();
        let mut content = vec![0; size];
        self.stdout.read_exact(&mut content)?;
        let mut newline = [0u8; 1];
        self.stdout.read_exact(&mut newline)?;
        Ok((kind == "blob").then_some(content))
    }
}

impl Drop for CatFile {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_rules() {
        assert_eq!(classify_file("src/Account.java", b"class A {}"), FileKind::SourceClassContainer);
        assert_eq!(classify_file("res/values/strings.xml", b"<resources/>"), FileKind::DataFile);
        assert_eq!(classify_file("a/config.JSON", b"{}"), FileKind::DataFile);
        assert_eq!(classify_file("logo.png", b"\x89PNG\r\n\x1a\n\0\0"), FileKind::BinaryFile);
        assert_eq!(classify_file("lib/x.jar", b"PK"), FileKind::BinaryFile);
        assert_eq!(classify_file("blob.dat", b"ab\0cd"), FileKind::BinaryFile);
        assert_eq!(classify_file("README.md", b"# hi"), FileKind::OtherText);
        assert_eq!(classify_file(".gitignore", b"target/"), FileKind::OtherText);
        assert_eq!(classify_file("Makefile", b""), FileKind::OtherText);
    }

    #[test]
    fn sniff_only_looks_at_prefix() {
        let mut content = vec![b'a'; 9000];
        content[8500] = 0;
        assert_eq!(classify_file("late.txt", &content), FileKind::OtherText);
        content[7999] = 0;
        assert_eq!(classify_file("late.txt", &content), FileKind::BinaryFile);
    }

    #[test]
    fn custom_extension_lists() {
        let c = Classifier::new(KindConfig { source: vec![".kt".into(), "java".into()], ..Default::default() });
        assert_eq!(c.classify("Main.KT", b""), FileKind::SourceClassContainer);
        let cfg: KindConfig = serde_json::from_str(r#"{"data": ["yaml"]}"#).unwrap();
        let c = Classifier::new(cfg);
        assert_eq!(c.classify("a.yaml", b""), FileKind::DataFile);
        assert_eq!(c.classify("a.json", b"{}"), FileKind::OtherText);
        assert_eq!(c.classify("A.java", b""), FileKind::SourceClassContainer);
    }

    #[test]
    fn remote_detection() {
        assert!(is_remote("https://github.com/codinguser/gnucash-android"));
        assert!(is_remote("git@github.com:codinguser/gnucash-android.git"));
        assert!(!is_remote("/tmp/repo"));
        assert!(!is_remote("./repo"));
        assert!(!is_remote("file:///tmp/repo"));
        assert!(!is_remote("C:/x"));
    }

    #[test]
    fn raw_diff_parsing() {
        let raw = b":000000 100644 0000000 1111111 A\0new.txt\0\
:100644 100644 2222222 3333333 M\0mod.java\0\
:100644 000000 4444444 0000000 D\0gone.xml\0\
:100644 100644 5555555 5555555 R100\0src/X.java\0app/X.java\0\
:000000 160000 0000000 6666666 A\0sub\0";
        let d = parse_raw_diff(raw).unwrap();
        assert_eq!(d.added, ["new.txt"]);
        assert_eq!(d.modified, ["mod.java"]);
        assert_eq!(d.deleted, ["gone.xml"]);
        assert_eq!(d.renamed, [Rename { from: "src/X.java".into(), to: "app/X.java".into(), similarity: 1.0 }]);
        assert_eq!(d.blobs.len(), 3);
        assert_eq!(d.blobs["app/X.java"], "5555555");
    }
}
