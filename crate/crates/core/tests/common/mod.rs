#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/city")
}

/// The scripted city repository, built once per test binary.
pub fn city_repo() -> &'static Path {
    static REPO: OnceLock<PathBuf> = OnceLock::new();
    REPO.get_or_init(|| {
        let dir = tempfile::Builder::new().prefix("city-fixture").tempdir().unwrap().keep();
        let repo = dir.join("city");
        build_city(&repo);
        repo
    })
}

pub fn build_city(target: &Path) {
    let status = Command::new("bash").arg(fixture_dir().join("build.sh")).arg(target).status().unwrap();
    assert!(status.success(), "fixture build failed");
}

pub fn oracle() -> serde_json::Value {
    let text = std::fs::read_to_string(fixture_dir().join("oracle.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Runs git with a pinned identity and date inside `dir`.
pub fn git(dir: &Path, args: &[&str]) {
    let out = Command::new("git")
        .current_dir(dir)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_AUTHOR_NAME", "T")
        .env("GIT_AUTHOR_EMAIL", "t@example.org")
        .env("GIT_COMMITTER_NAME", "T")
        .env("GIT_COMMITTER_EMAIL", "t@example.org")
        .env("GIT_AUTHOR_DATE", "2021-02-01T00:00:00Z")
        .env("GIT_COMMITTER_DATE", "2021-02-01T00:00:00Z")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

pub fn write(dir: &Path, rel: &str, content: &str) {
    let p = dir.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, content).unwrap();
}

pub fn commit_all(dir: &Path, msg: &str) {
    git(dir, &["add", "--all"]);
    git(dir, &["commit", "--quiet", "--no-gpg-sign", "-m", msg]);
}

pub fn init_repo(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    git(dir, &["init", "--quiet", "--initial-branch=main", "."]);
}
