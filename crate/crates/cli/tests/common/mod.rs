#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/city")
}

/// The scripted city repository, built once per test binary.
pub fn city_repo() -> &'static Path {
    static REPO: OnceLock<PathBuf> = OnceLock::new();
    REPO.get_or_init(|| {
        let dir = tempfile::Builder::new().prefix("city-fixture").tempdir().unwrap().keep();
        let repo = dir.join("city");
        let status = Command::new("bash").arg(fixture_dir().join("build.sh")).arg(&repo).status().unwrap();
        assert!(status.success(), "fixture build failed");
        repo
    })
}

pub fn oracle() -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("oracle.json")).unwrap()).unwrap()
}

pub fn golden_scene(ordinal: u32) -> Vec<u8> {
    std::fs::read(fixture_dir().join(format!("scene-{ordinal:06}.json"))).unwrap()
}

/// Empty repository with no commits.
pub fn empty_repo() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new("git")
        .current_dir(dir.path())
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .args(["init", "--quiet", "--initial-branch=main", "."])
        .output()
        .unwrap();
    assert!(out.status.success());
    dir
}
