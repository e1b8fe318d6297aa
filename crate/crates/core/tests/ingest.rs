mod common;

use std::collections::BTreeSet;

use evocity_core::ingest::{classify_file, open_repository, FileKind, IngestError};

fn cache() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn city_commits_in_mainline_order() {
    let cache = cache();
    let repo = open_repository(common::city_repo().to_str().unwrap(), None, cache.path()).unwrap();
    assert_eq!(repo.branch(), Some("main"));
    let oracle = common::oracle();
    assert_eq!(repo.head(), oracle["head"].as_str());
    let commits = repo.enumerate_commits().unwrap();
    assert_eq!(commits.len(), 12);
    for (i, c) in commits.iter().enumerate() {
        assert_eq!(c.ordinal as usize, i);
        assert_eq!(c.author, "Ana Builder");
        assert_eq!(c.timestamp, 1609502400 + 86400 * i as i64);
    }
    assert!(commits[0].parent.is_none());
    assert_eq!(commits[1].parent.as_deref(), Some(commits[0].id.as_str()));
    assert_eq!(commits[11].id, oracle["head"].as_str().unwrap());
}

#[test]
fn root_delta_adds_everything() {
    let cache = cache();
    let repo = open_repository(common::city_repo().to_str().unwrap(), None, cache.path()).unwrap();
    let commits = repo.enumerate_commits().unwrap();
    let d = repo.snapshot_delta(&commits[0]).unwrap();
    assert_eq!(
        d.added,
        ["README.md", "core/res/config.json", "core/res/logo.png", "core/res/values/strings.xml", "core/src/Account.java"]
    );
    assert!(d.modified.is_empty() && d.deleted.is_empty() && d.renamed.is_empty());
}

#[test]
fn folder_rename_is_detected() {
    let cache = cache();
    let repo = open_repository(common::city_repo().to_str().unwrap(), None, cache.path()).unwrap();
    let commits = repo.enumerate_commits().unwrap();
    let d = repo.snapshot_delta(&commits[7]).unwrap();
    assert!(d.added.is_empty() && d.deleted.is_empty() && d.modified.is_empty());
    assert_eq!(d.renamed.len(), 8);
    for r in &d.renamed {
        assert_eq!(r.similarity, 1.0);
        assert_eq!(r.to, r.from.replacen("core/", "app/", 1));
    }
    let d6 = repo.snapshot_delta(&commits[6]).unwrap();
    assert_eq!(d6.deleted, ["README.md", "core/res/values/strings.xml"]);
}

#[test]
fn replayed_deltas_match_tree_listing() {
    let cache = cache();
    let repo = open_repository(common::city_repo().to_str().unwrap(), None, cache.path()).unwrap();
    let mut files = BTreeSet::new();
    for c in repo.enumerate_commits().unwrap() {
        let d = repo.snapshot_delta(&c).unwrap();
        for p in &d.deleted {
            assert!(files.remove(p), "{p} deleted but not present at {}", c.ordinal);
        }
        for r in &d.renamed {
            assert!(files.remove(&r.from));
            assert!(files.insert(r.to.clone()));
        }
        for p in &d.added {
            assert!(files.insert(p.clone()), "{p} added twice");
        }
        for p in &d.modified {
            assert!(files.contains(p));
        }
        let listed: BTreeSet<String> = repo.list_files(&c).unwrap().into_iter().collect();
        assert_eq!(files, listed, "ordinal {}", c.ordinal);
        // every path gets exactly one kind and the blob map covers the touched paths
        for p in d.added.iter().chain(&d.modified) {
            let bytes = repo.read_blob(&c, p).unwrap();
            let _: FileKind = classify_file(p, &bytes);
            assert!(d.blobs.contains_key(p));
        }
    }
}

#[test]
fn blobs_and_missing_paths() {
    let cache = cache();
    let repo = open_repository(common::city_repo().to_str().unwrap(), None, cache.path()).unwrap();
    let commits = repo.enumerate_commits().unwrap();
    let png = repo.read_blob(&commits[0], "core/res/logo.png").unwrap();
    assert_eq!(png.len(), 45);
    assert!(png.contains(&0));
    assert_eq!(classify_file("core/res/logo.png", &png), FileKind::BinaryFile);
    assert_eq!(repo.read_blob(&commits[0], "README.md").unwrap(), b"# City\n");
    match repo.read_blob(&commits[6], "README.md") {
        Err(IngestError::PathAbsent { path, .. }) => assert_eq!(path, "README.md"),
        other => panic!("expected PathAbsent, got {other:?}"),
    }
}

#[test]
fn errors_for_bad_locations() {
    let cache = cache();
    let missing = cache.path().join("nope");
    assert!(matches!(
        open_repository(missing.to_str().unwrap(), None, cache.path()),
        Err(IngestError::NotARepository(_))
    ));
    let plain = tempfile::tempdir().unwrap();
    assert!(matches!(
        open_repository(plain.path().to_str().unwrap(), None, cache.path()),
        Err(IngestError::NotARepository(_))
    ));
    // a subdirectory of a work tree is not a repository of its own
    let sub = common::city_repo().join("app");
    assert!(matches!(open_repository(sub.to_str().unwrap(), None, cache.path()), Err(IngestError::NotARepository(_))));
    assert!(matches!(
        open_repository(common::city_repo().to_str().unwrap(), Some("nope"), cache.path()),
        Err(IngestError::BranchNotFound(_))
    ));
}

#[test]
fn empty_repository() {
    let dir = tempfile::tempdir().unwrap();
    common::init_repo(dir.path());
    let repo = open_repository(dir.path().to_str().unwrap(), None, dir.path()).unwrap();
    assert!(matches!(repo.enumerate_commits(), Err(IngestError::EmptyRepository)));
}

#[test]
fn merge_side_branch_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::init_repo(d);
    common::write(d, "a.txt", "a\n");
    common::commit_all(d, "A");
    common::git(d, &["checkout", "--quiet", "-b", "side"]);
    common::write(d, "side.txt", "s\n");
    common::commit_all(d, "S1");
    common::write(d, "side.txt", "s2\n");
    common::commit_all(d, "S2");
    common::git(d, &["checkout", "--quiet", "main"]);
    common::write(d, "b.txt", "b\n");
    common::commit_all(d, "B");
    common::git(d, &["merge", "--quiet", "--no-ff", "--no-gpg-sign", "-m", "M", "side"]);

    let repo = open_repository(d.to_str().unwrap(), None, d).unwrap();
    let commits = repo.enumerate_commits().unwrap();
    let messages: Vec<&str> = commits.iter().map(|c| c.message.as_str()).collect();
    assert_eq!(messages, ["A", "B", "M"]);
    // the merge brings the side file in relative to the first parent
    let delta = repo.snapshot_delta(&commits[2]).unwrap();
    assert_eq!(delta.added, ["side.txt"]);

    let side = open_repository(d.to_str().unwrap(), Some("side"), d).unwrap();
    assert_eq!(side.enumerate_commits().unwrap().len(), 3);
}

#[test]
fn enumeration_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    common::build_city(&a.path().join("r"));
    common::build_city(&b.path().join("r"));
    let run = |p: &std::path::Path| {
        let repo = open_repository(p.to_str().unwrap(), None, p).unwrap();
        let commits = repo.enumerate_commits().unwrap();
        let deltas: Vec<_> = commits.iter().map(|c| repo.snapshot_delta(c).unwrap()).collect();
        serde_json::to_string(&(commits, deltas)).unwrap()
    };
    assert_eq!(run(&a.path().join("r")), run(&b.path().join("r")));
}
