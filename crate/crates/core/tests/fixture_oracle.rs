mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use evocity_core::evomodel::{self, ArtifactHistory, Change};
use evocity_core::ingest::{self, FileKind};
use evocity_core::metrics::MetricRecord;
use evocity_core::pipeline::{self, AnalyzeOptions, Analysis};
use serde_json::Value;

fn analysis() -> Analysis {
    let cache = tempfile::tempdir().unwrap();
    pipeline::analyze(common::city_repo().to_str().unwrap(), &AnalyzeOptions::new(cache.path())).unwrap()
}

fn u32s(v: &Value) -> Vec<u32> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u32).collect()
}

fn intervals(v: &Value) -> Vec<(u32, Option<u32>)> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|iv| (iv[0].as_u64().unwrap() as u32, iv[1].as_u64().map(|x| x as u32)))
        .collect()
}

fn expected_metrics(v: &Value) -> MetricRecord {
    if let Some(s) = v.get("source") {
        let s = u32s(s);
        let m = |x: &[u32]| evocity_core::srcmetrics::ClassMetrics {
            num_instance_variables: x[0],
            num_for_loops: x[1],
            num_methods: x[2],
            lines_of_code: x[3],
        };
        let classes = v["classes"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(name, c)| (name.clone(), m(&u32s(c))))
            .collect::<BTreeMap<_, _>>();
        let mut fsm = evocity_core::srcmetrics::FileSourceMetrics { aggregate: m(&s), ..Default::default() };
        for (name, metrics) in classes {
            fsm.classes.push(evocity_core::srcmetrics::NamedClass { name, metrics });
        }
        MetricRecord::Source(fsm)
    } else if let Some(d) = v.get("data") {
        let d = u32s(d);
        MetricRecord::Data(evocity_core::datametrics::DataFileMetrics {
            num_entities: d[0],
            num_entity_types: d[1],
            max_properties_per_entity: d[2],
            max_nesting_level: d[3],
            degraded: false,
        })
    } else if let Some(b) = v.get("binary") {
        MetricRecord::Binary { size_bytes: b.as_u64().unwrap() }
    } else {
        let t = &v["text"];
        MetricRecord::Text { size_bytes: t["size_bytes"].as_u64().unwrap(), lines: t["lines"].as_u64().unwrap() as u32 }
    }
}

fn sorted_classes(m: &MetricRecord) -> MetricRecord {
    match m {
        MetricRecord::Source(s) => {
            let mut s = s.clone();
            s.classes.sort_by(|a, b| a.name.cmp(&b.name));
            MetricRecord::Source(s)
        }
        other => other.clone(),
    }
}

#[test]
fn metric_records_match_hand_counts() {
    let started = Instant::now();
    let a = analysis();
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "analysis took {elapsed:?}");

    let oracle = common::oracle();
    let expected = oracle["versions"].as_array().unwrap();
    let mut seen = 0;
    for h in a.evolution.files() {
        for v in &h.versions {
            let e = expected
                .iter()
                .find(|e| e["ordinal"] == v.ordinal && e["path"] == v.path.as_str())
                .unwrap_or_else(|| panic!("unexpected version {}@{}", v.path, v.ordinal));
            assert_eq!(format!("{:?}", v.change), e["change"].as_str().unwrap(), "{}@{}", v.path, v.ordinal);
            assert_eq!(v.from.as_deref(), e.get("from").and_then(Value::as_str));
            assert_eq!(sorted_classes(&v.metrics), expected_metrics(e), "{}@{}", v.path, v.ordinal);
            seen += 1;
        }
    }
    assert_eq!(seen, expected.len());
}

#[test]
fn kinds_of_fixture_files() {
    let a = analysis();
    let kind_of = |path: &str| a.evolution.files().find(|h| h.origin.path == path).unwrap().kind;
    use evocity_core::evomodel::ArtifactKind::*;
    assert_eq!(kind_of("core/src/Account.java"), SourceClassContainer);
    assert_eq!(kind_of("core/res/values/strings.xml"), DataFile);
    assert_eq!(kind_of("core/res/logo.png"), BinaryFile);
    assert_eq!(kind_of("README.md"), OtherText);
    let _ = FileKind::OtherText;
}

fn history<'a>(a: &'a Analysis, origin: &Value) -> &'a ArtifactHistory {
    let ord = origin[0].as_u64().unwrap() as u32;
    let path = origin[1].as_str().unwrap();
    a.evolution.files().find(|h| h.origin.ordinal == ord && h.origin.path == path).unwrap()
}

#[test]
fn histories_lifetimes_and_touches() {
    let a = analysis();
    let oracle = common::oracle();
    for e in oracle["histories"].as_array().unwrap() {
        let h = history(&a, &e["origin"]);
        assert_eq!(h.alive, intervals(&e["alive"]), "{:?}", h.origin);
        assert_eq!(h.entity_commits().into_iter().collect::<Vec<_>>(), u32s(&e["touched"]), "{:?}", h.origin);
    }
    for e in oracle["folders"].as_array().unwrap() {
        let path = e["path"].as_str().unwrap();
        let f: Vec<_> = a.evolution.folders().filter(|f| f.origin.path == path).collect();
        assert_eq!(f.len(), 1, "{path}");
        assert_eq!(f[0].alive, intervals(&e["alive"]), "{path}");
        assert_eq!(f[0].entity_commits().into_iter().collect::<Vec<_>>(), u32s(&e["touched"]), "{path}");
    }
    // the re-added README is a different artifact
    let readmes: Vec<_> = a.evolution.files().filter(|h| h.origin.path == "README.md").collect();
    assert_eq!(readmes.len(), 2);
    assert_ne!(readmes[0].id, readmes[1].id);
    assert!(readmes[1].alive_at(9) && !readmes[1].alive_at(8) && !readmes[0].alive_at(6));
}

#[test]
fn alive_files_partition_each_snapshot() {
    let a = analysis();
    let cache = tempfile::tempdir().unwrap();
    let repo = ingest::open_repository(common::city_repo().to_str().unwrap(), None, cache.path()).unwrap();
    for c in &a.commits {
        let alive: Vec<String> = a.evolution.files_at(c.ordinal).keys().map(|s| s.to_string()).collect();
        assert_eq!(alive, repo.list_files(c).unwrap(), "ordinal {}", c.ordinal);
    }
}

#[test]
fn moves_match_renames() {
    let a = analysis();
    for (ord, d) in a.deltas.iter().enumerate() {
        assert_eq!(a.evolution.moves_at(ord as u32).count(), d.renamed.len());
    }
    let oracle = common::oracle();
    assert_eq!(a.evolution.moves_at(7).count() as u64, oracle["moves_per_commit"]["7"].as_u64().unwrap());
    for m in a.evolution.moves_at(7) {
        let h = a.evolution.get(&m.artifact).unwrap();
        assert!(h.alive_at(7));
        assert_ne!(m.from, m.to);
        assert_eq!(h.episodes().len(), 2);
    }
}

#[test]
fn appending_commits_never_rewrites_versions() {
    let a = analysis();
    let provider = |ord: u32, path: &str| {
        a.evolution.files().flat_map(|h| &h.versions).find(|v| v.ordinal == ord && v.path == path && v.change != Change::Deleted).map(|v| {
            let kind = match v.kind {
                evocity_core::evomodel::ArtifactKind::SourceClassContainer => FileKind::SourceClassContainer,
                evocity_core::evomodel::ArtifactKind::DataFile => FileKind::DataFile,
                evocity_core::evomodel::ArtifactKind::BinaryFile => FileKind::BinaryFile,
                _ => FileKind::OtherText,
            };
            (kind, v.metrics.clone())
        })
    };
    for k in 1..a.deltas.len() {
        let prefix = evomodel::link_versions(&a.deltas[..k], provider).unwrap();
        for h in &prefix.histories {
            let full = a.evolution.get(&h.id).expect("prefix history exists in the full run");
            let upto: Vec<_> = full.versions.iter().filter(|v| v.ordinal < k as u32).cloned().collect();
            assert_eq!(h.versions, upto, "{:?} at k={k}", h.origin);
        }
    }
}

fn columns(t: &evocity_core::sqlinfer::TableSchema) -> Vec<String> {
    t.columns.iter().map(|c| format!("{} {}", c.name, c.declared_type)).collect()
}

#[test]
fn schema_timeline_matches_oracle() {
    let a = analysis();
    let oracle = common::oracle();
    let timeline = oracle["schema_timeline"].as_array().unwrap();
    for ord in 0..a.num_commits() {
        let expected = timeline.iter().rev().find(|e| e["ordinal"].as_u64().unwrap() as u32 <= ord).unwrap();
        let expected: BTreeMap<String, Vec<String>> = serde_json::from_value(expected["tables"].clone()).unwrap();
        let actual: BTreeMap<String, Vec<String>> = a
            .schema_at(ord)
            .tables
            .values()
            .filter(|t| t.alive_at(ord))
            .map(|t| (t.name.clone(), columns(t)))
            .collect();
        assert_eq!(actual, expected, "ordinal {ord}");
    }
    let lifetimes: BTreeMap<String, Vec<(u32, Option<u32>)>> =
        a.final_schema().tables.values().map(|t| (t.name.clone(), t.lifetimes.clone())).collect();
    let expected: BTreeMap<String, Vec<(u32, Option<u32>)>> = oracle["table_lifetimes"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), intervals(v)))
        .collect();
    assert_eq!(lifetimes, expected);
    assert!(a.final_schema().tables.values().all(|t| !t.inferred_by_use));
}

#[test]
fn access_counts_match_oracle() {
    let a = analysis();
    let oracle = common::oracle();
    for ord in 0..a.num_commits() {
        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        for acc in &a.accesses[ord as usize] {
            *totals.entry(acc.table.clone()).or_default() += 1;
            // every access comes from an artifact alive at that commit
            let h = a.evolution.get_str(&acc.artifact).unwrap();
            assert!(h.alive_at(ord));
            assert_eq!(h.path_at(ord), Some(acc.path.as_str()));
        }
        let expected: BTreeMap<String, u64> = serde_json::from_value(oracle["access_totals"][ord.to_string()].clone()).unwrap();
        assert_eq!(totals, expected, "ordinal {ord}");
    }
    let dropped: BTreeSet<_> = a.accesses[8].iter().map(|x| x.table.as_str()).collect();
    assert!(!dropped.contains("tmp_cache"));
}
