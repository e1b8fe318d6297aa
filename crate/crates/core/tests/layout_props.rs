mod common;

use std::collections::HashMap;

use evocity_core::evomodel::{link_versions, ArtifactId};
use evocity_core::ingest::{FileKind, Rename, SnapshotDelta};
use evocity_core::layout::{self, check_layout, scene_positions, CityLayout, Rect, SizingRule};
use evocity_core::metrics::MetricRecord;
use evocity_core::pipeline::{self, AnalyzeOptions, Analysis};
use evocity_core::sqlinfer::SchemaState;
use proptest::prelude::*;

fn analysis(limit: Option<usize>) -> Analysis {
    let cache = tempfile::tempdir().unwrap();
    let mut opts = AnalyzeOptions::new(cache.path());
    opts.max_commits = limit;
    pipeline::analyze(common::city_repo().to_str().unwrap(), &opts).unwrap()
}

fn city_layout(a: &Analysis) -> CityLayout {
    layout::layout_evolution(&a.evolution, a.final_schema(), &SizingRule::default())
}

/// Every (artifact, episode) keeps a single rect across all scenes.
fn stable_rects(l: &CityLayout, evo: &evocity_core::evomodel::Evolution) -> Result<(), String> {
    let mut seen: HashMap<(ArtifactId, u32), Rect> = HashMap::new();
    for ord in 0..evo.num_commits {
        let (placements, _) = scene_positions(l, ord, evo);
        for p in placements {
            let key = (p.lot.artifact.clone(), p.lot.episode);
            if let Some(r) = seen.insert(key, p.lot.rect) {
                if r != p.lot.rect {
                    return Err(format!("{} moved at {ord}", p.lot.path));
                }
            }
        }
    }
    Ok(())
}

#[test]
fn fixture_layout_is_well_formed() {
    let a = analysis(None);
    let l = city_layout(&a);
    check_layout(&l).unwrap();
    stable_rects(&l, &a.evolution).unwrap();
    // one lot per folder history and per file episode
    let episodes: usize = a.evolution.files().map(|h| h.episodes().len()).sum();
    assert_eq!(l.lots.len(), episodes + a.evolution.folders().count());
    assert_eq!(l.sky.len(), a.final_schema().tables.len());
}

#[test]
fn fixture_layout_is_deterministic() {
    let a = city_layout(&analysis(None));
    let b = city_layout(&analysis(None));
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn buildings_fit_their_lots() {
    let a = analysis(None);
    let l = city_layout(&a);
    let rule = SizingRule::default();
    for h in a.evolution.files() {
        for e in h.episodes() {
            let lot = l.lot(&h.id, e.index).unwrap();
            for v in &h.versions {
                assert!(rule.base(&v.metrics) <= lot.rect.width);
            }
        }
    }
}

/// Prefix runs are laid out without knowledge of later commits, so lots are
/// expected to differ; this records how far they agree.
#[test]
fn prefix_agreement_is_measured() {
    let full = city_layout(&analysis(None));
    for k in [3, 6, 9] {
        let prefix = city_layout(&analysis(Some(k)));
        let (shared, same) = layout::agreement(&prefix, &full);
        assert!(shared > 0);
        assert!(same <= shared);
        eprintln!("k={k}: {same}/{shared} lots agree");
    }
}

fn random_deltas() -> impl Strategy<Value = Vec<SnapshotDelta>> {
    let op = (0u8..4, 0usize..6, 0usize..3, 0usize..6, 0usize..3);
    prop::collection::vec(prop::collection::vec(op, 1..6), 1..12).prop_map(|commits| {
        let dirs = ["", "a/", "a/b/", "c/"];
        let mut alive: Vec<String> = Vec::new();
        let mut out = Vec::new();
        for ops in commits {
            let mut d = SnapshotDelta::default();
            let mut touched = std::collections::BTreeSet::new();
            for (kind, name, dir, name2, dir2) in ops {
                let path = format!("{}f{name}.png", dirs[dir % 4]);
                let path2 = format!("{}f{name2}.png", dirs[(dir2 + 1) % 4]);
                match kind {
                    0 if !alive.contains(&path) && !touched.contains(&path) => {
                        touched.insert(path.clone());
                        d.added.push(path.clone());
                        alive.push(path);
                    }
                    1 if !alive.is_empty() => {
                        let p = alive.remove(name % alive.len());
                        if touched.insert(p.clone()) {
                            d.deleted.push(p);
                        } else {
                            alive.push(p);
                        }
                    }
                    2 if !alive.is_empty() && !alive.contains(&path2) && !touched.contains(&path2) => {
                        let i = name % alive.len();
                        if touched.contains(&alive[i]) {
                            continue;
                        }
                        let from = alive.remove(i);
                        touched.insert(from.clone());
                        touched.insert(path2.clone());
                        d.renamed.push(Rename { from, to: path2.clone(), similarity: 1.0 });
                        alive.push(path2);
                    }
                    3 if !alive.is_empty() => {
                        let p = alive[name % alive.len()].clone();
                        if touched.insert(p.clone()) {
                            d.modified.push(p);
                        }
                    }
                    _ => {}
                }
            }
            out.push(d);
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_histories_lay_out_cleanly(deltas in random_deltas(), sizes in prop::collection::vec(0u64..5000, 1..8)) {
        let evo = link_versions(&deltas, |ord, path| {
            let size = sizes[(ord as usize + path.len()) % sizes.len()];
            Some((FileKind::BinaryFile, MetricRecord::Binary { size_bytes: size }))
        })
        .unwrap();
        let l = layout::layout_evolution(&evo, &SchemaState::default(), &SizingRule::default());
        prop_assert_eq!(check_layout(&l), Ok(()));
        prop_assert_eq!(stable_rects(&l, &evo), Ok(()));
    }
}
