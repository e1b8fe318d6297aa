//! City layout over the whole history.
//!
//! Every folder history becomes a district and every file episode (the time a
//! file spends at one path) gets its own lot. The tree holds everything that
//! ever existed, so a lot never moves while its artifact lives. Districts are
//! filled with a deterministic shelf packer, children ordered by first
//! appearance and then name. Database tables get slots on a grid in the sky.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::evomodel::{parent_of, ArtifactHistory, ArtifactId, ArtifactKind, Evolution, Interval};
use crate::metrics::MetricRecord;
use crate::sqlinfer::SchemaState;

pub const MARGIN: f64 = 1.0;
pub const SKY_HEIGHT: f64 = 80.0;

/// Rounds to the precision used in stored documents.
pub fn q(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Axis-aligned ground rectangle; `(x, z)` is the minimum corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub z: f64,
    pub width: f64,
    pub depth: f64,
}

impl Rect {
    pub fn center(&self) -> (f64, f64) {
        (q(self.x + self.width / 2.0), q(self.z + self.depth / 2.0))
    }

    /// `self` lies inside `outer` shrunk by `inset` on every side.
    pub fn inside(&self, outer: &Rect, inset: f64) -> bool {
        const EPS: f64 = 1e-6;
        self.x >= outer.x + inset - EPS
            && self.z >= outer.z + inset - EPS
            && self.x + self.width <= outer.x + outer.width - inset + EPS
            && self.z + self.depth <= outer.z + outer.depth - inset + EPS
    }

    /// Interiors intersect.
    pub fn overlaps(&self, o: &Rect) -> bool {
        const EPS: f64 = 1e-6;
        self.x < o.x + o.width - EPS
            && o.x < self.x + self.width - EPS
            && self.z < o.z + o.depth - EPS
            && o.z < self.z + self.depth - EPS
    }
}

/// Metric to dimension mapping for ground glyphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingRule {
    pub min: f64,
    pub max: f64,
}

impl Default for SizingRule {
    fn default() -> Self {
        SizingRule { min: 1.0, max: 40.0 }
    }
}

impl SizingRule {
    /// `1 + sqrt(v)`, clamped.
    pub fn scale(&self, v: f64) -> f64 {
        q((1.0 + v.max(0.0).sqrt()).clamp(self.min, self.max))
    }

    /// Side of the square footprint.
    pub fn base(&self, m: &MetricRecord) -> f64 {
        match m {
            MetricRecord::Source(s) => self.scale(s.aggregate.num_instance_variables as f64),
            MetricRecord::Data(d) => self.scale(d.num_entity_types as f64),
            MetricRecord::Binary { size_bytes } => self.scale((1.0 + *size_bytes as f64).ln()),
            MetricRecord::Text { .. } | MetricRecord::Folder { .. } => self.min,
        }
    }

    pub fn height(&self, m: &MetricRecord) -> f64 {
        match m {
            MetricRecord::Source(s) => self.scale(s.aggregate.num_methods as f64),
            MetricRecord::Data(d) => self.scale(d.max_nesting_level as f64),
            MetricRecord::Binary { .. } => self.base(m),
            MetricRecord::Text { lines, .. } => self.scale(*lines as f64),
            MetricRecord::Folder { .. } => self.min,
        }
    }

    /// Raw value behind the color scalar, before normalization.
    pub fn color_metric(m: &MetricRecord) -> Option<f64> {
        match m {
            MetricRecord::Source(s) => Some(s.aggregate.lines_of_code as f64),
            MetricRecord::Data(d) => Some(d.num_entities as f64),
            MetricRecord::Binary { size_bytes } => Some(*size_bytes as f64),
            MetricRecord::Text { .. } | MetricRecord::Folder { .. } => None,
        }
    }

    /// Footprint of a table slab.
    pub fn table_width(&self, columns: usize) -> f64 {
        self.scale(columns as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lot {
    pub artifact: ArtifactId,
    /// Episode index for files, always 0 for folders.
    pub episode: u32,
    pub path: String,
    pub folder: bool,
    pub rect: Rect,
    /// Number of enclosing districts.
    pub depth: u32,
    pub reserved: Interval,
    /// Enclosing district lot, `None` at top level.
    pub parent: Option<ArtifactId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkySlot {
    pub table: String,
    pub x: f64,
    pub z: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityLayout {
    /// The whole city, centered on the origin.
    pub bounds: Rect,
    pub lots: Vec<Lot>,
    pub sky_height: f64,
    pub sky: Vec<SkySlot>,
    #[serde(skip)]
    index: HashMap<(ArtifactId, u32), usize>,
}

impl CityLayout {
    fn reindex(&mut self) {
        self.index = self.lots.iter().enumerate().map(|(i, l)| ((l.artifact.clone(), l.episode), i)).collect();
    }

    pub fn lot(&self, artifact: &ArtifactId, episode: u32) -> Option<&Lot> {
        if self.index.is_empty() {
            return self.lots.iter().find(|l| &l.artifact == artifact && l.episode == episode);
        }
        self.index.get(&(artifact.clone(), episode)).map(|&i| &self.lots[i])
    }

    pub fn slot(&self, table: &str) -> Option<&SkySlot> {
        self.sky.iter().find(|s| s.table == table)
    }

    /// Restores lookup tables after deserialization.
    pub fn with_index(mut self) -> Self {
        self.reindex();
        self
    }
}

/// Node of the union tree: a folder history or one episode of a file.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub artifact: ArtifactId,
    pub episode: u32,
    pub path: String,
    pub name: String,
    pub folder: bool,
    pub reserved: Interval,
    /// Lot side for files (lifetime maximum of the base).
    pub footprint: f64,
    pub children: Vec<usize>,
}

/// Every artifact that ever existed, nested by containment episode.
#[derive(Debug, Clone, Default)]
pub struct UnionTree {
    pub nodes: Vec<TreeNode>,
    /// Top-level nodes (children of the repository root).
    pub roots: Vec<usize>,
}

fn interval_within(inner: &Interval, outer: &Interval) -> bool {
    inner.0 >= outer.0
        && match (inner.1, outer.1) {
            (_, None) => true,
            (Some(a), Some(b)) => a <= b,
            (None, Some(_)) => false,
        }
}

pub fn build_global_hierarchy(evo: &Evolution, sizing: &SizingRule) -> UnionTree {
    let mut tree = UnionTree::default();
    let mut folders_by_path: HashMap<&str, Vec<(usize, Interval)>> = HashMap::new();
    let name_of = |p: &str| p.rsplit('/').next().unwrap_or(p).to_string();

    for h in evo.folders() {
        let i = tree.nodes.len();
        tree.nodes.push(TreeNode {
            artifact: h.id.clone(),
            episode: 0,
            path: h.origin.path.clone(),
            name: name_of(&h.origin.path),
            folder: true,
            reserved: h.alive[0],
            footprint: 0.0,
            children: Vec::new(),
        });
        folders_by_path.entry(h.origin.path.as_str()).or_default().push((i, h.alive[0]));
    }
    for h in evo.files() {
        let footprint = lifetime_base(h, sizing);
        for e in h.episodes() {
            tree.nodes.push(TreeNode {
                artifact: h.id.clone(),
                episode: e.index,
                path: e.path.clone(),
                name: name_of(&e.path),
                folder: false,
                reserved: (e.from, e.to),
                footprint,
                children: Vec::new(),
            });
        }
    }

    for i in 0..tree.nodes.len() {
        let parent_path = parent_of(&tree.nodes[i].path);
        let reserved = tree.nodes[i].reserved;
        let parent = if parent_path.is_empty() {
            None
        } else {
            folders_by_path
                .get(parent_path)
                .and_then(|c| c.iter().find(|(_, iv)| interval_within(&reserved, iv)))
                .map(|(p, _)| *p)
        };
        match parent {
            Some(p) => tree.nodes[p].children.push(i),
            None => tree.roots.push(i),
        }
    }
    let order = |nodes: &[TreeNode], v: &mut Vec<usize>| {
        v.sort_by(|&a, &b| {
            let (a, b) = (&nodes[a], &nodes[b]);
            (a.reserved.0, &a.name, a.folder, &a.artifact, a.episode).cmp(&(b.reserved.0, &b.name, b.folder, &b.artifact, b.episode))
        })
    };
    for i in 0..tree.nodes.len() {
        let mut c = std::mem::take(&mut tree.nodes[i].children);
        order(&tree.nodes, &mut c);
        tree.nodes[i].children = c;
    }
    let mut roots = std::mem::take(&mut tree.roots);
    order(&tree.nodes, &mut roots);
    tree.roots = roots;
    tree
}

fn lifetime_base(h: &ArtifactHistory, sizing: &SizingRule) -> f64 {
    h.versions.iter().map(|v| sizing.base(&v.metrics)).fold(sizing.min, f64::max)
}

/// Relative placement of `children` (sizes given) inside a district; returns
/// offsets and the district size.
fn shelf_pack(sizes: &[(f64, f64)]) -> (Vec<(f64, f64)>, (f64, f64)) {
    if sizes.is_empty() {
        return (Vec::new(), (2.0 * MARGIN, 2.0 * MARGIN));
    }
    let area: f64 = sizes.iter().map(|(w, d)| (w + MARGIN) * (d + MARGIN)).sum();
    let widest = sizes.iter().map(|s| s.0).fold(0.0, f64::max);
    let row_width = q(area.sqrt().max(widest));

    let mut out = Vec::with_capacity(sizes.len());
    let (mut x, mut z, mut row_depth) = (MARGIN, MARGIN, 0.0f64);
    let (mut max_x, mut max_z) = (0.0f64, 0.0f64);
    for &(w, d) in sizes {
        if x > MARGIN && x + w > MARGIN + row_width + 1e-9 {
            z += row_depth + MARGIN;
            x = MARGIN;
            row_depth = 0.0;
        }
        out.push((x, z));
        max_x = max_x.max(x + w);
        max_z = max_z.max(z + d);
        x += w + MARGIN;
        row_depth = row_depth.max(d);
    }
    (out, (q(max_x + MARGIN), q(max_z + MARGIN)))
}

pub fn layout_city(tree: &UnionTree, schema: &SchemaState, sizing: &SizingRule) -> CityLayout {
    // sizes bottom-up
    let n = tree.nodes.len();
    let mut size = vec![(0.0, 0.0); n];
    let mut offsets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    let mut post = Vec::with_capacity(n);
    let mut stack: Vec<(usize, bool)> = tree.roots.iter().rev().map(|&r| (r, false)).collect();
    while let Some((i, done)) = stack.pop() {
        if done {
            post.push(i);
            continue;
        }
        stack.push((i, true));
        stack.extend(tree.nodes[i].children.iter().rev().map(|&c| (c, false)));
    }
    for &i in &post {
        let node = &tree.nodes[i];
        if node.folder {
            let sizes: Vec<_> = node.children.iter().map(|&c| size[c]).collect();
            let (offs, s) = shelf_pack(&sizes);
            offsets[i] = offs;
            size[i] = s;
        } else {
            size[i] = (node.footprint, node.footprint);
        }
    }
    let root_sizes: Vec<_> = tree.roots.iter().map(|&c| size[c]).collect();
    let (root_offsets, (w, d)) = shelf_pack(&root_sizes);
    let bounds = Rect { x: q(-w / 2.0), z: q(-d / 2.0), width: w, depth: d };

    // positions top-down
    let mut lots = Vec::with_capacity(n);
    let mut queue: Vec<(usize, f64, f64, u32, Option<ArtifactId>)> = tree
        .roots
        .iter()
        .zip(&root_offsets)
        .map(|(&c, &(ox, oz))| (c, bounds.x + ox, bounds.z + oz, 0, None))
        .collect();
    while let Some((i, x, z, depth, parent)) = queue.pop() {
        let node = &tree.nodes[i];
        let rect = Rect { x: q(x), z: q(z), width: q(size[i].0), depth: q(size[i].1) };
        for (&c, &(ox, oz)) in node.children.iter().zip(&offsets[i]) {
            queue.push((c, rect.x + ox, rect.z + oz, depth + 1, Some(node.artifact.clone())));
        }
        lots.push(Lot {
            artifact: node.artifact.clone(),
            episode: node.episode,
            path: node.path.clone(),
            folder: node.folder,
            rect,
            depth,
            reserved: node.reserved,
            parent,
        });
    }
    lots.sort_by(|a, b| (&a.artifact, a.episode).cmp(&(&b.artifact, b.episode)));

    let mut layout = CityLayout { bounds, lots, sky_height: SKY_HEIGHT, sky: layout_sky(schema, sizing), index: HashMap::new() };
    layout.reindex();
    layout
}

/// Union tree plus packing in one step.
pub fn layout_evolution(evo: &Evolution, schema: &SchemaState, sizing: &SizingRule) -> CityLayout {
    layout_city(&build_global_hierarchy(evo, sizing), schema, sizing)
}

/// Grid of table slots above the city center, ordered by creation then name.
pub fn layout_sky(schema: &SchemaState, sizing: &SizingRule) -> Vec<SkySlot> {
    let mut tables: Vec<_> = schema.tables.values().collect();
    tables.sort_by(|a, b| (a.created_at, &a.name).cmp(&(b.created_at, &b.name)));
    if tables.is_empty() {
        return Vec::new();
    }
    let widest = tables.iter().map(|t| sizing.table_width(t.num_columns())).fold(sizing.min, f64::max);
    let cell = widest + MARGIN;
    let cols = (tables.len() as f64).sqrt().ceil() as usize;
    let rows = tables.len().div_ceil(cols);
    let (x0, z0) = (-(cols as f64) * cell / 2.0, -(rows as f64) * cell / 2.0);
    tables
        .iter()
        .enumerate()
        .map(|(i, t)| SkySlot {
            table: t.name.clone(),
            x: q(x0 + (i % cols) as f64 * cell + cell / 2.0),
            z: q(z0 + (i / cols) as f64 * cell + cell / 2.0),
            size: q(widest),
        })
        .collect()
}

/// Where an artifact stands in one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement<'a> {
    pub history: &'a ArtifactHistory,
    pub lot: &'a Lot,
    /// Dies at this commit: shown one last time.
    pub removed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcPlacement {
    pub artifact: ArtifactId,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub from_path: String,
    pub to_path: String,
}

/// Artifacts alive at `ordinal` (plus those removed by it) at their current lots, and this commit's move arcs.
pub fn scene_positions<'a>(layout: &'a CityLayout, ordinal: u32, evo: &'a Evolution) -> (Vec<Placement<'a>>, Vec<ArcPlacement>) {
    let mut placements = Vec::new();
    for h in &evo.histories {
        let alive = h.alive_at(ordinal);
        let removed = !alive && h.death() == Some(ordinal);
        if !alive && !removed {
            continue;
        }
        let episode = if h.is_folder() {
            0
        } else {
            let eps = h.episodes();
            let probe = if removed { ordinal - 1 } else { ordinal };
            eps.iter().rev().find(|e| e.from <= probe).map_or(0, |e| e.index)
        };
        if let Some(lot) = layout.lot(&h.id, episode) {
            placements.push(Placement { history: h, lot, removed });
        }
    }
    let mut arcs = Vec::new();
    for m in evo.moves_at(ordinal) {
        let Some(h) = evo.get(&m.artifact) else { continue };
        let Some(new) = h.episodes().into_iter().find(|e| e.from == ordinal) else { continue };
        let (Some(a), Some(b)) = (layout.lot(&m.artifact, new.index.saturating_sub(1)), layout.lot(&m.artifact, new.index)) else {
            continue;
        };
        arcs.push(ArcPlacement {
            artifact: m.artifact.clone(),
            from: a.rect.center(),
            to: b.rect.center(),
            from_path: m.from.clone(),
            to_path: m.to.clone(),
        });
    }
    (placements, arcs)
}

/// Kind of the glyph a lot carries at a version.
pub fn is_building(kind: ArtifactKind) -> bool {
    kind != ArtifactKind::Folder
}

/// Lots present in both layouts, and how many of them have the same rect.
pub fn agreement(a: &CityLayout, b: &CityLayout) -> (usize, usize) {
    let mut shared = 0;
    let mut same = 0;
    for l in &a.lots {
        if let Some(o) = b.lot(&l.artifact, l.episode) {
            shared += 1;
            same += usize::from(o.rect == l.rect);
        }
    }
    (shared, same)
}

/// Checks the structural layout invariants; returns a description of the first violation.
pub fn check_layout(layout: &CityLayout) -> Result<(), String> {
    let mut by_parent: BTreeMap<Option<&ArtifactId>, Vec<&Lot>> = BTreeMap::new();
    for l in &layout.lots {
        if l.rect.width <= 0.0 || l.rect.depth <= 0.0 {
            return Err(format!("{} has an empty rect", l.path));
        }
        let outer = match &l.parent {
            Some(p) => layout.lot(p, 0).ok_or_else(|| format!("{} has a missing parent", l.path))?.rect,
            None => layout.bounds,
        };
        if !l.rect.inside(&outer, MARGIN) {
            return Err(format!("{} sticks out of its district", l.path));
        }
        by_parent.entry(l.parent.as_ref()).or_default().push(l);
    }
    for siblings in by_parent.values() {
        for (i, a) in siblings.iter().enumerate() {
            for b in &siblings[i + 1..] {
                if a.rect.overlaps(&b.rect) {
                    return Err(format!("{} overlaps {}", a.path, b.path));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evomodel::link_versions;
    use crate::ingest::{FileKind, Rename, SnapshotDelta};

    fn delta(added: &[&str], deleted: &[&str], renamed: &[(&str, &str)]) -> SnapshotDelta {
        let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect();
        SnapshotDelta {
            added: v(added),
            deleted: v(deleted),
            renamed: renamed.iter().map(|(a, b)| Rename { from: a.to_string(), to: b.to_string(), similarity: 1.0 }).collect(),
            ..Default::default()
        }
    }

    fn evo(deltas: &[SnapshotDelta]) -> Evolution {
        link_versions(deltas, |_, _| Some((FileKind::BinaryFile, MetricRecord::Binary { size_bytes: 0 }))).unwrap()
    }

    fn layout(e: &Evolution) -> CityLayout {
        let rule = SizingRule::default();
        layout_city(&build_global_hierarchy(e, &rule), &SchemaState::default(), &rule)
    }

    #[test]
    fn scale_arithmetic() {
        let r = SizingRule::default();
        assert_eq!(r.scale(0.0), 1.0);
        assert_eq!(r.scale(4.0), 3.0);
        assert_eq!(r.scale(9.0), 4.0);
        assert_eq!(r.scale(1e9), 40.0);
        assert_eq!(r.scale(-3.0), 1.0);
    }

    #[test]
    fn single_file_is_centered() {
        let l = layout(&evo(&[delta(&["a.png"], &[], &[])]));
        assert_eq!(l.lots.len(), 1);
        assert_eq!(l.bounds, Rect { x: -1.5, z: -1.5, width: 3.0, depth: 3.0 });
        assert_eq!(l.lots[0].rect, Rect { x: -0.5, z: -0.5, width: 1.0, depth: 1.0 });
        assert_eq!(l.lots[0].rect.center(), (0.0, 0.0));
    }

    #[test]
    fn siblings_in_name_order() {
        let l = layout(&evo(&[delta(&["b.png", "a.png"], &[], &[])]));
        let a = l.lots.iter().find(|x| x.path == "a.png").unwrap();
        let b = l.lots.iter().find(|x| x.path == "b.png").unwrap();
        assert!((a.rect.z, a.rect.x) < (b.rect.z, b.rect.x));
        check_layout(&l).unwrap();
    }

    #[test]
    fn first_appearance_wins_over_name() {
        let l = layout(&evo(&[delta(&["z.png"], &[], &[]), delta(&["a.png"], &[], &[])]));
        let a = l.lots.iter().find(|x| x.path == "a.png").unwrap();
        let z = l.lots.iter().find(|x| x.path == "z.png").unwrap();
        assert!((z.rect.z, z.rect.x) < (a.rect.z, a.rect.x));
    }

    #[test]
    fn short_lived_files_keep_a_lot() {
        let e = evo(&[delta(&["tmp/x.png", "y.png"], &[], &[]), delta(&[], &["tmp/x.png"], &[])]);
        let l = layout(&e);
        assert_eq!(l.lots.len(), 3);
        check_layout(&l).unwrap();
        let (p, _) = scene_positions(&l, 1, &e);
        let removed: Vec<_> = p.iter().filter(|p| p.removed).map(|p| p.lot.path.as_str()).collect();
        assert_eq!(removed, ["tmp", "tmp/x.png"]);
    }

    #[test]
    fn moves_get_a_lot_per_episode_and_an_arc() {
        let e = evo(&[delta(&["src/X.png"], &[], &[]), delta(&[], &[], &[("src/X.png", "app/X.png")])]);
        let l = layout(&e);
        let x: Vec<_> = l.lots.iter().filter(|lot| !lot.folder).collect();
        assert_eq!(x.len(), 2);
        assert_eq!(x[0].artifact, x[1].artifact);
        assert_ne!(x[0].rect, x[1].rect);
        let (p0, a0) = scene_positions(&l, 0, &e);
        assert!(a0.is_empty());
        let (p1, a1) = scene_positions(&l, 1, &e);
        assert_eq!(a1.len(), 1);
        assert_eq!(a1[0].from, x[0].rect.center());
        assert_eq!(a1[0].to, x[1].rect.center());
        let file_at = |p: &[Placement]| p.iter().find(|p| !p.lot.folder && !p.removed).unwrap().lot.path.clone();
        assert_eq!(file_at(&p0), "src/X.png");
        assert_eq!(file_at(&p1), "app/X.png");
        check_layout(&l).unwrap();
    }

    #[test]
    fn shelf_packing_wraps_rows() {
        let (offs, size) = shelf_pack(&[(1.0, 1.0); 4]);
        // area 16 -> row width 4: two per row
        assert_eq!(offs, [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)]);
        assert_eq!(size, (5.0, 5.0));
    }

    #[test]
    fn sky_grid() {
        use crate::sqlinfer::TableSchema;
        let mut s = SchemaState::default();
        for (name, at) in [("b", 0), ("a", 0), ("c", 3)] {
            s.tables.insert(
                name.into(),
                TableSchema { name: name.into(), columns: vec![], created_at: at, dropped_at: None, lifetimes: vec![(at, None)], inferred_by_use: false },
            );
        }
        let slots = layout_sky(&s, &SizingRule::default());
        let names: Vec<_> = slots.iter().map(|s| s.table.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert_eq!((slots[0].x, slots[0].z), (-1.0, -1.0));
        assert_eq!((slots[1].x, slots[1].z), (1.0, -1.0));
        assert_eq!((slots[2].x, slots[2].z), (-1.0, 1.0));
        let one = layout_sky(&SchemaState { tables: [("a".to_string(), s.tables["a"].clone())].into() }, &SizingRule::default());
        assert_eq!((one[0].x, one[0].z), (0.0, 0.0));
    }
}
