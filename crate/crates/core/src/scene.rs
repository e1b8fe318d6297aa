//! Per-commit scene documents: one mesh per visible entity, move arcs and
//! access lines, serialized canonically for the viewer.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canon;
use crate::evomodel::{ArtifactHistory, ArtifactKind, Change, Evolution};
use crate::ingest::CommitMeta;
use crate::layout::{q, scene_positions, CityLayout, Lot, Rect, SizingRule};
use crate::metrics::MetricRecord;
use crate::pipeline::Analysis;
use crate::sqlinfer::{SchemaState, TableAccess};

pub const SCHEMA_VERSION: u32 = 1;
/// Thickness of a district slab; nested slabs stack.
pub const DISTRICT_STEP: f64 = 0.5;
pub const TABLE_THICKNESS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlyphKind {
    ClassBuilding,
    DataFileGlyph,
    BinaryGlyph,
    DistrictSlab,
    TableSlab,
    AccessLine,
    MoveArc,
}

impl GlyphKind {
    pub const ALL: [GlyphKind; 7] = [
        GlyphKind::ClassBuilding,
        GlyphKind::DataFileGlyph,
        GlyphKind::BinaryGlyph,
        GlyphKind::DistrictSlab,
        GlyphKind::TableSlab,
        GlyphKind::AccessLine,
        GlyphKind::MoveArc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GlyphKind::ClassBuilding => "class_building",
            GlyphKind::DataFileGlyph => "data_file_glyph",
            GlyphKind::BinaryGlyph => "binary_glyph",
            GlyphKind::DistrictSlab => "district_slab",
            GlyphKind::TableSlab => "table_slab",
            GlyphKind::AccessLine => "access_line",
            GlyphKind::MoveArc => "move_arc",
        }
    }

    pub fn of(kind: ArtifactKind) -> GlyphKind {
        match kind {
            ArtifactKind::SourceClassContainer => GlyphKind::ClassBuilding,
            ArtifactKind::DataFile | ArtifactKind::OtherText => GlyphKind::DataFileGlyph,
            ArtifactKind::BinaryFile => GlyphKind::BinaryGlyph,
            ArtifactKind::Folder => GlyphKind::DistrictSlab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Palette {
    Class,
    Data,
    Binary,
    Neutral,
    District,
    Table,
    Access,
    Move,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeFlag {
    Unchanged,
    Added,
    Modified,
    Moved,
    /// Deleted by this commit; shown one last time.
    Removed,
}

/// `position` is the center of the glyph's base. For lines and arcs it is the
/// start point and `dimensions` is the vector to the end point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub id: String,
    pub glyph: GlyphKind,
    pub position: [f64; 3],
    /// Width, height, depth.
    pub dimensions: [f64; 3],
    pub color: f64,
    pub palette: Palette,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricRecord>,
    pub change: ChangeFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveArc {
    pub id: String,
    pub artifact: String,
    pub from: [f64; 3],
    pub to: [f64; 3],
    pub from_path: String,
    pub to_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessLine {
    pub id: String,
    pub table: String,
    pub artifact: String,
    /// Bottom of the table slab.
    pub from: [f64; 3],
    /// Roof of the building.
    pub to: [f64; 3],
    /// Statement-table pairs behind the line.
    pub count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub counts: BTreeMap<String, u32>,
    /// Files and folders alive at this commit.
    pub alive: u32,
    pub removed: u32,
    pub warnings: Vec<String>,
}

impl SceneSummary {
    fn zeros() -> Self {
        SceneSummary { counts: GlyphKind::ALL.iter().map(|g| (g.name().to_string(), 0)).collect(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub schema_version: u32,
    pub commit: CommitMeta,
    pub bounds: Rect,
    pub sky_height: f64,
    pub meshes: Vec<Mesh>,
    pub arcs: Vec<MoveArc>,
    pub access_lines: Vec<AccessLine>,
    pub summary: SceneSummary,
}

impl Scene {
    pub fn empty(commit: CommitMeta) -> Scene {
        Scene {
            schema_version: SCHEMA_VERSION,
            commit,
            bounds: Rect { x: 0.0, z: 0.0, width: 0.0, depth: 0.0 },
            sky_height: 0.0,
            meshes: Vec::new(),
            arcs: Vec::new(),
            access_lines: Vec::new(),
            summary: SceneSummary::zeros(),
        }
    }
}

/// 95th percentile by nearest rank; 0 for no values.
pub fn p95(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = (0.95 * values.len() as f64).ceil() as usize;
    values[rank.max(1) - 1]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ColorScale {
    pub lines_of_code: f64,
    pub entities: f64,
    pub size_bytes: f64,
    pub table_accesses: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRow {
    /// File kind, or `table`.
    pub kind: String,
    pub glyph: GlyphKind,
    pub base: String,
    pub height: String,
    pub color: String,
}

/// The metric to glyph mapping, with project-wide color references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualMapping {
    pub sizing: SizingRule,
    pub p95: ColorScale,
    pub table: Vec<MappingRow>,
}

fn mapping_table() -> Vec<MappingRow> {
    let row = |kind: &str, glyph, base: &str, height: &str, color: &str| MappingRow {
        kind: kind.into(),
        glyph,
        base: base.into(),
        height: height.into(),
        color: color.into(),
    };
    vec![
        row("source_class_container", GlyphKind::ClassBuilding, "num_instance_variables", "num_methods", "lines_of_code"),
        row("data_file", GlyphKind::DataFileGlyph, "num_entity_types", "max_nesting_level", "num_entities"),
        row("binary_file", GlyphKind::BinaryGlyph, "ln(1 + size_bytes)", "ln(1 + size_bytes)", "size_bytes"),
        row("other_text", GlyphKind::DataFileGlyph, "none", "lines", "none"),
        row("table", GlyphKind::TableSlab, "num_columns", "none", "table_accesses"),
    ]
}

impl VisualMapping {
    pub fn new(sizing: SizingRule, p95: ColorScale) -> Self {
        VisualMapping { sizing, p95, table: mapping_table() }
    }

    /// Color references from every version in the history.
    pub fn from_analysis(a: &Analysis, sizing: SizingRule) -> Self {
        let (mut loc, mut ent, mut bytes) = (Vec::new(), Vec::new(), Vec::new());
        for h in a.evolution.files() {
            for v in h.versions.iter().filter(|v| v.change != Change::Deleted) {
                match &v.metrics {
                    MetricRecord::Source(s) => loc.push(s.aggregate.lines_of_code as f64),
                    MetricRecord::Data(d) => ent.push(d.num_entities as f64),
                    MetricRecord::Binary { size_bytes } => bytes.push(*size_bytes as f64),
                    _ => {}
                }
            }
        }
        let mut acc: Vec<f64> = a
            .accesses
            .iter()
            .flat_map(|per| {
                let mut totals: BTreeMap<&str, u32> = BTreeMap::new();
                for x in per {
                    *totals.entry(&x.table).or_default() += 1;
                }
                totals.into_values().map(f64::from).collect::<Vec<_>>()
            })
            .collect();
        VisualMapping::new(
            sizing,
            ColorScale { lines_of_code: p95(&mut loc), entities: p95(&mut ent), size_bytes: p95(&mut bytes), table_accesses: p95(&mut acc) },
        )
    }

    pub fn normalize(v: f64, reference: f64) -> f64 {
        if reference <= 0.0 {
            0.0
        } else {
            q((v / reference).min(1.0))
        }
    }

    /// Width, height, depth and color of a ground building.
    pub fn building(&self, m: &MetricRecord) -> ([f64; 3], f64, Palette) {
        let s = &self.sizing;
        let (base, height) = (s.base(m), s.height(m));
        let (color, palette) = match m {
            MetricRecord::Source(x) => (Self::normalize(x.aggregate.lines_of_code as f64, self.p95.lines_of_code), Palette::Class),
            MetricRecord::Data(x) => (Self::normalize(x.num_entities as f64, self.p95.entities), Palette::Data),
            MetricRecord::Binary { size_bytes } => (Self::normalize(*size_bytes as f64, self.p95.size_bytes), Palette::Binary),
            MetricRecord::Text { .. } | MetricRecord::Folder { .. } => (0.0, Palette::Neutral),
        };
        ([base, height, base], color, palette)
    }
}

fn change_flag(h: &ArtifactHistory, ordinal: u32) -> ChangeFlag {
    match h.versions.iter().find(|v| v.ordinal == ordinal).map(|v| v.change) {
        None => ChangeFlag::Unchanged,
        Some(Change::Added) => ChangeFlag::Added,
        Some(Change::Modified) => ChangeFlag::Modified,
        Some(Change::Moved) => ChangeFlag::Moved,
        Some(Change::Deleted) => ChangeFlag::Removed,
    }
}

fn ground(lot: &Lot) -> f64 {
    q(DISTRICT_STEP * lot.depth as f64)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [q(a[0] - b[0]), q(a[1] - b[1]), q(a[2] - b[2])]
}

/// Scene at `commit.ordinal`. `schema` and `accesses` are the state of that snapshot.
pub fn build_scene(
    layout: &CityLayout,
    evo: &Evolution,
    schema: &SchemaState,
    accesses: &[TableAccess],
    mapping: &VisualMapping,
    commit: &CommitMeta,
) -> Scene {
    let ordinal = commit.ordinal;
    let mut scene = Scene::empty(commit.clone());
    scene.bounds = layout.bounds;
    scene.sky_height = layout.sky_height;
    let mut roofs: HashMap<&str, [f64; 3]> = HashMap::new();

    let (placements, arcs) = scene_positions(layout, ordinal, evo);
    for p in &placements {
        let h = p.history;
        let Some(v) = h.version_at(ordinal) else { continue };
        let (cx, cz) = p.lot.rect.center();
        let y = ground(p.lot);
        let (dimensions, color, palette) = if h.is_folder() {
            ([p.lot.rect.width, DISTRICT_STEP, p.lot.rect.depth], 0.0, Palette::District)
        } else {
            mapping.building(&v.metrics)
        };
        let palette = if h.kind == ArtifactKind::OtherText { Palette::Neutral } else { palette };
        if !p.removed {
            roofs.insert(h.id.as_str(), [cx, q(y + dimensions[1]), cz]);
        }
        scene.summary.alive += u32::from(!p.removed);
        scene.summary.removed += u32::from(p.removed);
        scene.meshes.push(Mesh {
            id: h.id.to_string(),
            glyph: GlyphKind::of(h.kind),
            position: [cx, y, cz],
            dimensions,
            color,
            palette,
            path: p.lot.path.clone(),
            metrics: Some(v.metrics.clone()),
            change: change_flag(h, ordinal),
        });
    }

    for a in arcs {
        let lot_y = |episode_path: &str| {
            layout.lots.iter().find(|l| l.artifact == a.artifact && l.path == episode_path).map_or(0.0, ground)
        };
        let from = [a.from.0, lot_y(&a.from_path), a.from.1];
        let to = [a.to.0, lot_y(&a.to_path), a.to.1];
        let id = format!("arc:{}", a.artifact);
        scene.meshes.push(Mesh {
            id: id.clone(),
            glyph: GlyphKind::MoveArc,
            position: from,
            dimensions: sub(to, from),
            color: 1.0,
            palette: Palette::Move,
            path: a.to_path.clone(),
            metrics: None,
            change: ChangeFlag::Moved,
        });
        scene.arcs.push(MoveArc { id, artifact: a.artifact.to_string(), from, to, from_path: a.from_path, to_path: a.to_path });
    }

    // one line per (table, file) pair
    let mut pairs: BTreeMap<(&str, &str), (u32, &str)> = BTreeMap::new();
    let mut per_table: BTreeMap<&str, u32> = BTreeMap::new();
    for x in accesses {
        let e = pairs.entry((x.table.as_str(), x.artifact.as_str())).or_insert((0, x.path.as_str()));
        e.0 += 1;
    }
    let mut slabs: HashMap<&str, [f64; 3]> = HashMap::new();
    for t in schema.tables.values().filter(|t| t.alive_at(ordinal)) {
        let Some(slot) = layout.slot(&t.name) else {
            scene.summary.warnings.push(format!("table {} has no sky slot", t.name));
            continue;
        };
        slabs.insert(t.name.as_str(), [slot.x, layout.sky_height, slot.z]);
    }
    for (&(table, artifact), &(count, path)) in &pairs {
        let (Some(&from), Some(&to)) = (slabs.get(table), roofs.get(artifact)) else {
            scene.summary.warnings.push(format!("dropped access from {path} to {table}"));
            continue;
        };
        *per_table.entry(table).or_default() += count;
        let id = format!("line:{table}:{artifact}");
        scene.meshes.push(Mesh {
            id: id.clone(),
            glyph: GlyphKind::AccessLine,
            position: from,
            dimensions: sub(to, from),
            color: VisualMapping::normalize(count as f64, mapping.p95.table_accesses),
            palette: Palette::Access,
            path: path.to_string(),
            metrics: None,
            change: ChangeFlag::Unchanged,
        });
        scene.access_lines.push(AccessLine { id, table: table.to_string(), artifact: artifact.to_string(), from, to, count });
    }
    for t in schema.tables.values().filter(|t| slabs.contains_key(t.name.as_str())) {
        let width = mapping.sizing.table_width(t.num_columns());
        let accesses = per_table.get(t.name.as_str()).copied().unwrap_or(0);
        let change = if t.created_at == ordinal { ChangeFlag::Added } else { ChangeFlag::Unchanged };
        scene.meshes.push(Mesh {
            id: format!("table:{}", t.name),
            glyph: GlyphKind::TableSlab,
            position: slabs[t.name.as_str()],
            dimensions: [width, TABLE_THICKNESS, width],
            color: VisualMapping::normalize(accesses as f64, mapping.p95.table_accesses),
            palette: Palette::Table,
            path: t.name.clone(),
            metrics: None,
            change,
        });
    }

    scene.meshes.sort_by(|a, b| a.id.cmp(&b.id));
    scene.arcs.sort_by(|a, b| a.id.cmp(&b.id));
    scene.access_lines.sort_by(|a, b| a.id.cmp(&b.id));
    for m in &scene.meshes {
        *scene.summary.counts.get_mut(m.glyph.name()).expect("all kinds present") += 1;
    }
    scene
}

/// Scenes for every commit, built in parallel.
pub fn build_scenes(a: &Analysis, layout: &CityLayout, mapping: &VisualMapping) -> Vec<Scene> {
    a.commits
        .par_iter()
        .map(|c| build_scene(layout, &a.evolution, a.schema_at(c.ordinal), &a.accesses[c.ordinal as usize], mapping, c))
        .collect()
}

pub fn serialize_scene(scene: &Scene) -> Vec<u8> {
    canon::to_canonical(scene).expect("scenes always serialize")
}

pub fn parse_scene(bytes: &[u8]) -> Result<Scene, serde_json::Error> {
    serde_json::from_slice(bytes)
}
