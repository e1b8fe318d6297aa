//! Mines a git history into per-commit software city scenes.
//!
//! `pipeline::analyze` produces an [`Analysis`]; `layout`, `scene` and
//! `store` turn it into stored scene documents.

pub mod canon;
pub mod datametrics;
pub mod evomodel;
pub mod ingest;
pub mod layout;
pub mod lexer;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod srcmetrics;
pub mod sqlinfer;
pub mod store;

pub use datametrics::DataFileMetrics;
pub use evomodel::{ArtifactHistory, ArtifactId, ArtifactKind, Change, Evolution, MoveEvent, Version};
pub use ingest::{CommitMeta, FileKind, IngestError, Repository, SnapshotDelta};
pub use layout::{CityLayout, Lot, Rect, SizingRule};
pub use metrics::MetricRecord;
pub use pipeline::{AnalyzeOptions, Analysis, KindCounts, PipelineError, TimelineEntry};
pub use scene::{GlyphKind, Mesh, Scene, VisualMapping};
pub use srcmetrics::{ClassMetrics, FileSourceMetrics};
pub use sqlinfer::{Dialect, SchemaState, TableSchema};
pub use store::{ProjectRecord, Status, Store, StoreError};
