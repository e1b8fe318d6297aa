//! The per-version metric vector attached to every artifact version.

use serde::{Deserialize, Serialize};

use crate::datametrics::{self, DataFileMetrics};
use crate::ingest::FileKind;
use crate::srcmetrics::{self, FileSourceMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricRecord {
    Source(FileSourceMetrics),
    Data(DataFileMetrics),
    Binary { size_bytes: u64 },
    Text { size_bytes: u64, lines: u32 },
    /// Number of files alive below the folder.
    Folder { files: u32 },
}

impl MetricRecord {
    pub fn compute(kind: FileKind, path: &str, content: &[u8]) -> MetricRecord {
        match kind {
            FileKind::SourceClassContainer => MetricRecord::Source(srcmetrics::analyze_source(content)),
            FileKind::DataFile => {
                if path.to_ascii_lowercase().ends_with(".xml") {
                    MetricRecord::Data(datametrics::analyze_xml(content))
                } else {
                    MetricRecord::Data(datametrics::analyze_json(content))
                }
            }
            FileKind::BinaryFile => MetricRecord::Binary { size_bytes: content.len() as u64 },
            FileKind::OtherText => MetricRecord::Text { size_bytes: content.len() as u64, lines: count_lines(content) },
        }
    }

    pub fn is_degraded(&self) -> bool {
        match self {
            MetricRecord::Source(m) => m.degraded,
            MetricRecord::Data(m) => m.degraded,
            _ => false,
        }
    }
}

fn count_lines(content: &[u8]) -> u32 {
    let newlines = content.iter().filter(|&&b| b == b'\n').count() as u32;
    match content.last() {
        Some(b'\n') | None => newlines,
        Some(_) => newlines + 1,
    }
}
