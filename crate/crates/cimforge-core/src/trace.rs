//! Device trace: the schedule-ordered record stream a compiled model
//! executes.
//!
//! A trace file is JSON-lines: the first line is the header (format version,
//! tool manifest, and the complete host program, making the file
//! self-contained), each following line one record. Serialization is fully
//! deterministic, so recompiling the same model against the same target
//! produces a byte-identical trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lower::HostProgram;
use crate::schedule::AxisLabel;

pub const TRACE_VERSION: u32 = 1;

/// Host-side recombination shifts of one layer: per-slice and per-plane
/// shift amounts, and whether the top bit plane carries negative weight
/// (two's-complement streaming).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub slice_shifts: Vec<u32>,
    pub plane_shifts: Vec<u32>,
    pub msb_negative: bool,
}

/// One trace event. `Label` records declare the loop nest of a layer; the
/// device records follow in schedule order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Label {
        layer: String,
        axis: AxisLabel,
        extent: u64,
    },
    WriteTile {
        layer: String,
        /// (row-tile index, column-group index).
        tile_coords: [u64; 2],
        /// Weight slice of the first unit column packed into this group.
        slice_index: u64,
    },
    Mvm {
        layer: String,
        vec_index: u64,
        bit_plane: u64,
    },
    HostShiftAdd {
        layer: String,
        shifts: ShiftSpec,
    },
    HostRequantize {
        layer: String,
        multiplier: f64,
    },
}

impl TraceRecord {
    pub fn layer(&self) -> &str {
        match self {
            TraceRecord::Label { layer, .. }
            | TraceRecord::WriteTile { layer, .. }
            | TraceRecord::Mvm { layer, .. }
            | TraceRecord::HostShiftAdd { layer, .. }
            | TraceRecord::HostRequantize { layer, .. } => layer,
        }
    }
}

/// First line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    /// Provenance manifest supplied by the caller (CLI embeds its run
    /// manifest here); `null` when produced programmatically.
    pub manifest: serde_json::Value,
    pub program: HostProgram,
}

/// A complete compiled artifact: header plus schedule-ordered records.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn to_jsonl_string(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serialization");
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serialization"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl_str(text: &str) -> Result<TraceFile> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| CoreError::parse("trace is empty; expected a header line"))?;
        let header: TraceHeader = serde_json::from_str(header_line)
            .map_err(|e| CoreError::parse(format!("trace header is invalid: {e}")))?;
        if header.version != TRACE_VERSION {
            return Err(CoreError::parse(format!(
                "trace version {} is not supported (expected {TRACE_VERSION})",
                header.version
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| {
                CoreError::parse(format!("trace record on line {} is invalid: {e}", i + 2))
            })?;
            records.push(record);
        }
        Ok(TraceFile { header, records })
    }
}

pub fn write_trace(trace: &TraceFile, path: &Path) -> Result<()> {
    std::fs::write(path, trace.to_jsonl_string())
        .map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    TraceFile::from_jsonl_str(&text)
        .map_err(|e| CoreError::parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_serialize_with_kind_tags() {
        let rec = TraceRecord::WriteTile {
            layer: "conv1".into(),
            tile_coords: [0, 3],
            slice_index: 1,
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains(r#""kind":"write_tile""#), "{json}");
        assert!(json.contains(r#""tile_coords":[0,3]"#), "{json}");

        let rec = TraceRecord::Label {
            layer: "conv1".into(),
            axis: AxisLabel::OuterColTile,
            extent: 4,
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains(r#""axis":"outer_col_tile""#), "{json}");

        let rec = TraceRecord::HostShiftAdd {
            layer: "conv1".into(),
            shifts: ShiftSpec {
                slice_shifts: vec![0, 4],
                plane_shifts: vec![0, 1, 2],
                msb_negative: true,
            },
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains(r#""kind":"host_shift_add""#), "{json}");
    }

    #[test]
    fn rejects_garbage_record_lines() {
        let mut text = String::new();
        text.push_str(
            r#"{"version":1,"manifest":null,"program":{"graph":{"name":"g","inputs":[],"outputs":[],"nodes":[],"tensors":{}},"order":[],"plans":[],"target":"#,
        );
        text.push_str(&serde_json::to_string(&crate::target::CimTarget::reference()).unwrap());
        text.push_str("}}\n{\"kind\":\"not_a_record\"}\n");
        let err = TraceFile::from_jsonl_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_missing_header() {
        let err = TraceFile::from_jsonl_str("").unwrap_err().to_string();
        assert!(err.contains("header"), "{err}");
    }
}
