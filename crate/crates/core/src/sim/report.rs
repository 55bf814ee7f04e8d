//! Run reports and their on-disk directory form.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::{read_audit_csv, write_audit_csv, AuditRow};
use crate::error::{Error, Result};
use crate::fusion::{read_fusion_csv, write_fusion_csv, FusionRow, SyncStats};
use crate::geom::TaskId;
use crate::predictor::{Payload, Provenance};

pub const REPORT_JSON: &str = "report.json";
pub const FUSION_CSV: &str = "fusion.csv";
pub const DISPATCH_CSV: &str = "dispatch.csv";
pub const PUBLISHED_JSONL: &str = "published.jsonl";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub inference: u64,
    pub predicted: u64,
}

impl ProvenanceCounts {
    pub fn total(&self) -> u64 {
        self.inference + self.predicted
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub mode: String,
    pub seed: u64,
    pub trace_hash: String,
    pub scenario_tag: String,
    pub fps: u32,
    pub frame_count: u64,
    pub executor_count: usize,
    pub processed: BTreeMap<TaskId, u64>,
    pub queue_dropped: BTreeMap<TaskId, u64>,
    pub mean_service_ms: BTreeMap<TaskId, Option<f64>>,
    pub published: BTreeMap<TaskId, ProvenanceCounts>,
    pub critical_frames: u64,
    pub fusion: SyncStats,
    pub bundle_count: u64,
    pub fusion_percent: f64,
    pub mean_fusion_delay_ms: Option<f64>,
    /// Fraction of inference starts whose frame lagged the newest arrival
    /// by more than 10 frames.
    pub seq_gap_over_10: BTreeMap<TaskId, Option<f64>>,
}

/// One message put on a task's output topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRecord {
    pub task: TaskId,
    pub frame_seq: u64,
    pub timestamp_us: u64,
    pub published_at_us: u64,
    pub provenance: Provenance,
    pub payload: Payload,
}

/// One inference job as served by an executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub executor: usize,
    pub task: TaskId,
    pub frame_seq: u64,
    pub arrival_us: u64,
    /// Position of the task in its executor's ready queue, globally increasing.
    pub ready_order: u64,
    pub start_us: u64,
    pub end_us: u64,
}

/// The persisted part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportData {
    pub summary: ReportSummary,
    pub fusion: Vec<FusionRow>,
    pub dispatch: Vec<AuditRow>,
    pub published: Vec<PublishedRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub data: ReportData,
    pub service_log: Vec<ServiceRecord>,
    /// Newest arrived seq minus processed seq, sampled at each inference start.
    pub seq_gaps: BTreeMap<TaskId, Vec<u64>>,
}

fn report_err(file: &str, e: impl ToString) -> Error {
    Error::Report {
        file: file.to_string(),
        reason: e.to_string(),
    }
}

pub fn summary_to_json(summary: &ReportSummary) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(summary)?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_published_jsonl<W: Write>(records: &[PublishedRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_published_jsonl<R: BufRead>(input: R) -> Result<Vec<PublishedRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PublishedRecord = serde_json::from_str(&line)
            .map_err(|e| report_err(PUBLISHED_JSONL, format!("line {}: {e}", i + 1)))?;
        if rec.published_at_us < rec.timestamp_us {
            return Err(report_err(
                PUBLISHED_JSONL,
                format!("line {}: published before capture", i + 1),
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_report_dir(data: &ReportData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_JSON), summary_to_json(&data.summary)?)?;
    let mut buf = Vec::new();
    write_fusion_csv(&data.fusion, &mut buf)?;
    fs::write(dir.join(FUSION_CSV), &buf)?;
    buf.clear();
    write_audit_csv(&data.dispatch, &mut buf)?;
    fs::write(dir.join(DISPATCH_CSV), &buf)?;
    buf.clear();
    write_published_jsonl(&data.published, &mut buf)?;
    fs::write(dir.join(PUBLISHED_JSONL), &buf)?;
    Ok(())
}

pub fn load_report_dir(dir: &Path) -> Result<ReportData> {
    let read = |name: &str| fs::read(dir.join(name)).map_err(|e| report_err(name, e));
    let summary: ReportSummary =
        serde_json::from_slice(&read(REPORT_JSON)?).map_err(|e| report_err(REPORT_JSON, e))?;
    let fusion = read_fusion_csv(&read(FUSION_CSV)?[..]).map_err(|e| report_err(FUSION_CSV, e))?;
    let dispatch = read_audit_csv(&read(DISPATCH_CSV)?[..]).map_err(|e| report_err(DISPATCH_CSV, e))?;
    let published = parse_published_jsonl(&read(PUBLISHED_JSONL)?[..])?;
    if fusion.len() as u64 != summary.bundle_count {
        return Err(report_err(
            FUSION_CSV,
            format!("{} rows but report.json lists {} bundles", fusion.len(), summary.bundle_count),
        ));
    }
    Ok(ReportData {
        summary,
        fusion,
        dispatch,
        published,
    })
}
