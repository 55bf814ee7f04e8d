//! Side-by-side comparison of evaluated runs.

use std::fmt::Write as _;
use std::path::Path;

use ppdnn::eval::MetricsSummary;
use ppdnn::{Error, TaskId};
use serde::Serialize;

const TASKS: [TaskId; 3] = [TaskId::ObjectDetection, TaskId::LaneDetection, TaskId::Segmentation];

#[derive(Serialize)]
struct Comparison<'a> {
    columns: Vec<Column<'a>>,
}

#[derive(Serialize)]
struct Column<'a> {
    label: &'a str,
    /// Baseline mean fusion delay over this column's; absent without a
    /// baseline column or without delays.
    delay_speedup: Option<f64>,
    metrics: &'a MetricsSummary,
}

struct Row {
    name: String,
    cells: Vec<Option<f64>>,
    digits: usize,
}

fn baseline_delay(columns: &[(String, MetricsSummary)]) -> Option<f64> {
    columns
        .iter()
        .find(|(_, m)| m.mode == "baseline")
        .and_then(|(_, m)| m.fusion_delay.map(|d| d.mean))
}

fn speedup(base: Option<f64>, m: &MetricsSummary) -> Option<f64> {
    let mean = m.fusion_delay?.mean;
    let base = base?;
    (mean > 0.0).then(|| base / mean)
}

fn rows(columns: &[(String, MetricsSummary)]) -> Vec<Row> {
    let col = |f: &dyn Fn(&MetricsSummary) -> Option<f64>| columns.iter().map(|(_, m)| f(m)).collect::<Vec<_>>();
    let base = baseline_delay(columns);
    let mut rows = vec![
        Row { name: "frames".into(), cells: col(&|m| Some(m.frame_count as f64)), digits: 0 },
        Row { name: "fused bundles".into(), cells: col(&|m| Some(m.fusion_count as f64)), digits: 0 },
        Row { name: "fusion %".into(), cells: col(&|m| Some(m.fusion_percent)), digits: 2 },
        Row { name: "delay mean ms".into(), cells: col(&|m| m.fusion_delay.map(|d| d.mean)), digits: 1 },
        Row { name: "delay p50 ms".into(), cells: col(&|m| m.fusion_delay.map(|d| d.p50)), digits: 1 },
        Row { name: "delay p99 ms".into(), cells: col(&|m| m.fusion_delay.map(|d| d.p99)), digits: 1 },
        Row { name: "delay range ms".into(), cells: col(&|m| m.fusion_delay.map(|d| d.range)), digits: 1 },
        Row { name: "delay speedup".into(), cells: col(&|m| speedup(base, m)), digits: 2 },
    ];
    for task in TASKS {
        rows.push(Row {
            name: format!("processed {task}"),
            cells: col(&|m| m.processed.get(&task).map(|&n| n as f64)),
            digits: 0,
        });
    }
    for task in TASKS {
        rows.push(Row {
            name: format!("dc {task}"),
            cells: col(&|m| m.detection_completeness.get(&task).copied().flatten()),
            digits: 3,
        });
    }
    rows.push(Row { name: "dc average".into(), cells: col(&|m| m.avg_dc), digits: 3 });
    rows.push(Row {
        name: "cost-effectiveness (scaled)".into(),
        cells: col(&|m| m.cost_effectiveness_scaled),
        digits: 3,
    });
    rows
}

pub fn render(columns: &[(String, MetricsSummary)]) -> String {
    let rows = rows(columns);
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let cell = |v: Option<f64>, d: usize| v.map_or("-".to_string(), |x| format!("{x:.d$}"));
    let col_w: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, (label, _))| {
            rows.iter()
                .map(|r| cell(r.cells[i], r.digits).len())
                .chain([label.len()])
                .max()
                .unwrap_or(1)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "metric");
    for ((label, _), w) in columns.iter().zip(&col_w) {
        let _ = write!(out, "  {label:>w$}");
    }
    out.push('\n');
    for r in &rows {
        let _ = write!(out, "{:<name_w$}", r.name);
        for (v, w) in r.cells.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$}", cell(*v, r.digits));
        }
        out.push('\n');
    }
    out
}

/// Writes `comparison.json` (full metrics per column) and `comparison.csv`
/// (the table rows).
pub fn write_machine(columns: &[(String, MetricsSummary)], dir: &Path) -> Result<(), Error> {
    let base = baseline_delay(columns);
    let cmp = Comparison {
        columns: columns
            .iter()
            .map(|(label, m)| Column { label, delay_speedup: speedup(base, m), metrics: m })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&cmp)?;
    json.push(b'\n');
    std::fs::write(dir.join("comparison.json"), json)?;

    let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
    let mut header = vec!["metric".to_string()];
    header.extend(columns.iter().map(|(l, _)| l.clone()));
    w.write_record(&header)?;
    for r in rows(columns) {
        let mut rec = vec![r.name];
        rec.extend(r.cells.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
