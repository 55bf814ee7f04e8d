//! Metrics over finished runs: detection completeness, fusion-delay
//! statistics, and cost-effectiveness.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox, TaskId};
use crate::sim::ReportData;
use crate::traceio::Trace;

/// Score above which an object counts, both offline and online.
pub const SCORE_CUT: f64 = 0.5;
pub const IOU_CUT: f64 = 0.5;

/// How the keyframe cursor follows the offline timestamps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvanceMode {
    /// At most one step per offline frame.
    #[default]
    Literal,
    /// Step until the keyframe is no older than the offline frame.
    CatchUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub timestamp_us: u64,
    pub boxes: Vec<(BBox, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompletenessInput {
    pub keyframes: Vec<ScoredFrame>,
    pub offline: Vec<ScoredFrame>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completeness {
    pub detected: u64,
    pub objects: u64,
}

impl Completeness {
    pub fn value(&self) -> Result<f64> {
        if self.objects == 0 {
            return Err(Error::NoScorableObjects);
        }
        Ok(self.detected as f64 / self.objects as f64)
    }
}

fn check_sorted(frames: &[ScoredFrame], what: &str) -> Result<()> {
    if frames.windows(2).any(|w| w[1].timestamp_us < w[0].timestamp_us) {
        return Err(Error::config(what, "timestamps must be non-decreasing"));
    }
    Ok(())
}

/// Best IoU against `candidates` and its index; the first maximum wins and
/// an empty list gives `(0, None)`.
pub fn max_iou(target: &BBox, candidates: &[(BBox, f64)]) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (i, (b, _)) in candidates.iter().enumerate() {
        let v = iou(target, b);
        if best.1.is_none() || v > best.0 {
            best = (v, Some(i));
        }
    }
    best
}

pub fn completeness_counts(input: &CompletenessInput, mode: AdvanceMode) -> Result<Completeness> {
    check_sorted(&input.keyframes, "keyframes")?;
    check_sorted(&input.offline, "offline")?;
    let keys = &input.keyframes;
    let mut counts = Completeness::default();
    let mut k = 0usize;
    for frame in &input.offline {
        let t = frame.timestamp_us;
        match mode {
            AdvanceMode::Literal => {
                if k + 1 < keys.len() && t > keys[k].timestamp_us {
                    k += 1;
                }
            }
            AdvanceMode::CatchUp => {
                while k + 1 < keys.len() && t > keys[k].timestamp_us {
                    k += 1;
                }
            }
        }
        let online: &[(BBox, f64)] = keys.get(k).map_or(&[], |f| &f.boxes);
        for (bbox, score) in &frame.boxes {
            if *score <= SCORE_CUT {
                continue;
            }
            counts.objects += 1;
            if let (v, Some(n)) = max_iou(bbox, online) {
                if v > IOU_CUT && online[n].1 > SCORE_CUT {
                    counts.detected += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Fraction of confident offline objects matched by the online results.
pub fn detection_completeness(input: &CompletenessInput, mode: AdvanceMode) -> Result<f64> {
    completeness_counts(input, mode)?.value()
}

/// Average fusion latency over fusion accuracy; lower is better.
pub fn cost_effectiveness(avg_latency_ms: f64, fusion_ratio: f64, avg_dc: f64) -> Result<f64> {
    if !(avg_latency_ms >= 0.0 && avg_latency_ms.is_finite()) {
        return Err(Error::config("avg_latency_ms", "must be finite and non-negative"));
    }
    if !(fusion_ratio > 0.0 && avg_dc > 0.0) || !fusion_ratio.is_finite() || !avg_dc.is_finite() {
        return Err(Error::ZeroDenominator);
    }
    Ok(avg_latency_ms / (fusion_ratio * avg_dc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

/// Nearest-rank percentile of an ascending sample, `p` in (0, 100].
pub fn nearest_rank(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn delay_stats(samples: &[f64]) -> Result<DelayStats> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("samples", "must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    Ok(DelayStats {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: nearest_rank(&sorted, 50.0)?,
        p99: nearest_rank(&sorted, 99.0)?,
        min,
        max,
        range: max - min,
    })
}

/// Empirical CDF as `(value, cumulative probability)` at each distinct value.
pub fn ecdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = p,
            _ => out.push((*v, p)),
        }
    }
    out
}

pub fn write_cdf_csv<W: Write>(points: &[(f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "cumulative_probability"])?;
    for (v, p) in points {
        w.write_record([v.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub advance: AdvanceMode,
    /// Multiplier applied to cost-effectiveness for presentation only.
    pub ce_scale: f64,
    pub dc_window_ms: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            advance: AdvanceMode::Literal,
            ce_scale: 1e-3,
            dc_window_ms: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mode: String,
    pub trace_hash: String,
    pub frame_count: u64,
    pub processed: BTreeMap<TaskId, u64>,
    pub fusion_count: u64,
    pub fusion_ratio: f64,
    pub fusion_percent: f64,
    pub fusion_delay: Option<DelayStats>,
    pub detection_completeness: BTreeMap<TaskId, Option<f64>>,
    pub avg_dc: Option<f64>,
    pub cost_effectiveness: Option<f64>,
    pub cost_effectiveness_scaled: Option<f64>,
    pub advance: AdvanceMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub summary: MetricsSummary,
    pub fusion_delays: Vec<f64>,
    /// Completeness per window of `dc_window_ms`, per task.
    pub dc_windows: BTreeMap<TaskId, Vec<f64>>,
}

/// Offline reference for `task`: the trace's ground truth.
pub fn offline_frames(trace: &Trace, task: TaskId) -> Vec<ScoredFrame> {
    trace
        .frames
        .iter()
        .map(|f| ScoredFrame {
            timestamp_us: f.timestamp_us,
            boxes: match task {
                TaskId::ObjectDetection => f.truths.iter().map(|d| (d.bbox, d.score)).collect(),
                TaskId::LaneDetection => f.lane_boxes().map(|s| (s.bbox, 1.0)).collect(),
                TaskId::Segmentation => f.seg_boxes.iter().map(|s| (s.bbox, 1.0)).collect(),
            },
        })
        .collect()
}

/// Published outputs of `task`, ordered by capture time.
pub fn online_frames(report: &ReportData, task: TaskId) -> Vec<ScoredFrame> {
    let mut out: Vec<ScoredFrame> = report
        .published
        .iter()
        .filter(|r| r.task == task)
        .map(|r| ScoredFrame {
            timestamp_us: r.timestamp_us,
            boxes: r.payload.scored_boxes(),
        })
        .collect();
    out.sort_by_key(|f| f.timestamp_us);
    out
}

fn windowed_dc(input: &CompletenessInput, window_us: u64, mode: AdvanceMode) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let Some(last) = input.offline.last() else {
        return Ok(out);
    };
    let mut start = 0u64;
    while start <= last.timestamp_us {
        let end = start + window_us;
        let slice = CompletenessInput {
            keyframes: input.keyframes.iter().filter(|f| f.timestamp_us >= start).cloned().collect(),
            offline: input
                .offline
                .iter()
                .filter(|f| (start..end).contains(&f.timestamp_us))
                .cloned()
                .collect(),
        };
        match detection_completeness(&slice, mode) {
            Ok(v) => out.push(v),
            Err(Error::NoScorableObjects) => {}
            Err(e) => return Err(e),
        }
        start = end;
    }
    Ok(out)
}

pub fn evaluate(report: &ReportData, trace: &Trace, cfg: &EvalConfig) -> Result<Evaluation> {
    if !(cfg.dc_window_ms > 0.0) {
        return Err(Error::config("eval.dc_window_ms", "must be positive"));
    }
    let s = &report.summary;
    let frames = trace.frames.len() as u64;
    let fusion_delays: Vec<f64> = report.fusion.iter().map(|r| r.fusion_delay_ms).collect();
    let fusion_delay = delay_stats(&fusion_delays).ok();
    let fusion_count = report.fusion.len() as u64;
    let fusion_ratio = if frames == 0 {
        0.0
    } else {
        fusion_count as f64 / frames as f64
    };

    let mut dc = BTreeMap::new();
    let mut dc_windows = BTreeMap::new();
    for task in TaskId::ALL {
        let input = CompletenessInput {
            keyframes: online_frames(report, task),
            offline: offline_frames(trace, task),
        };
        let v = match detection_completeness(&input, cfg.advance) {
            Ok(v) => Some(v),
            Err(Error::NoScorableObjects) => None,
            Err(e) => return Err(e),
        };
        dc.insert(task, v);
        let window_us = (cfg.dc_window_ms * 1000.0).round().max(1.0) as u64;
        dc_windows.insert(task, windowed_dc(&input, window_us, cfg.advance)?);
    }
    let scored: Vec<f64> = dc.values().flatten().copied().collect();
    let avg_dc = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    let ce = match (fusion_delay, avg_dc) {
        (Some(d), Some(a)) => cost_effectiveness(d.mean, fusion_ratio, a).ok(),
        _ => None,
    };
    Ok(Evaluation {
        summary: MetricsSummary {
            mode: s.mode.clone(),
            trace_hash: s.trace_hash.clone(),
            frame_count: frames,
            processed: s.processed.clone(),
            fusion_count,
            fusion_ratio,
            fusion_percent: 100.0 * fusion_ratio,
            fusion_delay,
            detection_completeness: dc,
            avg_dc,
            cost_effectiveness: ce,
            cost_effectiveness_scaled: ce.map(|v| v * cfg.ce_scale),
            advance: cfg.advance,
        },
        fusion_delays,
        dc_windows,
    })
}

pub const METRICS_JSON: &str = "metrics.json";
pub const CDF_FUSION_DELAY_CSV: &str = "cdf_fusion_delay.csv";
pub const CDF_DC_CSV: &str = "cdf_dc.csv";

/// Writes `metrics.json`, `cdf_fusion_delay.csv`, `cdf_dc.csv` (object task)
/// and `cdf_dc_<task>.csv` for the other tasks.
pub fn write_evaluation(ev: &Evaluation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(&ev.summary)?;
    json.push(b'\n');
    fs::write(dir.join(METRICS_JSON), json)?;
    let mut buf = Vec::new();
    write_cdf_csv(&ecdf(&ev.fusion_delays), &mut buf)?;
    fs::write(dir.join(CDF_FUSION_DELAY_CSV), &buf)?;
    for (task, samples) in &ev.dc_windows {
        buf.clear();
        write_cdf_csv(&ecdf(samples), &mut buf)?;
        let name = match task {
            TaskId::ObjectDetection => CDF_DC_CSV.to_string(),
            other => format!("cdf_dc_{other}.csv"),
        };
        fs::write(dir.join(name), &buf)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn frame(t: u64, boxes: Vec<(BBox, f64)>) -> ScoredFrame {
        ScoredFrame {
            timestamp_us: t,
            boxes,
        }
    }

    #[test]
    fn identical_is_complete() {
        let frames = vec![
            frame(0, vec![(b(0, 0, 10, 10), 0.9), (b(50, 50, 5, 5), 0.7)]),
            frame(10, vec![(b(3, 3, 10, 10), 0.9)]),
        ];
        let input = CompletenessInput {
            keyframes: frames.clone(),
            offline: frames,
        };
        for mode in [AdvanceMode::Literal, AdvanceMode::CatchUp] {
            assert_eq!(detection_completeness(&input, mode).unwrap(), 1.0);
        }
    }

    #[test]
    fn half_match() {
        let a = (b(0, 0, 10, 10), 0.9);
        let bb = (b(40, 40, 10, 10), 0.9);
        let input = CompletenessInput {
            keyframes: vec![frame(0, vec![a])],
            offline: vec![frame(0, vec![a, bb])],
        };
        assert_eq!(detection_completeness(&input, AdvanceMode::Literal).unwrap(), 0.5);
    }

    #[test]
    fn low_keyframe_scores_detect_nothing() {
        let input = CompletenessInput {
            keyframes: vec![frame(0, vec![(b(0, 0, 10, 10), 0.4)])],
            offline: vec![frame(0, vec![(b(0, 0, 10, 10), 0.9)])],
        };
        assert_eq!(detection_completeness(&input, AdvanceMode::Literal).unwrap(), 0.0);
    }

    #[test]
    fn no_objects_is_an_error() {
        let input = CompletenessInput {
            keyframes: vec![],
            offline: vec![frame(0, vec![(b(0, 0, 10, 10), 0.2)])],
        };
        assert!(matches!(
            detection_completeness(&input, AdvanceMode::Literal),
            Err(Error::NoScorableObjects)
        ));
    }

    #[test]
    fn empty_keyframes_count_as_missed() {
        let input = CompletenessInput {
            keyframes: vec![],
            offline: vec![frame(0, vec![(b(0, 0, 10, 10), 0.9)])],
        };
        assert_eq!(detection_completeness(&input, AdvanceMode::CatchUp).unwrap(), 0.0);
    }

    #[test]
    fn literal_lags_on_sparse_keyframes() {
        let x = (b(0, 0, 10, 10), 0.9);
        let y = (b(100, 100, 10, 10), 0.9);
        // two keyframes older than the only offline frame
        let input = CompletenessInput {
            keyframes: vec![frame(0, vec![x]), frame(5, vec![x]), frame(10, vec![y])],
            offline: vec![frame(10, vec![y])],
        };
        assert_eq!(detection_completeness(&input, AdvanceMode::Literal).unwrap(), 0.0);
        assert_eq!(detection_completeness(&input, AdvanceMode::CatchUp).unwrap(), 1.0);
    }

    #[test]
    fn cost_effectiveness_examples() {
        assert_eq!(cost_effectiveness(100.0, 1.0, 1.0).unwrap(), 100.0);
        let avg = (0.147 + 0.643 + 0.339) / 3.0;
        let v = cost_effectiveness(1988.8, 0.086, avg).unwrap();
        assert!((v - 61_450.0).abs() < 10.0, "{v}");
        assert_eq!(
            cost_effectiveness(50.0, 0.5, 0.5).unwrap() * 2.0,
            cost_effectiveness(100.0, 0.5, 0.5).unwrap()
        );
        assert!(matches!(cost_effectiveness(1.0, 0.0, 1.0), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn delay_stats_examples() {
        let one = delay_stats(&[100.0]).unwrap();
        assert_eq!((one.mean, one.p50, one.p99, one.min, one.max, one.range), (100.0, 100.0, 100.0, 100.0, 100.0, 0.0));
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(delay_stats(&hundred).unwrap().p99, 99.0);
        let s = delay_stats(&[432.0, 900.0, 1500.0, 2072.0]).unwrap();
        assert_eq!(s.range, 1640.0);
        assert!(matches!(delay_stats(&[]), Err(Error::EmptySample)));
    }

    #[test]
    fn ecdf_collapses_ties() {
        assert_eq!(ecdf(&[2.0, 1.0, 2.0, 3.0]), vec![(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]);
    }
}
