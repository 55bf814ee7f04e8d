//! Critical-frame selection and ROI construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{clip, union_cover, BBox, ClassId, Detection, FrameRecord};
use crate::similarity::{ssim, SsimParams, Thumbnail};
use crate::tracker::TrackerOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeConfig {
    pub ssim_threshold: f64,
    /// Frame is critical when more than this many tracks were missed.
    pub miss_threshold: usize,
    pub tracked_iou_threshold: f64,
    /// Apply the mean tracked-IoU test in addition to the miss count.
    pub use_tracked_iou: bool,
    pub interval_deadline_ms: f64,
    pub pedestrian_ratio_threshold: f64,
    pub stationary_ratio_epsilon: f64,
    /// Pixels added on every side of a tracked box before clipping.
    pub roi_margin: u32,
    /// Build the single ROI as `(min x, min y, max h, max w)` instead of the
    /// covering rectangle.
    pub literal_one_roi: bool,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        KeyframeConfig {
            ssim_threshold: 0.95,
            miss_threshold: 1,
            tracked_iou_threshold: 0.5,
            use_tracked_iou: true,
            interval_deadline_ms: 500.0,
            pedestrian_ratio_threshold: 0.5,
            stationary_ratio_epsilon: 0.05,
            roi_margin: 8,
            literal_one_roi: false,
        }
    }
}

impl KeyframeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ssim_threshold) {
            return Err(Error::config("keyframe.ssim_threshold", "must lie in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.tracked_iou_threshold) {
            return Err(Error::config(
                "keyframe.tracked_iou_threshold",
                "must lie in [0,1]",
            ));
        }
        if !(self.interval_deadline_ms >= 0.0) {
            return Err(Error::config(
                "keyframe.interval_deadline_ms",
                "must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.pedestrian_ratio_threshold) {
            return Err(Error::config(
                "keyframe.pedestrian_ratio_threshold",
                "must lie in [0,1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.stationary_ratio_epsilon) {
            return Err(Error::config(
                "keyframe.stationary_ratio_epsilon",
                "must lie in [0,1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSnapshot {
    pub moving_ratio: f64,
    pub stationary_ratio: f64,
    pub pedestrian_ratio: f64,
    pub safety_critical: bool,
}

/// Ratios over confident detections (score > 0.5). The pedestrian ratio is
/// taken among moving objects.
pub fn classify_scenario(detections: &[Detection], cfg: &KeyframeConfig) -> ScenarioSnapshot {
    let confident: Vec<&Detection> = detections.iter().filter(|d| d.score > 0.5).collect();
    if confident.is_empty() {
        return ScenarioSnapshot::default();
    }
    let total = confident.len() as f64;
    let moving = confident.iter().filter(|d| d.class_id.is_moving()).count();
    let stationary = confident.iter().filter(|d| d.class_id.is_stationary()).count();
    let pedestrians = confident
        .iter()
        .filter(|d| d.class_id == ClassId::Pedestrian)
        .count();
    let pedestrian_ratio = if moving == 0 {
        0.0
    } else {
        pedestrians as f64 / moving as f64
    };
    ScenarioSnapshot {
        moving_ratio: moving as f64 / total,
        stationary_ratio: stationary as f64 / total,
        pedestrian_ratio,
        safety_critical: pedestrian_ratio > cfg.pedestrian_ratio_threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    OneRoi,
    MultiRoi,
    FullFrame,
}

/// A crop decision: one covering rectangle, several object boxes, or the
/// whole frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoiSet {
    mode: RoiMode,
    boxes: Vec<BBox>,
}

impl RoiSet {
    pub fn one(bbox: BBox) -> Self {
        RoiSet {
            mode: RoiMode::OneRoi,
            boxes: vec![bbox],
        }
    }

    /// Panics on an empty list; callers build these from at least one box.
    pub fn multi(boxes: Vec<BBox>) -> Self {
        assert!(!boxes.is_empty(), "multi-ROI set needs at least one box");
        RoiSet {
            mode: RoiMode::MultiRoi,
            boxes,
        }
    }

    pub fn full_frame(width: u32, height: u32) -> Self {
        RoiSet {
            mode: RoiMode::FullFrame,
            boxes: vec![BBox::full_frame(width.max(1), height.max(1)).expect("non-empty frame")],
        }
    }

    pub fn mode(&self) -> RoiMode {
        self.mode
    }

    pub fn boxes(&self) -> &[BBox] {
        &self.boxes
    }

    pub fn covers(&self, bbox: &BBox) -> bool {
        self.boxes.iter().any(|r| r.intersects(bbox))
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.boxes.iter().all(|b| b.fits_in(width, height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalReason {
    Interval,
    Scenario,
    Ssim,
    Misses,
    NotCritical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeDecision {
    pub frame_seq: u64,
    pub is_critical: bool,
    pub reason: CriticalReason,
    pub ssim: Option<f64>,
    /// `(one ROI, multi ROI)`; present only for critical frames.
    pub roi_candidates: Option<(RoiSet, RoiSet)>,
}

/// Evaluates the critical-frame cascade for one frame.
///
/// `elapsed_ms` is the time since the last critical frame, `None` when
/// there has been none. `prev_thumbnail` is the thumbnail of frame `seq-1`.
pub fn decide(
    frame: &FrameRecord,
    prev_thumbnail: Option<&Thumbnail>,
    tracker_out: &TrackerOutput,
    elapsed_ms: Option<f64>,
    scenario: &ScenarioSnapshot,
    cfg: &KeyframeConfig,
    ssim_params: &SsimParams,
) -> Result<KeyframeDecision> {
    let mut score = None;
    let reason = if elapsed_ms.is_none_or(|e| e > cfg.interval_deadline_ms) {
        CriticalReason::Interval
    } else if scenario.safety_critical {
        CriticalReason::Scenario
    } else {
        let s = match prev_thumbnail {
            Some(prev) => ssim(&frame.thumbnail, prev, ssim_params)?,
            None => 0.0,
        };
        score = Some(s);
        if s < cfg.ssim_threshold {
            CriticalReason::Ssim
        } else if tracker_out.missed_count > cfg.miss_threshold
            || (cfg.use_tracked_iou && tracker_out.mean_tracked_iou < cfg.tracked_iou_threshold)
        {
            CriticalReason::Misses
        } else {
            CriticalReason::NotCritical
        }
    };
    let is_critical = reason != CriticalReason::NotCritical;
    Ok(KeyframeDecision {
        frame_seq: frame.seq,
        is_critical,
        reason,
        ssim: score,
        roi_candidates: is_critical.then(|| build_rois(tracker_out, scenario, frame, cfg)),
    })
}

/// Builds the `(one ROI, multi ROI)` candidates from the live tracks.
pub fn build_rois(
    tracker_out: &TrackerOutput,
    scenario: &ScenarioSnapshot,
    frame: &FrameRecord,
    cfg: &KeyframeConfig,
) -> (RoiSet, RoiSet) {
    let (width, height) = (frame.width, frame.height);
    let full = RoiSet::full_frame(width, height);
    let padded: Vec<(ClassId, BBox)> = tracker_out
        .tracked
        .iter()
        .filter_map(|t| {
            clip(&t.bbox.pad(cfg.roi_margin), width, height)
                .ok()
                .map(|b| (t.class_id, b))
        })
        .collect();
    if padded.is_empty() {
        return (full.clone(), full);
    }
    let boxes: Vec<BBox> = padded.iter().map(|(_, b)| *b).collect();

    let one = if scenario.safety_critical {
        full
    } else if cfg.literal_one_roi {
        let x = boxes.iter().map(BBox::x).min().unwrap_or(0);
        let y = boxes.iter().map(BBox::y).min().unwrap_or(0);
        let w = boxes.iter().map(BBox::w).max().unwrap_or(1);
        let h = boxes.iter().map(BBox::h).max().unwrap_or(1);
        let literal = BBox::new(x, y, w, h).expect("positive extent");
        RoiSet::one(clip(&literal, width, height).expect("origin lies inside frame"))
    } else {
        RoiSet::one(union_cover(&boxes).expect("non-empty"))
    };

    let mut multi = boxes;
    if scenario.stationary_ratio > cfg.stationary_ratio_epsilon {
        let stationary: Vec<BBox> = padded
            .iter()
            .filter(|(c, _)| c.is_stationary())
            .map(|(_, b)| *b)
            .collect();
        if let Ok(cover) = union_cover(&stationary) {
            multi.push(cover);
        }
    }
    (one, RoiSet::multi(multi))
}

/// Per-stream selector state: previous thumbnail and last critical time.
#[derive(Debug, Clone)]
pub struct KeyframeSelector {
    cfg: KeyframeConfig,
    ssim_params: SsimParams,
    prev: Option<(u64, Thumbnail)>,
    last_critical_us: Option<u64>,
}

impl KeyframeSelector {
    pub fn new(cfg: KeyframeConfig, ssim_params: SsimParams) -> Self {
        KeyframeSelector {
            cfg,
            ssim_params,
            prev: None,
            last_critical_us: None,
        }
    }

    pub fn config(&self) -> &KeyframeConfig {
        &self.cfg
    }

    pub fn observe(
        &mut self,
        frame: &FrameRecord,
        tracker_out: &TrackerOutput,
        scenario: &ScenarioSnapshot,
    ) -> Result<KeyframeDecision> {
        let prev = self
            .prev
            .as_ref()
            .filter(|(seq, _)| *seq + 1 == frame.seq)
            .map(|(_, t)| t);
        let elapsed = self
            .last_critical_us
            .map(|t| frame.timestamp_us.saturating_sub(t) as f64 / 1000.0);
        let decision = decide(
            frame,
            prev,
            tracker_out,
            elapsed,
            scenario,
            &self.cfg,
            &self.ssim_params,
        )?;
        if decision.is_critical {
            self.last_critical_us = Some(frame.timestamp_us);
        }
        self.prev = Some((frame.seq, frame.thumbnail.clone()));
        Ok(decision)
    }
}
