//! Detection predictor: serves every frame from cached critical-frame results
//! updated with the tracker's boxes and velocities.

use std::collections::VecDeque;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox, Detection, SegBox, TaskId};
use crate::tracker::{advance, TrackerOutput};

pub const CACHE_CAPACITY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum Payload {
    Detections(Vec<Detection>),
    Lanes(Vec<SegBox>),
    Segments(Vec<SegBox>),
}

impl Payload {
    pub fn empty_for(task: TaskId) -> Self {
        match task {
            TaskId::ObjectDetection => Payload::Detections(Vec::new()),
            TaskId::LaneDetection => Payload::Lanes(Vec::new()),
            TaskId::Segmentation => Payload::Segments(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Detections(d) => d.len(),
            Payload::Lanes(s) | Payload::Segments(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Boxes with scores; segmentation extents count as fully confident.
    pub fn scored_boxes(&self) -> Vec<(BBox, f64)> {
        match self {
            Payload::Detections(d) => d.iter().map(|d| (d.bbox, d.score)).collect(),
            Payload::Lanes(s) | Payload::Segments(s) => s.iter().map(|s| (s.bbox, 1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Inference,
    Predicted,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Inference => "inference",
            Provenance::Predicted => "predicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub frame_seq: u64,
    pub timestamp_us: u64,
    pub payload: Payload,
}

/// Bounded, frame-ordered history of inference results for one task.
#[derive(Debug, Clone, Default)]
pub struct DetectionCache {
    entries: VecDeque<CacheEntry>,
}

impl DetectionCache {
    pub fn new() -> Self {
        DetectionCache::default()
    }

    pub fn insert(&mut self, entry: CacheEntry) {
        let pos = self
            .entries
            .iter()
            .rposition(|e| e.frame_seq <= entry.frame_seq)
            .map_or(0, |p| p + 1);
        self.entries.insert(pos, entry);
        while self.entries.len() > CACHE_CAPACITY {
            self.entries.pop_front();
        }
    }

    pub fn newest(&self) -> Option<&CacheEntry> {
        self.entries.back()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }
}

/// Cache shared between the inference writer and prediction readers.
/// Readers always see whole entries.
#[derive(Debug, Clone, Default)]
pub struct SharedDetectionCache(Arc<RwLock<DetectionCache>>);

impl SharedDetectionCache {
    pub fn new() -> Self {
        SharedDetectionCache::default()
    }

    pub fn insert(&self, entry: CacheEntry) {
        self.0.write().expect("cache lock poisoned").insert(entry);
    }

    pub fn newest(&self) -> Option<CacheEntry> {
        self.0.read().expect("cache lock poisoned").newest().cloned()
    }

    pub fn snapshot(&self) -> DetectionCache {
        self.0.read().expect("cache lock poisoned").clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiddleBand {
    /// Leave the cached box as is when 0.1 <= IoU <= 0.5.
    Keep,
    /// Treat the band like a confident match.
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub predicted_score: f64,
    pub middle_band: MiddleBand,
    pub replace_iou: f64,
    pub append_iou: f64,
    pub segment_match_iou: f64,
    /// Time from frame arrival to publication of its predicted outputs.
    pub publish_latency_ms: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            predicted_score: 0.51,
            middle_band: MiddleBand::Keep,
            replace_iou: 0.5,
            append_iou: 0.1,
            segment_match_iou: 0.5,
            publish_latency_ms: 20.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.predicted_score) {
            return Err(Error::config("predictor.predicted_score", "must lie in [0,1]"));
        }
        if !(self.append_iou <= self.replace_iou) {
            return Err(Error::config(
                "predictor.append_iou",
                "must not exceed replace_iou",
            ));
        }
        if !(self.publish_latency_ms >= 0.0) {
            return Err(Error::config(
                "predictor.publish_latency_ms",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

fn max_iou(target: &BBox, boxes: impl Iterator<Item = BBox>) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, b) in boxes.enumerate() {
        let v = iou(target, &b);
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, i));
        }
    }
    best
}

/// Updates the newest cached detections with the currently observed tracks.
pub fn predict_boxes(
    cache: &DetectionCache,
    tracker_out: &TrackerOutput,
    cfg: &PredictorConfig,
) -> Result<Vec<Detection>> {
    let cached = match cache.newest().map(|e| &e.payload) {
        Some(Payload::Detections(d)) => d,
        _ => return Err(Error::EmptyCache(TaskId::ObjectDetection)),
    };
    let mut out = cached.clone();
    let mut replacement: Vec<Option<(f64, BBox)>> = vec![None; cached.len()];
    let mut appended = Vec::new();

    for track in tracker_out.observed() {
        let best = max_iou(&track.bbox, cached.iter().map(|d| d.bbox));
        let (v, idx) = best.unwrap_or((0.0, 0));
        let replace = v > cfg.replace_iou
            || (cfg.middle_band == MiddleBand::Replace && v >= cfg.append_iou && !cached.is_empty());
        if replace {
            if replacement[idx].is_none_or(|(bv, _)| v > bv) {
                replacement[idx] = Some((v, track.bbox));
            }
        } else if v < cfg.append_iou {
            appended.push(Detection {
                class_id: track.class_id,
                bbox: track.bbox,
                score: cfg.predicted_score,
            });
        }
    }
    for (det, rep) in out.iter_mut().zip(replacement) {
        if let Some((_, bbox)) = rep {
            det.bbox = bbox;
        }
    }
    out.extend(appended);
    Ok(out)
}

/// Moves each cached segmentation extent by the velocity of its best-matching
/// observed track.
pub fn predict_segmentation(
    cache: &DetectionCache,
    tracker_out: &TrackerOutput,
    cfg: &PredictorConfig,
    width: u32,
    height: u32,
) -> Result<Vec<SegBox>> {
    let cached = match cache.newest().map(|e| &e.payload) {
        Some(Payload::Segments(s)) => s,
        _ => return Err(Error::EmptyCache(TaskId::Segmentation)),
    };
    let observed: Vec<_> = tracker_out.observed().collect();
    Ok(cached
        .iter()
        .map(|seg| {
            let best = max_iou(&seg.bbox, observed.iter().map(|t| t.bbox));
            match best {
                Some((v, i)) if v > cfg.segment_match_iou => SegBox {
                    class_id: seg.class_id,
                    bbox: advance(&seg.bbox, &observed[i].velocity, width, height),
                },
                _ => *seg,
            }
        })
        .collect())
}

/// Lanes change little between frames; the newest result is reused.
pub fn predict_lanes(cache: &DetectionCache) -> Result<Payload> {
    match cache.newest() {
        Some(e) => Ok(e.payload.clone()),
        None => Err(Error::EmptyCache(TaskId::LaneDetection)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedOutput {
    pub frame_seq: u64,
    pub timestamp_us: u64,
    pub task: TaskId,
    pub payload: Payload,
    pub provenance: Provenance,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ClassId;
    use crate::tracker::{Track, Velocity};

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn det_cache(dets: Vec<Detection>) -> DetectionCache {
        let mut c = DetectionCache::new();
        c.insert(CacheEntry {
            frame_seq: 0,
            timestamp_us: 0,
            payload: Payload::Detections(dets),
        });
        c
    }

    fn seg_cache(segs: Vec<SegBox>) -> DetectionCache {
        let mut c = DetectionCache::new();
        c.insert(CacheEntry {
            frame_seq: 0,
            timestamp_us: 0,
            payload: Payload::Segments(segs),
        });
        c
    }

    fn tracks(items: &[(BBox, Velocity)]) -> TrackerOutput {
        TrackerOutput {
            tracked: items
                .iter()
                .enumerate()
                .map(|(i, (bb, v))| Track {
                    id: i as u64,
                    bbox: *bb,
                    velocity: *v,
                    age: 1,
                    miss_count: 0,
                    class_id: ClassId::Vehicle,
                })
                .collect(),
            matched_count: items.len(),
            missed_count: 0,
            new_count: 0,
            mean_tracked_iou: 1.0,
        }
    }

    fn car(bbox: BBox, score: f64) -> Detection {
        Detection::new(ClassId::Vehicle, bbox, score).unwrap()
    }

    #[test]
    fn identical_track_keeps_cached_score() {
        let cache = det_cache(vec![car(b(10, 10, 20, 20), 0.8)]);
        let out = predict_boxes(&cache, &tracks(&[(b(10, 10, 20, 20), Velocity::default())]), &PredictorConfig::default())
            .unwrap();
        assert_eq!(out, vec![car(b(10, 10, 20, 20), 0.8)]);
    }

    #[test]
    fn confident_match_takes_tracked_box() {
        let cache = det_cache(vec![car(b(10, 10, 20, 20), 0.8)]);
        let out = predict_boxes(&cache, &tracks(&[(b(12, 10, 20, 20), Velocity::default())]), &PredictorConfig::default())
            .unwrap();
        assert_eq!(out, vec![car(b(12, 10, 20, 20), 0.8)]);
    }

    #[test]
    fn disjoint_track_is_appended() {
        let cache = det_cache(vec![car(b(10, 10, 20, 20), 0.8)]);
        let out = predict_boxes(&cache, &tracks(&[(b(100, 100, 20, 20), Velocity::default())]), &PredictorConfig::default())
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], car(b(10, 10, 20, 20), 0.8));
        assert_eq!(out[1].bbox, b(100, 100, 20, 20));
        assert_eq!(out[1].score, 0.51);
    }

    #[test]
    fn middle_band_leaves_cache_alone() {
        let cached = b(0, 0, 20, 10);
        let tracked = b(10, 0, 20, 10);
        let v = iou(&cached, &tracked);
        assert!(v > 0.1 && v <= 0.5, "{v}");
        let cache = det_cache(vec![car(cached, 0.9)]);
        let t = tracks(&[(tracked, Velocity::default())]);
        let out = predict_boxes(&cache, &t, &PredictorConfig::default()).unwrap();
        assert_eq!(out, vec![car(cached, 0.9)]);

        let replace = PredictorConfig {
            middle_band: MiddleBand::Replace,
            ..PredictorConfig::default()
        };
        let out = predict_boxes(&cache, &t, &replace).unwrap();
        assert_eq!(out, vec![car(tracked, 0.9)]);
    }

    #[test]
    fn empty_cache_is_an_error() {
        let t = tracks(&[]);
        let cfg = PredictorConfig::default();
        assert!(matches!(
            predict_boxes(&DetectionCache::new(), &t, &cfg),
            Err(Error::EmptyCache(TaskId::ObjectDetection))
        ));
        assert!(predict_segmentation(&DetectionCache::new(), &t, &cfg, 10, 10).is_err());
        assert!(predict_lanes(&DetectionCache::new()).is_err());
    }

    #[test]
    fn segmentation_examples() {
        let cfg = PredictorConfig::default();
        let seg = SegBox {
            class_id: ClassId::Vehicle,
            bbox: b(10, 10, 20, 20),
        };
        let cache = seg_cache(vec![seg]);

        let still = tracks(&[(b(10, 10, 20, 20), Velocity::default())]);
        assert_eq!(predict_segmentation(&cache, &still, &cfg, 200, 200).unwrap(), vec![seg]);

        let moving = tracks(&[(b(10, 10, 20, 20), Velocity::new(2.0, 3.0, 2.0, 1.0))]);
        let out = predict_segmentation(&cache, &moving, &cfg, 200, 200).unwrap();
        // (x=12, y=13, h=22, w=21)
        assert_eq!(out[0].bbox, b(12, 13, 21, 22));

        let elsewhere = tracks(&[(b(150, 150, 20, 20), Velocity::new(5.0, 5.0, 0.0, 0.0))]);
        assert_eq!(predict_segmentation(&cache, &elsewhere, &cfg, 200, 200).unwrap(), vec![seg]);
    }

    #[test]
    fn lanes_use_newest_and_ring_evicts() {
        let lane = |i: u32| Payload::Lanes(vec![SegBox {
            class_id: ClassId::Other,
            bbox: b(i, 0, 1, 1),
        }]);
        let mut cache = DetectionCache::new();
        cache.insert(CacheEntry {
            frame_seq: 0,
            timestamp_us: 0,
            payload: lane(0),
        });
        assert_eq!(predict_lanes(&cache).unwrap(), lane(0));
        cache.insert(CacheEntry {
            frame_seq: 1,
            timestamp_us: 1,
            payload: lane(1),
        });
        assert_eq!(predict_lanes(&cache).unwrap(), lane(1));
        for i in 2..12 {
            cache.insert(CacheEntry {
                frame_seq: i as u64,
                timestamp_us: i as u64,
                payload: lane(i),
            });
        }
        assert_eq!(cache.len(), CACHE_CAPACITY);
        assert_eq!(cache.iter().next().unwrap().frame_seq, 2);
        assert_eq!(predict_lanes(&cache).unwrap(), lane(11));
    }

    #[test]
    fn shared_cache_readers_see_whole_entries() {
        let shared = SharedDetectionCache::new();
        let writer = shared.clone();
        let handle = std::thread::spawn(move || {
            for i in 0..200u32 {
                writer.insert(CacheEntry {
                    frame_seq: i as u64,
                    timestamp_us: i as u64,
                    payload: Payload::Lanes(vec![
                        SegBox {
                            class_id: ClassId::Other,
                            bbox: b(i, 0, 1, 1),
                        };
                        3
                    ]),
                });
            }
        });
        for _ in 0..200 {
            if let Some(e) = shared.newest() {
                assert_eq!(e.payload.len(), 3);
            }
        }
        handle.join().unwrap();
        assert_eq!(shared.newest().unwrap().frame_seq, 199);
        assert_eq!(shared.snapshot().len(), CACHE_CAPACITY);
    }
}
