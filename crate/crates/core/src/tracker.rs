//! IoU-greedy multi-object tracker with constant-velocity prediction.

use serde::{Deserialize, Serialize};

use crate::geom::{iou, BBox, ClassId, Detection};

/// Per-frame box change `(dx, dy, dh, dw)` in pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Velocity {
    pub dx: f64,
    pub dy: f64,
    pub dh: f64,
    pub dw: f64,
}

impl Velocity {
    pub fn new(dx: f64, dy: f64, dh: f64, dw: f64) -> Self {
        Velocity { dx, dy, dh, dw }
    }

    /// Difference between two consecutive boxes of the same object.
    pub fn between(prev: &BBox, cur: &BBox) -> Self {
        Velocity {
            dx: cur.x() as f64 - prev.x() as f64,
            dy: cur.y() as f64 - prev.y() as f64,
            dh: cur.h() as f64 - prev.h() as f64,
            dw: cur.w() as f64 - prev.w() as f64,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.dh == 0.0 && self.dw == 0.0
    }
}

/// Applies one velocity step to `bbox`, flooring the extent at one pixel and
/// keeping the result inside the frame.
pub fn advance(bbox: &BBox, v: &Velocity, width: u32, height: u32) -> BBox {
    let w = (bbox.w() as f64 + v.dw).round().max(1.0) as i64;
    let h = (bbox.h() as f64 + v.dh).round().max(1.0) as i64;
    let x = (bbox.x() as f64 + v.dx).round() as i64;
    let y = (bbox.y() as f64 + v.dy).round() as i64;
    let (fw, fh) = (width.max(1) as i64, height.max(1) as i64);

    let x0 = x.max(0);
    let y0 = y.max(0);
    let x1 = (x + w).min(fw);
    let y1 = (y + h).min(fh);
    if x0 < x1 && y0 < y1 {
        return BBox::from_corners(x0 as u32, y0 as u32, x1 as u32, y1 as u32)
            .expect("non-empty corners");
    }
    // Entirely outside: pin to the nearest frame edge.
    let px = x.clamp(0, fw - 1);
    let py = y.clamp(0, fh - 1);
    let pw = w.min(fw - px).max(1);
    let ph = h.min(fh - py).max(1);
    BBox::new(px as u32, py as u32, pw as u32, ph as u32).expect("pinned box")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub bbox: BBox,
    pub velocity: Velocity,
    pub age: u32,
    pub miss_count: u32,
    pub class_id: ClassId,
}

impl Track {
    pub fn predict(&self, width: u32, height: u32) -> BBox {
        advance(&self.bbox, &self.velocity, width, height)
    }

    /// Seen in the most recent frame.
    pub fn is_observed(&self) -> bool {
        self.miss_count == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub match_threshold: f64,
    pub max_misses: u32,
    /// Exponential smoothing factor for velocities; `None` keeps the raw
    /// one-frame difference.
    pub smoothing: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            match_threshold: 0.3,
            max_misses: 3,
            smoothing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerOutput {
    /// Every live track after the update, ordered by id.
    pub tracked: Vec<Track>,
    pub matched_count: usize,
    pub missed_count: usize,
    pub new_count: usize,
    /// Mean IoU between predicted and detected boxes of matched pairs; 1.0
    /// when nothing matched.
    pub mean_tracked_iou: f64,
}

impl TrackerOutput {
    pub fn observed(&self) -> impl Iterator<Item = &Track> {
        self.tracked.iter().filter(|t| t.is_observed())
    }
}

/// Highest-score-first matching. Pairs below `threshold` are never matched.
/// Ties break towards the lower row, then the lower column.
pub fn greedy_match(scores: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (r, row) in scores.iter().enumerate() {
        for (c, &s) in row.iter().enumerate() {
            if s >= threshold {
                pairs.push((s, r, c));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let cols = scores.iter().map(Vec::len).max().unwrap_or(0);
    let mut row_used = vec![false; scores.len()];
    let mut col_used = vec![false; cols];
    let mut out = Vec::new();
    for (_, r, c) in pairs {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            out.push((r, c));
        }
    }
    out
}

/// Single-stream tracker; calls must be serialized by the owner.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    width: u32,
    height: u32,
    tracks: Vec<Track>,
    next_id: u64,
    last_seq: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, width: u32, height: u32) -> Self {
        Tracker {
            cfg,
            width,
            height,
            tracks: Vec::new(),
            next_id: 0,
            last_seq: None,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, detections: &[Detection], frame_seq: u64) -> TrackerOutput {
        debug_assert!(self.last_seq.is_none_or(|s| frame_seq > s));
        self.last_seq = Some(frame_seq);

        let predicted: Vec<BBox> = self
            .tracks
            .iter()
            .map(|t| t.predict(self.width, self.height))
            .collect();
        let scores: Vec<Vec<f64>> = predicted
            .iter()
            .map(|p| detections.iter().map(|d| iou(p, &d.bbox)).collect())
            .collect();
        let matches = greedy_match(&scores, self.cfg.match_threshold);

        let mut det_taken = vec![false; detections.len()];
        let mut track_hit = vec![None; self.tracks.len()];
        let mut iou_sum = 0.0;
        for &(ti, di) in &matches {
            det_taken[di] = true;
            track_hit[ti] = Some(di);
            iou_sum += scores[ti][di];
        }

        let mut missed = 0;
        for (ti, track) in self.tracks.iter_mut().enumerate() {
            track.age += 1;
            match track_hit[ti] {
                Some(di) => {
                    let det = &detections[di];
                    let raw = Velocity::between(&track.bbox, &det.bbox);
                    track.velocity = match self.cfg.smoothing {
                        Some(a) => Velocity {
                            dx: a * raw.dx + (1.0 - a) * track.velocity.dx,
                            dy: a * raw.dy + (1.0 - a) * track.velocity.dy,
                            dh: a * raw.dh + (1.0 - a) * track.velocity.dh,
                            dw: a * raw.dw + (1.0 - a) * track.velocity.dw,
                        },
                        None => raw,
                    };
                    track.bbox = det.bbox;
                    track.class_id = det.class_id;
                    track.miss_count = 0;
                }
                None => {
                    missed += 1;
                    track.miss_count += 1;
                    track.bbox = predicted[ti];
                }
            }
        }
        let max_misses = self.cfg.max_misses;
        self.tracks.retain(|t| t.miss_count <= max_misses);

        let mut new_count = 0;
        for (di, det) in detections.iter().enumerate() {
            if det_taken[di] {
                continue;
            }
            self.tracks.push(Track {
                id: self.next_id,
                bbox: det.bbox,
                velocity: Velocity::default(),
                age: 0,
                miss_count: 0,
                class_id: det.class_id,
            });
            self.next_id += 1;
            new_count += 1;
        }

        TrackerOutput {
            tracked: self.tracks.clone(),
            matched_count: matches.len(),
            missed_count: missed,
            new_count,
            mean_tracked_iou: if matches.is_empty() {
                1.0
            } else {
                iou_sum / matches.len() as f64
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn det(bbox: BBox) -> Detection {
        Detection::new(ClassId::Vehicle, bbox, 0.9).unwrap()
    }

    #[test]
    fn cold_start_spawns_tracks() {
        let mut t = Tracker::new(TrackerConfig::default(), 100, 100);
        let out = t.step(&[det(b(0, 0, 10, 10)), det(b(50, 50, 10, 10))], 0);
        assert_eq!(out.new_count, 2);
        assert_eq!(out.tracked.len(), 2);
        assert!(out.tracked.iter().all(|t| t.velocity.is_zero()));
    }

    #[test]
    fn velocity_is_box_difference() {
        let mut t = Tracker::new(TrackerConfig::default(), 200, 200);
        t.step(&[det(b(10, 10, 20, 20))], 0);
        // (x=12, y=13, h=22, w=21)
        let out = t.step(&[det(b(12, 13, 21, 22))], 1);
        assert_eq!(out.matched_count, 1);
        assert_eq!(out.tracked[0].velocity, Velocity::new(2.0, 3.0, 2.0, 1.0));
    }

    #[test]
    fn greedy_matrix_example() {
        // rows t1..t3, cols d1..d3
        let scores = vec![
            vec![0.9, 0.6, 0.0],
            vec![0.0, 0.8, 0.0],
            vec![0.0, 0.0, 0.2],
        ];
        let m = greedy_match(&scores, 0.5);
        assert_eq!(m, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn predict_examples() {
        let track = |bbox, v| Track {
            id: 0,
            bbox,
            velocity: v,
            age: 0,
            miss_count: 0,
            class_id: ClassId::Vehicle,
        };
        let still = track(b(10, 10, 20, 20), Velocity::default());
        assert_eq!(still.predict(100, 100), b(10, 10, 20, 20));
        let moving = track(b(10, 10, 20, 20), Velocity::new(2.0, 3.0, 2.0, 1.0));
        assert_eq!(moving.predict(100, 100), b(12, 13, 21, 22));
        let shrinking = track(b(0, 0, 10, 10), Velocity::new(-5.0, 0.0, -20.0, 0.0));
        let p = shrinking.predict(100, 100);
        assert_eq!(p.h(), 1);
        assert!(p.fits_in(100, 100));
    }

    #[test]
    fn identical_detections_converge() {
        let mut t = Tracker::new(TrackerConfig::default(), 300, 300);
        let dets = vec![det(b(10, 10, 30, 30)), det(b(100, 100, 40, 20))];
        t.step(&dets, 0);
        let out = t.step(&dets, 1);
        assert!(out.tracked.iter().all(|t| t.velocity.is_zero()));
        assert_eq!(out.mean_tracked_iou, 1.0);
    }

    #[test]
    fn tracks_retire_after_max_misses() {
        let mut t = Tracker::new(TrackerConfig::default(), 100, 100);
        t.step(&[det(b(0, 0, 10, 10))], 0);
        for seq in 1..=3 {
            let out = t.step(&[], seq);
            assert_eq!(out.missed_count, 1);
            assert_eq!(out.tracked.len(), 1);
        }
        let out = t.step(&[], 4);
        assert!(out.tracked.is_empty());
        // ids never reused
        let out = t.step(&[det(b(0, 0, 10, 10))], 5);
        assert_eq!(out.tracked[0].id, 1);
    }
}
