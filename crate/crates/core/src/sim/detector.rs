//! Stand-in for DNN outputs: ground truth seen through the dispatched ROIs,
//! with random misses and box jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{clip, BBox, ClassId, Detection, FrameRecord, SegBox, TaskId};
use crate::keyframe::RoiSet;
use crate::predictor::Payload;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorEmulator {
    pub dropout_rate: f64,
    pub jitter_px: u32,
}

impl Default for DetectorEmulator {
    fn default() -> Self {
        DetectorEmulator {
            dropout_rate: 0.02,
            jitter_px: 2,
        }
    }
}

impl DetectorEmulator {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("{field}.dropout_rate"), "must lie in [0,1]"));
        }
        Ok(())
    }

    fn perturb<R: Rng + ?Sized>(&self, b: &BBox, width: u32, height: u32, rng: &mut R) -> Option<BBox> {
        if self.dropout_rate > 0.0 && rng.random_bool(self.dropout_rate) {
            return None;
        }
        if self.jitter_px == 0 {
            return Some(*b);
        }
        let j = self.jitter_px as i64;
        let mut d = [0i64; 4];
        for v in &mut d {
            *v = rng.random_range(-j..=j);
        }
        let x = (b.x() as i64 + d[0]).max(0) as u32;
        let y = (b.y() as i64 + d[1]).max(0) as u32;
        let w = (b.w() as i64 + d[2]).max(1) as u32;
        let h = (b.h() as i64 + d[3]).max(1) as u32;
        BBox::new(x, y, w, h).ok().and_then(|b| clip(&b, width, height).ok())
    }

    /// Confident truths that intersect any ROI box, after dropout and jitter.
    pub fn detect<R: Rng + ?Sized>(&self, frame: &FrameRecord, rois: &RoiSet, rng: &mut R) -> Vec<Detection> {
        frame
            .truths
            .iter()
            .filter(|d| rois.boxes().iter().any(|r| r.intersects(&d.bbox)))
            .filter_map(|d| {
                self.perturb(&d.bbox, frame.width, frame.height, rng).map(|bbox| Detection {
                    class_id: d.class_id,
                    bbox,
                    score: d.score,
                })
            })
            .collect()
    }

    fn segments<'a, R: Rng + ?Sized>(
        &self,
        frame: &FrameRecord,
        segs: impl Iterator<Item = &'a SegBox>,
        rois: &RoiSet,
        rng: &mut R,
    ) -> Vec<SegBox> {
        segs.filter(|s| rois.boxes().iter().any(|r| r.intersects(&s.bbox)))
            .filter_map(|s| {
                self.perturb(&s.bbox, frame.width, frame.height, rng).map(|bbox| SegBox {
                    class_id: s.class_id,
                    bbox,
                })
            })
            .collect()
    }

    /// Emulated output of `task` on `frame` cropped to `rois`.
    pub fn infer<R: Rng + ?Sized>(&self, task: TaskId, frame: &FrameRecord, rois: &RoiSet, rng: &mut R) -> Payload {
        match task {
            TaskId::ObjectDetection => Payload::Detections(self.detect(frame, rois, rng)),
            TaskId::LaneDetection => Payload::Lanes(self.segments(
                frame,
                frame.seg_boxes.iter().filter(|s| s.class_id == ClassId::Other),
                rois,
                rng,
            )),
            TaskId::Segmentation => Payload::Segments(self.segments(frame, frame.seg_boxes.iter(), rois, rng)),
        }
    }
}
