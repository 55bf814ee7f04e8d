//! Geometric and stream domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::Thumbnail;

/// Axis-aligned pixel rectangle, top-left origin.
///
/// Width and height are always at least one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidBox(format!("zero extent {w}x{h}")));
        }
        if x.checked_add(w).is_none() || y.checked_add(h).is_none() {
            return Err(Error::InvalidBox("extent overflows".into()));
        }
        Ok(BBox { x, y, w, h })
    }

    /// Box covering `[x0, x1) x [y0, y1)`.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidBox(format!(
                "empty corners ({x0},{y0})-({x1},{y1})"
            )));
        }
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn full_frame(width: u32, height: u32) -> Result<Self> {
        BBox::new(0, 0, width, height)
    }

    pub fn x(&self) -> u32 {
        self.x
    }
    pub fn y(&self) -> u32 {
        self.y
    }
    pub fn w(&self) -> u32 {
        self.w
    }
    pub fn h(&self) -> u32 {
        self.h
    }
    pub fn right(&self) -> u32 {
        self.x + self.w
    }
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let ix = self.right().min(other.right()).saturating_sub(self.x.max(other.x));
        let iy = self.bottom().min(other.bottom()).saturating_sub(self.y.max(other.y));
        ix as u64 * iy as u64
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && self.right() >= other.right()
            && self.bottom() >= other.bottom()
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// Grows the box by `margin` pixels on every side, saturating at the
    /// origin. The result is not clipped.
    pub fn pad(&self, margin: u32) -> BBox {
        let x = self.x.saturating_sub(margin);
        let y = self.y.saturating_sub(margin);
        let right = self.right().saturating_add(margin);
        let bottom = self.bottom().saturating_add(margin);
        BBox {
            x,
            y,
            w: right - x,
            h: bottom - y,
        }
    }

    /// Shifts by a signed offset. Returns `None` when the result would leave
    /// the non-negative quadrant.
    pub fn translate(&self, dx: i64, dy: i64) -> Option<BBox> {
        let x = u32::try_from(self.x as i64 + dx).ok()?;
        let y = u32::try_from(self.y as i64 + dy).ok()?;
        BBox::new(x, y, self.w, self.h).ok()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},w={},h={})", self.x, self.y, self.w, self.h)
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Intersection over union. Boxes that only touch along an edge score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Smallest rectangle containing every box.
pub fn union_cover(boxes: &[BBox]) -> Result<BBox> {
    let first = boxes.first().ok_or(Error::NoBoxes)?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.right(), first.bottom());
    for b in &boxes[1..] {
        x0 = x0.min(b.x);
        y0 = y0.min(b.y);
        x1 = x1.max(b.right());
        y1 = y1.max(b.bottom());
    }
    BBox::from_corners(x0, y0, x1, y1)
}

/// Intersects `bbox` with the `[0,width] x [0,height]` frame.
pub fn clip(bbox: &BBox, width: u32, height: u32) -> Result<BBox> {
    let x1 = bbox.right().min(width);
    let y1 = bbox.bottom().min(height);
    if bbox.x >= x1 || bbox.y >= y1 {
        return Err(Error::OutsideFrame);
    }
    BBox::from_corners(bbox.x, bbox.y, x1, y1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassId {
    Vehicle,
    Pedestrian,
    Bicycle,
    TrafficSign,
    TrafficLight,
    Other,
}

impl ClassId {
    pub const ALL: [ClassId; 6] = [
        ClassId::Vehicle,
        ClassId::Pedestrian,
        ClassId::Bicycle,
        ClassId::TrafficSign,
        ClassId::TrafficLight,
        ClassId::Other,
    ];

    pub fn is_moving(self) -> bool {
        matches!(
            self,
            ClassId::Vehicle | ClassId::Pedestrian | ClassId::Bicycle
        )
    }

    pub fn is_stationary(self) -> bool {
        matches!(self, ClassId::TrafficSign | ClassId::TrafficLight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    #[serde(rename = "class")]
    pub class_id: ClassId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    class: ClassId,
    #[serde(rename = "box")]
    bbox: BBox,
    score: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = Error;

    fn try_from(raw: RawDetection) -> Result<Self> {
        Detection::new(raw.class, raw.bbox, raw.score)
    }
}

impl Detection {
    pub fn new(class_id: ClassId, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0,1]")));
        }
        Ok(Detection {
            class_id,
            bbox,
            score,
        })
    }
}

/// Per-class extent standing in for a segmentation mask region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegBox {
    #[serde(rename = "class")]
    pub class_id: ClassId,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    ObjectDetection,
    LaneDetection,
    Segmentation,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [
        TaskId::ObjectDetection,
        TaskId::LaneDetection,
        TaskId::Segmentation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::ObjectDetection => "object_detection",
            TaskId::LaneDetection => "lane_detection",
            TaskId::Segmentation => "segmentation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config("task", format!("unknown task `{s}`")))
    }
}

/// One timestamped camera frame with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub seq: u64,
    pub timestamp_us: u64,
    pub width: u32,
    pub height: u32,
    pub thumbnail: Thumbnail,
    pub truths: Vec<Detection>,
    pub seg_boxes: Vec<SegBox>,
}

impl FrameRecord {
    pub fn timestamp_ms(&self) -> f64 {
        self.timestamp_us as f64 / 1000.0
    }

    pub fn frame_box(&self) -> BBox {
        BBox {
            x: 0,
            y: 0,
            w: self.width.max(1),
            h: self.height.max(1),
        }
    }

    /// Segmentation extents that belong to the lane/drivable band.
    pub fn lane_boxes(&self) -> impl Iterator<Item = &SegBox> {
        self.seg_boxes
            .iter()
            .filter(|s| s.class_id == ClassId::Other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = b(3, 4, 10, 12);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&b(0, 0, 10, 10), &b(100, 100, 5, 5)), 0.0);
        let v = iou(&b(0, 0, 10, 10), &b(5, 0, 10, 10));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn touching_edges_have_zero_iou() {
        assert_eq!(iou(&b(0, 0, 10, 10), &b(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(BBox::new(0, 0, 0, 5).is_err());
        assert!(BBox::new(0, 0, 5, 0).is_err());
        assert!(serde_json::from_str::<BBox>("[0,0,0,1]").is_err());
    }

    #[test]
    fn union_cover_examples() {
        assert_eq!(union_cover(&[b(0, 0, 10, 10)]).unwrap(), b(0, 0, 10, 10));
        assert_eq!(
            union_cover(&[b(0, 0, 10, 10), b(20, 30, 8, 5)]).unwrap(),
            b(0, 0, 28, 35)
        );
        assert_eq!(
            union_cover(&[b(5, 5, 10, 10), b(0, 0, 20, 20)]).unwrap(),
            b(0, 0, 20, 20)
        );
        assert!(matches!(union_cover(&[]), Err(Error::NoBoxes)));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&b(0, 0, 10, 10), 100, 100).unwrap(), b(0, 0, 10, 10));
        assert_eq!(clip(&b(95, 0, 10, 10), 100, 100).unwrap(), b(95, 0, 5, 10));
        assert!(matches!(
            clip(&b(200, 200, 10, 10), 100, 100),
            Err(Error::OutsideFrame)
        ));
    }

    #[test]
    fn detection_score_range() {
        assert!(Detection::new(ClassId::Vehicle, b(0, 0, 1, 1), 1.2).is_err());
        assert!(serde_json::from_str::<Detection>(
            r#"{"class":"vehicle","box":[0,0,1,1],"score":-0.1}"#
        )
        .is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..200, 0u32..200, 1u32..80, 1u32..80).prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, a == c);
        }

        #[test]
        fn union_cover_contains_and_is_idempotent(boxes in prop::collection::vec(arb_box(), 1..8)) {
            let cover = union_cover(&boxes).unwrap();
            for bx in &boxes {
                prop_assert!(cover.contains(bx));
            }
            prop_assert_eq!(union_cover(&[cover]).unwrap(), cover);
            let clipped: Vec<BBox> = boxes.iter().filter_map(|bx| clip(bx, 150, 150).ok()).collect();
            if !clipped.is_empty() {
                prop_assert!(union_cover(&clipped).unwrap().fits_in(150, 150));
            }
        }
    }
}
