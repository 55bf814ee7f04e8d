//! Compute-cost model mapping ROI dimensions to predicted GMACs per task.
//!
//! The object detector rescales its input so the short side lands on
//! `s_min` (or the long side on `s_max`) and pads both sides up to a multiple
//! of `s_d`, which makes its cost piecewise in the aspect ratio. Lane
//! detection and segmentation run at native resolution and scale with the
//! pixel count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::TaskId;
use crate::keyframe::{RoiMode, RoiSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlopsModel {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub s_min: u64,
    pub s_max: u64,
    pub s_d: u64,
}

impl Default for FlopsModel {
    fn default() -> Self {
        FlopsModel {
            a0: 1e-6,
            a1: 5e-7,
            a2: 8e-7,
            s_min: 800,
            s_max: 1333,
            s_d: 32,
        }
    }
}

impl FlopsModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("flops.a0", self.a0), ("flops.a1", self.a1), ("flops.a2", self.a2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.s_min == 0 || self.s_min > self.s_max {
            return Err(Error::config("flops.s_min", "need 0 < s_min <= s_max"));
        }
        if self.s_d == 0 {
            return Err(Error::config("flops.s_d", "must be positive"));
        }
        Ok(())
    }

    pub fn coefficient(&self, task: TaskId) -> f64 {
        match task {
            TaskId::ObjectDetection => self.a0,
            TaskId::LaneDetection => self.a1,
            TaskId::Segmentation => self.a2,
        }
    }
}

/// Aspect-ratio regime of the object detector's resize step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectBranch {
    /// `h/w <= s_min/s_max`: long side pinned at `s_max`.
    WideClamped,
    /// `s_min/s_max <= h/w <= 1`: short side (height) pinned at `s_min`.
    Wide,
    /// `1 <= h/w <= s_max/s_min`: short side (width) pinned at `s_min`.
    Tall,
    /// `h/w >= s_max/s_min`: long side pinned at `s_max`.
    TallClamped,
}

fn ceil_div(num: u64, den: u64) -> u64 {
    num.div_ceil(den)
}

fn check_dims(h: i64, w: i64) -> Result<(u64, u64)> {
    if h <= 0 || w <= 0 {
        return Err(Error::NonPositiveDims { h, w });
    }
    Ok((h as u64, w as u64))
}

/// Branch selected for `(h, w)`; boundary ratios go to the lower-index branch.
pub fn object_branch(h: u64, w: u64, m: &FlopsModel) -> ObjectBranch {
    // Ratios compared by cross-multiplication to stay exact.
    if h * m.s_max <= m.s_min * w {
        ObjectBranch::WideClamped
    } else if h <= w {
        ObjectBranch::Wide
    } else if h * m.s_min <= m.s_max * w {
        ObjectBranch::Tall
    } else {
        ObjectBranch::TallClamped
    }
}

/// Padded grid cell count (`resized_h/s_d * resized_w/s_d`) for a given branch,
/// evaluated regardless of whether `(h, w)` lies in that branch.
pub fn object_cells(branch: ObjectBranch, h: u64, w: u64, m: &FlopsModel) -> u64 {
    let sd = m.s_d;
    match branch {
        ObjectBranch::WideClamped => ceil_div(m.s_max * h, w * sd) * ceil_div(m.s_max, sd),
        ObjectBranch::Wide => ceil_div(m.s_min, sd) * ceil_div(m.s_min * w, h * sd),
        ObjectBranch::Tall => ceil_div(m.s_min * h, w * sd) * ceil_div(m.s_min, sd),
        ObjectBranch::TallClamped => ceil_div(m.s_max, sd) * ceil_div(m.s_max * w, h * sd),
    }
}

pub fn object_branch_gmacs(branch: ObjectBranch, h: u64, w: u64, m: &FlopsModel) -> f64 {
    m.a0 * (object_cells(branch, h, w, m) * m.s_d * m.s_d) as f64
}

/// Predicted GMACs of the object detector on an `h x w` input.
pub fn flops_object(h: i64, w: i64, m: &FlopsModel) -> Result<f64> {
    let (h, w) = check_dims(h, w)?;
    Ok(object_branch_gmacs(object_branch(h, w, m), h, w, m))
}

/// Predicted GMACs of a resolution-linear model.
pub fn flops_linear(h: i64, w: i64, coeff: f64) -> Result<f64> {
    let (h, w) = check_dims(h, w)?;
    Ok(coeff * h as f64 * w as f64)
}

pub fn flops_task(task: TaskId, h: i64, w: i64, m: &FlopsModel) -> Result<f64> {
    match task {
        TaskId::ObjectDetection => flops_object(h, w, m),
        other => flops_linear(h, w, m.coefficient(other)),
    }
}

/// Cost of running `task` on an ROI set. Multiple ROIs are batched at the
/// size of the largest height and largest width among them.
pub fn predict_roiset(rois: &RoiSet, task: TaskId, m: &FlopsModel) -> f64 {
    let boxes = rois.boxes();
    let (h, w) = match rois.mode() {
        RoiMode::OneRoi | RoiMode::FullFrame => (boxes[0].h(), boxes[0].w()),
        RoiMode::MultiRoi => (
            boxes.iter().map(|b| b.h()).max().unwrap_or(1),
            boxes.iter().map(|b| b.w()).max().unwrap_or(1),
        ),
    };
    let per = flops_task(task, h as i64, w as i64, m).expect("ROI boxes have positive extent");
    per * boxes.len() as f64
}

/// Picks the cheaper candidate for `task`; ties favour the single ROI.
pub fn choose_roi<'a>(one: &'a RoiSet, multi: &'a RoiSet, task: TaskId, m: &FlopsModel) -> &'a RoiSet {
    if predict_roiset(multi, task, m) < predict_roiset(one, task, m) {
        multi
    } else {
        one
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BBox;

    fn m() -> FlopsModel {
        FlopsModel::default()
    }

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn object_examples() {
        let mm = FlopsModel { a0: 1.0, ..m() };
        assert_eq!(object_branch(600, 800, &mm), ObjectBranch::Wide);
        assert_eq!(flops_object(600, 800, &mm).unwrap(), 870_400.0);
        assert_eq!(flops_object(700, 700, &mm).unwrap(), 640_000.0);
        assert_eq!(
            object_branch_gmacs(ObjectBranch::Wide, 700, 700, &mm),
            object_branch_gmacs(ObjectBranch::Tall, 700, 700, &mm)
        );
        assert_eq!(
            object_cells(ObjectBranch::WideClamped, 800, 1333, &mm),
            25 * 42
        );
        assert_eq!(object_cells(ObjectBranch::Wide, 800, 1333, &mm), 25 * 42);
    }

    #[test]
    fn non_positive_dims_rejected() {
        assert!(flops_object(0, 10, &m()).is_err());
        assert!(flops_linear(5, -1, 1.0).is_err());
    }

    #[test]
    fn linear_examples() {
        assert_eq!(flops_linear(1, 1, 0.25).unwrap(), 0.25);
        assert!((flops_linear(720, 1280, 1e-6).unwrap() - 0.9216).abs() < 1e-12);
        assert_eq!(
            flops_linear(40, 30, 1e-3).unwrap() * 2.0,
            flops_linear(80, 30, 1e-3).unwrap()
        );
    }

    #[test]
    fn roiset_examples() {
        let mm = FlopsModel { a0: 1.0, a1: 1.0, ..m() };
        let one = RoiSet::one(b(0, 0, 800, 600));
        assert_eq!(predict_roiset(&one, TaskId::ObjectDetection, &mm), 870_400.0);

        let multi = RoiSet::multi(vec![b(0, 0, 50, 100), b(300, 0, 200, 40), b(0, 400, 10, 10)]);
        assert_eq!(predict_roiset(&multi, TaskId::LaneDetection, &mm), 60_000.0);

        let single = RoiSet::multi(vec![b(5, 5, 30, 40)]);
        for task in TaskId::ALL {
            assert_eq!(
                predict_roiset(&single, task, &mm),
                predict_roiset(&RoiSet::one(b(5, 5, 30, 40)), task, &mm)
            );
        }
    }

    #[test]
    fn choose_roi_examples() {
        let mm = m();
        let far = [b(0, 0, 50, 50), b(950, 950, 50, 50)];
        let one = RoiSet::one(crate::geom::union_cover(&far).unwrap());
        let multi = RoiSet::multi(far.to_vec());
        assert_eq!(choose_roi(&one, &multi, TaskId::LaneDetection, &mm), &multi);

        let near = [b(0, 0, 100, 100), b(10, 10, 100, 100)];
        let one = RoiSet::one(crate::geom::union_cover(&near).unwrap());
        let multi = RoiSet::multi(near.to_vec());
        assert_eq!(choose_roi(&one, &multi, TaskId::LaneDetection, &mm), &one);

        let same = RoiSet::multi(vec![b(0, 0, 10, 10)]);
        let one = RoiSet::one(b(0, 0, 10, 10));
        assert_eq!(choose_roi(&one, &same, TaskId::Segmentation, &mm), &one);
    }
}
