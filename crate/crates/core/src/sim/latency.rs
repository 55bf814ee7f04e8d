//! FLOPs-driven service-time model standing in for GPU inference.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{predict_roiset, FlopsModel};
use crate::geom::TaskId;
use crate::keyframe::RoiSet;

/// Per-task mean latencies on full 1280x720 frames used for the default model.
pub const REFERENCE_TARGETS_MS: [(TaskId, f64); 3] = [
    (TaskId::ObjectDetection, 257.4),
    (TaskId::LaneDetection, 311.2),
    (TaskId::Segmentation, 366.2),
];

pub const DEFAULT_BASE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskLatency {
    pub base_ms: f64,
    pub ms_per_gmac: f64,
}

impl Default for TaskLatency {
    fn default() -> Self {
        TaskLatency {
            base_ms: 0.0,
            ms_per_gmac: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub object_detection: TaskLatency,
    pub lane_detection: TaskLatency,
    pub segmentation: TaskLatency,
    pub noise_stddev_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        let targets: BTreeMap<TaskId, f64> = REFERENCE_TARGETS_MS.into_iter().collect();
        let reference = [RoiSet::full_frame(1280, 720)];
        let mut lm = calibrate(&targets, &reference, &FlopsModel::default(), DEFAULT_BASE_FRACTION)
            .expect("reference targets are positive");
        lm.noise_stddev_ms = 5.0;
        lm
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        LatencyModel {
            object_detection: TaskLatency::default(),
            lane_detection: TaskLatency::default(),
            segmentation: TaskLatency::default(),
            noise_stddev_ms: 0.0,
        }
    }

    pub fn task(&self, task: TaskId) -> &TaskLatency {
        match task {
            TaskId::ObjectDetection => &self.object_detection,
            TaskId::LaneDetection => &self.lane_detection,
            TaskId::Segmentation => &self.segmentation,
        }
    }

    pub fn task_mut(&mut self, task: TaskId) -> &mut TaskLatency {
        match task {
            TaskId::ObjectDetection => &mut self.object_detection,
            TaskId::LaneDetection => &mut self.lane_detection,
            TaskId::Segmentation => &mut self.segmentation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for task in TaskId::ALL {
            let t = self.task(task);
            if !(t.base_ms >= 0.0 && t.base_ms.is_finite()) {
                return Err(Error::config(format!("latency.{task}.base_ms"), "must be non-negative"));
            }
            if !(t.ms_per_gmac >= 0.0 && t.ms_per_gmac.is_finite()) {
                return Err(Error::config(
                    format!("latency.{task}.ms_per_gmac"),
                    "must be non-negative",
                ));
            }
        }
        if !(self.noise_stddev_ms >= 0.0 && self.noise_stddev_ms.is_finite()) {
            return Err(Error::config("latency.noise_stddev_ms", "must be non-negative"));
        }
        Ok(())
    }
}

/// Deterministic part of the service time, before noise.
pub fn mean_service_ms(task: TaskId, rois: &RoiSet, lm: &LatencyModel, m: &FlopsModel) -> f64 {
    let t = lm.task(task);
    t.base_ms + t.ms_per_gmac * predict_roiset(rois, task, m)
}

/// Samples one service time in milliseconds; Gaussian noise, truncated at 0.
pub fn service_time<R: Rng + ?Sized>(
    task: TaskId,
    rois: &RoiSet,
    lm: &LatencyModel,
    m: &FlopsModel,
    rng: &mut R,
) -> f64 {
    let mean = mean_service_ms(task, rois, lm, m);
    let noise = if lm.noise_stddev_ms > 0.0 {
        Normal::new(0.0, lm.noise_stddev_ms)
            .expect("validated stddev")
            .sample(rng)
    } else {
        0.0
    };
    (mean + noise).max(0.0)
}

/// Solves `base + k * mean(GMACs) = target` per task with
/// `base = base_fraction * target`. A reference stream with no compute puts
/// the whole target in the base.
pub fn calibrate(
    targets: &BTreeMap<TaskId, f64>,
    reference: &[RoiSet],
    m: &FlopsModel,
    base_fraction: f64,
) -> Result<LatencyModel> {
    if !(0.0..=1.0).contains(&base_fraction) {
        return Err(Error::config("latency.base_fraction", "must lie in [0,1]"));
    }
    let mut lm = LatencyModel::zero();
    for task in TaskId::ALL {
        let target = *targets.get(&task).ok_or(Error::MissingTask(task))?;
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::config(
                format!("latency.{task}.target_ms"),
                "must be positive",
            ));
        }
        let mean_gmacs = if reference.is_empty() {
            0.0
        } else {
            reference.iter().map(|r| predict_roiset(r, task, m)).sum::<f64>() / reference.len() as f64
        };
        let t = lm.task_mut(task);
        if mean_gmacs > 0.0 {
            t.base_ms = base_fraction * target;
            t.ms_per_gmac = (target - t.base_ms) / mean_gmacs;
        } else {
            t.base_ms = target;
        }
    }
    Ok(lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn targets(v: f64) -> BTreeMap<TaskId, f64> {
        TaskId::ALL.into_iter().map(|t| (t, v)).collect()
    }

    #[test]
    fn zero_model_gives_base() {
        let mut lm = LatencyModel::zero();
        lm.lane_detection.base_ms = 12.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = RoiSet::full_frame(1280, 720);
        assert_eq!(service_time(TaskId::LaneDetection, &r, &lm, &FlopsModel::default(), &mut rng), 12.5);
    }

    #[test]
    fn lane_full_frame_arithmetic() {
        let mut lm = LatencyModel::zero();
        lm.lane_detection = TaskLatency {
            base_ms: 10.0,
            ms_per_gmac: 100.0,
        };
        let m = FlopsModel {
            a1: 1e-6,
            ..FlopsModel::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = RoiSet::full_frame(1280, 720);
        let t = service_time(TaskId::LaneDetection, &r, &lm, &m, &mut rng);
        assert!((t - 102.16).abs() < 1e-9);
    }

    #[test]
    fn seeded_noise_repeats() {
        let lm = LatencyModel::default();
        let r = RoiSet::full_frame(1280, 720);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| service_time(TaskId::Segmentation, &r, &lm, &FlopsModel::default(), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn calibrate_linear_solve() {
        // a linear task with 1 GMAC per reference ROI
        let m = FlopsModel {
            a1: 1.0,
            a2: 1.0,
            ..FlopsModel::default()
        };
        let r = RoiSet::one(crate::geom::BBox::new(0, 0, 1, 1).unwrap());
        let lm = calibrate(&targets(100.0), &[r], &m, 0.2).unwrap();
        assert_eq!(lm.lane_detection.base_ms, 20.0);
        assert_eq!(lm.lane_detection.ms_per_gmac, 80.0);
    }

    #[test]
    fn calibrate_zero_stream_all_base() {
        let lm = calibrate(&targets(50.0), &[], &FlopsModel::default(), 0.2).unwrap();
        for task in TaskId::ALL {
            assert_eq!(lm.task(task).base_ms, 50.0);
            assert_eq!(lm.task(task).ms_per_gmac, 0.0);
        }
        assert!(calibrate(&targets(0.0), &[], &FlopsModel::default(), 0.2).is_err());
    }
}
