//! Deterministic simulator and library for a perception control plane:
//! critical-frame and ROI selection, FLOPs-aware dispatch of three inference
//! tasks, detection prediction for skipped frames, and approximate-time
//! fusion, with completeness and delay metrics over detection traces.

pub mod config;
pub mod dispatch;
pub mod error;
pub mod eval;
pub mod flops;
pub mod fusion;
pub mod geom;
pub mod keyframe;
pub mod predictor;
pub mod sim;
pub mod similarity;
pub mod traceio;
pub mod tracker;

pub use error::{Error, Result};
pub use geom::{iou, BBox, ClassId, Detection, FrameRecord, SegBox, TaskId};
