//! Frame dispatcher: routes critical frames to tasks using shared progress
//! state.
//!
//! Rules, in strict priority order:
//! 1. a task that missed its deadline receives the frame exclusively;
//! 2. a safety-critical frame is broadcast to every task;
//! 3. otherwise a task is skipped when its sequence gap to its latest
//!    output exceeds its delay threshold.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::TaskId;
use crate::keyframe::{RoiSet, ScenarioSnapshot};

/// Frames a task may lag behind before new frames are dropped for it.
pub fn compute_threshold(deadline_ms: f64, fps: f64) -> u64 {
    let frames = (deadline_ms * fps / 1000.0).floor();
    if frames.is_finite() && frames >= 1.0 {
        frames as u64
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispatchConfig {
    /// Per-frame deadline applied to every task unless overridden.
    pub deadline_ms: f64,
    pub object_detection_deadline_ms: Option<f64>,
    pub lane_detection_deadline_ms: Option<f64>,
    pub segmentation_deadline_ms: Option<f64>,
    /// Rule 1 routes to every missed task rather than only the most overdue.
    pub route_all_missed: bool,
    /// Flag an idle task whose latest output has fallen behind its threshold
    /// as having missed its deadline.
    pub stale_watchdog: bool,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            deadline_ms: 200.0,
            object_detection_deadline_ms: None,
            lane_detection_deadline_ms: None,
            segmentation_deadline_ms: None,
            route_all_missed: true,
            stale_watchdog: true,
        }
    }
}

impl DispatchConfig {
    pub fn deadline_for(&self, task: TaskId) -> f64 {
        match task {
            TaskId::ObjectDetection => self.object_detection_deadline_ms,
            TaskId::LaneDetection => self.lane_detection_deadline_ms,
            TaskId::Segmentation => self.segmentation_deadline_ms,
        }
        .unwrap_or(self.deadline_ms)
    }

    pub fn validate(&self) -> Result<()> {
        for task in TaskId::ALL {
            if !(self.deadline_for(task) > 0.0) {
                return Err(Error::config(
                    format!("dispatch.{task}_deadline_ms"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub task: TaskId,
    pub last_output_seq: Option<u64>,
    pub last_dispatch_seq: Option<u64>,
    pub deadline_ms: f64,
    pub deadline_missed: bool,
    pub delay_threshold_frames: u64,
}

impl TaskProgress {
    pub fn new(task: TaskId, deadline_ms: f64, fps: f64) -> Self {
        TaskProgress {
            task,
            last_output_seq: None,
            last_dispatch_seq: None,
            deadline_ms,
            deadline_missed: false,
            delay_threshold_frames: compute_threshold(deadline_ms, fps),
        }
    }

    /// Sequence gap between `frame_seq` and the latest completed output.
    pub fn delay(&self, frame_seq: u64) -> Option<u64> {
        self.last_output_seq.map(|s| frame_seq.saturating_sub(s))
    }

    pub fn is_idle(&self) -> bool {
        self.last_dispatch_seq == self.last_output_seq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DeadlineMissed,
    SafetyCritical,
    DelayThreshold,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::DeadlineMissed => "deadline_missed",
            Rule::SafetyCritical => "safety_critical",
            Rule::DelayThreshold => "delay_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Dispatch(RoiSet),
    Drop,
}

impl Action {
    pub fn is_dispatch(&self) -> bool {
        matches!(self, Action::Dispatch(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDecision {
    pub action: Action,
    /// Gap to the last output at decision time; `None` before any output.
    pub delay: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchDecision {
    pub frame_seq: u64,
    pub rule: Rule,
    pub per_task: BTreeMap<TaskId, TaskDecision>,
}

impl DispatchDecision {
    pub fn dispatched(&self) -> impl Iterator<Item = (TaskId, &RoiSet)> {
        self.per_task.iter().filter_map(|(t, d)| match &d.action {
            Action::Dispatch(r) => Some((*t, r)),
            Action::Drop => None,
        })
    }
}

/// One row of the dispatch audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub frame_seq: u64,
    pub task: TaskId,
    pub action: String,
    pub rule: Rule,
    pub delay: Option<u64>,
}

impl DispatchDecision {
    pub fn audit_rows(&self) -> Vec<AuditRow> {
        self.per_task
            .iter()
            .map(|(task, d)| AuditRow {
                frame_seq: self.frame_seq,
                task: *task,
                action: if d.action.is_dispatch() { "dispatch" } else { "drop" }.to_string(),
                rule: self.rule,
                delay: d.delay,
            })
            .collect()
    }
}

pub fn write_audit_csv<W: Write>(rows: &[AuditRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_audit_csv<R: std::io::Read>(input: R) -> Result<Vec<AuditRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Shared progress state plus the routing rules. `dispatch` and
/// `record_completion` take `&mut self`, so callers sharing a dispatcher
/// across stages serialize through a lock.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    cfg: DispatchConfig,
    state: BTreeMap<TaskId, TaskProgress>,
    last_frame: Option<u64>,
}

impl Dispatcher {
    pub fn new(cfg: DispatchConfig, fps: f64) -> Self {
        let state = TaskId::ALL
            .into_iter()
            .map(|t| (t, TaskProgress::new(t, cfg.deadline_for(t), fps)))
            .collect();
        Dispatcher {
            cfg,
            state,
            last_frame: None,
        }
    }

    /// Builds a dispatcher over an explicit state map (which may be partial).
    pub fn with_state(cfg: DispatchConfig, state: BTreeMap<TaskId, TaskProgress>) -> Self {
        Dispatcher {
            cfg,
            state,
            last_frame: None,
        }
    }

    pub fn state(&self) -> &BTreeMap<TaskId, TaskProgress> {
        &self.state
    }

    pub fn progress(&self, task: TaskId) -> Result<&TaskProgress> {
        self.state.get(&task).ok_or(Error::MissingTask(task))
    }

    pub fn dispatch(
        &mut self,
        frame_seq: u64,
        rois: &BTreeMap<TaskId, RoiSet>,
        scenario: &ScenarioSnapshot,
    ) -> Result<DispatchDecision> {
        for task in TaskId::ALL {
            if !self.state.contains_key(&task) || !rois.contains_key(&task) {
                return Err(Error::MissingTask(task));
            }
        }
        if self.last_frame.is_some_and(|l| frame_seq <= l) {
            return Err(Error::AlreadyDispatched { frame_seq });
        }
        self.last_frame = Some(frame_seq);

        if self.cfg.stale_watchdog {
            for p in self.state.values_mut() {
                if p.is_idle() && p.delay(frame_seq).is_some_and(|d| d > p.delay_threshold_frames) {
                    p.deadline_missed = true;
                }
            }
        }

        let missed: Vec<TaskId> = self
            .state
            .values()
            .filter(|p| p.deadline_missed)
            .map(|p| p.task)
            .collect();
        let (rule, receivers): (Rule, Vec<TaskId>) = if !missed.is_empty() {
            let chosen = if self.cfg.route_all_missed {
                missed
            } else {
                // most overdue first; ties to the lower task id
                let pick = missed
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        let da = self.state[a].delay(frame_seq).unwrap_or(0);
                        let db = self.state[b].delay(frame_seq).unwrap_or(0);
                        da.cmp(&db).then(b.cmp(a))
                    })
                    .expect("non-empty");
                vec![pick]
            };
            (Rule::DeadlineMissed, chosen)
        } else if scenario.safety_critical {
            (Rule::SafetyCritical, TaskId::ALL.to_vec())
        } else {
            let keep = self
                .state
                .values()
                .filter(|p| p.delay(frame_seq).is_none_or(|d| d <= p.delay_threshold_frames))
                .map(|p| p.task)
                .collect();
            (Rule::DelayThreshold, keep)
        };

        let mut per_task = BTreeMap::new();
        for task in TaskId::ALL {
            let p = self.state.get_mut(&task).expect("checked above");
            let delay = p.delay(frame_seq);
            let action = if receivers.contains(&task) {
                p.last_dispatch_seq = Some(frame_seq);
                Action::Dispatch(rois[&task].clone())
            } else {
                Action::Drop
            };
            per_task.insert(task, TaskDecision { action, delay });
        }
        Ok(DispatchDecision {
            frame_seq,
            rule,
            per_task,
        })
    }

    /// Records a finished inference. The deadline flag is set when the
    /// result arrived later than the task's deadline after frame capture and
    /// cleared by the next on-time completion.
    pub fn record_completion(
        &mut self,
        task: TaskId,
        frame_seq: u64,
        frame_timestamp_ms: f64,
        finished_at_ms: f64,
    ) -> Result<()> {
        let p = self.state.get_mut(&task).ok_or(Error::MissingTask(task))?;
        if let Some(last) = p.last_output_seq {
            if frame_seq < last {
                return Err(Error::SequenceRegression {
                    task,
                    got: frame_seq,
                    last,
                });
            }
        }
        p.last_output_seq = Some(frame_seq);
        if p.last_dispatch_seq.is_none_or(|d| d < frame_seq) {
            p.last_dispatch_seq = Some(frame_seq);
        }
        p.deadline_missed = finished_at_ms - frame_timestamp_ms > p.deadline_ms;
        Ok(())
    }
}
