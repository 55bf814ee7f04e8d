//! Deterministic discrete-event replay of a trace through the perception
//! node graph: source, keyframe/ROI selection, dispatcher, three inference
//! tasks on non-preemptive executors, predictor, and fusion.
//!
//! All randomness comes from one seeded generator drawn in event order, and
//! events at equal times run in insertion order, so a run is a pure function
//! of `(trace, config)`.

mod detector;
mod latency;
mod report;

pub use detector::DetectorEmulator;
pub use latency::{
    calibrate, mean_service_ms, service_time, LatencyModel, TaskLatency, DEFAULT_BASE_FRACTION,
    REFERENCE_TARGETS_MS,
};
pub use report::{
    load_report_dir, parse_published_jsonl, summary_to_json, write_published_jsonl, write_report_dir,
    ProvenanceCounts, PublishedRecord, ReportData, ReportSummary, ServiceRecord, SimReport, DISPATCH_CSV,
    FUSION_CSV, PUBLISHED_JSONL, REPORT_JSON,
};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dispatch::{AuditRow, DispatchConfig, Dispatcher};
use crate::error::{Error, Result};
use crate::flops::{choose_roi, FlopsModel};
use crate::fusion::{FusionRow, Message, SyncConfig, Synchronizer};
use crate::geom::TaskId;
use crate::keyframe::{classify_scenario, KeyframeConfig, KeyframeSelector, RoiSet};
use crate::predictor::{
    predict_boxes, predict_lanes, predict_segmentation, CacheEntry, DetectionCache, Payload, PredictorConfig,
    Provenance,
};
use crate::similarity::SsimParams;
use crate::traceio::Trace;
use crate::tracker::{Tracker, TrackerConfig, TrackerOutput};

/// The five ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "fd")]
    Fd,
    #[serde(rename = "fd_fg")]
    FdFg,
    #[serde(rename = "fd_dp")]
    FdDp,
    #[serde(rename = "ppdnn")]
    Ppdnn,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::Fd, Mode::FdFg, Mode::FdDp, Mode::Ppdnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Fd => "fd",
            Mode::FdFg => "fd_fg",
            Mode::FdDp => "fd_dp",
            Mode::Ppdnn => "ppdnn",
        }
    }

    pub fn uses_dispatcher(self) -> bool {
        self != Mode::Baseline
    }

    /// Keyframe selection and ROI cropping.
    pub fn uses_keyframes(self) -> bool {
        matches!(self, Mode::FdFg | Mode::Ppdnn)
    }

    pub fn uses_predictor(self) -> bool {
        matches!(self, Mode::FdDp | Mode::Ppdnn)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "mode",
                    format!("unknown mode `{s}`; valid: baseline, fd, fd_fg, fd_dp, ppdnn"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    pub executor_count: usize,
    pub assignment: BTreeMap<TaskId, usize>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig::shared()
    }
}

impl ExecutorConfig {
    /// One GPU serving all three tasks.
    pub fn shared() -> Self {
        ExecutorConfig {
            executor_count: 1,
            assignment: TaskId::ALL.into_iter().map(|t| (t, 0)).collect(),
        }
    }

    /// One GPU per task.
    pub fn per_task() -> Self {
        ExecutorConfig {
            executor_count: 3,
            assignment: TaskId::ALL.into_iter().map(|t| (t, t.index())).collect(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "shared" => Ok(ExecutorConfig::shared()),
            "per_task" => Ok(ExecutorConfig::per_task()),
            other => Err(Error::config(
                "executors.preset",
                format!("unknown preset `{other}`; valid: shared, per_task"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.executor_count == 0 {
            return Err(Error::config("executors.executor_count", "must be at least 1"));
        }
        for task in TaskId::ALL {
            match self.assignment.get(&task) {
                None => return Err(Error::config(format!("executors.assignment.{task}"), "missing")),
                Some(&e) if e >= self.executor_count => {
                    return Err(Error::config(
                        format!("executors.assignment.{task}"),
                        format!("executor {e} out of range"),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    /// Per-task inbox depth when every frame is fanned out to every task.
    pub baseline_depth: usize,
    /// Per-task inbox depth behind the dispatcher.
    pub dispatch_depth: usize,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            baseline_depth: 100,
            dispatch_depth: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub keyframe: KeyframeConfig,
    pub ssim: SsimParams,
    pub tracker: TrackerConfig,
    pub flops: FlopsModel,
    pub dispatch: DispatchConfig,
    pub predictor: PredictorConfig,
    pub fusion: SyncConfig,
    pub latency: LatencyModel,
    pub executors: ExecutorConfig,
    pub queues: QueueConfig,
    /// Emulated output of the three inference tasks.
    pub detector: DetectorEmulator,
    /// Emulated per-frame lightweight detector feeding the tracker.
    pub tracker_detector: DetectorEmulator,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Ppdnn,
            seed: 0,
            keyframe: KeyframeConfig::default(),
            ssim: SsimParams::default(),
            tracker: TrackerConfig::default(),
            flops: FlopsModel::default(),
            dispatch: DispatchConfig::default(),
            predictor: PredictorConfig::default(),
            fusion: SyncConfig::default(),
            latency: LatencyModel::default(),
            executors: ExecutorConfig::default(),
            queues: QueueConfig::default(),
            detector: DetectorEmulator::default(),
            tracker_detector: DetectorEmulator {
                dropout_rate: 0.05,
                jitter_px: 1,
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.keyframe.validate()?;
        self.ssim.validate()?;
        self.flops.validate()?;
        self.dispatch.validate()?;
        self.predictor.validate()?;
        self.fusion.validate()?;
        self.latency.validate()?;
        self.executors.validate()?;
        self.detector.validate("detector")?;
        self.tracker_detector.validate("tracker_detector")?;
        if !(0.0..=1.0).contains(&self.tracker.match_threshold) {
            return Err(Error::config("tracker.match_threshold", "must lie in [0,1]"));
        }
        if self.queues.baseline_depth == 0 {
            return Err(Error::config("queues.baseline_depth", "must be at least 1"));
        }
        if self.queues.dispatch_depth == 0 {
            return Err(Error::config("queues.dispatch_depth", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum EventKind {
    FrameArrival(usize),
    InferenceComplete(usize),
    PublishPrediction { frame: usize, task: TaskId },
    FusionEmit { task: TaskId, msg: Message<()> },
}

#[derive(Debug)]
struct Event {
    at_us: u64,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at_us, self.order) == (other.at_us, other.order)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest (time, insertion) pair first
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at_us, other.order).cmp(&(self.at_us, self.order))
    }
}

#[derive(Debug)]
struct Job {
    frame: usize,
    rois: RoiSet,
}

#[derive(Debug)]
struct Running {
    task: TaskId,
    frame: usize,
    ready_order: u64,
    start_us: u64,
    end_us: u64,
    payload: Payload,
}

#[derive(Debug, Default)]
struct TaskState {
    queue: VecDeque<Job>,
    busy: bool,
    ready_order: Option<u64>,
}

#[derive(Debug, Default)]
struct Executor {
    ready: VecDeque<(TaskId, u64)>,
    running: Option<Running>,
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

struct Sim<'a> {
    trace: &'a Trace,
    cfg: &'a PipelineConfig,
    rng: ChaCha8Rng,
    now: u64,
    heap: BinaryHeap<Event>,
    next_order: u64,
    next_ready: u64,
    tasks: BTreeMap<TaskId, TaskState>,
    executors: Vec<Executor>,
    depth: usize,
    tracker: Tracker,
    selector: KeyframeSelector,
    dispatcher: Option<Dispatcher>,
    caches: BTreeMap<TaskId, DetectionCache>,
    tracker_outs: Vec<Option<Rc<TrackerOutput>>>,
    sync: Synchronizer<()>,
    last_arrived: Option<u64>,
    // outputs
    processed: BTreeMap<TaskId, u64>,
    queue_dropped: BTreeMap<TaskId, u64>,
    service_sum_ms: BTreeMap<TaskId, f64>,
    published_counts: BTreeMap<TaskId, ProvenanceCounts>,
    critical_frames: u64,
    fusion_rows: Vec<FusionRow>,
    audit: Vec<AuditRow>,
    published: Vec<PublishedRecord>,
    service_log: Vec<ServiceRecord>,
    seq_gaps: BTreeMap<TaskId, Vec<u64>>,
}

impl<'a> Sim<'a> {
    fn new(trace: &'a Trace, cfg: &'a PipelineConfig) -> Self {
        let h = &trace.header;
        let zeros = || TaskId::ALL.into_iter().map(|t| (t, 0u64)).collect::<BTreeMap<_, _>>();
        Sim {
            trace,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: 0,
            heap: BinaryHeap::new(),
            next_order: 0,
            next_ready: 0,
            tasks: TaskId::ALL.into_iter().map(|t| (t, TaskState::default())).collect(),
            executors: (0..cfg.executors.executor_count).map(|_| Executor::default()).collect(),
            depth: if cfg.mode.uses_dispatcher() {
                cfg.queues.dispatch_depth
            } else {
                cfg.queues.baseline_depth
            },
            tracker: Tracker::new(cfg.tracker, h.width, h.height),
            selector: KeyframeSelector::new(cfg.keyframe, cfg.ssim),
            dispatcher: cfg
                .mode
                .uses_dispatcher()
                .then(|| Dispatcher::new(cfg.dispatch, h.fps as f64)),
            caches: TaskId::ALL.into_iter().map(|t| (t, DetectionCache::new())).collect(),
            tracker_outs: vec![None; trace.frames.len()],
            sync: Synchronizer::new(cfg.fusion),
            last_arrived: None,
            processed: zeros(),
            queue_dropped: zeros(),
            service_sum_ms: TaskId::ALL.into_iter().map(|t| (t, 0.0)).collect(),
            published_counts: TaskId::ALL.into_iter().map(|t| (t, ProvenanceCounts::default())).collect(),
            critical_frames: 0,
            fusion_rows: Vec::new(),
            audit: Vec::new(),
            published: Vec::new(),
            service_log: Vec::new(),
            seq_gaps: TaskId::ALL.into_iter().map(|t| (t, Vec::new())).collect(),
        }
    }

    fn schedule(&mut self, at_us: u64, kind: EventKind) {
        self.heap.push(Event {
            at_us,
            order: self.next_order,
            kind,
        });
        self.next_order += 1;
    }

    fn run(mut self) -> Result<SimReport> {
        for (i, f) in self.trace.frames.iter().enumerate() {
            self.schedule(f.timestamp_us, EventKind::FrameArrival(i));
        }
        while let Some(ev) = self.heap.pop() {
            if ev.at_us < self.now {
                return Err(Error::Invariant("event scheduled in the past".into()));
            }
            self.now = ev.at_us;
            match ev.kind {
                EventKind::FrameArrival(i) => self.on_frame(i)?,
                EventKind::InferenceComplete(e) => self.on_complete(e)?,
                EventKind::PublishPrediction { frame, task } => self.on_publish_prediction(frame, task)?,
                EventKind::FusionEmit { task, msg } => {
                    for b in self.sync.push(task, msg, self.now)? {
                        self.fusion_rows.push(FusionRow::from_bundle(&b)?);
                    }
                }
            }
        }
        self.sync.flush();
        self.finish()
    }

    fn enqueue(&mut self, task: TaskId, job: Job) {
        let depth = self.depth;
        let state = self.tasks.get_mut(&task).expect("all tasks present");
        state.queue.push_back(job);
        while state.queue.len() > depth {
            state.queue.pop_front();
            *self.queue_dropped.get_mut(&task).expect("task") += 1;
        }
        if !state.busy && state.ready_order.is_none() {
            let order = self.next_ready;
            self.next_ready += 1;
            state.ready_order = Some(order);
            let e = self.cfg.executors.assignment[&task];
            self.executors[e].ready.push_back((task, order));
        }
    }

    fn try_start(&mut self, e: usize) {
        if self.executors[e].running.is_some() {
            return;
        }
        while let Some((task, ready_order)) = self.executors[e].ready.pop_front() {
            let state = self.tasks.get_mut(&task).expect("task");
            state.ready_order = None;
            let Some(job) = state.queue.pop_front() else {
                continue;
            };
            state.busy = true;
            let trace = self.trace;
            let frame = &trace.frames[job.frame];
            let payload = self.cfg.detector.infer(task, frame, &job.rois, &mut self.rng);
            let ms = service_time(task, &job.rois, &self.cfg.latency, &self.cfg.flops, &mut self.rng);
            let end_us = self.now + ms_to_us(ms);
            if let Some(last) = self.last_arrived {
                self.seq_gaps.get_mut(&task).expect("task").push(last.saturating_sub(frame.seq));
            }
            self.executors[e].running = Some(Running {
                task,
                frame: job.frame,
                ready_order,
                start_us: self.now,
                end_us,
                payload,
            });
            self.schedule(end_us, EventKind::InferenceComplete(e));
            return;
        }
    }

    fn on_frame(&mut self, i: usize) -> Result<()> {
        let trace = self.trace;
        let frame = &trace.frames[i];
        let (width, height) = (frame.width, frame.height);
        self.last_arrived = Some(frame.seq);
        let full = RoiSet::full_frame(width, height);
        let mode = self.cfg.mode;

        if !mode.uses_dispatcher() {
            for task in TaskId::ALL {
                self.enqueue(task, Job { frame: i, rois: full.clone() });
            }
        } else {
            let seen = self.cfg.tracker_detector.detect(frame, &full, &mut self.rng);
            let tracked = self.tracker.step(&seen, frame.seq);
            let scenario = classify_scenario(&seen, &self.cfg.keyframe);
            let rois: Option<BTreeMap<TaskId, RoiSet>> = if mode.uses_keyframes() {
                let decision = self.selector.observe(frame, &tracked, &scenario)?;
                decision.roi_candidates.map(|(one, multi)| {
                    self.critical_frames += 1;
                    TaskId::ALL
                        .into_iter()
                        .map(|t| (t, choose_roi(&one, &multi, t, &self.cfg.flops).clone()))
                        .collect()
                })
            } else {
                Some(TaskId::ALL.into_iter().map(|t| (t, full.clone())).collect())
            };
            if let Some(rois) = rois {
                let dispatcher = self.dispatcher.as_mut().expect("dispatcher modes");
                let decision = dispatcher.dispatch(frame.seq, &rois, &scenario)?;
                self.audit.extend(decision.audit_rows());
                let jobs: Vec<(TaskId, RoiSet)> = decision.dispatched().map(|(t, r)| (t, r.clone())).collect();
                for (task, r) in jobs {
                    self.enqueue(task, Job { frame: i, rois: r });
                }
            }
            if mode.uses_predictor() {
                self.tracker_outs[i] = Some(Rc::new(tracked));
                let at = self.now + ms_to_us(self.cfg.predictor.publish_latency_ms);
                for task in TaskId::ALL {
                    self.schedule(at, EventKind::PublishPrediction { frame: i, task });
                }
            }
        }
        for e in 0..self.executors.len() {
            self.try_start(e);
        }
        Ok(())
    }

    fn on_complete(&mut self, e: usize) -> Result<()> {
        let run = self.executors[e]
            .running
            .take()
            .ok_or_else(|| Error::Invariant("completion on an idle executor".into()))?;
        let trace = self.trace;
        let frame = &trace.frames[run.frame];
        let task = run.task;
        self.service_log.push(ServiceRecord {
            executor: e,
            task,
            frame_seq: frame.seq,
            arrival_us: frame.timestamp_us,
            ready_order: run.ready_order,
            start_us: run.start_us,
            end_us: run.end_us,
        });
        *self.processed.get_mut(&task).expect("task") += 1;
        *self.service_sum_ms.get_mut(&task).expect("task") += (run.end_us - run.start_us) as f64 / 1000.0;
        if let Some(d) = self.dispatcher.as_mut() {
            d.record_completion(task, frame.seq, frame.timestamp_ms(), self.now as f64 / 1000.0)?;
        }
        if self.cfg.mode.uses_predictor() {
            self.caches.get_mut(&task).expect("task").insert(CacheEntry {
                frame_seq: frame.seq,
                timestamp_us: frame.timestamp_us,
                payload: run.payload,
            });
        } else {
            self.publish(task, run.frame, run.payload, Provenance::Inference);
        }
        let state = self.tasks.get_mut(&task).expect("task");
        state.busy = false;
        if !state.queue.is_empty() {
            let order = self.next_ready;
            self.next_ready += 1;
            state.ready_order = Some(order);
            self.executors[e].ready.push_back((task, order));
        }
        self.try_start(e);
        Ok(())
    }

    fn on_publish_prediction(&mut self, i: usize, task: TaskId) -> Result<()> {
        let trace = self.trace;
        let frame = &trace.frames[i];
        let cache = &self.caches[&task];
        if let Some(entry) = cache.newest().filter(|e| e.frame_seq == frame.seq) {
            let payload = entry.payload.clone();
            self.publish(task, i, payload, Provenance::Inference);
            return Ok(());
        }
        let tracked = self.tracker_outs[i]
            .clone()
            .ok_or_else(|| Error::Invariant("prediction without tracker state".into()))?;
        let predicted = match task {
            TaskId::ObjectDetection => predict_boxes(cache, &tracked, &self.cfg.predictor).map(Payload::Detections),
            TaskId::LaneDetection => predict_lanes(cache),
            TaskId::Segmentation => {
                predict_segmentation(cache, &tracked, &self.cfg.predictor, frame.width, frame.height)
                    .map(Payload::Segments)
            }
        };
        let payload = match predicted {
            Ok(p) => p,
            Err(Error::EmptyCache(_)) => Payload::empty_for(task),
            Err(e) => return Err(e),
        };
        self.publish(task, i, payload, Provenance::Predicted);
        Ok(())
    }

    fn publish(&mut self, task: TaskId, i: usize, payload: Payload, provenance: Provenance) {
        let trace = self.trace;
        let frame = &trace.frames[i];
        let counts = self.published_counts.get_mut(&task).expect("task");
        match provenance {
            Provenance::Inference => counts.inference += 1,
            Provenance::Predicted => counts.predicted += 1,
        }
        self.published.push(PublishedRecord {
            task,
            frame_seq: frame.seq,
            timestamp_us: frame.timestamp_us,
            published_at_us: self.now,
            provenance,
            payload,
        });
        let msg = Message {
            frame_seq: frame.seq,
            timestamp_us: frame.timestamp_us,
            provenance,
            payload: (),
        };
        self.schedule(self.now, EventKind::FusionEmit { task, msg });
    }

    fn finish(self) -> Result<SimReport> {
        let h = &self.trace.header;
        let stats = self.sync.stats();
        if stats.received != stats.bundled + stats.dropped() {
            return Err(Error::Invariant(format!(
                "fusion lost messages: {} in, {} bundled, {} dropped",
                stats.received,
                stats.bundled,
                stats.dropped()
            )));
        }
        let frames = self.trace.frames.len() as u64;
        let bundles = self.fusion_rows.len() as u64;
        let mean_delay = (!self.fusion_rows.is_empty()).then(|| {
            self.fusion_rows.iter().map(|r| r.fusion_delay_ms).sum::<f64>() / bundles as f64
        });
        let mean_service_ms = TaskId::ALL
            .into_iter()
            .map(|t| {
                let n = self.processed[&t];
                (t, (n > 0).then(|| self.service_sum_ms[&t] / n as f64))
            })
            .collect();
        let seq_gap_over_10 = self
            .seq_gaps
            .iter()
            .map(|(t, g)| {
                let frac = (!g.is_empty()).then(|| g.iter().filter(|&&v| v > 10).count() as f64 / g.len() as f64);
                (*t, frac)
            })
            .collect();
        let summary = ReportSummary {
            mode: self.cfg.mode.to_string(),
            seed: self.cfg.seed,
            trace_hash: self.trace.hash()?,
            scenario_tag: h.scenario_tag.clone(),
            fps: h.fps,
            frame_count: frames,
            executor_count: self.cfg.executors.executor_count,
            processed: self.processed,
            queue_dropped: self.queue_dropped,
            mean_service_ms,
            published: self.published_counts,
            critical_frames: self.critical_frames,
            fusion: stats,
            bundle_count: bundles,
            fusion_percent: if frames == 0 {
                0.0
            } else {
                100.0 * bundles as f64 / frames as f64
            },
            mean_fusion_delay_ms: mean_delay,
            seq_gap_over_10,
        };
        Ok(SimReport {
            data: ReportData {
                summary,
                fusion: self.fusion_rows,
                dispatch: self.audit,
                published: self.published,
            },
            service_log: self.service_log,
            seq_gaps: self.seq_gaps,
        })
    }
}

/// Replays `trace` through the pipeline selected by `cfg.mode`.
pub fn run(trace: &Trace, cfg: &PipelineConfig) -> Result<SimReport> {
    cfg.validate()?;
    let mismatch = trace
        .frames
        .iter()
        .position(|f| f.width != trace.header.width || f.height != trace.header.height);
    if let Some(i) = mismatch {
        return Err(Error::Trace {
            line: i + 2,
            reason: "frame dimensions differ from header".into(),
        });
    }
    Sim::new(trace, cfg).run()
}
