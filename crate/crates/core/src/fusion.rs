//! Approximate-time synchronizer joining the three task streams.
//!
//! Matching is greedy around a pivot: the oldest queued message across all
//! topics. Because each topic publishes in non-decreasing timestamp order,
//! the closest candidate in every other topic is its queue head, and a pivot
//! whose partner heads already lie beyond the slop can never be matched and
//! is discarded.

use std::collections::VecDeque;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::TaskId;
use crate::predictor::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncConfig {
    pub queue_size: usize,
    pub slop_ms: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            queue_size: 1000,
            slop_ms: 300.0,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queue_size == 0 {
            return Err(Error::config("fusion.queue_size", "must be at least 1"));
        }
        if !(self.slop_ms >= 0.0) {
            return Err(Error::config("fusion.slop_ms", "must be non-negative"));
        }
        Ok(())
    }

    fn slop_us(&self) -> u64 {
        if self.slop_ms.is_infinite() {
            u64::MAX
        } else {
            (self.slop_ms * 1000.0).round() as u64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message<P> {
    pub frame_seq: u64,
    pub timestamp_us: u64,
    pub provenance: Provenance,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<P> {
    pub id: u64,
    /// One message per topic, in topic order.
    pub messages: Vec<Message<P>>,
    pub pivot_timestamp_us: u64,
    pub fused_at_us: u64,
    /// `fused_at` minus the earliest capture timestamp in the bundle.
    pub fusion_delay_us: u64,
}

impl<P> Bundle<P> {
    pub fn timestamp_spread_us(&self) -> u64 {
        let max = self.messages.iter().map(|m| m.timestamp_us).max().unwrap_or(0);
        let min = self.messages.iter().map(|m| m.timestamp_us).min().unwrap_or(0);
        max - min
    }

    pub fn seq_spread(&self) -> u64 {
        let max = self.messages.iter().map(|m| m.frame_seq).max().unwrap_or(0);
        let min = self.messages.iter().map(|m| m.frame_seq).min().unwrap_or(0);
        max - min
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncStats {
    pub received: u64,
    pub bundled: u64,
    pub dropped_out_of_order: u64,
    pub dropped_evicted: u64,
    pub dropped_unmatched: u64,
    pub dropped_pending: u64,
}

impl SyncStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_out_of_order + self.dropped_evicted + self.dropped_unmatched + self.dropped_pending
    }
}

/// N-topic approximate-time synchronizer. Calls must be serialized.
#[derive(Debug, Clone)]
pub struct Synchronizer<P> {
    cfg: SyncConfig,
    queues: Vec<VecDeque<Message<P>>>,
    last_ts: Vec<Option<u64>>,
    next_id: u64,
    stats: SyncStats,
}

impl<P: Clone> Synchronizer<P> {
    pub fn new(cfg: SyncConfig) -> Self {
        Self::with_topics(cfg, TaskId::ALL.len())
    }

    pub fn with_topics(cfg: SyncConfig, topics: usize) -> Self {
        Synchronizer {
            cfg,
            queues: (0..topics).map(|_| VecDeque::new()).collect(),
            last_ts: vec![None; topics],
            next_id: 0,
            stats: SyncStats::default(),
        }
    }

    pub fn stats(&self) -> SyncStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn push(&mut self, task: TaskId, msg: Message<P>, now_us: u64) -> Result<Vec<Bundle<P>>> {
        self.push_topic(task.index(), msg, now_us)
    }

    pub fn push_topic(&mut self, topic: usize, msg: Message<P>, now_us: u64) -> Result<Vec<Bundle<P>>> {
        if topic >= self.queues.len() {
            return Err(Error::config("fusion.topic", format!("unknown topic {topic}")));
        }
        self.stats.received += 1;
        if self.last_ts[topic].is_some_and(|t| msg.timestamp_us < t) {
            self.stats.dropped_out_of_order += 1;
            return Ok(Vec::new());
        }
        self.last_ts[topic] = Some(msg.timestamp_us);
        let queue = &mut self.queues[topic];
        queue.push_back(msg);
        while queue.len() > self.cfg.queue_size {
            queue.pop_front();
            self.stats.dropped_evicted += 1;
        }
        self.drain(now_us)
    }

    fn drain(&mut self, now_us: u64) -> Result<Vec<Bundle<P>>> {
        let slop = self.cfg.slop_us();
        let mut out = Vec::new();
        while self.queues.iter().all(|q| !q.is_empty()) {
            let (pivot_topic, pivot_ts) = self
                .queues
                .iter()
                .enumerate()
                .map(|(i, q)| (i, q[0].timestamp_us))
                .min_by_key(|&(i, t)| (t, i))
                .expect("at least one topic");
            let unmatchable = self
                .queues
                .iter()
                .enumerate()
                .any(|(i, q)| i != pivot_topic && q[0].timestamp_us - pivot_ts > slop);
            if unmatchable {
                self.queues[pivot_topic].pop_front();
                self.stats.dropped_unmatched += 1;
                continue;
            }
            let messages: Vec<Message<P>> = self
                .queues
                .iter_mut()
                .map(|q| q.pop_front().expect("non-empty"))
                .collect();
            let max = messages.iter().map(|m| m.timestamp_us).max().unwrap_or(0);
            let min = messages.iter().map(|m| m.timestamp_us).min().unwrap_or(0);
            if max - min > slop {
                return Err(Error::Invariant(format!(
                    "bundle spread {}us exceeds slop {}us",
                    max - min,
                    slop
                )));
            }
            self.stats.bundled += messages.len() as u64;
            out.push(Bundle {
                id: self.next_id,
                pivot_timestamp_us: pivot_ts,
                fused_at_us: now_us,
                fusion_delay_us: now_us.saturating_sub(min),
                messages,
            });
            self.next_id += 1;
        }
        Ok(out)
    }

    /// Discards every queued message, counting them as dropped.
    pub fn flush(&mut self) -> u64 {
        let n = self.pending() as u64;
        for q in &mut self.queues {
            q.clear();
        }
        self.stats.dropped_pending += n;
        n
    }
}

/// One row of `fusion.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRow {
    pub bundle_id: u64,
    pub object_detection_seq: u64,
    pub lane_detection_seq: u64,
    pub segmentation_seq: u64,
    pub object_detection_provenance: Provenance,
    pub lane_detection_provenance: Provenance,
    pub segmentation_provenance: Provenance,
    pub fused_at_ms: f64,
    pub fusion_delay_ms: f64,
    pub timestamp_spread_ms: f64,
    pub seq_spread: u64,
}

impl FusionRow {
    pub fn from_bundle<P>(b: &Bundle<P>) -> Result<Self> {
        if b.messages.len() != TaskId::ALL.len() {
            return Err(Error::Invariant("fusion row needs exactly three messages".into()));
        }
        let m = &b.messages;
        Ok(FusionRow {
            bundle_id: b.id,
            object_detection_seq: m[0].frame_seq,
            lane_detection_seq: m[1].frame_seq,
            segmentation_seq: m[2].frame_seq,
            object_detection_provenance: m[0].provenance,
            lane_detection_provenance: m[1].provenance,
            segmentation_provenance: m[2].provenance,
            fused_at_ms: b.fused_at_us as f64 / 1000.0,
            fusion_delay_ms: b.fusion_delay_us as f64 / 1000.0,
            timestamp_spread_ms: b.timestamp_spread_us() as f64 / 1000.0,
            seq_spread: b.seq_spread(),
        })
    }
}

pub fn write_fusion_csv<W: Write>(rows: &[FusionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fusion_csv<R: Read>(input: R) -> Result<Vec<FusionRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: FusionRow = rec?;
        if !row.fusion_delay_ms.is_finite() || row.fusion_delay_ms < 0.0 {
            return Err(Error::Report {
                file: "fusion.csv".into(),
                reason: format!("bundle {}: bad fusion delay", row.bundle_id),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(seq: u64, ts_ms: u64) -> Message<()> {
        Message {
            frame_seq: seq,
            timestamp_us: ts_ms * 1000,
            provenance: Provenance::Inference,
            payload: (),
        }
    }

    #[test]
    fn close_messages_bundle() {
        let mut s = Synchronizer::new(SyncConfig::default());
        assert!(s.push(TaskId::ObjectDetection, msg(0, 100), 200_000).unwrap().is_empty());
        assert!(s.push(TaskId::LaneDetection, msg(1, 120), 210_000).unwrap().is_empty());
        let out = s.push(TaskId::Segmentation, msg(2, 180), 250_000).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].timestamp_spread_us(), 80_000);
        assert_eq!(out[0].fusion_delay_us, 150_000);
    }

    #[test]
    fn wide_spread_drops_pivot() {
        let mut s = Synchronizer::new(SyncConfig::default());
        s.push(TaskId::ObjectDetection, msg(0, 100), 0).unwrap();
        s.push(TaskId::LaneDetection, msg(1, 450), 0).unwrap();
        let out = s.push(TaskId::Segmentation, msg(2, 460), 0).unwrap();
        assert!(out.is_empty());
        assert_eq!(s.stats().dropped_unmatched, 1);
        assert_eq!(s.pending(), 2);
    }

    #[test]
    fn two_topics_never_bundle() {
        let mut s = Synchronizer::new(SyncConfig::default());
        for i in 0..50 {
            assert!(s.push(TaskId::ObjectDetection, msg(i, i * 33), 0).unwrap().is_empty());
            assert!(s.push(TaskId::LaneDetection, msg(i, i * 33), 0).unwrap().is_empty());
        }
        assert_eq!(s.stats().bundled, 0);
    }

    #[test]
    fn out_of_order_is_dropped() {
        let mut s = Synchronizer::new(SyncConfig::default());
        s.push(TaskId::ObjectDetection, msg(5, 500), 0).unwrap();
        s.push(TaskId::ObjectDetection, msg(4, 400), 0).unwrap();
        assert_eq!(s.stats().dropped_out_of_order, 1);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn queue_bound_evicts_oldest() {
        let cfg = SyncConfig {
            queue_size: 3,
            ..SyncConfig::default()
        };
        let mut s = Synchronizer::new(cfg);
        for i in 0..5 {
            s.push(TaskId::Segmentation, msg(i, i), 0).unwrap();
        }
        assert_eq!(s.stats().dropped_evicted, 2);
        assert_eq!(s.pending(), 3);
    }

    #[test]
    fn unknown_topic_rejected() {
        let mut s: Synchronizer<()> = Synchronizer::new(SyncConfig::default());
        assert!(s.push_topic(3, msg(0, 0), 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut s = Synchronizer::new(SyncConfig::default());
        s.push(TaskId::ObjectDetection, msg(0, 100), 0).unwrap();
        s.push(TaskId::LaneDetection, msg(1, 120), 0).unwrap();
        let b = s.push(TaskId::Segmentation, msg(2, 180), 300_000).unwrap();
        let rows: Vec<FusionRow> = b.iter().map(|b| FusionRow::from_bundle(b).unwrap()).collect();
        let mut buf = Vec::new();
        write_fusion_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_fusion_csv(&buf[..]).unwrap(), rows);
    }
}
