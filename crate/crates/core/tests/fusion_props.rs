use ppdnn::fusion::{Message, SyncConfig, Synchronizer};
use ppdnn::predictor::Provenance;
use ppdnn::TaskId;
use proptest::prelude::*;

fn msg(seq: u64, ts: u64) -> Message<()> {
    Message { frame_seq: seq, timestamp_us: ts, provenance: Provenance::Inference, payload: () }
}

/// Each entry: (task index, frame seq, publish delay). Messages are pushed in
/// publish-time order, the way the simulator emits them.
fn arrivals() -> impl Strategy<Value = Vec<(usize, u64, u64)>> {
    prop::collection::vec((0usize..3, 0u64..120, 0u64..900_000), 0..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bundles_respect_slop_and_conserve(
        raw in arrivals(),
        slop_ms in prop::sample::select(vec![50.0, 150.0, 300.0]),
        queue_size in 1usize..20,
    ) {
        let cfg = SyncConfig { queue_size, slop_ms };
        let mut sync = Synchronizer::new(cfg);
        let mut events: Vec<(u64, usize, u64, u64)> = raw
            .iter()
            .map(|&(t, seq, delay)| {
                let ts = seq * 33_333;
                (ts + delay, t, seq, ts)
            })
            .collect();
        events.sort();
        let mut bundles = Vec::new();
        for &(now, t, seq, ts) in &events {
            bundles.extend(sync.push(TaskId::ALL[t], msg(seq, ts), now).unwrap());
        }
        sync.flush();
        let stats = sync.stats();
        prop_assert_eq!(stats.received, events.len() as u64);
        prop_assert_eq!(stats.received, stats.bundled + stats.dropped());
        prop_assert_eq!(stats.bundled, 3 * bundles.len() as u64);
        prop_assert_eq!(sync.pending(), 0);

        let slop_us = (slop_ms * 1000.0) as u64;
        for (i, b) in bundles.iter().enumerate() {
            prop_assert_eq!(b.id, i as u64);
            prop_assert_eq!(b.messages.len(), 3);
            prop_assert!(b.timestamp_spread_us() <= slop_us);
            let newest = b.messages.iter().map(|m| m.timestamp_us).max().unwrap();
            let oldest = b.messages.iter().map(|m| m.timestamp_us).min().unwrap();
            prop_assert_eq!(b.pivot_timestamp_us, oldest);
            prop_assert!(b.fused_at_us >= newest);
            prop_assert_eq!(b.fusion_delay_us, b.fused_at_us - oldest);
        }
        // per topic, bundled messages keep their publication order
        for t in 0..3 {
            let ts: Vec<u64> = bundles.iter().map(|b| b.messages[t].timestamp_us).collect();
            prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn lockstep_streams_all_fuse() {
    let mut sync = Synchronizer::new(SyncConfig::default());
    let mut n = 0;
    for seq in 0..50u64 {
        let ts = seq * 33_333;
        for t in TaskId::ALL {
            n += sync.push(t, msg(seq, ts), ts + 20_000).unwrap().len();
        }
    }
    assert_eq!(n, 50);
    assert_eq!(sync.flush(), 0);
}
