//! Streaming completeness against a brute-force oracle that looks up the
//! keyframe for each offline frame by bisection.

use ppdnn::eval::{completeness_counts, detection_completeness, AdvanceMode, CompletenessInput, ScoredFrame};
use ppdnn::BBox;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;
use common::{completeness_oracle as oracle, free_instance, grid_instance};

#[test]
fn literal_matches_oracle_on_grid_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut scored = 0;
    for _ in 0..200 {
        let input = grid_instance(&mut rng);
        let c = completeness_counts(&input, AdvanceMode::Literal).unwrap();
        assert_eq!((c.detected, c.objects), oracle(&input), "{input:?}");
        scored += u64::from(c.objects > 0);
    }
    assert!(scored > 150);
}

#[test]
fn catch_up_matches_oracle_on_arbitrary_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let input = free_instance(&mut rng);
        let c = completeness_counts(&input, AdvanceMode::CatchUp).unwrap();
        assert_eq!((c.detected, c.objects), oracle(&input), "{input:?}");
    }
}

#[test]
fn literal_lags_when_keyframes_are_sparse() {
    let b = BBox::new(0, 0, 10, 10).unwrap();
    let far = BBox::new(50, 50, 10, 10).unwrap();
    let frame = |t, bb| ScoredFrame { timestamp_us: t, boxes: vec![(bb, 0.9)] };
    let input = CompletenessInput {
        keyframes: vec![frame(0, far), frame(5, far), frame(10, b)],
        offline: vec![frame(0, far), frame(10, b)],
    };
    // one step per offline frame leaves the cursor on t=5 for the second frame
    assert_eq!(detection_completeness(&input, AdvanceMode::Literal).unwrap(), 0.5);
    assert_eq!(detection_completeness(&input, AdvanceMode::CatchUp).unwrap(), 1.0);
}

#[test]
fn identical_and_half_match() {
    let a = BBox::new(0, 0, 10, 10).unwrap();
    let b = BBox::new(30, 30, 10, 10).unwrap();
    let f = |boxes: Vec<(BBox, f64)>| ScoredFrame { timestamp_us: 0, boxes };
    let same = CompletenessInput {
        keyframes: vec![f(vec![(a, 0.9), (b, 0.9)])],
        offline: vec![f(vec![(a, 0.9), (b, 0.9)])],
    };
    assert_eq!(detection_completeness(&same, AdvanceMode::Literal).unwrap(), 1.0);
    let half = CompletenessInput {
        keyframes: vec![f(vec![(a, 0.9)])],
        offline: vec![f(vec![(a, 0.9), (b, 0.9)])],
    };
    assert_eq!(detection_completeness(&half, AdvanceMode::Literal).unwrap(), 0.5);
}

fn shift(input: &CompletenessInput, dx: u32, dy: u32) -> CompletenessInput {
    let mv = |fs: &[ScoredFrame]| {
        fs.iter()
            .map(|f| ScoredFrame {
                timestamp_us: f.timestamp_us,
                boxes: f
                    .boxes
                    .iter()
                    .map(|(b, s)| (BBox::new(b.x() + dx, b.y() + dy, b.w(), b.h()).unwrap(), *s))
                    .collect(),
            })
            .collect()
    };
    CompletenessInput { keyframes: mv(&input.keyframes), offline: mv(&input.offline) }
}

proptest! {
    #[test]
    fn translation_invariant(seed in any::<u64>(), dx in 0u32..500, dy in 0u32..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = grid_instance(&mut rng);
        for mode in [AdvanceMode::Literal, AdvanceMode::CatchUp] {
            prop_assert_eq!(
                completeness_counts(&input, mode).unwrap(),
                completeness_counts(&shift(&input, dx, dy), mode).unwrap()
            );
        }
    }
}
