//! Independent reference implementations shared by the oracle tests and the
//! acceptance run.
#![allow(dead_code, clippy::needless_range_loop)]

use ppdnn::eval::{CompletenessInput, ScoredFrame};
use ppdnn::similarity::{SsimParams, THUMB_SIDE};
use ppdnn::BBox;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Mean SSIM by direct 2-D summation with two-pass centered moments.
pub fn ssim_oracle(a: &[f64], b: &[f64], p: &SsimParams) -> f64 {
    let n = THUMB_SIDE;
    let win = p.window;
    let c = (win / 2) as f64;
    let mut w = vec![vec![0.0; win]; win];
    let mut total_w = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * p.gaussian_sigma * p.gaussian_sigma)).exp();
            total_w += *v;
        }
    }
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut r0 = 0;
    while r0 + win <= n {
        let mut c0 = 0;
        while c0 + win <= n {
            let at = |img: &[f64], i: usize, j: usize| img[(r0 + i) * n + c0 + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    mx += w[i][j] / total_w * at(a, i, j);
                    my += w[i][j] / total_w * at(b, i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let g = w[i][j] / total_w;
                    let dx = at(a, i, j) - mx;
                    let dy = at(b, i, j) - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
            c0 += p.stride;
        }
        r0 += p.stride;
    }
    sum / count as f64
}

/// A random 25x25 pair, half the time correlated.
pub fn random_thumb_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = (0..625).map(|_| rng.random_range(0..=255) as f64).collect();
    let correlated = rng.random_bool(0.5);
    let b = a
        .iter()
        .map(|&v| {
            if correlated {
                (v + rng.random_range(-30.0..30.0)).clamp(0.0, 255.0).round()
            } else {
                rng.random_range(0..=255) as f64
            }
        })
        .collect();
    (a, b)
}

fn iou_f(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = (a.x() as f64, a.y() as f64, (a.x() + a.w()) as f64, (a.y() + a.h()) as f64);
    let (bx0, by0, bx1, by1) = (b.x() as f64, b.y() as f64, (b.x() + b.w()) as f64, (b.y() + b.h()) as f64);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)
}

/// (detected, objects) with each offline frame matched against the first
/// keyframe no older than it, found by bisection (the last keyframe when
/// none is).
pub fn completeness_oracle(input: &CompletenessInput) -> (u64, u64) {
    let (mut detected, mut objects) = (0, 0);
    for off in &input.offline {
        let idx = input.keyframes.partition_point(|k| k.timestamp_us < off.timestamp_us);
        let key = input.keyframes.get(idx).or(input.keyframes.last());
        for (bbox, score) in &off.boxes {
            if *score <= 0.5 {
                continue;
            }
            objects += 1;
            let Some(key) = key else { continue };
            let mut best: Option<(f64, f64)> = None;
            for (kb, ks) in &key.boxes {
                let v = iou_f(bbox, kb);
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, *ks));
                }
            }
            if best.is_some_and(|(v, s)| v > 0.5 && s > 0.5) {
                detected += 1;
            }
        }
    }
    (detected, objects)
}

fn random_box(rng: &mut ChaCha8Rng, anchors: &[BBox]) -> BBox {
    if !anchors.is_empty() && rng.random_bool(0.6) {
        let a = anchors[rng.random_range(0..anchors.len())];
        let dx = rng.random_range(0..4);
        let dy = rng.random_range(0..4);
        BBox::new(a.x() + dx, a.y() + dy, a.w(), a.h()).unwrap()
    } else {
        BBox::new(rng.random_range(0..60), rng.random_range(0..60), rng.random_range(1..20), rng.random_range(1..20))
            .unwrap()
    }
}

fn random_frames(rng: &mut ChaCha8Rng, times: &[u64], anchors: &[BBox]) -> Vec<ScoredFrame> {
    times
        .iter()
        .map(|&t| {
            let n = rng.random_range(0..=8);
            ScoredFrame {
                timestamp_us: t,
                boxes: (0..n)
                    .map(|_| {
                        let s = [0.3, 0.5, 0.51, 0.9][rng.random_range(0..4)];
                        (random_box(rng, anchors), s)
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Up to 20 offline frames with up to 8 boxes each; keyframe timestamps are
/// a subset of the offline ones, as the pipeline produces.
pub fn grid_instance(rng: &mut ChaCha8Rng) -> CompletenessInput {
    let n = rng.random_range(1..=20);
    let times: Vec<u64> = (0..n).map(|i| i * 33_333 + rng.random_range(0..2)).collect();
    let anchors: Vec<BBox> = (0..6).map(|_| random_box(rng, &[])).collect();
    let key_times: Vec<u64> = times.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
    CompletenessInput {
        keyframes: random_frames(rng, &key_times, &anchors),
        offline: random_frames(rng, &times, &anchors),
    }
}

/// Same sizes, but keyframe and offline timestamps drawn independently.
pub fn free_instance(rng: &mut ChaCha8Rng) -> CompletenessInput {
    let anchors: Vec<BBox> = (0..6).map(|_| random_box(rng, &[])).collect();
    let mut sorted = |n: usize| {
        let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..1_000)).collect();
        v.sort_unstable();
        v
    };
    let off_t = sorted(20);
    let key_t = sorted(8);
    let (n_off, n_key) = (rng.random_range(1..=20), rng.random_range(0..=8));
    let offline = random_frames(rng, &off_t[..n_off], &anchors);
    let keyframes = random_frames(rng, &key_t[..n_key], &anchors);
    CompletenessInput { keyframes, offline }
}
