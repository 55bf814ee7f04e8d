//! Seeded synthetic scenes rendered into traces.
//!
//! Objects follow constant-velocity motion with per-frame positional
//! jitter. Thumbnails are drawn at 25x25 by blending each object's
//! coverage of a thumbnail cell over a value-noise background, so SSIM
//! between consecutive frames tracks how much the scene moved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{frame_timestamp_us, Trace, TraceHeader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geom::{BBox, ClassId, Detection, FrameRecord, SegBox};
use crate::similarity::{Thumbnail, THUMB_LEN, THUMB_SIDE};

pub const BUILTIN_SCENARIOS: [&str; 4] = ["highway", "downtown", "crossing", "signal_stop"];

/// Fraction of the frame height above which the road band starts.
const ROAD_TOP: f64 = 0.55;
const NOISE_LATTICE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectSpec {
    pub class: ClassId,
    pub spawn_s: f64,
    pub despawn_s: Option<f64>,
    /// `[x, y, w, h]` at spawn time, in pixels.
    pub start: [f64; 4],
    /// `[dx, dy, dw, dh]` in pixels per second.
    pub velocity: [f64; 4],
    /// Half-width of the uniform per-frame position jitter.
    pub jitter_px: f64,
    pub score: f64,
    pub stationary: bool,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        ObjectSpec {
            class: ClassId::Vehicle,
            spawn_s: 0.0,
            despawn_s: None,
            start: [0.0, 0.0, 10.0, 10.0],
            velocity: [0.0; 4],
            jitter_px: 0.0,
            score: 0.9,
            stationary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventSpec {
    /// A group of pedestrians steps onto the road and walks across it.
    PedestrianCrossing {
        at_s: f64,
        #[serde(default = "default_crossing_count")]
        count: u32,
        #[serde(default = "default_true")]
        from_left: bool,
        #[serde(default = "default_walk_speed")]
        speed_px_s: f64,
    },
    /// A vehicle enters from a frame edge and merges toward the centre.
    CutIn {
        at_s: f64,
        #[serde(default = "default_true")]
        from_left: bool,
        #[serde(default = "default_cut_in_speed")]
        speed_px_s: f64,
    },
}

fn default_crossing_count() -> u32 {
    5
}
fn default_true() -> bool {
    true
}
fn default_walk_speed() -> f64 {
    60.0
}
fn default_cut_in_speed() -> f64 {
    150.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioScript {
    pub name: String,
    pub duration_s: f64,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    /// Background scroll speed standing in for ego motion.
    pub ego_speed_px_s: f64,
    pub objects: Vec<ObjectSpec>,
    pub events: Vec<EventSpec>,
}

impl Default for ScenarioScript {
    fn default() -> Self {
        ScenarioScript {
            name: "custom".into(),
            duration_s: 10.0,
            fps: 30,
            width: 1280,
            height: 720,
            ego_speed_px_s: 0.0,
            objects: Vec::new(),
            events: Vec::new(),
        }
    }
}

impl ScenarioScript {
    pub fn from_toml(text: &str) -> Result<Self> {
        let script: ScenarioScript =
            toml::from_str(text).map_err(|e| Error::config("scenario", e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.fps as f64).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s <= 3600.0) {
            return Err(Error::config("scenario.duration_s", "must lie in (0, 3600]"));
        }
        if !(1..=240).contains(&self.fps) {
            return Err(Error::config("scenario.fps", "must lie in 1..=240"));
        }
        for (name, v) in [("scenario.width", self.width), ("scenario.height", self.height)] {
            if !(32..=8192).contains(&v) {
                return Err(Error::config(name, "must lie in 32..=8192"));
            }
        }
        if !self.ego_speed_px_s.is_finite() {
            return Err(Error::config("scenario.ego_speed_px_s", "must be finite"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let field = |f: &str| format!("scenario.objects[{i}].{f}");
            if o.start.iter().chain(&o.velocity).any(|v| !v.is_finite()) {
                return Err(Error::config(field("start"), "coordinates must be finite"));
            }
            if !(o.start[2] >= 1.0 && o.start[3] >= 1.0) {
                return Err(Error::config(field("start"), "width and height must be at least 1"));
            }
            if !(0.0..=1.0).contains(&o.score) {
                return Err(Error::config(field("score"), "must lie in [0,1]"));
            }
            if !(o.spawn_s >= 0.0 && o.spawn_s.is_finite()) {
                return Err(Error::config(field("spawn_s"), "must be non-negative"));
            }
            if o.despawn_s.is_some_and(|d| !(d > o.spawn_s)) {
                return Err(Error::config(field("despawn_s"), "must follow spawn_s"));
            }
            if !(o.jitter_px >= 0.0 && o.jitter_px <= 1000.0) {
                return Err(Error::config(field("jitter_px"), "must lie in [0, 1000]"));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let (at, speed) = match e {
                EventSpec::PedestrianCrossing { at_s, speed_px_s, count, .. } => {
                    if *count > 64 {
                        return Err(Error::config(format!("scenario.events[{i}].count"), "at most 64"));
                    }
                    (*at_s, *speed_px_s)
                }
                EventSpec::CutIn { at_s, speed_px_s, .. } => (*at_s, *speed_px_s),
            };
            if !(at >= 0.0 && at.is_finite()) || !speed.is_finite() {
                return Err(Error::config(format!("scenario.events[{i}]"), "time and speed must be finite, time non-negative"));
            }
        }
        Ok(())
    }

    /// Objects from the script plus those introduced by events.
    pub fn expanded_objects(&self) -> Vec<ObjectSpec> {
        let (w, h) = (self.width as f64, self.height as f64);
        let mut out = self.objects.clone();
        for e in &self.events {
            match *e {
                EventSpec::PedestrianCrossing {
                    at_s,
                    count,
                    from_left,
                    speed_px_s,
                } => {
                    let ph = h * 0.12;
                    let pw = ph * 0.4;
                    for k in 0..count {
                        let offset = k as f64 * pw * 1.3;
                        let x = if from_left { w * 0.08 + offset } else { w * 0.92 - pw - offset };
                        let y = h * (ROAD_TOP - 0.04) + (k % 3) as f64 * ph * 0.15;
                        out.push(ObjectSpec {
                            class: ClassId::Pedestrian,
                            spawn_s: at_s,
                            start: [x.max(0.0), y, pw, ph],
                            velocity: [if from_left { speed_px_s } else { -speed_px_s }, 0.0, 0.0, 0.0],
                            jitter_px: 0.5,
                            score: 0.9,
                            ..ObjectSpec::default()
                        });
                    }
                }
                EventSpec::CutIn {
                    at_s,
                    from_left,
                    speed_px_s,
                } => {
                    let vw = w * 0.17;
                    let vh = vw * 0.62;
                    let x = if from_left { 0.0 } else { w - vw };
                    out.push(ObjectSpec {
                        class: ClassId::Vehicle,
                        spawn_s: at_s,
                        despawn_s: Some(at_s + 4.0),
                        start: [x, h * (ROAD_TOP + 0.05), vw, vh],
                        velocity: [
                            if from_left { speed_px_s } else { -speed_px_s },
                            speed_px_s * 0.1,
                            speed_px_s * 0.2,
                            speed_px_s * 0.12,
                        ],
                        jitter_px: 0.8,
                        score: 0.95,
                        ..ObjectSpec::default()
                    });
                }
            }
        }
        out
    }
}

struct Background {
    lattice: Vec<f64>,
}

impl Background {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Background {
            lattice: (0..NOISE_LATTICE * NOISE_LATTICE)
                .map(|_| rng.random_range(70.0..170.0))
                .collect(),
        }
    }

    fn lattice_at(&self, i: i64, j: i64) -> f64 {
        let n = NOISE_LATTICE as i64;
        self.lattice[(i.rem_euclid(n) * n + j.rem_euclid(n)) as usize]
    }

    fn value(&self, u: f64, v: f64) -> f64 {
        let (i, j) = (v.floor(), u.floor());
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fy, fx) = (smooth(v - i), smooth(u - j));
        let (i, j) = (i as i64, j as i64);
        let top = self.lattice_at(i, j) * (1.0 - fx) + self.lattice_at(i, j + 1) * fx;
        let bottom = self.lattice_at(i + 1, j) * (1.0 - fx) + self.lattice_at(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Two octaves sampled at thumbnail coordinates.
    fn sample(&self, u: f64, v: f64) -> f64 {
        0.7 * self.value(u / 4.0, v / 4.0) + 0.3 * self.value(u / 2.0 + 7.3, v / 2.0 + 3.1)
    }
}

fn class_intensity(c: ClassId) -> f64 {
    match c {
        ClassId::Vehicle => 35.0,
        ClassId::Pedestrian => 225.0,
        ClassId::Bicycle => 190.0,
        ClassId::TrafficSign => 245.0,
        ClassId::TrafficLight => 15.0,
        ClassId::Other => 128.0,
    }
}

fn coverage(b: &BBox, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    let ox = (b.right() as f64).min(x1) - (b.x() as f64).max(x0);
    let oy = (b.bottom() as f64).min(y1) - (b.y() as f64).max(y0);
    if ox <= 0.0 || oy <= 0.0 {
        0.0
    } else {
        ox * oy / ((x1 - x0) * (y1 - y0))
    }
}

fn static_layout(width: u32, height: u32) -> (BBox, Vec<SegBox>) {
    let top = (height as f64 * ROAD_TOP).round() as u32;
    let road = BBox::from_corners(0, top, width, height).expect("road band is non-empty");
    let strip = (width / 100).max(1);
    let mut segs = vec![SegBox {
        class_id: ClassId::Other,
        bbox: road,
    }];
    for frac in [0.33, 0.66] {
        let x = (width as f64 * frac).round() as u32;
        segs.push(SegBox {
            class_id: ClassId::Other,
            bbox: BBox::from_corners(x, top, (x + strip).min(width), height).expect("lane strip"),
        });
    }
    (road, segs)
}

fn place(o: &ObjectSpec, t: f64, jitter: (f64, f64), width: u32, height: u32) -> Option<BBox> {
    let dt = t - o.spawn_s;
    let v = if o.stationary { [0.0; 4] } else { o.velocity };
    let x = o.start[0] + v[0] * dt + jitter.0;
    let y = o.start[1] + v[1] * dt + jitter.1;
    let w = (o.start[2] + v[2] * dt).max(1.0);
    let h = (o.start[3] + v[3] * dt).max(1.0);
    let x0 = x.round().clamp(0.0, width as f64) as u32;
    let y0 = y.round().clamp(0.0, height as f64) as u32;
    let x1 = (x + w).round().clamp(0.0, width as f64) as u32;
    let y1 = (y + h).round().clamp(0.0, height as f64) as u32;
    BBox::from_corners(x0, y0, x1, y1).ok()
}

/// Renders a script into a trace. Deterministic in `(script, seed)`.
pub fn generate(script: &ScenarioScript, seed: u64) -> Result<Trace> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Background::new(&mut rng);
    let objects = script.expanded_objects();
    let (width, height) = (script.width, script.height);
    let (road, lane_segs) = static_layout(width, height);
    let cell_w = width as f64 / THUMB_SIDE as f64;
    let cell_h = height as f64 / THUMB_SIDE as f64;

    let n = script.frame_count();
    let mut frames = Vec::with_capacity(n as usize);
    for seq in 0..n {
        let timestamp_us = frame_timestamp_us(seq, script.fps);
        let t = timestamp_us as f64 / 1e6;
        let mut truths = Vec::new();
        for o in &objects {
            if t < o.spawn_s || o.despawn_s.is_some_and(|d| t >= d) {
                continue;
            }
            let jitter = if o.jitter_px > 0.0 {
                (
                    rng.random_range(-o.jitter_px..=o.jitter_px),
                    rng.random_range(-o.jitter_px..=o.jitter_px),
                )
            } else {
                (0.0, 0.0)
            };
            if let Some(bbox) = place(o, t, jitter, width, height) {
                truths.push(Detection {
                    class_id: o.class,
                    bbox,
                    score: o.score,
                });
            }
        }

        let scroll = script.ego_speed_px_s * t / cell_h;
        let mut pixels = Vec::with_capacity(THUMB_LEN);
        for r in 0..THUMB_SIDE {
            for c in 0..THUMB_SIDE {
                let (x0, y0) = (c as f64 * cell_w, r as f64 * cell_h);
                let (x1, y1) = (x0 + cell_w, y0 + cell_h);
                let mut value = background.sample(c as f64 + 0.5, r as f64 + 0.5 - scroll);
                let road_cov = coverage(&road, x0, y0, x1, y1);
                value *= 1.0 - 0.45 * road_cov;
                for seg in &lane_segs[1..] {
                    let cov = coverage(&seg.bbox, x0, y0, x1, y1);
                    value = value * (1.0 - cov) + 230.0 * cov;
                }
                for d in &truths {
                    let cov = coverage(&d.bbox, x0, y0, x1, y1);
                    value = value * (1.0 - cov) + class_intensity(d.class_id) * cov;
                }
                pixels.push(value.round().clamp(0.0, 255.0));
            }
        }

        let mut seg_boxes = lane_segs.clone();
        seg_boxes.extend(truths.iter().map(|d| SegBox {
            class_id: d.class_id,
            bbox: d.bbox,
        }));
        frames.push(FrameRecord {
            seq,
            timestamp_us,
            width,
            height,
            thumbnail: Thumbnail::new(pixels)?,
            truths,
            seg_boxes,
        });
    }
    Ok(Trace {
        header: TraceHeader {
            fps: script.fps,
            width,
            height,
            frame_count: n,
            scenario_tag: script.name.clone(),
            format_version: FORMAT_VERSION,
        },
        frames,
    })
}

fn score(rng: &mut ChaCha8Rng) -> f64 {
    // a few hard objects fall below the confidence cut
    let s = if rng.random_bool(0.08) {
        rng.random_range(0.3..0.5)
    } else {
        rng.random_range(0.55..0.99)
    };
    (s * 1000.0_f64).round() / 1000.0
}

fn vehicle(rng: &mut ChaCha8Rng, spawn_s: f64, x: f64, lane_y: f64, vx: f64) -> ObjectSpec {
    let w = rng.random_range(140.0..260.0);
    ObjectSpec {
        class: ClassId::Vehicle,
        spawn_s,
        start: [x, lane_y, w, w * 0.62],
        velocity: [vx, 0.0, 0.0, 0.0],
        jitter_px: 0.6,
        score: score(rng),
        ..ObjectSpec::default()
    }
}

fn pedestrian(rng: &mut ChaCha8Rng, spawn_s: f64, x: f64, y: f64, vx: f64) -> ObjectSpec {
    let h = rng.random_range(70.0..95.0);
    ObjectSpec {
        class: ClassId::Pedestrian,
        spawn_s,
        start: [x, y, h * 0.4, h],
        velocity: [vx, 0.0, 0.0, 0.0],
        jitter_px: 0.5,
        score: score(rng),
        ..ObjectSpec::default()
    }
}

fn fixture(class: ClassId, x: f64, y: f64, w: f64, h: f64) -> ObjectSpec {
    ObjectSpec {
        class,
        start: [x, y, w, h],
        score: 0.9,
        stationary: true,
        ..ObjectSpec::default()
    }
}

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Spawns an object at the edge it moves away from.
fn edge_x(vx: f64, width: f64, w: f64) -> f64 {
    if vx >= 0.0 {
        0.0
    } else {
        width - w
    }
}

/// Builds one of [`BUILTIN_SCENARIOS`]; `fps` overrides the 30 FPS default.
pub fn builtin(name: &str, seed: u64, fps: Option<u32>) -> Result<ScenarioScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce7_a710);
    let (w, h) = (1280.0, 720.0);
    let lanes = [h * 0.58, h * 0.64, h * 0.72];
    let mut s = ScenarioScript {
        name: name.to_string(),
        fps: fps.unwrap_or(30),
        ..ScenarioScript::default()
    };
    match name {
        "highway" => {
            s.duration_s = 60.0;
            s.ego_speed_px_s = 60.0;
            for lane in lanes {
                for _ in 0..2 {
                    let x = rng.random_range(40.0..1000.0);
                    let vx = signed(&mut rng, 2.0, 25.0);
                    s.objects.push(vehicle(&mut rng, 0.0, x, lane, vx));
                }
            }
            let mut t = 4.0;
            while t < s.duration_s {
                s.objects.push(ObjectSpec {
                    class: ClassId::TrafficSign,
                    spawn_s: t,
                    despawn_s: Some(t + 6.0),
                    start: [w * 0.7, h * 0.25, 30.0, 30.0],
                    velocity: [45.0, -12.0, 4.0, 4.0],
                    score: 0.9,
                    ..ObjectSpec::default()
                });
                t += rng.random_range(8.0..14.0);
            }
            s.events.push(EventSpec::CutIn { at_s: 20.0, from_left: true, speed_px_s: 150.0 });
            s.events.push(EventSpec::CutIn { at_s: 45.0, from_left: false, speed_px_s: 170.0 });
        }
        "downtown" => {
            s.duration_s = 70.0;
            s.ego_speed_px_s = 25.0;
            for _ in 0..7 {
                let lane = lanes[rng.random_range(0..lanes.len())];
                let x = rng.random_range(0.0..1100.0);
                let vx = signed(&mut rng, 15.0, 90.0);
                s.objects.push(vehicle(&mut rng, 0.0, x, lane, vx));
            }
            let mut t = rng.random_range(1.0..3.0);
            while t < s.duration_s {
                let lane = lanes[rng.random_range(0..lanes.len())];
                let vx = signed(&mut rng, 40.0, 110.0);
                let mut v = vehicle(&mut rng, t, 0.0, lane, vx);
                v.start[0] = edge_x(vx, w, v.start[2]);
                s.objects.push(v);
                t += rng.random_range(2.0..5.0);
            }
            let mut t = rng.random_range(0.5..2.0);
            while t < s.duration_s {
                for _ in 0..rng.random_range(1..=2) {
                    let vx = signed(&mut rng, 25.0, 60.0);
                    let y = rng.random_range(h * 0.40..h * 0.46);
                    let mut p = pedestrian(&mut rng, t, 0.0, y, vx);
                    p.start[0] = edge_x(vx, w, p.start[2]);
                    s.objects.push(p);
                }
                t += rng.random_range(3.0..7.0);
            }
            let mut t = rng.random_range(4.0..8.0);
            while t < s.duration_s {
                let vx = signed(&mut rng, 70.0, 130.0);
                s.objects.push(ObjectSpec {
                    class: ClassId::Bicycle,
                    spawn_s: t,
                    start: [edge_x(vx, w, 50.0), h * 0.52, 50.0, 70.0],
                    velocity: [vx, 0.0, 0.0, 0.0],
                    jitter_px: 0.5,
                    score: score(&mut rng),
                    ..ObjectSpec::default()
                });
                t += rng.random_range(9.0..15.0);
            }
            for k in 0..3 {
                let x = 150.0 + k as f64 * 420.0 + rng.random_range(0.0..80.0);
                s.objects.push(fixture(ClassId::TrafficSign, x, rng.random_range(120.0..200.0), 32.0, 32.0));
            }
            for k in 0..2 {
                let x = 350.0 + k as f64 * 520.0 + rng.random_range(0.0..60.0);
                s.objects.push(fixture(ClassId::TrafficLight, x, rng.random_range(60.0..110.0), 22.0, 54.0));
            }
            s.events.push(EventSpec::PedestrianCrossing { at_s: 22.0, count: 4, from_left: true, speed_px_s: 55.0 });
            s.events.push(EventSpec::PedestrianCrossing { at_s: 48.0, count: 6, from_left: false, speed_px_s: 65.0 });
            for (at_s, from_left) in [(12.0, true), (35.0, false), (58.0, true)] {
                s.events.push(EventSpec::CutIn { at_s, from_left, speed_px_s: 150.0 });
            }
        }
        "crossing" => {
            s.duration_s = 15.0;
            for (x, lane) in [(200.0, lanes[1]), (850.0, lanes[2])] {
                let mut v = vehicle(&mut rng, 0.0, x, lane, 0.0);
                v.jitter_px = 0.3;
                v.score = 0.9;
                s.objects.push(v);
            }
            s.objects.push(fixture(ClassId::TrafficSign, 1100.0, 150.0, 32.0, 32.0));
            s.events.push(EventSpec::PedestrianCrossing { at_s: 5.0, count: 5, from_left: true, speed_px_s: 60.0 });
        }
        "signal_stop" => {
            s.duration_s = 30.0;
            for (k, lane) in lanes.iter().enumerate() {
                let mut v = vehicle(&mut rng, 0.0, 300.0 + k as f64 * 260.0, *lane, 0.0);
                v.jitter_px = 0.4;
                s.objects.push(v);
            }
            s.objects.push(fixture(ClassId::TrafficLight, 620.0, 80.0, 22.0, 54.0));
            s.objects.push(fixture(ClassId::TrafficSign, 180.0, 160.0, 32.0, 32.0));
            s.objects.push(fixture(ClassId::TrafficSign, 1050.0, 170.0, 32.0, 32.0));
            let mut t = rng.random_range(1.0..3.0);
            while t < s.duration_s {
                let vx = signed(&mut rng, 120.0, 180.0);
                let mut v = vehicle(&mut rng, t, 0.0, h * 0.5, vx);
                v.start[2] *= 0.5;
                v.start[3] *= 0.5;
                v.start[0] = edge_x(vx, w, v.start[2]);
                s.objects.push(v);
                t += rng.random_range(3.0..6.0);
            }
            s.events.push(EventSpec::PedestrianCrossing { at_s: 8.0, count: 3, from_left: false, speed_px_s: 50.0 });
        }
        other => {
            return Err(Error::config(
                "scenario",
                format!("unknown scenario `{other}`; valid names: {}", BUILTIN_SCENARIOS.join(", ")),
            ))
        }
    }
    s.validate()?;
    Ok(s)
}
