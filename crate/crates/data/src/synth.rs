//! Procedural road world: a bicycle-model car on a three-lane road seen by a
//! forward camera, rendered at twice the target resolution and downsampled.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use lrsim_tensor::SeededRng;
use serde::{Deserialize, Serialize};

use crate::episode::{Episode, Geometry, GroundTruth};
use crate::error::{DataError, Result};
use crate::preprocess::{preprocess_frame, RawFrame};

pub const PHYSICS_HZ: f64 = 100.0;
pub const STEER_RATIO: f64 = 15.0;
pub const WHEELBASE_M: f64 = 2.7;
pub const LANE_M: f64 = 3.5;
const LINE_M: f64 = 0.2;
const CAR_HEIGHT_M: f64 = 1.5;
const MAX_STEER_DEG: f64 = 45.0;
const SPEED_SENSOR_HZ: f64 = 25.0;
const STEER_SENSOR_HZ: f64 = 40.0;
const FOG_M: f64 = 160.0;
const SUBSAMPLES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Constant speed, zero steering, straight road.
    Straight,
    /// Lane keeping towards a target lane that switches every few seconds.
    LaneChange,
    /// Lane keeping along a road with varying curvature.
    Curve,
    /// Lane keeping perturbed by a wandering steering offset.
    RandomWalk,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Straight, Policy::LaneChange, Policy::Curve, Policy::RandomWalk];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Straight => "straight",
            Policy::LaneChange => "lane-change",
            Policy::Curve => "curve",
            Policy::RandomWalk => "random-walk",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| DataError::Config(format!("unknown policy `{s}` (straight, lane-change, curve, random-walk)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadingCar {
    /// Initial gap, metres.
    pub distance_m: f64,
    pub width_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticRoadConfig {
    /// Output width in pixels (the renderer works at twice this).
    pub width: usize,
    pub height: usize,
    /// Lane width at the bottom image row as a fraction of the image width.
    pub lane_width: f64,
    pub dash_length: f64,
    pub dash_gap: f64,
    /// Horizon position as a fraction of the image height.
    pub horizon_row: f64,
    pub leading_car: Option<LeadingCar>,
    /// Standard deviation of the fixed-pattern sensor noise, 8-bit units.
    pub noise_std: f64,
    /// Half-width of the per-episode brightness factor range.
    pub brightness_jitter: f64,
    pub base_speed: f64,
    pub frame_rate_hz: f64,
    pub seed: u64,
}

impl Default for SyntheticRoadConfig {
    fn default() -> Self {
        SyntheticRoadConfig {
            width: 64,
            height: 32,
            lane_width: 0.3,
            dash_length: 3.0,
            dash_gap: 6.0,
            horizon_row: 0.4,
            leading_car: Some(LeadingCar { distance_m: 30.0, width_m: 1.9 }),
            noise_std: 2.0,
            brightness_jitter: 0.1,
            base_speed: 20.0,
            frame_rate_hz: 20.0,
            seed: 0,
        }
    }
}

impl SyntheticRoadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("image extent must be positive");
        }
        if !(self.horizon_row > 0.0 && self.horizon_row < 1.0) {
            return bad("horizon_row must lie in (0, 1)");
        }
        if !(self.dash_length > 0.0 && self.dash_gap > 0.0) {
            return bad("dash_length and dash_gap must be positive");
        }
        if !(self.lane_width > 0.0) {
            return bad("lane_width must be positive");
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz <= PHYSICS_HZ) {
            return bad("frame rate must lie in (0, 100] Hz");
        }
        if !(self.base_speed >= 0.0) || !(self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.brightness_jitter) {
            return bad("speed, noise and brightness jitter must be non-negative (jitter below 1)");
        }
        if let Some(car) = self.leading_car {
            if !(car.distance_m > 0.0 && car.width_m > 0.0) {
                return bad("leading car distance and width must be positive");
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry { height: self.height, width: self.width }
    }

    pub fn dash_period(&self) -> f64 {
        self.dash_length + self.dash_gap
    }
}

/// Pinhole camera over flat ground, in raw (2x) pixel units.
#[derive(Debug, Clone, Copy)]
struct Camera {
    focal: f64,
    height_m: f64,
    horizon: f64,
    cx: f64,
}

impl Camera {
    fn new(cfg: &SyntheticRoadConfig) -> Self {
        let (w, h) = ((2 * cfg.width) as f64, (2 * cfg.height) as f64);
        let horizon = cfg.horizon_row * h;
        // Pick the camera height so one lane spans `lane_width * W` pixels at the bottom row.
        let height_m = LANE_M * (h - horizon) / (cfg.lane_width * w);
        Camera { focal: w, height_m, horizon, cx: w / 2.0 }
    }

    fn ground_distance(&self, row: f64) -> f64 {
        self.height_m * self.focal / (row - self.horizon)
    }
}

/// Vehicle and world state at one physics tick.
#[derive(Debug, Clone, Copy, Default)]
struct State {
    odometer: f64,
    lateral: f64,
    heading: f64,
    curvature: f64,
    speed: f64,
    steer_deg: f64,
    lead_gap: f64,
}

impl State {
    fn lerp(a: &State, b: &State, w: f64) -> State {
        let l = |x: f64, y: f64| x + w * (y - x);
        State {
            odometer: l(a.odometer, b.odometer),
            lateral: l(a.lateral, b.lateral),
            heading: l(a.heading, b.heading),
            curvature: l(a.curvature, b.curvature),
            speed: l(a.speed, b.speed),
            steer_deg: l(a.steer_deg, b.steer_deg),
            lead_gap: l(a.lead_gap, b.lead_gap),
        }
    }
}

/// Lane-keeping steering (degrees at the wheel) towards `target` lateral offset.
fn lane_keeping(s: &State, target: f64) -> f64 {
    let wheel = WHEELBASE_M * s.curvature - 0.00675 * (s.lateral - target) - 0.216 * s.heading;
    wheel * STEER_RATIO * 180.0 / PI
}

struct Driver {
    policy: Policy,
    rng: SeededRng,
    target_lane: f64,
    target: f64,
    next_switch: f64,
    wander: f64,
    speed: f64,
    base_speed: f64,
    curvature_from: f64,
    curvature_to: f64,
    segment_start: f64,
    segment_len: f64,
}

impl Driver {
    fn new(policy: Policy, base_speed: f64, mut rng: SeededRng) -> Self {
        let next_switch = 2.0 + 4.0 * rng.next_uniform();
        let segment_len = 80.0 + 200.0 * rng.next_uniform();
        Driver {
            policy,
            rng,
            target_lane: 0.0,
            target: 0.0,
            next_switch,
            wander: 0.0,
            speed: base_speed,
            base_speed,
            curvature_from: 0.0,
            curvature_to: 0.0,
            segment_start: 0.0,
            segment_len,
        }
    }

    fn ou_speed(&mut self, dt: f64) {
        let noise = self.rng.next_gaussian() * 1.5 * dt.sqrt();
        self.speed += 0.2 * (self.base_speed - self.speed) * dt + noise;
        self.speed = self.speed.clamp(0.25 * self.base_speed, 1.6 * self.base_speed);
    }

    /// Road curvature at `odometer`; smooth ramps between random segments.
    fn curvature(&mut self, odometer: f64) -> f64 {
        if self.policy != Policy::Curve && self.policy != Policy::RandomWalk {
            return 0.0;
        }
        let amplitude = if self.policy == Policy::Curve { 1.0 / 200.0 } else { 1.0 / 800.0 };
        while odometer > self.segment_start + self.segment_len {
            self.segment_start += self.segment_len;
            self.segment_len = 80.0 + 200.0 * self.rng.next_uniform();
            self.curvature_from = self.curvature_to;
            self.curvature_to = amplitude * (2.0 * self.rng.next_uniform() - 1.0);
        }
        let ramp = ((odometer - self.segment_start) / 50.0).min(1.0);
        self.curvature_from + ramp * (self.curvature_to - self.curvature_from)
    }

    /// Returns (steering wheel degrees, speed m/s) for this tick.
    fn act(&mut self, s: &State, time: f64, dt: f64) -> (f64, f64) {
        match self.policy {
            Policy::Straight => (0.0, self.base_speed),
            Policy::LaneChange => {
                if time >= self.next_switch {
                    self.target_lane = LANE_M * (self.rng.next_below(3) as f64 - 1.0);
                    self.next_switch = time + 3.0 + 5.0 * self.rng.next_uniform();
                }
                // The aim point slides towards the chosen lane at 1.2 m/s.
                let step = 1.2 * dt;
                self.target += (self.target_lane - self.target).clamp(-step, step);
                self.ou_speed(dt);
                (lane_keeping(s, self.target), self.speed)
            }
            Policy::Curve => {
                self.ou_speed(dt);
                (lane_keeping(s, 0.0), self.speed)
            }
            Policy::RandomWalk => {
                self.wander += -0.3 * self.wander * dt + 6.0 * self.rng.next_gaussian() * dt.sqrt();
                self.ou_speed(dt);
                (lane_keeping(s, 0.0) + self.wander, self.speed)
            }
        }
    }
}

fn simulate(cfg: &SyntheticRoadConfig, policy: Policy, duration: f64, rng: SeededRng) -> Vec<State> {
    let dt = 1.0 / PHYSICS_HZ;
    let ticks = (duration * PHYSICS_HZ).ceil() as usize + 2;
    let mut driver = Driver::new(policy, cfg.base_speed, rng);
    let lead = cfg.leading_car;
    let lead_phase = 2.0 * PI * driver.rng.next_uniform();
    let mut s = State { lead_gap: lead.map_or(f64::NAN, |c| c.distance_m), ..State::default() };
    s.curvature = driver.curvature(0.0);
    let mut out = Vec::with_capacity(ticks);
    for i in 0..ticks {
        let time = i as f64 * dt;
        let (steer, speed) = driver.act(&s, time, dt);
        s.steer_deg = steer.clamp(-MAX_STEER_DEG, MAX_STEER_DEG);
        s.speed = speed;
        out.push(s);
        let wheel = (s.steer_deg / STEER_RATIO).to_radians();
        let yaw_rate = s.speed / WHEELBASE_M * wheel.tan();
        let lateral = s.lateral + s.speed * s.heading.sin() * dt;
        s.heading += (yaw_rate - s.speed * s.curvature) * dt;
        s.lateral = lateral.clamp(-2.5 * LANE_M, 2.5 * LANE_M);
        s.odometer += s.speed * dt;
        s.curvature = driver.curvature(s.odometer);
        if lead.is_some() {
            // Leading car speed is a fraction of ego speed, so a stopped ego sees a stopped world.
            let ratio = 0.25 * (2.0 * PI * time / 17.0 + lead_phase).sin();
            s.lead_gap += ratio * s.speed * dt;
            if s.lead_gap < 12.0 || s.lead_gap > 70.0 {
                s.lead_gap = s.lead_gap.clamp(12.0, 70.0);
            }
        }
    }
    out
}

fn state_at(states: &[State], time: f64) -> State {
    let x = time * PHYSICS_HZ;
    let i = (x.floor() as usize).min(states.len() - 2);
    State::lerp(&states[i], &states[i + 1], x - i as f64)
}

#[derive(Debug, Clone, Copy)]
struct Palette {
    sky_top: [f64; 3],
    haze: [f64; 3],
    asphalt: [f64; 3],
    paint: [f64; 3],
    grass: [f64; 3],
    body: [f64; 3],
    window: [f64; 3],
}

impl Palette {
    fn scaled(b: f64) -> Self {
        let s = |c: [f64; 3]| c.map(|v| v * b);
        Palette {
            sky_top: s([90.0, 140.0, 210.0]),
            haze: s([200.0, 212.0, 225.0]),
            asphalt: s([85.0, 85.0, 92.0]),
            paint: s([235.0, 235.0, 225.0]),
            grass: s([70.0, 125.0, 55.0]),
            body: s([160.0, 35.0, 30.0]),
            window: s([40.0, 45.0, 60.0]),
        }
    }
}

fn mix(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2])]
}

struct Renderer<'a> {
    cfg: &'a SyntheticRoadConfig,
    cam: Camera,
    palette: Palette,
    noise: Vec<f64>,
}

impl Renderer<'_> {
    /// Lateral position of the road centre at distance `d`, car frame.
    fn road_centre(s: &State, d: f64) -> f64 {
        -s.lateral - s.heading * d + 0.5 * s.curvature * d * d
    }

    fn ground_colour(&self, s: &State, d: f64, x: f64) -> [f64; 3] {
        let p = &self.palette;
        let u = x - Self::road_centre(s, d);
        let half_road = 1.5 * LANE_M;
        let half_line = 0.5 * LINE_M;
        let along = s.odometer + d;
        let period = self.cfg.dash_period();
        let colour = if u.abs() > half_road + half_line {
            p.grass
        } else if (u.abs() - half_road).abs() <= half_line {
            p.paint
        } else if (u.abs() - 0.5 * LANE_M).abs() <= half_line && along.rem_euclid(period) < self.cfg.dash_length {
            p.paint
        } else {
            p.asphalt
        };
        mix(colour, p.haze, 1.0 - (-d / FOG_M).exp())
    }

    fn lead_colour(&self, s: &State, row: f64, col: f64) -> Option<[f64; 3]> {
        let car = self.cfg.leading_car?;
        let gap = s.lead_gap;
        if !gap.is_finite() {
            return None;
        }
        let cam = &self.cam;
        let bottom = cam.horizon + cam.height_m * cam.focal / gap;
        let top = cam.horizon + (cam.height_m - CAR_HEIGHT_M) * cam.focal / gap;
        if row < top || row > bottom {
            return None;
        }
        let centre = cam.cx + Self::road_centre(s, gap) * cam.focal / gap;
        let half = 0.5 * car.width_m * cam.focal / gap;
        if (col - centre).abs() > half {
            return None;
        }
        let frac = (row - top) / (bottom - top);
        let c = if frac < 0.45 && (col - centre).abs() < 0.8 * half { self.palette.window } else { self.palette.body };
        Some(mix(c, self.palette.haze, 1.0 - (-gap / FOG_M).exp()))
    }

    fn sample(&self, s: &State, row: f64, col: f64) -> [f64; 3] {
        let cam = &self.cam;
        if let Some(c) = self.lead_colour(s, row, col) {
            return c;
        }
        if row <= cam.horizon + 1e-6 {
            let w = (row / cam.horizon).clamp(0.0, 1.0);
            return mix(self.palette.sky_top, self.palette.haze, w);
        }
        let d = cam.ground_distance(row);
        let x = (col - cam.cx) * d / cam.focal;
        self.ground_colour(s, d, x)
    }

    fn render(&self, s: &State) -> RawFrame {
        let (h, w) = (2 * self.cfg.height, 2 * self.cfg.width);
        let mut rgb = vec![0u8; h * w * 3];
        let n = SUBSAMPLES as f64;
        for r in 0..h {
            for c in 0..w {
                let mut acc = [0.0; 3];
                for i in 0..SUBSAMPLES {
                    for j in 0..SUBSAMPLES {
                        let v = self.sample(s, r as f64 + (i as f64 + 0.5) / n, c as f64 + (j as f64 + 0.5) / n);
                        for k in 0..3 {
                            acc[k] += v[k];
                        }
                    }
                }
                for k in 0..3 {
                    let idx = (r * w + c) * 3 + k;
                    let v = acc[k] / (n * n) + self.noise[idx];
                    rgb[idx] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        RawFrame { height: h, width: w, rgb }
    }
}

fn build_renderer(cfg: &SyntheticRoadConfig) -> Renderer<'_> {
    let mut look = SeededRng::derived(cfg.seed, 1);
    let brightness = 1.0 + cfg.brightness_jitter * (2.0 * look.next_uniform() - 1.0);
    let n = 4 * cfg.width * cfg.height * 3;
    let noise = if cfg.noise_std > 0.0 { look.gaussian_vec::<f64>(n, 0.0, cfg.noise_std) } else { vec![0.0; n] };
    Renderer { cfg, cam: Camera::new(cfg), palette: Palette::scaled(brightness), noise }
}

/// Generates an episode of `n_frames` frames. A pure function of
/// `(config, policy)`; sensor noise is a fixed per-episode pattern.
pub fn synth_generate(cfg: &SyntheticRoadConfig, n_frames: usize, policy: Policy) -> Result<Episode> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(DataError::Config("n_frames must be at least 1".into()));
    }
    let frame_dt = 1.0 / cfg.frame_rate_hz;
    let last = (n_frames - 1) as f64 * frame_dt;
    let duration = last + 0.2;
    let states = simulate(cfg, policy, duration, SeededRng::derived(cfg.seed, 2));
    let renderer = build_renderer(cfg);

    let frame_ts: Vec<f64> = (0..n_frames).map(|k| k as f64 * frame_dt).collect();
    let mut frames = Vec::with_capacity(n_frames * cfg.geometry().frame_len());
    let mut truth = GroundTruth::default();
    for &t in &frame_ts {
        let s = state_at(&states, t);
        frames.extend(preprocess_frame(&renderer.render(&s))?);
        truth.odometer.push(s.odometer);
        truth.lateral.push(s.lateral);
        truth.heading.push(s.heading);
        truth.curvature.push(s.curvature);
        truth.lead_gap.push(s.lead_gap);
        truth.dash_phase.push(s.odometer / cfg.dash_period());
    }

    // Sensors run on their own clocks, offset from the camera.
    let sensor = |hz: f64, offset: f64, pick: fn(&State) -> f64| {
        let count = ((duration - offset) * hz).floor() as usize + 1;
        let ts: Vec<f64> = (0..count).map(|j| offset + j as f64 / hz).collect();
        let vs: Vec<f32> = ts.iter().map(|&t| pick(&state_at(&states, t)) as f32).collect();
        (ts, vs)
    };
    let (speed_ts, speed) = sensor(SPEED_SENSOR_HZ, 0.004, |s| s.speed);
    let (steer_ts, steer) = sensor(STEER_SENSOR_HZ, 0.007, |s| s.steer_deg);

    let ep = Episode {
        geometry: cfg.geometry(),
        frames,
        frame_ts,
        speed_ts,
        speed,
        steer_ts,
        steer,
        rate_hz: cfg.frame_rate_hz,
        truth: Some(truth),
    };
    ep.validate()?;
    Ok(ep)
}

/// Ground-distance of each output row's centre, `None` above the horizon.
pub fn row_distances(cfg: &SyntheticRoadConfig) -> Vec<Option<f64>> {
    let cam = Camera::new(cfg);
    (0..cfg.height)
        .map(|r| {
            let raw = 2.0 * r as f64 + 1.0;
            (raw > cam.horizon + 1.0).then(|| cam.ground_distance(raw))
        })
        .collect()
}
