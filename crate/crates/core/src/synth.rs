//! Procedural interactive scenes: rigid 13-joint skeletons walking along
//! splines, shaking hands, passing each other and sitting on boxes, plus
//! surface-sampled point clouds of the floor, boxes and walls.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GeneratorConfig, ModelConfig, ScenarioKind};
use crate::data::{canonicalize_sample_or_floor, MotionSequence, Sample, SceneCloud, DEFAULT_FPS};
use crate::error::{HumofError, Result};

pub const TEMPLATE_JOINTS: usize = 13;
pub const JOINT_NAMES: [&str; TEMPLATE_JOINTS] = [
    "pelvis", "spine", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist", "l_knee",
    "l_ankle", "r_knee", "r_ankle",
];
/// Template bones as joint pairs; hips are implicit, so knees hang off the pelvis.
pub const BONES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (1, 3),
    (3, 4),
    (4, 5),
    (1, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (0, 11),
    (11, 12),
];

const STAND_HEIGHT: f64 = 0.95;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.45;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;
const HIP_WIDTH: f64 = 0.1;
const SHOULDER_WIDTH: f64 = 0.18;
const SHOULDER_HEIGHT: f64 = 0.5;
const STRIDE: f64 = 1.4;
/// Pelvis-to-pelvis distance of two people shaking hands.
pub const HANDSHAKE_DISTANCE: f64 = 0.7;
const BOX_HALF: f64 = 0.25;
const BOX_HEIGHT: f64 = 0.45;
const DECEL_FRAMES: usize = 12;
const TURN_FRAMES: usize = 15;
const SIT_FRAMES: usize = 30;
const REACH_FRAMES: usize = 10;
const MIN_SCENE_POINTS: usize = 2000;
/// Smallest arena half-extent that leaves room for every scenario layout.
pub const MIN_ARENA: f64 = 2.0;

/// SplitMix64 finalizer, used to derive independent per-sample seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a dataset generated with `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn lerp(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    add(a, scale(sub(b, a), w))
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Limb and root state of one skeleton at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub root: [f64; 3],
    pub heading: f64,
    /// Gait phase, radians.
    pub phase: f64,
    /// Leg swing amplitude, radians (0 when standing).
    pub amplitude: f64,
    /// Sitting progress in `[0, 1]`.
    pub sit: f64,
    /// Right-wrist reach target and blend weight.
    pub reach: Option<([f64; 3], f64)>,
}

impl BodyState {
    pub fn standing(root_xy: [f64; 2], heading: f64) -> Self {
        Self {
            root: [root_xy[0], root_xy[1], STAND_HEIGHT],
            heading,
            phase: 0.0,
            amplitude: 0.0,
            sit: 0.0,
            reach: None,
        }
    }
}

struct Frame {
    root: [f64; 3],
    fwd: [f64; 3],
    left: [f64; 3],
}

impl Frame {
    fn new(root: [f64; 3], heading: f64) -> Self {
        Self {
            root,
            fwd: [heading.cos(), heading.sin(), 0.0],
            left: [-heading.sin(), heading.cos(), 0.0],
        }
    }

    fn dir(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        add(add(scale(self.fwd, x), scale(self.left, y)), [0.0, 0.0, z])
    }

    fn point(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        add(self.root, self.dir(x, y, z))
    }
}

/// Elbow position for a two-bone chain from `shoulder` reaching `target`,
/// bending towards `pole`. The wrist lands on the target when it is within reach.
pub fn two_bone_ik(shoulder: [f64; 3], target: [f64; 3], pole: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let (a, b) = (UPPER_ARM, FOREARM);
    let to = sub(target, shoulder);
    let d = norm(to).clamp((a - b).abs() + 1e-9, a + b - 1e-9);
    let u = scale(to, 1.0 / norm(to).max(1e-12));
    let x = (a * a - b * b + d * d) / (2.0 * d);
    let h = (a * a - x * x).max(0.0).sqrt();
    let mut n = sub(pole, scale(u, dot(pole, u)));
    if norm(n) < 1e-9 {
        n = [u[1], -u[0], 0.0];
    }
    let n = scale(n, 1.0 / norm(n).max(1e-12));
    let elbow = add(add(shoulder, scale(u, x)), scale(n, h));
    let wrist = add(shoulder, scale(u, d));
    (elbow, wrist)
}

/// Joint positions of the 13-joint template.
pub fn pose(state: &BodyState) -> [[f64; 3]; TEMPLATE_JOINTS] {
    let f = Frame::new(state.root, state.heading);
    let a = state.amplitude;
    let (sin_p, cos_p) = state.phase.sin_cos();
    let mut j = [[0.0; 3]; TEMPLATE_JOINTS];
    j[0] = state.root;
    j[1] = f.point(0.0, 0.0, 0.3);
    j[2] = f.point(0.0, 0.0, 0.65);

    // Legs: thigh angle q (forward positive), knee flex k; sitting raises the
    // thigh to horizontal with a vertical shin.
    let sit_q = state.sit * FRAC_PI_2;
    let legs = [
        (HIP_WIDTH, a * sin_p, 0.8 * a * (1.0 - cos_p)),
        (-HIP_WIDTH, -a * sin_p, 0.8 * a * (1.0 + cos_p)),
    ];
    for (side, &(y, q, k)) in legs.iter().enumerate() {
        let q = q + sit_q;
        let k = k + sit_q;
        let hip = f.point(0.0, y, 0.0);
        let knee = add(hip, scale(f.dir(q.sin(), 0.0, -q.cos()), THIGH));
        let ankle = add(knee, scale(f.dir((q - k).sin(), 0.0, -(q - k).cos()), SHIN));
        j[9 + 2 * side] = knee;
        j[10 + 2 * side] = ankle;
    }

    // Arms swing against the legs; the elbow flexes a little more with speed.
    let flex = 0.25 + 0.5 * a;
    let arms = [(SHOULDER_WIDTH, -0.8 * a * sin_p), (-SHOULDER_WIDTH, 0.8 * a * sin_p)];
    for (side, &(y, swing)) in arms.iter().enumerate() {
        let shoulder = f.point(0.0, y, SHOULDER_HEIGHT);
        let elbow = add(shoulder, scale(f.dir(swing.sin(), 0.0, -swing.cos()), UPPER_ARM));
        let wrist = add(elbow, scale(f.dir((swing + flex).sin(), 0.0, -(swing + flex).cos()), FOREARM));
        let base = 3 + 3 * side;
        j[base] = shoulder;
        j[base + 1] = elbow;
        j[base + 2] = wrist;
        if side == 1 {
            if let Some((target, w)) = state.reach {
                if w > 0.0 {
                    let goal = lerp(wrist, target, smoothstep(w));
                    let pole = f.dir(-0.3, -1.0, -1.0);
                    let (e, wr) = two_bone_ik(shoulder, goal, pole);
                    j[base + 1] = e;
                    j[base + 2] = wr;
                }
            }
        }
    }
    j
}

/// Catmull-Rom spline through waypoints with an arc-length lookup table.
#[derive(Debug, Clone)]
pub struct RootPath {
    points: Vec<[f64; 2]>,
    lengths: Vec<f64>,
}

const SAMPLES_PER_SEGMENT: usize = 64;

impl RootPath {
    pub fn new(waypoints: &[[f64; 2]]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(HumofError::BadScenario("a path needs at least two waypoints".into()));
        }
        let n = waypoints.len();
        let get = |i: isize| -> [f64; 2] {
            if i < 0 {
                let (a, b) = (waypoints[0], waypoints[1]);
                [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
            } else if i as usize >= n {
                let (a, b) = (waypoints[n - 1], waypoints[n - 2]);
                [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
            } else {
                waypoints[i as usize]
            }
        };
        let mut points = Vec::with_capacity((n - 1) * SAMPLES_PER_SEGMENT + 1);
        for s in 0..n - 1 {
            let (p0, p1, p2, p3) = (get(s as isize - 1), get(s as isize), get(s as isize + 1), get(s as isize + 2));
            for k in 0..SAMPLES_PER_SEGMENT {
                let t = k as f64 / SAMPLES_PER_SEGMENT as f64;
                let (t2, t3) = (t * t, t * t * t);
                let c = |i: usize| {
                    0.5 * (2.0 * p1[i]
                        + (-p0[i] + p2[i]) * t
                        + (2.0 * p0[i] - 5.0 * p1[i] + 4.0 * p2[i] - p3[i]) * t2
                        + (-p0[i] + 3.0 * p1[i] - 3.0 * p2[i] + p3[i]) * t3)
                };
                points.push([c(0), c(1)]);
            }
        }
        points.push(waypoints[n - 1]);
        let mut lengths = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            lengths.push(lengths.last().unwrap() + d);
        }
        Ok(Self { points, lengths })
    }

    pub fn length(&self) -> f64 {
        *self.lengths.last().unwrap()
    }

    /// Position and heading at arc length `s`; beyond the end the path
    /// continues straight along the final tangent.
    pub fn at(&self, s: f64) -> ([f64; 2], f64) {
        let n = self.points.len();
        let i = match self.lengths.binary_search_by(|l| l.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.lengths[i + 1] - self.lengths[i];
        let w = if seg > 0.0 { (s - self.lengths[i]) / seg } else { 0.0 };
        let pos = [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w];
        (pos, (b[1] - a[1]).atan2(b[0] - a[0]))
    }
}

/// Distance covered and instantaneous speed at `frame` for a walker moving
/// at `speed` who decelerates to a stop at `stop` (if any).
pub fn travel(speed: f64, fps: f64, frame: usize, stop: Option<usize>) -> (f64, f64) {
    let f = frame as f64;
    match stop {
        None => (speed * f / fps, speed),
        Some(a) => {
            let n = DECEL_FRAMES.min(a) as f64;
            let start = a as f64 - n;
            if f <= start {
                (speed * f / fps, speed)
            } else if f < a as f64 {
                let tau = f - start;
                (speed * (start + tau - tau * tau / (2.0 * n)) / fps, speed * (1.0 - tau / n))
            } else {
                (speed * (start + n / 2.0) / fps, 0.0)
            }
        }
    }
}

/// Distance travelled until a full stop at frame `a`.
pub fn stopping_distance(speed: f64, fps: f64, a: usize) -> f64 {
    travel(speed, fps, a, Some(a)).0
}

fn walker_states(path: &RootPath, speed: f64, fps: f64, frames: usize, stop: Option<usize>) -> Vec<BodyState> {
    (0..frames)
        .map(|f| {
            let (d, v) = travel(speed, fps, f, stop);
            let (xy, heading) = path.at(d);
            BodyState {
                root: [xy[0], xy[1], STAND_HEIGHT],
                heading,
                phase: TAU * d / STRIDE,
                amplitude: 0.25 * v,
                sit: 0.0,
                reach: None,
            }
        })
        .collect()
}

fn states_to_motion(states: &[BodyState], fps: f64) -> MotionSequence {
    let mut coords = Array3::zeros((TEMPLATE_JOINTS, states.len(), 3));
    for (f, s) in states.iter().enumerate() {
        for (j, p) in pose(s).iter().enumerate() {
            for a in 0..3 {
                coords[[j, f, a]] = p[a];
            }
        }
    }
    MotionSequence { coords, fps }
}

/// An axis-aligned box resting on the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    /// Center of the footprint (x, y).
    pub center: [f64; 2],
    /// Full extents (x, y, height).
    pub size: [f64; 3],
}

/// A vertical wall between two floor points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Half-extent of the square floor, meters.
    pub floor_half_extent: f64,
    pub boxes: Vec<BoxSpec>,
    pub walls: Vec<WallSpec>,
    /// Points per square meter of surface.
    pub density: f64,
    pub seed: u64,
}

fn surface_count(area: f64, density: f64) -> usize {
    (area * density).round() as usize
}

/// Uniform surface sampling of the floor, box tops and sides, and walls.
pub fn generate_scene(spec: &SceneSpec) -> SceneCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let e = spec.floor_half_extent;
    for _ in 0..surface_count(4.0 * e * e, spec.density) {
        pts.push([rng.random_range(-e..e), rng.random_range(-e..e), 0.0]);
    }
    for b in &spec.boxes {
        let [sx, sy, h] = b.size;
        let (x0, y0) = (b.center[0] - sx / 2.0, b.center[1] - sy / 2.0);
        for _ in 0..surface_count(sx * sy, spec.density) {
            pts.push([x0 + rng.random::<f64>() * sx, y0 + rng.random::<f64>() * sy, h]);
        }
        // Four sides: two spanning x at y0 / y0 + sy, two spanning y.
        for (len, fixed, along_x) in [(sx, y0, true), (sx, y0 + sy, true), (sy, x0, false), (sy, x0 + sx, false)] {
            for _ in 0..surface_count(len * h, spec.density) {
                let u = rng.random::<f64>() * len;
                let z = rng.random::<f64>() * h;
                pts.push(if along_x { [x0 + u, fixed, z] } else { [fixed, y0 + u, z] });
            }
        }
    }
    for w in &spec.walls {
        let len = ((w.to[0] - w.from[0]).powi(2) + (w.to[1] - w.from[1]).powi(2)).sqrt();
        for _ in 0..surface_count(len * w.height, spec.density) {
            let u: f64 = rng.random();
            let z = rng.random::<f64>() * w.height;
            pts.push([
                w.from[0] + u * (w.to[0] - w.from[0]),
                w.from[1] + u * (w.to[1] - w.from[1]),
                z,
            ]);
        }
    }
    let n = pts.len();
    let flat: Vec<f64> = pts.into_iter().flatten().collect();
    SceneCloud {
        points: Array2::from_shape_vec((n, 3), flat).expect("n x 3"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Number of interactive persons.
    pub others: usize,
    /// Observed frames; the scenario lasts `history + horizon` frames.
    pub history: usize,
    pub horizon: usize,
    /// Half-extent of the square arena, meters.
    pub arena: f64,
    pub fps: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn frames(&self) -> usize {
        self.history + self.horizon
    }
}

/// Generated motions (full length, 13 joints) and the boxes they rely on.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub target: MotionSequence,
    pub others: Vec<MotionSequence>,
    pub boxes: Vec<BoxSpec>,
    /// Frame at which the handshake is fully formed, if any.
    pub contact_frame: Option<usize>,
}

fn inside(p: [f64; 2], arena: f64, margin: f64) -> bool {
    p[0].abs() <= arena - margin && p[1].abs() <= arena - margin
}

fn random_point<R: Rng>(rng: &mut R, arena: f64, margin: f64) -> [f64; 2] {
    let e = arena - margin;
    [rng.random_range(-e..e), rng.random_range(-e..e)]
}

fn unit(angle: f64) -> [f64; 2] {
    [angle.cos(), angle.sin()]
}

fn offset(p: [f64; 2], dir: [f64; 2], d: f64) -> [f64; 2] {
    [p[0] + dir[0] * d, p[1] + dir[1] * d]
}

/// Curved walking path of at least `length` meters, entirely inside the arena.
fn random_walk_path<R: Rng>(rng: &mut R, arena: f64, length: f64) -> Option<RootPath> {
    let margin = 0.5;
    let mut p = random_point(rng, arena, margin);
    let mut heading = rng.random_range(-PI..PI);
    let mut pts = vec![p];
    let mut total = 0.0;
    while total < length + 1.0 {
        heading += rng.random_range(-0.6..0.6);
        let step = rng.random_range(0.8..1.4);
        let next = offset(p, unit(heading), step);
        if !inside(next, arena, margin) {
            return None;
        }
        total += step;
        pts.push(next);
        p = next;
    }
    RootPath::new(&pts).ok()
}

fn check_inside(states: &[BodyState], arena: f64) -> bool {
    states.iter().all(|s| inside([s.root[0], s.root[1]], arena, 0.0))
}

const ATTEMPTS: usize = 200;

/// Idle bystander: either standing still or strolling along a random path.
fn bystander<R: Rng>(rng: &mut R, spec: &ScenarioSpec, avoid: &[[f64; 2]]) -> Result<Vec<BodyState>> {
    let frames = spec.frames();
    for _ in 0..ATTEMPTS {
        let states = if rng.random_bool(0.5) {
            let p = random_point(rng, spec.arena, 0.5);
            vec![BodyState::standing(p, rng.random_range(-PI..PI)); frames]
        } else {
            let speed = rng.random_range(0.5..1.5);
            let Some(path) = random_walk_path(rng, spec.arena, speed * frames as f64 / spec.fps) else {
                continue;
            };
            walker_states(&path, speed, spec.fps, frames, None)
        };
        let clear = states.iter().all(|s| {
            avoid
                .iter()
                .all(|a| ((s.root[0] - a[0]).powi(2) + (s.root[1] - a[1]).powi(2)).sqrt() > 1.0)
        });
        if clear && check_inside(&states, spec.arena) {
            return Ok(states);
        }
    }
    Err(HumofError::BadScenario("could not place a bystander inside the arena".into()))
}

/// Straight approach along `dir` ending at `stop_at` exactly at frame `arrival`.
fn approach(stop_at: [f64; 2], dir: [f64; 2], speed: f64, fps: f64, frames: usize, arrival: usize) -> Result<Vec<BodyState>> {
    let dist = stopping_distance(speed, fps, arrival);
    let start = offset(stop_at, dir, -dist);
    let path = RootPath::new(&[start, stop_at])?;
    Ok(walker_states(&path, speed, fps, frames, Some(arrival)))
}

/// Generates the full-length motions of one scenario.
pub fn generate_motions(spec: &ScenarioSpec) -> Result<Scenario> {
    if spec.history == 0 || spec.horizon == 0 {
        return Err(HumofError::BadScenario("durations must be positive".into()));
    }
    if !(spec.arena >= MIN_ARENA) {
        return Err(HumofError::BadScenario(format!(
            "arena half-extent {} is below the minimum of {MIN_ARENA} m",
            spec.arena
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = spec.frames();
    let (h, t, fps) = (spec.history, spec.horizon, spec.fps);
    // Arrival falls inside the forecast window, late enough that the
    // deceleration is rarely visible in the observed frames.
    let arrival_range = (h + 1)..(h + t.saturating_sub(t / 6)).max(h + 2);

    for _ in 0..ATTEMPTS {
        let speed = rng.random_range(0.5..1.5);
        let mut boxes = Vec::new();
        let mut contact_frame = None;
        let mut others: Vec<Vec<BodyState>> = Vec::new();
        let target = match spec.kind {
            ScenarioKind::Walk => {
                let Some(path) = random_walk_path(&mut rng, spec.arena, speed * frames as f64 / fps) else {
                    continue;
                };
                walker_states(&path, speed, fps, frames, None)
            }
            ScenarioKind::PassBy => {
                if spec.others == 0 {
                    return Err(HumofError::BadScenario("pass_by needs an interactive person".into()));
                }
                let dir = unit(rng.random_range(-PI..PI));
                let side = [-dir[1], dir[0]];
                let meet = random_point(&mut rng, spec.arena, 1.5);
                let cross = rng.random_range(h as f64..(h + t / 2) as f64) / fps;
                let start = offset(meet, dir, -speed * cross);
                let Ok(path) = RootPath::new(&[start, offset(start, dir, speed * frames as f64 / fps + 0.5)]) else {
                    continue;
                };
                let target = walker_states(&path, speed, fps, frames, None);
                let v2 = rng.random_range(0.5..1.5);
                let lateral = rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let m2 = offset(meet, side, lateral);
                let s2 = offset(m2, dir, v2 * cross);
                let p2 = RootPath::new(&[s2, offset(s2, dir, -(v2 * frames as f64 / fps + 0.5))])?;
                others.push(walker_states(&p2, v2, fps, frames, None));
                target
            }
            ScenarioKind::ApproachHandshake => {
                if spec.others == 0 {
                    return Err(HumofError::BadScenario("approach_handshake needs a partner".into()));
                }
                let arrival = rng.random_range(arrival_range.clone());
                let partner_at = random_point(&mut rng, spec.arena, 0.5);
                let dir = unit(rng.random_range(-PI..PI));
                let stop_at = offset(partner_at, dir, -HANDSHAKE_DISTANCE);
                let mut target = approach(stop_at, dir, speed, fps, frames, arrival)?;
                let facing = dir[1].atan2(dir[0]);
                let mut partner = vec![BodyState::standing(partner_at, facing + PI); frames];
                // Meet between the two right shoulders, below shoulder height.
                let shoulder = |s: &BodyState| pose(s)[6];
                let meet = lerp(shoulder(&target[frames - 1]), shoulder(&partner[0]), 0.5);
                let meet = add(meet, [0.0, 0.0, -0.3]);
                for f in 0..frames {
                    let w = (f as f64 - arrival as f64) / REACH_FRAMES as f64;
                    if w > 0.0 {
                        target[f].reach = Some((meet, w.min(1.0)));
                        partner[f].reach = Some((meet, w.min(1.0)));
                    }
                }
                contact_frame = Some(arrival + REACH_FRAMES);
                others.push(partner);
                target
            }
            ScenarioKind::SitOnBox => {
                let arrival = rng.random_range(arrival_range.clone());
                let center = random_point(&mut rng, spec.arena, 0.8);
                let u = unit(rng.random_range(-PI..PI));
                let stand = offset(center, u, THIGH);
                let mut target = approach(stand, [-u[0], -u[1]], speed, fps, frames, arrival)?;
                let from = (-u[1]).atan2(-u[0]);
                for (f, s) in target.iter_mut().enumerate().skip(arrival) {
                    let turn = smoothstep((f - arrival) as f64 / TURN_FRAMES as f64);
                    s.heading = from + PI * turn;
                    let sit = smoothstep((f as f64 - (arrival + TURN_FRAMES) as f64) / SIT_FRAMES as f64);
                    let q = sit * FRAC_PI_2;
                    s.sit = sit;
                    s.root[2] = STAND_HEIGHT - THIGH + THIGH * q.cos();
                    let back = THIGH * q.sin();
                    s.root[0] = stand[0] - u[0] * back;
                    s.root[1] = stand[1] - u[1] * back;
                }
                boxes.push(BoxSpec {
                    center,
                    size: [2.0 * BOX_HALF, 2.0 * BOX_HALF, BOX_HEIGHT],
                });
                target
            }
        };
        if !check_inside(&target, spec.arena) || !others.iter().all(|o| check_inside(o, spec.arena)) {
            continue;
        }
        let mut avoid: Vec<[f64; 2]> = target.iter().map(|s| [s.root[0], s.root[1]]).collect();
        avoid.extend(boxes.iter().map(|b| b.center));
        let mut ok = true;
        while others.len() < spec.others {
            match bystander(&mut rng, spec, &avoid) {
                Ok(b) => others.push(b),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        return Ok(Scenario {
            target: states_to_motion(&target, fps),
            others: others.iter().map(|o| states_to_motion(o, fps)).collect(),
            boxes,
            contact_frame,
        });
    }
    Err(HumofError::BadScenario(format!(
        "no feasible {:?} layout in an arena of half-extent {}",
        spec.kind, spec.arena
    )))
}

/// Scene for a scenario: floor over the arena, its boxes plus up to two
/// clutter boxes away from every person, and the four arena walls.
pub fn scenario_scene<R: Rng>(rng: &mut R, scenario: &Scenario, arena: f64, density: f64) -> SceneSpec {
    let mut boxes = scenario.boxes.clone();
    let clutter = rng.random_range(0..=2);
    let tracks: Vec<&MotionSequence> = std::iter::once(&scenario.target).chain(&scenario.others).collect();
    for _ in 0..clutter {
        for _ in 0..20 {
            let c = random_point(rng, arena, 0.5);
            let clear = tracks.iter().all(|m| {
                (0..m.frames()).all(|f| {
                    let r = m.root(f);
                    ((r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2)).sqrt() > 0.8
                })
            }) && boxes.iter().all(|b| ((b.center[0] - c[0]).powi(2) + (b.center[1] - c[1]).powi(2)).sqrt() > 0.8);
            if clear {
                boxes.push(BoxSpec {
                    center: c,
                    size: [rng.random_range(0.3..0.8), rng.random_range(0.3..0.8), rng.random_range(0.3..1.0)],
                });
                break;
            }
        }
    }
    let e = arena;
    let corners = [[-e, -e], [e, -e], [e, e], [-e, e]];
    let walls = (0..4)
        .map(|i| WallSpec {
            from: corners[i],
            to: corners[(i + 1) % 4],
            height: 2.0,
        })
        .collect();
    // Keep at least the minimum raw cloud size on the floor alone.
    let floor_area = 4.0 * arena * arena;
    let density = density.max(MIN_SCENE_POINTS as f64 / floor_area);
    SceneSpec {
        floor_half_extent: arena,
        boxes,
        walls,
        density,
        seed: rng.random(),
    }
}

fn select_joints(m: &MotionSequence, subset: Option<&[usize]>) -> MotionSequence {
    match subset {
        None => m.clone(),
        Some(s) => MotionSequence {
            coords: m.coords.select(ndarray::Axis(0), s),
            fps: m.fps,
        },
    }
}

/// One raw (not yet canonical) sample with its scenario kind.
pub fn generate_raw_sample(gen: &GeneratorConfig, model: &ModelConfig, index: u64) -> Result<(ScenarioKind, Sample)> {
    let seed = sample_seed(gen.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = gen.mix.values().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut kind = *gen.mix.keys().next_back().expect("non-empty mix");
    for (&k, &w) in &gen.mix {
        if pick < w {
            kind = k;
            break;
        }
        pick -= w;
    }
    let mut others = gen.others[rng.random_range(0..gen.others.len())];
    if matches!(kind, ScenarioKind::ApproachHandshake | ScenarioKind::PassBy) {
        others = others.max(1);
    }
    let spec = ScenarioSpec {
        kind,
        others,
        history: model.history,
        horizon: model.horizon,
        arena: gen.arena,
        fps: if model.fps > 0.0 { model.fps } else { DEFAULT_FPS },
        seed: rng.random(),
    };
    let scenario = generate_motions(&spec)?;
    let scene = generate_scene(&scenario_scene(&mut rng, &scenario, gen.arena, gen.density));
    let subset = gen.joint_subset.as_deref();
    let h = model.history;
    let cut = |m: &MotionSequence| select_joints(m, subset);
    let target = cut(&scenario.target);
    Ok((
        kind,
        Sample {
            target: target.window(0, h),
            others: scenario.others.iter().map(|o| cut(o).window(0, h)).collect(),
            scene,
            future: Some(target.window(h, spec.frames())),
            canonical: false,
        },
    ))
}

/// `n` canonical samples, generated independently from per-index seeds and
/// rounded through `f32`.
pub fn generate_dataset(gen: &GeneratorConfig, model: &ModelConfig, n: usize) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let (_, raw) = generate_raw_sample(gen, model, i)?;
            let mut s = canonicalize_sample_or_floor(&raw, model.scene_points, sample_seed(gen.seed, i))?;
            s.quantize_f32();
            Ok(s)
        })
        .collect()
}
