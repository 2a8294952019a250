//! Synthetic egocentric scenes: an analytic 16-joint body seen by a
//! head-mounted, down-facing fisheye camera over a textured floor.
//!
//! Device frame: `X` to the wearer's right, `Y` backwards, `Z` down along
//! the optical axis. The camera sits at the origin a few centimetres in
//! front of the forehead.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::event::{encode_lnes, Event, EventStream, LnesFrame, TimeWindow};
use crate::fisheye::FisheyeIntrinsics;
use crate::math::{self, add3, axis_angle, dot3, mat_vec, norm3, scale3, sub3, transpose, Mat3};
use crate::sim::{BrightnessVideo, EventSimulator, SimulatorConfig};
use crate::{Error, Result, MAP_HEIGHT, MAP_WIDTH, NUM_JOINTS};

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
    "left_foot",
    "right_foot",
];

/// Parent of every joint in the kinematic tree (`usize::MAX` for the root).
pub const PARENTS: [usize; NUM_JOINTS] = [usize::MAX, 0, 1, 1, 2, 3, 4, 5, 1, 1, 8, 9, 10, 11, 12, 13];

/// The ten activity categories used in reports.
pub const CATEGORIES: [&str; 10] =
    ["Walk", "Crouch", "Pushup", "Boxing", "Kick", "Dance", "Inter. with env.", "Crawl", "Sports", "Jump"];

/// Minimum frame rate accepted by the renderer.
pub const MIN_FPS: f64 = 100.0;
/// Default render rate.
pub const DEFAULT_FPS: f64 = 480.0;
/// Default heatmap Gaussian standard deviation, in heatmap pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;
/// Half field of view of the lens.
pub const HALF_FOV: f64 = 95.0 * core::f64::consts::PI / 180.0;

const FLOOR_DEPTH: f64 = 1.72;

/// Sixteen joints in the device frame, metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Skeleton16 {
    pub joints: [[f64; 3]; NUM_JOINTS],
}

impl Skeleton16 {
    pub fn bone_lengths(&self) -> [f64; NUM_JOINTS - 1] {
        let mut out = [0.0; NUM_JOINTS - 1];
        for j in 1..NUM_JOINTS {
            out[j - 1] = norm3(sub3(self.joints[j], self.joints[PARENTS[j]]));
        }
        out
    }

    /// Flattened `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> [f64; 3 * NUM_JOINTS] {
        let mut out = [0.0; 3 * NUM_JOINTS];
        for (j, p) in self.joints.iter().enumerate() {
            out[3 * j..3 * j + 3].copy_from_slice(p);
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 3 * NUM_JOINTS {
            return Err(Error::Shape(format!("expected {} pose values, got {}", 3 * NUM_JOINTS, v.len())));
        }
        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (j, p) in joints.iter_mut().enumerate() {
            p.copy_from_slice(&v[3 * j..3 * j + 3]);
        }
        Ok(Skeleton16 { joints })
    }

    pub fn transformed(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = *self;
        out.joints.iter_mut().for_each(|p| *p = f(*p));
        out
    }
}

/// Built-in parametric motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    Wave,
    Box,
    Squat,
    WalkInPlace,
    Still,
}

impl Motion {
    pub const ALL: [Motion; 5] = [Motion::Wave, Motion::Box, Motion::Squat, Motion::WalkInPlace, Motion::Still];

    pub fn name(self) -> &'static str {
        match self {
            Motion::Wave => "wave",
            Motion::Box => "box",
            Motion::Squat => "squat",
            Motion::WalkInPlace => "walk-in-place",
            Motion::Still => "still",
        }
    }

    /// Period of the motion cycle in seconds.
    pub fn period(self) -> f64 {
        match self {
            Motion::Wave => 1.0,
            Motion::Box => 0.8,
            Motion::Squat => 2.0,
            Motion::WalkInPlace => 1.2,
            Motion::Still => 1.0,
        }
    }

    /// Report category the motion is filed under.
    pub fn category(self) -> &'static str {
        match self {
            Motion::Wave => "Dance",
            Motion::Box => "Boxing",
            Motion::Squat => "Crouch",
            Motion::WalkInPlace => "Walk",
            Motion::Still => "Inter. with env.",
        }
    }
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Motion::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown motion `{s}`")))
    }
}

// body frame: right, forward, up
fn body_to_device(p: [f64; 3]) -> [f64; 3] {
    [p[0], -p[1], -p[2]]
}

const RIGHT: [f64; 3] = [1.0, 0.0, 0.0];
const FORWARD: [f64; 3] = [0.0, 1.0, 0.0];

#[derive(Default, Clone, Copy)]
struct LimbAngles {
    /// rotation about the right axis, positive raises the limb forward
    flex: f64,
    /// sideways lift, positive away from the body
    abduct: f64,
    /// elbow / knee bend
    bend: f64,
}

#[derive(Default, Clone, Copy)]
struct Pose {
    arms: [LimbAngles; 2],
    legs: [LimbAngles; 2],
}

fn smooth_cycle(t: f64, period: f64, phase: f64) -> f64 {
    0.5 * (1.0 - math::cos(2.0 * core::f64::consts::PI * (t / period + phase)))
}

fn motion_pose(motion: Motion, t: f64) -> Pose {
    let p = motion.period();
    let w = 2.0 * core::f64::consts::PI / p;
    let mut pose = Pose::default();
    match motion {
        Motion::Still => {}
        Motion::Wave => {
            pose.arms[1] = LimbAngles { flex: 0.3, abduct: 1.9, bend: 0.7 + 0.5 * math::sin(w * t) };
            pose.arms[0] = LimbAngles { flex: 0.1, abduct: 0.1, bend: 0.2 };
        }
        Motion::Box => {
            for (side, phase) in [(0usize, 0.0), (1, 0.5)] {
                let punch = smooth_cycle(t, p, phase);
                pose.arms[side] = LimbAngles { flex: 0.5 + 0.9 * punch, abduct: 0.15, bend: 2.0 - 1.7 * punch };
            }
            pose.legs[0].flex = 0.1;
            pose.legs[1].flex = -0.1;
        }
        Motion::Squat => {
            let a = 0.9 * smooth_cycle(t, p, 0.0);
            for side in 0..2 {
                pose.legs[side] = LimbAngles { flex: a, abduct: 0.1 * a, bend: 2.0 * a };
                pose.arms[side] = LimbAngles { flex: 1.2 * a, abduct: 0.1, bend: 0.2 };
            }
        }
        Motion::WalkInPlace => {
            for (side, phase) in [(0usize, 0.0), (1, 0.5)] {
                let lift = smooth_cycle(t, p, phase);
                pose.legs[side] = LimbAngles { flex: 0.8 * lift, abduct: 0.0, bend: 1.4 * lift };
                pose.arms[side] = LimbAngles { flex: 0.5 * (smooth_cycle(t, p, phase + 0.5) - 0.5), abduct: 0.1, bend: 0.4 };
            }
        }
    }
    pose
}

fn limb(root: [f64; 3], side_sign: f64, angles: LimbAngles, rest_dir: [f64; 3], lengths: [f64; 2], bend_sign: f64) -> ([f64; 3], [f64; 3], Mat3) {
    // abduction about the forward axis, then flexion about the right axis
    let abd = axis_angle(FORWARD, side_sign * angles.abduct);
    let flex = axis_angle(RIGHT, -angles.flex);
    let upper_rot = crate::math::mat_mul(&abd, &flex);
    let upper = mat_vec(&upper_rot, rest_dir);
    let mid = add3(root, scale3(upper, lengths[0]));
    let bend_rot = crate::math::mat_mul(&upper_rot, &axis_angle(RIGHT, bend_sign * angles.bend));
    let lower = mat_vec(&bend_rot, rest_dir);
    let end = add3(mid, scale3(lower, lengths[1]));
    (mid, end, bend_rot)
}

/// Skeleton of `motion` at time `t` seconds, in the nominal device frame.
pub fn animate(motion: Motion, t: f64) -> Result<Skeleton16> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be non-negative, got {t}")));
    }
    let pose = motion_pose(motion, t);
    let mut j = [[0.0; 3]; NUM_JOINTS];
    j[0] = [0.0, -0.10, -0.06];
    j[1] = [0.0, -0.10, -0.22];
    for side in 0..2 {
        let s = if side == 0 { -1.0 } else { 1.0 };
        let shoulder = [0.18 * s, -0.10, -0.27];
        let arm_dir = {
            let v = [0.08 * s, 0.03, -1.0];
            scale3(v, 1.0 / norm3(v))
        };
        let (elbow, wrist, _) = limb(shoulder, s, pose.arms[side], arm_dir, [0.28, 0.25], 1.0);
        let hip = [0.10 * s, -0.10, -0.75];
        let leg_dir = [0.0, 0.02, -1.0];
        let leg_dir = scale3(leg_dir, 1.0 / norm3(leg_dir));
        let (knee, ankle, rot) = limb(hip, s, pose.legs[side], leg_dir, [0.43, 0.42], -1.0);
        let foot = add3(ankle, mat_vec(&rot, [0.0, 0.14, -0.04]));
        j[2 + side] = shoulder;
        j[4 + side] = elbow;
        j[6 + side] = wrist;
        j[8 + side] = hip;
        j[10 + side] = knee;
        j[12 + side] = ankle;
        j[14 + side] = foot;
    }
    Ok(Skeleton16 { joints: j.map(body_to_device) })
}

/// Head motion in the world used to move the background.
fn camera_world_motion(motion: Motion, t: f64) -> (f64, [f64; 3]) {
    let w = 2.0 * core::f64::consts::PI / motion.period();
    match motion {
        Motion::Still => (0.0, [0.0; 3]),
        Motion::Wave => (0.04 * math::sin(w * t), [0.0; 3]),
        Motion::Box => (0.10 * math::sin(w * t), [0.02 * math::sin(w * t), 0.0, 0.0]),
        Motion::Squat => (0.0, [0.0, 0.0, -0.35 * smooth_cycle(t, motion.period(), 0.0)]),
        Motion::WalkInPlace => (0.06 * math::sin(w * t), [0.0, 0.0, 0.03 * math::sin(2.0 * w * t)]),
    }
}

/// Fixed offset of the real camera against its nominal mount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPerturbation {
    /// Maps actual-camera coordinates to nominal-device coordinates.
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

impl CameraPerturbation {
    pub fn identity() -> Self {
        CameraPerturbation { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    /// Random rotation up to `max_deg` and translation up to `max_m`.
    pub fn random<R: Rng>(rng: &mut R, max_deg: f64, max_m: f64) -> Self {
        let axis = random_unit(rng);
        let angle = rng.random_range(0.0..=1.0) * max_deg.to_radians();
        let dir = random_unit(rng);
        let dist = rng.random_range(0.0..=1.0) * max_m;
        CameraPerturbation { rotation: axis_angle(axis, angle), translation: scale3(dir, dist) }
    }

    /// Nominal-device point expressed in the actual camera frame.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        mat_vec(&transpose(&self.rotation), sub3(p, self.translation))
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = norm3(v);
        if n > 1e-3 && n <= 1.0 {
            return scale3(v, 1.0 / n);
        }
    }
}

/// Single-channel map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Mask { height, width, values: vec![v; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Max-pools by an integer factor.
    pub fn downsample_any(&self, factor: usize) -> Mask {
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Mask::filled(h, w, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(y, x);
                let o = &mut out.values[(y / factor) * w + x / factor];
                if v > *o {
                    *o = v;
                }
            }
        }
        out
    }

    /// Binary dilation with a 3x3 structuring element.
    pub fn dilate(&self) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) > 0.0 {
                    continue;
                }
                let mut v = 0.0f32;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy >= 0 && xx >= 0 && (yy as usize) < self.height && (xx as usize) < self.width {
                            v = v.max(self.get(yy as usize, xx as usize));
                        }
                    }
                }
                out.values[y * self.width + x] = v;
            }
        }
        out
    }
}

struct Capsule {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
    cone_axis: [f64; 3],
    cone_cos: f64,
}

const BONE_RADII: [f64; NUM_JOINTS] = [0.0, 0.06, 0.06, 0.06, 0.05, 0.05, 0.045, 0.045, 0.13, 0.13, 0.075, 0.075, 0.06, 0.06, 0.045, 0.045];
const HEAD_RADIUS: f64 = 0.085;

fn capsules(skel: &Skeleton16) -> Vec<Capsule> {
    let mut caps = Vec::with_capacity(NUM_JOINTS);
    let mut push = |a: [f64; 3], b: [f64; 3], radius: f64| {
        let c = scale3(add3(a, b), 0.5);
        let reach = 0.5 * norm3(sub3(b, a)) + radius;
        let dist = norm3(c);
        let (cone_axis, cone_cos) = if dist > reach {
            let s = reach / dist;
            (scale3(c, 1.0 / dist), math::sqrt(1.0 - s * s))
        } else {
            ([0.0, 0.0, 1.0], -2.0)
        };
        caps.push(Capsule { a, b, radius, cone_axis, cone_cos });
    };
    let j = &skel.joints;
    push(j[0], j[0], HEAD_RADIUS);
    for k in 1..NUM_JOINTS {
        push(j[PARENTS[k]], j[k], BONE_RADII[k]);
    }
    // pelvis
    push(j[8], j[9], 0.11);
    caps
}

/// Distance between the ray `s * d` (`s >= 0`, `d` unit) and segment `ab`.
fn ray_segment_distance(d: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let e = sub3(b, a);
    let ee = dot3(e, e);
    let ed = dot3(e, d);
    let ea = dot3(e, a);
    let da = dot3(d, a);
    let mut t = if ee > 1e-18 {
        let den = ee - ed * ed;
        if den > 1e-14 {
            ((ed * da - ea) / den).clamp(0.0, 1.0)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let s = (da + ed * t).max(0.0);
    if ee > 1e-18 {
        t = ((s * ed - ea) / ee).clamp(0.0, 1.0);
    }
    let s = (da + ed * t).max(0.0);
    norm3(sub3(add3(a, scale3(e, t)), scale3(d, s)))
}

/// Per-pixel renderer with cached camera rays.
pub struct Renderer {
    pub intrinsics: FisheyeIntrinsics,
    rays: Vec<[f64; 3]>,
    inside: Vec<bool>,
}

/// Luminance of the wearer's body.
pub const BODY_LUMINANCE: f32 = 0.8;
const SKY_LUMINANCE: f32 = 0.12;

impl Renderer {
    pub fn new(intrinsics: FisheyeIntrinsics) -> Result<Self> {
        let (w, h) = (intrinsics.width, intrinsics.height);
        let mut rays = Vec::with_capacity(w * h);
        let mut inside = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let r = intrinsics.unproject([x as f64, y as f64])?;
                inside.push(intrinsics.off_axis_angle(r) <= HALF_FOV);
                rays.push(r);
            }
        }
        Ok(Renderer { intrinsics, rays, inside })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Body footprint at full resolution, 1 where a ray hits a capsule.
    pub fn render_mask(&self, skel_cam: &Skeleton16) -> Mask {
        let caps = capsules(skel_cam);
        let values = self
            .rays
            .iter()
            .zip(&self.inside)
            .map(|(d, &inside)| if inside && hits_body(&caps, *d) { 1.0 } else { 0.0 })
            .collect();
        Mask { height: self.height(), width: self.width(), values }
    }

    /// Luminance frame and mask for a skeleton given in the camera frame.
    pub fn render(&self, skel_cam: &Skeleton16, cam_to_world: &Mat3, cam_pos: [f64; 3]) -> (Vec<f32>, Mask) {
        let caps = capsules(skel_cam);
        let mut frame = Vec::with_capacity(self.rays.len());
        let mut mask = Vec::with_capacity(self.rays.len());
        for (d, &inside) in self.rays.iter().zip(&self.inside) {
            if !inside {
                frame.push(0.0);
                mask.push(0.0);
            } else if hits_body(&caps, *d) {
                frame.push(BODY_LUMINANCE);
                mask.push(1.0);
            } else {
                frame.push(floor_luminance(mat_vec(cam_to_world, *d), cam_pos));
                mask.push(0.0);
            }
        }
        (frame, Mask { height: self.height(), width: self.width(), values: mask })
    }

    /// Luminance frame of the scene without the wearer's body.
    pub fn render_background(&self, cam_to_world: &Mat3, cam_pos: [f64; 3]) -> Vec<f32> {
        self.rays
            .iter()
            .zip(&self.inside)
            .map(|(d, &inside)| if inside { floor_luminance(mat_vec(cam_to_world, *d), cam_pos) } else { 0.0 })
            .collect()
    }
}

fn hits_body(caps: &[Capsule], d: [f64; 3]) -> bool {
    caps.iter().any(|c| dot3(d, c.cone_axis) >= c.cone_cos && ray_segment_distance(d, c.a, c.b) <= c.radius)
}

/// Textured floor `FLOOR_DEPTH` below the nominal camera; `dir` is in the
/// world frame with `+Z` down.
fn floor_luminance(dir: [f64; 3], origin: [f64; 3]) -> f32 {
    if dir[2] <= 1e-6 {
        return SKY_LUMINANCE;
    }
    let s = (FLOOR_DEPTH - origin[2]) / dir[2];
    let x = origin[0] + s * dir[0];
    let y = origin[1] + s * dir[1];
    let k = 2.0 * core::f64::consts::PI / 0.35;
    (0.3 + 0.18 * math::sin(k * x) * math::sin(k * y) + 0.06 * math::sin(0.37 * k * (x + 2.0 * y))) as f32
}

/// Camera pose in the world for a motion at time `t`, including the
/// mount perturbation.
pub fn camera_pose(motion: Motion, t: f64, pert: &CameraPerturbation) -> (Mat3, [f64; 3]) {
    let (yaw, pos) = camera_world_motion(motion, t);
    // world frame shares the device axes at rest (X right, Y back, Z down)
    let yaw_rot = axis_angle([0.0, 0.0, 1.0], yaw);
    let rot = crate::math::mat_mul(&yaw_rot, &pert.rotation);
    // `pos[2]` is an upward displacement, world z points down
    let origin = add3([pos[0], pos[1], -pos[2]], mat_vec(&yaw_rot, pert.translation));
    (rot, origin)
}

/// Ground-truth skeleton in the actual camera frame.
pub fn skeleton_in_camera(motion: Motion, t: f64, pert: &CameraPerturbation) -> Result<Skeleton16> {
    Ok(animate(motion, t)?.transformed(|p| pert.to_camera(p)))
}

/// Rendered frames with per-frame ground truth.
#[derive(Debug, Clone)]
pub struct RenderedSequence {
    pub video: BrightnessVideo,
    pub skeletons: Vec<Skeleton16>,
    pub masks: Vec<Mask>,
}

fn frame_times(duration: f64, fps: f64) -> Result<Vec<u64>> {
    if !(fps >= MIN_FPS) {
        return Err(Error::InvalidArgument(format!("fps must be at least {MIN_FPS}, got {fps}")));
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    let n = math::floor(duration * fps) as usize + 1;
    Ok((0..n).map(|i| math::round(i as f64 * 1e6 / fps) as u64).collect())
}

/// Renders `duration` seconds of a motion at `fps`.
pub fn render_frames(motion: Motion, duration: f64, fps: f64, renderer: &Renderer, pert: &CameraPerturbation) -> Result<RenderedSequence> {
    let times = frame_times(duration, fps)?;
    let mut video = BrightnessVideo::new(renderer.width(), renderer.height());
    let mut skeletons = Vec::with_capacity(times.len());
    let mut masks = Vec::with_capacity(times.len());
    for &t in &times {
        let ts = t as f64 * 1e-6;
        let skel = skeleton_in_camera(motion, ts, pert)?;
        let (rot, pos) = camera_pose(motion, ts, pert);
        let (frame, mask) = renderer.render(&skel, &rot, pos);
        video.push(frame, t)?;
        skeletons.push(skel);
        masks.push(mask);
    }
    Ok(RenderedSequence { video, skeletons, masks })
}

/// Event stream of a human-free recording: the camera follows the head
/// motion of `motion` over the textured floor, nobody in view.
pub fn generate_background(motion: Motion, duration: f64, fps: f64, renderer: &Renderer, sim: &SimulatorConfig) -> Result<EventStream> {
    let times = frame_times(duration, fps)?;
    let pert = CameraPerturbation::identity();
    let render_at = |t: u64| {
        let (rot, pos) = camera_pose(motion, t as f64 * 1e-6, &pert);
        renderer.render_background(&rot, pos)
    };
    let (w, h) = (renderer.width(), renderer.height());
    let mut simulator = EventSimulator::from_frame(&render_at(times[0]), w, h, times[0], sim)?;
    let mut events = Vec::new();
    for &t in &times[1..] {
        events.extend(simulator.push_frame(&render_at(t), t)?);
    }
    EventStream::new(events, w as u16, h as u16)
}

/// Heatmap coordinates of a full-resolution pixel position.
pub fn pixel_to_heatmap(px: [f64; 2], image_w: usize, image_h: usize) -> [f64; 2] {
    let fx = image_w as f64 / MAP_WIDTH as f64;
    let fy = image_h as f64 / MAP_HEIGHT as f64;
    [(px[0] + 0.5) / fx - 0.5, (px[1] + 0.5) / fy - 0.5]
}

/// Projected heatmap location of each joint, `None` when out of view.
pub fn joint_heatmap_locations(skel_cam: &Skeleton16, intr: &FisheyeIntrinsics) -> [Option<[f64; 2]>; NUM_JOINTS] {
    let mut out = [None; NUM_JOINTS];
    for (o, p) in out.iter_mut().zip(&skel_cam.joints) {
        if intr.off_axis_angle(*p) > HALF_FOV {
            continue;
        }
        if let Ok(px) = intr.project(*p) {
            if intr.in_image(px) {
                *o = Some(pixel_to_heatmap(px, intr.width, intr.height));
            }
        }
    }
    out
}

/// Gaussian ground-truth heatmaps (`16 x 48 x 64`, channel-major, peak 1
/// at the joint). Out-of-view joints get an all-zero channel.
pub fn gaussian_heatmaps(skel_cam: &Skeleton16, intr: &FisheyeIntrinsics, sigma: f64) -> Vec<f32> {
    let plane = MAP_HEIGHT * MAP_WIDTH;
    let mut out = vec![0.0f32; NUM_JOINTS * plane];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (j, loc) in joint_heatmap_locations(skel_cam, intr).iter().enumerate() {
        let Some([hx, hy]) = *loc else { continue };
        let ch = &mut out[j * plane..(j + 1) * plane];
        for y in 0..MAP_HEIGHT {
            let dy = y as f64 - hy;
            for x in 0..MAP_WIDTH {
                let dx = x as f64 - hx;
                ch[y * MAP_WIDTH + x] = math::exp(-(dx * dx + dy * dy) * inv) as f32;
            }
        }
    }
    out
}

/// One supervised training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub window: TimeWindow,
    /// Timestamp of the last event in the window, if any.
    pub t_last: Option<u64>,
    /// Time the ground truth is sampled at.
    pub pose_time: u64,
    pub lnes: LnesFrame,
    pub joints: Skeleton16,
    pub heatmaps: Vec<f32>,
    pub mask: Mask,
}

#[derive(Debug, Clone)]
pub struct SequenceConfig {
    pub motion: Motion,
    pub duration: f64,
    pub fps: f64,
    pub window_us: u64,
    pub sigma: f64,
    pub sim: SimulatorConfig,
    pub seed: u64,
    pub index: u64,
    pub perturb: bool,
}

impl SequenceConfig {
    pub fn new(motion: Motion, duration: f64) -> Self {
        SequenceConfig {
            motion,
            duration,
            fps: DEFAULT_FPS,
            window_us: 15_000,
            sigma: DEFAULT_SIGMA,
            sim: SimulatorConfig::default(),
            seed: 0,
            index: 0,
            perturb: true,
        }
    }
}

/// A generated sequence: its event stream and the per-window samples.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub motion: Motion,
    pub perturbation: CameraPerturbation,
    pub stream: EventStream,
    pub windows: Vec<SampleWindow>,
}

/// Window bookkeeping stored alongside the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWindow {
    pub window: TimeWindow,
    pub t_last: Option<u64>,
    pub pose_time: u64,
    pub events: (usize, usize),
}

/// Sequence-specific random stream, independent of generation order.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Renders, simulates and windows one sequence.
///
/// Windows are back-to-back `[t0, t0 + T)` intervals from the sequence
/// start, so windows without events are kept.
pub fn generate_sequence(cfg: &SequenceConfig, renderer: &Renderer) -> Result<Sequence> {
    let times = frame_times(cfg.duration, cfg.fps)?;
    if cfg.window_us == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let mut rng = sequence_rng(cfg.seed, cfg.index);
    let pert = if cfg.perturb { CameraPerturbation::random(&mut rng, 3.0, 0.01) } else { CameraPerturbation::identity() };
    let sim_cfg = SimulatorConfig { seed: rng.random(), ..cfg.sim.clone() };
    let (w, h) = (renderer.width(), renderer.height());
    let render_at = |t: u64| -> Result<Vec<f32>> {
        let ts = t as f64 * 1e-6;
        let skel = skeleton_in_camera(cfg.motion, ts, &pert)?;
        let (rot, pos) = camera_pose(cfg.motion, ts, &pert);
        Ok(renderer.render(&skel, &rot, pos).0)
    };
    let mut sim = EventSimulator::from_frame(&render_at(times[0])?, w, h, times[0], &sim_cfg)?;
    let mut events: Vec<Event> = Vec::new();
    for &t in &times[1..] {
        events.extend(sim.push_frame(&render_at(t)?, t)?);
    }
    let end = *times.last().unwrap_or(&0);
    let n_windows = (end / cfg.window_us) as usize;
    let mut windows = Vec::with_capacity(n_windows);
    let mut start = 0usize;
    for i in 0..n_windows {
        let t0 = i as u64 * cfg.window_us;
        let window = TimeWindow::new(t0, cfg.window_us)?;
        let stop = start + events[start..].partition_point(|e| e.t < t0 + cfg.window_us);
        let t_last = if stop > start { Some(events[stop - 1].t) } else { None };
        windows.push(SampleWindow { window, t_last, pose_time: t_last.unwrap_or(window.end()), events: (start, stop) });
        start = stop;
    }
    // events past the last whole window have no ground truth
    events.truncate(start);
    let stream = EventStream { events, width: w as u16, height: h as u16 };
    Ok(Sequence {
        name: format!("{:03}_{}", cfg.index, cfg.motion.name()),
        motion: cfg.motion,
        perturbation: pert,
        stream,
        windows,
    })
}

impl Sequence {
    /// Materializes the supervised sample of window `i`.
    pub fn sample(&self, i: usize, renderer: &Renderer, sigma: f64) -> Result<SampleRecord> {
        let sw = self.windows.get(i).ok_or_else(|| Error::InvalidArgument(format!("window {i} out of range")))?;
        let events = &self.stream.events[sw.events.0..sw.events.1];
        let lnes = encode_lnes(events, sw.window, renderer.height(), renderer.width())?;
        make_targets(self.motion, &self.perturbation, sw, lnes, renderer, sigma)
    }
}

/// Ground truth for a window: joints, heatmaps and mask at `pose_time`.
pub fn make_targets(
    motion: Motion,
    pert: &CameraPerturbation,
    sw: &SampleWindow,
    lnes: LnesFrame,
    renderer: &Renderer,
    sigma: f64,
) -> Result<SampleRecord> {
    let ts = sw.pose_time as f64 * 1e-6;
    let joints = skeleton_in_camera(motion, ts, pert)?;
    let heatmaps = gaussian_heatmaps(&joints, &renderer.intrinsics, sigma);
    let factor = renderer.height() / MAP_HEIGHT;
    let mask = renderer.render_mask(&joints).downsample_any(factor);
    Ok(SampleRecord { window: sw.window, t_last: sw.t_last, pose_time: sw.pose_time, lnes, joints, heatmaps, mask })
}

/// Convenience: all samples of several sequences.
pub fn make_dataset(configs: &[SequenceConfig], renderer: &Renderer) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for cfg in configs {
        let seq = generate_sequence(cfg, renderer)?;
        for i in 0..seq.windows.len() {
            out.push(seq.sample(i, renderer, cfg.sigma)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_is_constant() {
        let a = animate(Motion::Still, 0.0).unwrap();
        for t in [0.1, 1.7, 33.0] {
            assert_eq!(animate(Motion::Still, t).unwrap(), a);
        }
    }

    #[test]
    fn unknown_motion_and_negative_time() {
        assert!("moonwalk".parse::<Motion>().is_err());
        assert_eq!("walk-in-place".parse::<Motion>().unwrap(), Motion::WalkInPlace);
        assert!(animate(Motion::Wave, -1.0).is_err());
    }

    #[test]
    fn bone_lengths_constant_and_positive() {
        let rest = animate(Motion::Still, 0.0).unwrap().bone_lengths();
        for m in Motion::ALL {
            for i in 0..50 {
                let b = animate(m, i as f64 * 0.037).unwrap().bone_lengths();
                for (x, y) in b.iter().zip(&rest) {
                    assert!(*x > 0.0);
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn wave_wrist_is_periodic() {
        let p = Motion::Wave.period();
        for i in 0..20 {
            let t = i as f64 * 0.113;
            let a = animate(Motion::Wave, t).unwrap().joints[7];
            let b = animate(Motion::Wave, t + p).unwrap().joints[7];
            assert!((a[2] - b[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn render_rate_limits() {
        let r = Renderer::new(FisheyeIntrinsics::default_egocentric()).unwrap();
        assert!(render_frames(Motion::Still, 0.01, 50.0, &r, &CameraPerturbation::identity()).is_err());
    }

    #[test]
    fn ray_segment_distance_cases() {
        let d = [0.0, 0.0, 1.0];
        assert!((ray_segment_distance(d, [1.0, 0.0, 2.0], [1.0, 0.0, 3.0]) - 1.0).abs() < 1e-12);
        // segment behind the camera
        assert!((ray_segment_distance(d, [0.0, 0.0, -2.0], [0.0, 0.0, -1.0]) - 1.0).abs() < 1e-12);
        // crossing segment
        assert!(ray_segment_distance(d, [-1.0, 0.0, 1.0], [1.0, 0.0, 1.0]) < 1e-12);
    }

    #[test]
    fn mask_downsample_and_dilate() {
        let mut m = Mask::filled(8, 8, 0.0);
        m.values[5 * 8 + 6] = 1.0;
        let d = m.downsample_any(4);
        assert_eq!(d.values, [0.0, 0.0, 0.0, 1.0]);
        let dil = m.dilate();
        assert_eq!(dil.values.iter().filter(|v| **v > 0.0).count(), 9);
    }
}
