//! Approximate clearance evaluation (ACE) for a six-wheel rocker-bogie rover.
//!
//! Each wheel contributes a height interval: the min and max known terrain
//! under the axis-aligned bounds of its rotated footprint. Attitude,
//! suspension and belly clearance are bounded from those intervals alone, so
//! any exact contact assignment inside the footprints stays within the
//! reported bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridGeometry, Rect};
use crate::heightmap::{HeightMap, HeightQuery, MinMaxIndex};
use crate::pose::Pose;

pub const HEADINGS: usize = 8;

/// Wheel order: front, middle, rear on the left side, then the same on the
/// right side.
pub const FL: usize = 0;
pub const ML: usize = 1;
pub const RL: usize = 2;
pub const FR: usize = 3;
pub const MR: usize = 4;
pub const RR: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum AceError {
    #[error("wheel {wheel} footprint is only {known_fraction:.2} known")]
    InsufficientData { wheel: usize, known_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    /// Body-frame center, x forward and y left.
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    /// World-frame bounding box of the footprint rotated into `pose`.
    #[inline]
    pub fn world_aabb(&self, pose: &Pose) -> Rect {
        let (cx, cy) = pose.to_world(self.x, self.y);
        let (s, c) = pose.heading.sin_cos();
        let (a, b) = (self.length / 2.0, self.width / 2.0);
        let hx = c.abs() * a + s.abs() * b;
        let hy = s.abs() * a + c.abs() * b;
        Rect::around(cx, cy, hx, hy)
    }

    /// Whether a world point lies inside the rotated footprint.
    pub fn contains_world(&self, pose: &Pose, x: f64, y: f64) -> bool {
        let (s, c) = pose.heading.sin_cos();
        let (dx, dy) = (x - pose.x, y - pose.y);
        let bx = c * dx + s * dy - self.x;
        let by = -s * dx + c * dy - self.y;
        bx.abs() <= self.length / 2.0 && by.abs() <= self.width / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoverGeometry {
    pub wheels: [Footprint; 6],
    pub track: f64,
    pub wheelbase: f64,
    pub belly: Footprint,
    /// Height of the belly pan above the wheel-contact plane.
    pub belly_height: f64,
    pub rocker_length: f64,
    pub bogie_length: f64,
}

impl Default for RoverGeometry {
    fn default() -> Self {
        let (track, wheelbase) = (2.2, 2.6);
        let wheel = |x: f64, y: f64| Footprint {
            x,
            y,
            length: 0.4,
            width: 0.3,
        };
        let (hx, hy) = (wheelbase / 2.0, track / 2.0);
        Self {
            wheels: [
                wheel(hx, hy),
                wheel(0.0, hy),
                wheel(-hx, hy),
                wheel(hx, -hy),
                wheel(0.0, -hy),
                wheel(-hx, -hy),
            ],
            track,
            wheelbase,
            belly: Footprint {
                x: 0.0,
                y: 0.0,
                length: 1.8,
                width: 1.2,
            },
            belly_height: 0.6,
            rocker_length: 1.95,
            bogie_length: 1.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AceLimits {
    pub max_roll_deg: f64,
    pub max_pitch_deg: f64,
    pub max_rocker_deg: f64,
    pub max_bogie_deg: f64,
    pub min_clearance: f64,
}

impl Default for AceLimits {
    fn default() -> Self {
        Self {
            max_roll_deg: 30.0,
            max_pitch_deg: 30.0,
            max_rocker_deg: 20.0,
            max_bogie_deg: 25.0,
            min_clearance: 0.3,
        }
    }
}

impl AceLimits {
    /// Limits the simulator checks against the exact rover state.
    pub fn true_safety() -> Self {
        Self {
            max_roll_deg: 40.0,
            max_pitch_deg: 40.0,
            max_rocker_deg: 30.0,
            max_bogie_deg: 35.0,
            min_clearance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AceConfig {
    pub geometry: RoverGeometry,
    pub limits: AceLimits,
    /// Wheels with less known terrain than this make the pose
    /// `InsufficientData`.
    pub min_known_fraction: f64,
    /// Cost charged for a pose with insufficient data.
    pub unknown_penalty: f64,
    /// Belly patches whose clearance ratio reaches this value are split.
    pub belly_refine_ratio: f64,
    pub belly_max_depth: u32,
    /// Arc-length spacing of path samples in meters.
    pub interval: f64,
}

impl Default for AceConfig {
    fn default() -> Self {
        Self {
            geometry: RoverGeometry::default(),
            limits: AceLimits::default(),
            min_known_fraction: 0.5,
            unknown_penalty: 1.0,
            belly_refine_ratio: 0.75,
            belly_max_depth: 5,
            interval: 0.25,
        }
    }
}

/// Per-limit ratio of the computed bound to its limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Margins {
    pub roll: f64,
    pub pitch: f64,
    pub rocker: f64,
    pub bogie: f64,
    pub clearance: f64,
}

impl Margins {
    pub fn worst(&self) -> f64 {
        self.roll
            .max(self.pitch)
            .max(self.rocker)
            .max(self.bogie)
            .max(self.clearance)
    }

    pub fn sum_sq(&self) -> f64 {
        self.roll.powi(2) + self.pitch.powi(2) + self.rocker.powi(2) + self.bogie.powi(2) + self.clearance.powi(2)
    }
}

/// Worst-case attitude, suspension and clearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AceBounds {
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub rocker_deg: f64,
    pub bogie_deg: f64,
    /// Lower bound on belly clearance in meters.
    pub clearance: f64,
}

impl AceBounds {
    pub fn margins(&self, limits: &AceLimits) -> Margins {
        Margins {
            roll: self.roll_deg / limits.max_roll_deg,
            pitch: self.pitch_deg / limits.max_pitch_deg,
            rocker: self.rocker_deg / limits.max_rocker_deg,
            bogie: self.bogie_deg / limits.max_bogie_deg,
            clearance: if self.clearance > 0.0 {
                limits.min_clearance / self.clearance
            } else {
                f64::INFINITY
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceResult {
    pub feasible: bool,
    /// Sum of squared margins when feasible, `+inf` otherwise.
    pub cost: f64,
    pub margins: Margins,
    pub bounds: AceBounds,
    pub unknown_fraction: f64,
}

/// Height interval under each wheel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelIntervals {
    pub lo: [f64; 6],
    pub hi: [f64; 6],
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn atan_div(self, d: f64) -> Interval {
        Interval {
            lo: (self.lo / d).atan(),
            hi: (self.hi / d).atan(),
        }
    }

    /// Largest |a - b| over both intervals.
    fn max_abs_diff(self, o: Interval) -> f64 {
        (self.hi - o.lo).max(o.hi - self.lo).max(0.0)
    }
}

/// Precomputed evaluator for one rover configuration.
#[derive(Debug, Clone)]
pub struct AceModel {
    pub config: AceConfig,
    /// Least-squares plane through the wheel contacts: the plane height at
    /// body point `(x, y)` is `sum_k (w[0][k] + x w[1][k] + y w[2][k]) c_k`.
    plane: [[f64; 6]; 3],
}

impl AceModel {
    pub fn new(config: AceConfig) -> Self {
        let plane = contact_plane_weights(&config.geometry.wheels);
        Self { config, plane }
    }

    pub fn limits(&self) -> &AceLimits {
        &self.config.limits
    }

    #[inline]
    fn plane_weights(&self, x: f64, y: f64) -> [f64; 6] {
        let p = &self.plane;
        let mut w = [0.0; 6];
        for (k, wk) in w.iter_mut().enumerate() {
            *wk = p[0][k] + x * p[1][k] + y * p[2][k];
        }
        w
    }

    pub fn wheel_intervals<Q: HeightQuery>(&self, map: &Q, pose: &Pose) -> Result<(WheelIntervals, f64), AceError> {
        let geom = map.geometry();
        let mut iv = WheelIntervals {
            lo: [0.0; 6],
            hi: [0.0; 6],
        };
        let mut worst_unknown: f64 = 0.0;
        for (k, w) in self.config.geometry.wheels.iter().enumerate() {
            let stats = map.window(geom.cells_in_rect(&w.world_aabb(pose)));
            let frac = stats.known_fraction();
            if stats.known == 0 || frac < self.config.min_known_fraction {
                return Err(AceError::InsufficientData {
                    wheel: k,
                    known_fraction: frac,
                });
            }
            worst_unknown = worst_unknown.max(1.0 - frac);
            iv.lo[k] = stats.min;
            iv.hi[k] = stats.max;
        }
        Ok((iv, worst_unknown))
    }

    /// Attitude and suspension bounds from wheel intervals.
    pub fn attitude_bounds(&self, iv: &WheelIntervals) -> AceBounds {
        let g = &self.config.geometry;
        let side = |ids: &[usize]| {
            let n = ids.len() as f64;
            Interval {
                lo: ids.iter().map(|&k| iv.lo[k]).sum::<f64>() / n,
                hi: ids.iter().map(|&k| iv.hi[k]).sum::<f64>() / n,
            }
        };
        let roll = side(&[FL, ML, RL]).max_abs_diff(side(&[FR, MR, RR]));
        let pitch = side(&[FL, FR]).max_abs_diff(side(&[RL, RR]));

        let w = |k: usize| Interval {
            lo: iv.lo[k],
            hi: iv.hi[k],
        };
        let rocker_side = |f: usize, m: usize, r: usize| {
            Interval {
                lo: w(f).lo - 0.5 * (w(m).hi + w(r).hi),
                hi: w(f).hi - 0.5 * (w(m).lo + w(r).lo),
            }
            .atan_div(g.rocker_length)
        };
        let bogie_side = |m: usize, r: usize| {
            Interval {
                lo: w(m).lo - w(r).hi,
                hi: w(m).hi - w(r).lo,
            }
            .atan_div(g.bogie_length)
        };
        let (rl, rr) = (rocker_side(FL, ML, RL), rocker_side(FR, MR, RR));
        let (bl, br) = (bogie_side(ML, RL), bogie_side(MR, RR));
        AceBounds {
            roll_deg: (roll / g.track).atan().to_degrees(),
            pitch_deg: (pitch / g.wheelbase).atan().to_degrees(),
            rocker_deg: (0.5 * rl.max_abs_diff(rr)).to_degrees(),
            bogie_deg: bl.max_abs_diff(rl).max(br.max_abs_diff(rr)).to_degrees(),
            clearance: f64::INFINITY,
        }
    }

    /// Lowest possible belly-pan height at a body-frame point.
    #[inline]
    fn belly_lower_bound(&self, iv: &WheelIntervals, x: f64, y: f64) -> f64 {
        let w = self.plane_weights(x, y);
        let mut z = self.config.geometry.belly_height;
        for k in 0..6 {
            z += w[k] * if w[k] > 0.0 { iv.lo[k] } else { iv.hi[k] };
        }
        z
    }

    fn patch_clearance<Q: HeightQuery>(
        &self,
        map: &Q,
        pose: &Pose,
        iv: &WheelIntervals,
        patch: Footprint,
        depth: u32,
    ) -> f64 {
        let stats = map.window(map.geometry().cells_in_rect(&patch.world_aabb(pose)));
        if stats.known == 0 {
            return f64::INFINITY;
        }
        let (a, b) = (patch.length / 2.0, patch.width / 2.0);
        let mut low = f64::INFINITY;
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            low = low.min(self.belly_lower_bound(iv, patch.x + sx * a, patch.y + sy * b));
        }
        let clearance = low - stats.max;
        let ratio = if clearance > 0.0 {
            self.config.limits.min_clearance / clearance
        } else {
            f64::INFINITY
        };
        if ratio < self.config.belly_refine_ratio || depth >= self.config.belly_max_depth {
            return clearance;
        }
        let mut best = f64::INFINITY;
        for (sx, sy) in [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)] {
            let child = Footprint {
                x: patch.x + sx * a,
                y: patch.y + sy * b,
                length: a,
                width: b,
            };
            best = best.min(self.patch_clearance(map, pose, iv, child, depth + 1));
        }
        best.max(clearance)
    }

    fn clearance_ratio(&self, clearance: f64) -> f64 {
        if clearance > 0.0 {
            self.config.limits.min_clearance / clearance
        } else {
            f64::INFINITY
        }
    }

    /// Whether [`Self::patch_clearance`] would pass the clearance limit,
    /// refining only while the answer is still open.
    fn patch_passes<Q: HeightQuery>(
        &self,
        map: &Q,
        pose: &Pose,
        iv: &WheelIntervals,
        patch: Footprint,
        depth: u32,
    ) -> bool {
        let stats = map.window(map.geometry().cells_in_rect(&patch.world_aabb(pose)));
        if stats.known == 0 {
            return true;
        }
        let (a, b) = (patch.length / 2.0, patch.width / 2.0);
        let mut low = f64::INFINITY;
        for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
            low = low.min(self.belly_lower_bound(iv, patch.x + sx * a, patch.y + sy * b));
        }
        let ratio = self.clearance_ratio(low - stats.max);
        if ratio < 1.0 {
            return true;
        }
        if ratio < self.config.belly_refine_ratio || depth >= self.config.belly_max_depth {
            return false;
        }
        [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
            .iter()
            .all(|&(sx, sy)| {
                let child = Footprint {
                    x: patch.x + sx * a,
                    y: patch.y + sy * b,
                    length: a,
                    width: b,
                };
                self.patch_passes(map, pose, iv, child, depth + 1)
            })
    }

    /// Same verdict as `evaluate_pose(..)?.feasible`, without computing
    /// the cost.
    pub fn is_feasible<Q: HeightQuery>(&self, map: &Q, pose: &Pose) -> Result<bool, AceError> {
        let (iv, _) = self.wheel_intervals(map, pose)?;
        let m = self.attitude_bounds(&iv).margins(&self.config.limits);
        if m.worst() >= 1.0 {
            return Ok(false);
        }
        Ok(self.patch_passes(map, pose, &iv, self.config.geometry.belly, 0))
    }

    pub fn clearance_bound<Q: HeightQuery>(&self, map: &Q, pose: &Pose, iv: &WheelIntervals) -> f64 {
        self.patch_clearance(map, pose, iv, self.config.geometry.belly, 0)
    }

    pub fn evaluate_pose<Q: HeightQuery>(&self, map: &Q, pose: &Pose) -> Result<AceResult, AceError> {
        let (iv, unknown_fraction) = self.wheel_intervals(map, pose)?;
        let mut bounds = self.attitude_bounds(&iv);
        bounds.clearance = self.clearance_bound(map, pose, &iv);
        let margins = bounds.margins(&self.config.limits);
        let feasible = margins.worst() < 1.0;
        Ok(AceResult {
            feasible,
            cost: if feasible { margins.sum_sq() } else { f64::INFINITY },
            margins,
            bounds,
            unknown_fraction,
        })
    }

    /// Evaluate poses in order, stopping at the first infeasible one.
    pub fn evaluate_path<Q: HeightQuery>(&self, map: &Q, poses: &[Pose]) -> PathEvaluation {
        let mut out = PathEvaluation {
            feasible: true,
            cost: 0.0,
            evals: 0,
            insufficient: 0,
        };
        for p in poses {
            out.evals += 1;
            match self.evaluate_pose(map, p) {
                Ok(r) if r.feasible => out.cost += r.cost,
                Ok(_) => {
                    out.feasible = false;
                    out.cost = f64::INFINITY;
                    break;
                }
                Err(AceError::InsufficientData { .. }) => {
                    out.insufficient += 1;
                    out.cost += self.config.unknown_penalty;
                }
            }
        }
        out
    }

    /// Exact rover state for known wheel contact heights.
    pub fn exact_bounds(&self, contacts: &[f64; 6]) -> AceBounds {
        let g = &self.config.geometry;
        let c = contacts;
        let left = (c[FL] + c[ML] + c[RL]) / 3.0;
        let right = (c[FR] + c[MR] + c[RR]) / 3.0;
        let front = (c[FL] + c[FR]) / 2.0;
        let rear = (c[RL] + c[RR]) / 2.0;
        let rocker = |f: usize, m: usize, r: usize| ((c[f] - 0.5 * (c[m] + c[r])) / g.rocker_length).atan();
        let bogie = |m: usize, r: usize| ((c[m] - c[r]) / g.bogie_length).atan();
        let (rl, rr) = (rocker(FL, ML, RL), rocker(FR, MR, RR));
        AceBounds {
            roll_deg: ((left - right) / g.track).atan().to_degrees(),
            pitch_deg: ((front - rear) / g.wheelbase).atan().to_degrees(),
            rocker_deg: (0.5 * (rl - rr)).to_degrees(),
            bogie_deg: (bogie(ML, RL) - rl).abs().max((bogie(MR, RR) - rr).abs()).to_degrees(),
            clearance: f64::INFINITY,
        }
    }

    /// The rover state on fully known terrain: each wheel rests on the
    /// highest cell under its rotated footprint and the belly clearance is
    /// measured against every cell under the rotated belly.
    pub fn exact_state(&self, map: &HeightMap, pose: &Pose) -> Option<AceBounds> {
        let g = &self.config.geometry;
        let mut contacts = [0.0; 6];
        for (k, w) in g.wheels.iter().enumerate() {
            contacts[k] = footprint_max(map, pose, w)?;
        }
        let mut s = self.exact_bounds(&contacts);
        let geom = map.geom();
        let Some(c) = geom
            .cells_in_rect(&g.belly.world_aabb(pose))
            .clip(geom.width, geom.height)
        else {
            return Some(s);
        };
        let (sn, cs) = pose.heading.sin_cos();
        for iy in c.y0..=c.y1 {
            for ix in c.x0..=c.x1 {
                let (x, y) = geom.center(ix as usize, iy as usize);
                if !g.belly.contains_world(pose, x, y) {
                    continue;
                }
                let Some(z) = map.get(ix as usize, iy as usize) else {
                    continue;
                };
                let (dx, dy) = (x - pose.x, y - pose.y);
                let (bx, by) = (cs * dx + sn * dy, -sn * dx + cs * dy);
                let w = self.plane_weights(bx, by);
                let plane: f64 = (0..6).map(|k| w[k] * contacts[k]).sum();
                s.clearance = s.clearance.min(plane + g.belly_height - z);
            }
        }
        Some(s)
    }

    /// Whether the exact state at `pose` respects `limits`.
    pub fn is_safe(&self, map: &HeightMap, pose: &Pose, limits: &AceLimits) -> bool {
        match self.exact_state(map, pose) {
            Some(s) => {
                s.roll_deg.abs() < limits.max_roll_deg
                    && s.pitch_deg.abs() < limits.max_pitch_deg
                    && s.rocker_deg.abs() < limits.max_rocker_deg
                    && s.bogie_deg.abs() < limits.max_bogie_deg
                    && s.clearance > limits.min_clearance
            }
            None => false,
        }
    }
}

/// Highest known cell whose center lies in the rotated footprint, falling
/// back to the cell under the footprint center.
fn footprint_max(map: &HeightMap, pose: &Pose, w: &Footprint) -> Option<f64> {
    let geom = map.geom();
    let c = geom.cells_in_rect(&w.world_aabb(pose)).clip(geom.width, geom.height)?;
    let mut best = f64::NEG_INFINITY;
    for iy in c.y0..=c.y1 {
        for ix in c.x0..=c.x1 {
            let (x, y) = geom.center(ix as usize, iy as usize);
            if w.contains_world(pose, x, y) {
                if let Some(z) = map.get(ix as usize, iy as usize) {
                    best = best.max(z);
                }
            }
        }
    }
    if best.is_finite() {
        Some(best)
    } else {
        let (x, y) = pose.to_world(w.x, w.y);
        map.height_at(x, y)
    }
}

/// Rows of `(X^T X)^-1 X^T` for the design matrix `X = [1 x_k y_k]`.
fn contact_plane_weights(wheels: &[Footprint; 6]) -> [[f64; 6]; 3] {
    let mut a = [[0.0; 3]; 3];
    for w in wheels {
        let v = [1.0, w.x, w.y];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += v[i] * v[j];
            }
        }
    }
    let inv = invert3(a);
    let mut out = [[0.0; 6]; 3];
    for (k, w) in wheels.iter().enumerate() {
        let v = [1.0, w.x, w.y];
        for i in 0..3 {
            out[i][k] = (0..3).map(|j| inv[i][j] * v[j]).sum();
        }
    }
    out
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |i: usize, j: usize| {
        let r: Vec<usize> = (0..3).filter(|&x| x != i).collect();
        let s: Vec<usize> = (0..3).filter(|&x| x != j).collect();
        m[r[0]][s[0]] * m[r[1]][s[1]] - m[r[0]][s[1]] * m[r[1]][s[0]]
    };
    let det = m[0][0] * c(0, 0) - m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[j][i] = sign * c(i, j) / det;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEvaluation {
    pub feasible: bool,
    pub cost: f64,
    pub evals: usize,
    /// Poses charged the unknown-terrain penalty.
    pub insufficient: usize,
}

pub fn evaluate_pose(map: &HeightMap, pose: &Pose, config: &AceConfig) -> Result<AceResult, AceError> {
    AceModel::new(config.clone()).evaluate_pose(map, pose)
}

/// Per-cell, per-heading infeasibility. Channel `i` is heading `i * 45`
/// degrees. Unknown values are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct AceMap {
    pub geom: GridGeometry,
    pub data: Vec<f32>,
}

impl AceMap {
    pub fn filled(geom: GridGeometry, value: f32) -> Self {
        Self {
            geom,
            data: vec![value; geom.len() * HEADINGS],
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, ch: usize) -> f32 {
        self.data[self.geom.index(ix, iy) * HEADINGS + ch]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, ch: usize, v: f32) {
        let i = self.geom.index(ix, iy) * HEADINGS + ch;
        self.data[i] = v;
    }

    pub fn clamp_probabilities(&mut self) {
        for v in &mut self.data {
            if !v.is_nan() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Probability at a world pose, blending the two nearest heading
    /// channels. Unknown values and off-map points read as 0.
    #[inline]
    pub fn interpolate(&self, pose: &Pose) -> f64 {
        let Some((ix, iy)) = self.geom.cell_of(pose.x, pose.y) else {
            return 0.0;
        };
        let deg = pose.heading.to_degrees().rem_euclid(360.0);
        let pos = deg / 45.0;
        let i0 = (pos.floor() as usize) % HEADINGS;
        let f = pos - pos.floor();
        let v = |ch: usize| {
            let v = self.get(ix, iy, ch);
            if v.is_nan() {
                0.0
            } else {
                v as f64
            }
        };
        (1.0 - f) * v(i0) + f * v((i0 + 1) % HEADINGS)
    }

    /// Mean over the known channels of each cell, `NaN` if none are known.
    pub fn mean_channels(&self) -> crate::grid::Field {
        crate::grid::Field::from_fn(self.geom.width, self.geom.height, |ix, iy| {
            let (mut s, mut n) = (0.0, 0);
            for ch in 0..HEADINGS {
                let v = self.get(ix, iy, ch);
                if !v.is_nan() {
                    s += v as f64;
                    n += 1;
                }
            }
            if n == 0 {
                f64::NAN
            } else {
                s / n as f64
            }
        })
    }

    /// Known ones and known values overall.
    pub fn positive_fraction(&self) -> f64 {
        let known = self.data.iter().filter(|v| !v.is_nan()).count();
        let pos = self.data.iter().filter(|&&v| v >= 0.5).count();
        if known == 0 {
            0.0
        } else {
            pos as f64 / known as f64
        }
    }
}

/// Ground-truth map: 1 where ACE rejects the cell-center pose, 0 where it
/// accepts, `NaN` where the data is insufficient or the center cell is
/// unknown.
pub fn build_ground_truth_acemap(map: &HeightMap, config: &AceConfig) -> AceMap {
    build_ground_truth_acemap_within(map, config, None)
}

/// As [`build_ground_truth_acemap`], restricted to cells within `radius` of
/// `(x, y)`; cells outside stay `NaN`.
pub fn build_ground_truth_acemap_within(map: &HeightMap, config: &AceConfig, disc: Option<(f64, f64, f64)>) -> AceMap {
    let model = AceModel::new(config.clone());
    let index = MinMaxIndex::build(map);
    let geom = *map.geom();
    let mut out = AceMap::filled(geom, f32::NAN);
    let (x0, x1, y0, y1) = match disc {
        Some((x, y, r)) => {
            let (a, b) = geom.cell_coords(x - r, y - r);
            let (c, d) = geom.cell_coords(x + r, y + r);
            (
                a.max(0),
                c.min(geom.width as i64 - 1),
                b.max(0),
                d.min(geom.height as i64 - 1),
            )
        }
        None => (0, geom.width as i64 - 1, 0, geom.height as i64 - 1),
    };
    for iy in y0.max(0)..=y1 {
        for ix in x0.max(0)..=x1 {
            let (ix, iy) = (ix as usize, iy as usize);
            if !map.is_known(ix, iy) {
                continue;
            }
            let (cx, cy) = geom.center(ix, iy);
            if let Some((x, y, r)) = disc {
                if (cx - x).hypot(cy - y) > r {
                    continue;
                }
            }
            for ch in 0..HEADINGS {
                let pose = Pose::from_degrees(cx, cy, ch as f64 * 45.0);
                if let Ok(ok) = model.is_feasible(&index, &pose) {
                    out.set(ix, iy, ch, if ok { 0.0 } else { 1.0 });
                }
            }
        }
    }
    out
}

/// Ground-truth maps for a sequence of heightmaps on a shared lattice.
///
/// Cells whose evaluation windows saw no height change since the previous
/// call keep their previous values, so each result equals a fresh
/// [`build_ground_truth_acemap_within`] over the map-centered disc.
#[derive(Debug, Clone)]
pub struct GroundTruthCache {
    model: AceModel,
    radius: f64,
    prev: Option<(HeightMap, AceMap)>,
}

impl GroundTruthCache {
    pub fn new(config: AceConfig, radius: f64) -> Self {
        Self {
            model: AceModel::new(config),
            radius,
            prev: None,
        }
    }

    pub fn config(&self) -> &AceConfig {
        &self.model.config
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Farthest a pose's evaluation windows reach from its center, per axis.
    fn reach(&self) -> f64 {
        let g = &self.model.config.geometry;
        let far = |f: &Footprint| f.x.hypot(f.y) + f.length.hypot(f.width) / 2.0;
        g.wheels.iter().map(far).fold(far(&g.belly), f64::max)
    }

    pub fn build(&mut self, map: &HeightMap) -> AceMap {
        let geom = *map.geom();
        let (cx, cy) = geom.middle();
        let reach_cells = (self.reach() / geom.cell).ceil() as i64 + 1;
        let half = geom.width.min(geom.height) as f64 * geom.cell / 2.0;
        let reusable = self.radius + (reach_cells + 1) as f64 * geom.cell <= half;

        let prev = self.prev.take().filter(|(m, _)| {
            reusable && m.width() == geom.width && m.height() == geom.height && m.cell_size() == geom.cell
        });
        let Some((pmap, pace)) = prev else {
            let out = build_ground_truth_acemap_within(map, &self.model.config, Some((cx, cy, self.radius)));
            if reusable {
                self.prev = Some((map.clone(), out.clone()));
            }
            return out;
        };

        let (w, h) = (geom.width as i64, geom.height as i64);
        let pg = pmap.geom();
        let (pcx, pcy) = pg.middle();
        let ox = ((geom.origin_x - pg.origin_x) / geom.cell).round() as i64;
        let oy = ((geom.origin_y - pg.origin_y) / geom.cell).round() as i64;
        let prev_height = |ix: i64, iy: i64| -> Option<f64> {
            let (px, py) = (ix + ox, iy + oy);
            if px < 0 || py < 0 || px >= w || py >= h {
                None
            } else {
                pmap.get(px as usize, py as usize)
            }
        };
        // Prefix sums of changed cells.
        let sw = (w + 1) as usize;
        let mut sat = vec![0u32; sw * (h + 1) as usize];
        for iy in 0..h {
            let mut row = 0u32;
            for ix in 0..w {
                let now = map.get(ix as usize, iy as usize);
                let before = prev_height(ix, iy);
                let changed = match (now, before) {
                    (Some(a), Some(b)) => a.to_bits() != b.to_bits(),
                    (None, None) => false,
                    _ => true,
                };
                row += u32::from(changed);
                let (ux, uy) = ((ix + 1) as usize, (iy + 1) as usize);
                sat[uy * sw + ux] = sat[(uy - 1) * sw + ux] + row;
            }
        }
        let dirty = |ix: i64, iy: i64| {
            let x0 = (ix - reach_cells).max(0) as usize;
            let y0 = (iy - reach_cells).max(0) as usize;
            let x1 = (ix + reach_cells + 1).min(w) as usize;
            let y1 = (iy + reach_cells + 1).min(h) as usize;
            sat[y1 * sw + x1] + sat[y0 * sw + x0] != sat[y0 * sw + x1] + sat[y1 * sw + x0]
        };

        let index = MinMaxIndex::build(map);
        let mut out = AceMap::filled(geom, f32::NAN);
        let (a, b) = geom.cell_coords(cx - self.radius, cy - self.radius);
        let (c, d) = geom.cell_coords(cx + self.radius, cy + self.radius);
        for iy in b.max(0)..=d.min(h - 1) {
            for ix in a.max(0)..=c.min(w - 1) {
                let (ux, uy) = (ix as usize, iy as usize);
                if !map.is_known(ux, uy) {
                    continue;
                }
                let (x, y) = geom.center(ux, uy);
                if (x - cx).hypot(y - cy) > self.radius {
                    continue;
                }
                let (px, py) = (ix + ox, iy + oy);
                let cached = px >= 0
                    && py >= 0
                    && px < w
                    && py < h
                    && pmap.is_known(px as usize, py as usize)
                    && {
                        let (qx, qy) = pg.center(px as usize, py as usize);
                        (qx - pcx).hypot(qy - pcy) <= self.radius
                    }
                    && !dirty(ix, iy);
                for ch in 0..HEADINGS {
                    if cached {
                        out.set(ux, uy, ch, pace.get(px as usize, py as usize, ch));
                        continue;
                    }
                    let pose = Pose::from_degrees(x, y, ch as f64 * 45.0);
                    if let Ok(ok) = self.model.is_feasible(&index, &pose) {
                        out.set(ux, uy, ch, if ok { 0.0 } else { 1.0 });
                    }
                }
            }
        }
        self.prev = Some((map.clone(), out.clone()));
        out
    }
}
