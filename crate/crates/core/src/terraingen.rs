//! Synthetic ground-truth terrain: a tilted plane plus rocks.
//!
//! Rocks are half-spheroids whose diameters follow a truncated exponential
//! size-frequency law. They are dropped one at a time until the measured
//! rock-covered fraction of the grid reaches the requested CFA.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridGeometry;
use crate::heightmap::HeightMap;

/// A cell counts as rock-covered when its bump exceeds this height.
pub const ROCK_COVER_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum TerrainError {
    #[error("invalid terrain spec: {0}")]
    InvalidSpec(String),
    #[error("cannot reach CFA {target:.4} (achieved {achieved:.4})")]
    SpecInfeasible { target: f64, achieved: f64 },
}

/// Disk kept free of rocks, e.g. around the start and the goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearZone {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainSpec {
    pub seed: u64,
    pub slope_deg: f64,
    /// Direction of steepest ascent, degrees counter-clockwise from +x.
    pub slope_azimuth_deg: f64,
    /// Cumulative fractional area covered by rocks.
    pub cfa: f64,
    /// Side of the square terrain in meters; the terrain is centered on the
    /// world origin.
    pub extent: f64,
    pub cell: f64,
    pub rock_diameter_range: (f64, f64),
    /// Rock height is `0.5 * diameter * height_ratio`.
    pub height_ratio: f64,
    pub clear_zones: Vec<ClearZone>,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            slope_deg: 0.0,
            slope_azimuth_deg: 45.0,
            cfa: 0.0,
            extent: 100.0,
            cell: 0.1,
            rock_diameter_range: (0.1, 1.5),
            height_ratio: 0.5,
            clear_zones: Vec::new(),
        }
    }
}

impl TerrainSpec {
    pub fn validate(&self) -> Result<(), TerrainError> {
        let bad = |m: &str| Err(TerrainError::InvalidSpec(m.to_string()));
        if !(0.0..0.5).contains(&self.cfa) {
            return bad("cfa must lie in [0, 0.5)");
        }
        if !(0.0..=30.0).contains(&self.slope_deg) {
            return bad("slope must lie in [0, 30] degrees");
        }
        if !(self.cell > 0.0) || !(self.extent >= 3.0 * self.cell) {
            return bad("extent must cover at least 3 cells of positive size");
        }
        let (lo, hi) = self.rock_diameter_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("rock diameter range must satisfy 0 < min <= max");
        }
        if !(self.height_ratio > 0.0) {
            return bad("height ratio must be positive");
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::centered(0.0, 0.0, self.extent, self.cell)
    }

    pub fn class(&self) -> TerrainClass {
        classify_terrain(self.slope_deg, self.cfa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Benign,
    Complex,
}

impl TerrainClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerrainClass::Benign => "benign",
            TerrainClass::Complex => "complex",
        }
    }
}

/// Benign iff CFA is at most 7% and slope at most 15 degrees; both bounds
/// inclusive.
pub fn classify_terrain(slope_deg: f64, cfa: f64) -> TerrainClass {
    if cfa <= 0.07 && slope_deg <= 15.0 {
        TerrainClass::Benign
    } else {
        TerrainClass::Complex
    }
}

#[derive(Debug, Clone)]
pub struct Terrain {
    pub map: HeightMap,
    pub rocks_placed: usize,
    pub achieved_cfa: f64,
}

/// Rate of the truncated exponential on `[lo, hi]` whose mean sits at
/// `lo + 0.4 * (hi - lo)`.
pub fn size_frequency_rate(lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return 0.0;
    }
    let target = 0.4 * span;
    // Mean excess over `lo` as a function of the rate; decreasing from span/2.
    let excess = |l: f64| {
        let e = (-l * span).exp();
        1.0 / l - span * e / (1.0 - e)
    };
    let (mut a, mut b) = (1e-9 / span, 1e3 / span);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if excess(m) > target {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn sample_diameter(rng: &mut ChaCha8Rng, lo: f64, hi: f64, rate: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 || rate <= 0.0 {
        return lo;
    }
    let u: f64 = rng.random();
    let d = lo - (1.0 - u * (1.0 - (-rate * span).exp())).ln() / rate;
    d.clamp(lo, hi)
}

pub fn generate_terrain(spec: &TerrainSpec) -> Result<Terrain, TerrainError> {
    spec.validate()?;
    let geom = spec.geometry();
    let n = geom.len();
    let mut bump = vec![0.0f64; n];
    let mut covered = 0usize;
    let mut rocks = 0usize;

    if spec.cfa > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (lo, hi) = spec.rock_diameter_range;
        let rate = size_frequency_rate(lo, hi);
        let target = (spec.cfa * n as f64).ceil() as usize;
        let mean_area = std::f64::consts::FRAC_PI_4 * (lo + 0.4 * (hi - lo)).powi(2);
        let area = spec.extent * spec.extent;
        let max_attempts = (50.0 * spec.cfa * area / mean_area).ceil() as usize + 10_000;
        let mut attempts = 0;
        while covered < target {
            attempts += 1;
            if attempts > max_attempts {
                return Err(TerrainError::SpecInfeasible {
                    target: spec.cfa,
                    achieved: covered as f64 / n as f64,
                });
            }
            let x = geom.origin_x + rng.random::<f64>() * spec.extent;
            let y = geom.origin_y + rng.random::<f64>() * spec.extent;
            let d = sample_diameter(&mut rng, lo, hi, rate);
            let radius = 0.5 * d;
            if spec
                .clear_zones
                .iter()
                .any(|z| (x - z.x).hypot(y - z.y) < z.radius + radius)
            {
                continue;
            }
            rocks += 1;
            covered += stamp_rock(&geom, &mut bump, x, y, d, spec.height_ratio);
        }
    }

    let achieved = covered as f64 / n as f64;
    if spec.cfa > 0.0 && !(0.9 * spec.cfa..=1.1 * spec.cfa).contains(&achieved) {
        return Err(TerrainError::SpecInfeasible {
            target: spec.cfa,
            achieved,
        });
    }

    let (gx, gy) = slope_gradient(spec);
    let mut heights = bump;
    for iy in 0..geom.height {
        for ix in 0..geom.width {
            let (x, y) = geom.center(ix, iy);
            heights[geom.index(ix, iy)] += gx * x + gy * y;
        }
    }
    let map = HeightMap::from_heights(geom, heights).map_err(|e| TerrainError::InvalidSpec(e.to_string()))?;
    Ok(Terrain {
        map,
        rocks_placed: rocks,
        achieved_cfa: achieved,
    })
}

/// Height gradient `(dz/dx, dz/dy)` of the underlying plane.
pub fn slope_gradient(spec: &TerrainSpec) -> (f64, f64) {
    let t = spec.slope_deg.to_radians().tan();
    let az = spec.slope_azimuth_deg.to_radians();
    (t * az.cos(), t * az.sin())
}

/// Height of the underlying plane at a world point.
pub fn plane_height(spec: &TerrainSpec, x: f64, y: f64) -> f64 {
    let (gx, gy) = slope_gradient(spec);
    gx * x + gy * y
}

/// Raise cells under a half-spheroid rock; returns newly covered cells.
fn stamp_rock(geom: &GridGeometry, bump: &mut [f64], x: f64, y: f64, d: f64, ratio: f64) -> usize {
    let r = 0.5 * d;
    let h = r * ratio;
    let (x0, y0) = geom.cell_coords(x - r, y - r);
    let (x1, y1) = geom.cell_coords(x + r, y + r);
    let mut newly = 0;
    for iy in y0.max(0)..=y1.min(geom.height as i64 - 1) {
        for ix in x0.max(0)..=x1.min(geom.width as i64 - 1) {
            let (cx, cy) = geom.center(ix as usize, iy as usize);
            let q = ((cx - x).powi(2) + (cy - y).powi(2)) / (r * r);
            if q >= 1.0 {
                continue;
            }
            let z = h * (1.0 - q).sqrt();
            let i = geom.index(ix as usize, iy as usize);
            if z > bump[i] {
                if bump[i] <= ROCK_COVER_THRESHOLD && z > ROCK_COVER_THRESHOLD {
                    newly += 1;
                }
                bump[i] = z;
            }
        }
    }
    newly
}
