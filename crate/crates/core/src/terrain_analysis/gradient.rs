//! Gradient-convolution heuristic.
//!
//! The heightmap is differentiated with normalized 3x3 Sobel operators,
//! squared, and averaged over an annular rover footprint:
//!
//! ```text
//! Gx  = 1/(2r) * 1/4 * [+1 0 -1; +2 0 -2; +1 0 -1] (*) A
//! Gy  = 1/(2r) * 1/4 * [+1 +2 +1; 0 0 0; -1 -2 -1] (*) A
//! Gsq = Gx o Gx + Gy o Gy
//! Gc  = k / sum(R) * R (*) Gsq
//! ```
//!
//! `(*)` is cross-correlation with the kernels as written, row index = y.
//! Borders replicate the nearest edge cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Field;
use crate::heightmap::HeightMap;

pub const SOBEL_X: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Unknown cells borrow the nearest known height within this many cells.
pub const FILL_RADIUS: i64 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum GradientError {
    #[error("rover kernel has no non-zero elements")]
    EmptyKernel,
    #[error("field shapes differ")]
    ShapeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientParams {
    pub outer_radius: f64,
    pub inner_radius: f64,
    pub cost_factor: f64,
}

impl Default for GradientParams {
    fn default() -> Self {
        Self {
            outer_radius: 1.35,
            inner_radius: 0.5,
            cost_factor: 40.0,
        }
    }
}

/// Square convolution kernel of odd side.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.size + b]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

#[derive(Debug, Clone)]
pub struct GradientMaps {
    pub gx: Field,
    pub gy: Field,
    pub gsq: Field,
    pub gc: Field,
}

/// Heights with unknown cells filled from the nearest known neighbor.
/// Cells with no known cell within [`FILL_RADIUS`] stay `NaN`.
fn filled_heights(map: &HeightMap) -> Field {
    let (w, h) = (map.width() as i64, map.height() as i64);
    Field::from_fn(w as usize, h as usize, |ix, iy| {
        if let Some(v) = map.get(ix, iy) {
            return v;
        }
        let (ix, iy) = (ix as i64, iy as i64);
        let mut best: Option<(i64, f64)> = None;
        for dy in -FILL_RADIUS..=FILL_RADIUS {
            let y = iy + dy;
            if y < 0 || y >= h {
                continue;
            }
            for dx in -FILL_RADIUS..=FILL_RADIUS {
                let x = ix + dx;
                if x < 0 || x >= w {
                    continue;
                }
                if let Some(v) = map.get(x as usize, y as usize) {
                    let d2 = dx * dx + dy * dy;
                    if best.is_none_or(|(b, _)| d2 < b) {
                        best = Some((d2, v));
                    }
                }
            }
        }
        best.map_or(f64::NAN, |(_, v)| v)
    })
}

/// Normalized Sobel gradients in dimensionless slope (m/m).
pub fn sobel_gradients(map: &HeightMap) -> (Field, Field) {
    let a = filled_heights(map);
    let (w, h) = (a.width, a.height);
    let norm = 1.0 / (8.0 * map.cell_size());
    let mut gx = Field::filled(w, h, 0.0);
    let mut gy = Field::filled(w, h, 0.0);
    for iy in 0..h {
        for ix in 0..w {
            let center = a.get(ix, iy);
            if center.is_nan() {
                continue;
            }
            let v = |dx: i64, dy: i64| {
                let s = a.get_clamped(ix as i64 + dx, iy as i64 + dy);
                if s.is_nan() {
                    center
                } else {
                    s
                }
            };
            let (nw, n, ne) = (v(-1, -1), v(0, -1), v(1, -1));
            let (wv, ev) = (v(-1, 0), v(1, 0));
            let (sw, s, se) = (v(-1, 1), v(0, 1), v(1, 1));
            gx.set(ix, iy, norm * ((nw - ne) + 2.0 * (wv - ev) + (sw - se)));
            gy.set(ix, iy, norm * ((nw + 2.0 * n + ne) - (sw + 2.0 * s + se)));
        }
    }
    (gx, gy)
}

pub fn gradient_sq(gx: &Field, gy: &Field) -> Result<Field, GradientError> {
    if !gx.same_shape(gy) {
        return Err(GradientError::ShapeMismatch);
    }
    Ok(Field {
        width: gx.width,
        height: gx.height,
        data: gx.data.iter().zip(&gy.data).map(|(x, y)| x * x + y * y).collect(),
    })
}

/// Annular rover footprint: 1 where `inner <= d <= outer`, else 0.
pub fn annulus_kernel(outer: f64, inner: f64, cell: f64) -> Kernel {
    let half = (outer / cell - 1e-9).ceil().max(0.0) as usize;
    let size = 2 * half + 1;
    let mut data = vec![0.0; size * size];
    for a in 0..size {
        for b in 0..size {
            let da = a as f64 - half as f64;
            let db = b as f64 - half as f64;
            let d = cell * (da * da + db * db).sqrt();
            if d >= inner - 1e-12 && d <= outer + 1e-12 {
                data[a * size + b] = 1.0;
            }
        }
    }
    Kernel { size, data }
}

/// Row runs of equal non-zero weight: `(row, first col, last col, weight)`.
fn kernel_runs(kernel: &Kernel) -> Vec<(usize, usize, usize, f64)> {
    let mut runs = Vec::new();
    for a in 0..kernel.size {
        let mut b = 0;
        while b < kernel.size {
            let v = kernel.get(a, b);
            if v == 0.0 {
                b += 1;
                continue;
            }
            let start = b;
            while b + 1 < kernel.size && kernel.get(a, b + 1) == v {
                b += 1;
            }
            runs.push((a, start, b, v));
            b += 1;
        }
    }
    runs
}

/// `Gc = k / sum(R) * (R (*) Gsq)` with edge replication.
pub fn gradient_conv_cost(gsq: &Field, kernel: &Kernel, k: f64) -> Result<Field, GradientError> {
    let total = kernel.sum();
    if kernel.ones() == 0 || total == 0.0 {
        return Err(GradientError::EmptyKernel);
    }
    let (w, h) = (gsq.width, gsq.height);
    let c = kernel.size / 2;
    let pw = w + 2 * c + 1;
    // Prefix sums of each edge-padded source row.
    let mut prefix = vec![0.0; h * pw];
    for sy in 0..h {
        let row = &mut prefix[sy * pw..(sy + 1) * pw];
        for t in 0..w + 2 * c {
            let col = (t as i64 - c as i64).clamp(0, w as i64 - 1) as usize;
            row[t + 1] = row[t] + gsq.get(col, sy);
        }
    }
    let runs = kernel_runs(kernel);
    let scale = k / total;
    let mut out = Field::filled(w, h, 0.0);
    for iy in 0..h {
        for ix in 0..w {
            let mut acc = 0.0;
            for &(a, b0, b1, v) in &runs {
                let sy = (iy as i64 + a as i64 - c as i64).clamp(0, h as i64 - 1) as usize;
                let row = &prefix[sy * pw..];
                acc += v * (row[ix + b1 + 1] - row[ix + b0]);
            }
            out.set(ix, iy, scale * acc);
        }
    }
    Ok(out)
}

/// Full heuristic pipeline over a heightmap.
pub fn gradient_maps(map: &HeightMap, params: &GradientParams) -> Result<GradientMaps, GradientError> {
    let (gx, gy) = sobel_gradients(map);
    let gsq = gradient_sq(&gx, &gy)?;
    let kernel = annulus_kernel(params.outer_radius, params.inner_radius, map.cell_size());
    let gc = gradient_conv_cost(&gsq, &kernel, params.cost_factor)?;
    Ok(GradientMaps { gx, gy, gsq, gc })
}
