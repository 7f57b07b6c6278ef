//! Costmap construction and terrain heuristics.
//!
//! The costmap is coarser than the heightmap and covers a larger, world-fixed
//! area. Each costmap cell fits a plane to the heightmap cells whose centers
//! fall inside it; tilt and roughness of that fit set its traversal cost.

mod gradient;

pub use gradient::{
    annulus_kernel, gradient_conv_cost, gradient_maps, gradient_sq, sobel_gradients, GradientError, GradientMaps,
    GradientParams, Kernel, FILL_RADIUS, SOBEL_X, SOBEL_Y,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellRect, Field, GridGeometry, Rect};
use crate::heightmap::HeightMap;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("plane fit needs at least 3 known cells, found {0}")]
    TooFewCells(usize),
    #[error("known cells are collinear")]
    Collinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainParams {
    pub costmap_cell: f64,
    pub costmap_extent: f64,
    /// Cost per degree of tilt.
    pub w_tilt: f64,
    /// Cost per square meter of roughness.
    pub w_rough: f64,
    pub min_traverse_cost: f64,
    pub unknown_cost: f64,
    pub tilt_limit_deg: f64,
    /// Fraction of a costmap cell's heightmap cells that must be known
    /// before it is analyzed.
    pub min_known_fraction: f64,
    pub gradient: GradientParams,
    /// Weight of the mean infeasibility probability added to each cell.
    pub learned_costmap_factor: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            costmap_cell: 0.5,
            costmap_extent: 100.0,
            w_tilt: 0.2,
            w_rough: 50.0,
            min_traverse_cost: 1.0,
            unknown_cost: 2.0,
            tilt_limit_deg: 30.0,
            min_known_fraction: 0.5,
            gradient: GradientParams::default(),
            learned_costmap_factor: 10.0,
        }
    }
}

/// Static keep-out zones. A costmap cell whose center lies in any zone is
/// impassable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeepOutMask {
    pub zones: Vec<Rect>,
}

impl KeepOutMask {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.zones.iter().any(|z| z.contains(x, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub tilt_deg: f64,
    /// Mean squared perpendicular distance from the fitted plane.
    pub roughness: f64,
    pub known: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCell {
    pub base_cost: f64,
    pub infinite: bool,
    pub unknown: bool,
    pub tilt_deg: f64,
    pub roughness: f64,
    pub gradient_cost: f64,
    pub learned_cost: f64,
}

impl CostCell {
    fn unknown(cost: f64) -> Self {
        Self {
            base_cost: cost,
            infinite: false,
            unknown: true,
            tilt_deg: 0.0,
            roughness: 0.0,
            gradient_cost: 0.0,
            learned_cost: 0.0,
        }
    }

    /// Traversal cost, `+inf` for impassable cells.
    #[inline]
    pub fn cost(&self) -> f64 {
        if self.infinite {
            f64::INFINITY
        } else {
            self.base_cost
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub geom: GridGeometry,
    pub cells: Vec<CostCell>,
}

impl CostMap {
    pub fn unknown(geom: GridGeometry, unknown_cost: f64) -> Self {
        Self {
            geom,
            cells: vec![CostCell::unknown(unknown_cost); geom.len()],
        }
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> &CostCell {
        &self.cells[self.geom.index(ix, iy)]
    }

    pub fn cell_mut(&mut self, ix: usize, iy: usize) -> &mut CostCell {
        let i = self.geom.index(ix, iy);
        &mut self.cells[i]
    }

    /// Cost of the cell containing a world point; off-map points are
    /// impassable.
    #[inline]
    pub fn cost_at(&self, x: f64, y: f64) -> f64 {
        match self.geom.cell_of(x, y) {
            Some((ix, iy)) => self.cell(ix, iy).cost(),
            None => f64::INFINITY,
        }
    }

    pub fn costs(&self) -> Field {
        Field {
            width: self.geom.width,
            height: self.geom.height,
            data: self.cells.iter().map(CostCell::cost).collect(),
        }
    }

    /// Overwrite cells that `fresh` has analyzed. Both maps must share a
    /// geometry.
    pub fn merge(&mut self, fresh: &CostMap) {
        assert_eq!(self.geom, fresh.geom, "costmap geometries differ");
        for (dst, src) in self.cells.iter_mut().zip(&fresh.cells) {
            if !src.unknown {
                *dst = *src;
            }
        }
    }
}

/// Least-squares plane through the centers of the known cells of `region`.
pub fn fit_plane(map: &HeightMap, region: CellRect) -> Result<PlaneFit, FitError> {
    let r = map.cell_size();
    let mut pts = Vec::new();
    if let Some(c) = region.clip(map.width(), map.height()) {
        for iy in c.y0..=c.y1 {
            for ix in c.x0..=c.x1 {
                if let Some(z) = map.get(ix as usize, iy as usize) {
                    pts.push((ix as f64 * r, iy as f64 * r, z));
                }
            }
        }
    }
    fit_points(&pts)
}

fn fit_points(pts: &[(f64, f64, f64)]) -> Result<PlaneFit, FitError> {
    let n = pts.len();
    if n < 3 {
        return Err(FitError::TooFewCells(n));
    }
    let nf = n as f64;
    let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
    for &(x, y, z) in pts {
        mx += x;
        my += y;
        mz += z;
    }
    mx /= nf;
    my /= nf;
    mz /= nf;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, z) in pts {
        let (dx, dy, dz) = (x - mx, y - my, z - mz);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-9 * sxx * syy || sxx == 0.0 || syy == 0.0 {
        return Err(FitError::Collinear);
    }
    let b = (syy * sxz - sxy * syz) / det;
    let c = (sxx * syz - sxy * sxz) / det;
    let mut sse = 0.0;
    for &(x, y, z) in pts {
        let e = (z - mz) - b * (x - mx) - c * (y - my);
        sse += e * e;
    }
    let g2 = b * b + c * c;
    Ok(PlaneFit {
        tilt_deg: g2.sqrt().atan().to_degrees(),
        roughness: sse / nf / (1.0 + g2),
        known: n,
    })
}

/// Index range `[lo, hi)` of heightmap cells whose centers lie in `[a, b)`
/// along one axis.
#[inline]
fn center_range(a: f64, b: f64, origin: f64, cell: f64) -> (i64, i64) {
    let lo = ((a - origin) / cell - 0.5 - 1e-9).ceil() as i64;
    let hi = ((b - origin) / cell - 0.5 - 1e-9).ceil() as i64;
    (lo, hi)
}

/// Heightmap cells (possibly off-map) whose centers fall in costmap cell
/// `(cx, cy)`.
pub fn covered_cells(cm: &GridGeometry, hm: &GridGeometry, cx: usize, cy: usize) -> CellRect {
    let x0 = cm.origin_x + cx as f64 * cm.cell;
    let y0 = cm.origin_y + cy as f64 * cm.cell;
    let (ix0, ix1) = center_range(x0, x0 + cm.cell, hm.origin_x, hm.cell);
    let (iy0, iy1) = center_range(y0, y0 + cm.cell, hm.origin_y, hm.cell);
    CellRect {
        x0: ix0,
        y0: iy0,
        x1: ix1 - 1,
        y1: iy1 - 1,
    }
}

/// Costmap cells whose footprint can contain heightmap cell centers.
fn overlapping_cells(cm: &GridGeometry, hm: &GridGeometry) -> Option<CellRect> {
    let (x0, y0) = cm.cell_coords(hm.origin_x, hm.origin_y);
    let (x1, y1) = cm.cell_coords(hm.max_x(), hm.max_y());
    CellRect { x0, y0, x1, y1 }.clip(cm.width, cm.height)
}

/// Costmap over `params.costmap_extent` centered on the heightmap.
pub fn build_costmap(map: &HeightMap, params: &TerrainParams, keepout: &KeepOutMask) -> CostMap {
    let (cx, cy) = map.geom().middle();
    let geom = GridGeometry::centered(cx, cy, params.costmap_extent, params.costmap_cell);
    build_costmap_on(geom, map, params, keepout)
}

/// Analyze every costmap cell of `geom` that the heightmap covers
/// sufficiently; the rest stay unknown.
pub fn build_costmap_on(geom: GridGeometry, map: &HeightMap, params: &TerrainParams, keepout: &KeepOutMask) -> CostMap {
    let mut out = CostMap::unknown(geom, params.unknown_cost);
    for iy in 0..geom.height {
        for ix in 0..geom.width {
            let (x, y) = geom.center(ix, iy);
            if keepout.contains(x, y) {
                let c = out.cell_mut(ix, iy);
                c.infinite = true;
                c.unknown = false;
            }
        }
    }
    let Some(span) = overlapping_cells(&geom, map.geom()) else {
        return out;
    };
    for cy in span.y0..=span.y1 {
        for cx in span.x0..=span.x1 {
            let (cx, cy) = (cx as usize, cy as usize);
            if out.cell(cx, cy).infinite {
                continue;
            }
            let region = covered_cells(&geom, map.geom(), cx, cy);
            let expected = region.cell_count();
            let mut known = 0;
            if let Some(c) = region.clip(map.width(), map.height()) {
                for iy in c.y0..=c.y1 {
                    for ix in c.x0..=c.x1 {
                        known += map.is_known(ix as usize, iy as usize) as usize;
                    }
                }
            }
            if expected == 0 || (known as f64) < params.min_known_fraction * expected as f64 {
                continue;
            }
            let cell = out.cell_mut(cx, cy);
            cell.unknown = false;
            match fit_plane(map, region) {
                Ok(fit) => {
                    cell.tilt_deg = fit.tilt_deg;
                    cell.roughness = fit.roughness;
                    cell.base_cost =
                        params.w_tilt * fit.tilt_deg + params.w_rough * fit.roughness + params.min_traverse_cost;
                    cell.infinite = fit.tilt_deg > params.tilt_limit_deg;
                }
                Err(_) => cell.infinite = true,
            }
        }
    }
    out
}

/// Add heuristic terms to every analyzed cell: the mean gradient cost over
/// the covered heightmap cells and `learned_factor` times the mean
/// infeasibility probability. `gc` and `learned` are per heightmap cell on
/// `hm`; `NaN` entries of `learned` are skipped.
pub fn inject_heuristic_costs(
    costmap: &mut CostMap,
    hm: &GridGeometry,
    gc: Option<&Field>,
    learned: Option<&Field>,
    learned_factor: f64,
) {
    if gc.is_none() && learned.is_none() {
        return;
    }
    let geom = costmap.geom;
    let Some(span) = overlapping_cells(&geom, hm) else {
        return;
    };
    for cy in span.y0..=span.y1 {
        for cx in span.x0..=span.x1 {
            let (cx, cy) = (cx as usize, cy as usize);
            if costmap.cell(cx, cy).unknown {
                continue;
            }
            let Some(c) = covered_cells(&geom, hm, cx, cy).clip(hm.width, hm.height) else {
                continue;
            };
            let (mut g_sum, mut l_sum, mut n, mut l_n) = (0.0, 0.0, 0usize, 0usize);
            for iy in c.y0..=c.y1 {
                for ix in c.x0..=c.x1 {
                    let (ix, iy) = (ix as usize, iy as usize);
                    if let Some(g) = gc {
                        g_sum += g.get(ix, iy);
                    }
                    if let Some(l) = learned {
                        let v = l.get(ix, iy);
                        if !v.is_nan() {
                            l_sum += v;
                            l_n += 1;
                        }
                    }
                    n += 1;
                }
            }
            let cell = costmap.cell_mut(cx, cy);
            if gc.is_some() && n > 0 {
                cell.gradient_cost = g_sum / n as f64;
                cell.base_cost += cell.gradient_cost;
            }
            if l_n > 0 {
                cell.learned_cost = learned_factor * l_sum / l_n as f64;
                cell.base_cost += cell.learned_cost;
            }
        }
    }
}
