//! Rover-centered 2.5D height grid.
//!
//! Unknown cells hold `NaN` and never contribute to a query. Window queries
//! go through [`HeightQuery`] so that the clearance evaluator can run either
//! against a plain scan of the map or against a precomputed [`MinMaxIndex`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellRect, GridGeometry, Rect};

#[derive(Debug, Error, PartialEq)]
pub enum HeightMapError {
    #[error("every cell intersecting the window is unknown")]
    NoKnownCells,
    #[error("invalid heightmap geometry: {0}")]
    InvalidGeometry(String),
}

/// A single world-frame point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

pub type PointCloud = Vec<Point3>;

/// Min/max over the known cells of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub min: f64,
    pub max: f64,
    pub known: usize,
    pub total: usize,
}

impl WindowStats {
    pub fn known_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.known as f64 / self.total as f64
        }
    }
}

/// Read access to a height grid by cell windows.
pub trait HeightQuery {
    fn geometry(&self) -> &GridGeometry;

    /// Statistics over `rect`; cells outside the grid count as unknown.
    fn window(&self, rect: CellRect) -> WindowStats;

    fn cell_height(&self, ix: i64, iy: i64) -> Option<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    geom: GridGeometry,
    heights: Vec<f64>,
}

impl HeightMap {
    /// A map with every cell unknown.
    pub fn unknown(geom: GridGeometry) -> Result<Self, HeightMapError> {
        validate(&geom)?;
        Ok(Self {
            heights: vec![f64::NAN; geom.len()],
            geom,
        })
    }

    pub fn from_fn(geom: GridGeometry, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self, HeightMapError> {
        validate(&geom)?;
        let mut heights = Vec::with_capacity(geom.len());
        for iy in 0..geom.height {
            for ix in 0..geom.width {
                let (x, y) = geom.center(ix, iy);
                heights.push(f(x, y));
            }
        }
        Ok(Self { geom, heights })
    }

    /// Build from raw row-major heights; `NaN` marks unknown cells.
    pub fn from_heights(geom: GridGeometry, heights: Vec<f64>) -> Result<Self, HeightMapError> {
        validate(&geom)?;
        if heights.len() != geom.len() {
            return Err(HeightMapError::InvalidGeometry(format!(
                "expected {} heights, got {}",
                geom.len(),
                heights.len()
            )));
        }
        Ok(Self { geom, heights })
    }

    pub fn geom(&self) -> &GridGeometry {
        &self.geom
    }

    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    pub fn cell_size(&self) -> f64 {
        self.geom.cell
    }

    /// Raw row-major heights (`NaN` = unknown).
    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        let h = self.heights[self.geom.index(ix, iy)];
        (!h.is_nan()).then_some(h)
    }

    #[inline]
    pub fn is_known(&self, ix: usize, iy: usize) -> bool {
        !self.heights[self.geom.index(ix, iy)].is_nan()
    }

    pub fn set(&mut self, ix: usize, iy: usize, h: Option<f64>) {
        let i = self.geom.index(ix, iy);
        self.heights[i] = h.unwrap_or(f64::NAN);
    }

    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        self.geom.cell_of(x, y).and_then(|(ix, iy)| self.get(ix, iy))
    }

    pub fn known_count(&self) -> usize {
        self.heights.iter().filter(|h| !h.is_nan()).count()
    }

    /// Replace each cell that receives points with the mean height of this
    /// frame's points. Points outside the map are dropped.
    pub fn integrate_points(&mut self, points: &[Point3]) {
        if points.is_empty() {
            return;
        }
        let mut acc: Vec<(f64, u32)> = vec![(0.0, 0); self.geom.len()];
        for p in points {
            if let Some((ix, iy)) = self.geom.cell_of(p.x, p.y) {
                let a = &mut acc[self.geom.index(ix, iy)];
                a.0 += p.z;
                a.1 += 1;
            }
        }
        for (h, (sum, n)) in self.heights.iter_mut().zip(acc) {
            if n > 0 {
                *h = sum / n as f64;
            }
        }
    }

    /// Min/max height over known cells intersecting `rect`, and the fraction
    /// of intersecting cells that are known.
    pub fn window_minmax(&self, rect: &Rect) -> Result<(f64, f64, f64), HeightMapError> {
        let stats = self.window(self.geom.cells_in_rect(rect));
        if stats.known == 0 {
            return Err(HeightMapError::NoKnownCells);
        }
        Ok((stats.min, stats.max, stats.known_fraction()))
    }

    /// Shift the map so its center lies as close as possible to
    /// `(cx, cy)` while staying on the same cell lattice.
    pub fn recenter(&self, cx: f64, cy: f64) -> HeightMap {
        let (mx, my) = self.geom.middle();
        let dx = ((cx - mx) / self.geom.cell).round() as i64;
        let dy = ((cy - my) / self.geom.cell).round() as i64;
        if dx == 0 && dy == 0 {
            return self.clone();
        }
        let geom = GridGeometry {
            origin_x: self.geom.origin_x + dx as f64 * self.geom.cell,
            origin_y: self.geom.origin_y + dy as f64 * self.geom.cell,
            ..self.geom
        };
        let (w, h) = (geom.width as i64, geom.height as i64);
        let mut heights = vec![f64::NAN; geom.len()];
        for iy in 0..h {
            let sy = iy + dy;
            if sy < 0 || sy >= h {
                continue;
            }
            for ix in 0..w {
                let sx = ix + dx;
                if sx < 0 || sx >= w {
                    continue;
                }
                heights[(iy * w + ix) as usize] = self.heights[(sy * w + sx) as usize];
            }
        }
        HeightMap { geom, heights }
    }
}

fn validate(geom: &GridGeometry) -> Result<(), HeightMapError> {
    if !(geom.cell > 0.0 && geom.cell.is_finite()) {
        return Err(HeightMapError::InvalidGeometry("cell size must be positive".into()));
    }
    if geom.width < 3 || geom.height < 3 {
        return Err(HeightMapError::InvalidGeometry(
            "width and height must be at least 3".into(),
        ));
    }
    Ok(())
}

impl HeightQuery for HeightMap {
    fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    fn window(&self, rect: CellRect) -> WindowStats {
        let total = rect.cell_count();
        let mut stats = WindowStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            known: 0,
            total,
        };
        let Some(c) = rect.clip(self.geom.width, self.geom.height) else {
            return stats;
        };
        for iy in c.y0..=c.y1 {
            let row = iy as usize * self.geom.width;
            for &h in &self.heights[row + c.x0 as usize..=row + c.x1 as usize] {
                if !h.is_nan() {
                    stats.known += 1;
                    if h < stats.min {
                        stats.min = h;
                    }
                    if h > stats.max {
                        stats.max = h;
                    }
                }
            }
        }
        stats
    }

    fn cell_height(&self, ix: i64, iy: i64) -> Option<f64> {
        if self.geom.contains_cell(ix, iy) {
            self.get(ix as usize, iy as usize)
        } else {
            None
        }
    }
}

const INDEX_LEVELS: usize = 4;

/// Sparse-table index answering window min/max in a handful of lookups.
///
/// Blocks of `2^kx x 2^ky` cells are precomputed for `kx, ky < 4`; larger
/// windows are covered by overlapping blocks, which is exact because min and
/// max are idempotent.
pub struct MinMaxIndex<'a> {
    map: &'a HeightMap,
    mins: Vec<Vec<f64>>,
    maxs: Vec<Vec<f64>>,
    // (width+1) x (height+1) integral image of known cells.
    known_sat: Vec<u32>,
}

impl<'a> MinMaxIndex<'a> {
    pub fn build(map: &'a HeightMap) -> Self {
        let (w, h) = (map.width(), map.height());
        let n = w * h;
        let mut mins = vec![Vec::new(); INDEX_LEVELS * INDEX_LEVELS];
        let mut maxs = vec![Vec::new(); INDEX_LEVELS * INDEX_LEVELS];
        mins[0] = map
            .heights
            .iter()
            .map(|&v| if v.is_nan() { f64::INFINITY } else { v })
            .collect();
        maxs[0] = map
            .heights
            .iter()
            .map(|&v| if v.is_nan() { f64::NEG_INFINITY } else { v })
            .collect();
        for kx in 0..INDEX_LEVELS {
            for ky in 0..INDEX_LEVELS {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let (src, step, horizontal) = if ky == 0 {
                    ((kx - 1) * INDEX_LEVELS, 1usize << (kx - 1), true)
                } else {
                    (kx * INDEX_LEVELS + ky - 1, 1usize << (ky - 1), false)
                };
                let (smn, smx) = (&mins[src], &maxs[src]);
                let mut mn = smn.clone();
                let mut mx = smx.clone();
                if horizontal {
                    if step < w {
                        for iy in 0..h {
                            let r = iy * w;
                            for ix in r..r + w - step {
                                mn[ix] = smn[ix].min(smn[ix + step]);
                                mx[ix] = smx[ix].max(smx[ix + step]);
                            }
                        }
                    }
                } else if step < h {
                    let off = step * w;
                    for i in 0..n - off {
                        mn[i] = smn[i].min(smn[i + off]);
                        mx[i] = smx[i].max(smx[i + off]);
                    }
                }
                mins[kx * INDEX_LEVELS + ky] = mn;
                maxs[kx * INDEX_LEVELS + ky] = mx;
            }
        }
        let mut known_sat = vec![0u32; (w + 1) * (h + 1)];
        for iy in 0..h {
            let mut row = 0u32;
            for ix in 0..w {
                row += u32::from(map.is_known(ix, iy));
                known_sat[(iy + 1) * (w + 1) + ix + 1] = known_sat[iy * (w + 1) + ix + 1] + row;
            }
        }
        Self {
            map,
            mins,
            maxs,
            known_sat,
        }
    }

    pub fn map(&self) -> &HeightMap {
        self.map
    }
}

/// Block level and stride covering `lo..=hi` with overlapping blocks.
#[inline]
fn block_level(lo: i64, hi: i64) -> (usize, i64, i64) {
    let len = (hi - lo + 1) as usize;
    let k = ((usize::BITS - 1 - len.leading_zeros()) as usize).min(INDEX_LEVELS - 1);
    let b = 1i64 << k;
    (k, b, hi - b + 1)
}

impl HeightQuery for MinMaxIndex<'_> {
    fn geometry(&self) -> &GridGeometry {
        &self.map.geom
    }

    fn window(&self, rect: CellRect) -> WindowStats {
        let total = rect.cell_count();
        let mut stats = WindowStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            known: 0,
            total,
        };
        let w = self.map.width();
        let Some(c) = rect.clip(w, self.map.height()) else {
            return stats;
        };
        let sw = w + 1;
        let (x0, y0, x1, y1) = (c.x0 as usize, c.y0 as usize, c.x1 as usize + 1, c.y1 as usize + 1);
        stats.known = (self.known_sat[y1 * sw + x1] + self.known_sat[y0 * sw + x0]
            - self.known_sat[y0 * sw + x1]
            - self.known_sat[y1 * sw + x0]) as usize;
        if stats.known == 0 {
            return stats;
        }
        let (kx, bx, last_x) = block_level(c.x0, c.x1);
        let (ky, by, last_y) = block_level(c.y0, c.y1);
        let level = kx * INDEX_LEVELS + ky;
        let (mn, mx) = (&self.mins[level], &self.maxs[level]);
        let mut y = c.y0;
        loop {
            let yy = y.min(last_y);
            let row = yy as usize * w;
            let mut x = c.x0;
            loop {
                let i = row + x.min(last_x) as usize;
                stats.min = stats.min.min(mn[i]);
                stats.max = stats.max.max(mx[i]);
                if x >= last_x {
                    break;
                }
                x += bx;
            }
            if yy >= last_y {
                break;
            }
            y += by;
        }
        stats
    }

    fn cell_height(&self, ix: i64, iy: i64) -> Option<f64> {
        self.map.cell_height(ix, iy)
    }
}
