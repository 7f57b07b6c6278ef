//! Regular square-cell grid geometry shared by every map type.

use serde::{Deserialize, Serialize};

/// Placement of a regular grid in the world frame.
///
/// Cell `(ix, iy)` covers `[origin_x + ix*cell, origin_x + (ix+1)*cell)` in x
/// and likewise in y. Storage is row-major with `iy` selecting the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(origin_x: f64, origin_y: f64, cell: f64, width: usize, height: usize) -> Self {
        Self {
            origin_x,
            origin_y,
            cell,
            width,
            height,
        }
    }

    /// Grid of `extent` meters on a side whose center is `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, extent: f64, cell: f64) -> Self {
        let n = (extent / cell).round().max(1.0) as usize;
        let half = n as f64 * cell / 2.0;
        Self::new(cx - half, cy - half, cell, n, n)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    /// Unclamped cell coordinates of a world point. A point on a cell
    /// boundary belongs to the higher-index cell.
    #[inline]
    pub fn cell_coords(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin_x) / self.cell).floor() as i64,
            ((y - self.origin_y) / self.cell).floor() as i64,
        )
    }

    #[inline]
    pub fn contains_cell(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    /// Cell containing a world point, if it lies on the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (ix, iy) = self.cell_coords(x, y);
        self.contains_cell(ix, iy).then_some((ix as usize, iy as usize))
    }

    #[inline]
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_x + (ix as f64 + 0.5) * self.cell,
            self.origin_y + (iy as f64 + 0.5) * self.cell,
        )
    }

    /// World center of the whole grid.
    pub fn middle(&self) -> (f64, f64) {
        (
            self.origin_x + self.width as f64 * self.cell / 2.0,
            self.origin_y + self.height as f64 * self.cell / 2.0,
        )
    }

    pub fn max_x(&self) -> f64 {
        self.origin_x + self.width as f64 * self.cell
    }

    pub fn max_y(&self) -> f64 {
        self.origin_y + self.height as f64 * self.cell
    }

    /// Cells overlapping an axis-aligned world rectangle (possibly extending
    /// past the grid edge). An edge within 1e-9 cells of a cell boundary
    /// counts as lying on it, and touching a cell does not include it.
    pub fn cells_in_rect(&self, rect: &Rect) -> CellRect {
        const EPS: f64 = 1e-9;
        let span = |lo: f64, hi: f64, origin: f64| {
            let a = ((lo - origin) / self.cell + EPS).floor() as i64;
            let b = (((hi - origin) / self.cell - EPS).ceil() as i64 - 1).max(a);
            (a, b)
        };
        let (x0, x1) = span(rect.min_x, rect.max_x, self.origin_x);
        let (y0, y1) = span(rect.min_y, rect.max_y, self.origin_y);
        CellRect { x0, y0, x1, y1 }
    }
}

/// Axis-aligned world rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn around(cx: f64, cy: f64, half_x: f64, half_y: f64) -> Self {
        Self::new(cx - half_x, cy - half_y, cx + half_x, cy + half_y)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Inclusive range of cell indices; may reach outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl CellRect {
    pub fn cell_count(&self) -> usize {
        if self.x1 < self.x0 || self.y1 < self.y0 {
            return 0;
        }
        ((self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)) as usize
    }

    /// Intersection with a `width x height` grid, or `None` if disjoint.
    pub fn clip(&self, width: usize, height: usize) -> Option<CellRect> {
        let c = CellRect {
            x0: self.x0.max(0),
            y0: self.y0.max(0),
            x1: self.x1.min(width as i64 - 1),
            y1: self.y1.min(height as i64 - 1),
        };
        (c.x0 <= c.x1 && c.y0 <= c.y1).then_some(c)
    }
}

/// Dense row-major scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for iy in 0..height {
            for ix in 0..width {
                data.push(f(ix, iy));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.width + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.data[iy * self.width + ix] = v;
    }

    /// Value with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, ix: i64, iy: i64) -> f64 {
        let x = ix.clamp(0, self.width as i64 - 1) as usize;
        let y = iy.clamp(0, self.height as i64 - 1) as usize;
        self.get(x, y)
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_point_goes_to_higher_cell() {
        let g = GridGeometry::new(0.0, 0.0, 0.5, 4, 4);
        assert_eq!(g.cell_of(0.5, 0.0), Some((1, 0)));
        assert_eq!(g.cell_of(1.999, 1.0), Some((3, 2)));
        assert_eq!(g.cell_of(2.0, 0.0), None);
        assert_eq!(g.cell_of(-0.0001, 0.0), None);
    }

    #[test]
    fn center_round_trips() {
        let g = GridGeometry::centered(3.0, -7.0, 20.0, 0.1);
        assert_eq!(g.width, 200);
        for &(ix, iy) in &[(0, 0), (17, 123), (199, 199)] {
            let (x, y) = g.center(ix, iy);
            assert_eq!(g.cell_of(x, y), Some((ix, iy)));
        }
    }

    #[test]
    fn clip_rect() {
        let r = CellRect {
            x0: -2,
            y0: 3,
            x1: 1,
            y1: 9,
        };
        assert_eq!(r.cell_count(), 28);
        assert_eq!(
            r.clip(5, 5),
            Some(CellRect {
                x0: 0,
                y0: 3,
                x1: 1,
                y1: 4
            })
        );
        assert_eq!(
            CellRect {
                x0: 6,
                y0: 0,
                x1: 8,
                y1: 1
            }
            .clip(5, 5),
            None
        );
    }

    #[test]
    fn rect_cells_ignore_touching_and_rounding() {
        let g = GridGeometry::new(-13.0, 0.0, 0.1, 300, 10);
        // Edges on boundaries, reached through inexact arithmetic.
        let r = Rect::new(-13.0 + 0.1 * 3.0, 0.1, -13.0 + 0.7 + 0.1 + 0.2, 0.3);
        assert_eq!(
            g.cells_in_rect(&r),
            CellRect {
                x0: 3,
                y0: 1,
                x1: 9,
                y1: 2
            }
        );
        let r = Rect::new(-12.95, 0.15, -12.85, 0.35);
        assert_eq!(
            g.cells_in_rect(&r),
            CellRect {
                x0: 0,
                y0: 1,
                x1: 1,
                y1: 3
            }
        );
        let p = Rect::new(-12.9, 0.2, -12.9, 0.2);
        assert_eq!(
            g.cells_in_rect(&p),
            CellRect {
                x0: 1,
                y0: 2,
                x1: 1,
                y1: 2
            }
        );
    }
}
