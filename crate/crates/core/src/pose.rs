use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Planar rover pose. `heading` is in radians, counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn from_degrees(x: f64, y: f64, heading_deg: f64) -> Self {
        Self::new(x, y, heading_deg.to_radians())
    }

    pub fn heading_deg(&self) -> f64 {
        self.heading.to_degrees()
    }

    /// Body-frame point (forward, left) expressed in the world frame.
    #[inline]
    pub fn to_world(&self, bx: f64, by: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.x + c * bx - s * by, self.y + s * bx + c * by)
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Wrap an angle in radians to `(-pi, pi]`.
pub fn wrap_pi(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Wrap an angle in degrees to `[0, 360)`.
pub fn wrap_deg_360(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping() {
        assert!((wrap_pi(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_pi(-PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_deg_360(-45.0), 315.0);
        assert_eq!(wrap_deg_360(720.0), 0.0);
    }

    #[test]
    fn body_to_world_rotation() {
        let p = Pose::from_degrees(1.0, 2.0, 90.0);
        let (x, y) = p.to_world(1.0, 0.0);
        assert!((x - 1.0).abs() < 1e-12 && (y - 3.0).abs() < 1e-12);
    }
}
