//! Small geometric vocabulary shared by the image, transform and metric code.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// A 2D point or vector in physical coordinates (x along columns, y along rows).
pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        p.x >= self.x0 - tol && p.x <= self.x1 + tol && p.y >= self.y0 - tol && p.y <= self.y1 + tol
    }

    pub fn is_finite(&self) -> bool {
        self.x0.is_finite() && self.y0.is_finite() && self.x1.is_finite() && self.y1.is_finite()
    }
}

/// Locates continuous index `c` on a 1D lattice of `n` nodes.
///
/// Returns the lower node and the fractional offset towards the next node, or
/// `None` when `c` lies outside `[0, n-1]` by more than rounding error. The last cell is closed on the
/// right so `c == n-1` maps to `(n-2, 1.0)`.
#[inline]
pub(crate) fn locate(c: f64, n: usize) -> Option<(usize, f64)> {
    // pixel centers computed as origin + k·h may land a rounding error outside
    let tol = LOCATE_TOL * n as f64;
    let hi = n as f64 - 1.0;
    if n == 0 || !(c >= -tol) || c > hi + tol {
        return None;
    }
    if n == 1 {
        return Some((0, 0.0));
    }
    let c = c.clamp(0.0, hi);
    let i = (c.floor() as usize).min(n - 2);
    Some((i, c - i as f64))
}

/// Relative index tolerance of [`locate`].
const LOCATE_TOL: f64 = 1e-12;

/// Like [`locate`] but clamps out-of-range indices onto the lattice.
#[inline]
pub(crate) fn locate_clamped(c: f64, n: usize) -> (usize, f64, bool) {
    let hi = (n - 1) as f64;
    let tol = LOCATE_TOL * n as f64;
    let inside = c >= -tol && c <= hi + tol;
    let cc = c.clamp(0.0, hi);
    if n == 1 {
        return (0, 0.0, inside);
    }
    let i = (cc.floor() as usize).min(n - 2);
    (i, cc - i as f64, inside)
}

pub(crate) fn finite2(p: Vec2) -> bool {
    p.x.is_finite() && p.y.is_finite()
}
