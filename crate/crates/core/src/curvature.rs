//! Curvature regularizer on control-grid displacements.
//!
//! `CURV(u) = hx·hy/2 · Σ_nodes |Δu1|² + |Δu2|²` with the 5-point Laplacian
//! and zero-flux (Neumann) boundaries: a ghost node beyond the edge takes the
//! value of the edge node it mirrors, so the one-sided second difference at
//! an edge is `(u_1 − u_0)/h²`. The discrete operator is symmetric, which
//! makes the gradient `hx·hy · Δ(Δu)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::DisplacementGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvConfig {
    pub alpha: f64,
}

impl Default for CurvConfig {
    fn default() -> Self {
        CurvConfig { alpha: 0.1 }
    }
}

impl CurvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "regularization weight must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn check(g: &DisplacementGrid) -> Result<()> {
    if g.m1() < 3 || g.m2() < 3 {
        return Err(Error::invalid(format!(
            "curvature needs at least 3x3 nodes, got {}x{}",
            g.m1(),
            g.m2()
        )));
    }
    Ok(())
}

/// Applies the Neumann 5-point Laplacian to one row-major component.
pub(crate) fn laplacian(u: &[f64], m1: usize, m2: usize, hx: f64, hy: f64) -> Vec<f64> {
    let (ix2, iy2) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let mut out = vec![0.0; u.len()];
    out.par_chunks_mut(m1).enumerate().for_each(|(i, dst)| {
        let up = if i == 0 { i } else { i - 1 };
        let down = if i + 1 == m2 { i } else { i + 1 };
        for (j, o) in dst.iter_mut().enumerate() {
            let left = if j == 0 { j } else { j - 1 };
            let right = if j + 1 == m1 { j } else { j + 1 };
            let c = u[i * m1 + j];
            let dxx = u[i * m1 + left] - 2.0 * c + u[i * m1 + right];
            let dyy = u[up * m1 + j] - 2.0 * c + u[down * m1 + j];
            *o = dxx * ix2 + dyy * iy2;
        }
    });
    out
}

/// Regularizer energy of `g`.
pub fn curv_value(g: &DisplacementGrid) -> Result<f64> {
    check(g)?;
    let (hx, hy) = g.spacing();
    let sq = |u: &[f64]| -> f64 {
        let l = laplacian(u, g.m1(), g.m2(), hx, hy);
        crate::parallel::pairwise_sum(&l.iter().map(|v| v * v).collect::<Vec<_>>())
    };
    Ok(0.5 * hx * hy * (sq(g.u1()) + sq(g.u2())))
}

/// Gradient of [`curv_value`] w.r.t. the node displacements (`u1` block, then `u2`).
pub fn curv_grad(g: &DisplacementGrid) -> Result<Vec<f64>> {
    Ok(curv_value_and_grad(g)?.1)
}

pub fn curv_value_and_grad(g: &DisplacementGrid) -> Result<(f64, Vec<f64>)> {
    check(g)?;
    let (m1, m2) = (g.m1(), g.m2());
    let (hx, hy) = g.spacing();
    let w = hx * hy;
    let mut grad = Vec::with_capacity(2 * m1 * m2);
    let mut value = 0.0;
    for u in [g.u1(), g.u2()] {
        let l = laplacian(u, m1, m2, hx, hy);
        value += crate::parallel::pairwise_sum(&l.iter().map(|v| v * v).collect::<Vec<_>>());
        grad.extend(laplacian(&l, m1, m2, hx, hy).into_iter().map(|v| w * v));
    }
    Ok((0.5 * w * value, grad))
}
