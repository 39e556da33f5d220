//! Normalized Gradient Fields distance and its derivatives.
//!
//! For reference `R`, template `T` and transform `y` the distance is
//!
//! ```text
//! NGF = h²/2 · Σ_i [ 1 − r_i² ],   r_i = ⟨g_i, ∇R(x_i)⟩_ε / (‖g_i‖_ε ‖∇R(x_i)‖_ε)
//! ```
//!
//! with `⟨a, b⟩_ε = aᵀb + ε²` and `‖a‖_ε = √⟨a, a⟩_ε`, summed over the pixel
//! centers `x_i` of `R`. `g_i = Dy(x_i)ᵀ ∇T(y(x_i))` is the gradient of the
//! transformed template `T∘y`, so a rotated template compares gradients in
//! the reference frame. Image gradients are central differences at pixel
//! centers; `∇T` is interpolated bilinearly at the deformed position and is
//! zero outside the template.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat2, Vec2};
use crate::parallel::{reduce_rows, ReductionOrder};
use crate::pyramid::{GradientField, Image};
use crate::transform::{DisplacementGrid, Transform};

/// Unit in which the edge parameter is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeUnits {
    /// Intensity change per pixel of the level being registered; the same
    /// edge sensitivity on every pyramid level.
    #[default]
    PerPixel,
    /// Intensity change per physical unit.
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgfConfig {
    /// Edge parameter ε.
    pub epsilon: f64,
    #[serde(default)]
    pub edge_units: EdgeUnits,
    #[serde(default)]
    pub reduction: ReductionOrder,
}

impl Default for NgfConfig {
    fn default() -> Self {
        NgfConfig {
            epsilon: 0.1,
            edge_units: EdgeUnits::PerPixel,
            reduction: ReductionOrder::Pairwise,
        }
    }
}

impl NgfConfig {
    pub fn new(epsilon: f64) -> Self {
        NgfConfig {
            epsilon,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "NGF epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub value: f64,
    /// Derivative w.r.t. the transform parameters; empty for value-only results.
    pub gradient: Vec<f64>,
    /// Per-pixel normalized inner products `r_i`, row-major over `R`.
    pub residuals: Option<Vec<f64>>,
}

/// Value, gradient and positive semi-definite Gauss-Newton matrix of NGF for
/// a parametric (rigid or affine) transform.
#[derive(Debug, Clone)]
pub struct GaussNewtonModel {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// NGF of `r` vs `t` with precomputed gradient fields, reusable across many
/// transform evaluations.
#[derive(Debug, Clone)]
pub struct NgfObjective<'a> {
    reference: &'a Image,
    grad_r: GradientField,
    grad_t: GradientField,
    cfg: NgfConfig,
}

/// Per-pixel quantities shared by all evaluation modes.
struct PixelTerm {
    /// `1 − r²`
    summand: f64,
    r: f64,
    /// `∂r/∂y` through the template position.
    dr_dy: Vec2,
    /// `∂r/∂Dy`, entry `(a, b)` for `Dy[(a, b)]`.
    dr_dj: Mat2,
}

/// `g_t` and `hess_t` are `∇T` and its spatial Jacobian at `y(x)`, `dy` is `Dy(x)`.
#[inline]
fn pixel_term(g_t: Vec2, hess_t: &Mat2, dy: &Mat2, g_r: Vec2, eps2: f64) -> PixelTerm {
    let g = dy.transpose() * g_t;
    let a = g.dot(&g_r) + eps2;
    let nt2 = g.dot(&g) + eps2;
    let nr2 = g_r.dot(&g_r) + eps2;
    let denom = (nt2 * nr2).sqrt();
    let r = a / denom;
    // ∂r/∂g = (g_R − (a/‖g‖²_ε)·g) / (‖g‖_ε‖g_R‖_ε)
    let v = (g_r - g * (a / nt2)) / denom;
    PixelTerm {
        summand: 1.0 - r * r,
        r,
        dr_dy: hess_t.transpose() * (dy * v),
        dr_dj: g_t * v.transpose(),
    }
}

struct DenseAcc {
    value: f64,
    grad: Vec<f64>,
    hess: Option<DMatrix<f64>>,
}

struct BandAcc {
    value: f64,
    /// First grid row covered by the band.
    row0: usize,
    rows: usize,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl<'a> NgfObjective<'a> {
    pub fn new(reference: &'a Image, template: &Image, cfg: NgfConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NgfObjective {
            reference,
            grad_r: GradientField::new(reference),
            grad_t: GradientField::new(template),
            cfg,
        })
    }

    pub fn reference(&self) -> &Image {
        self.reference
    }

    pub fn config(&self) -> &NgfConfig {
        &self.cfg
    }

    /// Upper bound `h²·N/2` of the distance.
    pub fn upper_bound(&self) -> f64 {
        let h = self.reference.spacing();
        0.5 * h * h * self.reference.len() as f64
    }

    fn check_domain(&self, y: &Transform) -> Result<()> {
        if let Transform::Displacement(g) = y {
            let hull = self.reference.center_hull();
            let d = g.domain();
            let tol = 1e-9 * (d.width() + d.height());
            let corners = [Vec2::new(hull.x0, hull.y0), Vec2::new(hull.x1, hull.y1)];
            if corners.iter().any(|c| !d.contains(*c, tol)) {
                return Err(Error::invalid(format!(
                    "control grid domain {d:?} does not cover the reference pixel centers {hull:?}"
                )));
            }
        }
        let p = y.params();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite transform parameters"));
        }
        Ok(())
    }

    #[inline]
    fn term_at(&self, y: &Transform, row: usize, col: usize, eps2: f64) -> (Vec2, PixelTerm) {
        let w = self.reference.width();
        let x = self.reference.pixel_center(row, col);
        let (g_t, hess_t) = self.grad_t.eval(y.apply(x));
        let g_r = self.grad_r.at_pixel(row * w + col);
        (x, pixel_term(g_t, &hess_t, &y.jacobian(x), g_r, eps2))
    }

    /// ε² in intensity per physical unit, squared.
    fn eps2(&self) -> f64 {
        let e = match self.cfg.edge_units {
            EdgeUnits::PerPixel => self.cfg.epsilon / self.reference.spacing(),
            EdgeUnits::Physical => self.cfg.epsilon,
        };
        e * e
    }

    fn scale(&self) -> f64 {
        let h = self.reference.spacing();
        0.5 * h * h
    }

    pub fn value(&self, y: &Transform) -> Result<f64> {
        self.check_domain(y)?;
        let eps2 = self.eps2();
        let w = self.reference.width();
        let sum = reduce_rows(
            self.reference.height(),
            self.cfg.reduction,
            |_| 0.0,
            |rows, acc| {
                for row in rows {
                    for col in 0..w {
                        *acc += self.term_at(y, row, col, eps2).1.summand;
                    }
                }
            },
            |a, b| a + b,
        );
        Ok(self.scale() * sum)
    }

    /// Per-pixel `r_i`, row-major.
    pub fn residuals(&self, y: &Transform) -> Result<Vec<f64>> {
        self.check_domain(y)?;
        let eps2 = self.eps2();
        let w = self.reference.width();
        let h = self.reference.height();
        let mut out = vec![0.0; w * h];
        use rayon::prelude::*;
        out.par_chunks_mut(w).enumerate().for_each(|(row, dst)| {
            for (col, v) in dst.iter_mut().enumerate() {
                *v = self.term_at(y, row, col, eps2).1.r;
            }
        });
        Ok(out)
    }

    pub fn value_and_gradient(&self, y: &Transform) -> Result<(f64, Vec<f64>)> {
        self.check_domain(y)?;
        match y {
            Transform::Displacement(g) => Ok(self.grid_gradient(g)),
            _ => {
                let acc = self.dense(y, false);
                Ok((acc.value, acc.grad))
            }
        }
    }

    /// Gauss-Newton model for rigid and affine transforms.
    pub fn gauss_newton_model(&self, y: &Transform) -> Result<GaussNewtonModel> {
        self.check_domain(y)?;
        if matches!(y, Transform::Displacement(_)) {
            return Err(Error::invalid(
                "the Gauss-Newton model is only available for rigid and affine transforms",
            ));
        }
        let acc = self.dense(y, true);
        Ok(GaussNewtonModel {
            value: acc.value,
            gradient: acc.grad,
            hessian: acc.hess.expect("requested"),
        })
    }

    fn dense(&self, y: &Transform, with_hessian: bool) -> DenseAcc {
        let n = y.n_params();
        let eps2 = self.eps2();
        let w = self.reference.width();
        let scale = self.scale();
        let dj = y.spatial_jacobian_derivatives();
        let acc = reduce_rows(
            self.reference.height(),
            self.cfg.reduction,
            |_| DenseAcc {
                value: 0.0,
                grad: vec![0.0; n],
                hess: with_hessian.then(|| DMatrix::zeros(n, n)),
            },
            |rows, acc| {
                let mut dr = [0.0; 6];
                for row in rows {
                    for col in 0..w {
                        let (x, t) = self.term_at(y, row, col, eps2);
                        acc.value += t.summand;
                        let pj = y.param_jacobian(x);
                        for (k, c) in pj.columns().iter().enumerate() {
                            dr[k] = t.dr_dy.dot(c) + dj[k].component_mul(&t.dr_dj).sum();
                            // d(1 − r²)/dθ = −2r·∂r/∂θ
                            acc.grad[k] -= 2.0 * t.r * dr[k];
                        }
                        if let Some(hm) = acc.hess.as_mut() {
                            for a in 0..n {
                                for b in a..n {
                                    hm[(a, b)] += 2.0 * dr[a] * dr[b];
                                }
                            }
                        }
                    }
                }
            },
            |mut a, b| {
                a.value += b.value;
                for (x, y) in a.grad.iter_mut().zip(&b.grad) {
                    *x += y;
                }
                if let (Some(ha), Some(hb)) = (a.hess.as_mut(), b.hess.as_ref()) {
                    *ha += hb;
                }
                a
            },
        );
        let mut hess = acc.hess;
        if let Some(h) = hess.as_mut() {
            for a in 0..n {
                for b in 0..a {
                    h[(a, b)] = h[(b, a)];
                }
            }
            *h *= scale;
        }
        DenseAcc {
            value: scale * acc.value,
            grad: acc.grad.into_iter().map(|g| g * scale).collect(),
            hess,
        }
    }

    fn grid_gradient(&self, grid: &DisplacementGrid) -> (f64, Vec<f64>) {
        let eps2 = self.eps2();
        let img = self.reference;
        let w = img.width();
        let m1 = grid.m1();
        let m2 = grid.m2();
        let (_, hy) = grid.spacing();
        let y0 = grid.domain().y0;
        let grid_row = |img_row: usize| -> usize {
            let c = (img.pixel_center(img_row, 0).y - y0) / hy;
            crate::geom::locate_clamped(c, m2).0
        };
        let scale = self.scale();
        let acc = reduce_rows(
            img.height(),
            // bands are merged into the global vector in chunk order below
            ReductionOrder::Pairwise,
            |rows| {
                let lo = grid_row(rows.start);
                let hi = (grid_row(rows.end.max(rows.start + 1) - 1) + 1).min(m2 - 1);
                let n = (hi - lo + 1) * m1;
                vec![BandAcc {
                    value: 0.0,
                    row0: lo,
                    rows: hi - lo + 1,
                    g1: vec![0.0; n],
                    g2: vec![0.0; n],
                }]
            },
            |rows, acc| {
                let band = &mut acc[0];
                let off = band.row0 * m1;
                for row in rows {
                    for col in 0..w {
                        let x = img.pixel_center(row, col);
                        let s = grid.stencil(x);
                        let mut u = Vec2::zeros();
                        for (k, wt) in s.nodes.iter().zip(s.weights) {
                            u.x += wt * grid.u1()[*k];
                            u.y += wt * grid.u2()[*k];
                        }
                        let mut dy = Mat2::identity();
                        for (k, dw) in s.nodes.iter().zip(s.dweights) {
                            let (a, b) = (grid.u1()[*k], grid.u2()[*k]);
                            dy[(0, 0)] += dw[0] * a;
                            dy[(0, 1)] += dw[1] * a;
                            dy[(1, 0)] += dw[0] * b;
                            dy[(1, 1)] += dw[1] * b;
                        }
                        let (g_t, hess_t) = self.grad_t.eval(x + u);
                        let t = pixel_term(g_t, &hess_t, &dy, self.grad_r.at_pixel(row * w + col), eps2);
                        band.value += t.summand;
                        let c = -2.0 * t.r;
                        // ∂r/∂u_{n,a} = w_n·(∂r/∂y)_a + Σ_b (∂r/∂Dy)_{ab}·∂_b w_n
                        for ((k, wt), dw) in s.nodes.iter().zip(s.weights).zip(s.dweights) {
                            let local = k - off;
                            let j1 = t.dr_dj[(0, 0)] * dw[0] + t.dr_dj[(0, 1)] * dw[1];
                            let j2 = t.dr_dj[(1, 0)] * dw[0] + t.dr_dj[(1, 1)] * dw[1];
                            band.g1[local] += c * (wt * t.dr_dy.x + j1);
                            band.g2[local] += c * (wt * t.dr_dy.y + j2);
                        }
                    }
                }
            },
            |mut a, mut b| {
                a.append(&mut b);
                a
            },
        );
        let n = m1 * m2;
        let mut grad = vec![0.0; 2 * n];
        let mut value = 0.0;
        for band in acc {
            value += band.value;
            let off = band.row0 * m1;
            for k in 0..band.rows * m1 {
                grad[off + k] += band.g1[k];
                grad[n + off + k] += band.g2[k];
            }
        }
        for g in grad.iter_mut() {
            *g *= scale;
        }
        (scale * value, grad)
    }
}

/// NGF distance value of `t ∘ y` against `r`.
pub fn ngf_value(r: &Image, t: &Image, y: &Transform, cfg: &NgfConfig) -> Result<DistanceResult> {
    let obj = NgfObjective::new(r, t, *cfg)?;
    Ok(DistanceResult {
        value: obj.value(y)?,
        gradient: Vec::new(),
        residuals: None,
    })
}

/// NGF value, parameter gradient and per-pixel residuals.
pub fn ngf_grad(r: &Image, t: &Image, y: &Transform, cfg: &NgfConfig) -> Result<DistanceResult> {
    let obj = NgfObjective::new(r, t, *cfg)?;
    let (value, gradient) = obj.value_and_gradient(y)?;
    Ok(DistanceResult {
        value,
        gradient,
        residuals: Some(obj.residuals(y)?),
    })
}
