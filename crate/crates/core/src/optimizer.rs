//! Smooth unconstrained minimization: damped Gauss-Newton for the small
//! rigid/affine problems and limited-memory BFGS for displacement grids.
//! Both use the same Armijo backtracking and stopping rules.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sufficient-decrease constant of the Armijo condition.
pub const ARMIJO_C: f64 = 1e-4;
/// Smallest step length tried before the line search gives up.
pub const MIN_STEP: f64 = 1.0 / (1u32 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRules {
    pub max_iterations: usize,
    /// Stop when `‖g‖ ≤ grad_tol · ‖g₀‖`.
    pub grad_tol: f64,
    /// Relative parameter change; must hold together with `obj_tol`.
    pub step_tol: f64,
    /// Relative objective decrease; must hold together with `step_tol`.
    pub obj_tol: f64,
}

impl Default for StopRules {
    fn default() -> Self {
        StopRules {
            max_iterations: 50,
            grad_tol: 1e-3,
            step_tol: 1e-5,
            obj_tol: 1e-6,
        }
    }
}

impl StopRules {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        for (name, v) in [
            ("grad_tol", self.grad_tol),
            ("step_tol", self.step_tol),
            ("obj_tol", self.obj_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    /// Both the step and the objective decrease fell below their tolerances.
    SmallStep,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub objective: f64,
    pub grad_norm: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub initial_objective: f64,
    pub initial_grad_norm: f64,
    pub iterations: Vec<IterRecord>,
    pub termination: Termination,
    /// Objective evaluations, including line-search trials.
    pub evaluations: usize,
}

impl OptTrace {
    pub fn final_objective(&self) -> f64 {
        self.iterations.last().map_or(self.initial_objective, |r| r.objective)
    }

    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    /// Objective values starting with the initial one.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|r| r.objective))
            .collect()
    }
}

/// A smooth function of a flat parameter vector.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Local quadratic model `f + gᵀd + ½dᵀHd` with a positive semi-definite `H`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Objectives with residual structure, i.e. a Gauss-Newton model.
pub trait GaussNewtonObjective: Objective {
    fn model(&self, x: &[f64]) -> Result<QuadraticModel>;
}

/// `½‖r(x)‖²` for a residual function returning `(r, ∂r/∂x)`.
pub struct LeastSquares<F> {
    residuals: F,
}

impl<F> LeastSquares<F>
where
    F: Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    pub fn new(residuals: F) -> Self {
        LeastSquares { residuals }
    }
}

impl<F> Objective for LeastSquares<F>
where
    F: Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(0.5 * (self.residuals)(x).0.norm_squared())
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (r, j) = (self.residuals)(x);
        Ok((0.5 * r.norm_squared(), (j.transpose() * &r).as_slice().to_vec()))
    }
}

impl<F> GaussNewtonObjective for LeastSquares<F>
where
    F: Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    fn model(&self, x: &[f64]) -> Result<QuadraticModel> {
        let (r, j) = (self.residuals)(x);
        Ok(QuadraticModel {
            value: 0.5 * r.norm_squared(),
            gradient: (j.transpose() * &r).as_slice().to_vec(),
            hessian: j.transpose() * &j,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

struct LineSearchOutcome {
    x: Vec<f64>,
    value: f64,
    step: f64,
}

/// Armijo backtracking from step length `t0`, halving down to [`MIN_STEP`]·t0.
fn armijo(
    obj: &impl Objective,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    t0: f64,
    evals: &mut usize,
) -> Result<Option<LineSearchOutcome>> {
    let slope = dot(g, d);
    let mut t = t0;
    while t >= MIN_STEP * t0 {
        let trial = axpy(x, t, d);
        *evals += 1;
        let ft = obj.value(&trial)?;
        if ft.is_finite() && ft <= f + ARMIJO_C * t * slope {
            return Ok(Some(LineSearchOutcome {
                x: trial,
                value: ft,
                step: t,
            }));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// True when the best predicted decrease is lost in rounding noise, i.e. the
/// point is already numerically stationary.
fn at_rounding_floor(f: f64, g: &[f64], d: &[f64], t0: f64) -> bool {
    (t0 * dot(g, d)).abs() <= 1e-9 * f.abs().max(f64::MIN_POSITIVE)
}

fn small_step(rules: &StopRules, x_old: &[f64], x_new: &[f64], f_old: f64, f_new: f64) -> bool {
    let dx: f64 = x_old
        .iter()
        .zip(x_new)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let step_ok = dx <= rules.step_tol * norm(x_old).max(1.0);
    let obj_ok = (f_old - f_new) <= rules.obj_tol * f_old.abs().max(f64::MIN_POSITIVE);
    step_ok && obj_ok
}

/// Solves `(H + λI) d = −g` with `λ = 1e-8·trace(H)/n`, increasing the damping
/// when the factorization fails and falling back to steepest descent.
fn gauss_newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let rhs = -DVector::from_column_slice(g);
    let trace = h.trace();
    let mut lambda = if trace > 0.0 { 1e-8 * trace / n as f64 } else { 1e-12 };
    for _ in 0..12 {
        let damped = h + DMatrix::identity(n, n) * lambda;
        if let Some(chol) = damped.cholesky() {
            let d = chol.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) && d.dot(&rhs) > 0.0 {
                return d.as_slice().to_vec();
            }
        }
        lambda *= 100.0;
    }
    rhs.as_slice().to_vec()
}

/// Damped Gauss-Newton with Armijo backtracking.
pub fn gauss_newton(obj: &impl GaussNewtonObjective, x0: &[f64], rules: &StopRules) -> Result<(Vec<f64>, OptTrace)> {
    rules.validate()?;
    let mut x = x0.to_vec();
    let mut model = obj.model(&x)?;
    let mut evals = 1;
    if !model.value.is_finite() {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let g0 = norm(&model.gradient);
    let mut trace = OptTrace {
        initial_objective: model.value,
        initial_grad_norm: g0,
        iterations: Vec::new(),
        termination: Termination::MaxIterations,
        evaluations: 0,
    };
    loop {
        let gn = norm(&model.gradient);
        if gn == 0.0 || (!trace.iterations.is_empty() && gn <= rules.grad_tol * g0) {
            trace.termination = Termination::GradTol;
            break;
        }
        if trace.iterations.len() >= rules.max_iterations {
            trace.termination = Termination::MaxIterations;
            break;
        }
        let d = gauss_newton_direction(&model.hessian, &model.gradient);
        let Some(ls) = armijo(obj, &x, model.value, &model.gradient, &d, 1.0, &mut evals)? else {
            trace.termination = if at_rounding_floor(model.value, &model.gradient, &d, 1.0) {
                Termination::SmallStep
            } else {
                Termination::LineSearchFailed
            };
            break;
        };
        let f_old = model.value;
        let x_old = std::mem::replace(&mut x, ls.x);
        model = obj.model(&x)?;
        evals += 1;
        let step_len = ls.step * norm(&d);
        trace.iterations.push(IterRecord {
            objective: ls.value,
            grad_norm: norm(&model.gradient),
            step_length: step_len,
        });
        if small_step(rules, &x_old, &x, f_old, ls.value) {
            trace.termination = Termination::SmallStep;
            break;
        }
    }
    trace.evaluations = evals;
    Ok((x, trace))
}

/// Limited-memory BFGS (two-loop recursion) with Armijo backtracking.
/// Curvature pairs with `sᵀy ≤ 1e-10·‖s‖‖y‖` are skipped.
pub fn lbfgs(obj: &impl Objective, x0: &[f64], memory: usize, rules: &StopRules) -> Result<(Vec<f64>, OptTrace)> {
    rules.validate()?;
    if memory < 1 {
        return Err(Error::invalid("L-BFGS memory must be at least 1"));
    }
    let mut x = x0.to_vec();
    let (mut f, mut g) = obj.value_and_gradient(&x)?;
    let mut evals = 1;
    if !f.is_finite() {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let g0 = norm(&g);
    let mut trace = OptTrace {
        initial_objective: f,
        initial_grad_norm: g0,
        iterations: Vec::new(),
        termination: Termination::MaxIterations,
        evaluations: 0,
    };
    // (s, y, 1/sᵀy)
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    loop {
        let gn = norm(&g);
        if gn == 0.0 || (!trace.iterations.is_empty() && gn <= rules.grad_tol * g0) {
            trace.termination = Termination::GradTol;
            break;
        }
        if trace.iterations.len() >= rules.max_iterations {
            trace.termination = Termination::MaxIterations;
            break;
        }
        let mut d = two_loop(&g, &history);
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
        }
        debug_assert!(dot(&d, &g) < 0.0, "L-BFGS direction must descend");
        let t0 = if history.is_empty() { (1.0 / gn).min(1.0) } else { 1.0 };
        let Some(ls) = armijo(obj, &x, f, &g, &d, t0, &mut evals)? else {
            trace.termination = if at_rounding_floor(f, &g, &d, t0) {
                Termination::SmallStep
            } else {
                Termination::LineSearchFailed
            };
            break;
        };
        let (f_new, g_new) = obj.value_and_gradient(&ls.x)?;
        evals += 1;
        let s: Vec<f64> = ls.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 * norm(&s) * norm(&yv) {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s.clone(), yv, 1.0 / sy));
        }
        let x_old = std::mem::replace(&mut x, ls.x);
        let f_old = f;
        f = f_new;
        g = g_new;
        trace.iterations.push(IterRecord {
            objective: f,
            grad_norm: norm(&g),
            step_length: norm(&s),
        });
        if small_step(rules, &x_old, &x, f_old, f) {
            trace.termination = Termination::SmallStep;
            break;
        }
    }
    trace.evaluations = evals;
    Ok((x, trace))
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
