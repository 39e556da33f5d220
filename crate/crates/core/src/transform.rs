//! Rigid, affine and control-grid displacement transforms.
//!
//! All transforms map reference coordinates to template coordinates, in
//! physical units. Parameter vectors use a fixed layout per kind:
//!
//! * rigid: `[phi, t1, t2]`
//! * affine: `[a11, a12, a21, a22, b1, b2]`
//! * displacement grid: all `u1` node values (row-major), then all `u2`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{finite2, locate_clamped, Mat2, Rect, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidParams {
    pub phi: f64,
    pub t1: f64,
    pub t2: f64,
}

impl RigidParams {
    pub fn new(phi: f64, t1: f64, t2: f64) -> Self {
        RigidParams { phi, t1, t2 }
    }

    /// `Rot(phi)·x + t`, rotating about the physical origin.
    pub fn apply(&self, x: Vec2) -> Vec2 {
        self.rotation() * x + Vec2::new(self.t1, self.t2)
    }

    pub fn rotation(&self) -> Mat2 {
        let (s, c) = self.phi.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn to_affine(&self) -> AffineParams {
        let r = self.rotation();
        AffineParams {
            a11: r[(0, 0)],
            a12: r[(0, 1)],
            a21: r[(1, 0)],
            a22: r[(1, 1)],
            b1: self.t1,
            b2: self.t2,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.phi, self.t1, self.t2]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        RigidParams::new(p[0], p[1], p[2])
    }

    /// Angle wrapped into `(-pi, pi]`.
    pub fn wrapped(&self) -> Self {
        RigidParams {
            phi: wrap_angle(self.phi),
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.t1.is_finite() && self.t2.is_finite()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(phi: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = phi.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            a11: 1.0,
            a12: 0.0,
            a21: 0.0,
            a22: 1.0,
            b1: 0.0,
            b2: 0.0,
        }
    }

    pub fn from_matrix(a: Mat2, b: Vec2) -> Self {
        AffineParams {
            a11: a[(0, 0)],
            a12: a[(0, 1)],
            a21: a[(1, 0)],
            a22: a[(1, 1)],
            b1: b.x,
            b2: b.y,
        }
    }

    pub fn matrix(&self) -> Mat2 {
        Mat2::new(self.a11, self.a12, self.a21, self.a22)
    }

    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.b1, self.b2)
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    /// `A·x + b`.
    pub fn apply(&self, x: Vec2) -> Vec2 {
        Vec2::new(
            self.a11 * x.x + self.a12 * x.y + self.b1,
            self.a21 * x.x + self.a22 * x.y + self.b2,
        )
    }

    pub fn inverse(&self) -> Option<AffineParams> {
        let inv = self.matrix().try_inverse()?;
        Some(AffineParams::from_matrix(inv, -(inv * self.translation())))
    }

    /// `self ∘ inner`, i.e. `x -> self(inner(x))`.
    pub fn compose(&self, inner: &AffineParams) -> AffineParams {
        AffineParams::from_matrix(
            self.matrix() * inner.matrix(),
            self.matrix() * inner.translation() + self.translation(),
        )
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.a11, self.a12, self.a21, self.a22, self.b1, self.b2]
    }

    pub fn from_slice(p: &[f64]) -> Self {
        AffineParams {
            a11: p[0],
            a12: p[1],
            a21: p[2],
            a22: p[3],
            b1: p[4],
            b2: p[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Node count and physical extent of a control grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    /// Nodes along x (columns).
    pub m1: usize,
    /// Nodes along y (rows).
    pub m2: usize,
    pub domain: Rect,
}

impl GridShape {
    pub fn new(m1: usize, m2: usize, domain: Rect) -> Result<Self> {
        if m1 < 2 || m2 < 2 {
            return Err(Error::invalid(format!(
                "control grid must be at least 2x2, got {m1}x{m2}"
            )));
        }
        if !domain.is_finite() || !(domain.width() > 0.0) || !(domain.height() > 0.0) {
            return Err(Error::invalid(format!("degenerate grid domain {domain:?}")));
        }
        Ok(GridShape { m1, m2, domain })
    }

    /// Node spacing `(hx, hy)`.
    pub fn spacing(&self) -> (f64, f64) {
        (
            self.domain.width() / (self.m1 - 1) as f64,
            self.domain.height() / (self.m2 - 1) as f64,
        )
    }

    pub fn node_count(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn node_position(&self, row: usize, col: usize) -> Vec2 {
        let (hx, hy) = self.spacing();
        Vec2::new(self.domain.x0 + col as f64 * hx, self.domain.y0 + row as f64 * hy)
    }
}

/// Bilinear interpolation weights of a point on a control grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeStencil {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
    /// `∂u/∂x` factors: derivative of each weight w.r.t. x and y.
    pub dweights: [[f64; 2]; 4],
}

/// Displacement `u` stored on an `m1 × m2` control grid, interpolated
/// bilinearly between nodes and held constant beyond the grid edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementGrid {
    shape: GridShape,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl DisplacementGrid {
    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.node_count();
        DisplacementGrid {
            shape,
            u1: vec![0.0; n],
            u2: vec![0.0; n],
        }
    }

    pub fn from_parts(shape: GridShape, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        let n = shape.node_count();
        if u1.len() != n || u2.len() != n {
            return Err(Error::invalid(format!(
                "grid {}x{} needs {n} values per component, got {} and {}",
                shape.m1,
                shape.m2,
                u1.len(),
                u2.len()
            )));
        }
        if u1.iter().chain(&u2).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite displacement"));
        }
        Ok(DisplacementGrid { shape, u1, u2 })
    }

    /// Samples the displacement of an affine map at every node.
    pub fn from_affine(affine: &AffineParams, shape: GridShape) -> Self {
        let mut g = DisplacementGrid::zeros(shape);
        for row in 0..shape.m2 {
            for col in 0..shape.m1 {
                let x = shape.node_position(row, col);
                let d = affine.apply(x) - x;
                let k = row * shape.m1 + col;
                g.u1[k] = d.x;
                g.u2[k] = d.y;
            }
        }
        g
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn m1(&self) -> usize {
        self.shape.m1
    }

    pub fn m2(&self) -> usize {
        self.shape.m2
    }

    pub fn domain(&self) -> Rect {
        self.shape.domain
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.shape.spacing()
    }

    pub fn u1(&self) -> &[f64] {
        &self.u1
    }

    pub fn u2(&self) -> &[f64] {
        &self.u2
    }

    pub fn node(&self, row: usize, col: usize) -> Vec2 {
        let k = row * self.shape.m1 + col;
        Vec2::new(self.u1[k], self.u2[k])
    }

    pub fn set_node(&mut self, row: usize, col: usize, d: Vec2) {
        let k = row * self.shape.m1 + col;
        self.u1[k] = d.x;
        self.u2[k] = d.y;
    }

    pub fn n_params(&self) -> usize {
        2 * self.shape.node_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.u1);
        p.extend_from_slice(&self.u2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.shape.node_count();
        assert_eq!(p.len(), 2 * n, "parameter vector length");
        self.u1.copy_from_slice(&p[..n]);
        self.u2.copy_from_slice(&p[n..]);
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        let mut g = self.clone();
        g.set_params(p);
        g
    }

    pub(crate) fn stencil(&self, x: Vec2) -> NodeStencil {
        let (hx, hy) = self.shape.spacing();
        let d = &self.shape.domain;
        let (j, fx, in_x) = locate_clamped((x.x - d.x0) / hx, self.shape.m1);
        let (i, fy, in_y) = locate_clamped((x.y - d.y0) / hy, self.shape.m2);
        let m1 = self.shape.m1;
        let nodes = [i * m1 + j, i * m1 + j + 1, (i + 1) * m1 + j, (i + 1) * m1 + j + 1];
        let weights = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let sx = if in_x { 1.0 / hx } else { 0.0 };
        let sy = if in_y { 1.0 / hy } else { 0.0 };
        let dweights = [
            [-(1.0 - fy) * sx, -(1.0 - fx) * sy],
            [(1.0 - fy) * sx, -fx * sy],
            [-fy * sx, (1.0 - fx) * sy],
            [fy * sx, fx * sy],
        ];
        NodeStencil {
            nodes,
            weights,
            dweights,
        }
    }

    /// Interpolated displacement `u(x)`.
    pub fn displacement(&self, x: Vec2) -> Vec2 {
        let s = self.stencil(x);
        let mut u = Vec2::zeros();
        for (k, w) in s.nodes.iter().zip(s.weights) {
            u.x += w * self.u1[*k];
            u.y += w * self.u2[*k];
        }
        u
    }

    /// `x + u(x)`.
    pub fn apply(&self, x: Vec2) -> Vec2 {
        x + self.displacement(x)
    }

    /// Spatial Jacobian `I + ∂u/∂x` of the deformation at `x`.
    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        let s = self.stencil(x);
        let mut j = Mat2::identity();
        for (k, dw) in s.nodes.iter().zip(s.dweights) {
            j[(0, 0)] += dw[0] * self.u1[*k];
            j[(0, 1)] += dw[1] * self.u1[*k];
            j[(1, 0)] += dw[0] * self.u2[*k];
            j[(1, 1)] += dw[1] * self.u2[*k];
        }
        j
    }

    /// Bilinear resampling onto a grid with a different node count over the same domain.
    pub fn resample(&self, m1: usize, m2: usize) -> Result<Self> {
        let shape = GridShape::new(m1, m2, self.shape.domain)?;
        let mut g = DisplacementGrid::zeros(shape);
        for row in 0..m2 {
            for col in 0..m1 {
                g.set_node(row, col, self.displacement(shape.node_position(row, col)));
            }
        }
        Ok(g)
    }

    pub fn max_displacement(&self) -> f64 {
        self.u1
            .iter()
            .zip(&self.u2)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

const GRID_MAGIC: &[u8; 8] = b"HRDGRID1";

impl DisplacementGrid {
    /// Binary layout (little endian): magic `HRDGRID1`, `m1: u64`, `m2: u64`,
    /// domain `x0 y0 x1 y1` as f64, node spacing `hx hy` as f64, then the
    /// `u1` values and the `u2` values, each row-major.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&(self.shape.m1 as u64).to_le_bytes())?;
        w.write_all(&(self.shape.m2 as u64).to_le_bytes())?;
        let d = self.shape.domain;
        let (hx, hy) = self.spacing();
        for v in [d.x0, d.y0, d.x1, d.y1, hx, hy] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.u1.iter().chain(&self.u2) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("displacement grid file: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != GRID_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
            Ok(u64::from_le_bytes(b8))
        };
        let m1 = read_u64(r)? as usize;
        let m2 = read_u64(r)? as usize;
        let read_f64s = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let head = read_f64s(r, 6)?;
        if m1.checked_mul(m2).is_none_or(|n| n > (1 << 32)) {
            return Err(bad("implausible node count"));
        }
        let shape = GridShape::new(m1, m2, Rect::new(head[0], head[1], head[2], head[3]))?;
        let (hx, hy) = shape.spacing();
        if (hx - head[4]).abs() > 1e-9 * hx.abs().max(1.0) || (hy - head[5]).abs() > 1e-9 * hy.abs().max(1.0) {
            return Err(bad("spacing does not match domain and node count"));
        }
        let n = m1 * m2;
        let u1 = read_f64s(r, n)?;
        let u2 = read_f64s(r, n)?;
        DisplacementGrid::from_parts(shape, u1, u2)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_binary(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        DisplacementGrid::read_binary(&mut BufReader::new(f))
    }

    /// Plain-text dump: a header, then one `row col x y u1 u2` line per node.
    pub fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        let d = self.shape.domain;
        writeln!(w, "# displacement grid")?;
        writeln!(w, "m1 {} m2 {}", self.shape.m1, self.shape.m2)?;
        writeln!(w, "domain {} {} {} {}", d.x0, d.y0, d.x1, d.y1)?;
        for row in 0..self.shape.m2 {
            for col in 0..self.shape.m1 {
                let x = self.shape.node_position(row, col);
                let u = self.node(row, col);
                writeln!(w, "{row} {col} {} {} {} {}", x.x, x.y, u.x, u.y)?;
            }
        }
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::invalid(format!("grid text line {line}: {m}"));
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(s) => !s.starts_with('#') && !s.trim().is_empty(),
            Err(_) => true,
        });
        let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
            let (i, l) = lines.next().ok_or_else(|| bad(0, &format!("missing {what}")))?;
            let l = l.map_err(|e| bad(i + 1, &e.to_string()))?;
            Ok((i + 1, l.split_whitespace().map(str::to_owned).collect()))
        };
        let num = |line: usize, s: &str| s.parse::<f64>().map_err(|_| bad(line, &format!("bad number {s:?}")));
        let (ln, head) = next("size line")?;
        if head.len() != 4 {
            return Err(bad(ln, "expected `m1 <n> m2 <n>`"));
        }
        let m1 = num(ln, &head[1])? as usize;
        let m2 = num(ln, &head[3])? as usize;
        let (ln, dom) = next("domain line")?;
        if dom.len() != 5 {
            return Err(bad(ln, "expected `domain x0 y0 x1 y1`"));
        }
        let shape = GridShape::new(
            m1,
            m2,
            Rect::new(
                num(ln, &dom[1])?,
                num(ln, &dom[2])?,
                num(ln, &dom[3])?,
                num(ln, &dom[4])?,
            ),
        )?;
        let mut g = DisplacementGrid::zeros(shape);
        for _ in 0..shape.node_count() {
            let (ln, f) = next("node line")?;
            if f.len() != 6 {
                return Err(bad(ln, "expected `row col x y u1 u2`"));
            }
            let (row, col) = (num(ln, &f[0])? as usize, num(ln, &f[1])? as usize);
            if row >= m2 || col >= m1 {
                return Err(bad(ln, "node index out of range"));
            }
            g.set_node(row, col, Vec2::new(num(ln, &f[4])?, num(ln, &f[5])?));
        }
        Ok(g)
    }
}

/// Any transform the pipeline produces.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Rigid(RigidParams),
    Affine(AffineParams),
    Displacement(DisplacementGrid),
}

impl Transform {
    pub fn identity_affine() -> Self {
        Transform::Affine(AffineParams::identity())
    }

    pub fn apply(&self, x: Vec2) -> Vec2 {
        match self {
            Transform::Rigid(p) => p.apply(x),
            Transform::Affine(p) => p.apply(x),
            Transform::Displacement(g) => g.apply(x),
        }
    }

    /// Like [`Transform::apply`] but rejects non-finite points.
    pub fn try_apply(&self, x: Vec2) -> Result<Vec2> {
        if !finite2(x) {
            return Err(Error::invalid("non-finite point"));
        }
        Ok(self.apply(x))
    }

    /// Spatial Jacobian `∂y/∂x`.
    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        match self {
            Transform::Rigid(p) => p.rotation(),
            Transform::Affine(p) => p.matrix(),
            Transform::Displacement(g) => g.jacobian(x),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Transform::Rigid(_) => 3,
            Transform::Affine(_) => 6,
            Transform::Displacement(g) => g.n_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Transform::Rigid(p) => p.to_vec(),
            Transform::Affine(p) => p.to_vec(),
            Transform::Displacement(g) => g.params(),
        }
    }

    /// Same kind and shape, new parameter vector.
    pub fn with_params(&self, p: &[f64]) -> Transform {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        match self {
            Transform::Rigid(_) => Transform::Rigid(RigidParams::from_slice(p)),
            Transform::Affine(_) => Transform::Affine(AffineParams::from_slice(p)),
            Transform::Displacement(g) => Transform::Displacement(g.with_params(p)),
        }
    }

    /// Non-zero entries of `∂y/∂θ` at `x` for the parametric kinds, as
    /// `(parameter index, derivative of y)` pairs.
    pub(crate) fn param_jacobian(&self, x: Vec2) -> ParamJacobian {
        match self {
            Transform::Rigid(p) => {
                let (s, c) = p.phi.sin_cos();
                let dphi = Vec2::new(-s * x.x - c * x.y, c * x.x - s * x.y);
                ParamJacobian::Dense3([dphi, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)])
            }
            Transform::Affine(_) => ParamJacobian::Dense6([
                Vec2::new(x.x, 0.0),
                Vec2::new(x.y, 0.0),
                Vec2::new(0.0, x.x),
                Vec2::new(0.0, x.y),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.0, 1.0),
            ]),
            Transform::Displacement(_) => ParamJacobian::Grid,
        }
    }

    /// `∂Dy/∂θ_k` for the parametric kinds (constant in `x`); empty for grids.
    pub(crate) fn spatial_jacobian_derivatives(&self) -> Vec<Mat2> {
        match self {
            Transform::Rigid(p) => {
                let (s, c) = p.phi.sin_cos();
                vec![Mat2::new(-s, -c, c, -s), Mat2::zeros(), Mat2::zeros()]
            }
            Transform::Affine(_) => {
                let mut out = vec![Mat2::zeros(); 6];
                for (k, m) in out.iter_mut().take(4).enumerate() {
                    m[(k / 2, k % 2)] = 1.0;
                }
                out
            }
            Transform::Displacement(_) => Vec::new(),
        }
    }

    /// Re-expresses the transform in the next stage's parameterization:
    /// rigid becomes affine, affine becomes a grid of shape `target`, and a
    /// grid is resampled onto `target`'s node count.
    pub fn embed(&self, target: &GridShape) -> Result<Transform> {
        if target.m1 < 2 || target.m2 < 2 {
            return Err(Error::invalid(format!(
                "embedding target grid must be at least 2x2, got {}x{}",
                target.m1, target.m2
            )));
        }
        Ok(match self {
            Transform::Rigid(p) => Transform::Affine(p.to_affine()),
            Transform::Affine(a) => Transform::Displacement(DisplacementGrid::from_affine(a, *target)),
            Transform::Displacement(g) => Transform::Displacement(g.resample(target.m1, target.m2)?),
        })
    }
}

pub(crate) enum ParamJacobian {
    Dense3([Vec2; 3]),
    Dense6([Vec2; 6]),
    Grid,
}

impl ParamJacobian {
    pub fn columns(&self) -> &[Vec2] {
        match self {
            ParamJacobian::Dense3(c) => c,
            ParamJacobian::Dense6(c) => c,
            ParamJacobian::Grid => &[],
        }
    }
}
