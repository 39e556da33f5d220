//! Three-stage registration: automatic rotation alignment, multilevel affine
//! registration and multilevel curvature-regularized deformable registration,
//! all driven by the NGF distance.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{curv_value, curv_value_and_grad, CurvConfig};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::ngf::{EdgeUnits, NgfConfig, NgfObjective};
use crate::optimizer::{self, GaussNewtonObjective, Objective, OptTrace, QuadraticModel, StopRules, Termination};
use crate::parallel::ReductionOrder;
use crate::pyramid::{to_gray_inverted, Image, Pyramid, Raster};
use crate::transform::{wrap_angle, AffineParams, DisplacementGrid, GridShape, RigidParams, Transform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Rotation candidates tried by the pre-alignment.
    pub n_rotations: usize,
    /// Pyramid levels used by the pre-alignment.
    pub prealign_levels: usize,
    /// Finest resolution of the pre-alignment, physical units per pixel.
    pub prealign_resolution: f64,
    /// Affine levels; derived from the resolution ladder when unset.
    pub affine_levels: Option<usize>,
    /// Deformable levels; derived from the resolution ladder when unset.
    pub deformable_levels: Option<usize>,
    /// Finest registration resolution; the pyramid base when unset.
    pub finest_resolution: Option<f64>,
    /// Resolution the affine and deformable ladders reach at their coarsest level.
    pub coarsest_resolution: f64,
    /// Pyramid levels smaller than this many pixels along either axis are not built.
    pub min_level_size: usize,
    /// Physical size of one input pixel.
    pub input_spacing: f64,
    pub ngf_epsilon: f64,
    pub ngf_edge_units: EdgeUnits,
    pub alpha: f64,
    /// Displacement the curvature term acts on.
    pub regularize: Regularized,
    /// Control grid nodes `[along x, along y]`.
    pub grid_nodes: [usize; 2],
    pub lbfgs_memory: usize,
    pub prealign_rules: StopRules,
    pub affine_rules: StopRules,
    pub deformable_rules: StopRules,
    /// Reproducible reductions (bit-identical results across runs and thread counts).
    pub deterministic: bool,
}

/// What the curvature regularizer penalizes during the deformable stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularized {
    /// `u − u_affine`: the deformation on top of the affine initialization.
    #[default]
    Increment,
    /// The total displacement `u`, affine part included.
    Total,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_rotations: 32,
            prealign_levels: 4,
            prealign_resolution: 200.0,
            affine_levels: None,
            deformable_levels: None,
            finest_resolution: None,
            coarsest_resolution: 992.0,
            min_level_size: 16,
            input_spacing: 1.0,
            ngf_epsilon: 0.1,
            ngf_edge_units: EdgeUnits::PerPixel,
            alpha: 0.1,
            regularize: Regularized::default(),
            grid_nodes: [257, 257],
            lbfgs_memory: 10,
            prealign_rules: StopRules::default(),
            affine_rules: StopRules::default(),
            deformable_rules: StopRules {
                max_iterations: 200,
                ..StopRules::default()
            },
            deterministic: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rotations < 2 {
            return Err(Error::invalid("n_rotations must be at least 2"));
        }
        if self.prealign_levels < 1 || self.affine_levels == Some(0) || self.deformable_levels == Some(0) {
            return Err(Error::invalid("every stage needs at least one level"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("prealign_resolution", self.prealign_resolution)?;
        positive("coarsest_resolution", self.coarsest_resolution)?;
        positive("input_spacing", self.input_spacing)?;
        positive("ngf_epsilon", self.ngf_epsilon)?;
        positive("alpha", self.alpha)?;
        if let Some(r) = self.finest_resolution {
            positive("finest_resolution", r)?;
        }
        if self.grid_nodes[0] < 3 || self.grid_nodes[1] < 3 {
            return Err(Error::invalid("control grid needs at least 3x3 nodes"));
        }
        if self.lbfgs_memory < 1 {
            return Err(Error::invalid("lbfgs_memory must be at least 1"));
        }
        self.prealign_rules.validate()?;
        self.affine_rules.validate()?;
        self.deformable_rules.validate()
    }

    pub fn ngf(&self) -> NgfConfig {
        NgfConfig {
            epsilon: self.ngf_epsilon,
            edge_units: self.ngf_edge_units,
            reduction: if self.deterministic {
                ReductionOrder::Pairwise
            } else {
                ReductionOrder::Unordered
            },
        }
    }

    pub fn curv(&self) -> CurvConfig {
        CurvConfig { alpha: self.alpha }
    }
}

/// Finest pyramid level whose spacing is at least `resolution`; the coarsest
/// level when every level is finer.
pub fn level_for_resolution(pyr: &Pyramid, resolution: f64) -> usize {
    (0..pyr.len())
        .find(|&l| pyr.spacing(l) >= resolution * (1.0 - 1e-9))
        .unwrap_or(pyr.len() - 1)
}

/// Pyramid levels of one stage, coarsest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub levels: Vec<usize>,
    pub spacings: Vec<f64>,
}

impl Ladder {
    fn new(pyr: &Pyramid, finest: usize, count: usize) -> Ladder {
        let last = (finest + count.max(1) - 1).min(pyr.len() - 1);
        let levels: Vec<usize> = (finest..=last).rev().collect();
        let spacings = levels.iter().map(|&l| pyr.spacing(l)).collect();
        Ladder { levels, spacings }
    }

    pub fn finest(&self) -> usize {
        *self.levels.last().expect("nonempty ladder")
    }
}

/// Pre-alignment levels: `prealign_levels` levels ending at `prealign_resolution`.
pub fn prealign_ladder(pyr: &Pyramid, cfg: &PipelineConfig) -> Ladder {
    Ladder::new(
        pyr,
        level_for_resolution(pyr, cfg.prealign_resolution),
        cfg.prealign_levels,
    )
}

/// Affine/deformable levels: a doubling ladder from `finest_resolution` up to
/// about `coarsest_resolution`, or `explicit` levels when given.
pub fn stage_ladder(pyr: &Pyramid, cfg: &PipelineConfig, explicit: Option<usize>) -> Ladder {
    let finest = level_for_resolution(pyr, cfg.finest_resolution.unwrap_or(pyr.spacing(0)));
    let count = explicit.unwrap_or_else(|| {
        let ratio = cfg.coarsest_resolution / pyr.spacing(finest);
        if ratio <= 1.0 {
            1
        } else {
            1 + ratio.log2().round() as usize
        }
    });
    Ladder::new(pyr, finest, count)
}

/// Intensity-weighted mean of the pixel centers.
pub fn center_of_mass(img: &Image) -> Result<Vec2> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for row in 0..img.height() {
        for col in 0..img.width() {
            let v = img.get(row, col);
            let p = img.pixel_center(row, col);
            sw += v;
            sx += v * p.x;
            sy += v * p.y;
        }
    }
    if !(sw > 0.0) {
        return Err(Error::DegenerateInput("image has no positive intensity".into()));
    }
    Ok(Vec2::new(sx / sw, sy / sw))
}

/// One level of a multilevel optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub spacing: f64,
    pub width: usize,
    pub height: usize,
    pub trace: OptTrace,
    /// NGF at the end of the level.
    pub distance: f64,
    /// Curvature energy at the end of the level (deformable stage only).
    pub regularizer: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationCandidate {
    /// 1-based candidate index.
    pub k: usize,
    pub initial: RigidParams,
    pub result: RigidParams,
    /// NGF at the finest pre-alignment level.
    pub distance: f64,
    pub initial_distance: f64,
    pub levels: Vec<LevelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrealignResult {
    pub rigid: RigidParams,
    /// Index into `candidates` of the winner.
    pub selected: usize,
    pub candidates: Vec<RotationCandidate>,
    pub ladder: Ladder,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineResult {
    pub affine: AffineParams,
    pub levels: Vec<LevelReport>,
    pub ladder: Ladder,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformableResult {
    pub grid: DisplacementGrid,
    pub levels: Vec<LevelReport>,
    pub ladder: Ladder,
    /// `NGF + α·CURV` of the embedded affine start on the coarsest level.
    pub initial_objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub prealign: f64,
    pub affine: f64,
    pub deformable: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub rigid: RigidParams,
    pub affine: AffineParams,
    pub deformable: DisplacementGrid,
    pub prealign: PrealignResult,
    pub affine_stage: AffineResult,
    pub deformable_stage: DeformableResult,
    pub timings: StageTimings,
}

impl RegistrationResult {
    pub fn transform(&self) -> Transform {
        Transform::Displacement(self.deformable.clone())
    }
}

/// Best transforms available when a stage fails.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialResult {
    pub rigid: Option<RigidParams>,
    pub affine: Option<AffineParams>,
    pub deformable: Option<DisplacementGrid>,
}

/// NGF over a parametric transform kind, as a flat-vector objective.
struct ParametricNgf<'a> {
    ngf: NgfObjective<'a>,
    template: Transform,
}

impl Objective for ParametricNgf<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.ngf.value(&self.template.with_params(x))
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.ngf.value_and_gradient(&self.template.with_params(x))
    }
}

impl GaussNewtonObjective for ParametricNgf<'_> {
    fn model(&self, x: &[f64]) -> Result<QuadraticModel> {
        let m = self.ngf.gauss_newton_model(&self.template.with_params(x))?;
        Ok(QuadraticModel {
            value: m.value,
            gradient: m.gradient,
            hessian: m.hessian,
        })
    }
}

/// `NGF + α·CURV(u − u_ref)` over the node displacements of a fixed grid shape.
pub struct DeformableObjective<'a> {
    ngf: NgfObjective<'a>,
    grid: DisplacementGrid,
    reference_params: Vec<f64>,
    alpha: f64,
}

impl<'a> DeformableObjective<'a> {
    /// Regularizes the total displacement.
    pub fn new(reference: &'a Image, template: &Image, shape: GridShape, cfg: &PipelineConfig) -> Result<Self> {
        let grid = DisplacementGrid::zeros(shape);
        Self::with_reference(reference, template, grid, cfg)
    }

    /// Regularizes the displacement relative to `reg_reference`.
    pub fn with_reference(
        reference: &'a Image,
        template: &Image,
        reg_reference: DisplacementGrid,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        Ok(DeformableObjective {
            ngf: NgfObjective::new(reference, template, cfg.ngf())?,
            reference_params: reg_reference.params(),
            grid: reg_reference,
            alpha: cfg.alpha,
        })
    }

    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        self.ngf.value(&Transform::Displacement(self.grid.with_params(x)))
    }

    fn increment(&self, x: &[f64]) -> DisplacementGrid {
        let d: Vec<f64> = x.iter().zip(&self.reference_params).map(|(a, b)| a - b).collect();
        self.grid.with_params(&d)
    }

    pub fn regularizer(&self, x: &[f64]) -> Result<f64> {
        curv_value(&self.increment(x))
    }
}

impl Objective for DeformableObjective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let reg = self.regularizer(x)?;
        Ok(self.distance(x)? + self.alpha * reg)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (reg, reg_grad) = curv_value_and_grad(&self.increment(x))?;
        let g = self.grid.with_params(x);
        let (d, mut grad) = self.ngf.value_and_gradient(&Transform::Displacement(g))?;
        for (a, b) in grad.iter_mut().zip(reg_grad) {
            *a += self.alpha * b;
        }
        Ok((d + self.alpha * reg, grad))
    }
}

fn level_failed(trace: &OptTrace) -> bool {
    trace.termination == Termination::LineSearchFailed && trace.iterations.is_empty() && trace.initial_grad_norm > 0.0
}

/// Coarse-to-fine Gauss-Newton over a parametric transform.
fn multilevel_parametric(
    r: &Pyramid,
    t: &Pyramid,
    ladder: &Ladder,
    init: Transform,
    cfg: &PipelineConfig,
    rules: &StopRules,
) -> Result<(Transform, Vec<LevelReport>)> {
    let mut current = init;
    let mut reports = Vec::with_capacity(ladder.levels.len());
    for &l in &ladder.levels {
        let start = Instant::now();
        let (rl, tl) = (r.level(l), t.level(l));
        let obj = ParametricNgf {
            ngf: NgfObjective::new(rl, tl, cfg.ngf())?,
            template: current.clone(),
        };
        let (x, trace) = optimizer::gauss_newton(&obj, &current.params(), rules)?;
        current = current.with_params(&x);
        reports.push(LevelReport {
            level: l,
            spacing: rl.spacing(),
            width: rl.width(),
            height: rl.height(),
            distance: trace.final_objective(),
            trace,
            regularizer: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((current, reports))
}

fn check_compatible(r: &Pyramid, t: &Pyramid) -> Result<()> {
    let s0 = r.spacing(0);
    if (t.spacing(0) - s0).abs() > 1e-9 * s0 {
        return Err(Error::invalid(format!(
            "reference spacing {} and template spacing {} differ",
            s0,
            t.spacing(0)
        )));
    }
    Ok(())
}

/// Common pyramid depth of a reference/template pair.
fn common_depth(r: &Pyramid, t: &Pyramid) -> usize {
    r.len().min(t.len())
}

fn truncated(p: &Pyramid, n: usize) -> Pyramid {
    Pyramid::from_levels(p.levels()[..n].to_vec()).expect("prefix of a valid pyramid")
}

/// Candidate rotation angles `2π(k−1)/(N−1)`, `k = 1..N`.
pub fn rotation_angles(n_rotations: usize) -> Vec<f64> {
    (0..n_rotations)
        .map(|k| 2.0 * PI * k as f64 / (n_rotations - 1) as f64)
        .collect()
}

/// Distance gap, relative to the largest possible distance, below which two
/// candidates count as tied.
const TIE_TOLERANCE: f64 = 1e-4;

/// Smallest final distance wins. Near-ties go to the smallest |φ|; results
/// within half a candidate spacing of that angle are one optimum, reported
/// through the candidate that rotated least to reach it.
fn select_candidate(candidates: &[RotationCandidate], n_rotations: usize, scale: f64) -> usize {
    let best = candidates.iter().map(|c| c.distance).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].distance <= best + TIE_TOLERANCE * scale)
        .collect();
    let angle = |i: usize| wrap_angle(candidates[i].result.phi).abs();
    let phi_min = tied.iter().map(|&i| angle(i)).fold(f64::INFINITY, f64::min);
    let half_step = PI / (n_rotations - 1) as f64;
    let travel = |i: usize| wrap_angle(candidates[i].result.phi - candidates[i].initial.phi).abs();
    tied.into_iter()
        .filter(|&i| angle(i) <= phi_min + half_step)
        .min_by(|&a, &b| travel(a).total_cmp(&travel(b)).then(a.cmp(&b)))
        .expect("at least one candidate")
}

/// Automatic rotation alignment.
pub fn prealign(r: &Pyramid, t: &Pyramid, cfg: &PipelineConfig) -> Result<PrealignResult> {
    cfg.validate()?;
    check_compatible(r, t)?;
    let start = Instant::now();
    let depth = common_depth(r, t);
    let (r, t) = (truncated(r, depth), truncated(t, depth));
    let ladder = prealign_ladder(&r, cfg);
    let fine = ladder.finest();
    let c_r = center_of_mass(r.level(fine))?;
    let c_t = center_of_mass(t.level(fine))?;
    let angles = rotation_angles(cfg.n_rotations);
    let fine_ngf = NgfObjective::new(r.level(fine), t.level(fine), cfg.ngf())?;
    let candidates: Vec<RotationCandidate> = angles
        .par_iter()
        .enumerate()
        .map(|(i, &phi)| -> Result<RotationCandidate> {
            // the candidate maps the reference center of mass onto the template's
            let rot = RigidParams::new(phi, 0.0, 0.0).rotation();
            let tr = c_t - rot * c_r;
            let initial = RigidParams::new(phi, tr.x, tr.y);
            let (y, levels) =
                multilevel_parametric(&r, &t, &ladder, Transform::Rigid(initial), cfg, &cfg.prealign_rules)?;
            let Transform::Rigid(result) = y else { unreachable!() };
            Ok(RotationCandidate {
                k: i + 1,
                initial,
                result,
                distance: fine_ngf.value(&Transform::Rigid(result))?,
                initial_distance: fine_ngf.value(&Transform::Rigid(initial))?,
                levels,
            })
        })
        .collect::<Result<_>>()?;
    let selected = select_candidate(&candidates, cfg.n_rotations, fine_ngf.upper_bound());
    Ok(PrealignResult {
        rigid: candidates[selected].result.wrapped(),
        selected,
        candidates,
        ladder,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Multilevel affine registration seeded with a rigid transform.
pub fn register_affine(r: &Pyramid, t: &Pyramid, init: &RigidParams, cfg: &PipelineConfig) -> Result<AffineResult> {
    register_affine_from(r, t, &init.to_affine(), cfg)
}

pub fn register_affine_from(
    r: &Pyramid,
    t: &Pyramid,
    init: &AffineParams,
    cfg: &PipelineConfig,
) -> Result<AffineResult> {
    cfg.validate()?;
    check_compatible(r, t)?;
    let start = Instant::now();
    let depth = common_depth(r, t);
    let (r, t) = (truncated(r, depth), truncated(t, depth));
    let ladder = stage_ladder(&r, cfg, cfg.affine_levels);
    let (y, levels) = multilevel_parametric(&r, &t, &ladder, Transform::Affine(*init), cfg, &cfg.affine_rules)?;
    let Transform::Affine(affine) = y else { unreachable!() };
    if levels.iter().all(|l| level_failed(&l.trace)) {
        return Err(Error::StageFailed {
            stage: "affine",
            reason: "the optimizer made no progress on any level".into(),
            best: Box::new(PartialResult {
                affine: Some(affine),
                ..Default::default()
            }),
        });
    }
    if affine.det().abs() < 1e-12 {
        log::warn!("affine result is (nearly) singular: det = {}", affine.det());
    }
    Ok(AffineResult {
        affine,
        levels,
        ladder,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Control grid over the reference pixel extent.
pub fn grid_shape_for(reference: &Image, nodes: [usize; 2]) -> Result<GridShape> {
    GridShape::new(nodes[0], nodes[1], reference.pixel_extent())
}

/// Multilevel deformable registration seeded with an affine transform.
pub fn register_deformable(
    r: &Pyramid,
    t: &Pyramid,
    init: &AffineParams,
    cfg: &PipelineConfig,
) -> Result<DeformableResult> {
    cfg.validate()?;
    check_compatible(r, t)?;
    let start = Instant::now();
    let depth = common_depth(r, t);
    let (r, t) = (truncated(r, depth), truncated(t, depth));
    let ladder = stage_ladder(&r, cfg, cfg.deformable_levels);
    let shape = grid_shape_for(r.finest(), cfg.grid_nodes)?;
    let Transform::Displacement(mut grid) = Transform::Affine(*init).embed(&shape)? else {
        unreachable!()
    };
    let reg_reference = match cfg.regularize {
        Regularized::Increment => grid.clone(),
        Regularized::Total => DisplacementGrid::zeros(shape),
    };
    let mut levels = Vec::with_capacity(ladder.levels.len());
    let mut initial_objective = f64::NAN;
    for &l in &ladder.levels {
        let level_start = Instant::now();
        let (rl, tl) = (r.level(l), t.level(l));
        let obj = DeformableObjective::with_reference(rl, tl, reg_reference.clone(), cfg)?;
        let (x, trace) = optimizer::lbfgs(&obj, &grid.params(), cfg.lbfgs_memory, &cfg.deformable_rules)?;
        if initial_objective.is_nan() {
            initial_objective = trace.initial_objective;
        }
        let regularizer = obj.regularizer(&x)?;
        grid.set_params(&x);
        levels.push(LevelReport {
            level: l,
            spacing: rl.spacing(),
            width: rl.width(),
            height: rl.height(),
            distance: trace.final_objective() - cfg.alpha * regularizer,
            trace,
            regularizer: Some(regularizer),
            seconds: level_start.elapsed().as_secs_f64(),
        });
    }
    if levels.iter().all(|l| level_failed(&l.trace)) {
        return Err(Error::StageFailed {
            stage: "deformable",
            reason: "the optimizer made no progress on any level".into(),
            best: Box::new(PartialResult {
                affine: Some(*init),
                deformable: Some(grid),
                ..Default::default()
            }),
        });
    }
    Ok(DeformableResult {
        grid,
        levels,
        ladder,
        initial_objective,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs all three stages on prepared pyramids.
pub fn register_pyramids(r: &Pyramid, t: &Pyramid, cfg: &PipelineConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let start = Instant::now();
    let prealign = prealign(r, t, cfg)?;
    let rigid = prealign.rigid;
    let affine_stage = register_affine(r, t, &rigid, cfg).map_err(|e| with_partial(e, Some(rigid), None))?;
    let affine = affine_stage.affine;
    let deformable_stage =
        register_deformable(r, t, &affine, cfg).map_err(|e| with_partial(e, Some(rigid), Some(affine)))?;
    let timings = StageTimings {
        prealign: prealign.seconds,
        affine: affine_stage.seconds,
        deformable: deformable_stage.seconds,
        total: start.elapsed().as_secs_f64(),
    };
    Ok(RegistrationResult {
        rigid,
        affine,
        deformable: deformable_stage.grid.clone(),
        prealign,
        affine_stage,
        deformable_stage,
        timings,
    })
}

fn with_partial(e: Error, rigid: Option<RigidParams>, affine: Option<AffineParams>) -> Error {
    match e {
        Error::StageFailed {
            stage,
            reason,
            mut best,
        } => {
            best.rigid = best.rigid.or(rigid);
            best.affine = best.affine.or(affine);
            Error::StageFailed { stage, reason, best }
        }
        other => Error::StageFailed {
            stage: if affine.is_some() { "deformable" } else { "affine" },
            reason: other.to_string(),
            best: Box::new(PartialResult {
                rigid,
                affine,
                deformable: None,
            }),
        },
    }
}

/// Builds the pyramid of a gray image with the configured minimum level size.
pub fn build_pyramid_for(img: Image, cfg: &PipelineConfig) -> Result<Pyramid> {
    Pyramid::build_to_min_size(img, cfg.min_level_size, usize::MAX)
}

/// Full pipeline on color or gray rasters.
pub fn register(reference: &Raster, template: &Raster, cfg: &PipelineConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let r = to_gray_inverted(reference, cfg.input_spacing)?;
    let t = to_gray_inverted(template, cfg.input_spacing)?;
    register_images(r, t, cfg)
}

/// Full pipeline on gray images that already have a black background.
pub fn register_images(reference: Image, template: Image, cfg: &PipelineConfig) -> Result<RegistrationResult> {
    let r = build_pyramid_for(reference, cfg)?;
    let t = build_pyramid_for(template, cfg)?;
    register_pyramids(&r, &t, cfg)
}
