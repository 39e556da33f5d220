//! Landmark metrics, fold detection and resolution sweeps.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{finite2, Vec2};
use crate::pipeline::{self, PipelineConfig, StageTimings};
use crate::pyramid::Image;
use crate::transform::{DisplacementGrid, Transform};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    pub points: Vec<Vec2>,
    pub image_id: String,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec2>, image_id: impl Into<String>) -> Result<Self> {
        if let Some(k) = points.iter().position(|p| !finite2(*p)) {
            return Err(Error::invalid(format!("landmark {k} is not finite")));
        }
        Ok(LandmarkSet {
            points,
            image_id: image_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads a CSV with a header row. The `x` and `y` columns are located by
    /// name (case-insensitive); other columns, such as a leading index, are ignored.
    pub fn read_csv(r: impl BufRead, path: &Path) -> Result<Self> {
        let fmt = |line: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = r.lines().enumerate();
        let (xi, yi, ncols) = loop {
            let Some((n, line)) = lines.next() else {
                return Err(fmt(1, "missing header".into()));
            };
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<String> = line
                .split(',')
                .map(|c| c.trim().trim_matches('"').to_ascii_lowercase())
                .collect();
            let find = |name: &str| cols.iter().position(|c| c == name);
            match (find("x"), find("y")) {
                (Some(x), Some(y)) => break (x, y, cols.len()),
                _ => return Err(fmt(n + 1, format!("header must name x and y columns, got `{line}`"))),
            }
        };
        let mut points = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != ncols {
                return Err(fmt(n + 1, format!("expected {ncols} columns, found {}", cols.len())));
            }
            let num = |i: usize| -> Result<f64> {
                match cols[i].parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(fmt(n + 1, format!("`{}` is not a finite number", cols[i]))),
                }
            };
            points.push(Vec2::new(num(xi)?, num(yi)?));
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(LandmarkSet { points, image_id: id })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), path)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, ",x,y")?;
        for (k, p) in self.points.iter().enumerate() {
            writeln!(w, "{k},{:?},{:?}", p.x, p.y)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn check_pair(a: &LandmarkSet, b: &LandmarkSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "landmark counts differ: {} has {}, {} has {}",
            a.image_id,
            a.len(),
            b.image_id,
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("landmark sets are empty"));
    }
    Ok(())
}

/// Per-landmark Euclidean distances.
pub fn tre(reference: &LandmarkSet, warped: &LandmarkSet) -> Result<Vec<f64>> {
    check_pair(reference, warped)?;
    Ok(reference
        .points
        .iter()
        .zip(&warped.points)
        .map(|(r, t)| (r - t).norm())
        .collect())
}

/// Median; the mean of the two central values for even counts.
pub fn mtre(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty list"));
    }
    Ok(quantile(&sorted(values), 0.5))
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear interpolation between order statistics at `q·(n−1)`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreStats {
    pub mtre: f64,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    /// `q1 − 1.5·IQR`.
    pub whisker_low: f64,
    /// `q3 + 1.5·IQR`.
    pub whisker_high: f64,
    pub min: f64,
    pub max: f64,
}

pub fn tre_stats(values: &[f64]) -> Result<TreStats> {
    if values.is_empty() {
        return Err(Error::invalid("statistics of an empty list"));
    }
    let s = sorted(values);
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    let iqr = q3 - q1;
    Ok(TreStats {
        mtre: quantile(&s, 0.5),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        q1,
        q3,
        whisker_low: q1 - 1.5 * iqr,
        whisker_high: q3 + 1.5 * iqr,
        min: s[0],
        max: s[s.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    #[default]
    InverseNumeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedLandmarks {
    pub set: LandmarkSet,
    /// False where the inverse solve did not converge.
    pub converged: Vec<bool>,
}

/// Solves `y(x) = p` by Newton steps from `x = p`, with backtracking on `‖y(x) − p‖`.
pub fn invert_point(y: &Transform, p: Vec2, tol: f64) -> Option<Vec2> {
    let mut x = p;
    let mut res = y.apply(x) - p;
    for _ in 0..100 {
        if res.norm() <= tol {
            return Some(x);
        }
        let step = y.jacobian(x).lu().solve(&res)?;
        let mut t = 1.0;
        loop {
            let cand = x - t * step;
            let r = y.apply(cand) - p;
            if r.norm() < res.norm() {
                x = cand;
                res = r;
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                return None;
            }
        }
    }
    (res.norm() <= tol).then_some(x)
}

pub fn transform_landmarks(lms: &LandmarkSet, y: &Transform, direction: Direction, tol: f64) -> MappedLandmarks {
    let (points, converged) = lms
        .points
        .iter()
        .map(|&p| match direction {
            Direction::Forward => (y.apply(p), true),
            Direction::InverseNumeric => match invert_point(y, p, tol) {
                Some(x) => (x, true),
                None => (p, false),
            },
        })
        .unzip();
    MappedLandmarks {
        set: LandmarkSet {
            points,
            image_id: lms.image_id.clone(),
        },
        converged,
    }
}

/// Cells whose deformed orientation flips at any of their four corners.
pub fn count_folds(g: &DisplacementGrid) -> usize {
    let (m1, m2) = (g.m1(), g.m2());
    let pos = |i: usize, j: usize| g.shape().node_position(i, j) + g.node(i, j);
    let cross = |a: Vec2, b: Vec2| a.x * b.y - a.y * b.x;
    let mut folds = 0;
    for i in 0..m2 - 1 {
        for j in 0..m1 - 1 {
            let (p00, p01, p10, p11) = (pos(i, j), pos(i, j + 1), pos(i + 1, j), pos(i + 1, j + 1));
            let dets = [
                cross(p01 - p00, p10 - p00),
                cross(p01 - p00, p11 - p01),
                cross(p11 - p10, p10 - p00),
                cross(p11 - p10, p11 - p01),
            ];
            if dets.iter().any(|d| !(*d > 0.0)) {
                folds += 1;
            }
        }
    }
    folds
}

/// How template landmarks are compared against reference landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreMode {
    /// Template landmarks are pulled back through `y⁻¹` and compared with the reference ones.
    #[default]
    TemplateToReference,
    /// Reference landmarks are pushed through `y` and compared with the template ones.
    ReferenceToTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pair: String,
    /// Finest registration resolution, when the report comes from a sweep.
    pub resolution: Option<f64>,
    pub tre: Vec<f64>,
    /// Landmarks left out because the inverse solve did not converge.
    pub excluded: Vec<usize>,
    pub stats: TreStats,
    pub fold_count: usize,
    pub timings: Option<StageTimings>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: TreMode,
    /// Absolute tolerance of the inverse solve.
    pub tolerance: f64,
}

impl EvalOptions {
    /// Inverse-solve tolerance `1e-6·h`.
    pub fn for_spacing(h: f64) -> Self {
        EvalOptions {
            mode: TreMode::default(),
            tolerance: 1e-6 * h,
        }
    }
}

/// Metrics of a transform on one landmark pair.
pub fn evaluate(
    pair: &str,
    y: &Transform,
    reference: &LandmarkSet,
    template: &LandmarkSet,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    check_pair(reference, template)?;
    let (a, b, conv) = match opts.mode {
        TreMode::TemplateToReference => {
            let m = transform_landmarks(template, y, Direction::InverseNumeric, opts.tolerance);
            (reference.clone(), m.set, m.converged)
        }
        TreMode::ReferenceToTemplate => {
            let m = transform_landmarks(reference, y, Direction::Forward, opts.tolerance);
            (template.clone(), m.set, m.converged)
        }
    };
    let all = tre(&a, &b)?;
    let excluded: Vec<usize> = conv.iter().enumerate().filter(|(_, c)| !**c).map(|(k, _)| k).collect();
    if !excluded.is_empty() {
        log::warn!(
            "{pair}: {} landmark(s) excluded, inverse mapping did not converge",
            excluded.len()
        );
    }
    let kept: Vec<f64> = all.iter().zip(&conv).filter(|(_, c)| **c).map(|(t, _)| *t).collect();
    if kept.is_empty() {
        return Err(Error::DegenerateInput(format!("{pair}: no landmark could be mapped")));
    }
    let fold_count = match y {
        Transform::Displacement(g) => count_folds(g),
        Transform::Rigid(_) => 0,
        Transform::Affine(a) => {
            if a.det() > 0.0 {
                0
            } else {
                1
            }
        }
    };
    Ok(MetricsReport {
        pair: pair.to_string(),
        resolution: None,
        stats: tre_stats(&kept)?,
        tre: all,
        excluded,
        fold_count,
        timings: None,
    })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "pair,resolution,n,excluded,mtre,mean,q1,q3,whisker_low,whisker_high,min,max,folds,t_prealign,t_affine,t_deformable,t_total";

    pub fn csv_row(&self) -> String {
        let t = self.timings.unwrap_or_default();
        let s = &self.stats;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.pair,
            self.resolution.map(|r| r.to_string()).unwrap_or_default(),
            self.tre.len(),
            self.excluded.len(),
            s.mtre,
            s.mean,
            s.q1,
            s.q3,
            s.whisker_low,
            s.whisker_high,
            s.min,
            s.max,
            self.fold_count,
            t.prealign,
            t.affine,
            t.deformable,
            t.total
        )
    }

    /// TRE distribution as `index<TAB>tre<TAB>excluded` lines.
    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# index\ttre\texcluded")?;
        for (k, t) in self.tre.iter().enumerate() {
            writeln!(w, "{k}\t{t}\t{}", u8::from(self.excluded.contains(&k)))?;
        }
        Ok(())
    }
}

/// One resolution of a sweep.
#[derive(Debug)]
pub struct SweepItem {
    pub resolution: f64,
    pub outcome: Result<(MetricsReport, Transform)>,
}

/// Runs the pipeline once per finest resolution, calling `on_item` after each
/// run. Failures are recorded and the sweep continues.
pub fn resolution_sweep(
    pair: &str,
    reference: &Image,
    template: &Image,
    lms: (&LandmarkSet, &LandmarkSet),
    resolutions: &[f64],
    cfg: &PipelineConfig,
    mode: TreMode,
    mut on_item: impl FnMut(&SweepItem),
) -> Vec<SweepItem> {
    let mut out = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let run = || -> Result<(MetricsReport, Transform)> {
            let cfg = PipelineConfig {
                finest_resolution: Some(res),
                ..cfg.clone()
            };
            let reg = pipeline::register_images(reference.clone(), template.clone(), &cfg)?;
            let y = reg.transform();
            let opts = EvalOptions {
                mode,
                tolerance: 1e-6 * reference.spacing(),
            };
            let mut report = evaluate(pair, &y, lms.0, lms.1, opts)?;
            report.resolution = Some(res);
            report.timings = Some(reg.timings);
            Ok((report, y))
        };
        let item = SweepItem {
            resolution: res,
            outcome: run(),
        };
        on_item(&item);
        out.push(item);
    }
    out
}
