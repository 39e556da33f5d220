//! Acceptance suite. Each check prints one `[PASS]`/`[FAIL]` line for the
//! criterion it covers, then asserts it; the target fails if any check does.

mod common;

use std::panic::catch_unwind;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use histreg::curvature::{curv_grad, curv_value};
use histreg::evaluation::{evaluate, tre_stats, EvalOptions};
use histreg::geom::Rect;
use histreg::ngf::{NgfConfig, NgfObjective};
use histreg::optimizer::StopRules;
use histreg::pipeline::{self, build_pyramid_for, PipelineConfig};
use histreg::transform::wrap_angle;
use histreg::{mtre, tre, AffineParams, DisplacementGrid, GridShape, Image, LandmarkSet, RigidParams, Transform, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ═══════════════════════════════════════════════════════════════════
// Reporting
// ═══════════════════════════════════════════════════════════════════

fn verdict(name: &str, passed: bool, detail: String) {
    println!("[{}] {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{name}: {detail}");
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn central_differences(f: impl Fn(&[f64]) -> f64, p: &[f64], step: f64) -> Vec<f64> {
    (0..p.len())
        .map(|k| {
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[k] += step;
            b[k] -= step;
            (f(&a) - f(&b)) / (2.0 * step)
        })
        .collect()
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, spacing: f64) -> Image {
    Image::new(w, h, spacing, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
}

fn random_grid(rng: &mut ChaCha8Rng, m1: usize, m2: usize, domain: Rect, amp: f64) -> DisplacementGrid {
    let shape = GridShape::new(m1, m2, domain).unwrap();
    let p: Vec<f64> = (0..2 * m1 * m2).map(|_| rng.gen_range(-amp..amp)).collect();
    DisplacementGrid::zeros(shape).with_params(&p)
}

// ═══════════════════════════════════════════════════════════════════
// Objective functions
// ═══════════════════════════════════════════════════════════════════

fn gradients_match_central_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_ngf = 0.0f64;
    let n_ngf = 24;
    for k in 0..n_ngf {
        let n = rng.gen_range(8..=16);
        let h = rng.gen_range(0.5..2.0);
        let r = random_image(&mut rng, n, n, h);
        let t = random_image(&mut rng, n, n, h);
        let obj = NgfObjective::new(&r, &t, NgfConfig::new(rng.gen_range(0.05..1.0))).unwrap();
        let y = match k % 3 {
            0 => Transform::Rigid(RigidParams::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.5..0.5) * h,
                rng.gen_range(-0.5..0.5) * h,
            )),
            1 => Transform::Affine(AffineParams::from_slice(&[
                1.0 + rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                1.0 + rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.5..0.5) * h,
                rng.gen_range(-0.5..0.5) * h,
            ])),
            _ => {
                let m = rng.gen_range(3..=9);
                Transform::Displacement(random_grid(&mut rng, m, m, r.pixel_extent(), 0.4 * h))
            }
        };
        let (_, g) = obj.value_and_gradient(&y).unwrap();
        let fd = central_differences(|p| obj.value(&y.with_params(p)).unwrap(), &y.params(), 1e-6 * h);
        worst_ngf = worst_ngf.max(rel_err(&g, &fd));
    }
    let mut worst_curv = 0.0f64;
    let n_curv = 20;
    for _ in 0..n_curv {
        let (m1, m2) = (rng.gen_range(3..=9), rng.gen_range(3..=9));
        let hx = rng.gen_range(0.5..4.0);
        let hy = rng.gen_range(0.5..4.0);
        let g = random_grid(
            &mut rng,
            m1,
            m2,
            Rect::new(0.0, 0.0, hx * (m1 - 1) as f64, hy * (m2 - 1) as f64),
            1.0,
        );
        let an = curv_grad(&g).unwrap();
        let fd = central_differences(|p| curv_value(&g.with_params(p)).unwrap(), &g.params(), 1e-5);
        worst_curv = worst_curv.max(rel_err(&an, &fd));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradient correctness",
        worst_ngf < 1e-4 && worst_curv < 1e-6 && secs < 10.0,
        format!(
            "NGF worst rel. error {worst_ngf:.2e} over {n_ngf} instances (< 1e-4), \
             CURV {worst_curv:.2e} over {n_curv} (< 1e-6), {secs:.2} s (< 10 s)"
        ),
    );
}

fn ngf_vanishes_on_identical_images_and_is_bounded() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_identity = 0.0f64;
    for eps in [0.01, 0.1, 1.0] {
        for _ in 0..5 {
            let n = rng.gen_range(4..=32);
            let h = rng.gen_range(0.25..4.0);
            let r = random_image(&mut rng, n, n + 3, h);
            let obj = NgfObjective::new(&r, &r, NgfConfig::new(eps)).unwrap();
            worst_identity = worst_identity.max(obj.value(&Transform::identity_affine()).unwrap().abs());
        }
    }
    let mut bound_ok = 0;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(4..=24), rng.gen_range(4..=24));
        let s = rng.gen_range(0.25..4.0);
        let r = random_image(&mut rng, w, h, s);
        let t = random_image(&mut rng, w, h, s);
        let obj = NgfObjective::new(&r, &t, NgfConfig::new(rng.gen_range(0.001..2.0))).unwrap();
        let y = Transform::Rigid(RigidParams::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-5.0..5.0),
            0.0,
        ));
        let v = obj.value(&y).unwrap();
        if v >= 0.0 && v <= 0.5 * s * s * (w * h) as f64 * (1.0 + 1e-12) {
            bound_ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "NGF identity",
        worst_identity <= 1e-12 && bound_ok == 100 && secs < 5.0,
        format!(
            "max |NGF(R, R)| = {worst_identity:.1e} for eps in {{0.01, 0.1, 1}} (<= 1e-12), \
             {bound_ok}/100 random pairs within [0, h²N/2], {secs:.2} s (< 5 s)"
        ),
    );
}

fn curvature_null_space_and_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut exact_zero = true;
    let mut worst_scaling = 0.0f64;
    for _ in 0..20 {
        let (m1, m2) = (rng.gen_range(3..=12), rng.gen_range(3..=12));
        let dom = Rect::new(0.0, 0.0, rng.gen_range(1.0..50.0), rng.gen_range(1.0..50.0));
        let shape = GridShape::new(m1, m2, dom).unwrap();
        let zero = DisplacementGrid::zeros(shape);
        let c = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let constant = DisplacementGrid::from_parts(shape, vec![c.x; m1 * m2], vec![c.y; m1 * m2]).unwrap();
        exact_zero &= curv_value(&zero).unwrap() == 0.0 && curv_value(&constant).unwrap() == 0.0;
        let g = random_grid(&mut rng, m1, m2, dom, 2.0);
        let s = rng.gen_range(-5.0..5.0);
        let scaled = g.with_params(&g.params().iter().map(|v| s * v).collect::<Vec<_>>());
        let (a, b) = (curv_value(&scaled).unwrap(), s * s * curv_value(&g).unwrap());
        worst_scaling = worst_scaling.max((a - b).abs() / b.abs().max(1e-300));
    }
    verdict(
        "CURV null space",
        exact_zero && worst_scaling <= 1e-12,
        format!("zero/constant fields give exactly 0: {exact_zero}; worst |CURV(cu) − c²CURV(u)| rel. {worst_scaling:.1e} (<= 1e-12)"),
    );
}

// ═══════════════════════════════════════════════════════════════════
// Synthetic warps
// ═══════════════════════════════════════════════════════════════════

fn synthetic_config() -> PipelineConfig {
    // the 512-pixel fixture has only 5 levels above 16 px, so pre-alignment
    // ends at 8 px instead of the whole-slide default
    PipelineConfig {
        prealign_resolution: 8.0,
        ..Default::default()
    }
}

fn prealignment_recovers_large_rotations() {
    let r = tissue(512, 1);
    let c = center(&r);
    let cfg = synthetic_config();
    let rp = build_pyramid_for(r.clone(), &cfg).unwrap();
    let start = Instant::now();
    let tol_start = 2.0 * std::f64::consts::PI / (cfg.n_rotations - 1) as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for deg in [90.0f64, 170.0, 180.0, 270.0] {
        let th = deg.to_radians();
        let v = rotation_about(-th, c);
        let tp = build_pyramid_for(warp(&r, |z| v.apply(z)), &cfg).unwrap();
        let res = pipeline::prealign(&rp, &tp, &cfg).unwrap();
        let init = res.candidates[res.selected].initial.phi;
        let start_err = wrap_angle(init - th).abs();
        let final_err = wrap_angle(res.rigid.phi - th).abs().to_degrees();
        ok &= start_err <= tol_start && final_err < 0.5;
        parts.push(format!(
            "{deg}°: start off {:.1}°, final off {final_err:.3}°",
            start_err.to_degrees()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "ARA recovery",
        ok && secs < 60.0,
        format!(
            "{} (start <= {:.1}°, final < 0.5°), {secs:.1} s total (< 60 s)",
            parts.join("; "),
            tol_start.to_degrees()
        ),
    );
}

fn affine_warp_is_recovered() {
    let r = tissue(512, 1);
    let c = center(&r);
    let cfg = synthetic_config();
    let rp = build_pyramid_for(r.clone(), &cfg).unwrap();
    let m = nalgebra::Matrix2::new(1.03, 0.02, 0.0, 0.97);
    let v = rotation_about(10f64.to_radians(), c).compose(&AffineParams::from_matrix(m, c - m * c));
    let tp = build_pyramid_for(warp(&r, |z| v.apply(z)), &cfg).unwrap();
    let truth = v.inverse().unwrap();
    let start = Instant::now();
    let pre = pipeline::prealign(&rp, &tp, &cfg).unwrap();
    let aff = pipeline::register_affine(&rp, &tp, &pre.rigid, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let probes = probe_grid(5, 128.0, 384.0);
    let err = mean_probe_error(&Transform::Affine(aff.affine), &probes, |p| truth.apply(p));
    verdict(
        "affine recovery",
        err < 0.5 && secs < 30.0,
        format!(
            "10° rotation, scale 1.03/0.97, shear 0.02: mean probe error {err:.4} px (< 0.5), {secs:.1} s (< 30 s)"
        ),
    );
}

/// One run of the full pipeline on the Gaussian-bump fixture.
struct SweepRun {
    resolution: f64,
    mtre_affine: f64,
    mtre_deformable: f64,
    folds: usize,
    deformable_seconds: f64,
}

const BUMP_AMPLITUDE: f64 = 8.0;
const BUMP_SIGMA: f64 = 40.0;

fn bump_sweep() -> &'static [SweepRun] {
    static RUNS: OnceLock<Vec<SweepRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let r = tissue(512, 1);
        let bc = center(&r) + Vec2::new(30.0, -20.0);
        let b = bump(bc, BUMP_AMPLITUDE, BUMP_SIGMA, Vec2::new(0.8, 0.6));
        let t = warp(&r, b);
        let probes: Vec<Vec2> = probe_grid(5, -60.0, 60.0).into_iter().map(|p| p + bc).collect();
        let (lr, lt) = landmark_pair(&probes, |p| invert_map(b, p));
        let opts = EvalOptions::for_spacing(1.0);
        let mut runs = Vec::new();
        for res in [64.0, 16.0, 8.0, 4.0, 2.0, 1.0] {
            let mut cfg = PipelineConfig {
                finest_resolution: Some(res),
                ..synthetic_config()
            };
            if res > 32.0 {
                // a pyramid down to 8 px reaches the 64-pixel spacing
                cfg.min_level_size = 8;
                cfg.prealign_levels = 3;
            }
            let reg = pipeline::register_images(r.clone(), t.clone(), &cfg).unwrap();
            let aff = evaluate("bump", &Transform::Affine(reg.affine), &lr, &lt, opts).unwrap();
            let def = evaluate("bump", &reg.transform(), &lr, &lt, opts).unwrap();
            runs.push(SweepRun {
                resolution: res,
                mtre_affine: aff.stats.mtre,
                mtre_deformable: def.stats.mtre,
                folds: def.fold_count,
                deformable_seconds: reg.timings.deformable,
            });
        }
        runs
    })
}

fn deformable_improves_on_affine() {
    let run = bump_sweep().iter().find(|r| r.resolution == 1.0).unwrap();
    let reduction = 1.0 - run.mtre_deformable / run.mtre_affine;
    verdict(
        "deformable recovery",
        reduction >= 0.8 && run.folds == 0 && run.deformable_seconds < 120.0,
        format!(
            "bump {BUMP_AMPLITUDE} px / sigma {BUMP_SIGMA} px: probe MTRE affine {:.3} -> deformable {:.3} px, \
             reduction {:.1}% (>= 80%), folds {} (= 0), deformable stage {:.1} s (< 120 s)",
            run.mtre_affine,
            run.mtre_deformable,
            100.0 * reduction,
            run.folds,
            run.deformable_seconds
        ),
    );
}

fn affine_to_deformable_ratio_exceeds_one_at_fine_resolutions() {
    let runs = bump_sweep();
    let ratios: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| (r.resolution, r.mtre_affine / r.mtre_deformable))
        .collect();
    let ok = ratios.iter().filter(|(res, _)| *res <= 4.0).all(|(_, q)| *q > 1.0);
    let text: Vec<String> = ratios.iter().map(|(res, q)| format!("{res}x: {q:.2}")).collect();
    verdict(
        "affine/deformable ratio",
        ok,
        format!(
            "MTRE_affine / MTRE_deformable {} (> 1 required at 4x and finer; 64x reported only)",
            text.join(", ")
        ),
    );
}

/// Tolerated increase between successive sweep steps, in pixels. Covers
/// optimizer noise once the error is far below one pixel.
const SWEEP_SLACK: f64 = 0.05;

fn sweep_error_does_not_grow_as_resolution_refines() {
    let runs: Vec<&SweepRun> = bump_sweep().iter().filter(|r| r.resolution <= 16.0).collect();
    let ok = runs
        .windows(2)
        .all(|w| w[1].mtre_deformable <= w[0].mtre_deformable + SWEEP_SLACK);
    let text: Vec<String> = runs
        .iter()
        .map(|r| format!("{}x: {:.3}", r.resolution, r.mtre_deformable))
        .collect();
    verdict(
        "resolution sweep",
        ok,
        format!(
            "deformable MTRE {} px, non-increasing within {SWEEP_SLACK} px",
            text.join(", ")
        ),
    );
}

// ═══════════════════════════════════════════════════════════════════
// Runtime scaling
// ═══════════════════════════════════════════════════════════════════

fn deformable_level_time_scales_with_pixel_count() {
    let r = tissue(2048, 3);
    let b = bump(center(&r) + Vec2::new(120.0, -80.0), 32.0, 160.0, Vec2::new(0.8, 0.6));
    let t = warp(&r, b);
    let mut cfg = PipelineConfig {
        deformable_levels: Some(3),
        ..Default::default()
    };
    // a fixed amount of work per level
    cfg.deformable_rules = StopRules {
        max_iterations: 3,
        grad_tol: 1e-300,
        step_tol: 1e-300,
        obj_tol: 1e-300,
    };
    let rp = build_pyramid_for(r, &cfg).unwrap();
    let tp = build_pyramid_for(t, &cfg).unwrap();
    let def = pipeline::register_deformable(&rp, &tp, &AffineParams::identity(), &cfg).unwrap();
    let big: Vec<_> = def.levels.iter().filter(|l| l.width * l.height > 1_000_000).collect();
    let same_work = big.windows(2).all(|w| {
        w[0].trace.n_iterations() == w[1].trace.n_iterations() && w[0].trace.evaluations == w[1].trace.evaluations
    });
    let ratios: Vec<f64> = big.windows(2).map(|w| w[1].seconds / w[0].seconds).collect();
    let ok = !ratios.is_empty() && same_work && ratios.iter().all(|q| (2.0..=8.0).contains(q));
    let levels: Vec<String> = def
        .levels
        .iter()
        .map(|l| format!("{}² {:.2} s/{} evals", l.width, l.seconds, l.trace.evaluations))
        .collect();
    verdict(
        "runtime scaling",
        ok,
        format!("{}; time ratio above 1 MP {:?} (in [2, 8])", levels.join(", "), ratios),
    );
}

// ═══════════════════════════════════════════════════════════════════
// Metrics
// ═══════════════════════════════════════════════════════════════════

fn oracle_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=60);
        let pts = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
            (0..n)
                .map(|_| (rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)))
                .collect()
        };
        let (a, b) = (pts(&mut rng), pts(&mut rng));
        let set = |p: &[(f64, f64)]| LandmarkSet::new(p.iter().map(|&(x, y)| Vec2::new(x, y)).collect(), "x").unwrap();
        let d = tre(&set(&a), &set(&b)).unwrap();
        let oracle: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(p, q)| ((p.0 - q.0) * (p.0 - q.0) + (p.1 - q.1) * (p.1 - q.1)).sqrt())
            .collect();
        for (x, y) in d.iter().zip(&oracle) {
            worst = worst.max((x - y).abs() / y.max(1.0));
        }
        let m = oracle_median(&oracle);
        worst = worst.max((mtre(&d).unwrap() - m).abs() / m.max(1.0));
        let stats = tre_stats(&d).unwrap();
        worst = worst.max((stats.mtre - m).abs() / m.max(1.0));
        let mean = oracle.iter().sum::<f64>() / n as f64;
        worst = worst.max((stats.mean - mean).abs() / mean.max(1.0));
    }
    verdict(
        "MTRE/TRE oracle",
        worst <= 1e-12,
        format!("worst relative deviation from the brute-force oracle over 200 sets: {worst:.1e} (<= 1e-12)"),
    );
}

// ═══════════════════════════════════════════════════════════════════
// Determinism of the command-line tool
// ═══════════════════════════════════════════════════════════════════

fn save_slide(img: &Image, path: &Path) {
    // slides are dark tissue on white; the tool inverts on load
    histreg::pyramid::save_png16(&img.inverted(), path).unwrap();
}

fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let r = tissue(128, 4);
    let c = center(&r);
    let v = rotation_about(0.3, c);
    let t = warp(&r, |z| bump(c, 3.0, 12.0, Vec2::new(0.6, -0.8))(v.apply(z)));
    save_slide(&r, &dir.path().join("r.png"));
    save_slide(&t, &dir.path().join("t.png"));
    let run = |out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_histreg"))
            .current_dir(dir.path())
            .args([
                "register",
                "--reference",
                "r.png",
                "--template",
                "t.png",
                "--out-dir",
                out,
            ])
            .args(["--grid-nodes", "33", "--deterministic"])
            .status()
            .unwrap();
        assert!(status.success(), "{status}");
    };
    run("a");
    run("b");
    let same = |f: &str| {
        std::fs::read(dir.path().join("a").join(f)).unwrap() == std::fs::read(dir.path().join("b").join(f)).unwrap()
    };
    let fields = same("deformation.bin");
    let params = same("transform.json");
    verdict(
        "determinism",
        fields && params,
        format!("two --deterministic runs: deformation.bin identical {fields}, transform.json identical {params}"),
    );
}

// ═══════════════════════════════════════════════════════════════════
// Optional dataset check
// ═══════════════════════════════════════════════════════════════════

/// Set `HISTREG_HYRECO_DIR` to a directory with one subdirectory per pair,
/// each holding `reference.png`, `template.png`, `reference.csv` and
/// `template.csv`; `HISTREG_HYRECO_SPACING` gives the input µm per pixel.
fn restained_pairs_beat_affine_when_available() {
    let Some(root) = std::env::var_os("HISTREG_HYRECO_DIR") else {
        println!("[SKIP] re-stained dataset: HISTREG_HYRECO_DIR not set");
        SKIPPED.fetch_add(1, Ordering::Relaxed);
        return;
    };
    let spacing: f64 = std::env::var("HISTREG_HYRECO_SPACING")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let cfg = PipelineConfig {
        input_spacing: spacing,
        finest_resolution: Some(4.0),
        ..Default::default()
    };
    let opts = EvalOptions::for_spacing(spacing);
    let (mut aff, mut def) = (Vec::new(), Vec::new());
    let mut dirs: Vec<_> = std::fs::read_dir(&root)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    for d in dirs.iter().filter(|d| d.join("reference.png").exists()) {
        let load = |f: &str| histreg::pyramid::load_raster(&d.join(f)).unwrap();
        let reg = pipeline::register(&load("reference.png"), &load("template.png"), &cfg).unwrap();
        let lr = LandmarkSet::load(&d.join("reference.csv")).unwrap();
        let lt = LandmarkSet::load(&d.join("template.csv")).unwrap();
        aff.extend(
            evaluate("a", &Transform::Affine(reg.affine), &lr, &lt, opts)
                .unwrap()
                .tre,
        );
        def.extend(evaluate("d", &reg.transform(), &lr, &lt, opts).unwrap().tre);
    }
    assert!(!aff.is_empty(), "no pairs found under {}", Path::new(&root).display());
    let (ma, md) = (mtre(&aff).unwrap(), mtre(&def).unwrap());
    verdict(
        "re-stained dataset",
        md < ma,
        format!(
            "{} pairs at 4 µm/px: pooled MTRE affine {ma:.2} µm, deformable {md:.2} µm",
            dirs.len()
        ),
    );
}

static SKIPPED: AtomicUsize = AtomicUsize::new(0);

/// Runs every criterion in turn, so timed ones never compete for the CPU.
fn main() -> ExitCode {
    let criteria: &[(&str, fn())] = &[
        (
            "gradients_match_central_differences",
            gradients_match_central_differences,
        ),
        (
            "ngf_vanishes_on_identical_images_and_is_bounded",
            ngf_vanishes_on_identical_images_and_is_bounded,
        ),
        ("curvature_null_space_and_scaling", curvature_null_space_and_scaling),
        (
            "prealignment_recovers_large_rotations",
            prealignment_recovers_large_rotations,
        ),
        ("affine_warp_is_recovered", affine_warp_is_recovered),
        ("deformable_improves_on_affine", deformable_improves_on_affine),
        (
            "affine_to_deformable_ratio_exceeds_one_at_fine_resolutions",
            affine_to_deformable_ratio_exceeds_one_at_fine_resolutions,
        ),
        (
            "sweep_error_does_not_grow_as_resolution_refines",
            sweep_error_does_not_grow_as_resolution_refines,
        ),
        (
            "deformable_level_time_scales_with_pixel_count",
            deformable_level_time_scales_with_pixel_count,
        ),
        ("metrics_match_brute_force", metrics_match_brute_force),
        (
            "deterministic_runs_are_byte_identical",
            deterministic_runs_are_byte_identical,
        ),
        (
            "restained_pairs_beat_affine_when_available",
            restained_pairs_beat_affine_when_available,
        ),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if catch_unwind(check).is_err() {
            failed.push(*name);
        }
    }
    let skipped = SKIPPED.load(Ordering::Relaxed);
    println!(
        "\nacceptance: {} passed, {} failed, {} skipped",
        criteria.len() - failed.len() - skipped,
        failed.len(),
        skipped
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
