mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::*;
use histreg::cli::RunManifest;
use histreg::evaluation::{evaluate, EvalOptions};
use histreg::{DisplacementGrid, Image, LandmarkSet, MetricsReport, Transform, Vec2};

fn histreg() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_histreg"));
    c.env_remove("HISTREG_THREADS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    histreg().current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Dark tissue on white, 8 bits per sample.
fn save_slide8(img: &Image, path: &Path) {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| ((1.0 - v).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .unwrap()
        .save(path)
        .unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// 96-pixel reference, a bumped template and matching landmark files.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let r = tissue(96, 7);
    let c = center(&r);
    let b = bump(c, 2.0, 12.0, Vec2::new(0.6, 0.8));
    save_slide8(&r, &dir.path().join("r.png"));
    save_slide8(&warp(&r, b), &dir.path().join("t.png"));
    let probes: Vec<Vec2> = probe_grid(3, -12.0, 12.0).into_iter().map(|p| p + c).collect();
    let (lr, lt) = landmark_pair(&probes, |p| invert_map(b, p));
    lr.save(&dir.path().join("r.csv")).unwrap();
    lt.save(&dir.path().join("t.csv")).unwrap();
    Fixture { dir }
}

const FAST: &[&str] = &["--grid-nodes", "9", "--rotations", "8"];

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn self_registration_reproduces_the_input() {
    let f = fixture();
    let o = run(
        f.dir.path(),
        &[
            &[
                "register",
                "--reference",
                "r.png",
                "--template",
                "r.png",
                "--out-dir",
                "out",
            ],
            FAST,
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = f.path("out");
    for a in [
        "deformation.bin",
        "deformation.txt",
        "transform.json",
        "warped.png",
        "manifest.json",
        "levels.json",
    ] {
        assert!(out.join(a).exists(), "missing {a}");
    }
    let input = image::open(f.path("r.png")).unwrap().to_luma16();
    let warped = image::open(out.join("warped.png")).unwrap().to_luma16();
    assert_eq!(input.dimensions(), warped.dimensions());
    let close = input
        .pixels()
        .zip(warped.pixels())
        .filter(|(a, b)| (a.0[0] as f64 - b.0[0] as f64).abs() / 257.0 <= 1.0)
        .count();
    let frac = close as f64 / input.len() as f64;
    assert!(frac > 0.99, "{frac}");

    let m = manifest(&out);
    assert_eq!(m.status, histreg::cli::RunStatus::Ok);
    assert!(m.timings.is_some());
    assert_eq!(m.config.grid_nodes, [9, 9]);
    assert_eq!(m.artifacts["deformation"], PathBuf::from("deformation.bin"));
    let grid = DisplacementGrid::load(&out.join("deformation.bin")).unwrap();
    assert!(grid.max_displacement() < 0.1, "{}", grid.max_displacement());
}

#[test]
fn manifest_config_reproduces_the_run() {
    let f = fixture();
    let args = [
        &[
            "register",
            "--reference",
            "r.png",
            "--template",
            "t.png",
            "--out-dir",
            "a",
        ],
        FAST,
    ]
    .concat();
    assert!(run(f.dir.path(), &args).status.success());
    let cfg = serde_json::to_string(&manifest(&f.path("a")).config).unwrap();
    fs::write(f.path("cfg.json"), cfg).unwrap();
    let o = run(
        f.dir.path(),
        &[
            "register",
            "--reference",
            "r.png",
            "--template",
            "t.png",
            "--out-dir",
            "b",
            "--config",
            "cfg.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(f.path("a/deformation.bin")).unwrap(),
        fs::read(f.path("b/deformation.bin")).unwrap()
    );
}

#[test]
fn missing_input_exits_2_with_only_a_manifest() {
    let f = fixture();
    let o = run(
        f.dir.path(),
        &[
            "register",
            "--reference",
            "r.png",
            "--template",
            "nope.png",
            "--out-dir",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.png"));
    let names: Vec<String> = fs::read_dir(f.path("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["manifest.json".to_string()]);
    let m = manifest(&f.path("out"));
    assert_eq!(m.status, histreg::cli::RunStatus::InputError);
    assert!(m.message.unwrap().contains("nope.png"));
}

#[test]
fn bad_flags_exit_2() {
    let f = fixture();
    let o = run(
        f.dir.path(),
        &[
            "register",
            "--reference",
            "r.png",
            "--template",
            "t.png",
            "--alpha",
            "-1",
        ],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(f.dir.path(), &["register", "--reference", "r.png"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn finest_resolution_is_recorded_in_the_ladder() {
    let f = fixture();
    let o = run(
        f.dir.path(),
        &[
            &[
                "register",
                "--reference",
                "r.png",
                "--template",
                "t.png",
                "--out-dir",
                "out",
                "--finest-resolution",
                "2",
            ],
            FAST,
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ladders = manifest(&f.path("out")).ladders.unwrap();
    // 96 px at 1/px: levels of 96, 48 and 24 px; 12 px would fall below the 16 px minimum
    assert_eq!(ladders.affine.spacings, vec![4.0, 2.0]);
    assert_eq!(ladders.deformable.spacings, vec![4.0, 2.0]);
}

#[test]
fn info_prints_levels_and_ladders() {
    let f = fixture();
    let o = run(f.dir.path(), &["info", "r.png", "--json", "--finest-resolution", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["levels"][0]["width"], 96);
    assert_eq!(
        v["ladders"]["affine"]["spacings"].as_array().unwrap().last().unwrap(),
        2.0
    );
}

#[test]
fn evaluate_identity_field_gives_zero() {
    let f = fixture();
    let shape = histreg::GridShape::new(5, 5, histreg::Rect::new(0.0, 0.0, 95.0, 95.0)).unwrap();
    DisplacementGrid::zeros(shape).save(&f.path("id.bin")).unwrap();
    let o = run(
        f.dir.path(),
        &[
            "evaluate",
            "--transform",
            "id.bin",
            "--reference-landmarks",
            "r.csv",
            "--template-landmarks",
            "r.csv",
            "--out-dir",
            "ev",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(f.path("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(report.stats.mtre, 0.0);
    let csv = fs::read_to_string(f.path("ev/metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), MetricsReport::CSV_HEADER);
    assert!(f.path("ev/tre.tsv").exists());
}

#[test]
fn evaluate_rejects_mismatched_and_malformed_landmarks() {
    let f = fixture();
    LandmarkSet::new(vec![Vec2::new(1.0, 2.0)], "one")
        .unwrap()
        .save(&f.path("one.csv"))
        .unwrap();
    let shape = histreg::GridShape::new(5, 5, histreg::Rect::new(0.0, 0.0, 95.0, 95.0)).unwrap();
    DisplacementGrid::zeros(shape).save(&f.path("id.bin")).unwrap();
    let o = run(
        f.dir.path(),
        &[
            "evaluate",
            "--transform",
            "id.bin",
            "--reference-landmarks",
            "r.csv",
            "--template-landmarks",
            "one.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains(" 9 ") && msg.contains(" 1"), "{msg}");

    fs::write(f.path("bad.csv"), ",x,y\n0,1.0,2.0\n1,abc,3.0\n").unwrap();
    let o = run(
        f.dir.path(),
        &[
            "evaluate",
            "--transform",
            "id.bin",
            "--reference-landmarks",
            "bad.csv",
            "--template-landmarks",
            "bad.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.csv:3"), "{}", stderr(&o));
}

#[test]
fn evaluate_matches_in_process_metrics() {
    let f = fixture();
    let o = run(
        f.dir.path(),
        &[
            &[
                "register",
                "--reference",
                "r.png",
                "--template",
                "t.png",
                "--out-dir",
                "out",
            ],
            FAST,
        ]
        .concat(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(
        f.dir.path(),
        &[
            "evaluate",
            "--transform",
            "out/transform.json",
            "--reference-landmarks",
            "r.csv",
            "--template-landmarks",
            "t.csv",
            "--out-dir",
            "ev",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(f.path("ev/metrics.json")).unwrap()).unwrap();
    let grid = DisplacementGrid::load(&f.path("out/deformation.bin")).unwrap();
    let lr = LandmarkSet::load(&f.path("r.csv")).unwrap();
    let lt = LandmarkSet::load(&f.path("t.csv")).unwrap();
    let direct = evaluate(
        "pair",
        &Transform::Displacement(grid),
        &lr,
        &lt,
        EvalOptions::for_spacing(1.0),
    )
    .unwrap();
    assert!((report.stats.mtre - direct.stats.mtre).abs() <= 1e-9);
    assert!(report.stats.mtre < 1.0, "{}", report.stats.mtre);
}

fn sweep_args<'a>(out: &'a str, resolutions: &'a str) -> Vec<&'a str> {
    let mut v = vec![
        "sweep",
        "--reference",
        "r.png",
        "--template",
        "t.png",
        "--reference-landmarks",
        "r.csv",
        "--template-landmarks",
        "t.csv",
        "--out-dir",
        out,
        "--resolutions",
        resolutions,
    ];
    v.extend_from_slice(FAST);
    v
}

#[test]
fn sweep_writes_one_ordered_row_per_resolution() {
    let f = fixture();
    let o = run(f.dir.path(), &sweep_args("sw", "4,2,1,8"));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(f.path("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let res: Vec<&str> = rows.iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(res, vec!["4", "2", "1", "8"]);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
    for r in ["4", "2", "1", "8"] {
        assert!(f.path(&format!("sw/res_{r}/metrics.json")).exists());
    }
}

#[test]
fn single_resolution_sweep_equals_register_then_evaluate() {
    let f = fixture();
    assert!(run(f.dir.path(), &sweep_args("sw", "1")).status.success());
    let o = run(
        f.dir.path(),
        &[
            &[
                "register",
                "--reference",
                "r.png",
                "--template",
                "t.png",
                "--out-dir",
                "out",
                "--finest-resolution",
                "1",
            ],
            FAST,
        ]
        .concat(),
    );
    assert!(o.status.success());
    assert_eq!(
        fs::read(f.path("sw/res_1/deformation.bin")).unwrap(),
        fs::read(f.path("out/deformation.bin")).unwrap()
    );
    let o = run(
        f.dir.path(),
        &[
            "evaluate",
            "--transform",
            "out/deformation.bin",
            "--reference-landmarks",
            "r.csv",
            "--template-landmarks",
            "t.csv",
            "--out-dir",
            "ev",
        ],
    );
    assert!(o.status.success());
    let a: MetricsReport = serde_json::from_str(&fs::read_to_string(f.path("sw/res_1/metrics.json")).unwrap()).unwrap();
    let b: MetricsReport = serde_json::from_str(&fs::read_to_string(f.path("ev/metrics.json")).unwrap()).unwrap();
    assert_eq!(a.tre, b.tre);
}

#[test]
fn interrupted_sweep_keeps_completed_rows() {
    let f = fixture();
    let mut child = histreg()
        .current_dir(f.dir.path())
        .args(sweep_args("sw", "8,4,2,1,1,1,1,1,1,1,1,1"))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    // wait for the second finished resolution, then kill mid-run
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let start = Instant::now();
    let mut done = 0;
    while done < 2 && start.elapsed() < Duration::from_secs(300) {
        match lines.next() {
            Some(Ok(l)) if l.starts_with("resolution") => done += 1,
            Some(_) => {}
            None => break,
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(done, 2);
    let csv = fs::read_to_string(f.path("sw/sweep.csv")).unwrap();
    assert!(csv.ends_with('\n'));
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows.len() >= 3 && rows.len() < 13, "{} lines", rows.len());
    let width = MetricsReport::CSV_HEADER.split(',').count() + 1;
    for r in &rows {
        assert_eq!(r.split(',').count(), width, "{r}");
    }
    assert!(rows[1].starts_with("pair,8,") && rows[2].starts_with("pair,4,"));
}

#[test]
fn thread_count_from_environment() {
    let f = fixture();
    let o = histreg()
        .current_dir(f.dir.path())
        .env("HISTREG_THREADS", "1")
        .args(
            [
                &[
                    "register",
                    "--reference",
                    "r.png",
                    "--template",
                    "t.png",
                    "--out-dir",
                    "out",
                ],
                FAST,
            ]
            .concat(),
        )
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest(&f.path("out")).threads, 1);
    let o = histreg()
        .current_dir(f.dir.path())
        .env("HISTREG_THREADS", "zero")
        .args(["info", "r.png"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
