//! Synthetic tissue-like images and known warps shared by the integration tests.
#![allow(dead_code)]

use histreg::evaluation::{invert_point, LandmarkSet};
use histreg::{AffineParams, Image, Transform, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A textured blob of "tissue" on a black background, centered in an `n`×`n` frame.
pub fn tissue(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = n as f64;
    let c = Vec2::new(0.5 * (s - 1.0), 0.5 * (s - 1.0));
    let radius = 0.36 * s;
    let blobs: Vec<(Vec2, f64, f64)> = (0..160)
        .map(|_| {
            let r = radius * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let sigma = s * rng.gen_range(0.008..0.05);
            let amp = rng.gen_range(-0.35..0.45);
            (c + Vec2::new(r * a.cos(), r * a.sin()), sigma, amp)
        })
        .collect();
    // slightly elliptic outline so that the shape itself carries orientation
    Image::from_fn(n, n, 1.0, |p| {
        let d = p - c;
        let e = ((d.x / 1.15).powi(2) + (d.y * 1.1).powi(2)).sqrt();
        let mask = 1.0 / (1.0 + ((e - radius) / (0.01 * s)).exp());
        if mask < 1e-6 {
            return 0.0;
        }
        let mut v = 0.45;
        for (q, sigma, amp) in &blobs {
            let r2 = (p - q).norm_squared();
            if r2 < 16.0 * sigma * sigma {
                v += amp * (-r2 / (2.0 * sigma * sigma)).exp();
            }
        }
        mask * v.clamp(0.05, 1.0)
    })
    .unwrap()
}

/// `T(z) = R(v(z))`, so the ideal registration is `y = v⁻¹`.
pub fn warp(r: &Image, v: impl Fn(Vec2) -> Vec2 + Sync) -> Image {
    r.warp_onto(r, v)
}

pub fn center(img: &Image) -> Vec2 {
    let h = img.center_hull();
    Vec2::new(0.5 * (h.x0 + h.x1), 0.5 * (h.y0 + h.y1))
}

/// Rotation by `theta` about `c`.
pub fn rotation_about(theta: f64, c: Vec2) -> AffineParams {
    let (s, co) = theta.sin_cos();
    let a = nalgebra::Matrix2::new(co, -s, s, co);
    AffineParams::from_matrix(a, c - a * c)
}

/// `x + amp·exp(−|x − c|²/2σ²)·dir`.
pub fn bump(c: Vec2, amp: f64, sigma: f64, dir: Vec2) -> impl Fn(Vec2) -> Vec2 + Sync + Copy {
    move |x: Vec2| x + dir * (amp * (-(x - c).norm_squared() / (2.0 * sigma * sigma)).exp())
}

/// Solves `v(x) = p` by fixed-point iteration; valid for contractive displacements.
pub fn invert_map(v: impl Fn(Vec2) -> Vec2, p: Vec2) -> Vec2 {
    let mut x = p;
    for _ in 0..200 {
        x = x - (v(x) - p);
    }
    x
}

/// `k`×`k` probe points spread evenly over `[lo, hi]²`.
pub fn probe_grid(k: usize, lo: f64, hi: f64) -> Vec<Vec2> {
    let step = (hi - lo) / (k - 1) as f64;
    (0..k)
        .flat_map(|i| (0..k).map(move |j| Vec2::new(lo + j as f64 * step, lo + i as f64 * step)))
        .collect()
}

/// Mean distance between `y(p)` and the true correspondence `truth(p)`.
pub fn mean_probe_error(y: &Transform, probes: &[Vec2], truth: impl Fn(Vec2) -> Vec2) -> f64 {
    probes.iter().map(|&p| (y.apply(p) - truth(p)).norm()).sum::<f64>() / probes.len() as f64
}

/// Median probe error, the quantity reported as MTRE.
pub fn median_probe_error(y: &Transform, probes: &[Vec2], truth: impl Fn(Vec2) -> Vec2) -> f64 {
    let d: Vec<f64> = probes.iter().map(|&p| (y.apply(p) - truth(p)).norm()).collect();
    histreg::mtre(&d).unwrap()
}

/// Landmark pair for a known warp: reference points and their images under `truth`.
pub fn landmark_pair(probes: &[Vec2], truth: impl Fn(Vec2) -> Vec2) -> (LandmarkSet, LandmarkSet) {
    let r = LandmarkSet::new(probes.to_vec(), "reference").unwrap();
    let t = LandmarkSet::new(probes.iter().map(|&p| truth(p)).collect(), "template").unwrap();
    (r, t)
}

pub fn invert_transform(y: &Transform, p: Vec2) -> Option<Vec2> {
    invert_point(y, p, 1e-9)
}
