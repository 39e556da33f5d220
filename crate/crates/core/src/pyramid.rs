//! Single-channel images in physical coordinates, raster loading and
//! mean-pooled multilevel pyramids.
//!
//! Pixel `(row, col)` of an image has its center at
//! `origin + (col·h, row·h)`. Sampling is bilinear between pixel centers and
//! returns 0 outside the pixel-center hull, which matches the black background
//! produced by [`to_gray_inverted`].

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{finite2, locate, Mat2, Rect, Vec2};

/// Single-channel raster with isotropic pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    spacing: f64,
    origin: Vec2,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, spacing: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!("pixel spacing must be positive, got {spacing}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite intensity at index {i}")));
        }
        Ok(Image {
            width,
            height,
            spacing,
            origin: Vec2::zeros(),
            data,
        })
    }

    /// Builds an image by evaluating `f` at every pixel center.
    pub fn from_fn(width: usize, height: usize, spacing: f64, f: impl Fn(Vec2) -> f64 + Sync) -> Result<Self> {
        let mut data = vec![0.0; width * height];
        data.par_chunks_mut(width.max(1)).enumerate().for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                *v = f(Vec2::new(col as f64 * spacing, row as f64 * spacing));
            }
        });
        Image::new(width, height, spacing, data)
    }

    pub fn with_origin(mut self, origin: Vec2) -> Self {
        self.origin = origin;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> Vec2 {
        self.origin + Vec2::new(col as f64 * self.spacing, row as f64 * self.spacing)
    }

    /// Rectangle spanned by the pixel centers.
    pub fn center_hull(&self) -> Rect {
        let o = self.origin;
        Rect::new(
            o.x,
            o.y,
            o.x + (self.width - 1) as f64 * self.spacing,
            o.y + (self.height - 1) as f64 * self.spacing,
        )
    }

    /// Rectangle covered by the pixel cells (centers ± h/2).
    pub fn pixel_extent(&self) -> Rect {
        let half = 0.5 * self.spacing;
        let hull = self.center_hull();
        Rect::new(hull.x0 - half, hull.y0 - half, hull.x1 + half, hull.y1 + half)
    }

    #[inline]
    fn continuous_index(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.spacing,
            (p.y - self.origin.y) / self.spacing,
        )
    }

    /// Bilinear sample at physical point `p`; 0 outside the pixel-center hull.
    pub fn sample(&self, p: Vec2) -> Result<f64> {
        if !finite2(p) {
            return Err(Error::invalid(format!("non-finite sample point ({}, {})", p.x, p.y)));
        }
        Ok(self.sample_unchecked(p))
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, p: Vec2) -> f64 {
        let (cx, cy) = self.continuous_index(p);
        let (Some((j, fx)), Some((i, fy))) = (locate(cx, self.width), locate(cy, self.height)) else {
            return 0.0;
        };
        let j1 = (j + 1).min(self.width - 1);
        let i1 = (i + 1).min(self.height - 1);
        let v00 = self.get(i, j);
        let v01 = self.get(i, j1);
        let v10 = self.get(i1, j);
        let v11 = self.get(i1, j1);
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
    }

    /// Analytic spatial derivative of the bilinear interpolant at `p`
    /// (intensity per physical unit); `(0, 0)` outside the hull.
    pub fn gradient(&self, p: Vec2) -> Result<Vec2> {
        if !finite2(p) {
            return Err(Error::invalid(format!("non-finite gradient point ({}, {})", p.x, p.y)));
        }
        let (cx, cy) = self.continuous_index(p);
        let (Some((j, fx)), Some((i, fy))) = (locate(cx, self.width), locate(cy, self.height)) else {
            return Ok(Vec2::zeros());
        };
        let j1 = (j + 1).min(self.width - 1);
        let i1 = (i + 1).min(self.height - 1);
        let v00 = self.get(i, j);
        let v01 = self.get(i, j1);
        let v10 = self.get(i1, j);
        let v11 = self.get(i1, j1);
        let h = self.spacing;
        let dx = if j1 == j {
            0.0
        } else {
            ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10)) / h
        };
        let dy = if i1 == i {
            0.0
        } else {
            ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01)) / h
        };
        Ok(Vec2::new(dx, dy))
    }

    /// Intensities mapped through `v -> 1 - v`.
    pub fn inverted(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| 1.0 - v).collect(),
            ..self.clone()
        }
    }

    /// 2×2 mean pooling; odd trailing rows/columns average the available pixels.
    pub fn downsample(&self) -> Image {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut data = vec![0.0; w * h];
        data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
            let r0 = 2 * row;
            let r1 = (r0 + 1).min(self.height - 1);
            for (col, v) in out.iter_mut().enumerate() {
                let c0 = 2 * col;
                let c1 = (c0 + 1).min(self.width - 1);
                let mut sum = 0.0;
                let mut count = 0.0;
                for r in r0..=r1 {
                    for c in c0..=c1 {
                        sum += self.get(r, c);
                        count += 1.0;
                    }
                }
                *v = sum / count;
            }
        });
        let origin = self.origin + Vec2::repeat(0.5 * self.spacing);
        Image {
            width: w,
            height: h,
            spacing: 2.0 * self.spacing,
            origin,
            data,
        }
    }

    /// Resamples `self` at every pixel center of `grid_like` after mapping the
    /// center through `map`.
    pub fn warp_onto(&self, grid_like: &Image, map: impl Fn(Vec2) -> Vec2 + Sync) -> Image {
        let w = grid_like.width;
        let mut data = vec![0.0; w * grid_like.height];
        data.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
            for (col, v) in out.iter_mut().enumerate() {
                *v = self.sample_unchecked(map(grid_like.pixel_center(row, col)));
            }
        });
        Image {
            data,
            ..grid_like.clone()
        }
    }
}

/// Multi-channel raster with values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid(format!("empty raster {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid("raster data length does not match its dimensions"));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel raster holding the intensities of `img` (no inversion).
    pub fn from_gray(img: &Image) -> Raster {
        Raster {
            width: img.width(),
            height: img.height(),
            channels: 1,
            data: img.data().to_vec(),
        }
    }
}

/// Rec. 601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Converts a raster to gray and inverts it so a white slide background maps to 0.
pub fn to_gray_inverted(raster: &Raster, spacing: f64) -> Result<Image> {
    if raster.width == 0 || raster.height == 0 || raster.data.is_empty() {
        return Err(Error::invalid("empty raster"));
    }
    let c = raster.channels;
    let gray: Vec<f64> = raster
        .data
        .chunks_exact(c)
        .map(|px| {
            let lum = match c {
                1 | 2 => px[0],
                _ => LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2],
            };
            (1.0 - lum).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(raster.width, raster.height, spacing, gray)
}

/// Reads a PNG or single-page TIFF into a normalized raster.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynamic = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if dynamic.color().has_color() {
        let rgb = dynamic.to_rgb32f();
        Raster::new(w, h, 3, rgb.into_raw().into_iter().map(f64::from).collect())
    } else {
        let luma = dynamic.to_luma32f();
        Raster::new(w, h, 1, luma.into_raw().into_iter().map(f64::from).collect())
    }
}

/// Loads a raster and converts it with [`to_gray_inverted`].
pub fn load_image(path: &Path, spacing: f64) -> Result<Image> {
    to_gray_inverted(&load_raster(path)?, spacing)
}

/// Writes `img` as a 16-bit grayscale PNG (values clamped to `[0, 1]`).
pub fn save_png16(img: &Image, path: &Path) -> Result<()> {
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Level 0 is the finest image; each level halves the size and doubles the spacing.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Image>,
}

impl Pyramid {
    /// Builds `n_levels` levels by repeated 2×2 mean pooling.
    pub fn build(img: Image, n_levels: usize) -> Result<Self> {
        if n_levels == 0 {
            return Err(Error::invalid("a pyramid needs at least one level"));
        }
        // every level must be strictly smaller than the one before it
        let (mut w, mut h) = (img.width(), img.height());
        for level in 1..n_levels {
            if w == 1 && h == 1 {
                return Err(Error::invalid(format!(
                    "{n_levels} levels requested but a {}x{} image is already 1x1 at level {}",
                    img.width(),
                    img.height(),
                    level - 1
                )));
            }
            w = w.div_ceil(2);
            h = h.div_ceil(2);
        }
        let mut levels = Vec::with_capacity(n_levels);
        levels.push(img);
        for _ in 1..n_levels {
            let next = levels.last().expect("nonempty").downsample();
            levels.push(next);
        }
        Ok(Pyramid { levels })
    }

    /// Builds as many levels as possible while the coarsest keeps at least
    /// `min_size` pixels along both axes (`max_levels` caps the count).
    pub fn build_to_min_size(img: Image, min_size: usize, max_levels: usize) -> Result<Self> {
        let mut n = 1;
        let (mut w, mut h) = (img.width(), img.height());
        while n < max_levels {
            let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
            if nw < min_size.max(2) || nh < min_size.max(2) {
                break;
            }
            w = nw;
            h = nh;
            n += 1;
        }
        Pyramid::build(img, n)
    }

    /// Wraps already-downsampled levels; spacing must double per level.
    pub fn from_levels(levels: Vec<Image>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("a pyramid needs at least one level"));
        }
        for l in 1..levels.len() {
            let expect = 2.0 * levels[l - 1].spacing();
            if (levels[l].spacing() - expect).abs() > 1e-9 * expect {
                return Err(Error::invalid(format!(
                    "level {l} spacing {} is not twice level {} spacing {}",
                    levels[l].spacing(),
                    l - 1,
                    levels[l - 1].spacing()
                )));
            }
            if levels[l].width() > levels[l - 1].width() || levels[l].height() > levels[l - 1].height() {
                return Err(Error::invalid(format!("level {l} is larger than level {}", l - 1)));
            }
        }
        Ok(Pyramid { levels })
    }

    pub fn levels(&self) -> &[Image] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Image {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> &Image {
        &self.levels[0]
    }

    pub fn spacing(&self, l: usize) -> f64 {
        self.levels[l].spacing()
    }
}

/// Manifest stored next to `level_<l>.png` files of a pre-built pyramid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PyramidManifest {
    /// Physical pixel spacing of level 0.
    pub spacing: f64,
    /// Number of level files.
    pub levels: usize,
}

/// Loads a pre-built pyramid directory (`manifest.json` + `level_<l>.png`).
pub fn load_pyramid_dir(dir: &Path) -> Result<Pyramid> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: PyramidManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.levels == 0 {
        return Err(Error::invalid("pyramid manifest lists zero levels"));
    }
    let mut levels = Vec::with_capacity(manifest.levels);
    for l in 0..manifest.levels {
        let path: PathBuf = dir.join(format!("level_{l}.png"));
        let spacing = manifest.spacing * f64::powi(2.0, l as i32);
        let origin = Vec2::repeat(0.5 * manifest.spacing * (f64::powi(2.0, l as i32) - 1.0));
        levels.push(load_image(&path, spacing)?.with_origin(origin));
    }
    Pyramid::from_levels(levels)
}

/// Precomputed central-difference gradient of an image at its pixel centers,
/// bilinearly interpolated in between.
///
/// Unlike [`Image::gradient`], this field is continuous in the evaluation
/// point, so distance measures built on it are continuous in the transform
/// parameters.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    spacing: f64,
    origin: Vec2,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn new(img: &Image) -> Self {
        let (w, h) = (img.width(), img.height());
        let inv = 1.0 / img.spacing();
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        gx.par_chunks_mut(w)
            .zip(gy.par_chunks_mut(w))
            .enumerate()
            .for_each(|(r, (ox, oy))| {
                for c in 0..w {
                    ox[c] = if w == 1 {
                        0.0
                    } else if c == 0 {
                        (img.get(r, 1) - img.get(r, 0)) * inv
                    } else if c == w - 1 {
                        (img.get(r, c) - img.get(r, c - 1)) * inv
                    } else {
                        0.5 * (img.get(r, c + 1) - img.get(r, c - 1)) * inv
                    };
                    oy[c] = if h == 1 {
                        0.0
                    } else if r == 0 {
                        (img.get(1, c) - img.get(0, c)) * inv
                    } else if r == h - 1 {
                        (img.get(r, c) - img.get(r - 1, c)) * inv
                    } else {
                        0.5 * (img.get(r + 1, c) - img.get(r - 1, c)) * inv
                    };
                }
            });
        GradientField {
            width: w,
            height: h,
            spacing: img.spacing(),
            origin: img.origin(),
            gx,
            gy,
        }
    }

    /// Gradient at pixel `index = row·width + col`.
    #[inline]
    pub fn at_pixel(&self, index: usize) -> Vec2 {
        Vec2::new(self.gx[index], self.gy[index])
    }

    /// Interpolated gradient at `p` and its spatial Jacobian
    /// (`jac[(a, b)] = ∂g_a/∂p_b`). Both vanish outside the pixel-center hull.
    #[inline]
    pub fn eval(&self, p: Vec2) -> (Vec2, Mat2) {
        let cx = (p.x - self.origin.x) / self.spacing;
        let cy = (p.y - self.origin.y) / self.spacing;
        let (Some((j, fx)), Some((i, fy))) = (locate(cx, self.width), locate(cy, self.height)) else {
            return (Vec2::zeros(), Mat2::zeros());
        };
        let j1 = (j + 1).min(self.width - 1);
        let i1 = (i + 1).min(self.height - 1);
        let at = |g: &[f64], i: usize, j: usize| g[i * self.width + j];
        let inv = 1.0 / self.spacing;
        let mut value = Vec2::zeros();
        let mut jac = Mat2::zeros();
        for (a, g) in [&self.gx, &self.gy].into_iter().enumerate() {
            let (v00, v01, v10, v11) = (at(g, i, j), at(g, i, j1), at(g, i1, j), at(g, i1, j1));
            value[a] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
            // x-derivative of the interpolant along the row pair (i, i1) in cell column jj
            let ddx = |jj: usize| {
                let (r0, r1) = (at(g, i, jj + 1) - at(g, i, jj), at(g, i1, jj + 1) - at(g, i1, jj));
                ((1.0 - fy) * r0 + fy * r1) * inv
            };
            let ddy = |ii: usize| {
                let (c0, c1) = (at(g, ii + 1, j) - at(g, ii, j), at(g, ii + 1, j1) - at(g, ii, j1));
                ((1.0 - fx) * c0 + fx * c1) * inv
            };
            // on an interior knot line the interpolant has a kink; use the mean of both sides
            jac[(a, 0)] = match (j1 == j, fx == 0.0 && j > 0) {
                (true, _) => 0.0,
                (false, true) => 0.5 * (ddx(j - 1) + ddx(j)),
                (false, false) => ddx(j),
            };
            jac[(a, 1)] = match (i1 == i, fy == 0.0 && i > 0) {
                (true, _) => 0.0,
                (false, true) => 0.5 * (ddy(i - 1) + ddy(i)),
                (false, false) => ddy(i),
            };
        }
        (value, jac)
    }
}
