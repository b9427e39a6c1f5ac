//! Photometric transforms: HSV conversion, automatic color equalization (ACE),
//! CLAHE on the value channel, HSV brightness scaling and eye-region noise.

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FaceAnnotation;
use crate::seed;
use crate::tensor::ImageTensor;

// ---------------------------------------------------------------------------
// HSV
// ---------------------------------------------------------------------------

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv_pixel(rgb: [u8; 3]) -> Hsv {
    let r = f64::from(rgb[0]) / 255.0;
    let g = f64::from(rgb[1]) / 255.0;
    let b = f64::from(rgb[2]) / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv { h, s, v: max }
}

pub fn hsv_to_rgb_pixel(hsv: Hsv) -> [u8; 3] {
    let v = hsv.v.clamp(0.0, 1.0);
    let s = hsv.s.clamp(0.0, 1.0);
    let c = v * s;
    let hp = hsv.h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Hsv>,
}

pub fn rgb_to_hsv(img: &ImageTensor) -> HsvImage {
    let data = img
        .as_raw()
        .chunks_exact(3)
        .map(|p| rgb_to_hsv_pixel([p[0], p[1], p[2]]))
        .collect();
    HsvImage {
        width: img.width(),
        height: img.height(),
        data,
    }
}

pub fn hsv_to_rgb(hsv: &HsvImage) -> ImageTensor {
    let data = hsv.data.iter().flat_map(|&p| hsv_to_rgb_pixel(p)).collect();
    ImageTensor::from_raw(hsv.width, hsv.height, data).expect("hsv raster has width*height pixels")
}

/// Scales the HSV value channel by `factor`, clamping to the valid range.
pub fn scale_brightness_hsv(img: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    if !(factor >= 0.0) || !factor.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "brightness factor must be finite and >= 0, got {factor}"
        )));
    }
    let mut hsv = rgb_to_hsv(img);
    for p in &mut hsv.data {
        p.v = (p.v * factor).clamp(0.0, 1.0);
    }
    Ok(hsv_to_rgb(&hsv))
}

// ---------------------------------------------------------------------------
// ACE
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AceMode {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AceParams {
    /// Saturation slope of `s(t) = clamp(slope * t, -1, 1)` on `[0, 1]` intensities.
    pub slope: f64,
    pub mode: AceMode,
    /// Comparison pixels per target pixel in sampled mode.
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for AceParams {
    fn default() -> Self {
        Self {
            slope: 5.0,
            mode: AceMode::Sampled,
            sample_count: 256,
            seed: 0,
        }
    }
}

impl AceParams {
    pub fn exact(slope: f64) -> Self {
        Self {
            slope,
            mode: AceMode::Exact,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.slope > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ACE slope must be > 0, got {}",
                self.slope
            )));
        }
        if self.mode == AceMode::Sampled && self.sample_count == 0 {
            return Err(Error::InvalidParameter("ACE sample_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stage-one ACE response `R_c(p)` for every pixel, channels interleaved.
pub fn ace_response(img: &ImageTensor, params: &AceParams) -> Result<Vec<f64>> {
    params.validate()?;
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (w, h) = img.dims();
    let n = w * h;
    let channels: Vec<f64> = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();

    // inverse Euclidean distance indexed by (|dy|, |dx|)
    let mut inv_dist = vec![0.0f64; w * h];
    for dy in 0..h {
        for dx in 0..w {
            if dx != 0 || dy != 0 {
                inv_dist[dy * w + dx] = 1.0 / ((dx * dx + dy * dy) as f64).sqrt();
            }
        }
    }

    let slope = params.slope;
    let sat = |t: f64| (slope * t).clamp(-1.0, 1.0);

    let pair_term = |p: usize, j: usize, acc: &mut [f64; 3]| {
        let (px, py) = (p % w, p / w);
        let (jx, jy) = (j % w, j / w);
        let wgt = inv_dist[py.abs_diff(jy) * w + px.abs_diff(jx)];
        for c in 0..3 {
            acc[c] += sat(channels[p * 3 + c] - channels[j * 3 + c]) * wgt;
        }
    };

    let response: Vec<[f64; 3]> = match params.mode {
        AceMode::Exact => (0..n)
            .into_par_iter()
            .map(|p| {
                let mut acc = [0.0; 3];
                for j in 0..n {
                    if j != p {
                        pair_term(p, j, &mut acc);
                    }
                }
                acc
            })
            .collect(),
        AceMode::Sampled => {
            let population = n - 1;
            let k = params.sample_count.min(population);
            let scale = if k == 0 { 0.0 } else { population as f64 / k as f64 };
            (0..n)
                .into_par_iter()
                .map(|p| {
                    let mut acc = [0.0; 3];
                    if k == 0 {
                        return acc;
                    }
                    let mut rng = seed::rng(params.seed, seed::stream::ACE, p as u64);
                    for idx in index::sample(&mut rng, population, k) {
                        let j = if idx < p { idx } else { idx + 1 };
                        pair_term(p, j, &mut acc);
                    }
                    acc.map(|a| a * scale)
                })
                .collect()
        }
    };
    Ok(response.into_iter().flatten().collect())
}

/// ACE output before quantization: each channel's response min–max scaled to `[0, 255]`.
pub fn ace_normalize_f64(img: &ImageTensor, params: &AceParams) -> Result<Vec<f64>> {
    let mut r = ace_response(img, params)?;
    for c in 0..3 {
        let (lo, hi) = r
            .iter()
            .skip(c)
            .step_by(3)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in r.iter_mut().skip(c).step_by(3) {
            *v = if range > 0.0 {
                (*v - lo) / range * 255.0
            } else {
                128.0
            };
        }
    }
    Ok(r)
}

pub fn ace_normalize(img: &ImageTensor, params: &AceParams) -> Result<ImageTensor> {
    let scaled = ace_normalize_f64(img, params)?;
    let data = scaled
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageTensor::from_raw(img.width(), img.height(), data)
}

// ---------------------------------------------------------------------------
// CLAHE
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheParams {
    /// (rows, cols)
    pub tile_grid: (usize, usize),
    /// Bin cap as a multiple of the uniform bin height `tile_pixels / 256`.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tile_grid: (8, 8),
            clip_limit: 2.0,
        }
    }
}

/// Mapping `v -> v'` for one tile, unquantized.
#[derive(Clone, Debug)]
pub struct TileMapping(pub [f64; 256]);

impl TileMapping {
    fn identity() -> Self {
        let mut m = [0.0; 256];
        for (v, slot) in m.iter_mut().enumerate() {
            *slot = v as f64;
        }
        TileMapping(m)
    }

    /// Clipped, redistributed histogram equalization of one tile's values.
    pub fn from_values(values: impl Iterator<Item = u8>, clip_limit: f64) -> Self {
        let mut hist = [0.0f64; 256];
        let mut n = 0usize;
        for v in values {
            hist[v as usize] += 1.0;
            n += 1;
        }
        let occupied = hist.iter().filter(|&&c| c > 0.0).count();
        if occupied <= 1 {
            return Self::identity();
        }
        let cap = clip_limit * n as f64 / 256.0;
        let mut excess = 0.0;
        for c in hist.iter_mut() {
            if *c > cap {
                excess += *c - cap;
                *c = cap;
            }
        }
        let share = excess / 256.0;
        let mut cdf = 0.0;
        let mut m = [0.0; 256];
        for (slot, c) in m.iter_mut().zip(hist.iter()) {
            cdf += c + share;
            *slot = 255.0 * cdf / n as f64;
        }
        TileMapping(m)
    }
}

/// Tile boundaries along one axis and, per pixel, the two neighboring tile
/// centers with the interpolation weight toward the second.
fn axis_plan(len: usize, tiles: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize, f64)>) {
    let bounds: Vec<(usize, usize)> = (0..tiles)
        .map(|i| (i * len / tiles, (i + 1) * len / tiles))
        .collect();
    let centers: Vec<f64> = bounds
        .iter()
        .map(|&(s, e)| (s + e - 1) as f64 / 2.0)
        .collect();
    let per_pixel = (0..len)
        .map(|p| {
            let p = p as f64;
            if p <= centers[0] {
                (0, 0, 0.0)
            } else if p >= centers[tiles - 1] {
                (tiles - 1, tiles - 1, 0.0)
            } else {
                let i = centers.iter().rposition(|&c| c <= p).unwrap();
                let f = (p - centers[i]) / (centers[i + 1] - centers[i]);
                (i, i + 1, f)
            }
        })
        .collect();
    (bounds, per_pixel)
}

/// CLAHE on a single 8-bit plane.
pub fn clahe_plane(plane: &[u8], width: usize, height: usize, params: &ClaheParams) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let (rows, cols) = params.tile_grid;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParameter("CLAHE tile grid must be at least 1x1".into()));
    }
    if !(params.clip_limit >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "CLAHE clip_limit must be >= 1, got {}",
            params.clip_limit
        )));
    }
    let rows = rows.min(height);
    let cols = cols.min(width);
    let (ybounds, yplan) = axis_plan(height, rows);
    let (xbounds, xplan) = axis_plan(width, cols);

    let mut maps = Vec::with_capacity(rows * cols);
    for &(y0, y1) in &ybounds {
        for &(x0, x1) in &xbounds {
            let values = (y0..y1).flat_map(|y| plane[y * width + x0..y * width + x1].iter().copied());
            maps.push(TileMapping::from_values(values, params.clip_limit));
        }
    }

    let mut out = vec![0u8; plane.len()];
    for (y, &(ty0, ty1, fy)) in yplan.iter().enumerate() {
        for (x, &(tx0, tx1, fx)) in xplan.iter().enumerate() {
            let v = plane[y * width + x] as usize;
            let a = maps[ty0 * cols + tx0].0[v];
            let b = maps[ty0 * cols + tx1].0[v];
            let c = maps[ty1 * cols + tx0].0[v];
            let d = maps[ty1 * cols + tx1].0[v];
            let top = a + fx * (b - a);
            let bottom = c + fx * (d - c);
            let val = top + fy * (bottom - top);
            out[y * width + x] = val.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Value channel of an RGB image, quantized to 8 bits.
pub fn value_plane(img: &ImageTensor) -> Vec<u8> {
    img.as_raw()
        .chunks_exact(3)
        .map(|p| p[0].max(p[1]).max(p[2]))
        .collect()
}

/// CLAHE applied to V in HSV space; hue and saturation are left untouched.
pub fn clahe(img: &ImageTensor, params: &ClaheParams) -> Result<ImageTensor> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let v = value_plane(img);
    let mapped = clahe_plane(&v, img.width(), img.height(), params)?;
    let mut hsv = rgb_to_hsv(img);
    for (p, &nv) in hsv.data.iter_mut().zip(&mapped) {
        p.v = f64::from(nv) / 255.0;
    }
    Ok(hsv_to_rgb(&hsv))
}

// ---------------------------------------------------------------------------
// Eye-region noise
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Standard deviation in `[0, 255]` units.
    pub sigma: f64,
    /// Growth of the eye-pair bounding box on every side, as a fraction of the inter-eye distance.
    pub region_expand: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma: 8.0,
            region_expand: 0.4,
            seed: 0,
        }
    }
}

/// Inclusive pixel bounds `(x0, y0, x1, y1)` of the noise region, clipped to the image.
pub fn eye_region(ann: &FaceAnnotation, expand: f64, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    let margin = expand * ann.eye_distance();
    let lo_x = (ann.left_eye.x.min(ann.right_eye.x) - margin).floor().max(0.0);
    let lo_y = (ann.left_eye.y.min(ann.right_eye.y) - margin).floor().max(0.0);
    let hi_x = (ann.left_eye.x.max(ann.right_eye.x) + margin).ceil().min(width as f64 - 1.0);
    let hi_y = (ann.left_eye.y.max(ann.right_eye.y) + margin).ceil().min(height as f64 - 1.0);
    if hi_x < lo_x || hi_y < lo_y {
        return None;
    }
    Some((lo_x as usize, lo_y as usize, hi_x as usize, hi_y as usize))
}

/// Adds i.i.d. Gaussian noise to every channel inside the eye region.
pub fn add_eye_region_noise(img: &ImageTensor, ann: &FaceAnnotation, params: &NoiseParams) -> Result<ImageTensor> {
    if !(params.sigma >= 0.0) || !(params.region_expand >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma and region_expand must be >= 0, got {} / {}",
            params.sigma, params.region_expand
        )));
    }
    let mut out = img.clone();
    if params.sigma == 0.0 {
        return Ok(out);
    }
    let Some((x0, y0, x1, y1)) = eye_region(ann, params.region_expand, img.width(), img.height()) else {
        return Ok(out);
    };
    let normal = Normal::new(0.0, params.sigma).expect("sigma is finite and positive");
    for y in y0..=y1 {
        for x in x0..=x1 {
            let idx = (y * img.width() + x) as u64;
            let mut rng = seed::rng(params.seed, seed::stream::EYE_NOISE, idx);
            let p = img.get(x, y);
            let q = p.map(|c| (f64::from(c) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            out.set(x, y, q);
        }
    }
    Ok(out)
}
