//! Synthetic stand-ins for a private selfie/ID dataset: identity-pattern
//! images with annotations, an embedding oracle with a controllable domain
//! gap, and a deterministic image-to-vector extractor.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentTag;
use crate::embed::{l2_normalize_values, EmbeddingStore};
use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
use crate::manifest::{Manifest, ManifestRow, Role, Stage};
use crate::seed;
use crate::tensor::ImageTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub image_size: usize,
    pub embedding_dim: usize,
    pub domain_shift_strength: f64,
    pub noise_sigma: f64,
    /// Per-coordinate standard deviation of the identity latent; `1/sqrt(dim)` when unset,
    /// which gives the latent unit expected norm.
    pub latent_std: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 50,
            image_size: 128,
            embedding_dim: 128,
            domain_shift_strength: 0.2,
            noise_sigma: 0.1,
            latent_std: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn latent_std(&self) -> f64 {
        self.latent_std
            .unwrap_or_else(|| 1.0 / (self.embedding_dim.max(1) as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::TooFewSubjects(self.n_subjects));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidParameter("embedding_dim must be >= 1".into()));
        }
        if self.image_size < 32 {
            return Err(Error::InvalidParameter(format!(
                "image_size must be >= 32, got {}",
                self.image_size
            )));
        }
        for (name, v) in [
            ("domain_shift_strength", self.domain_shift_strength),
            ("noise_sigma", self.noise_sigma),
            ("latent_std", self.latent_std()),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn subject_id(i: usize) -> String {
    format!("s{i:05}")
}

pub fn image_id(subject: &str, role: Role) -> String {
    format!("{subject}_{}", role.as_str())
}

/// Face box and eye points shared by every synthetic image of side `size`.
pub fn synthetic_annotation(size: usize) -> (Rect, Point, Point) {
    let s = size as f64;
    let side = (0.6 * s).round() as i64;
    let x0 = ((s - side as f64) / 2.0).round() as i64;
    let bbox = Rect::new(x0, x0, side, side);
    let y = (0.42 * s).round();
    (bbox, Point::new((0.36 * s).round(), y), Point::new((0.64 * s).round(), y))
}

#[derive(Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Bar { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0,
            Shape::Bar { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

fn random_color<R: Rng>(rng: &mut R) -> [u8; 3] {
    [rng.random_range(30..=225), rng.random_range(30..=225), rng.random_range(30..=225)]
}

/// Clean rendering of subject `index`'s identity pattern.
pub fn identity_pattern(spec: &SynthSpec, index: usize) -> ImageTensor {
    let size = spec.image_size;
    let s = size as f64;
    let mut rng = seed::rng(spec.seed, seed::stream::SYNTH_IMAGE, index as u64);
    let (bbox, le, re) = synthetic_annotation(size);
    let background = random_color(&mut rng);
    let skin = random_color(&mut rng);
    let (bx, by, bw) = (bbox.x as f64, bbox.y as f64, bbox.w as f64);

    let mut shapes: Vec<(Shape, [u8; 3])> = vec![(
        Shape::Ellipse {
            cx: s / 2.0,
            cy: s / 2.0,
            rx: bw * rng.random_range(0.38..0.5),
            ry: bw * rng.random_range(0.45..0.5),
        },
        skin,
    )];
    for _ in 0..rng.random_range(4..8) {
        let color = random_color(&mut rng);
        let cx = bx + bw * rng.random_range(0.1..0.9);
        let cy = by + bw * rng.random_range(0.1..0.9);
        let a = bw * rng.random_range(0.05..0.25);
        let b = bw * rng.random_range(0.05..0.25);
        let shape = if rng.random_bool(0.5) {
            Shape::Ellipse { cx, cy, rx: a, ry: b }
        } else {
            Shape::Bar {
                x0: cx - a,
                y0: cy - b / 2.0,
                x1: cx + a,
                y1: cy + b / 2.0,
            }
        };
        shapes.push((shape, color));
    }
    let eye_r = (0.035 * s).max(1.5);
    for e in [le, re] {
        shapes.push((
            Shape::Ellipse {
                cx: e.x,
                cy: e.y,
                rx: eye_r * 1.4,
                ry: eye_r,
            },
            [20, 20, 25],
        ));
    }

    let mut img = ImageTensor::filled(size, size, background);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            if let Some((_, c)) = shapes.iter().rev().find(|(sh, _)| sh.contains(fx, fy)) {
                img.set(x, y, *c);
            }
        }
    }
    img
}

fn luma(p: [u8; 3]) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

fn box_blur(img: &ImageTensor) -> ImageTensor {
    let (w, h) = img.dims();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            let mut n = 0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let p = img.get(xx, yy);
                    for c in 0..3 {
                        acc[c] += u32::from(p[c]);
                    }
                    n += 1;
                }
            }
            out.set(x, y, acc.map(|a| ((a + n / 2) / n) as u8));
        }
    }
    out
}

/// ID-document look: desaturated toward luma, blurred, contrast compressed toward mid-gray.
pub fn id_style(img: &ImageTensor) -> ImageTensor {
    let (w, h) = img.dims();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y);
            let l = luma(p);
            out.set(
                x,
                y,
                p.map(|c| {
                    let desat = l + 0.4 * (f64::from(c) - l);
                    (128.0 + 0.7 * (desat - 128.0)).round().clamp(0.0, 255.0) as u8
                }),
            );
        }
    }
    box_blur(&box_blur(&out))
}

/// Renders every subject's selfie and ID image into `out_dir` and returns their manifest.
pub fn synth_images(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (bbox, left_eye, right_eye) = synthetic_annotation(spec.image_size);
    let rows: Vec<Vec<ManifestRow>> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| {
            let subject = subject_id(i);
            let selfie = identity_pattern(spec, i);
            let id_doc = id_style(&selfie);
            let mut rows = Vec::with_capacity(2);
            for (role, img) in [(Role::Selfie, selfie), (Role::Id, id_doc)] {
                let id = image_id(&subject, role);
                let file = format!("{id}.png");
                img.save(&out_dir.join(&file))?;
                rows.push(ManifestRow {
                    image_id: id,
                    subject_id: subject.clone(),
                    role,
                    path: file,
                    bbox,
                    left_eye,
                    right_eye,
                    augment_tag: AugmentTag::ORIGINAL,
                    stage: Stage::Raw,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(Manifest::new(rows.into_iter().flatten().collect()))
}

/// Gaussian matrix rescaled to unit spectral norm, row-major.
fn shift_matrix(dim: usize, seed_value: u64) -> Vec<f32> {
    let mut m: Vec<f32> = (0..dim)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut rng = seed::rng(seed_value, seed::stream::SYNTH_SHIFT, r as u64);
            (0..dim)
                .map(move |_| StandardNormal.sample(&mut rng))
                .collect::<Vec<f32>>()
        })
        .collect();
    let matvec = |m: &[f32], v: &[f64], transpose: bool| -> Vec<f64> {
        if transpose {
            let mut out = vec![0.0; dim];
            for (r, row) in m.chunks(dim).enumerate() {
                for (o, &a) in out.iter_mut().zip(row) {
                    *o += f64::from(a) * v[r];
                }
            }
            out
        } else {
            m.par_chunks(dim)
                .map(|row| row.iter().zip(v).map(|(&a, &b)| f64::from(a) * b).sum())
                .collect()
        }
    };
    // power iteration on MᵀM for the largest singular value
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut sigma = 0.0;
    for _ in 0..50 {
        let mv = matvec(&m, &v, false);
        let mtmv = matvec(&m, &mv, true);
        let norm = mtmv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        sigma = norm.sqrt();
        v = mtmv.into_iter().map(|x| x / norm).collect();
    }
    if sigma > 0.0 {
        m.iter_mut().for_each(|a| *a = (f64::from(*a) / sigma) as f32);
    }
    m
}

/// Selfie-side and ID-side embedding stores keyed by the synthetic image ids.
pub fn synth_embeddings(spec: &SynthSpec) -> Result<(EmbeddingStore, EmbeddingStore)> {
    spec.validate()?;
    let dim = spec.embedding_dim;
    let shift = (spec.domain_shift_strength > 0.0).then(|| shift_matrix(dim, spec.seed));
    let latent_std = spec.latent_std();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|i| {
            let mut zr = seed::rng(spec.seed, seed::stream::SYNTH_LATENT, i as u64);
            let z: Vec<f64> = (0..dim)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut zr);
                    latent_std * g
                })
                .collect();
            let mut nr = seed::rng(spec.seed, seed::stream::SYNTH_NOISE, i as u64);
            let selfie: Vec<f32> = z.iter().map(|&v| (v + noise.sample(&mut nr)) as f32).collect();
            let mapped: Vec<f64> = match &shift {
                Some(m) => m
                    .chunks(dim)
                    .zip(&z)
                    .map(|(row, &zi)| {
                        zi + spec.domain_shift_strength
                            * row.iter().zip(&z).map(|(&a, &b)| f64::from(a) * b).sum::<f64>()
                    })
                    .collect(),
                None => z.clone(),
            };
            let id_doc: Vec<f32> = mapped.iter().map(|&v| (v + noise.sample(&mut nr)) as f32).collect();
            Ok((l2_normalize_values(&selfie)?, l2_normalize_values(&id_doc)?))
        })
        .collect::<Result<_>>()?;

    let tag = format!("synthetic-{dim}");
    let mut selfies = EmbeddingStore::new(tag.clone(), dim);
    let mut ids = EmbeddingStore::new(tag, dim);
    for (i, (s, d)) in pairs.into_iter().enumerate() {
        let subject = subject_id(i);
        selfies.insert(image_id(&subject, Role::Selfie), s)?;
        ids.insert(image_id(&subject, Role::Id), d)?;
    }
    Ok((selfies, ids))
}

/// Manifest describing the synthetic embedding ids (no image files behind them).
pub fn embedding_manifest(spec: &SynthSpec) -> Manifest {
    let (bbox, left_eye, right_eye) = synthetic_annotation(spec.image_size);
    let rows = (0..spec.n_subjects)
        .flat_map(|i| {
            let subject = subject_id(i);
            [Role::Selfie, Role::Id].map(|role| ManifestRow {
                image_id: image_id(&subject, role),
                subject_id: subject.clone(),
                role,
                path: String::new(),
                bbox,
                left_eye,
                right_eye,
                augment_tag: AugmentTag::ORIGINAL,
                stage: Stage::Normalized,
            })
        })
        .collect();
    Manifest::new(rows)
}

/// Grid shape `(columns, rows)` with `columns * rows = dim` and rows as close to `sqrt(dim)` as possible.
pub fn feature_grid(dim: usize) -> (usize, usize) {
    let rows = (1..=(dim as f64).sqrt() as usize)
        .rev()
        .find(|r| dim % r == 0)
        .unwrap_or(1);
    (dim / rows, rows)
}

/// Deterministic stand-in for a CNN: area-averaged luma on a grid, mean-centered.
pub fn synthetic_features(img: &ImageTensor, dim: usize) -> Result<Vec<f32>> {
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (gw, gh) = feature_grid(dim);
    let (w, h) = img.dims();
    let mut cells = vec![0.0f64; gw * gh];
    let mut counts = vec![0usize; gw * gh];
    for y in 0..h {
        let cy = (y * gh / h).min(gh - 1);
        for x in 0..w {
            let cx = (x * gw / w).min(gw - 1);
            cells[cy * gw + cx] += luma(img.get(x, y));
            counts[cy * gw + cx] += 1;
        }
    }
    for (c, &n) in cells.iter_mut().zip(&counts) {
        *c /= n.max(1) as f64;
    }
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    Ok(cells.into_iter().map(|c| ((c - mean) / 255.0) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> SynthSpec {
        SynthSpec {
            n_subjects: n,
            image_size: 64,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn images_are_counted_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_images(&spec(5), dir.path()).unwrap();
        assert_eq!(m.len(), 10);
        m.validate().unwrap();
        assert_eq!(m.subjects().len(), 5);
        assert_eq!(identity_pattern(&spec(5), 3), identity_pattern(&spec(5), 3));
        let a = ImageTensor::load(&dir.path().join("s00003_selfie.png")).unwrap();
        assert_eq!(a, identity_pattern(&spec(5), 3));
    }

    #[test]
    fn id_style_differs_from_selfie() {
        let s = identity_pattern(&spec(2), 0);
        assert!(s.mean_abs_diff(&id_style(&s)) > 5.0);
    }

    #[test]
    fn zero_noise_zero_shift_gives_identical_sides() {
        let sp = SynthSpec {
            noise_sigma: 0.0,
            domain_shift_strength: 0.0,
            ..spec(10)
        };
        let (s, d) = synth_embeddings(&sp).unwrap();
        for i in 0..10 {
            let sub = subject_id(i);
            assert_eq!(s.get(&image_id(&sub, Role::Selfie)), d.get(&image_id(&sub, Role::Id)));
        }
        assert_ne!(s.get("s00000_selfie"), d.get("s00001_id"));
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let sp = spec(20);
        let (a, b) = synth_embeddings(&sp).unwrap();
        let (c, d) = synth_embeddings(&sp).unwrap();
        assert_eq!((&a, &b), (&c, &d));
        for (_, v) in a.iter().chain(b.iter()) {
            assert!((crate::embed::l2_norm(v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shift_matrix_has_unit_spectral_norm() {
        let dim = 16;
        let m = shift_matrix(dim, 3);
        // ‖M v‖ ≤ 1 for random unit v, and close to 1 for the top singular vector
        let mut rng = seed::rng(1, 0, 0);
        for _ in 0..50 {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mv: f64 = m
                .chunks(dim)
                .map(|row| row.iter().zip(&v).map(|(&a, &b)| f64::from(a) * b / n).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(mv <= 1.0 + 1e-4);
        }
    }

    #[test]
    fn feature_grid_shapes() {
        assert_eq!(feature_grid(128), (16, 8));
        assert_eq!(feature_grid(4096), (64, 64));
        assert_eq!(feature_grid(7), (7, 1));
    }

    #[test]
    fn synthetic_features_are_centered() {
        let img = identity_pattern(&spec(2), 1);
        let f = synthetic_features(&img, 128).unwrap();
        assert_eq!(f.len(), 128);
        assert!(f.iter().map(|&v| f64::from(v)).sum::<f64>().abs() < 1e-4);
    }
}
