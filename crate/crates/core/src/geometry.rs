//! Geometric face preprocessing: ROI expansion, eye-line alignment and
//! bilinear resizing.
//!
//! Pixel centers sit at integer coordinates. A face chip is produced by
//! aligning the full image about the eye midpoint, expanding the (rotated)
//! face box, cropping, and resizing to the backend's square input size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Default ROI growth: width and height each scaled by 1.22 about the box center.
pub const DEFAULT_ROI_FACTOR: f64 = 0.22;

/// Minimum inter-eye distance accepted by the aligner, in pixels.
pub const MIN_EYE_DISTANCE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl Rect {
    pub const fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    fn intersects_image(&self, width: usize, height: usize) -> bool {
        self.x < width as i64 && self.y < height as i64 && self.right() > 0 && self.bottom() > 0
    }

    fn as_tuple(&self) -> (i64, i64, i64, i64) {
        (self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Detector output attached to an image: a face box plus both eye centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub left_eye: Point,
    pub right_eye: Point,
}

impl FaceAnnotation {
    /// Orders the eyes so that `left_eye.x <= right_eye.x`.
    pub fn canonicalized(mut self) -> Self {
        if self.left_eye.x > self.right_eye.x {
            std::mem::swap(&mut self.left_eye, &mut self.right_eye);
        }
        self
    }

    pub fn eye_midpoint(&self) -> Point {
        Point::new(
            (self.left_eye.x + self.right_eye.x) / 2.0,
            (self.left_eye.y + self.right_eye.y) / 2.0,
        )
    }

    pub fn eye_distance(&self) -> f64 {
        self.left_eye.distance(&self.right_eye)
    }

    /// Checks the box has positive area and overlaps a `width`×`height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.bbox.w <= 0 || self.bbox.h <= 0 {
            return Err(Error::InvalidAnnotation(format!(
                "{}: box {:?} has no area",
                self.image_id,
                self.bbox.as_tuple()
            )));
        }
        if !self.bbox.intersects_image(width, height) {
            return Err(Error::AnnotationOutOfBounds {
                box_: self.bbox.as_tuple(),
                width,
                height,
            });
        }
        Ok(())
    }
}

/// Grows `bbox` about its center without clamping to any image.
pub fn expand_roi_unclamped(bbox: Rect, factor: f64) -> Rect {
    let c = bbox.center();
    let w = (bbox.w as f64 * (1.0 + factor)).round() as i64;
    let h = (bbox.h as f64 * (1.0 + factor)).round() as i64;
    let x = (c.x - w as f64 / 2.0).round() as i64;
    let y = (c.y - h as f64 / 2.0).round() as i64;
    Rect::new(x, y, w, h)
}

/// Grows `bbox` by `factor` about its center, then clips it to the image.
pub fn expand_roi(bbox: Rect, image_dims: (usize, usize), factor: f64) -> Result<Rect> {
    let (width, height) = image_dims;
    if bbox.w <= 0 || bbox.h <= 0 {
        return Err(Error::InvalidAnnotation(format!(
            "box {:?} has no area",
            bbox.as_tuple()
        )));
    }
    if !(factor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ROI factor must be >= 0, got {factor}"
        )));
    }
    if !bbox.intersects_image(width, height) {
        return Err(Error::AnnotationOutOfBounds {
            box_: bbox.as_tuple(),
            width,
            height,
        });
    }
    let r = expand_roi_unclamped(bbox, factor);
    let x0 = r.x.max(0);
    let y0 = r.y.max(0);
    let x1 = r.right().min(width as i64);
    let y1 = r.bottom().min(height as i64);
    Ok(Rect::new(x0, y0, x1 - x0, y1 - y0))
}

/// Bilinear sample at a subpixel location. Locations more than half a pixel
/// outside the raster return `None`.
fn sample_bilinear(img: &ImageTensor, sx: f64, sy: f64) -> Option<[f64; 3]> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5 {
        return None;
    }
    let sx = sx.clamp(0.0, w - 1.0);
    let sy = sy.clamp(0.0, h - 1.0);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) + fx * (f64::from(p10[c]) - f64::from(p00[c]));
        let bottom = f64::from(p01[c]) + fx * (f64::from(p11[c]) - f64::from(p01[c]));
        out[c] = top + fy * (bottom - top);
    }
    Some(out)
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// In-plane rotation about `center` by `angle` radians (image coordinates, y down).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub center: Point,
    pub angle: f64,
}

impl Rotation {
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point::new(
            self.center.x + c * dx - s * dy,
            self.center.y + s * dx + c * dy,
        )
    }

    pub fn inverse(&self) -> Rotation {
        Rotation {
            center: self.center,
            angle: -self.angle,
        }
    }

    /// Resamples `img` so that output pixel `q` takes the value at
    /// `inverse(q)` in the source. Returns the image and the number of
    /// black-filled pixels.
    pub fn warp(&self, img: &ImageTensor) -> (ImageTensor, usize) {
        if self.angle == 0.0 {
            return (img.clone(), 0);
        }
        let inv = self.inverse();
        let mut out = ImageTensor::new(img.width(), img.height());
        let mut filled = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                let s = inv.apply(Point::new(x as f64, y as f64));
                match sample_bilinear(img, s.x, s.y) {
                    Some(v) => out.set(x, y, [to_u8(v[0]), to_u8(v[1]), to_u8(v[2])]),
                    None => filled += 1,
                }
            }
        }
        (out, filled)
    }
}

#[derive(Clone, Debug)]
pub struct Aligned {
    pub image: ImageTensor,
    pub annotation: FaceAnnotation,
    pub rotation: Rotation,
    pub fill_pixels: usize,
}

/// Rotates the image about the eye midpoint so both eyes share one row.
///
/// The face box is carried along by rotating its center; its size is kept.
pub fn align_by_eyes(img: &ImageTensor, ann: &FaceAnnotation) -> Result<Aligned> {
    let ann = ann.clone().canonicalized();
    let distance = ann.eye_distance();
    if !(distance >= MIN_EYE_DISTANCE) {
        return Err(Error::DegenerateLandmarks { distance });
    }
    let dx = ann.right_eye.x - ann.left_eye.x;
    let dy = ann.right_eye.y - ann.left_eye.y;
    let rotation = Rotation {
        center: ann.eye_midpoint(),
        angle: -dy.atan2(dx),
    };
    let (image, fill_pixels) = rotation.warp(img);

    let c = rotation.apply(ann.bbox.center());
    let bbox = Rect::new(
        (c.x - ann.bbox.w as f64 / 2.0).round() as i64,
        (c.y - ann.bbox.h as f64 / 2.0).round() as i64,
        ann.bbox.w,
        ann.bbox.h,
    );
    let annotation = FaceAnnotation {
        image_id: ann.image_id.clone(),
        bbox,
        left_eye: rotation.apply(ann.left_eye),
        right_eye: rotation.apply(ann.right_eye),
    };
    Ok(Aligned {
        image,
        annotation,
        rotation,
        fill_pixels,
    })
}

/// Bilinear resize with half-pixel-center alignment.
pub fn resize_bilinear(img: &ImageTensor, target: (usize, usize)) -> Result<ImageTensor> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::InvalidTarget {
            width: tw,
            height: th,
        });
    }
    if img.is_empty() {
        return Err(Error::EmptyImage);
    }
    if img.dims() == target {
        return Ok(img.clone());
    }
    let sx_scale = img.width() as f64 / tw as f64;
    let sy_scale = img.height() as f64 / th as f64;
    let mut out = ImageTensor::new(tw, th);
    for y in 0..th {
        let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (img.height() - 1) as f64);
        for x in 0..tw {
            let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (img.width() - 1) as f64);
            let v = sample_bilinear(img, sx, sy).expect("clamped sample is in range");
            out.set(x, y, [to_u8(v[0]), to_u8(v[1]), to_u8(v[2])]);
        }
    }
    Ok(out)
}

/// One recorded step of face-chip construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformStep {
    Align {
        rotation: Rotation,
        fill_pixels: usize,
    },
    ExpandRoi {
        factor: f64,
        rect: Rect,
    },
    Crop {
        rect: Rect,
    },
    Resize {
        from: (usize, usize),
        to: (usize, usize),
    },
}

impl TransformStep {
    /// Maps a point in this step's input frame to its output frame.
    pub fn map_point(&self, p: Point) -> Point {
        match self {
            TransformStep::Align { rotation, .. } => rotation.apply(p),
            TransformStep::ExpandRoi { .. } => p,
            TransformStep::Crop { rect } => Point::new(p.x - rect.x as f64, p.y - rect.y as f64),
            TransformStep::Resize { from, to } => Point::new(
                (p.x + 0.5) * to.0 as f64 / from.0 as f64 - 0.5,
                (p.y + 0.5) * to.1 as f64 / from.1 as f64 - 0.5,
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaceChip {
    pub pixels: ImageTensor,
    pub source: String,
    pub transform_log: Vec<TransformStep>,
    /// Eye landmarks in chip coordinates; the box covers the whole chip.
    pub annotation: FaceAnnotation,
}

impl FaceChip {
    pub fn map_point(&self, p: Point) -> Point {
        self.transform_log.iter().fold(p, |q, step| step.map_point(q))
    }
}

/// Align, expand, crop and resize one annotated face into a `size`×`size` chip.
pub fn preprocess_face(
    img: &ImageTensor,
    ann: &FaceAnnotation,
    size: usize,
    roi_factor: f64,
) -> Result<FaceChip> {
    ann.validate(img.width(), img.height())?;
    let aligned = align_by_eyes(img, ann)?;
    let rect = expand_roi(aligned.annotation.bbox, aligned.image.dims(), roi_factor)?;
    let crop = aligned
        .image
        .crop(rect.x as usize, rect.y as usize, rect.w as usize, rect.h as usize);
    let pixels = resize_bilinear(&crop, (size, size))?;

    let transform_log = vec![
        TransformStep::Align {
            rotation: aligned.rotation,
            fill_pixels: aligned.fill_pixels,
        },
        TransformStep::ExpandRoi {
            factor: roi_factor,
            rect,
        },
        TransformStep::Crop { rect },
        TransformStep::Resize {
            from: (rect.w as usize, rect.h as usize),
            to: (size, size),
        },
    ];
    let mut chip = FaceChip {
        pixels,
        source: ann.image_id.clone(),
        transform_log,
        annotation: FaceAnnotation {
            image_id: ann.image_id.clone(),
            bbox: Rect::new(0, 0, size as i64, size as i64),
            left_eye: Point::new(0.0, 0.0),
            right_eye: Point::new(0.0, 0.0),
        },
    };
    let canon = ann.clone().canonicalized();
    chip.annotation.left_eye = chip.map_point(canon.left_eye);
    chip.annotation.right_eye = chip.map_point(canon.right_eye);
    Ok(chip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(bbox: Rect, l: (f64, f64), r: (f64, f64)) -> FaceAnnotation {
        FaceAnnotation {
            image_id: "t".into(),
            bbox,
            left_eye: Point::new(l.0, l.1),
            right_eye: Point::new(r.0, r.1),
        }
    }

    fn gradient_image(w: usize, h: usize) -> ImageTensor {
        let mut img = ImageTensor::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let fx = x as f64 / w as f64;
                let fy = y as f64 / h as f64;
                let r = (128.0 + 100.0 * (fx * 6.0).sin() * (fy * 4.0).cos()) as u8;
                let g = (255.0 * fx) as u8;
                let b = (255.0 * fy) as u8;
                img.set(x, y, [r, g, b]);
            }
        }
        img
    }

    #[test]
    fn expand_roi_examples() {
        let r = expand_roi(Rect::new(100, 100, 100, 100), (400, 400), 0.22).unwrap();
        assert_eq!(r, Rect::new(89, 89, 122, 122));
        let r = expand_roi(Rect::new(0, 0, 50, 50), (400, 400), 0.0).unwrap();
        assert_eq!(r, Rect::new(0, 0, 50, 50));
        // unclamped: (-11,-11,122,122), clipped to the 110x110 frame
        let r = expand_roi(Rect::new(0, 0, 100, 100), (110, 110), 0.22).unwrap();
        assert_eq!(r, Rect::new(0, 0, 110, 110));
    }

    #[test]
    fn expand_roi_rejects_outside_box() {
        let err = expand_roi(Rect::new(500, 500, 20, 20), (400, 400), 0.22).unwrap_err();
        assert!(matches!(err, Error::AnnotationOutOfBounds { .. }));
    }

    #[test]
    fn align_horizontal_eyes_is_identity() {
        let img = gradient_image(120, 100);
        let a = align_by_eyes(&img, &ann(Rect::new(20, 20, 80, 80), (40.0, 60.0), (80.0, 60.0))).unwrap();
        assert_eq!(a.rotation.angle, 0.0);
        assert_eq!(a.image, img);
    }

    #[test]
    fn align_diagonal_eyes_rotates_minus_45() {
        let img = gradient_image(120, 120);
        let a = align_by_eyes(&img, &ann(Rect::new(20, 20, 80, 80), (40.0, 40.0), (80.0, 80.0))).unwrap();
        assert!((a.rotation.angle.to_degrees() + 45.0).abs() < 1e-12);
        assert!((a.annotation.left_eye.y - a.annotation.right_eye.y).abs() < 1e-9);
    }

    #[test]
    fn align_rejects_coincident_eyes() {
        let img = gradient_image(50, 50);
        let err = align_by_eyes(&img, &ann(Rect::new(5, 5, 40, 40), (20.0, 20.0), (20.0, 20.0))).unwrap_err();
        assert!(matches!(err, Error::DegenerateLandmarks { .. }));
        let err = align_by_eyes(&img, &ann(Rect::new(5, 5, 40, 40), (20.0, 20.0), (22.0, 21.0))).unwrap_err();
        assert!(matches!(err, Error::DegenerateLandmarks { .. }));
    }

    #[test]
    fn align_swapped_eyes_are_canonicalized() {
        let img = gradient_image(100, 100);
        let a = align_by_eyes(&img, &ann(Rect::new(10, 10, 80, 80), (70.0, 50.0), (30.0, 40.0))).unwrap();
        assert!(a.annotation.left_eye.x < a.annotation.right_eye.x);
        assert!((a.annotation.left_eye.y - a.annotation.right_eye.y).abs() < 1e-9);
    }

    #[test]
    fn align_is_idempotent() {
        let img = gradient_image(128, 128);
        let a1 = align_by_eyes(&img, &ann(Rect::new(24, 24, 80, 80), (44.0, 50.0), (84.0, 62.0))).unwrap();
        let a2 = align_by_eyes(&a1.image, &a1.annotation).unwrap();
        assert!(a1.image.mean_abs_diff(&a2.image) <= 2.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = gradient_image(224, 224);
        assert_eq!(resize_bilinear(&img, (224, 224)).unwrap(), img);
        let c = ImageTensor::filled(100, 80, [37, 99, 201]);
        let r = resize_bilinear(&c, (96, 96)).unwrap();
        assert_eq!(r, ImageTensor::filled(96, 96, [37, 99, 201]));
    }

    #[test]
    fn resize_two_by_two_rows_nondecreasing() {
        // Hand evaluation: target rows map to source y = -0.25, 0.25, 0.75, 1.25,
        // clamped to 0, 0.25, 0.75, 1 -> values 0, 63.75, 191.25, 255.
        let img = ImageTensor::from_gray(2, 2, &[0, 0, 255, 255]).unwrap();
        let r = resize_bilinear(&img, (4, 4)).unwrap();
        let rows: Vec<u8> = (0..4).map(|y| r.get(0, y)[0]).collect();
        assert_eq!(rows, vec![0, 64, 191, 255]);
        for y in 1..4 {
            for x in 0..4 {
                assert!(r.get(x, y)[0] >= r.get(x, y - 1)[0]);
            }
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = gradient_image(10, 10);
        assert!(matches!(
            resize_bilinear(&img, (0, 5)),
            Err(Error::InvalidTarget { .. })
        ));
    }

    #[test]
    fn preprocess_logs_four_steps_in_order() {
        let img = gradient_image(160, 160);
        let a = ann(Rect::new(40, 40, 80, 80), (60.0, 70.0), (100.0, 70.0));
        let chip = preprocess_face(&img, &a, 96, DEFAULT_ROI_FACTOR).unwrap();
        let kinds: Vec<&str> = chip
            .transform_log
            .iter()
            .map(|s| match s {
                TransformStep::Align { .. } => "align",
                TransformStep::ExpandRoi { .. } => "expand",
                TransformStep::Crop { .. } => "crop",
                TransformStep::Resize { .. } => "resize",
            })
            .collect();
        assert_eq!(kinds, ["align", "expand", "crop", "resize"]);
        assert_eq!(chip.pixels.dims(), (96, 96));
    }

    #[test]
    fn preprocess_horizontal_eyes_is_crop_and_resize() {
        let img = gradient_image(160, 160);
        let a = ann(Rect::new(40, 40, 80, 80), (60.0, 70.0), (100.0, 70.0));
        let chip = preprocess_face(&img, &a, 96, DEFAULT_ROI_FACTOR).unwrap();
        let rect = expand_roi(a.bbox, (160, 160), DEFAULT_ROI_FACTOR).unwrap();
        let expected = resize_bilinear(
            &img.crop(rect.x as usize, rect.y as usize, rect.w as usize, rect.h as usize),
            (96, 96),
        )
        .unwrap();
        assert_eq!(chip.pixels, expected);
    }

    #[test]
    fn preprocess_rejects_box_outside_image() {
        let img = gradient_image(100, 100);
        let a = ann(Rect::new(200, 200, 50, 50), (210.0, 220.0), (230.0, 220.0));
        assert!(matches!(
            preprocess_face(&img, &a, 96, DEFAULT_ROI_FACTOR),
            Err(Error::AnnotationOutOfBounds { .. })
        ));
    }
}
