use proptest::prelude::*;

use crossface::augment::AugmentTag;
use crossface::dataset::Label;
use crossface::embed::{abs_difference_values, euclidean, l2_normalize_values};
use crossface::evaluate::{accuracy, eer, roc_curve};
use crossface::geometry::{self, FaceAnnotation, Point, Rect};
use crossface::photometric::{self, ClaheParams};
use crossface::tensor::ImageTensor;

fn image(max: usize) -> impl Strategy<Value = ImageTensor> {
    (2..max, 2..max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| ImageTensor::from_raw(w, h, d).unwrap())
    })
}

fn entropy(plane: &[u8]) -> f64 {
    let mut hist = [0usize; 256];
    for &v in plane {
        hist[v as usize] += 1;
    }
    let n = plane.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Textbook global histogram equalization: `round(255 · cdf(v) / n)`.
fn plain_equalize(plane: &[u8]) -> Vec<u8> {
    let mut hist = [0usize; 256];
    for &v in plane {
        hist[v as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for v in 0..256 {
        acc += hist[v];
        cdf[v] = acc;
    }
    plane
        .iter()
        .map(|&v| (255.0 * cdf[v as usize] as f64 / plane.len() as f64).round() as u8)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expanded_roi_stays_inside_and_covers_box(
        w in 10usize..200, h in 10usize..200,
        fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.05f64..1.0, fh in 0.05f64..1.0,
        factor in 0.0f64..1.0,
    ) {
        let x = (fx * (w - 1) as f64) as i64;
        let y = (fy * (h - 1) as f64) as i64;
        let bw = ((fw * (w as i64 - x) as f64) as i64).max(1);
        let bh = ((fh * (h as i64 - y) as f64) as i64).max(1);
        let b = Rect::new(x, y, bw, bh);
        let r = geometry::expand_roi(b, (w, h), factor).unwrap();
        prop_assert!(r.x >= 0 && r.y >= 0 && r.right() <= w as i64 && r.bottom() <= h as i64);
        prop_assert!(r.w >= 1 && r.h >= 1);
        // the expanded box keeps at least the original extent minus rounding
        prop_assert!(r.x <= b.x + 1 && r.y <= b.y + 1);
        prop_assert!(r.right() >= b.right() - 1 && r.bottom() >= b.bottom() - 1);
    }

    #[test]
    fn alignment_levels_and_is_idempotent(
        lx in 5.0f64..60.0, ly in 5.0f64..75.0, rx in 5.0f64..75.0, ry in 5.0f64..75.0,
    ) {
        prop_assume!(((lx - rx).powi(2) + (ly - ry).powi(2)).sqrt() >= geometry::MIN_EYE_DISTANCE);
        let img = ImageTensor::filled(80, 80, [10, 200, 30]);
        let ann = FaceAnnotation {
            image_id: "p".into(),
            bbox: Rect::new(10, 10, 50, 50),
            left_eye: Point::new(lx, ly),
            right_eye: Point::new(rx, ry),
        };
        let once = geometry::align_by_eyes(&img, &ann).unwrap();
        let a = &once.annotation;
        prop_assert!((a.left_eye.y - a.right_eye.y).abs() <= 1e-6);
        prop_assert!((a.eye_distance() - ann.eye_distance()).abs() <= 1e-6);
        let twice = geometry::align_by_eyes(&once.image, a).unwrap();
        prop_assert_eq!(&twice.image, &once.image);
    }

    #[test]
    fn resize_keeps_constant_images_constant(w in 1usize..40, h in 1usize..40, tw in 1usize..60, th in 1usize..60, g in any::<u8>()) {
        let img = ImageTensor::filled(w, h, [g, g / 2, 255 - g]);
        let out = geometry::resize_bilinear(&img, (tw, th)).unwrap();
        prop_assert_eq!(out, ImageTensor::filled(tw, th, [g, g / 2, 255 - g]));
    }

    #[test]
    fn hsv_round_trip_is_exact(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let hsv = photometric::rgb_to_hsv_pixel([r, g, b]);
        prop_assert_eq!(photometric::hsv_to_rgb_pixel(hsv), [r, g, b]);
        prop_assert!((0.0..360.0).contains(&hsv.h) && (0.0..=1.0).contains(&hsv.s) && (0.0..=1.0).contains(&hsv.v));
    }

    #[test]
    fn brightness_scaling_inverts_on_unclipped_pixels(img in image(12), f in 0.5f64..=1.0) {
        let down = photometric::scale_brightness_hsv(&img, f).unwrap();
        let back = photometric::scale_brightness_hsv(&down, 1.0 / f).unwrap();
        for (a, b) in img.as_raw().iter().zip(back.as_raw()) {
            prop_assert!(a.abs_diff(*b) <= 2, "{} vs {}", a, b);
        }
    }

    #[test]
    fn single_tile_unclipped_clahe_is_plain_equalization(img in image(24)) {
        let v = photometric::value_plane(&img);
        prop_assume!(v.iter().any(|&x| x != v[0]));
        let params = ClaheParams { tile_grid: (1, 1), clip_limit: f64::INFINITY };
        let out = photometric::clahe_plane(&v, img.width(), img.height(), &params).unwrap();
        prop_assert_eq!(out, plain_equalize(&v));
    }

    #[test]
    fn tighter_clip_gives_no_more_entropy(img in image(64)) {
        let v = photometric::value_plane(&img);
        prop_assume!(v.iter().any(|&x| x != v[0]));
        let run = |clip: f64| {
            photometric::clahe_plane(&v, img.width(), img.height(), &ClaheParams { clip_limit: clip, ..ClaheParams::default() }).unwrap()
        };
        let (e1, e4) = (entropy(&run(1.0)), entropy(&run(4.0)));
        prop_assert!(e1 >= e4 - 1e-12, "clip 1: {}, clip 4: {}", e1, e4);
    }

    #[test]
    fn ace_output_spans_full_range(img in image(10)) {
        let out = photometric::ace_normalize(&img, &photometric::AceParams::exact(5.0)).unwrap();
        for c in 0..3 {
            let ch: Vec<u8> = out.as_raw().iter().skip(c).step_by(3).copied().collect();
            let src: Vec<u8> = img.as_raw().iter().skip(c).step_by(3).copied().collect();
            if src.iter().all(|&x| x == src[0]) {
                prop_assert!(ch.iter().all(|&x| x == 128));
            } else {
                prop_assert_eq!(*ch.iter().min().unwrap(), 0);
                prop_assert_eq!(*ch.iter().max().unwrap(), 255);
            }
        }
    }

    #[test]
    fn normalized_differences_are_bounded_and_symmetric(
        a in proptest::collection::vec(-100.0f32..100.0, 1..64),
        seed in any::<u64>(),
    ) {
        prop_assume!(a.iter().any(|&x| x != 0.0));
        let b: Vec<f32> = a.iter().enumerate().map(|(i, x)| x * ((seed >> (i % 64)) & 1) as f32 - 0.5).collect();
        prop_assume!(b.iter().any(|&x| x != 0.0));
        let (na, nb) = (l2_normalize_values(&a).unwrap(), l2_normalize_values(&b).unwrap());
        let d = abs_difference_values(&na, &nb).unwrap();
        prop_assert!(d.iter().all(|&x| (0.0..=2.0).contains(&x)));
        prop_assert_eq!(&d, &abs_difference_values(&nb, &na).unwrap());
        prop_assert!(euclidean(&na, &nb) <= 2.0 + 1e-6);
    }

    #[test]
    fn roc_is_invariant_under_monotone_transforms(
        scores in proptest::collection::vec(0.0f64..1.0, 4..100),
        bits in proptest::collection::vec(any::<bool>(), 100),
    ) {
        let mut labels: Vec<Label> = scores.iter().zip(&bits).map(|(_, &b)| Label::from_bool(b)).collect();
        labels[0] = Label::Genuine;
        labels[1] = Label::Impostor;
        let a = roc_curve(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let b = roc_curve(&warped, &labels).unwrap();
        let pts = |c: &crossface::evaluate::RocCurve| c.points.iter().map(|p| (p.fmr, p.tmr)).collect::<Vec<_>>();
        prop_assert_eq!(pts(&a), pts(&b));
        prop_assert_eq!(eer(&a), eer(&b));
        for w in a.points.windows(2) {
            prop_assert!(w[1].fmr >= w[0].fmr && w[1].tmr >= w[0].tmr);
        }
        let last = a.points.last().unwrap();
        prop_assert_eq!((a.points[0].fmr, a.points[0].tmr, last.fmr, last.tmr), (0.0, 0.0, 1.0, 1.0));
        let e = eer(&a);
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn accuracy_of_complement(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..200)) {
        let preds: Vec<Label> = bits.iter().map(|b| Label::from_bool(b.0)).collect();
        let labels: Vec<Label> = bits.iter().map(|b| Label::from_bool(b.1)).collect();
        let flipped: Vec<Label> = preds.iter().map(|p| p.flipped()).collect();
        let a = accuracy(&preds, &labels).unwrap();
        prop_assert!((accuracy(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn augment_tag_strings_round_trip(bits in 0u8..8) {
        let t = AugmentTag::new(bits & 4 != 0, bits & 2 != 0, bits & 1 != 0);
        prop_assert_eq!(t.bits(), bits);
        prop_assert_eq!(AugmentTag::try_from(t.to_string()).unwrap(), t);
    }
}
