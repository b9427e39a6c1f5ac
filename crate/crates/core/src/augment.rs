//! The ×8 augmentation cascade: eye-region noise, then HSV brightness on the
//! originals and noisy images, then CLAHE on everything produced so far.
//!
//! Each source image yields its eight variants independently of every other
//! source, so the cascade is parallel across rows and still deterministic.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{ManifestRow, Stage};
use crate::photometric::{self, ClaheParams, NoiseParams};
use crate::seed;
use crate::tensor::ImageTensor;

/// Which transforms produced a variant: bit 2 = noise, bit 1 = brightness, bit 0 = CLAHE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AugmentTag(u8);

impl AugmentTag {
    pub const ORIGINAL: AugmentTag = AugmentTag(0);
    const NOISE: u8 = 0b100;
    const BRIGHTNESS: u8 = 0b010;
    const CLAHE: u8 = 0b001;

    pub fn new(noise: bool, brightness: bool, clahe: bool) -> Self {
        AugmentTag(
            (u8::from(noise) * Self::NOISE)
                | (u8::from(brightness) * Self::BRIGHTNESS)
                | (u8::from(clahe) * Self::CLAHE),
        )
    }

    pub fn all() -> impl Iterator<Item = AugmentTag> {
        (0..8).map(AugmentTag)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn noise(self) -> bool {
        self.0 & Self::NOISE != 0
    }

    pub fn brightness(self) -> bool {
        self.0 & Self::BRIGHTNESS != 0
    }

    pub fn clahe(self) -> bool {
        self.0 & Self::CLAHE != 0
    }

    fn with(self, flag: u8) -> Self {
        AugmentTag(self.0 | flag)
    }
}

impl fmt::Display for AugmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            u8::from(self.noise()),
            u8::from(self.brightness()),
            u8::from(self.clahe())
        )
    }
}

impl TryFrom<String> for AugmentTag {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        let b = s.as_bytes();
        if b.len() != 3 || !b.iter().all(|c| *c == b'0' || *c == b'1') {
            return Err(format!("augment tag must be three binary digits, got {s:?}"));
        }
        Ok(AugmentTag::new(b[0] == b'1', b[1] == b'1', b[2] == b'1'))
    }
}

impl From<AugmentTag> for String {
    fn from(t: AugmentTag) -> String {
        t.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrightnessRange {
    pub decrease: (f64, f64),
    pub increase: (f64, f64),
}

impl Default for BrightnessRange {
    fn default() -> Self {
        Self {
            decrease: (0.6, 0.9),
            increase: (1.1, 1.4),
        }
    }
}

impl BrightnessRange {
    /// Picks a side with equal probability, then a factor uniformly within it.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = if rng.random_bool(0.5) {
            self.decrease
        } else {
            self.increase
        };
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub noise: NoiseParams,
    pub brightness: BrightnessRange,
    pub clahe: ClaheParams,
}

/// Id of the variant of `source_id` carrying `tag`.
pub fn variant_id(source_id: &str, tag: AugmentTag) -> String {
    format!("{source_id}_t{tag}")
}

/// How one variant is rendered from its source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub tag: AugmentTag,
    pub noise_seed: Option<u64>,
    pub brightness: Option<f64>,
    pub clahe: bool,
}

/// The eight recipes for one source image, in cascade order: original, noise,
/// then the brightness variants of both, then CLAHE variants of all four.
pub fn recipes(source_id: &str, params: &AugmentParams, master_seed: u64) -> Vec<Recipe> {
    let key = seed::hash_str(source_id);
    let mut out = vec![Recipe {
        tag: AugmentTag::ORIGINAL,
        noise_seed: None,
        brightness: None,
        clahe: false,
    }];
    // stage 1
    out.push(Recipe {
        tag: AugmentTag::ORIGINAL.with(AugmentTag::NOISE),
        noise_seed: Some(seed::derive(master_seed, seed::stream::AUGMENT_NOISE, key)),
        brightness: None,
        clahe: false,
    });
    // stage 2
    for i in 0..2 {
        let parent = out[i].clone();
        let tag = parent.tag.with(AugmentTag::BRIGHTNESS);
        let mut rng = seed::rng(
            master_seed,
            seed::stream::BRIGHTNESS,
            seed::hash_str(&variant_id(source_id, tag)),
        );
        out.push(Recipe {
            tag,
            brightness: Some(params.brightness.draw(&mut rng)),
            ..parent
        });
    }
    // stage 3
    for i in 0..4 {
        let parent = out[i].clone();
        out.push(Recipe {
            tag: parent.tag.with(AugmentTag::CLAHE),
            clahe: true,
            ..parent
        });
    }
    out
}

fn check_row(row: &ManifestRow) -> Result<()> {
    if row.stage == Stage::Raw || row.path.is_empty() {
        return Err(Error::ManifestIncomplete(format!(
            "{} has no face chip (stage {:?})",
            row.image_id, row.stage
        )));
    }
    Ok(())
}

fn variant_row(source: &ManifestRow, tag: AugmentTag, path: String) -> ManifestRow {
    ManifestRow {
        image_id: variant_id(&source.image_id, tag),
        path,
        augment_tag: tag,
        stage: Stage::Augmented,
        ..source.clone()
    }
}

/// Output manifest rows (eight per input, grouped by source) without rendering pixels.
pub fn plan_augmentation(rows: &[ManifestRow]) -> Result<Vec<ManifestRow>> {
    let mut out = Vec::with_capacity(rows.len() * 8);
    for row in rows {
        check_row(row)?;
        for tag in AugmentTag::all() {
            out.push(variant_row(row, tag, format!("{}.png", variant_id(&row.image_id, tag))));
        }
    }
    Ok(out)
}

/// Renders one recipe from its source chip.
pub fn render(img: &ImageTensor, row: &ManifestRow, recipe: &Recipe, params: &AugmentParams) -> Result<ImageTensor> {
    let mut out = img.clone();
    if let Some(s) = recipe.noise_seed {
        let noise = NoiseParams {
            seed: s,
            ..params.noise.clone()
        };
        out = photometric::add_eye_region_noise(&out, &row.annotation(), &noise)?;
    }
    if let Some(f) = recipe.brightness {
        out = photometric::scale_brightness_hsv(&out, f)?;
    }
    if recipe.clahe {
        out = photometric::clahe(&out, &params.clahe)?;
    }
    Ok(out)
}

/// All eight variants of one source chip with their manifest rows.
pub fn augment_source(
    img: &ImageTensor,
    row: &ManifestRow,
    params: &AugmentParams,
    master_seed: u64,
) -> Result<Vec<(ManifestRow, ImageTensor)>> {
    check_row(row)?;
    recipes(&row.image_id, params, master_seed)
        .iter()
        .map(|r| {
            let pixels = render(img, row, r, params)?;
            let out_row = variant_row(row, r.tag, format!("{}.png", variant_id(&row.image_id, r.tag)));
            Ok((out_row, pixels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Rect};
    use crate::manifest::Role;
    use std::collections::BTreeSet;

    fn chip_row(id: &str, subject: &str, role: Role) -> ManifestRow {
        ManifestRow {
            image_id: id.into(),
            subject_id: subject.into(),
            role,
            path: format!("{id}.png"),
            bbox: Rect::new(0, 0, 48, 48),
            left_eye: Point::new(14.0, 20.0),
            right_eye: Point::new(34.0, 20.0),
            augment_tag: AugmentTag::ORIGINAL,
            stage: Stage::Normalized,
        }
    }

    fn textured(seed: u8) -> ImageTensor {
        let mut img = ImageTensor::new(48, 48);
        for y in 0..48 {
            for x in 0..48 {
                let v = ((x * 5 + y * 3) as u8).wrapping_add(seed);
                img.set(x, y, [v, v / 2 + 40, 200 - v / 3]);
            }
        }
        img
    }

    #[test]
    fn tag_string_round_trip() {
        for t in AugmentTag::all() {
            assert_eq!(AugmentTag::try_from(t.to_string()).unwrap(), t);
        }
        assert!(AugmentTag::try_from("12".to_string()).is_err());
    }

    #[test]
    fn four_rows_give_thirty_two_with_distinct_tags() {
        let rows: Vec<_> = (0..2)
            .flat_map(|s| {
                [
                    chip_row(&format!("s{s}_selfie"), &format!("s{s}"), Role::Selfie),
                    chip_row(&format!("s{s}_id"), &format!("s{s}"), Role::Id),
                ]
            })
            .collect();
        let out = plan_augmentation(&rows).unwrap();
        assert_eq!(out.len(), 32);
        for chunk in out.chunks(8) {
            let tags: BTreeSet<_> = chunk.iter().map(|r| r.augment_tag).collect();
            assert_eq!(tags.len(), 8);
        }
        let selfies = out.iter().filter(|r| r.role == Role::Selfie).count();
        assert_eq!(selfies, 16);
    }

    #[test]
    fn cascade_order_and_tags() {
        let r = recipes("x", &AugmentParams::default(), 3);
        let tags: Vec<String> = r.iter().map(|r| r.tag.to_string()).collect();
        assert_eq!(tags, ["000", "100", "010", "110", "001", "101", "011", "111"]);
        for rec in &r {
            if let Some(f) = rec.brightness {
                assert!((0.6..0.9).contains(&f) || (1.1..1.4).contains(&f), "{f}");
            }
        }
    }

    #[test]
    fn original_passes_through_and_is_deterministic() {
        let row = chip_row("a", "s", Role::Selfie);
        let img = textured(9);
        let a = augment_source(&img, &row, &AugmentParams::default(), 17).unwrap();
        let b = augment_source(&img, &row, &AugmentParams::default(), 17).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a[0].1, img);
        for ((ra, ia), (rb, ib)) in a.iter().zip(&b) {
            assert_eq!(ra, rb);
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn raw_rows_are_rejected() {
        let mut row = chip_row("a", "s", Role::Selfie);
        row.stage = Stage::Raw;
        assert!(matches!(
            plan_augmentation(&[row]),
            Err(Error::ManifestIncomplete(_))
        ));
    }
}
