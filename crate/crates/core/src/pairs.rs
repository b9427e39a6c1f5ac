//! Subject-disjoint train/test split and balanced genuine/impostor pairs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentTag;
use crate::dataset::{Dataset, Label};
use crate::embed::{abs_difference_values, l2_normalize_values, EmbeddingStore};
use crate::error::{Error, Result};
use crate::manifest::{ManifestRow, Role};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Exact number of training subjects; overrides `train_fraction` when set.
    pub train_count: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            train_count: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn train_size(&self, n: usize) -> Result<usize> {
        match self.train_count {
            Some(k) if k > n => Err(Error::InvalidParameter(format!(
                "train_count {k} exceeds {n} subjects"
            ))),
            Some(k) => Ok(k),
            None => {
                if !(0.0..=1.0).contains(&self.train_fraction) {
                    return Err(Error::InvalidParameter(format!(
                        "train_fraction must be in [0, 1], got {}",
                        self.train_fraction
                    )));
                }
                Ok((self.train_fraction * n as f64).floor() as usize)
            }
        }
    }
}

/// Seeded random partition of subjects; ids are sorted first so the result
/// does not depend on input order.
pub fn split_subjects(subject_ids: &[String], spec: &SplitSpec) -> Result<Split> {
    let mut ids = subject_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::TooFewSubjects(ids.len()));
    }
    let k = spec.train_size(ids.len())?;
    let mut rng = seed::rng(spec.seed, seed::stream::SPLIT, 0);
    ids.shuffle(&mut rng);
    let mut test = ids.split_off(k);
    let mut train = ids;
    train.sort();
    test.sort();
    Ok(Split { train, test })
}

/// One subject at one augmentation tag: its selfie and its ID document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairUnit {
    pub subject: String,
    pub tag: AugmentTag,
    pub selfie_id: String,
    pub id_doc_id: String,
}

/// Builds one unit per (subject, tag) from manifest rows.
pub fn units_from_rows(rows: &[ManifestRow]) -> Result<Vec<PairUnit>> {
    let mut by_key: BTreeMap<(&str, AugmentTag), (Option<&str>, Option<&str>)> = BTreeMap::new();
    for row in rows {
        let e = by_key
            .entry((row.subject_id.as_str(), row.augment_tag))
            .or_default();
        let slot = match row.role {
            Role::Selfie => &mut e.0,
            Role::Id => &mut e.1,
        };
        // smallest image id wins when a subject has several images per role
        if slot.is_none_or(|cur| row.image_id.as_str() < cur) {
            *slot = Some(row.image_id.as_str());
        }
    }
    by_key
        .into_iter()
        .map(|((subject, tag), (selfie, id))| match (selfie, id) {
            (Some(s), Some(i)) => Ok(PairUnit {
                subject: subject.to_owned(),
                tag,
                selfie_id: s.to_owned(),
                id_doc_id: i.to_owned(),
            }),
            _ => Err(Error::ManifestIncomplete(format!(
                "subject {subject} lacks a selfie/id pair at tag {tag}"
            ))),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub selfie_id: String,
    pub id_doc_id: String,
    pub subject_a: String,
    pub subject_b: String,
    pub tag: AugmentTag,
    pub label: Label,
    pub feature: Vec<f32>,
}

fn difference(store: &EmbeddingStore, selfie: &str, id_doc: &str) -> Result<Vec<f32>> {
    let a = store
        .get(selfie)
        .ok_or_else(|| Error::IncompleteStore(selfie.to_owned()))?;
    let b = store
        .get(id_doc)
        .ok_or_else(|| Error::IncompleteStore(id_doc.to_owned()))?;
    abs_difference_values(&l2_normalize_values(a)?, &l2_normalize_values(b)?)
}

/// One genuine and one impostor pair per unit. The impostor uses the ID of a
/// uniformly drawn unit with the same tag and a different subject, from the
/// same slice of units (so impostors never cross the split).
pub fn generate_pairs(units: &[PairUnit], store: &EmbeddingStore, pair_seed: u64) -> Result<Vec<PairRecord>> {
    let mut by_tag: BTreeMap<AugmentTag, Vec<usize>> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        by_tag.entry(u.tag).or_default().push(i);
    }
    for group in by_tag.values() {
        let first = &units[group[0]].subject;
        if !group.iter().any(|&i| &units[i].subject != first) {
            return Err(Error::TooFewSubjects(1));
        }
    }

    let per_unit: Vec<Result<[PairRecord; 2]>> = units
        .par_iter()
        .map(|u| {
            let group = &by_tag[&u.tag];
            let key = seed::hash_str(&format!("{}\u{1f}{}", u.subject, u.tag));
            let mut rng = seed::rng(pair_seed, seed::stream::IMPOSTOR, key);
            let other = loop {
                let j = group[rng.random_range(0..group.len())];
                if units[j].subject != u.subject {
                    break &units[j];
                }
            };
            let genuine = PairRecord {
                selfie_id: u.selfie_id.clone(),
                id_doc_id: u.id_doc_id.clone(),
                subject_a: u.subject.clone(),
                subject_b: u.subject.clone(),
                tag: u.tag,
                label: Label::Genuine,
                feature: difference(store, &u.selfie_id, &u.id_doc_id)?,
            };
            let impostor = PairRecord {
                selfie_id: u.selfie_id.clone(),
                id_doc_id: other.id_doc_id.clone(),
                subject_a: u.subject.clone(),
                subject_b: other.subject.clone(),
                tag: u.tag,
                label: Label::Impostor,
                feature: difference(store, &u.selfie_id, &other.id_doc_id)?,
            };
            Ok([genuine, impostor])
        })
        .collect();
    let mut out = Vec::with_capacity(units.len() * 2);
    for r in per_unit {
        out.extend(r?);
    }
    Ok(out)
}

pub fn to_dataset(pairs: &[PairRecord]) -> Result<Dataset> {
    let dim = pairs.first().map_or(0, |p| p.feature.len());
    let mut d = Dataset::new(dim);
    for p in pairs {
        d.push(&p.feature, p.label)?;
    }
    Ok(d)
}

fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

/// Pair file: `dim u32, count u64`, then `label u8, dim × f32` per record,
/// all little-endian, plus a tab-separated `<path>.idx` sidecar.
pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let dim = pairs.first().map_or(0, |p| p.feature.len());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<LittleEndian>(dim as u32)?;
    w.write_u64::<LittleEndian>(pairs.len() as u64)?;
    for p in pairs {
        if p.feature.len() != dim {
            return Err(Error::dim_mismatch(dim, p.feature.len()));
        }
        w.write_u8(p.label.to_u8())?;
        for &v in &p.feature {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;

    let mut idx = BufWriter::new(File::create(index_path(path))?);
    writeln!(idx, "row\tlabel\tsubject_a\tsubject_b\tselfie_id\tid_doc_id\ttag")?;
    for (i, p) in pairs.iter().enumerate() {
        writeln!(
            idx,
            "{i}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.label.to_u8(),
            p.subject_a,
            p.subject_b,
            p.selfie_id,
            p.id_doc_id,
            p.tag
        )?;
    }
    idx.flush()?;
    Ok(())
}

pub fn read_pairs_from<R: Read>(mut r: R) -> Result<Dataset> {
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let count = r.read_u64::<LittleEndian>()?;
    let mut d = Dataset::new(dim);
    let mut row = vec![0f32; dim];
    for _ in 0..count {
        let label = Label::from_u8(r.read_u8()?)?;
        r.read_f32_into::<LittleEndian>(&mut row)?;
        d.push(&row, label)?;
    }
    Ok(d)
}

pub fn read_pairs(path: &Path) -> Result<Dataset> {
    read_pairs_from(BufReader::new(File::open(path)?))
}

/// `(subject_a, subject_b, selfie_id, id_doc_id)` per row from the sidecar index.
pub fn read_pair_index(path: &Path) -> Result<Vec<(String, String, String, String)>> {
    let reader = BufReader::new(File::open(index_path(path))?);
    let mut out = Vec::new();
    for line in reader.lines().skip(1) {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 6 {
            return Err(Error::Format(format!("bad pair index line {line:?}")));
        }
        out.push((f[2].into(), f[3].into(), f[4].into(), f[5].into()));
    }
    Ok(out)
}
