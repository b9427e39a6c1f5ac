//! Line-delimited JSON manifest: one image record per line.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentTag;
use crate::error::{Error, Result};
use crate::geometry::{FaceAnnotation, Point, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Selfie,
    Id,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Selfie => "selfie",
            Role::Id => "id",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Chip,
    Normalized,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image_id: String,
    pub subject_id: String,
    pub role: Role,
    /// Image location, relative to the manifest's directory unless absolute.
    pub path: String,
    #[serde(rename = "box")]
    pub bbox: Rect,
    pub left_eye: Point,
    pub right_eye: Point,
    #[serde(default)]
    pub augment_tag: AugmentTag,
    pub stage: Stage,
}

impl ManifestRow {
    pub fn annotation(&self) -> FaceAnnotation {
        FaceAnnotation {
            image_id: self.image_id.clone(),
            bbox: self.bbox,
            left_eye: self.left_eye,
            right_eye: self.right_eye,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut rows = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for row in &self.rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Resolves a row's image path against the directory holding the manifest.
    pub fn resolve(base_dir: &Path, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }

    /// Unique image ids, and a selfie plus an ID row for every subject at each stage it appears in.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.image_id.as_str()) {
                return Err(Error::ManifestIncomplete(format!(
                    "duplicate image_id {}",
                    row.image_id
                )));
            }
        }
        let mut roles: BTreeMap<(&str, Stage), (bool, bool)> = BTreeMap::new();
        for row in &self.rows {
            let e = roles.entry((row.subject_id.as_str(), row.stage)).or_default();
            match row.role {
                Role::Selfie => e.0 = true,
                Role::Id => e.1 = true,
            }
        }
        for ((subject, stage), (selfie, id)) in roles {
            if !selfie || !id {
                let missing = if selfie { "id" } else { "selfie" };
                return Err(Error::ManifestIncomplete(format!(
                    "subject {subject} has no {missing} row at stage {stage:?}"
                )));
            }
        }
        Ok(())
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|r| r.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, subject: &str, role: Role) -> ManifestRow {
        ManifestRow {
            image_id: id.into(),
            subject_id: subject.into(),
            role,
            path: format!("{id}.png"),
            bbox: Rect::new(0, 0, 10, 10),
            left_eye: Point::new(2.0, 3.0),
            right_eye: Point::new(7.0, 3.0),
            augment_tag: AugmentTag::ORIGINAL,
            stage: Stage::Raw,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(vec![row("a", "s1", Role::Selfie), row("b", "s1", Role::Id)]);
        let p = dir.path().join("m.jsonl");
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
        m.validate().unwrap();
    }

    #[test]
    fn missing_id_row_names_subject() {
        let m = Manifest::new(vec![
            row("a", "s1", Role::Selfie),
            row("b", "s1", Role::Id),
            row("c", "s2", Role::Selfie),
        ]);
        let err = m.validate().unwrap_err();
        assert!(matches!(err, Error::ManifestIncomplete(ref msg) if msg.contains("s2")));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = Manifest::new(vec![row("a", "s1", Role::Selfie), row("a", "s1", Role::Id)]);
        assert!(m.validate().is_err());
    }
}
