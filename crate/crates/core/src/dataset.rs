//! Labeled difference-vector datasets shared by the classifiers and evaluators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Impostor,
    Genuine,
}

impl Label {
    pub fn from_bool(genuine: bool) -> Self {
        if genuine {
            Label::Genuine
        } else {
            Label::Impostor
        }
    }

    pub fn is_genuine(self) -> bool {
        self == Label::Genuine
    }

    /// +1 for genuine, −1 for impostor.
    pub fn sign(self) -> f64 {
        if self.is_genuine() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn flipped(self) -> Self {
        Label::from_bool(!self.is_genuine())
    }

    pub fn to_u8(self) -> u8 {
        u8::from(self.is_genuine())
    }

    pub fn from_u8(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Label::Impostor),
            1 => Ok(Label::Genuine),
            other => Err(Error::Format(format!("bad label byte {other}"))),
        }
    }
}

/// Row-major feature matrix with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f32>,
    labels: Vec<Label>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f32>], labels: &[Label]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut d = Self::new(dim);
        if rows.len() != labels.len() {
            return Err(Error::dim_mismatch(rows.len(), labels.len()));
        }
        for (r, &l) in rows.iter().zip(labels) {
            d.push(r, l)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, row: &[f32], label: Label) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::dim_mismatch(self.dim, row.len()));
        }
        self.features.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.features.chunks_exact(self.dim.max(1)).take(self.len())
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    /// Same features with every label flipped.
    pub fn with_flipped_labels(&self) -> Self {
        Self {
            dim: self.dim,
            features: self.features.clone(),
            labels: self.labels.iter().map(|l| l.flipped()).collect(),
        }
    }

    /// Rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut d = Self::new(self.dim);
        for &i in order {
            d.features.extend_from_slice(self.row(i));
            d.labels.push(self.labels[i]);
        }
        d
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let g = self.labels.iter().filter(|l| l.is_genuine()).count();
        (self.len() - g, g)
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let (imp, gen) = self.class_counts();
        if imp == 0 || gen == 0 {
            return Err(Error::DegenerateLabels);
        }
        Ok(())
    }
}
