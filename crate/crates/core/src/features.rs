//! Feature matrices: the visual embeddings every module consumes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClassId;

/// One visual embedding with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub class_id: ClassId,
    pub features: Vec<f64>,
}

/// Row-major `n x dim` matrix of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Features { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Features { dim, data: Vec::new() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::InsufficientData("no rows".into()))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows of unequal dimension".into()));
        }
        Features::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!(
                "row of dimension {} pushed into dimension {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn extend(&mut self, other: &Features) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Shape(format!("dimension {} vs {}", other.dim, self.dim)));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Rows picked by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Features {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Features { dim: self.dim, data }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for row in self.rows() {
            for (a, x) in m.iter_mut().zip(row) {
                *a += x;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Features paired with class labels, one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: Features,
    pub labels: Vec<ClassId>,
}

impl LabeledFeatures {
    pub fn new(features: Features, labels: Vec<ClassId>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        Ok(LabeledFeatures { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        LabeledFeatures {
            features: Features::empty(dim),
            labels: Vec::new(),
        }
    }

    pub fn from_records(dim: usize, records: &[FeatureRecord]) -> Result<Self> {
        let mut out = LabeledFeatures::empty(dim);
        for r in records {
            out.push(r.class_id, &r.features)?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, class_id: ClassId, row: &[f64]) -> Result<()> {
        self.features.push_row(row)?;
        self.labels.push(class_id);
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = FeatureRecord> + '_ {
        self.labels.iter().zip(self.features.rows()).map(|(&class_id, row)| FeatureRecord {
            class_id,
            features: row.to_vec(),
        })
    }

    /// Splits rows by label, preserving the original row order within a class.
    pub fn by_class(&self) -> BTreeMap<ClassId, Features> {
        let mut out: BTreeMap<ClassId, Features> = BTreeMap::new();
        for (&label, row) in self.labels.iter().zip(self.features.rows()) {
            out.entry(label)
                .or_insert_with(|| Features::empty(self.dim()))
                .push_row(row)
                .expect("same dimension");
        }
        out
    }

    /// Rows whose label is in `classes`.
    pub fn filter_classes(&self, keep: impl Fn(ClassId) -> bool) -> LabeledFeatures {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.select(&idx)
    }

    pub fn select(&self, indices: &[usize]) -> LabeledFeatures {
        LabeledFeatures {
            features: self.features.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
