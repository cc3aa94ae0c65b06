//! Labeled, domain-tagged feature vectors.
//!
//! A [`FeatureSet`] is the currency passed between every stage: source
//! domains for prototype training, the few-shot support set, held-out
//! evaluation data, and synthetic batches dumped for inspection.

mod synth;
pub(crate) mod table;

use std::collections::HashSet;
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

pub use synth::{synth_multidomain, SynthConfig};
pub use table::{load_feature_table, parse_feature_table, save_feature_table, write_feature_table};

/// Binary presentation class. Bona fide is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    BonaFide,
    Spoof,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::BonaFide, Label::Spoof];

    pub fn index(self) -> usize {
        match self {
            Label::BonaFide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::BonaFide),
            1 => Some(Label::Spoof),
            _ => None,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::BonaFide => Label::Spoof,
            Label::Spoof => Label::BonaFide,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::BonaFide => f.write_str("bona_fide"),
            Label::Spoof => f.write_str("spoof"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub domain: String,
    pub label: Label,
    /// Attack instrument tag; empty exactly when the record is bona fide.
    pub attack: String,
    pub vector: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(
        id: impl Into<String>,
        domain: impl Into<String>,
        label: Label,
        attack: impl Into<String>,
        vector: Vec<f64>,
    ) -> Result<Self> {
        let rec = FeatureRecord {
            id: id.into(),
            domain: domain.into(),
            label,
            attack: attack.into(),
            vector,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite vector entry"));
        }
        match (self.label, self.attack.is_empty()) {
            (Label::BonaFide, false) => Err(invalid("bona fide record carries an attack tag")),
            (Label::Spoof, true) => Err(invalid("spoof record has an empty attack tag")),
            _ => Ok(()),
        }
    }
}

/// An ordered collection of records sharing one dimension, with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dimension: usize,
    records: Vec<FeatureRecord>,
}

impl FeatureSet {
    pub fn new(dimension: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: r.vector.len(),
                });
            }
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(FeatureSet { dimension, records })
    }

    pub fn empty(dimension: usize) -> Self {
        FeatureSet {
            dimension,
            records: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FeatureRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FeatureRecord> {
        self.records.iter()
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn labels_present(&self) -> Vec<Label> {
        Label::BOTH
            .into_iter()
            .filter(|&l| self.count(l) > 0)
            .collect()
    }

    /// Records of one class, order preserved.
    pub fn of_class(&self, label: Label) -> FeatureSet {
        FeatureSet {
            dimension: self.dimension,
            records: self
                .records
                .iter()
                .filter(|r| r.label == label)
                .cloned()
                .collect(),
        }
    }

    /// Vectors of one class as the rows of a matrix.
    pub fn class_matrix(&self, label: Label) -> Array2<f64> {
        linalg::stack_rows(
            self.records
                .iter()
                .filter(|r| r.label == label)
                .map(|r| r.vector.as_slice()),
            self.dimension,
        )
    }

    pub fn matrix(&self) -> Array2<f64> {
        linalg::stack_rows(self.records.iter().map(|r| r.vector.as_slice()), self.dimension)
    }

    /// Concatenates sets of equal dimension; ids must stay unique.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a FeatureSet>) -> Result<FeatureSet> {
        let mut dim = None;
        let mut records = Vec::new();
        for s in sets {
            match dim {
                None => dim = Some(s.dimension),
                Some(d) if d != s.dimension => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: s.dimension,
                    })
                }
                _ => {}
            }
            records.extend(s.records.iter().cloned());
        }
        let dim = dim.ok_or_else(|| Error::Insufficient("no feature sets to concatenate".into()))?;
        FeatureSet::new(dim, records)
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (linalg::norm(&r.vector) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

impl<'a> IntoIterator for &'a FeatureSet {
    type Item = &'a FeatureRecord;
    type IntoIter = std::slice::Iter<'a, FeatureRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Scales every vector to unit Euclidean norm.
pub fn l2_normalize(set: &FeatureSet) -> Result<FeatureSet> {
    let mut records = Vec::with_capacity(set.len());
    for r in set {
        let v = linalg::normalized(&r.vector)
            .ok_or_else(|| Error::Degenerate(format!("record {} has a zero-norm vector", r.id)))?;
        records.push(FeatureRecord {
            vector: v,
            ..r.clone()
        });
    }
    Ok(FeatureSet {
        dimension: set.dimension,
        records,
    })
}

/// Samples `shots_per_class` records of each class without replacement.
///
/// Both halves keep the input order. The draw depends only on `seed`.
pub fn split_few_shot(
    set: &FeatureSet,
    shots_per_class: usize,
    seed: u64,
) -> Result<(FeatureSet, FeatureSet)> {
    let mut rng = rng::seeded(seed);
    let mut chosen = vec![false; set.len()];
    for label in Label::BOTH {
        let mut idx: Vec<usize> = set
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < shots_per_class {
            return Err(Error::Insufficient(format!(
                "class {label} has {} records, {shots_per_class} shots requested (short by {})",
                idx.len(),
                shots_per_class - idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..shots_per_class] {
            chosen[i] = true;
        }
    }
    let (support, remainder): (Vec<_>, Vec<_>) = set
        .records
        .iter()
        .cloned()
        .zip(chosen)
        .partition(|(_, c)| *c);
    let strip = |v: Vec<(FeatureRecord, bool)>| FeatureSet {
        dimension: set.dimension,
        records: v.into_iter().map(|(r, _)| r).collect(),
    };
    Ok((strip(support), strip(remainder)))
}
