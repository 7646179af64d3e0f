use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-node score or probability vectors, aligned with a graph's object and
/// relation order. Used both for unary potentials (compatibility scores,
/// higher is better) and for mean-field marginals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialSet {
    pub objects: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl PotentialSet {
    pub fn zeros(n_objects: usize, n_relations: usize, object_classes: usize, predicate_classes: usize) -> Self {
        PotentialSet {
            objects: vec![vec![0.0; object_classes]; n_objects],
            relations: vec![vec![0.0; predicate_classes]; n_relations],
        }
    }

    pub fn object_argmax(&self) -> Vec<usize> {
        self.objects.iter().map(|r| argmax(r)).collect()
    }

    pub fn relation_argmax(&self) -> Vec<usize> {
        self.relations.iter().map(|r| argmax(r)).collect()
    }

    pub fn check_shape(
        &self,
        n_objects: usize,
        n_relations: usize,
        object_classes: usize,
        predicate_classes: usize,
    ) -> Result<()> {
        if self.objects.len() != n_objects || self.relations.len() != n_relations {
            return Err(Error::dim(
                "potential set",
                format!("{n_objects} objects / {n_relations} relations"),
                format!("{} / {}", self.objects.len(), self.relations.len()),
            ));
        }
        if let Some(r) = self.objects.iter().find(|r| r.len() != object_classes) {
            return Err(Error::dim("object potential", object_classes, r.len()));
        }
        if let Some(r) = self.relations.iter().find(|r| r.len() != predicate_classes) {
            return Err(Error::dim("relation potential", predicate_classes, r.len()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.objects
            .iter()
            .chain(&self.relations)
            .all(|r| r.iter().all(|v| v.is_finite()))
    }

    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> PotentialSet {
        PotentialSet {
            objects: self.objects.iter().map(|r| f(r)).collect(),
            relations: self.relations.iter().map(|r| f(r)).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &PotentialSet) {
        for (a, b) in self
            .objects
            .iter_mut()
            .chain(self.relations.iter_mut())
            .zip(other.objects.iter().chain(&other.relations))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}
