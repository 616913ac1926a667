use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::DataError;

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    pub fn start(self) -> usize {
        self.0
    }

    pub fn end(self) -> usize {
        self.1
    }

    fn overlaps(self, other: Span) -> bool {
        self.0 < other.1 && other.0 < self.1
    }
}

/// A sentence with a marked head and tail entity and the encoder outputs at
/// the two entity start markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub head_span: Span,
    pub tail_span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_relation: Option<String>,
    #[serde(default)]
    pub head_vec: Vec<f32>,
    #[serde(default)]
    pub tail_vec: Vec<f32>,
}

impl Instance {
    pub fn dim(&self) -> usize {
        self.head_vec.len()
    }

    /// Checks span and vector invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |message: String| DataError::InvalidInstance {
            id: self.id.clone(),
            message,
        };
        let n = self.tokens.len();
        for (name, span) in [("head_span", self.head_span), ("tail_span", self.tail_span)] {
            if span.start() >= span.end() || span.end() > n {
                return Err(invalid(format!(
                    "{name} ({}, {}) is empty or exceeds {n} tokens",
                    span.start(),
                    span.end()
                )));
            }
        }
        if self.head_span.overlaps(self.tail_span) {
            return Err(invalid("head_span and tail_span overlap".into()));
        }
        if self.head_vec.len() != self.tail_vec.len() {
            return Err(DataError::VectorLengthMismatch {
                id: self.id.clone(),
                head: self.head_vec.len(),
                tail: self.tail_vec.len(),
            });
        }
        if self.head_vec.is_empty() {
            return Err(invalid("entity vectors are empty".into()));
        }
        if self
            .head_vec
            .iter()
            .chain(&self.tail_vec)
            .any(|v| !v.is_finite())
        {
            return Err(invalid("non-finite coordinate".into()));
        }
        Ok(())
    }
}

/// Validated, immutable collection of instances sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    dim: usize,
    label_space: BTreeSet<String>,
}

impl Dataset {
    /// Validates every instance, the shared dimension and id uniqueness.
    ///
    /// An empty dataset is allowed; its dimension is `dim_hint`.
    pub fn new(instances: Vec<Instance>) -> Result<Self, DataError> {
        Self::with_dim(instances, None)
    }

    pub fn with_dim(instances: Vec<Instance>, dim_hint: Option<usize>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(instances.len());
        let dim = instances
            .first()
            .map(Instance::dim)
            .or(dim_hint)
            .unwrap_or(0);
        for inst in &instances {
            inst.validate()?;
            if inst.dim() != dim {
                return Err(DataError::DimensionMismatch {
                    id: inst.id.clone(),
                    expected: dim,
                    found: inst.dim(),
                });
            }
            if !seen.insert(inst.id.as_str()) {
                return Err(DataError::DuplicateId(inst.id.clone()));
            }
        }
        let label_space = instances
            .iter()
            .filter_map(|i| i.gold_relation.clone())
            .collect();
        Ok(Dataset {
            instances,
            dim,
            label_space,
        })
    }

    /// Builds a subset from instances already known to satisfy the
    /// invariants of a parent dataset.
    pub(crate) fn from_trusted(instances: Vec<Instance>, dim: usize) -> Self {
        let label_space = instances
            .iter()
            .filter_map(|i| i.gold_relation.clone())
            .collect();
        Dataset {
            instances,
            dim,
            label_space,
        }
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    /// Per-entity vector length `d`; relation vectors have length `2d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label_space(&self) -> &BTreeSet<String> {
        &self.label_space
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.instances.iter().map(|i| i.id.as_str()).collect()
    }

    /// Instances at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset::from_trusted(
            indices.iter().map(|&i| self.instances[i].clone()).collect(),
            self.dim,
        )
    }

    /// Concatenation; fails on duplicate ids or dimension mismatch.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, DataError> {
        let dim = if self.is_empty() { other.dim } else { self.dim };
        Dataset::with_dim(
            self.instances
                .iter()
                .chain(&other.instances)
                .cloned()
                .collect(),
            Some(dim),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn inst(id: &str, rel: Option<&str>, head: Vec<f32>, tail: Vec<f32>) -> Instance {
        Instance {
            id: id.into(),
            tokens: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            head_span: Span(0, 1),
            tail_span: Span(2, 3),
            gold_relation: rel.map(str::to_string),
            head_vec: head,
            tail_vec: tail,
        }
    }

    #[test]
    fn rejects_overlapping_spans() {
        let mut i = inst("x", None, vec![1.0], vec![1.0]);
        i.tail_span = Span(0, 2);
        assert!(matches!(
            i.validate(),
            Err(DataError::InvalidInstance { .. })
        ));
    }

    #[test]
    fn rejects_out_of_bounds_span() {
        let mut i = inst("x", None, vec![1.0], vec![1.0]);
        i.tail_span = Span(3, 5);
        assert!(i.validate().is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let i = inst("x", None, vec![f32::NAN], vec![1.0]);
        assert!(i.validate().is_err());
    }

    #[test]
    fn dataset_checks_dim_and_ids() {
        let a = inst("a", Some("r"), vec![1.0, 2.0], vec![3.0, 4.0]);
        let b = inst("b", None, vec![1.0], vec![3.0]);
        assert!(matches!(
            Dataset::new(vec![a.clone(), b]),
            Err(DataError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![a.clone(), a.clone()]),
            Err(DataError::DuplicateId(_))
        ));
        let ds = Dataset::new(vec![a]).unwrap();
        assert_eq!(ds.dim(), 2);
        assert!(ds.label_space().contains("r"));
    }
}
