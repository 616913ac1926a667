//! Who answers "which relation is this?" for a selected batch.

use serde::{Deserialize, Serialize};

use crate::data::Instance;

/// One selected instance shown to the annotator.
#[derive(Debug, Clone)]
pub struct Query<'a> {
    pub instance: &'a Instance,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Same relation as an existing label index.
    Assign(usize),
    /// A relation not yet in the label space, by surface name.
    Create(String),
}

/// Answers for a prefix of the batch. `aborted` is set when the annotator
/// stopped before the end.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotation {
    pub decisions: Vec<Decision>,
    pub aborted: Option<String>,
}

impl Annotation {
    pub fn complete(decisions: Vec<Decision>) -> Self {
        Annotation {
            decisions,
            aborted: None,
        }
    }
}

pub trait Annotator {
    /// Labels `queries` in order. `label_names[i]` is the surface name of
    /// label index `i` before this batch.
    fn annotate(
        &mut self,
        round: usize,
        queries: &[Query<'_>],
        label_names: &[String],
    ) -> Annotation;
}

/// Answers with the gold relation of each instance.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleAnnotator;

impl Annotator for OracleAnnotator {
    fn annotate(
        &mut self,
        _round: usize,
        queries: &[Query<'_>],
        label_names: &[String],
    ) -> Annotation {
        let mut decisions = Vec::with_capacity(queries.len());
        for q in queries {
            let Some(gold) = q.instance.gold_relation.as_ref() else {
                return Annotation {
                    decisions,
                    aborted: Some(format!("instance {} has no gold relation", q.instance.id)),
                };
            };
            decisions.push(match label_names.iter().position(|n| n == gold) {
                Some(i) => Decision::Assign(i),
                None => Decision::Create(gold.clone()),
            });
        }
        Annotation::complete(decisions)
    }
}

impl<A: Annotator + ?Sized> Annotator for &mut A {
    fn annotate(
        &mut self,
        round: usize,
        queries: &[Query<'_>],
        label_names: &[String],
    ) -> Annotation {
        (**self).annotate(round, queries, label_names)
    }
}

impl<A: Annotator + ?Sized> Annotator for Box<A> {
    fn annotate(
        &mut self,
        round: usize,
        queries: &[Query<'_>],
        label_names: &[String],
    ) -> Annotation {
        (**self).annotate(round, queries, label_names)
    }
}
