//! Gaussian-cluster stand-in for an embedded relation corpus.
//!
//! Every relation is an isotropic cluster around its own center in the `2d`
//! relation space. Novel relations are drawn with `novel_dispersion` times the
//! spread of known ones: an encoder tuned on known relations maps unseen
//! relations loosely rather than into tight clusters.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Instance, Span};
use crate::rng;

const CENTER_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_known: usize,
    pub n_novel: usize,
    pub per_class: usize,
    /// Per-entity dimension `d`.
    pub dim: usize,
    pub cluster_spread: f64,
    pub class_separation: f64,
    /// Spread multiplier for novel relations.
    pub novel_dispersion: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_known: 8,
            n_novel: 4,
            per_class: 50,
            dim: 16,
            cluster_spread: 0.5,
            class_separation: 4.0,
            novel_dispersion: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSynthetic(m.to_string()));
        if self.n_known == 0 || self.per_class == 0 || self.dim == 0 {
            return bad("n_known, per_class and dim must be positive");
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be finite and non-negative");
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be positive");
        }
        if !(self.novel_dispersion > 0.0 && self.novel_dispersion.is_finite()) {
            return bad("novel_dispersion must be positive");
        }
        Ok(())
    }

    pub fn known_name(c: usize) -> String {
        format!("K{c:02}")
    }

    pub fn novel_name(c: usize) -> String {
        format!("N{c:02}")
    }
}

fn draw_centers(spec: &SyntheticSpec, rng: &mut rng::Rng) -> Result<Vec<Vec<f64>>, DataError> {
    let total = spec.n_known + spec.n_novel;
    let width = 2 * spec.dim;
    // scale so that typical pairwise distance is 1.5 × separation
    let scale = 1.5 * spec.class_separation / (2.0 * width as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut attempts = 0;
    while centers.len() < total {
        if attempts == CENTER_ATTEMPTS * total {
            return Err(DataError::SeparationInfeasible {
                classes: total,
                separation: spec.class_separation,
                dim: width,
                attempts,
            });
        }
        attempts += 1;
        let c: Vec<f64> = (0..width)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        let far = centers.iter().all(|o| {
            o.iter()
                .zip(&c)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= spec.class_separation
        });
        if far {
            centers.push(c);
        }
    }
    Ok(centers)
}

fn sample_instance(
    id: String,
    relation: String,
    center: &[f64],
    spread: f64,
    dim: usize,
    rng: &mut rng::Rng,
) -> Instance {
    let v: Vec<f32> = center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            (c + spread * z) as f32
        })
        .collect();
    Instance {
        tokens: vec![
            format!("{id}:head"),
            relation.to_lowercase(),
            format!("{id}:tail"),
        ],
        head_span: Span(0, 1),
        tail_span: Span(2, 3),
        head_vec: v[..dim].to_vec(),
        tail_vec: v[dim..].to_vec(),
        gold_relation: Some(relation),
        id,
    }
}

/// Returns `(train_known, test_mixed)`: `n_known · per_class` training
/// instances and `(n_known + n_novel) · per_class` shuffled test instances.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset), DataError> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let centers = draw_centers(spec, &mut rng)?;
    let mut train = Vec::with_capacity(spec.n_known * spec.per_class);
    let mut test = Vec::with_capacity((spec.n_known + spec.n_novel) * spec.per_class);
    for (c, center) in centers.iter().enumerate() {
        let (name, spread) = if c < spec.n_known {
            (SyntheticSpec::known_name(c), spec.cluster_spread)
        } else {
            (
                SyntheticSpec::novel_name(c - spec.n_known),
                spec.cluster_spread * spec.novel_dispersion,
            )
        };
        if c < spec.n_known {
            for j in 0..spec.per_class {
                let id = format!("tr-{name}-{j:05}");
                train.push(sample_instance(
                    id,
                    name.clone(),
                    center,
                    spread,
                    spec.dim,
                    &mut rng,
                ));
            }
        }
        for j in 0..spec.per_class {
            let id = format!("te-{name}-{j:05}");
            test.push(sample_instance(
                id,
                name.clone(),
                center,
                spread,
                spec.dim,
                &mut rng,
            ));
        }
    }
    test.shuffle(&mut rng);
    Ok((Dataset::new(train)?, Dataset::new(test)?))
}
