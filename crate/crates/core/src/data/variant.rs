//! General-setting dataset variants and the novel-pool train/test split.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    #[default]
    Original,
    Noisy,
    Imbalanced,
}

impl std::str::FromStr for VariantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(VariantKind::Original),
            "noisy" => Ok(VariantKind::Noisy),
            "imbalanced" => Ok(VariantKind::Imbalanced),
            other => Err(format!("unknown variant kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    /// Fraction of training instances moved into the test pool.
    pub noise_fraction: f64,
    /// Relation name to discard probability, used by the imbalanced variant.
    /// Missing relations are never discarded.
    pub discard_table: BTreeMap<String, f64>,
    /// Draw the noisy sample per known relation instead of uniformly.
    pub stratified_noise: bool,
    pub seed: u64,
}

impl Default for VariantSpec {
    fn default() -> Self {
        VariantSpec {
            kind: VariantKind::Original,
            noise_fraction: 0.40,
            discard_table: BTreeMap::new(),
            stratified_noise: false,
            seed: 0,
        }
    }
}

impl VariantSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(DataError::InvalidVariant(format!(
                "noise_fraction {} outside [0, 1]",
                self.noise_fraction
            )));
        }
        for (rel, p) in &self.discard_table {
            if !(0.0..1.0).contains(p) {
                return Err(DataError::InvalidVariant(format!(
                    "discard probability {p} for {rel:?} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

fn relation_key(ds: &Dataset, i: usize) -> Option<&str> {
    ds.instances()[i].gold_relation.as_deref()
}

fn group_by_relation(ds: &Dataset) -> BTreeMap<Option<&str>, Vec<usize>> {
    let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        groups.entry(relation_key(ds, i)).or_default().push(i);
    }
    groups
}

/// Moves `⌊noise_fraction · |train|⌋` training instances, drawn without
/// replacement, into the test pool. Returns `(reduced train, augmented test)`.
pub fn make_noisy_variant(
    train: &Dataset,
    test: &Dataset,
    spec: &VariantSpec,
) -> Result<(Dataset, Dataset), DataError> {
    if spec.kind != VariantKind::Noisy {
        return Err(DataError::InvalidVariant(format!(
            "expected kind noisy, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    if train.is_empty() {
        return Err(DataError::Empty);
    }
    let n = train.len();
    let n_move = (spec.noise_fraction * n as f64).floor() as usize;
    let mut rng = rng::seeded(spec.seed);

    let moved: HashSet<usize> = if spec.stratified_noise {
        let groups = group_by_relation(train);
        let mut quotas: Vec<(usize, f64, &Vec<usize>)> = groups
            .values()
            .map(|members| {
                let exact = spec.noise_fraction * members.len() as f64;
                (exact.floor() as usize, exact - exact.floor(), members)
            })
            .collect();
        let mut remaining = n_move - quotas.iter().map(|q| q.0).sum::<usize>();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
        for i in order {
            if remaining == 0 {
                break;
            }
            if quotas[i].0 < quotas[i].2.len() {
                quotas[i].0 += 1;
                remaining -= 1;
            }
        }
        quotas
            .iter()
            .flat_map(|(take, _, members)| {
                index::sample(&mut rng, members.len(), *take)
                    .into_iter()
                    .map(|j| members[j])
                    .collect::<Vec<_>>()
            })
            .collect()
    } else {
        index::sample(&mut rng, n, n_move).into_iter().collect()
    };

    let kept: Vec<usize> = (0..n).filter(|i| !moved.contains(i)).collect();
    let moved_in_order: Vec<usize> = (0..n).filter(|i| moved.contains(i)).collect();
    let new_test = test.concat(&train.select(&moved_in_order))?;
    Ok((train.select(&kept), new_test))
}

/// Drops each instance independently with its relation's discard probability.
pub fn make_imbalanced_variant(
    noisy_test: &Dataset,
    spec: &VariantSpec,
) -> Result<Dataset, DataError> {
    if spec.kind != VariantKind::Imbalanced {
        return Err(DataError::InvalidVariant(format!(
            "expected kind imbalanced, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let mut keep = Vec::with_capacity(noisy_test.len());
    for (i, inst) in noisy_test.instances().iter().enumerate() {
        let p = inst
            .gold_relation
            .as_ref()
            .and_then(|r| spec.discard_table.get(r))
            .copied()
            .unwrap_or(0.0);
        if p == 0.0 || rng.random::<f64>() >= p {
            keep.push(i);
        }
    }
    Ok(noisy_test.select(&keep))
}

/// Splits the novel pool into `(train, test)` with `train_frac` of each
/// relation (rounded) going to train. Relations with fewer than two
/// instances go entirely to train. With `stratified = false` the split is a
/// single uniform draw over the whole pool.
pub fn split_novel(
    x_n: &Dataset,
    train_frac: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset), DataError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::InvalidVariant(format!(
            "train_frac {train_frac} outside (0, 1)"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut in_train = vec![false; x_n.len()];
    let groups: Vec<(Option<&str>, Vec<usize>)> = if stratified {
        group_by_relation(x_n).into_iter().collect()
    } else {
        vec![(None, (0..x_n.len()).collect())]
    };
    for (rel, mut members) in groups {
        if members.len() < 2 {
            if stratified {
                log::warn!(
                    "relation {:?} has {} instance(s); cannot stratify, assigning to train",
                    rel.unwrap_or("<none>"),
                    members.len()
                );
            }
            for &i in &members {
                in_train[i] = true;
            }
            continue;
        }
        let take =
            ((train_frac * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let train: Vec<usize> = (0..x_n.len()).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..x_n.len()).filter(|&i| !in_train[i]).collect();
    Ok((x_n.select(&train), x_n.select(&test)))
}
