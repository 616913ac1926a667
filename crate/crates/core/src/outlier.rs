//! Local outlier factor over relation representations and the induced
//! known/novel partition of a mixed pool.
//!
//! For a point `p` with k-distance `d_k(p)` and neighbourhood `N_k(p)` (every
//! other point within `d_k(p)`, so ties can make it larger than `k`):
//!
//! ```text
//! rd_k(p, o)  = max(d_k(o), d(p, o))
//! den_k(p)    = 1 / max(ε, mean_{o ∈ N_k(p)} rd_k(p, o))
//! LOF_k(p)    = mean_{o ∈ N_k(p)} den_k(o) / den_k(p)
//! ```
//!
//! Distances are exhaustive; each row scan is independent and runs in
//! parallel under [`Exec::Parallel`].

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::exec::Exec;
use crate::repr::{embed_all, ReprModel};

#[derive(Debug, thiserror::Error)]
pub enum OutlierError {
    #[error("pool of {n} points is too small for k = {k} (need at least k + 1)")]
    PoolTooSmall { n: usize, k: usize },
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid LOF config: {0}")]
    InvalidConfig(String),
    #[error("embedding failed: {0}")]
    Embed(#[from] crate::nn::NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Novel iff `LOF > theta`.
    Fixed,
    /// The top `novel_quantile` fraction by score is novel.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofConfig {
    pub k: usize,
    pub threshold_mode: ThresholdMode,
    pub theta: f64,
    pub novel_quantile: f64,
    pub epsilon: f64,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig {
            k: 20,
            threshold_mode: ThresholdMode::Fixed,
            theta: 1.5,
            novel_quantile: 0.3,
            epsilon: 1e-12,
        }
    }
}

impl LofConfig {
    pub fn validate(&self) -> Result<(), OutlierError> {
        let bad = |m: String| Err(OutlierError::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.theta > 0.0) {
            return bad(format!("theta {} must be positive", self.theta));
        }
        if !(self.novel_quantile > 0.0 && self.novel_quantile < 1.0) {
            return bad(format!(
                "novel_quantile {} outside (0, 1)",
                self.novel_quantile
            ));
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive".into());
        }
        Ok(())
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn row<'a>(points: &'a ArrayView2<f64>, i: usize) -> std::borrow::Cow<'a, [f64]> {
    let r = points.row(i);
    match r.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(r.to_vec()),
    }
}

/// k-distance of point `i` and its neighbourhood as `(index, distance)`.
fn neighbourhood(points: &ArrayView2<f64>, i: usize, k: usize) -> (f64, Vec<(usize, f64)>) {
    let n = points.nrows();
    let pi = row(points, i);
    let dists: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (j, euclidean(&pi, &row(points, j))))
        .collect();
    let mut scratch: Vec<f64> = dists.iter().map(|d| d.1).collect();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    let dk = *kth;
    let neighbours = dists.into_iter().filter(|&(_, d)| d <= dk).collect();
    (dk, neighbours)
}

fn check(points: &ArrayView2<f64>, k: usize, idx: &[usize]) -> Result<(), OutlierError> {
    let n = points.nrows();
    if k == 0 {
        return Err(OutlierError::InvalidConfig("k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(OutlierError::PoolTooSmall { n, k });
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(OutlierError::IndexOutOfRange(bad));
    }
    Ok(())
}

/// Distance from point `i` to its k-th nearest other point, and every other
/// point within that distance.
pub fn k_distance(
    points: ArrayView2<f64>,
    i: usize,
    k: usize,
) -> Result<(f64, Vec<usize>), OutlierError> {
    check(&points, k, &[i])?;
    let (dk, nb) = neighbourhood(&points, i, k);
    Ok((dk, nb.into_iter().map(|(j, _)| j).collect()))
}

pub fn reach_dist(
    points: ArrayView2<f64>,
    i: usize,
    j: usize,
    k: usize,
) -> Result<f64, OutlierError> {
    check(&points, k, &[i, j])?;
    let (dk_j, _) = neighbourhood(&points, j, k);
    Ok(dk_j.max(euclidean(&row(&points, i), &row(&points, j))))
}

pub fn local_density(
    points: ArrayView2<f64>,
    i: usize,
    k: usize,
    epsilon: f64,
) -> Result<f64, OutlierError> {
    check(&points, k, &[i])?;
    let (_, nb) = neighbourhood(&points, i, k);
    let mean_rd = nb
        .iter()
        .map(|&(j, d)| neighbourhood(&points, j, k).0.max(d))
        .sum::<f64>()
        / nb.len() as f64;
    Ok(1.0 / mean_rd.max(epsilon))
}

/// LOF of every point with the default density floor `1e-12`.
pub fn lof_scores(points: ArrayView2<f64>, k: usize) -> Result<Vec<f64>, OutlierError> {
    lof_scores_with(points, k, LofConfig::default().epsilon, Exec::default())
}

pub fn lof_scores_with(
    points: ArrayView2<f64>,
    k: usize,
    epsilon: f64,
    exec: Exec,
) -> Result<Vec<f64>, OutlierError> {
    check(&points, k, &[])?;
    let n = points.nrows();
    let hoods = exec.map_range(n, |i| neighbourhood(&points, i, k));
    let kdist: Vec<f64> = hoods.iter().map(|h| h.0).collect();
    let density: Vec<f64> = exec.map_range(n, |i| {
        let nb = &hoods[i].1;
        let mean_rd = nb.iter().map(|&(j, d)| kdist[j].max(d)).sum::<f64>() / nb.len() as f64;
        1.0 / mean_rd.max(epsilon)
    });
    Ok(exec.map_range(n, |i| {
        let nb = &hoods[i].1;
        nb.iter()
            .map(|&(j, _)| density[j] / density[i])
            .sum::<f64>()
            / nb.len() as f64
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofReport {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub is_novel: Vec<bool>,
    pub k_used: usize,
    /// Fixed mode: `theta`. Quantile mode: the lowest flagged score
    /// (infinite when nothing is flagged).
    pub theta_used: f64,
    pub threshold_mode: ThresholdMode,
}

impl LofReport {
    pub fn novel_count(&self) -> usize {
        self.is_novel.iter().filter(|&&b| b).count()
    }

    /// CSV with columns `instance_id,lof_score,is_novel,gold_is_novel`. The
    /// last column is empty unless `known_relations` is given and the
    /// instance has a gold relation.
    pub fn write_csv<W: Write>(
        &self,
        out: &mut W,
        pool: &Dataset,
        known_relations: Option<&BTreeSet<String>>,
    ) -> std::io::Result<()> {
        writeln!(out, "instance_id,lof_score,is_novel,gold_is_novel")?;
        for (i, inst) in pool.instances().iter().enumerate() {
            let gold = match (known_relations, &inst.gold_relation) {
                (Some(known), Some(rel)) => (!known.contains(rel)).to_string(),
                _ => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{}",
                inst.id, self.scores[i], self.is_novel[i], gold
            )?;
        }
        Ok(())
    }
}

/// Applies the configured cutoff to precomputed scores.
pub fn flag_novel(ids: &[&str], scores: &[f64], cfg: &LofConfig) -> (Vec<bool>, f64) {
    match cfg.threshold_mode {
        ThresholdMode::Fixed => (scores.iter().map(|&s| s > cfg.theta).collect(), cfg.theta),
        ThresholdMode::Quantile => {
            let count = (cfg.novel_quantile * scores.len() as f64).floor() as usize;
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
                Ordering::Equal => ids[a].cmp(ids[b]),
                o => o,
            });
            let mut flags = vec![false; scores.len()];
            for &i in &order[..count] {
                flags[i] = true;
            }
            let cutoff = order[..count].last().map_or(f64::INFINITY, |&i| scores[i]);
            (flags, cutoff)
        }
    }
}

/// Splits `pool` by LOF over precomputed representations (one row per
/// instance, pool order). Returns `(known, novel, report)`.
pub fn split_by_embeddings(
    pool: &Dataset,
    embedded: ArrayView2<f64>,
    cfg: &LofConfig,
    exec: Exec,
) -> Result<(Dataset, Dataset, LofReport), OutlierError> {
    cfg.validate()?;
    assert_eq!(
        embedded.nrows(),
        pool.len(),
        "one representation per instance"
    );
    let scores = lof_scores_with(embedded, cfg.k, cfg.epsilon, exec)?;
    let ids = pool.ids();
    let (is_novel, theta_used) = flag_novel(&ids, &scores, cfg);
    let known: Vec<usize> = (0..pool.len()).filter(|&i| !is_novel[i]).collect();
    let novel: Vec<usize> = (0..pool.len()).filter(|&i| is_novel[i]).collect();
    let report = LofReport {
        ids: ids.iter().map(|s| s.to_string()).collect(),
        scores,
        is_novel,
        k_used: cfg.k,
        theta_used,
        threshold_mode: cfg.threshold_mode,
    };
    Ok((pool.select(&known), pool.select(&novel), report))
}

/// Embeds the pool with the pretrained trunk and splits it by LOF.
pub fn split_known_novel(
    pool: &Dataset,
    model: &ReprModel,
    cfg: &LofConfig,
) -> Result<(Dataset, Dataset, LofReport), OutlierError> {
    let embedded: Array2<f64> = embed_all(model, pool, Exec::default())?;
    split_by_embeddings(pool, embedded.view(), cfg, Exec::default())
}

/// Binary F1 of the novel flags against gold novelty.
pub fn novel_f1(is_novel: &[bool], gold_novel: &[bool]) -> f64 {
    let tp = is_novel
        .iter()
        .zip(gold_novel)
        .filter(|(p, g)| **p && **g)
        .count() as f64;
    let predicted = is_novel.iter().filter(|p| **p).count() as f64;
    let actual = gold_novel.iter().filter(|g| **g).count() as f64;
    if predicted + actual == 0.0 {
        1.0
    } else {
        2.0 * tp / (predicted + actual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn square() -> Array2<f64> {
        array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
    }

    fn square_with_outlier() -> Array2<f64> {
        array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [5.0, 5.0]]
    }

    #[test]
    fn square_corner_k_distance() {
        let (dk, mut nb) = k_distance(square().view(), 0, 2).unwrap();
        nb.sort();
        assert_eq!(dk, 1.0);
        assert_eq!(nb, vec![1, 2]);
    }

    #[test]
    fn k_distance_at_pool_boundary_is_max() {
        let p = square_with_outlier();
        let (dk, nb) = k_distance(p.view(), 0, 4).unwrap();
        assert_eq!(dk, 50f64.sqrt());
        assert_eq!(nb.len(), 4);
        assert!(matches!(
            k_distance(p.view(), 0, 5),
            Err(OutlierError::PoolTooSmall { n: 5, k: 5 })
        ));
    }

    #[test]
    fn duplicate_point_ranks_first() {
        let p = array![[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]];
        let (dk, nb) = k_distance(p.view(), 0, 1).unwrap();
        assert_eq!(dk, 0.0);
        assert_eq!(nb, vec![1]);
    }

    #[test]
    fn reach_distance_branches() {
        // outlier O=(5,5) reaching D=(1,1): d(O,D)=√32, d_2(D)=1
        let p = square_with_outlier();
        assert_eq!(reach_dist(p.view(), 4, 3, 2).unwrap(), 32f64.sqrt());
        // A=(0,0) reaching B=(0,1): d = 1, d_2(B) = 1
        assert_eq!(reach_dist(p.view(), 0, 1, 2).unwrap(), 1.0);
        // neighbour with k-distance 1 at distance 0.2 is reached at 1
        let q = array![[0.0, 0.0], [0.2, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(k_distance(q.view(), 0, 2).unwrap().0, 1.0);
        assert_eq!(reach_dist(q.view(), 1, 0, 2).unwrap(), 1.0);
    }

    #[test]
    fn density_cases() {
        assert_eq!(local_density(square().view(), 0, 2, 1e-12).unwrap(), 1.0);
        let same = Array2::<f64>::ones((4, 3));
        assert_eq!(local_density(same.view(), 2, 2, 1e-12).unwrap(), 1e12);
        let scaled = square_with_outlier() * 3.0;
        let base = local_density(square_with_outlier().view(), 4, 2, 1e-12).unwrap();
        let s = local_density(scaled.view(), 4, 2, 1e-12).unwrap();
        assert!((s - base / 3.0).abs() < 1e-15);
    }

    #[test]
    fn square_is_uniform() {
        for s in lof_scores(square().view(), 2).unwrap() {
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn square_plus_outlier_hand_values() {
        let s = lof_scores(square_with_outlier().view(), 2).unwrap();
        for c in &s[..4] {
            assert_eq!(*c, 1.0);
        }
        let expected = (32f64.sqrt() + 2.0 * 41f64.sqrt()) / 3.0;
        assert!((s[4] - expected).abs() < 1e-9);
        assert!((s[4] - 6.1544).abs() < 1e-4);
    }

    #[test]
    fn uniform_grid_interior() {
        let grid = Array2::from_shape_fn((12, 1), |(i, _)| i as f64 * 0.5);
        let s = lof_scores(grid.view(), 2).unwrap();
        for v in &s[3..9] {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn coincident_points_stay_finite() {
        let p = Array2::<f64>::zeros((6, 2));
        assert!(lof_scores(p.view(), 3).unwrap().iter().all(|s| *s == 1.0));
    }

    #[test]
    fn quantile_flags_ties_by_id() {
        let cfg = LofConfig {
            threshold_mode: ThresholdMode::Quantile,
            novel_quantile: 0.5,
            ..LofConfig::default()
        };
        let (flags, cutoff) = flag_novel(&["d", "c", "b", "a"], &[2.0, 2.0, 2.0, 1.0], &cfg);
        assert_eq!(flags, vec![false, true, true, false]);
        assert_eq!(cutoff, 2.0);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let p = Array2::from_shape_fn((300, 5), |(i, j)| {
            ((i * 5 + j) as f64 * 0.731).sin() * (1.0 + i as f64 / 100.0)
        });
        let a = lof_scores_with(p.view(), 7, 1e-12, Exec::Sequential).unwrap();
        let b = lof_scores_with(p.view(), 7, 1e-12, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn novel_f1_counts() {
        assert_eq!(
            novel_f1(&[true, false, true], &[true, false, false]),
            2.0 / 3.0
        );
        assert_eq!(novel_f1(&[false], &[false]), 1.0);
    }
}
