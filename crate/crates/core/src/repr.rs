//! Relation representations and the pretrained head over them.
//!
//! A relation instance is represented by `[head_vec ‖ tail_vec]`. A small
//! trainable trunk (`2d → 2d`) sits on top of the frozen ingested vectors and
//! is pretrained on known relations with cross-entropy through a softmax head
//! over the L2-normalized trunk output, plus a supervised contrastive loss on a linear projection of the trunk
//! output.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance};
use crate::exec::Exec;
use crate::nn::{self, softmax_cross_entropy, Activation, DenseNet, NnError, Optimizer};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum ReprError {
    #[error("invalid representation config: {0}")]
    InvalidConfig(String),
    #[error("pretraining needs at least 2 known relations, found {0}")]
    TooFewRelations(usize),
    #[error("contrastive batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("{0} rows but {1} labels")]
    LabelCount(usize, usize),
    #[error("training diverged at epoch {epoch}: ce={ce} supcon={supcon}")]
    Divergence { epoch: usize, ce: f64, supcon: f64 },
    #[error("instance {0} has no gold relation")]
    Unlabeled(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {message}")]
    Store {
        path: std::path::PathBuf,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprConfig {
    pub tau: f64,
    pub proj_dim: usize,
    pub ce_weight: f64,
    pub supcon_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam rate of the trunk and projection.
    pub learning_rate: f64,
    /// Adam rate of the class head.
    pub head_lr: f64,
    pub seed: u64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig {
            tau: 0.1,
            proj_dim: 128,
            ce_weight: 1.0,
            supcon_weight: 1.0,
            epochs: 30,
            batch_size: 64,
            learning_rate: 5e-4,
            head_lr: 1e-2,
            seed: 0,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<(), ReprError> {
        let bad = |m: String| Err(ReprError::InvalidConfig(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if self.proj_dim == 0 {
            return bad("proj_dim must be positive".into());
        }
        if !(self.ce_weight >= 0.0 && self.supcon_weight >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(self.learning_rate > 0.0 && self.head_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub ce: f64,
    pub supcon: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprModel {
    pub trunk: DenseNet,
    pub proj: DenseNet,
    pub class_head: DenseNet,
    /// Known relation names, index-aligned with `class_head` outputs.
    pub relations: Vec<String>,
    pub curves: Vec<EpochLoss>,
}

/// `[head_vec ‖ tail_vec]` widened to `f64`.
pub fn relation_repr(inst: &Instance) -> Vec<f64> {
    inst.head_vec
        .iter()
        .chain(&inst.tail_vec)
        .map(|&v| v as f64)
        .collect()
}

/// Stacked relation representations, one row per instance.
pub fn relation_matrix(ds: &Dataset) -> Array2<f64> {
    let width = 2 * ds.dim();
    let mut out = Array2::zeros((ds.len(), width));
    for (mut row, inst) in out.rows_mut().into_iter().zip(ds.instances()) {
        for (dst, src) in row.iter_mut().zip(relation_repr(inst)) {
            *dst = src;
        }
    }
    out
}

fn normalize_rows(z: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut u = z.to_owned();
    let mut norms = Vec::with_capacity(z.nrows());
    for mut row in u.rows_mut() {
        let n = row.dot(&row).sqrt().max(1e-12);
        row /= n;
        norms.push(n);
    }
    (u, norms)
}

/// Supervised contrastive loss summed over anchors, and its gradient with
/// respect to the unnormalized rows of `z`. Rows are L2-normalized first.
/// Anchors without a same-label partner contribute nothing.
pub fn supcon_loss(
    z: ArrayView2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Array2<f64>), ReprError> {
    let n = z.nrows();
    if n < 2 {
        return Err(ReprError::BatchTooSmall(n));
    }
    if labels.len() != n {
        return Err(ReprError::LabelCount(n, labels.len()));
    }
    let (u, norms) = normalize_rows(z);
    let sim = u.dot(&u.t()) / tau;
    let mut loss = 0.0;
    let mut du = Array2::<f64>::zeros(u.raw_dim());
    for i in 0..n {
        let positives = (0..n).filter(|&a| a != i && labels[a] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| sim[[i, a]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&a| a != i)
            .map(|a| (sim[[i, a]] - max).exp())
            .sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / positives as f64;
        for a in (0..n).filter(|&a| a != i) {
            let pos = labels[a] == labels[i];
            if pos {
                loss -= inv_p * (sim[[i, a]] - lse);
            }
            let g = (sim[[i, a]] - lse).exp() - if pos { inv_p } else { 0.0 };
            if g == 0.0 {
                continue;
            }
            let scale = g / tau;
            let (ui, ua) = (u.row(i).to_owned(), u.row(a).to_owned());
            du.row_mut(i).scaled_add(scale, &ua);
            du.row_mut(a).scaled_add(scale, &ui);
        }
    }
    Ok((loss, unit_backward(&u, &norms, du)))
}

/// Pulls a gradient with respect to unit rows `u = z/‖z‖` back to `z`.
fn unit_backward(u: &Array2<f64>, norms: &[f64], mut du: Array2<f64>) -> Array2<f64> {
    for (i, mut row) in du.rows_mut().into_iter().enumerate() {
        let ui = u.row(i);
        let radial = ui.dot(&row);
        row.scaled_add(-radial, &ui);
        row /= norms[i];
    }
    du
}

impl ReprModel {
    /// Untrained model with an identity trunk.
    pub fn init(dim: usize, relations: Vec<String>, cfg: &ReprConfig) -> Self {
        let width = 2 * dim;
        let mut init_rng = rng::substream(cfg.seed, "repr/init");
        ReprModel {
            trunk: DenseNet::identity(width, Activation::Identity),
            proj: DenseNet::new(
                &[width, cfg.proj_dim],
                &[Activation::Identity],
                &mut init_rng,
            ),
            class_head: DenseNet::new(
                &[width, relations.len()],
                &[Activation::Identity],
                &mut init_rng,
            ),
            relations,
            curves: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    /// Known-relation index with the highest class-head score for each row
    /// of trunk output.
    pub fn classify_embedded(&self, h: ArrayView2<f64>) -> Result<Vec<usize>, NnError> {
        let logits = self.class_head.predict(normalize_rows(h).0.view())?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Predicted known relation name for every instance.
    pub fn label_known(&self, ds: &Dataset, exec: Exec) -> Result<Vec<String>, NnError> {
        let h = embed_all(self, ds, exec)?;
        Ok(self
            .classify_embedded(h.view())?
            .into_iter()
            .map(|i| self.relations[i].clone())
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<(), ReprError> {
        let store = |path: &Path, e: &dyn std::fmt::Display| ReprError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| store(dir, &e))?;
        nn::write_checkpoint(&self.trunk, &dir.join("trunk.ardp"))?;
        nn::write_checkpoint(&self.proj, &dir.join("proj.ardp"))?;
        nn::write_checkpoint(&self.class_head, &dir.join("class_head.ardp"))?;
        let rel_path = dir.join("relations.json");
        let json = serde_json::to_string_pretty(&self.relations).expect("strings serialize");
        std::fs::write(&rel_path, json).map_err(|e| store(&rel_path, &e))?;
        let curve_path = dir.join("curves.csv");
        let mut f = std::fs::File::create(&curve_path).map_err(|e| store(&curve_path, &e))?;
        write_curves(&mut f, &self.curves).map_err(|e| store(&curve_path, &e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ReprError> {
        let rel_path = dir.join("relations.json");
        let text = std::fs::read_to_string(&rel_path).map_err(|e| ReprError::Store {
            path: rel_path.clone(),
            message: e.to_string(),
        })?;
        let relations: Vec<String> = serde_json::from_str(&text).map_err(|e| ReprError::Store {
            path: rel_path.clone(),
            message: e.to_string(),
        })?;
        let model = ReprModel {
            trunk: nn::read_checkpoint(&dir.join("trunk.ardp"))?,
            proj: nn::read_checkpoint(&dir.join("proj.ardp"))?,
            class_head: nn::read_checkpoint(&dir.join("class_head.ardp"))?,
            relations,
            curves: Vec::new(),
        };
        model.check_dims()?;
        Ok(model)
    }

    fn check_dims(&self) -> Result<(), NnError> {
        let w = self.trunk.out_dim();
        if self.trunk.in_dim() != w || self.proj.in_dim() != w || self.class_head.in_dim() != w {
            return Err(NnError::ShapeMismatch(
                "trunk, projection and class head do not compose".into(),
            ));
        }
        if self.class_head.out_dim() != self.relations.len() {
            return Err(NnError::ShapeMismatch(format!(
                "class head has {} outputs for {} relations",
                self.class_head.out_dim(),
                self.relations.len()
            )));
        }
        Ok(())
    }
}

pub fn write_curves<W: Write>(out: &mut W, curves: &[EpochLoss]) -> std::io::Result<()> {
    writeln!(out, "epoch,ce,supcon,total")?;
    for c in curves {
        writeln!(out, "{},{},{},{}", c.epoch, c.ce, c.supcon, c.total)?;
    }
    Ok(())
}

/// Trunk output for every instance, in dataset order.
pub fn embed_all(model: &ReprModel, ds: &Dataset, exec: Exec) -> Result<Array2<f64>, NnError> {
    let x = relation_matrix(ds);
    model.trunk.predict_rows(x.view(), exec)
}

fn gold_indices(train: &Dataset, relations: &[String]) -> Result<Vec<usize>, ReprError> {
    train
        .instances()
        .iter()
        .map(|inst| {
            let rel = inst
                .gold_relation
                .as_ref()
                .ok_or_else(|| ReprError::Unlabeled(inst.id.clone()))?;
            Ok(relations
                .binary_search(rel)
                .expect("label space covers every gold relation"))
        })
        .collect()
}

/// Mini-batch pretraining of trunk, projection and class head with Adam on
/// `ce_weight · mean CE + supcon_weight · mean SupCon`.
pub fn pretrain(train: &Dataset, cfg: &ReprConfig) -> Result<ReprModel, ReprError> {
    cfg.validate()?;
    let relations: Vec<String> = train.label_space().iter().cloned().collect();
    if relations.len() < 2 {
        return Err(ReprError::TooFewRelations(relations.len()));
    }
    let labels = gold_indices(train, &relations)?;
    let x = relation_matrix(train);
    let mut model = ReprModel::init(train.dim(), relations, cfg);
    let mut opt_trunk = Optimizer::adam(cfg.learning_rate);
    let mut opt_proj = Optimizer::adam(cfg.learning_rate);
    let mut opt_head = Optimizer::adam(cfg.head_lr);
    let mut shuffle_rng = rng::substream(cfg.seed, "repr/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut ce_sum, mut sc_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let b = chunk.len() as f64;

            let (h, trunk_cache) = model.trunk.forward(xb.view())?;
            let (hn, norms) = normalize_rows(h.view());
            let (logits, head_cache) = model.class_head.forward(hn.view())?;
            let (ce, mut dlogits) = softmax_cross_entropy(logits.view(), &yb);
            let ce = ce / b;
            dlogits *= cfg.ce_weight / b;
            let (g_head, dhn) = model.class_head.backward(&head_cache, dlogits.view())?;
            let mut dh = unit_backward(&hn, &norms, dhn);

            let (z, proj_cache) = model.proj.forward(h.view())?;
            let mut supcon = 0.0;
            let mut g_proj = None;
            if chunk.len() >= 2 {
                let (l, mut dz) = supcon_loss(z.view(), &yb, cfg.tau)?;
                supcon = l / b;
                // a zero weight leaves the trunk and projection untouched by this term
                if cfg.supcon_weight > 0.0 {
                    dz *= cfg.supcon_weight / b;
                    let (g, dh_sc) = model.proj.backward(&proj_cache, dz.view())?;
                    dh += &dh_sc;
                    g_proj = Some(g);
                }
            }
            if !ce.is_finite() || !supcon.is_finite() {
                return Err(ReprError::Divergence { epoch, ce, supcon });
            }
            let (g_trunk, _) = model.trunk.backward(&trunk_cache, dh.view())?;
            let diverged = |_| ReprError::Divergence { epoch, ce, supcon };
            opt_head
                .step(&mut model.class_head, &g_head)
                .map_err(diverged)?;
            if let Some(g) = g_proj {
                opt_proj.step(&mut model.proj, &g).map_err(diverged)?;
            }
            opt_trunk
                .step(&mut model.trunk, &g_trunk)
                .map_err(diverged)?;
            ce_sum += ce;
            sc_sum += supcon;
            batches += 1;
        }
        let ce = ce_sum / batches as f64;
        let supcon = sc_sum / batches as f64;
        let total = cfg.ce_weight * ce + cfg.supcon_weight * supcon;
        log::debug!("pretrain epoch {epoch}: ce={ce:.4} supcon={supcon:.4}");
        model.curves.push(EpochLoss {
            epoch,
            ce,
            supcon,
            total,
        });
    }
    Ok(model)
}

/// Fraction of instances whose predicted relation equals the gold one.
pub fn training_accuracy(model: &ReprModel, ds: &Dataset) -> Result<f64, ReprError> {
    let pred = model.label_known(ds, Exec::Sequential)?;
    let hits = ds
        .instances()
        .iter()
        .zip(&pred)
        .filter(|(inst, p)| inst.gold_relation.as_deref() == Some(p.as_str()))
        .count();
    Ok(hits as f64 / ds.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use ndarray::array;
    use proptest::prelude::*;

    /// The supervised contrastive loss evaluated literally from unit vectors, no shared code.
    fn supcon_direct(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
        let unit: Vec<Vec<f64>> = z
            .iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut total = 0.0;
        for i in 0..z.len() {
            let pos: Vec<usize> = (0..z.len())
                .filter(|&p| p != i && labels[p] == labels[i])
                .collect();
            if pos.is_empty() {
                continue;
            }
            let denom: f64 = (0..z.len())
                .filter(|&a| a != i)
                .map(|a| (dot(&unit[i], &unit[a]) / tau).exp())
                .sum();
            let inner: f64 = pos
                .iter()
                .map(|&p| ((dot(&unit[i], &unit[p]) / tau).exp() / denom).ln())
                .sum();
            total += -inner / pos.len() as f64;
        }
        total
    }

    #[test]
    fn relation_repr_concatenates() {
        let mut inst = Instance {
            id: "a".into(),
            tokens: vec!["x".into(), "y".into()],
            head_span: crate::data::Span(0, 1),
            tail_span: crate::data::Span(1, 2),
            gold_relation: None,
            head_vec: vec![1.0, 2.0],
            tail_vec: vec![3.0, 4.0],
        };
        assert_eq!(relation_repr(&inst), vec![1.0, 2.0, 3.0, 4.0]);
        std::mem::swap(&mut inst.head_vec, &mut inst.tail_vec);
        assert_eq!(relation_repr(&inst), vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let z = array![[0.6, 0.8], [0.6, 0.8]];
        let (l, _) = supcon_loss(z.view(), &[0, 0], 0.1).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn distinct_labels_have_zero_loss_and_gradient() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]];
        let (l, g) = supcon_loss(z.view(), &[0, 1, 2], 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_vectors_at_known_angles() {
        // 0°, 30°, 90° with labels A, A, B
        let a = std::f64::consts::PI / 6.0;
        let z = array![[1.0, 0.0], [a.cos(), a.sin()], [0.0, 1.0]];
        let (l, _) = supcon_loss(z.view(), &[0, 0, 1], 0.1).unwrap();
        // anchor 0: -log(e^{cos30/τ} / (e^{cos30/τ} + e^{0}))
        // anchor 1: -log(e^{cos30/τ} / (e^{cos30/τ} + e^{cos60/τ}))
        let c30 = (a.cos() / 0.1).exp();
        let c60 = ((2.0 * a).cos() / 0.1).exp();
        let expected = -(c30 / (c30 + 1.0)).ln() - (c30 / (c30 + c60)).ln();
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
        let direct = supcon_direct(
            &[vec![1.0, 0.0], vec![a.cos(), a.sin()], vec![0.0, 1.0]],
            &[0, 0, 1],
            0.1,
        );
        assert!((l - direct).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        assert!(matches!(
            supcon_loss(array![[1.0, 0.0]].view(), &[0], 0.1),
            Err(ReprError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        let mut r = rng::seeded(7);
        for trial in 0..20 {
            let n = 3 + trial % 5;
            let z = Array2::from_shape_fn((n, 4), |_| rand::Rng::random_range(&mut r, -1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let (_, g) = supcon_loss(z.view(), &labels, 0.5).unwrap();
            let h = 1e-5;
            for idx in 0..z.len() {
                let (i, j) = (idx / 4, idx % 4);
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fd = (supcon_loss(zp.view(), &labels, 0.5).unwrap().0
                    - supcon_loss(zm.view(), &labels, 0.5).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - g[[i, j]]).abs() / fd.abs().max(g[[i, j]].abs()).max(1e-6);
                assert!(
                    rel <= 1e-4,
                    "trial {trial} ({i},{j}): fd {fd} analytic {}",
                    g[[i, j]]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn supcon_matches_direct_and_is_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..8),
            seed in 0u64..1000,
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
            let n = rows.len();
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % 3).collect();
            let z = Array2::from_shape_fn((n, 3), |(i, j)| rows[i][j]);
            let (l, _) = supcon_loss(z.view(), &labels, 0.1).unwrap();
            prop_assert!((l - supcon_direct(&rows, &labels, 0.1)).abs() <= 1e-9 * l.abs().max(1.0));

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng::seeded(seed));
            let zp = z.select(Axis(0), &perm);
            let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let (l2, _) = supcon_loss(zp.view(), &lp, 0.1).unwrap();
            prop_assert!((l - l2).abs() <= 1e-9 * l.abs().max(1.0));
        }

        #[test]
        fn supcon_is_rotation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2), 2..8),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            prop_assume!(rows.iter().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
            let n = rows.len();
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let z = Array2::from_shape_fn((n, 2), |(i, j)| rows[i][j]);
            let rot = array![[angle.cos(), angle.sin()], [-angle.sin(), angle.cos()]];
            let (l, _) = supcon_loss(z.view(), &labels, 0.1).unwrap();
            let (lr, _) = supcon_loss(z.dot(&rot).view(), &labels, 0.1).unwrap();
            prop_assert!((l - lr).abs() <= 1e-9 * l.abs().max(1.0));
        }
    }

    fn two_class_data() -> Dataset {
        let spec = SyntheticSpec {
            n_known: 2,
            n_novel: 0,
            per_class: 40,
            dim: 8,
            seed: 3,
            ..SyntheticSpec::default()
        };
        gen_synthetic(&spec).unwrap().0
    }

    fn quick_cfg() -> ReprConfig {
        ReprConfig {
            proj_dim: 16,
            epochs: 10,
            batch_size: 16,
            learning_rate: 5e-3,
            ..ReprConfig::default()
        }
    }

    #[test]
    fn separable_classes_are_learned() {
        let train = two_class_data();
        let model = pretrain(&train, &quick_cfg()).unwrap();
        assert!(training_accuracy(&model, &train).unwrap() >= 0.99);
        assert_eq!(model.curves.len(), 10);
    }

    #[test]
    fn zero_contrastive_weight_ignores_tau() {
        let train = two_class_data();
        let cfg = ReprConfig {
            supcon_weight: 0.0,
            ..quick_cfg()
        };
        let a = pretrain(&train, &cfg).unwrap();
        let b = pretrain(&train, &ReprConfig { tau: 0.7, ..cfg }).unwrap();
        assert_eq!(a.trunk, b.trunk);
        assert_eq!(a.class_head, b.class_head);
        let ce = |m: &ReprModel| m.curves.iter().map(|c| c.ce.to_bits()).collect::<Vec<_>>();
        let total = |m: &ReprModel| {
            m.curves
                .iter()
                .map(|c| c.total.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(ce(&a), ce(&b));
        assert_eq!(total(&a), total(&b));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let train = two_class_data();
        let a = pretrain(&train, &quick_cfg()).unwrap();
        let b = pretrain(&train, &quick_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_trunk_returns_raw_representation() {
        let train = two_class_data();
        let model = ReprModel::init(
            train.dim(),
            vec!["a".into(), "b".into()],
            &ReprConfig::default(),
        );
        let h = embed_all(&model, &train, Exec::default()).unwrap();
        assert_eq!(h.nrows(), train.len());
        assert_eq!(h, relation_matrix(&train));
    }

    fn mean_intra_distance(h: &Array2<f64>, labels: &[usize]) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..h.nrows() {
            for j in i + 1..h.nrows() {
                if labels[i] == labels[j] {
                    let d = &h.row(i) - &h.row(j);
                    sum += d.dot(&d).sqrt();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }

    #[test]
    fn pretraining_tightens_classes() {
        for (n_known, seed) in [(2, 3), (2, 11), (4, 5), (8, 1), (8, 2)] {
            let spec = SyntheticSpec {
                n_known,
                n_novel: 0,
                per_class: 50,
                seed,
                ..SyntheticSpec::default()
            };
            let train = gen_synthetic(&spec).unwrap().0;
            let relations: Vec<String> = train.label_space().iter().cloned().collect();
            let labels = gold_indices(&train, &relations).unwrap();
            let before = relation_matrix(&train);
            let model = pretrain(
                &train,
                &ReprConfig {
                    seed,
                    ..ReprConfig::default()
                },
            )
            .unwrap();
            let after = embed_all(&model, &train, Exec::Sequential).unwrap();
            let (b, a) = (
                mean_intra_distance(&before, &labels),
                mean_intra_distance(&after, &labels),
            );
            assert!(a <= b, "{n_known} classes, seed {seed}: {b} -> {a}");

            let (mut same, mut cross) = ((0.0, 0usize), (0.0, 0usize));
            for i in 0..after.nrows() {
                for j in i + 1..after.nrows() {
                    let c = cosine(after.row(i), after.row(j));
                    let acc = if labels[i] == labels[j] {
                        &mut same
                    } else {
                        &mut cross
                    };
                    acc.0 += c;
                    acc.1 += 1;
                }
            }
            assert!(same.0 / same.1 as f64 > cross.0 / cross.1 as f64);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let train = two_class_data();
        let model = pretrain(&train, &quick_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = ReprModel::load(dir.path()).unwrap();
        assert_eq!(back.trunk, model.trunk);
        assert_eq!(back.relations, model.relations);
        let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert!(curves.starts_with("epoch,ce,supcon,total\n"));
        assert_eq!(curves.lines().count(), 11);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ReprConfig {
            tau: 0.0,
            ..ReprConfig::default()
        }
        .validate()
        .is_err());
        assert!(ReprConfig {
            proj_dim: 0,
            ..ReprConfig::default()
        }
        .validate()
        .is_err());
    }
}
