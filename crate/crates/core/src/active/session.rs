use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::adversarial::{confidence, discriminator_loss, encoder_loss};
use super::annotator::{Annotator, Decision, Query};
use super::log::{Event, EventKind, EventLog, ReplayState};
use super::{ActiveConfig, ActiveError, Strategy};
use crate::data::Dataset;
use crate::exec::Exec;
use crate::metrics::MetricReport;
use crate::nn::{softmax_cross_entropy, Activation, DenseNet, Gradients, NnError, Optimizer};
use crate::repr::{relation_matrix, ReprModel};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the seminal round.
    pub round: usize,
    pub selected: Vec<String>,
    /// Mean `D(E(x))` over the unlabeled pool after the round's adversarial
    /// update, before selection.
    pub disc_confidence_mean: Option<f64>,
    pub labeled_count: usize,
    pub label_count: usize,
    pub metrics: Option<MetricReport>,
    pub selection_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub labeled: usize,
    pub rounds_completed: usize,
    /// Why the loop ended before its last round, if it did.
    pub stopped_early: Option<String>,
}

/// Labeled and unlabeled parts of a novel-instance pool together with the
/// networks of the adversarial sampler and the current classifier.
#[derive(Debug)]
pub struct ActiveSession {
    cfg: ActiveConfig,
    pool: Dataset,
    index: HashMap<String, usize>,
    inputs: Array2<f64>,
    features: Array2<f64>,
    encoder: DenseNet,
    discriminator: DenseNet,
    classifier: Option<DenseNet>,
    opt_e: Optimizer,
    opt_d: Optimizer,
    labeled: Vec<(usize, usize)>,
    unlabeled: BTreeSet<usize>,
    label_names: Vec<String>,
    round: usize,
    seeded: bool,
    pending: Vec<usize>,
    history: Vec<RoundRecord>,
    log: EventLog,
}

/// Summed softmax cross-entropy of the classifier and its parameter
/// gradient.
pub fn classifier_loss(
    cls: &DenseNet,
    x: ArrayView2<f64>,
    y: &[usize],
) -> Result<(f64, Gradients), NnError> {
    let (logits, cache) = cls.forward(x)?;
    let (loss, dlogits) = softmax_cross_entropy(logits.view(), y);
    let (g, _) = cls.backward(&cache, dlogits.view())?;
    Ok((loss, g))
}

/// Orders `ids` by score (descending when `highest`), ties by id ascending,
/// and keeps the first `k`.
pub fn rank_by_confidence(ids: &[&str], scores: &[f64], k: usize, highest: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        let by_score = if highest {
            scores[b].total_cmp(&scores[a])
        } else {
            scores[a].total_cmp(&scores[b])
        };
        by_score.then_with(|| ids[a].cmp(ids[b]))
    });
    order.truncate(k);
    order
}

/// True when two labeled ids share an index exactly when they share a gold
/// relation.
pub fn alg1_consistent(labeled: &[(String, usize)], gold: &HashMap<String, String>) -> bool {
    let mut by_index: HashMap<usize, &str> = HashMap::new();
    let mut by_gold: HashMap<&str, usize> = HashMap::new();
    for (id, idx) in labeled {
        let Some(g) = gold.get(id) else { return false };
        if *by_index.entry(*idx).or_insert(g) != g.as_str() {
            return false;
        }
        if *by_gold.entry(g).or_insert(*idx) != *idx {
            return false;
        }
    }
    true
}

/// Copy of `xk` whose relations are the class head's predictions.
pub fn label_known(xk: &Dataset, model: &ReprModel, exec: Exec) -> Result<Dataset, NnError> {
    let predicted = model.label_known(xk, exec)?;
    let instances = xk
        .instances()
        .iter()
        .zip(predicted)
        .map(|(inst, rel)| {
            let mut inst = inst.clone();
            inst.gold_relation = Some(rel);
            inst
        })
        .collect();
    Ok(Dataset::with_dim(instances, Some(xk.dim())).expect("relabeling keeps instances valid"))
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
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
        .collect()
}

impl ActiveSession {
    /// `encoder` maps raw relation vectors and starts from the pretrained
    /// trunk. `features` holds one classifier input row per pool instance.
    pub fn new(
        pool: Dataset,
        encoder: DenseNet,
        features: Array2<f64>,
        cfg: ActiveConfig,
        log: EventLog,
    ) -> Result<Self, ActiveError> {
        cfg.validate()?;
        let inputs = relation_matrix(&pool);
        if encoder.in_dim() != inputs.ncols() {
            return Err(NnError::ShapeMismatch(format!(
                "encoder expects {} inputs, relation vectors have {}",
                encoder.in_dim(),
                inputs.ncols()
            ))
            .into());
        }
        if features.nrows() != pool.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} feature rows for {} instances",
                features.nrows(),
                pool.len()
            ))
            .into());
        }
        let mut init = rng::substream(cfg.seed, "active/disc");
        let [h1, h2] = cfg.disc_hidden;
        let discriminator = DenseNet::new(
            &[encoder.out_dim(), h1, h2, 1],
            &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            &mut init,
        );
        let index = pool
            .instances()
            .iter()
            .enumerate()
            .map(|(i, x)| (x.id.clone(), i))
            .collect();
        Ok(ActiveSession {
            opt_e: Optimizer::adam(cfg.encoder_lr),
            opt_d: Optimizer::adam(cfg.disc_lr),
            unlabeled: (0..pool.len()).collect(),
            cfg,
            pool,
            index,
            inputs,
            features,
            encoder,
            discriminator,
            classifier: None,
            labeled: Vec::new(),
            label_names: Vec::new(),
            round: 0,
            seeded: false,
            pending: Vec::new(),
            history: Vec::new(),
            log,
        })
    }

    /// Session over `pool` with the encoder and classifier features taken
    /// from a pretrained model.
    pub fn from_model(
        pool: Dataset,
        model: &ReprModel,
        cfg: ActiveConfig,
        log: EventLog,
        exec: Exec,
    ) -> Result<Self, ActiveError> {
        let features = crate::repr::embed_all(model, &pool, exec)?;
        Self::new(pool, model.trunk.clone(), features, cfg, log)
    }

    /// Reapplies a replayed labeling state. Networks are not part of the log
    /// and restart from their initial parameters.
    pub fn restore(&mut self, state: &ReplayState) -> Result<(), ActiveError> {
        if !self.labeled.is_empty() || self.seeded {
            return Err(ActiveError::Log("restore needs a fresh session".into()));
        }
        self.label_names = state.label_names.clone();
        for (id, idx) in &state.labeled {
            let i = self.lookup(id)?;
            if !self.unlabeled.remove(&i) {
                return Err(ActiveError::AlreadyLabeled(id.clone()));
            }
            self.labeled.push((i, *idx));
        }
        self.pending = state
            .pending
            .iter()
            .map(|id| self.lookup(id))
            .collect::<Result<_, _>>()?;
        self.pending.retain(|i| self.unlabeled.contains(i));
        self.seeded = state.seeded;
        self.round = state.round;
        if !self.labeled.is_empty() {
            self.train_classifier()?;
        }
        Ok(())
    }

    fn lookup(&self, id: &str) -> Result<usize, ActiveError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ActiveError::UnknownId(id.to_string()))
    }

    pub fn config(&self) -> &ActiveConfig {
        &self.cfg
    }

    pub fn pool(&self) -> &Dataset {
        &self.pool
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn labeled(&self) -> Vec<(String, usize)> {
        self.labeled
            .iter()
            .map(|&(i, l)| (self.pool.instances()[i].id.clone(), l))
            .collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn unlabeled_ids(&self) -> Vec<&str> {
        self.unlabeled
            .iter()
            .map(|&i| self.pool.instances()[i].id.as_str())
            .collect()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn events(&self) -> &[Event] {
        self.log.events()
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn discriminator(&self) -> &DenseNet {
        &self.discriminator
    }

    pub fn classifier(&self) -> Option<&DenseNet> {
        self.classifier.as_ref()
    }

    fn diverged(&self, e: NnError) -> ActiveError {
        match e {
            NnError::NonFinite(_) => ActiveError::Divergence {
                round: self.round,
                source: e,
            },
            other => other.into(),
        }
    }

    fn unlabeled_vec(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    /// `D(E(x))` for every unlabeled instance, in pool order.
    pub fn unlabeled_confidence(&self) -> Result<Vec<(String, f64)>, ActiveError> {
        let u = self.unlabeled_vec();
        if u.is_empty() {
            return Ok(Vec::new());
        }
        let scores = confidence(
            &self.encoder,
            &self.discriminator,
            self.inputs.select(Axis(0), &u).view(),
        )?;
        Ok(u.iter()
            .zip(scores)
            .map(|(&i, s)| (self.pool.instances()[i].id.clone(), s))
            .collect())
    }

    pub fn mean_unlabeled_confidence(&self) -> Result<Option<f64>, ActiveError> {
        let c = self.unlabeled_confidence()?;
        if c.is_empty() {
            return Ok(None);
        }
        Ok(Some(c.iter().map(|x| x.1).sum::<f64>() / c.len() as f64))
    }

    /// Alternating encoder and discriminator steps over mini-batches of the
    /// unlabeled pool, each paired with a labeled batch drawn with
    /// replacement. Returns the mean confidence on the unlabeled pool.
    pub fn joint_update(&mut self) -> Result<Option<f64>, ActiveError> {
        if self.labeled.is_empty() || self.unlabeled.is_empty() {
            return self.mean_unlabeled_confidence();
        }
        let mut r = rng::substream(self.cfg.seed, &format!("active/batches/{}", self.round));
        let mut u = self.unlabeled_vec();
        let update_encoder = !self.cfg.freeze_encoder && self.cfg.lambda_e > 0.0;
        for _ in 0..self.cfg.inner_epochs {
            u.shuffle(&mut r);
            for chunk in u.chunks(self.cfg.batch_size) {
                let lb: Vec<usize> = (0..chunk.len())
                    .map(|_| self.labeled[r.random_range(0..self.labeled.len())].0)
                    .collect();
                let xl = self.inputs.select(Axis(0), &lb);
                let xu = self.inputs.select(Axis(0), chunk);
                if update_encoder {
                    let (_, mut g) =
                        encoder_loss(&self.encoder, &self.discriminator, xl.view(), xu.view())?;
                    g.scale(self.cfg.lambda_e);
                    let res = self.opt_e.step(&mut self.encoder, &g);
                    res.map_err(|e| self.diverged(e))?;
                }
                if self.cfg.lambda_d > 0.0 {
                    let (_, mut g) = discriminator_loss(
                        &self.encoder,
                        &self.discriminator,
                        xl.view(),
                        xu.view(),
                    )?;
                    g.scale(self.cfg.lambda_d);
                    let res = self.opt_d.step(&mut self.discriminator, &g);
                    res.map_err(|e| self.diverged(e))?;
                }
            }
        }
        self.mean_unlabeled_confidence()
    }

    /// Up to `k` unlabeled instances under the configured strategy, with
    /// their confidence.
    pub fn select_informative(&self, k: usize) -> Result<Vec<(String, f64)>, ActiveError> {
        let scored = self.unlabeled_confidence()?;
        let ids: Vec<&str> = scored.iter().map(|s| s.0.as_str()).collect();
        let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
        let picked = match self.cfg.strategy {
            Strategy::Highest => rank_by_confidence(&ids, &scores, k, true),
            Strategy::Lowest => rank_by_confidence(&ids, &scores, k, false),
            Strategy::Random => {
                let mut r = rng::substream(self.cfg.seed, &format!("active/random/{}", self.round));
                index::sample(&mut r, ids.len(), k.min(ids.len())).into_vec()
            }
        };
        Ok(picked.into_iter().map(|i| scored[i].clone()).collect())
    }

    /// Sends `ids` to the annotator and applies its decisions in order. An
    /// aborted or invalid answer stops at that point; the applied prefix is
    /// kept and the reason returned.
    pub fn annotate<A: Annotator + ?Sized>(
        &mut self,
        ids: &[String],
        annotator: &mut A,
    ) -> Result<Option<String>, ActiveError> {
        let mut idx = Vec::with_capacity(ids.len());
        for id in ids {
            let i = self.lookup(id)?;
            if !self.unlabeled.contains(&i) {
                return Err(ActiveError::AlreadyLabeled(id.clone()));
            }
            idx.push(i);
        }
        if idx.is_empty() {
            return Ok(None);
        }
        let scores = confidence(
            &self.encoder,
            &self.discriminator,
            self.inputs.select(Axis(0), &idx).view(),
        )?;
        let queries: Vec<Query<'_>> = idx
            .iter()
            .zip(&scores)
            .map(|(&i, &c)| Query {
                instance: &self.pool.instances()[i],
                confidence: c,
            })
            .collect();
        let answer = annotator.annotate(self.round, &queries, &self.label_names);
        drop(queries);

        let mut stop = answer.aborted.clone();
        if answer.decisions.len() > idx.len() {
            stop = Some(format!(
                "{} decisions for {} instances",
                answer.decisions.len(),
                idx.len()
            ));
        }
        let usable = if answer.decisions.len() > idx.len() {
            0
        } else {
            answer.decisions.len()
        };
        for (&i, decision) in idx.iter().zip(&answer.decisions[..usable]) {
            let label = match self.resolve(decision) {
                Ok(l) => l,
                Err(message) => {
                    stop = Some(format!("{}: {message}", self.pool.instances()[i].id));
                    break;
                }
            };
            if label == self.label_names.len() {
                let Decision::Create(name) = decision else {
                    unreachable!()
                };
                self.label_names.push(name.trim().to_string());
            }
            self.unlabeled.remove(&i);
            self.labeled.push((i, label));
            self.log.record(Event {
                label_index: Some(label),
                label_name: Some(self.label_names[label].clone()),
                ..Event::new(
                    self.round,
                    EventKind::Labeled,
                    vec![self.pool.instances()[i].id.clone()],
                )
            })?;
        }
        if usable < idx.len() && stop.is_none() {
            stop = Some(format!("annotator answered {usable} of {}", idx.len()));
        }
        self.pending.retain(|i| self.unlabeled.contains(i));
        Ok(stop)
    }

    fn resolve(&self, decision: &Decision) -> Result<usize, String> {
        match decision {
            Decision::Assign(l) if *l < self.label_names.len() => Ok(*l),
            Decision::Assign(l) => Err(format!("label index {l} does not exist")),
            Decision::Create(name) => {
                let name = name.trim();
                if name.is_empty() {
                    return Err("empty relation name".into());
                }
                Ok(self
                    .label_names
                    .iter()
                    .position(|n| n == name)
                    .unwrap_or(self.label_names.len()))
            }
        }
    }

    /// Fits a fresh softmax classifier on every labeled instance.
    pub fn train_classifier(&mut self) -> Result<(), ActiveError> {
        if self.labeled.is_empty() {
            return Err(ActiveError::NoLabels);
        }
        let classes = self.label_names.len();
        if classes == 1 {
            log::warn!(
                "round {}: a single relation is labeled; the classifier predicts it everywhere",
                self.round
            );
        }
        let rows: Vec<usize> = self.labeled.iter().map(|l| l.0).collect();
        let y: Vec<usize> = self.labeled.iter().map(|l| l.1).collect();
        let x = self.features.select(Axis(0), &rows);
        let mut init = rng::substream(self.cfg.seed, &format!("active/cls/{}", self.round));
        let mut cls = DenseNet::new(&[x.ncols(), classes], &[Activation::Identity], &mut init);
        let mut opt = Optimizer::new(self.cfg.cls_optimizer, self.cfg.cls_lr);
        let n = rows.len() as f64;
        for _ in 0..self.cfg.cls_epochs {
            let (_, mut g) = classifier_loss(&cls, x.view(), &y)?;
            g.scale(1.0 / n);
            opt.step(&mut cls, &g).map_err(|e| self.diverged(e))?;
        }
        self.classifier = Some(cls);
        self.log
            .record(Event::new(self.round, EventKind::Trained, Vec::new()))?;
        Ok(())
    }

    /// Label index predicted for each feature row.
    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Vec<usize>, ActiveError> {
        let cls = self.classifier.as_ref().ok_or(ActiveError::NoLabels)?;
        Ok(argmax_rows(&cls.predict(features)?))
    }

    pub fn predict_names(&self, features: ArrayView2<f64>) -> Result<Vec<String>, ActiveError> {
        Ok(self
            .predict(features)?
            .into_iter()
            .map(|i| self.label_names[i].clone())
            .collect())
    }

    /// Fraction of labeled instances the classifier gets right.
    pub fn training_accuracy(&self) -> Result<f64, ActiveError> {
        let rows: Vec<usize> = self.labeled.iter().map(|l| l.0).collect();
        let pred = self.predict(self.features.select(Axis(0), &rows).view())?;
        let hits = pred
            .iter()
            .zip(&self.labeled)
            .filter(|(p, l)| **p == l.1)
            .count();
        Ok(hits as f64 / rows.len().max(1) as f64)
    }

    fn seed_round(&mut self) -> Result<(), ActiveError> {
        let n = self.cfg.seminal_size;
        if self.pool.len() < n {
            return Err(ActiveError::PoolTooSmall {
                need: n,
                have: self.pool.len(),
            });
        }
        let u = self.unlabeled_vec();
        let mut r = rng::substream(self.cfg.seed, "active/seminal");
        let mut picks: Vec<usize> = index::sample(&mut r, u.len(), n)
            .into_iter()
            .map(|j| u[j])
            .collect();
        picks.sort_unstable();
        let ids: Vec<String> = picks
            .iter()
            .map(|&i| self.pool.instances()[i].id.clone())
            .collect();
        let conf = self.mean_unlabeled_confidence()?;
        self.log.record(Event {
            disc_confidence_mean: conf,
            ..Event::new(0, EventKind::Seeded, ids.clone())
        })?;
        self.seeded = true;
        self.pending = picks;
        self.history.push(RoundRecord {
            round: 0,
            selected: ids,
            disc_confidence_mean: conf,
            labeled_count: 0,
            label_count: 0,
            metrics: None,
            selection_seconds: 0.0,
        });
        Ok(())
    }

    fn finish_round<A, F>(
        &mut self,
        annotator: &mut A,
        eval: &mut F,
    ) -> Result<Option<String>, ActiveError>
    where
        A: Annotator + ?Sized,
        F: FnMut(&ActiveSession) -> Option<MetricReport>,
    {
        let ids: Vec<String> = self
            .pending
            .iter()
            .map(|&i| self.pool.instances()[i].id.clone())
            .collect();
        let stop = self.annotate(&ids, annotator)?;
        if !self.labeled.is_empty() {
            self.train_classifier()?;
        }
        let metrics = if self.classifier.is_some() {
            eval(self)
        } else {
            None
        };
        let (labeled_count, label_count) = (self.labeled.len(), self.label_names.len());
        if let Some(rec) = self.history.last_mut().filter(|r| r.round == self.round) {
            rec.labeled_count = labeled_count;
            rec.label_count = label_count;
            rec.metrics = metrics;
        }
        Ok(stop)
    }

    /// Seminal round followed by `rounds` select-annotate-train rounds.
    /// `eval` is called after every classifier fit to snapshot held-out
    /// metrics. Resumes where a restored session left off.
    pub fn run_loop<A, F>(
        &mut self,
        annotator: &mut A,
        mut eval: F,
    ) -> Result<LoopOutcome, ActiveError>
    where
        A: Annotator + ?Sized,
        F: FnMut(&ActiveSession) -> Option<MetricReport>,
    {
        let mut outcome = LoopOutcome {
            labeled: 0,
            rounds_completed: 0,
            stopped_early: None,
        };
        if !self.seeded {
            self.seed_round()?;
        }
        if !self.pending.is_empty() || self.classifier.is_none() {
            if let Some(reason) = self.finish_round(annotator, &mut eval)? {
                outcome.stopped_early = Some(reason);
                outcome.labeled = self.labeled.len();
                return Ok(outcome);
            }
        }
        outcome.rounds_completed = self.round;
        while self.round < self.cfg.rounds {
            if self.unlabeled.is_empty() {
                outcome.stopped_early = Some(format!("pool exhausted after round {}", self.round));
                break;
            }
            self.round += 1;
            let conf = self.joint_update()?;
            let started = Instant::now();
            let picked = self.select_informative(self.cfg.k_per_round)?;
            let selection_seconds = started.elapsed().as_secs_f64();
            let ids: Vec<String> = picked.into_iter().map(|p| p.0).collect();
            self.log.record(Event {
                disc_confidence_mean: conf,
                ..Event::new(self.round, EventKind::Selected, ids.clone())
            })?;
            self.pending = ids.iter().map(|id| self.index[id]).collect();
            self.history.push(RoundRecord {
                round: self.round,
                selected: ids,
                disc_confidence_mean: conf,
                labeled_count: 0,
                label_count: 0,
                metrics: None,
                selection_seconds,
            });
            let stop = self.finish_round(annotator, &mut eval)?;
            outcome.rounds_completed = self.round;
            if let Some(reason) = stop {
                outcome.stopped_early = Some(reason);
                break;
            }
        }
        outcome.labeled = self.labeled.len();
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::{replay, Annotation, OracleAnnotator};
    use crate::data::{gen_synthetic, Instance, Span, SyntheticSpec};
    use ndarray::array;

    fn inst(id: &str, rel: &str, v: [f32; 2]) -> Instance {
        Instance {
            id: id.into(),
            tokens: vec!["a".into(), "b".into()],
            head_span: Span(0, 1),
            tail_span: Span(1, 2),
            gold_relation: Some(rel.into()),
            head_vec: vec![v[0]],
            tail_vec: vec![v[1]],
        }
    }

    fn small_session(cfg: ActiveConfig) -> ActiveSession {
        let instances = vec![
            inst("a", "r1", [0.0, 0.0]),
            inst("b", "r1", [0.1, 0.0]),
            inst("c", "r2", [5.0, 5.0]),
            inst("d", "r2", [5.1, 5.0]),
            inst("e", "r3", [-5.0, 5.0]),
            inst("f", "r3", [-5.1, 5.0]),
        ];
        let pool = Dataset::new(instances).unwrap();
        let features = relation_matrix(&pool);
        ActiveSession::new(
            pool,
            DenseNet::identity(2, Activation::Identity),
            features,
            cfg,
            EventLog::memory(),
        )
        .unwrap()
    }

    fn gold_of(s: &ActiveSession) -> HashMap<String, String> {
        s.pool()
            .instances()
            .iter()
            .map(|i| (i.id.clone(), i.gold_relation.clone().unwrap()))
            .collect()
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(
            rank_by_confidence(&["a", "b", "c"], &[0.9, 0.1, 0.7], 2, true),
            vec![0, 2]
        );
        assert_eq!(
            rank_by_confidence(&["a", "b", "c"], &[0.9, 0.1, 0.7], 10, true).len(),
            3
        );
        assert_eq!(
            rank_by_confidence(&["z", "m", "a"], &[0.5, 0.5, 0.5], 2, true),
            vec![2, 1]
        );
        assert_eq!(
            rank_by_confidence(&["a", "b", "c"], &[0.9, 0.1, 0.7], 1, false),
            vec![1]
        );
    }

    #[test]
    fn same_new_relation_gets_one_index() {
        let mut s = small_session(ActiveConfig::default());
        s.annotate(&["c".into(), "d".into()], &mut OracleAnnotator)
            .unwrap();
        assert_eq!(s.labeled(), vec![("c".into(), 0), ("d".into(), 0)]);
        assert_eq!(s.label_names(), ["r2"]);
        s.annotate(&["a".into(), "e".into(), "f".into()], &mut OracleAnnotator)
            .unwrap();
        assert_eq!(s.label_names(), ["r2", "r1", "r3"]);
        assert!(alg1_consistent(&s.labeled(), &gold_of(&s)));
    }

    #[test]
    fn existing_relation_is_reused() {
        let mut s = small_session(ActiveConfig::default());
        s.annotate(&["a".into()], &mut OracleAnnotator).unwrap();
        s.annotate(&["b".into()], &mut OracleAnnotator).unwrap();
        assert_eq!(s.labeled()[1].1, 0);
        assert_eq!(s.label_names().len(), 1);
    }

    #[test]
    fn empty_annotation_changes_nothing() {
        let mut s = small_session(ActiveConfig::default());
        assert_eq!(s.annotate(&[], &mut OracleAnnotator).unwrap(), None);
        assert_eq!(s.unlabeled_count(), 6);
        assert!(s.events().is_empty());
    }

    #[test]
    fn labeled_ids_are_rejected() {
        let mut s = small_session(ActiveConfig::default());
        s.annotate(&["a".into()], &mut OracleAnnotator).unwrap();
        assert!(matches!(
            s.annotate(&["a".into()], &mut OracleAnnotator),
            Err(ActiveError::AlreadyLabeled(_))
        ));
        assert!(matches!(
            s.annotate(&["zz".into()], &mut OracleAnnotator),
            Err(ActiveError::UnknownId(_))
        ));
    }

    struct Quitter;
    impl Annotator for Quitter {
        fn annotate(&mut self, _: usize, _: &[Query<'_>], _: &[String]) -> Annotation {
            Annotation {
                decisions: vec![Decision::Create("x".into())],
                aborted: Some("timeout".into()),
            }
        }
    }

    #[test]
    fn abort_applies_prefix() {
        let mut s = small_session(ActiveConfig::default());
        let stop = s
            .annotate(&["a".into(), "b".into(), "c".into()], &mut Quitter)
            .unwrap();
        assert_eq!(stop.as_deref(), Some("timeout"));
        assert_eq!(s.labeled_count(), 1);
        assert_eq!(s.unlabeled_count(), 5);
    }

    #[test]
    fn created_duplicate_name_reuses_index() {
        struct Namer;
        impl Annotator for Namer {
            fn annotate(&mut self, _: usize, q: &[Query<'_>], _: &[String]) -> Annotation {
                Annotation::complete(
                    q.iter()
                        .map(|_| Decision::Create(" same ".into()))
                        .collect(),
                )
            }
        }
        let mut s = small_session(ActiveConfig::default());
        s.annotate(&["a".into(), "c".into()], &mut Namer).unwrap();
        assert_eq!(s.label_names(), ["same"]);
        assert_eq!(s.labeled(), vec![("a".into(), 0), ("c".into(), 0)]);
    }

    #[test]
    fn classifier_output_grows_with_labels() {
        let mut s = small_session(ActiveConfig::default());
        s.annotate(&["a".into(), "c".into(), "e".into()], &mut OracleAnnotator)
            .unwrap();
        s.train_classifier().unwrap();
        assert_eq!(s.classifier().unwrap().out_dim(), 3);
        assert_eq!(s.training_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn single_class_predicts_it_everywhere() {
        let mut s = small_session(ActiveConfig::default());
        s.annotate(&["a".into()], &mut OracleAnnotator).unwrap();
        s.train_classifier().unwrap();
        let all = relation_matrix(s.pool());
        assert!(s.predict(all.view()).unwrap().iter().all(|&p| p == 0));
    }

    #[test]
    fn perfect_classifier_has_zero_loss() {
        let cls = DenseNet::from_layers(vec![crate::nn::Layer {
            weights: array![[1e4, -1e4], [0.0, 0.0]],
            bias: ndarray::Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let (l, _) =
            classifier_loss(&cls, array![[1.0, 0.0], [-1.0, 0.0]].view(), &[0, 1]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_weights_freeze_their_network() {
        let cfg = ActiveConfig {
            seminal_size: 2,
            lambda_e: 0.0,
            ..ActiveConfig::default()
        };
        let mut s = small_session(cfg);
        s.annotate(&["a".into(), "c".into()], &mut OracleAnnotator)
            .unwrap();
        let (e0, d0) = (s.encoder().clone(), s.discriminator().clone());
        s.joint_update().unwrap();
        assert_eq!(s.encoder(), &e0);
        assert_ne!(s.discriminator(), &d0);

        let mut s = small_session(ActiveConfig {
            seminal_size: 2,
            lambda_d: 0.0,
            ..ActiveConfig::default()
        });
        s.annotate(&["a".into(), "c".into()], &mut OracleAnnotator)
            .unwrap();
        let (e0, d0) = (s.encoder().clone(), s.discriminator().clone());
        s.joint_update().unwrap();
        assert_ne!(s.encoder(), &e0);
        assert_eq!(s.discriminator(), &d0);
    }

    fn synthetic_pool(seed: u64) -> Dataset {
        let spec = SyntheticSpec {
            n_known: 6,
            n_novel: 0,
            per_class: 40,
            seed,
            ..SyntheticSpec::default()
        };
        gen_synthetic(&spec).unwrap().0
    }

    fn raw_session(pool: Dataset, cfg: ActiveConfig) -> ActiveSession {
        let features = relation_matrix(&pool);
        let enc = DenseNet::identity(features.ncols(), Activation::Identity);
        ActiveSession::new(pool, enc, features, cfg, EventLog::memory()).unwrap()
    }

    #[test]
    fn loop_labels_the_budget_and_conserves_the_pool() {
        let cfg = ActiveConfig {
            seminal_size: 8,
            k_per_round: 8,
            rounds: 3,
            ..ActiveConfig::default()
        };
        let mut s = raw_session(synthetic_pool(1), cfg);
        let mut counts = Vec::new();
        let out = s
            .run_loop(&mut OracleAnnotator, |s| {
                counts.push(s.labeled_count());
                None
            })
            .unwrap();
        assert_eq!(out.labeled, 32);
        assert_eq!(out.rounds_completed, 3);
        assert_eq!(counts, vec![8, 16, 24, 32]);
        assert_eq!(s.labeled_count() + s.unlabeled_count(), 240);
        assert!(alg1_consistent(&s.labeled(), &gold_of(&s)));
        assert_eq!(s.history().len(), 4);
        let first = s.history()[1].disc_confidence_mean.unwrap();
        assert!(first > 0.5, "round-1 confidence {first}");

        let st = replay(s.events()).unwrap();
        let mut a = st.labeled.clone();
        let mut b = s.labeled();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(st.label_names, s.label_names());
    }

    #[test]
    fn zero_rounds_labels_only_the_seminal_set() {
        let cfg = ActiveConfig {
            seminal_size: 8,
            rounds: 0,
            ..ActiveConfig::default()
        };
        let mut s = raw_session(synthetic_pool(2), cfg);
        assert_eq!(
            s.run_loop(&mut OracleAnnotator, |_| None).unwrap().labeled,
            8
        );
    }

    #[test]
    fn pool_exhaustion_ends_early() {
        let cfg = ActiveConfig {
            seminal_size: 200,
            k_per_round: 32,
            rounds: 5,
            ..ActiveConfig::default()
        };
        let mut s = raw_session(synthetic_pool(3), cfg);
        let out = s.run_loop(&mut OracleAnnotator, |_| None).unwrap();
        assert_eq!(out.labeled, 240);
        assert!(out.stopped_early.unwrap().contains("exhausted"));
    }

    #[test]
    fn too_small_pool_is_an_error() {
        let mut s = small_session(ActiveConfig::default());
        assert!(matches!(
            s.run_loop(&mut OracleAnnotator, |_| None),
            Err(ActiveError::PoolTooSmall { need: 32, have: 6 })
        ));
    }

    #[test]
    fn restored_session_finishes_identically_labeled() {
        let cfg = ActiveConfig {
            seminal_size: 8,
            k_per_round: 8,
            rounds: 2,
            ..ActiveConfig::default()
        };
        let mut first = raw_session(synthetic_pool(4), cfg.clone());
        first.run_loop(&mut OracleAnnotator, |_| None).unwrap();
        let st = replay(first.events()).unwrap();
        let mut second = raw_session(synthetic_pool(4), cfg);
        second.restore(&st).unwrap();
        assert_eq!(second.labeled(), first.labeled());
        assert_eq!(second.round(), 2);
        let out = second.run_loop(&mut OracleAnnotator, |_| None).unwrap();
        assert_eq!(out.labeled, 24);
    }

    #[test]
    fn separable_classes_are_fit() {
        let mut s = raw_session(synthetic_pool(5), ActiveConfig::default());
        let ids: Vec<String> = s.unlabeled_ids().iter().map(|s| s.to_string()).collect();
        s.annotate(&ids, &mut OracleAnnotator).unwrap();
        s.train_classifier().unwrap();
        assert!(s.training_accuracy().unwrap() >= 0.99);
    }

    #[test]
    fn label_known_stays_in_known_space() {
        let train = synthetic_pool(6);
        let cfg = crate::repr::ReprConfig {
            proj_dim: 16,
            ..Default::default()
        };
        let model = crate::repr::pretrain(&train, &cfg).unwrap();
        let out = label_known(&train, &model, Exec::default()).unwrap();
        let hits = out
            .instances()
            .iter()
            .zip(train.instances())
            .filter(|(a, b)| a.gold_relation == b.gold_relation)
            .count();
        assert!(
            hits as f64 / train.len() as f64 >= 0.99,
            "{hits} of {}; curves {:?}",
            train.len(),
            model.curves.last()
        );
        assert!(out.label_space().is_subset(train.label_space()));
        let empty = Dataset::with_dim(Vec::new(), Some(train.dim())).unwrap();
        assert!(label_known(&empty, &model, Exec::default())
            .unwrap()
            .is_empty());
    }
}
