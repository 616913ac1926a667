//! End-to-end runs: data, variant, pretraining, LOF split, active labeling
//! and evaluation on `X_K ∪ X_N^test`, plus the ablation drivers and the
//! report over a finished run directory.
//!
//! Each seed is a root for named substreams (`data`, `variant`, `repr`,
//! `split`, `active`), so arms of an ablation that share a seed see the same
//! data and the same pretrained model.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::active::{
    read_events, replay, ActiveConfig, ActiveError, ActiveSession, Annotator, EventLog,
    LoopOutcome, ReplayState, RoundRecord, Strategy,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{
    gen_synthetic, load_jsonl, make_imbalanced_variant, make_noisy_variant, split_novel, DataError,
    Dataset, SyntheticSpec, VariantKind, VariantSpec,
};
use crate::metrics::{mean_std, write_summary_csv, Labeling, MetricReport};
use crate::outlier::{novel_f1, split_by_embeddings, LofReport, OutlierError};
use crate::repr::{embed_all, pretrain, write_curves, ReprError, ReprModel};
use crate::rng::substream_seed;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Data {
        stage: &'static str,
        #[source]
        source: DataError,
    },
    #[error("pretrain: {0}")]
    Repr(#[from] ReprError),
    #[error("split: {0}")]
    Outlier(#[from] OutlierError),
    #[error("active loop: {0}")]
    Active(#[from] ActiveError),
    #[error("evaluate: {0}")]
    Evaluate(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
}

impl ExperimentError {
    /// True for failures caused by input data rather than by a run.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            ExperimentError::Data { .. } | ExperimentError::MissingArtifacts(_)
        )
    }
}

fn data_err(stage: &'static str) -> impl FnOnce(DataError) -> ExperimentError {
    move |source| ExperimentError::Data { stage, source }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Git-style object hash: SHA-256 over `"blob <len>\0" ‖ content`, hex.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for inst in ds.instances() {
        out.extend(serde_json::to_vec(inst).expect("instances serialize"));
        out.push(b'\n');
    }
    out
}

/// Everything that is shared by the arms of one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub train: Dataset,
    /// Mixed test pool after the variant transform.
    pub pool: Dataset,
    pub known: BTreeSet<String>,
    pub model: ReprModel,
    /// `(name, content hash)` of each input.
    pub input_hashes: Vec<(String, String)>,
}

/// Known/novel partition of the pool and the labeling/evaluation halves of
/// the novel part.
#[derive(Debug, Clone)]
pub struct Split {
    pub xk: Dataset,
    pub xn_train: Dataset,
    pub xn_test: Dataset,
    pub lof: Option<LofReport>,
}

fn load_inputs(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, Dataset, Vec<(String, String)>), ExperimentError> {
    match (&cfg.train, &cfg.test) {
        (Some(train), Some(test)) => {
            let tr = load_jsonl(train).map_err(data_err("ingest"))?;
            let te = load_jsonl(test).map_err(data_err("ingest"))?;
            let hash = |p: &Path| -> Result<String, ExperimentError> {
                Ok(content_hash(&fs::read(p).map_err(io_err(p))?))
            };
            let hashes = vec![
                (train.display().to_string(), hash(train)?),
                (test.display().to_string(), hash(test)?),
            ];
            Ok((tr, te, hashes))
        }
        _ => {
            let spec = SyntheticSpec {
                seed: substream_seed(seed, "data"),
                ..cfg.synthetic.clone()
            };
            let (tr, te) = gen_synthetic(&spec).map_err(data_err("ingest"))?;
            let hashes = vec![
                (
                    "synthetic/train".to_string(),
                    content_hash(&dataset_bytes(&tr)),
                ),
                (
                    "synthetic/test".to_string(),
                    content_hash(&dataset_bytes(&te)),
                ),
            ];
            Ok((tr, te, hashes))
        }
    }
}

/// Default discard probabilities for an imbalanced variant of synthetic data:
/// novel relations split in thirds, discarded with 0.4, 0.7 and 0.85.
pub fn default_discard_table(novel: &[String]) -> std::collections::BTreeMap<String, f64> {
    let n = novel.len();
    novel
        .iter()
        .enumerate()
        .map(|(i, rel)| {
            let p = match 3 * i / n.max(1) {
                0 => 0.4,
                1 => 0.7,
                _ => 0.85,
            };
            (rel.clone(), p)
        })
        .collect()
}

/// Applies the configured variant to `(train, test)`.
pub fn apply_variant(
    spec: &VariantSpec,
    seed: u64,
    train: Dataset,
    test: Dataset,
) -> Result<(Dataset, Dataset), ExperimentError> {
    let noisy = VariantSpec {
        kind: VariantKind::Noisy,
        seed: substream_seed(seed, "variant/noise"),
        ..spec.clone()
    };
    match spec.kind {
        VariantKind::Original => Ok((train, test)),
        VariantKind::Noisy => {
            make_noisy_variant(&train, &test, &noisy).map_err(data_err("variant"))
        }
        VariantKind::Imbalanced => {
            let (train, test) =
                make_noisy_variant(&train, &test, &noisy).map_err(data_err("variant"))?;
            let mut imb = VariantSpec {
                seed: substream_seed(seed, "variant/discard"),
                ..spec.clone()
            };
            if imb.discard_table.is_empty() {
                let novel: Vec<String> = test
                    .label_space()
                    .difference(train.label_space())
                    .cloned()
                    .collect();
                imb.discard_table = default_discard_table(&novel);
            }
            let test = make_imbalanced_variant(&test, &imb).map_err(data_err("variant"))?;
            Ok((train, test))
        }
    }
}

/// Ingest, variant and pretraining for one seed.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let (train, test, input_hashes) = load_inputs(cfg, seed)?;
    let (train, pool) = apply_variant(&cfg.variant, seed, train, test)?;
    let repr_cfg = crate::repr::ReprConfig {
        seed: substream_seed(seed, "repr"),
        ..cfg.repr.clone()
    };
    log::info!("seed {seed}: pretraining on {} instances", train.len());
    let model = pretrain(&train, &repr_cfg)?;
    Ok(Prepared {
        seed,
        known: train.label_space().clone(),
        train,
        pool,
        model,
        input_hashes,
    })
}

/// LOF split of the pool (or the whole pool as novel when `use_lof` is
/// false), then the train/test split of the novel part.
pub fn split(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    use_lof: bool,
    novel_train_frac: f64,
) -> Result<Split, ExperimentError> {
    let (xk, xn, lof) = if use_lof {
        let h = embed_all(&prep.model, &prep.pool, cfg.exec).map_err(OutlierError::from)?;
        let (xk, xn, report) = split_by_embeddings(&prep.pool, h.view(), &cfg.lof, cfg.exec)?;
        (xk, xn, Some(report))
    } else {
        let empty =
            Dataset::with_dim(Vec::new(), Some(prep.pool.dim())).map_err(data_err("split"))?;
        (empty, prep.pool.clone(), None)
    };
    let (xn_train, xn_test) = split_novel(
        &xn,
        novel_train_frac,
        substream_seed(prep.seed, "split"),
        cfg.stratified_split,
    )
    .map_err(data_err("split"))?;
    log::info!(
        "seed {}: |X_K| = {}, |X_N| = {} ({} to label, {} held out)",
        prep.seed,
        xk.len(),
        xn.len(),
        xn_train.len(),
        xn_test.len()
    );
    Ok(Split {
        xk,
        xn_train,
        xn_test,
        lof,
    })
}

/// Binary F1 of the LOF novelty flags against gold novelty.
pub fn split_quality(prep: &Prepared, report: &LofReport) -> f64 {
    let gold: Vec<bool> = prep
        .pool
        .instances()
        .iter()
        .map(|i| {
            i.gold_relation
                .as_ref()
                .is_some_and(|r| !prep.known.contains(r))
        })
        .collect();
    novel_f1(&report.is_novel, &gold)
}

fn gold_labels(ds: &Dataset) -> Result<Vec<String>, ExperimentError> {
    ds.instances()
        .iter()
        .map(|i| {
            i.gold_relation.clone().ok_or_else(|| {
                ExperimentError::Evaluate(format!("instance {} has no gold relation", i.id))
            })
        })
        .collect()
}

/// Fixed parts of the evaluation on `X_K ∪ X_N^test`.
struct Evaluator {
    known_pred: Vec<String>,
    test_features: Array2<f64>,
    gold: Vec<String>,
}

impl Evaluator {
    fn new(
        prep: &Prepared,
        split: &Split,
        cfg: &ExperimentConfig,
    ) -> Result<Self, ExperimentError> {
        let known_pred = prep
            .model
            .label_known(&split.xk, cfg.exec)
            .map_err(|e| ExperimentError::Evaluate(e.to_string()))?
            .into_iter()
            .map(|r| format!("known:{r}"))
            .collect();
        let test_features = embed_all(&prep.model, &split.xn_test, cfg.exec)
            .map_err(|e| ExperimentError::Evaluate(e.to_string()))?;
        let mut gold = gold_labels(&split.xk)?;
        gold.extend(gold_labels(&split.xn_test)?);
        Ok(Evaluator {
            known_pred,
            test_features,
            gold,
        })
    }

    fn evaluate(&self, session: &ActiveSession) -> Option<MetricReport> {
        let novel = session.predict_names(self.test_features.view()).ok()?;
        let mut pred = self.known_pred.clone();
        pred.extend(novel.into_iter().map(|n| format!("novel:{n}")));
        Some(MetricReport::evaluate(&Labeling::new(&pred, &self.gold)))
    }
}

/// Outcome of one active-labeling arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub seed: u64,
    pub metrics: MetricReport,
    pub history: Vec<RoundRecord>,
    pub labeled: usize,
    pub rounds_completed: usize,
    pub stopped_early: Option<String>,
}

impl ArmResult {
    pub fn f1_per_round(&self) -> Vec<f64> {
        self.history
            .iter()
            .filter_map(|r| r.metrics.map(|m| m.b3_f1))
            .collect()
    }

    pub fn confidence_per_round(&self) -> Vec<Option<f64>> {
        self.history
            .iter()
            .map(|r| r.disc_confidence_mean)
            .collect()
    }
}

pub fn active_config_for(cfg: &ExperimentConfig, seed: u64) -> ActiveConfig {
    ActiveConfig {
        seed: substream_seed(seed, "active"),
        ..cfg.active.clone()
    }
}

/// Callbacks and restart state for [`run_active_with`].
#[derive(Default)]
pub struct LoopHooks<'a> {
    /// Labeling state replayed from an earlier log of the same run.
    pub resume: Option<ReplayState>,
    /// Called once the session exists, before any annotation.
    pub on_start: Option<Box<dyn FnMut(&ActiveSession) + 'a>>,
    /// Called after every classifier fit with that round's metrics. The
    /// session history does not yet carry them.
    pub on_round: Option<Box<dyn FnMut(&ActiveSession, Option<&MetricReport>) + 'a>>,
}

/// Runs the active loop over `split.xn_train` and evaluates the merged
/// predictions after every round.
pub fn run_active(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    split: &Split,
    active: ActiveConfig,
    annotator: &mut dyn Annotator,
    log: EventLog,
) -> Result<(ArmResult, ActiveSession), ExperimentError> {
    run_active_with(
        cfg,
        prep,
        split,
        active,
        annotator,
        log,
        LoopHooks::default(),
    )
}

pub fn run_active_with(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    split: &Split,
    active: ActiveConfig,
    annotator: &mut dyn Annotator,
    log: EventLog,
    mut hooks: LoopHooks<'_>,
) -> Result<(ArmResult, ActiveSession), ExperimentError> {
    let eval = Evaluator::new(prep, split, cfg)?;
    let mut session =
        ActiveSession::from_model(split.xn_train.clone(), &prep.model, active, log, cfg.exec)?;
    if let Some(state) = &hooks.resume {
        session.restore(state)?;
        log::info!(
            "seed {}: resumed at round {} with {} labeled",
            prep.seed,
            state.round,
            state.labeled.len()
        );
    }
    if let Some(f) = hooks.on_start.as_mut() {
        f(&session);
    }
    let mut on_round = hooks.on_round;
    let outcome: LoopOutcome = session.run_loop(annotator, |s| {
        let m = eval.evaluate(s);
        if let Some(f) = on_round.as_mut() {
            f(s, m.as_ref());
        }
        m
    })?;
    if let Some(reason) = &outcome.stopped_early {
        log::warn!("seed {}: loop stopped early: {reason}", prep.seed);
    }
    let metrics = eval
        .evaluate(&session)
        .ok_or_else(|| ExperimentError::Evaluate("no classifier was trained".into()))?;
    let result = ArmResult {
        seed: prep.seed,
        metrics,
        history: session.history().to_vec(),
        labeled: outcome.labeled,
        rounds_completed: outcome.rounds_completed,
        stopped_early: outcome.stopped_early,
    };
    Ok((result, session))
}

/// Artifacts of one seed of the full pipeline.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub arm: ArmResult,
    pub split_f1: Option<f64>,
    pub dir: PathBuf,
}

fn confidence_csv(history: &[RoundRecord]) -> String {
    let mut s = String::from("round,disc_confidence_mean\n");
    for r in history {
        let c = r
            .disc_confidence_mean
            .map(|c| c.to_string())
            .unwrap_or_default();
        let _ = writeln!(s, "{},{c}", r.round);
    }
    s
}

fn f1_csv(history: &[RoundRecord]) -> String {
    let mut s = String::from("round,labeled");
    for c in MetricReport::COLUMNS {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for r in history {
        let _ = write!(s, "{},{}", r.round, r.labeled_count);
        match &r.metrics {
            Some(m) => m.values().iter().for_each(|v| {
                let _ = write!(s, ",{v}");
            }),
            None => s.push_str(&",".repeat(MetricReport::COLUMNS.len())),
        }
        s.push('\n');
    }
    s
}

fn metrics_json(m: &MetricReport) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize") + "\n"
}

/// One seed of the pipeline, writing every artifact into `dir`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    annotator: &mut dyn Annotator,
    dir: &Path,
) -> Result<SeedRun, ExperimentError> {
    run_seed_with(cfg, seed, annotator, dir, false, LoopHooks::default())
}

/// [`run_seed`] with loop hooks. With `resume`, an existing `session.jsonl`
/// in `dir` is replayed and extended instead of replaced; a log that fails
/// replay validation is an error.
pub fn run_seed_with(
    cfg: &ExperimentConfig,
    seed: u64,
    annotator: &mut dyn Annotator,
    dir: &Path,
    resume: bool,
    mut hooks: LoopHooks<'_>,
) -> Result<SeedRun, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("config.kv"), cfg.to_kv())?;
    write_file(&dir.join("seed"), format!("{seed}\n"))?;
    let prep = prepare(cfg, seed)?;
    let hashes: String = prep
        .input_hashes
        .iter()
        .map(|(n, h)| format!("{h}  {n}\n"))
        .collect();
    write_file(&dir.join("inputs.sha256"), hashes)?;
    let curves_path = dir.join("curves.csv");
    let mut curves = Vec::new();
    write_curves(&mut curves, &prep.model.curves).map_err(io_err(&curves_path))?;
    write_file(&curves_path, curves)?;

    let split = split(cfg, &prep, true, cfg.novel_train_frac)?;
    let report = split.lof.as_ref().expect("LOF arm");
    let lof_path = dir.join("lof.csv");
    let mut lof_csv = Vec::new();
    report
        .write_csv(&mut lof_csv, &prep.pool, Some(&prep.known))
        .map_err(io_err(&lof_path))?;
    write_file(&lof_path, lof_csv)?;
    let split_f1 = Some(split_quality(&prep, report));

    let log_path = dir.join("session.jsonl");
    if log_path.exists() {
        if resume {
            let events = read_events(&log_path)?;
            if !events.is_empty() {
                hooks.resume = Some(replay(&events)?);
            }
        } else {
            fs::remove_file(&log_path).map_err(io_err(&log_path))?;
        }
    }
    let log = EventLog::open(&log_path)?;
    let (arm, _) = run_active_with(
        cfg,
        &prep,
        &split,
        active_config_for(cfg, seed),
        annotator,
        log,
        hooks,
    )?;

    write_file(&dir.join("metrics.json"), metrics_json(&arm.metrics))?;
    write_file(
        &dir.join("history.json"),
        serde_json::to_string_pretty(&arm.history).expect("history serializes"),
    )?;
    write_file(&dir.join("confidence.csv"), confidence_csv(&arm.history))?;
    write_file(&dir.join("f1.csv"), f1_csv(&arm.history))?;
    Ok(SeedRun {
        arm,
        split_f1,
        dir: dir.to_path_buf(),
    })
}

pub fn seed_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("seed-{seed}"))
}

/// Every configured seed, then `summary.csv` / `summary.json` aggregated
/// over seeds.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    annotator: &mut dyn Annotator,
) -> Result<Vec<SeedRun>, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output).map_err(io_err(&cfg.output))?;
    write_file(&cfg.output.join("config.kv"), cfg.to_kv())?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        runs.push(run_seed(
            cfg,
            seed,
            annotator,
            &seed_dir(&cfg.output, seed),
        )?);
    }
    let reports: Vec<MetricReport> = runs.iter().map(|r| r.arm.metrics).collect();
    let mut csv = Vec::new();
    let path = cfg.output.join("summary.csv");
    write_summary_csv(&mut csv, &[("pipeline".to_string(), reports.clone())])
        .map_err(io_err(&path))?;
    write_file(&path, csv)?;
    write_file(
        &cfg.output.join("summary.json"),
        summary_json(&cfg.seeds, &reports),
    )?;
    Ok(runs)
}

fn summary_json(seeds: &[u64], reports: &[MetricReport]) -> String {
    let mut mean = serde_json::Map::new();
    let mut std = serde_json::Map::new();
    for (k, name) in MetricReport::COLUMNS.iter().enumerate() {
        let vals: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
        let (m, s) = mean_std(&vals);
        mean.insert(name.to_string(), m.into());
        std.insert(name.to_string(), s.into());
    }
    let value = serde_json::json!({
        "seeds": seeds,
        "per_seed": reports,
        "mean": mean,
        "std": std,
    });
    serde_json::to_string_pretty(&value).expect("summary serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Sampling,
    Lof,
    QueryRange,
}

impl std::str::FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sampling" => Ok(Ablation::Sampling),
            "lof" => Ok(Ablation::Lof),
            "query-range" => Ok(Ablation::QueryRange),
            other => Err(format!(
                "unknown ablation {other:?} (expected sampling, lof or query-range)"
            )),
        }
    }
}

/// Results of every arm of an ablation, keyed by arm name.
#[derive(Debug, Clone, Default)]
pub struct AblationReport {
    pub arms: Vec<(String, Vec<ArmResult>)>,
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> Option<&[ArmResult]> {
        self.arms
            .iter()
            .find(|a| a.0 == name)
            .map(|a| a.1.as_slice())
    }

    /// Final B³ F1 of each seed of `name`.
    pub fn final_f1(&self, name: &str) -> Vec<f64> {
        self.arm(name)
            .map(|runs| runs.iter().map(|r| r.metrics.b3_f1).collect())
            .unwrap_or_default()
    }

    /// `arm,seed,round,labeled,b3_f1` rows.
    pub fn per_round_csv(&self) -> String {
        let mut s = String::from("arm,seed,round,labeled,b3_f1\n");
        for (name, runs) in &self.arms {
            for r in runs {
                for rec in &r.history {
                    if let Some(m) = rec.metrics {
                        let _ = writeln!(
                            s,
                            "{name},{},{},{},{}",
                            r.seed, rec.round, rec.labeled_count, m.b3_f1
                        );
                    }
                }
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let rows: Vec<(String, Vec<MetricReport>)> = self
            .arms
            .iter()
            .map(|(n, runs)| (n.clone(), runs.iter().map(|r| r.metrics).collect()))
            .collect();
        let mut out = Vec::new();
        write_summary_csv(&mut out, &rows).expect("writing to memory");
        String::from_utf8(out).expect("utf-8")
    }
}

/// Train fractions swept by the query-range ablation.
pub const QUERY_RANGE: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Runs an ablation over every configured seed with the oracle annotator.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    which: Ablation,
) -> Result<AblationReport, ExperimentError> {
    cfg.validate()?;
    let mut report = AblationReport::default();
    let mut push = |name: String, r: ArmResult| match report.arms.iter_mut().find(|a| a.0 == name) {
        Some(a) => a.1.push(r),
        None => report.arms.push((name, vec![r])),
    };
    for &seed in &cfg.seeds {
        let prep = prepare(cfg, seed)?;
        let mut oracle = crate::active::OracleAnnotator;
        match which {
            Ablation::Sampling => {
                let sp = split(cfg, &prep, true, cfg.novel_train_frac)?;
                for strategy in [Strategy::Highest, Strategy::Random, Strategy::Lowest] {
                    let active = ActiveConfig {
                        strategy,
                        ..active_config_for(cfg, seed)
                    };
                    let (arm, _) =
                        run_active(cfg, &prep, &sp, active, &mut oracle, EventLog::memory())?;
                    log::info!("seed {seed} {strategy}: F1 {:.4}", arm.metrics.b3_f1);
                    push(strategy.to_string(), arm);
                }
            }
            Ablation::Lof => {
                for (name, use_lof) in [("with_lof", true), ("without_lof", false)] {
                    let sp = split(cfg, &prep, use_lof, cfg.novel_train_frac)?;
                    let (arm, _) = run_active(
                        cfg,
                        &prep,
                        &sp,
                        active_config_for(cfg, seed),
                        &mut oracle,
                        EventLog::memory(),
                    )?;
                    log::info!("seed {seed} {name}: F1 {:.4}", arm.metrics.b3_f1);
                    push(name.to_string(), arm);
                }
            }
            Ablation::QueryRange => {
                for frac in QUERY_RANGE {
                    let sp = split(cfg, &prep, true, frac)?;
                    let (arm, _) = run_active(
                        cfg,
                        &prep,
                        &sp,
                        active_config_for(cfg, seed),
                        &mut oracle,
                        EventLog::memory(),
                    )?;
                    push(format!("train_frac={frac}"), arm);
                }
            }
        }
    }
    Ok(report)
}

/// Writes `ablation_<which>.csv` (per round) and `ablation_<which>_summary.csv`.
pub fn write_ablation(
    dir: &Path,
    which: &str,
    report: &AblationReport,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(
        &dir.join(format!("ablation_{which}.csv")),
        report.per_round_csv(),
    )?;
    write_file(
        &dir.join(format!("ablation_{which}_summary.csv")),
        report.summary_csv(),
    )
}

/// What `report` found in a run directory.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub seeds: Vec<(PathBuf, Vec<RoundRecord>, MetricReport)>,
    pub markdown: String,
}

const REQUIRED: [&str; 2] = ["history.json", "metrics.json"];

fn seed_dirs(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    if dir.join("history.json").exists() || dir.join("metrics.json").exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("seed-"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Reads a finished run (one seed directory or a pipeline output with
/// `seed-*` subdirectories), writes `confidence.csv` and `f1.csv` per seed
/// and `report.md` at the top.
pub fn report(dir: &Path) -> Result<RunReport, ExperimentError> {
    let dirs = seed_dirs(dir)?;
    if dirs.is_empty() {
        return Err(ExperimentError::MissingArtifacts(
            REQUIRED
                .iter()
                .map(|f| dir.join(f).display().to_string())
                .collect(),
        ));
    }
    let missing: Vec<String> = dirs
        .iter()
        .flat_map(|d| REQUIRED.iter().map(move |f| d.join(f)))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::MissingArtifacts(missing));
    }
    let mut seeds = Vec::new();
    for d in &dirs {
        let read = |name: &str| -> Result<String, ExperimentError> {
            let p = d.join(name);
            fs::read_to_string(&p).map_err(io_err(&p))
        };
        let parse_err = |name: &str, e: serde_json::Error| ExperimentError::Data {
            stage: "report",
            source: DataError::Malformed {
                line: e.line(),
                message: format!("{}: {e}", d.join(name).display()),
            },
        };
        let history: Vec<RoundRecord> = serde_json::from_str(&read("history.json")?)
            .map_err(|e| parse_err("history.json", e))?;
        let metrics: MetricReport = serde_json::from_str(&read("metrics.json")?)
            .map_err(|e| parse_err("metrics.json", e))?;
        write_file(&d.join("confidence.csv"), confidence_csv(&history))?;
        write_file(&d.join("f1.csv"), f1_csv(&history))?;
        seeds.push((d.clone(), history, metrics));
    }

    let mut md = String::from("# Run report\n\n");
    let _ = writeln!(
        md,
        "| run | rounds | labeled | B3 F1 | V-measure | ARI | confidence r1 | confidence final |"
    );
    let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
    for (d, history, m) in &seeds {
        let name = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let conf = |r: Option<&RoundRecord>| {
            r.and_then(|r| r.disc_confidence_mean)
                .map(|c| format!("{c:.3}"))
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {:.1} | {:.1} | {:.1} | {} | {} |",
            history.len().saturating_sub(1),
            history.last().map_or(0, |r| r.labeled_count),
            100.0 * m.b3_f1,
            100.0 * m.v_measure,
            100.0 * m.ari,
            conf(history.get(1)),
            conf(history.last().filter(|r| r.round > 0)),
        );
    }
    let reports: Vec<MetricReport> = seeds.iter().map(|s| s.2).collect();
    let mut csv = Vec::new();
    write_summary_csv(&mut csv, &[("mean±std".into(), reports)]).expect("writing to memory");
    let _ = write!(md, "\n```\n{}```\n", String::from_utf8(csv).expect("utf-8"));
    write_file(&dir.join("report.md"), &md)?;
    Ok(RunReport {
        seeds,
        markdown: md,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active::OracleAnnotator;

    /// A configuration small enough for unit tests.
    pub(crate) fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        for kv in [
            "data.synthetic.n_known=4",
            "data.synthetic.n_novel=4",
            "data.synthetic.per_class=60",
            "data.synthetic.dim=8",
            "repr.epochs=10",
            "repr.proj_dim=16",
            "active.seminal_size=8",
            "active.k_per_round=8",
            "active.rounds=3",
            "active.cls_epochs=50",
            "seeds=1,2",
        ] {
            cfg.set_override(kv).unwrap();
        }
        cfg
    }

    #[test]
    fn content_hash_matches_git_scheme() {
        // sha256 of "blob 0\0"
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn discard_table_uses_thirds() {
        let names: Vec<String> = (0..6).map(|i| format!("N{i}")).collect();
        let t = default_discard_table(&names);
        let probs: Vec<f64> = names.iter().map(|n| t[n]).collect();
        assert_eq!(probs, vec![0.4, 0.4, 0.7, 0.7, 0.85, 0.85]);
    }

    #[test]
    fn pipeline_writes_artifacts_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.output = dir.path().join("a");
        let runs = run_pipeline(&cfg, &mut OracleAnnotator).unwrap();
        assert_eq!(runs.len(), 2);
        for r in &runs {
            assert_eq!(r.arm.labeled, 32);
            for f in [
                "config.kv",
                "seed",
                "inputs.sha256",
                "metrics.json",
                "lof.csv",
                "session.jsonl",
                "curves.csv",
                "history.json",
                "confidence.csv",
                "f1.csv",
            ] {
                assert!(r.dir.join(f).exists(), "{f}");
            }
            assert_eq!(
                fs::read_to_string(r.dir.join("confidence.csv"))
                    .unwrap()
                    .lines()
                    .count(),
                1 + 4
            );
        }
        let summary = fs::read_to_string(cfg.output.join("summary.csv")).unwrap();
        assert!(summary.starts_with("setting,seeds,b3_f1,"));

        cfg.output = dir.path().join("b");
        run_pipeline(&cfg, &mut OracleAnnotator).unwrap();
        for seed in [1, 2] {
            let a = fs::read(seed_dir(&dir.path().join("a"), seed).join("metrics.json")).unwrap();
            let b = fs::read(seed_dir(&dir.path().join("b"), seed).join("metrics.json")).unwrap();
            assert_eq!(a, b);
        }

        let rep = report(&dir.path().join("a")).unwrap();
        assert_eq!(rep.seeds.len(), 2);
        assert!(dir.path().join("a/report.md").exists());
    }

    #[test]
    fn report_on_empty_dir_lists_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        match report(dir.path()) {
            Err(ExperimentError::MissingArtifacts(m)) => assert_eq!(m.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn without_lof_the_whole_pool_is_novel() {
        let cfg = tiny();
        let prep = prepare(&cfg, 3).unwrap();
        let sp = split(&cfg, &prep, false, 0.4).unwrap();
        assert!(sp.lof.is_none());
        assert!(sp.xk.is_empty());
        assert_eq!(sp.xn_train.len() + sp.xn_test.len(), prep.pool.len());
    }

    #[test]
    fn variants_change_the_pool() {
        let cfg = tiny();
        let (tr, te, _) = load_inputs(&cfg, 0).unwrap();
        let noisy = VariantSpec {
            kind: VariantKind::Noisy,
            ..VariantSpec::default()
        };
        let (tr2, te2) = apply_variant(&noisy, 0, tr.clone(), te.clone()).unwrap();
        assert_eq!(tr2.len() + te2.len(), tr.len() + te.len());
        assert_eq!(
            tr2.len(),
            tr.len() - (0.4 * tr.len() as f64).floor() as usize
        );
        let imb = VariantSpec {
            kind: VariantKind::Imbalanced,
            ..VariantSpec::default()
        };
        let (_, te3) = apply_variant(&imb, 0, tr, te).unwrap();
        assert!(te3.len() < te2.len());
    }
}
