//! Experiment configuration as a flat `key = value` document.
//!
//! Keys are dotted (`active.k_per_round = 32`). Blank lines and lines starting
//! with `#` are ignored. Unknown keys are errors. [`ExperimentConfig::to_kv`]
//! writes every key, so a snapshot reloads to an identical config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::active::ActiveConfig;
use crate::data::{SyntheticSpec, VariantSpec};
use crate::exec::Exec;
use crate::outlier::{LofConfig, ThresholdMode};
use crate::repr::ReprConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Gold labels answer every query.
    Oracle,
    /// Queries go to the HTTP annotation service.
    Serve,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "serve" => Ok(Mode::Serve),
            other => Err(format!("unknown mode {other:?} (expected oracle or serve)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Oracle => "oracle",
            Mode::Serve => "serve",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Known-relation training set (JSONL). Synthetic data when unset.
    pub train: Option<PathBuf>,
    /// Mixed test pool (JSONL). Must be set together with `train`.
    pub test: Option<PathBuf>,
    pub output: PathBuf,
    pub synthetic: SyntheticSpec,
    pub variant: VariantSpec,
    /// Share of each novel relation that goes to the labeling pool.
    pub novel_train_frac: f64,
    pub stratified_split: bool,
    pub repr: ReprConfig,
    pub lof: LofConfig,
    pub active: ActiveConfig,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub exec: Exec,
    /// Labeled sentences shown per existing relation when serving.
    pub serve_exemplars: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: None,
            test: None,
            output: PathBuf::from("runs/default"),
            synthetic: SyntheticSpec {
                n_known: 8,
                n_novel: 12,
                per_class: 200,
                ..SyntheticSpec::default()
            },
            variant: VariantSpec::default(),
            novel_train_frac: 0.4,
            stratified_split: true,
            repr: ReprConfig::default(),
            lof: LofConfig::default(),
            active: ActiveConfig::default(),
            seeds: vec![0, 1, 2],
            mode: Mode::Oracle,
            exec: Exec::default(),
            serve_exemplars: 3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn threshold_mode(key: &str, value: &str) -> Result<ThresholdMode, ConfigError> {
    match value {
        "fixed" => Ok(ThresholdMode::Fixed),
        "quantile" => Ok(ThresholdMode::Quantile),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            message: "expected fixed or quantile".into(),
        }),
    }
}

fn exec_mode(key: &str, value: &str) -> Result<Exec, ConfigError> {
    match value {
        "parallel" => Ok(Exec::Parallel),
        "sequential" => Ok(Exec::Sequential),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            message: "expected parallel or sequential".into(),
        }),
    }
}

impl ExperimentConfig {
    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Applies every assignment in `text` on top of the current values.
    pub fn apply_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: n + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::Syntax { .. } => e,
                other => ConfigError::Syntax {
                    line: n + 1,
                    message: other.to_string(),
                },
            })?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            ConfigError::Invalid(format!("override {assignment:?} is not key=value"))
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let syn = &mut self.synthetic;
        let rep = &mut self.repr;
        let lof = &mut self.lof;
        let act = &mut self.active;
        match key {
            "data.train" => self.train = opt_path(value),
            "data.test" => self.test = opt_path(value),
            "output" => self.output = PathBuf::from(value),
            "seeds" => self.seeds = parse_list(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "exec" => self.exec = exec_mode(key, value)?,
            "serve.exemplars" => self.serve_exemplars = parse(key, value)?,
            "data.synthetic.n_known" => syn.n_known = parse(key, value)?,
            "data.synthetic.n_novel" => syn.n_novel = parse(key, value)?,
            "data.synthetic.per_class" => syn.per_class = parse(key, value)?,
            "data.synthetic.dim" => syn.dim = parse(key, value)?,
            "data.synthetic.cluster_spread" => syn.cluster_spread = parse(key, value)?,
            "data.synthetic.class_separation" => syn.class_separation = parse(key, value)?,
            "data.synthetic.novel_dispersion" => syn.novel_dispersion = parse(key, value)?,
            "variant.kind" => self.variant.kind = parse(key, value)?,
            "variant.noise_fraction" => self.variant.noise_fraction = parse(key, value)?,
            "variant.stratified_noise" => self.variant.stratified_noise = parse(key, value)?,
            "split.novel_train_frac" => self.novel_train_frac = parse(key, value)?,
            "split.stratified" => self.stratified_split = parse(key, value)?,
            "repr.tau" => rep.tau = parse(key, value)?,
            "repr.proj_dim" => rep.proj_dim = parse(key, value)?,
            "repr.ce_weight" => rep.ce_weight = parse(key, value)?,
            "repr.supcon_weight" => rep.supcon_weight = parse(key, value)?,
            "repr.epochs" => rep.epochs = parse(key, value)?,
            "repr.batch_size" => rep.batch_size = parse(key, value)?,
            "repr.learning_rate" => rep.learning_rate = parse(key, value)?,
            "repr.head_lr" => rep.head_lr = parse(key, value)?,
            "lof.k" => lof.k = parse(key, value)?,
            "lof.threshold_mode" => lof.threshold_mode = threshold_mode(key, value)?,
            "lof.theta" => lof.theta = parse(key, value)?,
            "lof.novel_quantile" => lof.novel_quantile = parse(key, value)?,
            "lof.epsilon" => lof.epsilon = parse(key, value)?,
            "active.seminal_size" => act.seminal_size = parse(key, value)?,
            "active.k_per_round" => act.k_per_round = parse(key, value)?,
            "active.rounds" => act.rounds = parse(key, value)?,
            "active.lambda_e" => act.lambda_e = parse(key, value)?,
            "active.lambda_d" => act.lambda_d = parse(key, value)?,
            "active.disc_lr" => act.disc_lr = parse(key, value)?,
            "active.encoder_lr" => act.encoder_lr = parse(key, value)?,
            "active.disc_hidden" => {
                let sizes: Vec<usize> = parse_list(key, value)?;
                act.disc_hidden = sizes.try_into().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    message: "expected two sizes".into(),
                })?;
            }
            "active.cls_optimizer" => act.cls_optimizer = parse(key, value)?,
            "active.cls_lr" => act.cls_lr = parse(key, value)?,
            "active.cls_epochs" => act.cls_epochs = parse(key, value)?,
            "active.inner_epochs" => act.inner_epochs = parse(key, value)?,
            "active.batch_size" => act.batch_size = parse(key, value)?,
            "active.strategy" => act.strategy = parse(key, value)?,
            "active.freeze_encoder" => act.freeze_encoder = parse(key, value)?,
            _ => {
                if let Some(rel) = key.strip_prefix("variant.discard.") {
                    if rel.is_empty() {
                        return Err(ConfigError::UnknownKey(key.into()));
                    }
                    self.variant
                        .discard_table
                        .insert(rel.to_string(), parse(key, value)?);
                } else {
                    return Err(ConfigError::UnknownKey(key.into()));
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, one per line, in a fixed order.
    pub fn to_kv(&self) -> String {
        let s = &self.synthetic;
        let r = &self.repr;
        let l = &self.lof;
        let a = &self.active;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("data.train", path(&self.train));
        kv("data.test", path(&self.test));
        kv("output", self.output.display().to_string());
        kv("seeds", join(&self.seeds));
        kv("mode", self.mode.to_string());
        kv(
            "exec",
            if self.exec.is_parallel() {
                "parallel"
            } else {
                "sequential"
            }
            .into(),
        );
        kv("serve.exemplars", self.serve_exemplars.to_string());
        kv("data.synthetic.n_known", s.n_known.to_string());
        kv("data.synthetic.n_novel", s.n_novel.to_string());
        kv("data.synthetic.per_class", s.per_class.to_string());
        kv("data.synthetic.dim", s.dim.to_string());
        kv(
            "data.synthetic.cluster_spread",
            s.cluster_spread.to_string(),
        );
        kv(
            "data.synthetic.class_separation",
            s.class_separation.to_string(),
        );
        kv(
            "data.synthetic.novel_dispersion",
            s.novel_dispersion.to_string(),
        );
        kv(
            "variant.kind",
            match self.variant.kind {
                crate::data::VariantKind::Original => "original",
                crate::data::VariantKind::Noisy => "noisy",
                crate::data::VariantKind::Imbalanced => "imbalanced",
            }
            .into(),
        );
        kv(
            "variant.noise_fraction",
            self.variant.noise_fraction.to_string(),
        );
        kv(
            "variant.stratified_noise",
            self.variant.stratified_noise.to_string(),
        );
        for (rel, p) in &self.variant.discard_table {
            kv(&format!("variant.discard.{rel}"), p.to_string());
        }
        kv("split.novel_train_frac", self.novel_train_frac.to_string());
        kv("split.stratified", self.stratified_split.to_string());
        kv("repr.tau", r.tau.to_string());
        kv("repr.proj_dim", r.proj_dim.to_string());
        kv("repr.ce_weight", r.ce_weight.to_string());
        kv("repr.supcon_weight", r.supcon_weight.to_string());
        kv("repr.epochs", r.epochs.to_string());
        kv("repr.batch_size", r.batch_size.to_string());
        kv("repr.learning_rate", r.learning_rate.to_string());
        kv("repr.head_lr", r.head_lr.to_string());
        kv("lof.k", l.k.to_string());
        kv(
            "lof.threshold_mode",
            match l.threshold_mode {
                ThresholdMode::Fixed => "fixed",
                ThresholdMode::Quantile => "quantile",
            }
            .into(),
        );
        kv("lof.theta", l.theta.to_string());
        kv("lof.novel_quantile", l.novel_quantile.to_string());
        kv("lof.epsilon", l.epsilon.to_string());
        kv("active.seminal_size", a.seminal_size.to_string());
        kv("active.k_per_round", a.k_per_round.to_string());
        kv("active.rounds", a.rounds.to_string());
        kv("active.lambda_e", a.lambda_e.to_string());
        kv("active.lambda_d", a.lambda_d.to_string());
        kv("active.disc_lr", a.disc_lr.to_string());
        kv("active.encoder_lr", a.encoder_lr.to_string());
        kv("active.disc_hidden", join(&a.disc_hidden));
        kv(
            "active.cls_optimizer",
            match a.cls_optimizer {
                crate::nn::OptKind::Sgd => "sgd",
                crate::nn::OptKind::Adam => "adam",
            }
            .into(),
        );
        kv("active.cls_lr", a.cls_lr.to_string());
        kv("active.cls_epochs", a.cls_epochs.to_string());
        kv("active.inner_epochs", a.inner_epochs.to_string());
        kv("active.batch_size", a.batch_size.to_string());
        kv("active.strategy", a.strategy.to_string());
        kv("active.freeze_encoder", a.freeze_encoder.to_string());
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.train.is_some() != self.test.is_some() {
            return Err(ConfigError::Invalid(
                "data.train and data.test must be set together".into(),
            ));
        }
        if self.train.is_none() {
            self.synthetic.validate().map_err(|e| invalid(&e))?;
        }
        self.variant.validate().map_err(|e| invalid(&e))?;
        self.repr.validate().map_err(|e| invalid(&e))?;
        self.lof.validate().map_err(|e| invalid(&e))?;
        self.active.validate().map_err(|e| invalid(&e))?;
        if !(self.novel_train_frac > 0.0 && self.novel_train_frac < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "split.novel_train_frac {} outside (0, 1)",
                self.novel_train_frac
            )));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("active.strategy", "lowest").unwrap();
        cfg.set("variant.discard.N00", "0.7").unwrap();
        cfg.set("lof.threshold_mode", "quantile").unwrap();
        cfg.set("data.train", "a.jsonl").unwrap();
        cfg.set("data.test", "b.jsonl").unwrap();
        cfg.set("active.disc_hidden", "32, 8").unwrap();
        let back = ExperimentConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_kv(), cfg.to_kv());
    }

    #[test]
    fn comments_and_overrides() {
        let mut cfg =
            ExperimentConfig::from_kv("# a comment\n\nactive.k_per_round = 16\nseeds = 4, 5\n")
                .unwrap();
        assert_eq!(cfg.active.k_per_round, 16);
        assert_eq!(cfg.seeds, vec![4, 5]);
        cfg.set_override("active.rounds=2").unwrap();
        assert_eq!(cfg.active.rounds, 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::from_kv("seeds = 1\nnot an assignment\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
        let err = ExperimentConfig::from_kv("active.bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
        let err = ExperimentConfig::from_kv("repr.tau = warm\n").unwrap_err();
        assert!(err.to_string().contains("repr.tau"), "{err}");
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.set("repr.tau", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set("data.train", "x.jsonl").unwrap();
        assert!(cfg.validate().is_err());
    }
}
