//! Active labeling of novel relations.
//!
//! An encoder `E` and a discriminator `D` play a minimax game over labeled
//! and unlabeled instances; each round the unlabeled instances `D` is most
//! confident about are sent to an annotator, labeled under a
//! reuse-or-mint-index protocol, and a softmax classifier is retrained on
//! everything labeled so far.

mod adversarial;
mod annotator;
mod log;
mod session;

pub use adversarial::{confidence, discriminator_loss, encoder_loss, PROB_CLAMP};
pub use annotator::{Annotation, Annotator, Decision, OracleAnnotator, Query};
pub use log::{read_events, replay, Event, EventKind, EventLog, ReplayState};
pub use session::{
    alg1_consistent, classifier_loss, label_known, rank_by_confidence, ActiveSession, LoopOutcome,
    RoundRecord,
};

use serde::{Deserialize, Serialize};

use crate::nn::{NnError, OptKind};

#[derive(Debug, thiserror::Error)]
pub enum ActiveError {
    #[error("invalid active-learning config: {0}")]
    InvalidConfig(String),
    #[error("pool has {have} instances, seminal set needs {need}")]
    PoolTooSmall { need: usize, have: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown instance id {0}")]
    UnknownId(String),
    #[error("instance {0} is already labeled")]
    AlreadyLabeled(String),
    #[error("no labeled instances")]
    NoLabels,
    #[error("invalid decision for {id}: {message}")]
    InvalidDecision { id: String, message: String },
    #[error("optimizer diverged in round {round}: {source}")]
    Divergence {
        round: usize,
        #[source]
        source: NnError,
    },
    #[error("session log: {0}")]
    Log(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which unlabeled instances a round sends to the annotator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Largest `D(E(x))` first.
    Highest,
    Random,
    /// Smallest `D(E(x))` first.
    Lowest,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "highest" => Ok(Strategy::Highest),
            "random" => Ok(Strategy::Random),
            "lowest" => Ok(Strategy::Lowest),
            other => Err(format!(
                "unknown strategy {other:?} (expected highest, random or lowest)"
            )),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Highest => "highest",
            Strategy::Random => "random",
            Strategy::Lowest => "lowest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub seminal_size: usize,
    pub k_per_round: usize,
    pub rounds: usize,
    /// Weight of the encoder objective.
    pub lambda_e: f64,
    /// Weight of the discriminator objective.
    pub lambda_d: f64,
    pub disc_lr: f64,
    pub encoder_lr: f64,
    pub disc_hidden: [usize; 2],
    pub cls_optimizer: OptKind,
    pub cls_lr: f64,
    pub cls_epochs: usize,
    pub inner_epochs: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    /// Keeps the encoder at its initial parameters.
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            seminal_size: 32,
            k_per_round: 32,
            rounds: 8,
            lambda_e: 1.0,
            lambda_d: 1.0,
            disc_lr: 5e-4,
            encoder_lr: 5e-4,
            disc_hidden: [256, 64],
            cls_optimizer: OptKind::Sgd,
            cls_lr: 0.5,
            cls_epochs: 200,
            inner_epochs: 5,
            batch_size: 64,
            strategy: Strategy::Highest,
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl ActiveConfig {
    /// Instances labeled by a run that never exhausts its pool.
    pub fn budget(&self) -> usize {
        self.seminal_size + self.rounds * self.k_per_round
    }

    pub fn validate(&self) -> Result<(), ActiveError> {
        let bad = |m: &str| Err(ActiveError::InvalidConfig(m.to_string()));
        if self.seminal_size == 0 || self.k_per_round == 0 {
            return bad("seminal_size and k_per_round must be positive");
        }
        if self.inner_epochs == 0 || self.batch_size == 0 || self.cls_epochs == 0 {
            return bad("inner_epochs, batch_size and cls_epochs must be positive");
        }
        if self.disc_hidden.contains(&0) {
            return bad("discriminator hidden sizes must be positive");
        }
        if !(self.lambda_e >= 0.0 && self.lambda_d >= 0.0) {
            return bad("lambda_e and lambda_d must be non-negative");
        }
        if !(self.disc_lr > 0.0 && self.encoder_lr > 0.0 && self.cls_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget_is_288() {
        assert_eq!(ActiveConfig::default().budget(), 288);
    }

    #[test]
    fn strategy_parses() {
        for s in [Strategy::Highest, Strategy::Random, Strategy::Lowest] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("best".parse::<Strategy>().is_err());
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(ActiveConfig {
            k_per_round: 0,
            ..ActiveConfig::default()
        }
        .validate()
        .is_err());
        assert!(ActiveConfig {
            lambda_d: -1.0,
            ..ActiveConfig::default()
        }
        .validate()
        .is_err());
        assert!(ActiveConfig::default().validate().is_ok());
    }
}
