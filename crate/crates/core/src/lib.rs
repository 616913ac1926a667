//! Active relation discovery.
//!
//! Separates known from novel relation instances in a mixed pool with the
//! local outlier factor over learned relation representations, then labels
//! the novel part with a budgeted adversarial active-learning loop.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: instances, datasets, JSONL and `ARDE` embedding files,
//!   dataset variants and a synthetic generator.
//! - [`nn`]: a small dense-network substrate with analytic gradients.
//! - [`repr`]: relation representations and supervised contrastive pretraining.
//! - [`outlier`]: local outlier factor and the known/novel split.
//! - [`active`]: the encoder/discriminator loop, annotation protocol and
//!   the novel-relation classifier.
//! - [`metrics`]: B³, V-measure and ARI.
//! - [`experiment`]: configuration, end-to-end pipeline, ablations and reports.
//!
//! Row-parallel work (distance scans, batch embedding, multi-seed runs) goes
//! through [`exec`], which uses rayon when the `parallel` feature is on.

pub mod active;
pub mod config;
pub mod data;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod outlier;
pub mod repr;
pub mod rng;

pub use data::{Dataset, Instance};
pub use exec::Exec;
