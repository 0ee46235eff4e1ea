//! Dynamic learning-to-rank simulation with unbiased relevance estimation
//! and merit-based top-k exposure fairness control.
//!
//! Module map:
//!
//! * [`model`]: documents, groups, rankings, propensities, interaction records.
//! * [`sim`]: users, relevance and click simulation; rating matrices.
//! * [`estimation`]: IPS and naive estimators, the MLP ranker and its losses.
//! * [`metrics`]: exposure ledger, merits, Unfairness@k, NDCG@k.
//! * [`policies`]: Naive, score sorting, FairCo and the MMF controller.
//! * [`experiment`]: multi-trial runner, trial logs, summaries.
//! * [`bench`]: controller timing.

pub mod bench;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod policies;
pub mod sim;

pub use error::{Error, Result};
