//! Synthesis and evaluation of differentially private longitudinal tables.
//!
//! The privacy unit throughout is a whole per-user table: every mechanism in
//! this crate is calibrated for add/remove-one-user adjacency.
//!
//! The main pieces:
//!
//! - [`data`]: schemas, typed cells, per-user tables and collections, CSV/JSON IO.
//! - [`hmm`]: Gaussian-emission HMM ground truth, sampling and forward scoring.
//! - [`flatten`]: fixed-width flattening, truncation, and the local MaxEnt demo.
//! - [`direct`]: the marginal-based Direct mechanism on flattened data.
//! - [`serialize`]: text serialization of tables and the fallback parser.
//! - [`generator`]: row-by-row generation with a DP Markov backend.
//! - [`selection`]: table embeddings and private nearest-neighbor voting.
//! - [`metrics`]: fidelity metrics and the assembled evaluation report.
//! - [`experiment`]: end-to-end runs producing released artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod direct;
pub mod discretize;
pub mod error;
pub mod experiment;
pub mod flatten;
pub mod generator;
pub mod hmm;
pub mod metrics;
pub mod privacy;
pub mod rng;
pub mod selection;
pub mod serialize;

pub use data::{Collection, Column, ColumnKind, Schema, UserTable, Value};
pub use error::{Error, Result};
pub use privacy::{BudgetLedger, PrivacyBudget};
