//! Session-aware query interpretation.
//!
//! The crate is organized as a pipeline over search and browse sessions:
//!
//! * [`corpus`] parses session logs, knowledge files and model files.
//! * [`distsup`] derives weak labels by matching queries and clicks against a
//!   [`KnowledgeStore`](corpus::KnowledgeStore).
//! * [`crf`] is a linear-chain CRF with exact inference and two training
//!   objectives: fully observed and marginalized over hidden labels.
//! * [`mention`] tags entity mentions in queries with BIO labels.
//! * [`typer`] types the entities of a whole session jointly.
//! * [`relex`] classifies E-R-E and T-R-E relations with one-vs-all
//!   logistic regression.
//! * [`sessionlm`] fits order-n Markov models over entity sequences.
//! * [`evaluate`] scores extraction output and runs paired t-tests.
//! * [`synth`] generates film-domain corpora with known ground truth.
//!
//! Batch work (gradient evaluation, labeling, grid search) goes through
//! [`par`], which runs on rayon when the `parallel` feature is enabled and
//! sequentially otherwise. Both paths reduce in the same fixed order, so
//! results are bitwise identical.

pub mod corpus;
pub mod crf;
pub mod distsup;
pub mod error;
pub mod evaluate;
pub mod mention;
pub mod optim;
pub mod par;
pub mod relex;
pub mod sessionlm;
pub mod synth;
pub mod text;
pub mod typer;

pub use error::{Error, Result};
