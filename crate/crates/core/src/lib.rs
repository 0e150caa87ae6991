//! Uplift ranking by direct optimization of a lower bound on the area under
//! the uplift curve (AUUC).
//!
//! The crate covers the whole pipeline: randomized-trial ingestion and
//! splitting ([`dataset`]), uplift metrics ([`metrics`]), pairwise surrogate
//! losses ([`surrogates`]), the AUUC generalization lower bound ([`bound`]),
//! the projected Adam trainer ([`optimizer`]), scorers and baselines
//! ([`models`]), bound- and cross-validation-based model selection
//! ([`selection`]) and the repeated-split experiment protocols
//! ([`experiment`]).

pub mod bound;
pub mod dataset;
mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod models;
pub mod optimizer;
mod parallel;
pub mod rng;
pub mod selection;
pub mod surrogates;

pub use error::{Error, ErrorKind, Result};
