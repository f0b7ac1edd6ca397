//! Partition-based Bayesian information borrowing across trial subgroups.
//!
//! The crate fits a hierarchical finite mixture over subgroup deviations with
//! an unknown number of components (reversible-jump split/merge MCMC),
//! summarizes the posterior partition structure, provides no-borrowing,
//! full-exchangeability and fixed-component comparators, and simulates
//! adaptive enrichment trials driven by any of these models.

pub mod error;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod posterior;
pub mod stats;
pub mod comparators;
pub mod trial;
pub mod harness;

pub use error::{Error, Result};
pub use model::{
    crossover_delta, log_joint, sd_prior_summary, ArmState, CellData, Dataset, Hyperparameters,
    ModelState, PreparedData, SdPriorSummary,
};
pub use sampler::{run_chain, ChainConfig, ChainDraws, MoveConfig};
pub use comparators::{fit_model, ComparatorDraws, Fit, Method};
pub use posterior::{PosteriorSummary, ThetaSamples};
pub use trial::{DesignConfig, TrialResult, TrialScenario};
pub use harness::{load_config, RunConfig};
