//! Bayesian quantile regression with a single-hidden-layer network.
//!
//! The likelihood is the asymmetric Laplace distribution written as a
//! normal/exponential mixture, which gives closed-form Gibbs updates for the
//! output weights, scale and latent mixing variables; hidden-layer weights are
//! updated one unit at a time with random-walk Metropolis-Hastings.

// Validation uses negated comparisons such as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ald;
pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod mcmc;
pub mod network;
pub mod samplers;

pub use ald::{check_loss, hellinger_ald, QuantileSpec};
pub use baselines::{fit_bqr, fit_linear_qr, fit_qrnn, QrFit, QrOptions, QrnnFit, QrnnOptions};
pub use data::{Dataset, Noise, Scenario, ScenarioSpec, Standardizer};
pub use error::{Error, Result};
pub use evaluate::{ess, mean_check, oracle_error, EvalReport, Split};
pub use mcmc::{
    posterior_quantile_summary, run_chain, run_linear_chain, ChainConfig, ChainOutput, LatentState, ModelShape, Priors,
    QuantileSummary,
};
pub use network::{design_matrix, DesignMatrix, NetworkParams};
pub use samplers::{gig_half, GigParams, RngStream};
