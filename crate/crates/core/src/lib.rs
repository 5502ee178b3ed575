//! List-wise predictive uncertainty (LiDu) for top-N ranking models.
//!
//! A ranking model that exposes a Gaussian score distribution per item can be
//! asked how likely it is to reproduce its own ranked list. The negative log of
//! that likelihood is the list uncertainty computed in [`uncertainty`]. The rest
//! of the crate exists to produce score distributions ([`backends`], [`models`])
//! and to test the uncertainty as a label-free performance estimator, both on a
//! synthetic factorization task ([`synthetic`]) and on implicit-feedback logs
//! ([`data`], [`pipeline`], [`baselines`], [`eval`], [`analysis`]).

pub mod analysis;
pub mod backends;
pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod models;
pub mod normal;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod types;
pub mod uncertainty;

pub use error::{LiduError, Result};
pub use normal::standard_normal_cdf;
pub use types::{
    Backend, DatasetSplit, Interaction, LiduConfig, PositionBias, RankedPrediction,
    ScoreDistribution,
};
pub use uncertainty::{lidu_full, lidu_topn, LiduValue};
