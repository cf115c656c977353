//! Decentralized coded caching with heterogeneous file and cache sizes:
//! load evaluation, caching-parameter optimization, converse bounds and a
//! bit-level delivery simulator.

pub mod baselines;
pub mod converse;
pub mod error;
pub mod gp_core;
pub mod load_eval;
pub mod model;
pub mod sca;
pub mod simulator;
pub mod smooth_opt;

pub use error::{Error, Result};
pub use load_eval::{DemandVector, LoadEvaluator, Objective, SmoothingConfig};
pub use model::{CachingParameter, SystemInstance, TierLayout};
