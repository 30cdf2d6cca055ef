//! Autoregressive policies over multidimensional discrete action spaces and
//! cheap, unbiased estimators of their entropy bonus and its gradient.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

pub mod diffcore;
pub mod entropy;
pub mod envs;
pub mod error;
pub mod io;
pub mod nn;
pub mod policy;
mod scalar;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tape64 = diffcore::Tape<f64>;
pub type Tape32 = diffcore::Tape<f32>;
pub type ParamStore64 = diffcore::ParamStore<f64>;
pub type ParamStore32 = diffcore::ParamStore<f32>;
pub type LstmPolicy64 = policy::LstmPolicy<f64>;
pub type LstmPolicy32 = policy::LstmPolicy<f32>;
pub type MmdpPolicy64 = policy::MmdpPolicy<f64>;
pub type IsPolicy64 = policy::IsPolicy<f64>;
pub type SoftmaxTable64 = entropy::SoftmaxTable<f64>;
pub type SoftmaxTable32 = entropy::SoftmaxTable<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Trainer32 = trainer::Trainer<f32>;
