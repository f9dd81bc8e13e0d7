//! Reward-program search driven by preferences.
pub mod envkit;
pub mod icpl;
pub mod optcore;
pub mod prefcore;
pub mod rewardlang;
pub mod scalar;

pub use scalar::Scalar;

/// Double-precision instantiations of the generic numerics.
pub type Mlp64 = optcore::Mlp<f64>;
pub type Mlp32 = optcore::Mlp<f32>;
pub type Adam64 = optcore::Adam<f64>;
pub type PolicySpec64 = optcore::PolicySpec<f64>;
