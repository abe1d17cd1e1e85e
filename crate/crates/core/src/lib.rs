//! PPG (separate policy and auxiliary phases) and PPO actor-critic training
//! on small procedurally generated environments.

pub mod advantage;
pub mod env;
pub mod harness;
pub mod nn;
pub mod phasic;
pub mod real;
pub mod rollout;

pub use real::Real;
