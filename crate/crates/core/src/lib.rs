//! Discrete-time simulator of energy-harvesting IoT devices offloading
//! computation to edge nodes, with double-DQN agents trained by federated
//! averaging. Baseline policies and an exact knapsack oracle live in
//! [`baselines`].

pub mod baselines;
pub mod ddqn;
pub mod device;
pub mod error;
pub mod federation;
pub mod qnet;
pub mod simctl;
pub mod sysmodel;

pub use error::{Error, Result};
