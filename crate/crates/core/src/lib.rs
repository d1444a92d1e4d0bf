//! Decomposed multi-agent soft actor-critic.
//!
//! The crate bundles a small reverse-mode differentiation engine, the
//! recurrent agent networks and linear hypernetwork mixer, two toy
//! cooperative environments, an episodic replay buffer, the mSAC / mCSAC /
//! mCAC / Qmix trainers, brute-force oracles for the value-decomposition
//! identities, and the command-line harness.

pub mod algos;
pub mod autodiff;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nets;
pub mod oracle;
pub mod replay;

pub use error::{Error, Result};
