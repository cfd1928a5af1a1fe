//! Trustworthy actionable perturbations for dense tabular classifiers.
//!
//! The crate covers the whole pipeline: target sets on the probability
//! simplex with a closed-form divergence distance ([`probspace`]), small
//! feed-forward networks ([`netcore`]), feature schemas and real-world cost
//! models ([`actionability`]), penalty-based perturbation search
//! ([`perturb`]), pairwise verification ([`verify`]), comparison methods
//! ([`baselines`]) and a synthetic ground-truth harness ([`bench`]).

// Range checks are written as `!(v > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actionability;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod netcore;
pub mod perturb;
pub mod probspace;
pub mod rng;
pub mod verify;

pub use error::{Result, TapError};
