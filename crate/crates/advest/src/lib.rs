//! Adversarial structural estimation of an elderly-savings life-cycle model.
//!
//! The crate solves a finite-horizon consumption/bequest problem by backward
//! induction, simulates biyearly asset panels from the solved policies, and
//! estimates preference parameters by driving the cross-entropy that a
//! neural-network discriminator can achieve between real and simulated
//! feature vectors down to its theoretical floor. Inference is by bootstrap
//! and Monte Carlo replication; an autoencoder probe checks the intrinsic
//! dimensionality of the discriminator inputs.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`params`]: preference/fiscal primitives and the `(nu, MPC, K)` to
//!   `(theta, asset floor)` reparameterization.
//! - [`dp`]: state grids, exogenous processes, and the backward-induction
//!   policy solver.
//! - [`sim`]: common random shocks, panel simulation, and feature matrices.
//! - [`nn`]: from-scratch sigmoid networks (discriminators, autoencoders).
//! - [`adversarial`]: the minimax objective and the outer descent loop.
//! - [`inference`]: bootstrap, Monte Carlo harness, counterfactuals, fit
//!   profiles, and the dimensionality probe.
//! - [`cli`] / [`config`] / [`plot`]: batch front door, JSON configuration,
//!   and SVG/CSV emission.

pub mod adversarial;
pub mod cli;
pub mod config;
pub mod dp;
pub mod error;
pub mod inference;
pub mod nn;
pub mod params;
pub mod plot;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
