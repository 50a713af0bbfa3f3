//! Particle approximations of time-homogeneous Feynman-Kac semigroups.
//!
//! The library has three layers:
//!
//! * exact machinery on finite state spaces: matrix semigroup evaluation,
//!   the coalescent tensor recursion for the exact relative variance of the
//!   particle estimator, spectral analysis (principal eigentriple, resolvent
//!   construction of the eigenfunction, twisted kernel), and multiplicative
//!   drift certificates;
//! * three scalar reference models (Gaussian random walk with quadratic
//!   killing, AR(1) with absolute-value killing, discretely observed CIR
//!   with affine killing) with closed forms where they exist;
//! * a Monte Carlo engine: the selection/mutation particle system, seeded
//!   replicate streams, and experiment sweeps that estimate the relative
//!   variance of the unnormalized estimator against exact oracles.

pub mod error;
pub mod finite;
pub mod linalg;
pub mod logspace;
pub mod model;
pub mod models;
pub mod parallel;
pub mod particle;
pub mod rng;
pub mod drift;
pub mod spectral;
pub mod variance;

pub use error::{Error, Result};
