//! Markov chain score ascent (MCSA) for inclusive KL variational inference.
//!
//! The crate minimizes `KL(π ‖ q(·; λ))` for a mean-field Gaussian `q` by
//! stochastic gradient descent, where the gradient `−E_π[∇_λ log q(z; λ)]` is
//! estimated from π-invariant Markov chains whose proposals depend on the
//! current fit. Four estimators are provided:
//!
//! * [`Method::Msc`]: one conditional importance sampling (CIS) transition.
//! * [`Method::MscRb`]: the same CIS transition, with the importance weights
//!   reused as a self-normalized estimate.
//! * [`Method::Jsa`]: `N` sequential independent Metropolis–Hastings moves.
//! * [`Method::Pmcsa`]: `N` parallel chains, one IMH move each.
//!
//! plus a reparameterized ELBO baseline ([`Method::Elbo`]).
//!
//! Around the estimators sit the pieces needed to study them: closed-form
//! Gaussian divergences ([`distributions`]), exact discrete transition
//! matrices and mixing rates ([`kernels`]), first-order optimizers
//! ([`optimizers`]), conditional-variance measurement and gradient-variance
//! bounds ([`diagnostics`]) and a deterministic, config-driven experiment
//! harness ([`experiments`]).

#![allow(clippy::needless_range_loop)]

pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod kernels;
pub mod optimizers;
pub mod rng;

pub use distributions::{
    DefensiveMixture, FnTarget, FullGaussian, GaussianRef, HeavyTail, Proposal, TargetModel, VariationalParams,
};
pub use error::{McsaError, Result};
pub use estimators::{ChainState, EstimatorContext, GradientEstimate, Method};
pub use kernels::{CisOutcome, ImhOutcome, KernelContext};
pub use optimizers::{OptimizerKind, OptimizerState, StepsizeSchedule};
pub use rng::{stream_rng, StreamRng};
