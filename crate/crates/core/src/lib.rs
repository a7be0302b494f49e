//! Mean-square stability of discrete-time stochastic jump linear systems
//! `x(k+1) = A_{σ(k)} x(k)`, analysed through the order-2 Wasserstein
//! distance between the state density and the Dirac mass at the origin.
//!
//! For a Gaussian-mixture state density that squared distance is the second
//! moment `tr Φ(k)`, so `W²(k)` obeys a linear recursion whose lifted form
//! `Γ(k) = Π A(i)` yields the classical spectral-radius tests:
//!
//! * [`stability::iid_test`] for i.i.d. switching,
//! * [`stability::markov_test`] for Markov switching,
//! * [`stability::general_test`] for arbitrary occupation probabilities,
//! * [`stability::contraction_test`] for deterministic mode sequences.
//!
//! [`propagate`] computes `W²(k)` three independent ways and [`mcsim`]
//! estimates it by seeded Monte Carlo.

pub mod cli;
pub mod error;
pub mod matkit;
pub mod mcsim;
pub mod propagate;
pub mod stability;
pub mod sysmodel;
pub mod wasserstein;

pub use error::{Error, Result};
pub use matkit::Matrix;
pub use sysmodel::{
    GaussianComponent, GaussianMixture, JumpLinearSystem, SecondMomentState, SwitchingLaw,
};
