//! Two-particle Bell-test toolkit built around the causal-interaction view of
//! local hidden variables.
//!
//! The crate is organised by concern:
//!
//! * [`quantum_model`]: match probabilities of the maximally entangled pair,
//!   a statevector oracle for them, and an outcome sampler.
//! * [`counterfactuals`]: deterministic counterfactual units, the match
//!   indicator, the interaction pattern `(M00, M12, M02, M10) = (0, 1, 0, 0)`
//!   and the mechanical proof that no local unit realizes it.
//! * [`lhv_models`]: deterministic mixtures and stochastic local models.
//! * [`experiment`]: seeded Monte Carlo harness, estimator and decision rule.
//! * [`loophole`]: the detection loophole as a linear program over
//!   deterministic strategies with setting-dependent detection.
//! * [`simplex`]: the dense two-phase simplex solver used by [`loophole`].
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); every such loop also has a sequential path selected through
//! [`Execution`].

pub mod counterfactuals;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod lhv_models;
pub mod loophole;
pub mod quantum_model;
pub mod rng;
pub mod setting;
pub mod simplex;

pub use error::{Error, Result};
pub use exec::Execution;
pub use setting::{Setting, SettingPair, Spin};
