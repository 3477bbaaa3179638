// Validation code deliberately writes `!(x > 0.0)` so that NaN fails the
// check; the positively-phrased comparison clippy suggests would let NaN
// through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Guided trajectory learning (GTL).
//!
//! This crate jointly solves a family of task-parameterized trajectory
//! optimization problems and fits a function approximator to the solutions,
//! coupling the two through consensus ADMM so that each local solution is
//! pulled toward something the approximator can actually represent. It also
//! ships sample-based estimators that bound how far the learned policy can
//! violate the problem constraints between training samples.
//!
//! Module map:
//!
//! - [`taskspace`] — task boxes, deterministic task sampling, covering radius,
//!   extreme-value coverage bounds.
//! - [`systems`] — benchmark dynamical systems (double integrator, torque-limited
//!   pendulum, an obstacle family with a discontinuous task→solution map).
//! - [`collocation`] — direct trapezoidal transcription of an optimal-control
//!   problem into a box-constrained NLP, with an optional proximal tie to a
//!   consensus target.
//! - [`nlp_solver`] — augmented-Lagrangian solver with a spectral
//!   projected-gradient inner loop; batch driver.
//! - [`approximator`] — deconvolutional trajectory network (dense encoder,
//!   upsample+conv decoder, linear duration head) with hand-rolled f64
//!   backprop and deterministic training.
//! - [`gtl`] — the consensus ADMM loop itself, its metrics, and the
//!   penalty-method special case (`alpha = 0`).
//! - [`bounds`] — Monte-Carlo cost integrals, sampled Lipschitz constants,
//!   constraint-violation bounds and their measured counterparts.
//! - [`config`] / [`artifacts`] / [`cli`] — experiment configuration, artifact
//!   serialization (CSV/JSON/weights files, run manifest), and the command-line
//!   entry points.

pub mod approximator;
pub mod artifacts;
pub mod bounds;
pub mod cli;
pub mod collocation;
pub mod config;
pub mod gtl;
pub mod nlp_solver;
pub mod systems;
pub mod taskspace;
