//! Stochastic linear-quadratic regulation for discrete-time systems with
//! multiplicative and additive noise.
//!
//! The crate solves the discounted infinite-horizon LQR problem
//!
//! ```text
//! x_{k+1} = A x_k + B u_k + sum_l (A_l x_k + B_l u_k) v_k^l + w_k
//! ```
//!
//! where the scalar noises `v_k^l` are i.i.d. with variance `sigma` and the
//! additive noise `w_k` has covariance `Sigma`.  Three synthesis routes are
//! provided:
//!
//! * [`riccati`] — fixed-point iteration on the generalized algebraic Riccati
//!   equation (the model-based ground truth),
//! * [`lqrsdp::build_model_based`] — a single semidefinite program built from
//!   the system matrices,
//! * [`lqrsdp::build_model_free`] — the same program assembled purely from
//!   sampled trajectory data, without identifying the model.
//!
//! Supporting modules supply exact symmetric-matrix primitives ([`matcore`]),
//! the system/gain abstractions and Lyapunov machinery ([`sysmodel`]), a thin
//! deterministic SDP layer ([`sdpcore`]), reproducible rollout generation
//! ([`datagen`]), and certification / scaling experiments ([`robustness`]).
//!
//! Data-parallel sections run on a rayon pool when the default `parallel`
//! feature is enabled and fall back to sequential loops otherwise; both paths
//! produce bit-identical results (see [`exec`]).

pub mod datagen;
pub mod error;
pub mod exec;
pub mod lqrsdp;
pub mod matcore;
pub mod riccati;
pub mod robustness;
pub mod sdpcore;
pub mod sysmodel;

pub use error::{Error, Result};
