//! Functional linear regression with spectral regularization in a
//! reproducing kernel Hilbert space.
//!
//! Curves are represented by their coefficients in a fixed orthonormal basis
//! of `L²[0, 1]`, truncated at `M` terms. The estimator is
//! `β̂ = T^{1/2} g_λ(Λ̂_n) T^{1/2} R̂_n` with `Λ̂_n = T^{1/2} Ĉ_n T^{1/2}`,
//! where `T` is the kernel integral operator, `Ĉ_n` the empirical covariance
//! and `g_λ` one of the filter families in [`filters`].
//!
//! Beyond fitting, the crate carries the tooling to check convergence rates
//! by simulation ([`rates`]), the minimax lower-bound construction
//! ([`lower_bounds`]) and Monte Carlo concentration probes ([`probes`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimator;
pub mod filters;
pub mod kernels;
pub mod lower_bounds;
pub mod metrics;
pub mod operator;
pub mod par;
pub mod probes;
pub mod rates;
pub mod simulate;
pub mod theory;

pub use config::{derive_stream, validate_config, Config};
pub use error::{FlrError, Result};
pub use estimator::{fit_flr, FitResult};
pub use filters::{certify_constants, FilterFamily, FilterKind, Qualification};
pub use operator::SpectralOperator;
pub use par::ExecutionMode;
pub use simulate::{gen_dataset, Dataset, Model, Scenario};
pub use theory::{Metric, Mode};
pub use nalgebra;
