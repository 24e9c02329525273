//! Stability machinery for mean-field coupled oscillator systems.
//!
//! The crate is organized around one pipeline:
//!
//! * [`model`] — the mean-field system family `ẋ_i = F(X, x_i) + H_i(X, x_i)`
//!   (Winfree-type and user-configured trigonometric fields), its analytic
//!   partial derivatives, the slab seminorms, and the synchronization
//!   hypothesis checks.
//! * [`ode`] — the integration engine: adaptive/fixed Runge-Kutta with dense
//!   output, matrix variational equations, event crossings, and quadrature.
//! * [`linform`] — perturbed periodic linear systems
//!   `Ẏ = [b(t)I + 𝒜(t) + ζ(t)]Y` with rank-1 coupling, the stability
//!   linear forms ψ and 𝓛, and the fundamental-matrix decomposition into a
//!   neutral direction plus an exponentially decaying remainder.
//! * [`sync`] — nonlinear flow experiments: synchronization monitoring,
//!   the mean phase, rotation numbers, and locked-orbit shooting.
//! * [`manifold`] — linearization along orbits, the μ-chart reduction to a
//!   periodic linear system, the local stable-manifold chart, and
//!   contraction-rate certification.
//!
//! All operations are pure given their inputs; constructed values are
//! immutable and safe to share across threads.

pub mod error;
pub mod export;
pub mod fit;
pub mod linform;
pub mod manifold;
pub mod model;
pub mod ode;
pub mod periodic;
pub mod seed;
pub mod sync;

pub use error::{Error, Result};
