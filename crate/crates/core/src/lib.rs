//! Numerical laboratory for alpha-Riesz potentials of nonnegative measures and
//! the doubly nonlinear operator `L_{p,q} u = div(u^{q-1} |grad u|^{p-2} grad u)`.
//!
//! The library evaluates potentials `u(x) = \int rho(y) |x-y|^{-alpha} dy` and all
//! the derivative quantities that enter `L_{p,q}` through three factored kernel
//! moments (a scalar family `S_beta`, a vector `V` and a matrix `M`), certifies the
//! one-sided sign of the second order expression
//! `I = u |grad u|^2 lap(u) + (p-2) u lapinf(u) + (q-1) |grad u|^4`
//! over point clouds, decomposes `I` into the term and group splits whose signs
//! drive the certification, and checks the radial fundamental solutions of the
//! operator both pointwise and through a weak pairing against test functions.
//!
//! Every factored evaluation is paired with an independent verification path:
//! finite differences for derivatives, literal `O(N^4)` tensor sums for the
//! decomposition, a 1-D radial reduction for ball densities, and Monte Carlo for
//! gridded sources. The brute-force paths live in [`oracle`] and
//! [`decomposition`] and are never used by the fast path.

pub mod cloud;
pub mod decomposition;
pub mod error;
pub mod fundamental;
pub mod math;
pub mod operator;
pub mod oracle;
pub mod potential;
pub mod source;

pub use error::{Error, Result};
pub use math::{SymMatrix, Vector};
pub use operator::{SignKind, SignReport};
pub use potential::{DerivativeBundle, EvalPath, MomentSet};
pub use source::{AtomicMeasure, GriddedDensity, PValue, Params, Regime, RegimeTag, SourceMeasure};
