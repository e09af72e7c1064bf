//! Confidence sets for linear instrumental-variables models that stay valid
//! under weak, many, invalid or endogenous instruments.
//!
//! The confidence region is written as a semialgebraic set (polynomial
//! inequalities and equalities in the model parameters), and its support
//! function is bounded from below in any direction by solving a hierarchy of
//! semidefinite relaxations. Collecting those bounds over many directions
//! yields a guaranteed outer approximation of the convex envelope of the
//! region, so the coverage guarantee of the underlying test is never
//! compromised by the numerics.
//!
//! Module map:
//!
//! * [`poly`] — sparse multivariate polynomials, graded-lex monomial
//!   indexing, moment/localizing matrix structure.
//! * [`sdp`] — a dense primal-dual interior-point solver for the small
//!   semidefinite programs the relaxation produces.
//! * [`hierarchy`] — level-`h` relaxation of a semialgebraic program and the
//!   escalation loop with rank-based exactness certification.
//! * [`stats`] — samples, cross-moment tables, critical radii, multiplier
//!   bootstrap, distribution quantiles and seeded randomness.
//! * [`encode`] — translation of confidence sets (self-normalized moment
//!   sets, Anderson-Rubin sets, user-supplied tests) into semialgebraic form.
//! * [`region`] — direction grids, support-function sweeps, envelopes,
//!   projection intervals and direct membership checks.
//! * [`mc`] — data-generating processes and the Monte-Carlo harness.

pub mod dist;
pub mod encode;
pub mod error;
pub mod hierarchy;
pub mod mc;
pub mod par;
pub mod poly;
pub mod region;
pub mod sdp;
pub mod stats;

pub use error::Error;

/// Crate version embedded in machine-readable outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
