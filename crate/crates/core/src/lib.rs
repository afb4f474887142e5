//! Forward simulation and coefficient recovery for semilinear elliptic
//! boundary value problems on disk-shaped domains.
//!
//! The equation is `-div(sigma grad u) + a(x, u) = 0` with Dirichlet
//! data supported on an arc of the outer circle, a piecewise-constant
//! conductivity `sigma`, a reaction term given by a truncated power
//! series with `a(x, 0) = a_y(x, 0) = 0`, and optionally a circular
//! hole carrying a homogeneous Dirichlet condition. The crate provides:
//!
//! - [`mesh`]: structured triangulations of disks and annuli, region
//!   masks, and connectivity helpers.
//! - [`coeff`]: the conductivity and reaction-series fields.
//! - [`fem`]: piecewise-linear assembly, Newton solution of the
//!   semilinear problem, and arc-restricted flux measurements.
//! - [`chain`] and [`lattice`]: exact mixed derivatives of the
//!   solution map with respect to two boundary-data directions, built
//!   from set-partition chain rule terms and verified against finite
//!   differences of the nonlinear solver.
//! - [`localize`]: boundary data whose solutions concentrate energy on
//!   one region while vanishing on another, via regularized
//!   generalized eigenvalue problems.
//! - [`recovery`]: conductivity fitting, sequential reaction
//!   coefficient recovery from flux derivatives, cavity detection, and
//!   the sign-split comparison functional.
//! - [`io`]: text formats for meshes and coefficient fields.
//! - [`traces`] and [`solver`]: boundary data families and the sparse
//!   Cholesky backend.

pub mod chain;
pub mod coeff;
pub mod error;
pub mod fem;
pub mod io;
pub mod lattice;
pub mod localize;
pub mod mesh;
pub mod recovery;
pub mod solver;
pub mod traces;

pub use error::{Error, Result};
