//! Numerical toolkit for degenerate p-Laplacian equations with weights.
//!
//! The crate is organized along the pipeline it supports:
//!
//! * [`geometry`]: Euclidean and Heisenberg-group metric backends, balls,
//!   volumes and uniform ball sampling.
//! * [`weights`]: weight functions, Monte-Carlo ball averages, and
//!   estimates of Muckenhoupt `A_p`, `A_1` and reverse-Hölder constants.
//! * [`energy`]: grid function spaces, the weighted p-energy and its weak
//!   form, and a damped-Newton Dirichlet solver.
//! * [`diagnostics`]: oscillation, Harnack and Hölder measurements on
//!   discrete solutions, and continuity maps.
//! * [`distortion`]: Jacobian quantities of mappings of finite distortion.
//! * [`catalog`]: closed-form fixtures with machine-checkable claims.
//!
//! All randomized routines take an explicit seed and are deterministic
//! regardless of thread count.

pub mod catalog;
pub mod diagnostics;
pub mod distortion;
pub mod energy;
mod error;
pub mod geometry;
pub mod io;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
pub use geometry::{Ball, BoxDomain, MetricSpace, PointCloud, RadiusWindow, SpaceKind};

/// Schema tag written into every JSON report.
pub const SCHEMA: &str = "degenlap/1";
