//! Grid functions, the discrete p-energy and its weak form, the vector
//! inequalities behind monotonicity, and the Dirichlet solver.
//!
//! Unknowns live on the nodes of a uniform grid. Gradients are taken at
//! cell centers and integrated with the midpoint rule, so that
//! [`EnergyForm::weak_form`] is exactly `1/p` times the derivative of
//! [`EnergyForm::energy`]. The solver minimizes the regularized energy
//!
//! ```text
//! E_δ(u) = Σ_cells h^n (δ² + <A Xu, Xu>)^{p/2}
//! ```
//!
//! over grid functions with prescribed boundary values.

mod field;
mod form;
mod grid;
mod inequalities;
mod poincare;
mod solver;

pub use field::{Envelope, MatrixField};
pub use form::{gap_scale, horizontal_gradient, monotonicity_gap, CellField, CellOperator, EnergyForm};
pub use grid::{GridDomain, GridFunction, Mask, NodeKind};
pub use inequalities::{
    holder_constant, vector_inequalities_check, vector_inequalities_suite, Inequality, InequalityReport,
    InequalityResult, INEQUALITY_SLACK, SUITE_DIMENSIONS,
};
pub use poincare::poincare_ratio;
pub use solver::{node_counts, solve_dirichlet, InitialGuess, SolveReport, SolverConfig, StageReport};
