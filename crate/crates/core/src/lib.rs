//! Implicit finite-difference pricing of American puts on several assets.
//!
//! The value function is computed in log-price coordinates as the solution
//! of a discrete obstacle problem on a space-time lattice restricted to a
//! ball `B_R`, with cut-off payoff data outside the ball. Alongside the
//! solver the crate ships independent oracles (Black–Scholes, a binomial
//! tree, a brute-force fixed point, an exit-time bound with Monte Carlo) and
//! a harness that measures empirical convergence and localisation decay.

// Negated comparisons such as `!(h > 0.0)` are used on purpose so that NaN
// inputs are rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discrete_ops;
pub mod error;
pub mod harness;
pub mod instances;
pub mod lattice;
pub mod model;
pub mod oracles;
pub mod solver;
pub mod stencil;

pub use discrete_ops::{apply_lh, assemble_level, delta_dir, delta_time, second_dir, GridFunction, LevelOperator};
pub use error::{Error, Result};
pub use harness::{
    convergence_study, emit_report, fit_line, localisation_study, ConvergenceReport, ConvergenceSpec,
    LocalisationReport, LocalisationSpec, ReferenceSpec, ReportFormat, StudyProblem,
};
pub use lattice::{Lattice, LatticeSpec, NodeClass, NodeIndex};
pub use model::{basket_put_payoff, put_payoff, CutoffPayoff, LogModel, MarketModel, PayoffSpec};
pub use oracles::{
    brute_force_discrete, bs_european_call, bs_european_put, crr_american_put, crr_european_put, exit_bound,
    mc_exit_probability, ExitBoundParams,
};
pub use solver::{check_comparison, residual, solve, DiscreteSolution, LcpMethod, SolveConfig};
pub use stencil::{build_1d, build_diag_dominant, StencilDecomposition};
