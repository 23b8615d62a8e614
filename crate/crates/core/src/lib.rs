//! Optimal control of mean-field forward-backward SDEs by the stochastic
//! maximum principle.
//!
//! Measure arguments enter the coefficients through a finite vector of
//! statistics `<m, psi_j>`, so Lions derivatives reduce to ordinary partials in
//! those statistics times `psi_j'`.

pub mod adjoint;
pub mod backward;
pub mod duality;
pub mod error;
pub mod forward;
pub mod measure;
pub mod optimize;
pub mod portfolio;
pub mod presets;
pub mod problem;
pub mod quadrature;
pub mod regression;
pub mod risk;

pub use adjoint::{solve_adjoints, AdjointBundle, ControlGradient};
pub use backward::{solve_backward, BackwardSolution};
pub use duality::{concavity_spot_check, duality_residuals, ConcavityReport, DualityResiduals};
pub use error::{Error, Result};
pub use forward::{
    simulate_forward, simulate_with_increments, ParticleEnsemble, PathArray, TimeGrid,
};
pub use measure::{EmpiricalMeasure, StatisticBasis, TestFunction};
pub use optimize::{
    evaluate_j, gateaux_dj, optimize, solve_state, Estimate, OptimizationReport, OptimizerSettings,
    StateSolution,
};
pub use portfolio::{BenchmarkReport, BenchmarkSettings, PortfolioParams};
pub use problem::{
    Args, Coefficient, ControlProcess, ControlSet, InformationMode, ProblemSpec, Sense, Wrt,
};
pub use regression::{RegressionBasis, Regressor};
pub use risk::{risk, RiskDriverSpec, RiskQuote, ZScaling};
