//! Polynomial expansion solver for two-factor backward SDEs.
//!
//! The library computes value functions of backward SDEs whose forward
//! factors are a small-noise price factor and a mean-reverting activity
//! factor, by expanding the value in powers of the noise scale:
//!
//! ```text
//! V(t, x, y) ≈ Σ_{n≤N} V[n](t, x, y),
//! V[n](t, x, y) = Σ_{i+k≤n} x^i y^k / (i! k!) · v[n]_{i,k}(t).
//! ```
//!
//! Only the order-0 term solves a (generally nonlinear) scalar ODE; every
//! higher order reduces to a *linear* system of ODEs for the coefficient
//! functions `v[n]_{i,k}(t)`, integrated backward from terminal data given
//! by payoff derivatives at the expansion point. Hedging controls come out
//! of the same table by exact differentiation of the value polynomial, and
//! jump corrections by exact finite differences — no numerical
//! differentiation anywhere downstream of the ODE solve.
//!
//! Modules:
//! - [`grid`]: uniform time grids and sampled functions of time,
//! - [`ode`]: the backward Runge–Kutta integrator the solvers share,
//! - [`table`]: coefficient storage plus value/control/jump evaluation,
//! - [`math`]: special functions, combinatorics, quadrature.
//!
//! Model solvers (stochastic-volatility pricing with and without jumps, a
//! local-volatility variant, and exponential-utility indifference pricing),
//! moment/cumulant post-processing, density-expansion option pricing, and
//! the Monte-Carlo validation harness build on these and are re-exported
//! from the crate root.

#![warn(missing_docs)]
// Comparison and loop shapes deliberately mirror the recursions quoted
// in the module docs: order conditions stay in indicator form
// (`m + 1 <= n` for "active below the truncation"), convolution sums
// run over their mathematical summation index, and positivity checks
// use negated comparisons so NaN fails them too.
#![allow(clippy::int_plus_one)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod edgeworth;
pub mod error;
pub mod generic;
pub mod grid;
pub mod heston;
pub mod math;
pub mod mc;
pub mod moments;
pub mod ode;
pub mod sabr;
pub mod table;
pub mod utility;

pub use edgeworth::{
    bs_call_price, bs_put_price, call_price_closed, cumulant_scale_ratios, cumulants_to_moments,
    default_price_bounds, density_minimum, edgeworth_density, hermite, implied_vol,
    implied_vol_put, moments_to_cumulants, price_numeric, put_price_closed, CumulantVector,
    PRICE_BOUND_SIGMAS, PRICE_QUAD_REL_TOL,
};
pub use config::{ModelConfig, RunConfig, DEFAULT_CUMULANT_WARN_RATIO, DEFAULT_MC_PATHS,
    DEFAULT_SEED};
pub use error::{Error, Result};
pub use generic::{solve_generic, GenericDriver, JumpMomentSpec, QuadCovSpec};
pub use grid::{Curve, SampledFunction, TimeGrid};
pub use heston::{
    gaussian_jump_moment, heston_moment_convergence, heston_moments, heston_solve, jump_beta,
    GaussianJump, HestonParams, IntensityPoly,
};
pub use mc::{
    pathwise_residual, residual_stats, simulate_heston, simulate_sabr, simulate_utility,
    McConfig, PathSet, ResidualMatrix, ResidualStats, SimulatedPath, TerminalFunction,
    TerminalSample, DEFAULT_MC_STEPS_PER_YEAR,
};
pub use moments::{MomentConvergence, MomentVector};
pub use ode::{
    rk4_backward, solve_zeroth, DEFAULT_MAGNITUDE_CAP, DEFAULT_ODE_STEPS_PER_YEAR,
};
pub use sabr::{
    b_derivative, sabr_moment_convergence, sabr_moments, sabr_solve, sabr_transform,
    sabr_untransform, SabrParams,
};
pub use table::{CoefficientTable, TerminalPattern, TerminalSpec, TruncationOrder};
pub use utility::{
    fit_liability_poly, liability_derivative, riccati_exact, theta_derivative, utility_solve,
    utility_solve_with, LiabilitySpec, ThetaSpec, UtilityParams, DEFAULT_LIABILITY_FIT_DEGREE,
    DEFAULT_LIABILITY_FIT_POINTS, DEFAULT_LIABILITY_FIT_RANGE,
};
