//! Coefficient recursion for the jump-extended stochastic-volatility
//! pricing model.
//!
//! Forward model (log-price `X`, shifted variance `Y`, both starting at 0):
//!
//! ```text
//! dX = −(σ²/2·(Y+1) + λ(Y)·β) dt + σ√(Y+1) dW₁ + jumps,
//! dY = −κY dt + α√(Y+1) (ρ dW₁ + √(1−ρ²) dW₂),
//! ```
//!
//! with jump sizes of raw moments `q_j` arriving at polynomial intensity
//! `λ(y)` and compensator mean `β = E[e^z − 1]`. The value expansion's
//! coefficients `v[n]_{i,k}(t)` then solve the linear backward system
//!
//! ```text
//! v̇[n]_{i,k} =
//!   − 𝕀(k≥1, m≤n−1)·k·[σ²/2·v[n]_{i+2,k−1} + ρσα·v[n]_{i+1,k} + α²/2·v[n]_{i,k+1}]
//!   − 𝕀(m≤n−2)·[σ²/2·v[n]_{i+2,k} + ρσα·v[n]_{i+1,k+1} + α²/2·v[n]_{i,k+2}]
//!   + 𝕀(k≥1, m≤n−1)·k·[σ²/2·v[n−1]_{i+1,k−1} + κ·v[n−1]_{i,k}]
//!   + 𝕀(m≤n−1)·σ²/2·v[n]_{i+1,k}
//!   + 𝕀(m≤n−1)·Σ_{l=0}^{min(k,d)} C(k,l)·∂ᵧˡλ(0)·[β·v[n−l]_{i+1,k−l}
//!                                  − Σ_{j=1}^{n−m} q_j/j!·v[n−l]_{j+i,k−l}]
//! ```
//!
//! (`m = i + k`) with terminal data `v[n]_{n,0}(T) = ∂ₓⁿH(0)` and every
//! other entry zero at `T`. The system is triangular: an entry references
//! only entries of higher total degree at the same order, or lower orders —
//! so integrating the whole collection as one joint backward Runge–Kutta
//! system reproduces the one-by-one recursion with full fourth-order
//! accuracy at every stage.
//!
//! With the monomial payoffs `H(x) = x^m`, the value at the origin yields
//! the raw moments of the terminal log-price, `γ_m = Σ_n v[n]_{0,0}(0)`.

use crate::error::{Error, Result};
use crate::grid::{Curve, TimeGrid};
use crate::math::{binomial, factorial, gaussian_raw_moment};
use crate::moments::{MomentConvergence, MomentVector};
use crate::ode::{rk4_backward, DEFAULT_MAGNITUDE_CAP};
use crate::table::{CoefficientTable, TerminalPattern, TerminalSpec};

/// Normally distributed jump sizes in log-return units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianJump {
    /// Mean jump size `μ_J`.
    pub mu: f64,
    /// Jump-size standard deviation `σ_J ≥ 0`.
    pub sigma: f64,
}

impl GaussianJump {
    /// Checks finiteness and `σ_J ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(
                "jump parameters must be finite".to_string(),
            ));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidInput(format!(
                "jump stdev must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Degenerate jump of size zero (effectively no jumps when paired with
    /// zero intensity).
    pub fn none() -> Self {
        Self { mu: 0.0, sigma: 0.0 }
    }
}

/// `j`-th raw moment `q_j` of the jump-size distribution.
pub fn gaussian_jump_moment(jump: GaussianJump, j: usize) -> f64 {
    gaussian_raw_moment(jump.mu, jump.sigma, j)
}

/// Compensator mean `β = E[e^z − 1]` of the jump sizes:
/// `exp(μ_J + σ_J²/2) − 1`.
pub fn jump_beta(jump: GaussianJump) -> f64 {
    (jump.mu + 0.5 * jump.sigma * jump.sigma).exp() - 1.0
}

/// Jump intensity as a polynomial of the shifted variance,
/// `λ(y) = Σ_l a_l y^l`, with the `y`-range on which non-negativity is
/// enforced.
///
/// Polynomials keep the intensity derivatives `∂ᵧˡλ(0) = l!·a_l` exact and
/// finitely many, which the coefficient recursion requires.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPoly {
    coeffs: Vec<f64>,
    y_range: (f64, f64),
}

impl IntensityPoly {
    /// Builds `λ(y) = Σ_l coeffs[l]·y^l` and checks `λ ≥ 0` numerically on
    /// 1001 points over `y_range`.
    pub fn new(coeffs: Vec<f64>, y_range: (f64, f64)) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidInput(
                "intensity polynomial needs at least one coefficient".to_string(),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "intensity coefficients must be finite".to_string(),
            ));
        }
        if !(y_range.0.is_finite() && y_range.1.is_finite() && y_range.0 < y_range.1) {
            return Err(Error::InvalidInput(format!(
                "intensity y-range must be a finite interval, got ({}, {})",
                y_range.0, y_range.1
            )));
        }
        let poly = Self { coeffs, y_range };
        for step in 0..=1000 {
            let y = y_range.0 + (y_range.1 - y_range.0) * step as f64 / 1000.0;
            if poly.eval(y) < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "intensity is negative at y = {y}: {}",
                    poly.eval(y)
                )));
            }
        }
        Ok(poly)
    }

    /// The zero intensity (no jumps).
    pub fn zero() -> Self {
        Self {
            coeffs: vec![0.0],
            y_range: (-1.0, 1.0),
        }
    }

    /// A constant intensity `λ ≡ a₀ ≥ 0`.
    pub fn constant(a0: f64) -> Result<Self> {
        Self::new(vec![a0], (-1.0, 1.0))
    }

    /// `λ(y)` by Horner evaluation.
    pub fn eval(&self, y: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    /// Exact derivative `∂ᵧˡλ(0) = l!·a_l`, zero beyond the degree.
    pub fn derivative_at_zero(&self, l: usize) -> f64 {
        self.coeffs.get(l).map_or(0.0, |a| factorial(l) * a)
    }

    /// Polynomial degree `d`.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Declared non-negativity range.
    pub fn y_range(&self) -> (f64, f64) {
        self.y_range
    }
}

/// Model parameters: diffusion coefficients as (possibly time-dependent)
/// curves, plus jump intensity and jump-size law.
#[derive(Debug, Clone, PartialEq)]
pub struct HestonParams {
    /// Volatility level `σ(t) ≥ 0` (per √year).
    pub sigma: Curve,
    /// Vol-of-vol `α(t) ≥ 0`.
    pub alpha: Curve,
    /// Brownian correlation `ρ(t) ∈ [−1, 1]`.
    pub rho: Curve,
    /// Variance mean-reversion speed `κ(t) ≥ 0`.
    pub kappa: Curve,
    /// Jump intensity polynomial `λ(y)`.
    pub intensity: IntensityPoly,
    /// Jump-size distribution.
    pub jump: GaussianJump,
}

impl HestonParams {
    /// Constant-parameter model.
    pub fn constant(
        sigma: f64,
        alpha: f64,
        rho: f64,
        kappa: f64,
        intensity: IntensityPoly,
        jump: GaussianJump,
    ) -> Self {
        Self {
            sigma: Curve::Const(sigma),
            alpha: Curve::Const(alpha),
            rho: Curve::Const(rho),
            kappa: Curve::Const(kappa),
            intensity,
            jump,
        }
    }

    /// Checks sign and range constraints on every parameter.
    pub fn validate(&self) -> Result<()> {
        self.sigma.validate("sigma")?;
        self.alpha.validate("alpha")?;
        self.rho.validate("rho")?;
        self.kappa.validate("kappa")?;
        for (name, curve) in [("sigma", &self.sigma), ("alpha", &self.alpha), ("kappa", &self.kappa)]
        {
            if curve.bounds().0 < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be non-negative"
                )));
            }
        }
        let (rho_lo, rho_hi) = self.rho.bounds();
        if rho_lo < -1.0 || rho_hi > 1.0 {
            return Err(Error::InvalidInput(
                "rho must lie in [-1, 1]".to_string(),
            ));
        }
        self.jump.validate()
    }
}

/// Shared implementation detail of the two pricing-model solvers: maps a
/// divergence report onto the offending table entry's `(n, i, k)` label.
pub(crate) fn label_divergence(err: Error) -> Error {
    match err {
        Error::DivergedSolve {
            time, component, ..
        } => {
            let (n, i, k) = CoefficientTable::entry_triple(component);
            Error::DivergedSolve {
                time,
                component,
                label: format!("coefficient ({n}, {i}, {k})"),
            }
        }
        other => other,
    }
}

/// Solves the coefficient system up to order `n_max` on `grid`.
pub fn heston_solve(
    params: &HestonParams,
    terminal: &TerminalSpec,
    n_max: usize,
    grid: TimeGrid,
) -> Result<CoefficientTable> {
    params.validate()?;
    let total = CoefficientTable::total_entries(n_max);
    let mut term_state = vec![0.0; total];
    for n in 0..=n_max {
        let idx = CoefficientTable::entry_index(n, n, 0).expect("diagonal entry");
        term_state[idx] = terminal.derivative(n);
    }

    // Per-solve precomputation: entry labels, jump-moment weights q_j/j!,
    // intensity derivatives, binomials.
    let triples: Vec<(usize, usize, usize)> =
        (0..total).map(CoefficientTable::entry_triple).collect();
    let q_w: Vec<f64> = (0..=n_max)
        .map(|j| gaussian_jump_moment(params.jump, j) / factorial(j))
        .collect();
    let beta = jump_beta(params.jump);
    let d = params.intensity.degree();
    let lam: Vec<f64> = (0..=d)
        .map(|l| params.intensity.derivative_at_zero(l))
        .collect();
    let binom: Vec<Vec<f64>> = (0..=n_max)
        .map(|k| (0..=k).map(|l| binomial(k, l)).collect())
        .collect();

    let rhs = |t: f64, s: &[f64], out: &mut [f64]| {
        let sig = params.sigma.value(t);
        let al = params.alpha.value(t);
        let rho = params.rho.value(t);
        let kap = params.kappa.value(t);
        let half_s2 = 0.5 * sig * sig;
        let rsa = rho * sig * al;
        let half_a2 = 0.5 * al * al;
        let get = |n: usize, i: usize, k: usize| -> f64 {
            CoefficientTable::entry_index(n, i, k).map_or(0.0, |idx| s[idx])
        };
        for (idx, &(n, i, k)) in triples.iter().enumerate() {
            let m = i + k;
            let mut dot = 0.0;
            if k >= 1 && m + 1 <= n {
                let kf = k as f64;
                dot -= kf
                    * (half_s2 * get(n, i + 2, k - 1)
                        + rsa * get(n, i + 1, k)
                        + half_a2 * get(n, i, k + 1));
                dot += kf * (half_s2 * get(n - 1, i + 1, k - 1) + kap * get(n - 1, i, k));
            }
            if m + 2 <= n {
                dot -= half_s2 * get(n, i + 2, k)
                    + rsa * get(n, i + 1, k + 1)
                    + half_a2 * get(n, i, k + 2);
            }
            if m + 1 <= n {
                dot += half_s2 * get(n, i + 1, k);
                for l in 0..=k.min(d) {
                    let weight = binom[k][l] * lam[l];
                    if weight == 0.0 {
                        continue;
                    }
                    let mut bracket = beta * get(n - l, i + 1, k - l);
                    for j in 1..=(n - m) {
                        bracket -= q_w[j] * get(n - l, j + i, k - l);
                    }
                    dot += weight * bracket;
                }
            }
            out[idx] = dot;
        }
    };

    let columns =
        rk4_backward(rhs, &term_state, grid, DEFAULT_MAGNITUDE_CAP).map_err(label_divergence)?;
    CoefficientTable::from_entries(n_max, grid, columns, TerminalPattern::XDiagonal)
}

/// Shared by the pricing models: runs `solve` once per monomial payoff
/// `H(x) = x^m` for `m = 1..m_max` and collects the truncation histories
/// `γ_m^{(n)} = Σ_{j≤n} v[j]_{0,0}(0)`.
pub(crate) fn monomial_moment_convergence<S>(
    m_max: usize,
    n_max: usize,
    mut solve: S,
) -> Result<MomentConvergence>
where
    S: FnMut(&TerminalSpec) -> Result<CoefficientTable>,
{
    if m_max == 0 {
        return Err(Error::InvalidInput(
            "moment computation needs m_max >= 1".to_string(),
        ));
    }
    if n_max < m_max {
        return Err(Error::InvalidInput(format!(
            "truncation order n_max = {n_max} must reach the highest moment m_max = {m_max}"
        )));
    }
    let mut rows = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let terminal = TerminalSpec::monomial(m, n_max);
        let table = solve(&terminal)?;
        let mut prefix = Vec::with_capacity(n_max + 1);
        let mut acc = 0.0;
        for n in 0..=n_max {
            acc += table.value_at_node(n, 0, 0, 0);
            prefix.push(acc);
        }
        rows.push(prefix);
    }
    MomentConvergence::new(rows)
}

/// Truncation histories of the raw moments `γ_1..γ_{m_max}` of the
/// terminal log-price, each from its own monomial-payoff solve.
pub fn heston_moment_convergence(
    params: &HestonParams,
    m_max: usize,
    n_max: usize,
    grid: TimeGrid,
) -> Result<MomentConvergence> {
    monomial_moment_convergence(m_max, n_max, |terminal| {
        heston_solve(params, terminal, n_max, grid)
    })
}

/// The fully truncated raw moments `γ_1..γ_{m_max}` of the terminal
/// log-price.
pub fn heston_moments(
    params: &HestonParams,
    m_max: usize,
    n_max: usize,
    grid: TimeGrid,
) -> Result<MomentVector> {
    heston_moment_convergence(params, m_max, n_max, grid)?.final_moments()
}
