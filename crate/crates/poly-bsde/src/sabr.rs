//! Coefficient recursion for the CEV local-volatility model with
//! mean-reverting stochastic volatility, after the state change that
//! removes the CEV power from the diffusion.
//!
//! The price `S` with CEV exponent `β ∈ [0, 1)` is mapped to
//! `x = ((s/s₀)^{1−β} − 1)/(1−β)`, in which the forward model reads (both
//! factors starting at 0):
//!
//! ```text
//! dX = −(β/2)·σ²·b(X)·(1+Y)² dt + σ(1+Y) dW₁,
//! dY = −κY dt + α(1+Y)(ρ dW₁ + √(1−ρ²) dW₂),      b(x) = 1/(1 + (1−β)x),
//! ```
//!
//! supported on `x > −1/(1−β)`. The expansion coefficients solve the
//! linear backward system (`m = i + k`, `∂ₓˡb(0) = (−1)ˡ l! (1−β)ˡ`):
//!
//! ```text
//! v̇[n]_{i,k} =
//!   − 𝕀(k≥2)·k(k−1)·[σ²/2·v[n]_{i+2,k−2} + ρσα·v[n]_{i+1,k−1} + α²/2·v[n]_{i,k}]
//!   − 𝕀(k≥1, m≤n−1)·k·[σ²·v[n]_{i+2,k−1} + 2ρσα·v[n]_{i+1,k} + α²·v[n]_{i,k+1}]
//!   − 𝕀(m≤n−2)·[σ²/2·v[n]_{i+2,k} + ρσα·v[n]_{i+1,k+1} + α²/2·v[n]_{i,k+2}]
//!   + 𝕀(k≥1, m≤n−1)·k·κ·v[n−1]_{i,k}
//!   + 𝕀(m≤n−1)·(β/2)σ²·Σ_{l=0}^{i} C(i,l)·∂ₓˡb(0)·[v[n−l]_{i−l+1,k}
//!         + 𝕀(k≥1)·2k·v[n−l−1]_{i−l+1,k−1} + 𝕀(k≥2)·k(k−1)·v[n−l−2]_{i−l+1,k−2}]
//! ```
//!
//! with terminal data `v[n]_{n,0}(T) = ∂ₓⁿH(0)`, zero elsewhere. Unlike
//! the jump-diffusion system this one carries same-degree couplings
//! (including a diagonal `−k(k−1)α²/2` damping term), so the whole
//! collection is integrated as one joint backward Runge–Kutta system. The
//! `k(k−1)` growth of those couplings is what eventually destabilizes high
//! orders at long maturities; divergence is reported with the first
//! offending entry index.

use crate::error::{Error, Result};
use crate::grid::{Curve, TimeGrid};
use crate::math::{binomial, factorial};
use crate::moments::{MomentConvergence, MomentVector};
use crate::ode::{rk4_backward, DEFAULT_MAGNITUDE_CAP};
use crate::table::{CoefficientTable, TerminalPattern, TerminalSpec};

/// Model parameters of the CEV stochastic-volatility model.
#[derive(Debug, Clone, PartialEq)]
pub struct SabrParams {
    /// Volatility level `σ(t) ≥ 0` (per √year).
    pub sigma: Curve,
    /// Vol-of-vol `α(t) ≥ 0`.
    pub alpha: Curve,
    /// Brownian correlation `ρ(t) ∈ [−1, 1]`.
    pub rho: Curve,
    /// Volatility mean-reversion speed `κ(t) ≥ 0`.
    pub kappa: Curve,
    /// CEV exponent `β ∈ [0, 1)`.
    pub beta_exp: f64,
}

impl SabrParams {
    /// Constant-parameter model.
    pub fn constant(sigma: f64, alpha: f64, rho: f64, kappa: f64, beta_exp: f64) -> Self {
        Self {
            sigma: Curve::Const(sigma),
            alpha: Curve::Const(alpha),
            rho: Curve::Const(rho),
            kappa: Curve::Const(kappa),
            beta_exp,
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
            return Err(Error::InvalidInput("rho must lie in [-1, 1]".to_string()));
        }
        if !(0.0..1.0).contains(&self.beta_exp) {
            return Err(Error::InvalidInput(format!(
                "CEV exponent must lie in [0, 1), got {}",
                self.beta_exp
            )));
        }
        Ok(())
    }

    /// Lower edge of the transformed state's support, `−1/(1−β)`.
    pub fn support_floor(&self) -> f64 {
        -1.0 / (1.0 - self.beta_exp)
    }
}

/// Maps a price to the transformed state,
/// `x = ((s/s₀)^{1−β} − 1)/(1−β)`.
pub fn sabr_transform(s: f64, s0: f64, beta_exp: f64) -> Result<f64> {
    if !(s > 0.0 && s0 > 0.0) {
        return Err(Error::Domain(format!(
            "prices must be positive, got s = {s}, s0 = {s0}"
        )));
    }
    let e = 1.0 - beta_exp;
    Ok(((s / s0).powf(e) - 1.0) / e)
}

/// Maps a transformed state back to a price,
/// `s = s₀(1 + (1−β)x)^{1/(1−β)}`; defined for `x > −1/(1−β)`.
pub fn sabr_untransform(x: f64, s0: f64, beta_exp: f64) -> Result<f64> {
    let e = 1.0 - beta_exp;
    let arg = 1.0 + e * x;
    if arg <= 0.0 {
        return Err(Error::Domain(format!(
            "state {x} is at or below the support floor {}",
            -1.0 / e
        )));
    }
    Ok(s0 * arg.powf(1.0 / e))
}

/// Exact derivative `∂ₓˡ b(0) = (−1)ˡ · l! · (1−β)ˡ` of the
/// local-volatility factor `b(x) = 1/(1 + (1−β)x)` at the origin.
pub fn b_derivative(beta_exp: f64, l: usize) -> f64 {
    let sign = if l.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * factorial(l) * (1.0 - beta_exp).powi(l as i32)
}

/// Solves the coefficient system up to order `n_max` on `grid`.
pub fn sabr_solve(
    params: &SabrParams,
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

    let triples: Vec<(usize, usize, usize)> =
        (0..total).map(CoefficientTable::entry_triple).collect();
    let b_der: Vec<f64> = (0..=n_max)
        .map(|l| b_derivative(params.beta_exp, l))
        .collect();
    let binom: Vec<Vec<f64>> = (0..=n_max)
        .map(|i| (0..=i).map(|l| binomial(i, l)).collect())
        .collect();
    let beta_exp = params.beta_exp;

    let rhs = |t: f64, s: &[f64], out: &mut [f64]| {
        let sig = params.sigma.value(t);
        let al = params.alpha.value(t);
        let rho = params.rho.value(t);
        let kap = params.kappa.value(t);
        let s2 = sig * sig;
        let rsa = rho * sig * al;
        let a2 = al * al;
        let bw = 0.5 * beta_exp * s2;
        let get = |n: usize, i: usize, k: usize| -> f64 {
            CoefficientTable::entry_index(n, i, k).map_or(0.0, |idx| s[idx])
        };
        for (idx, &(n, i, k)) in triples.iter().enumerate() {
            let m = i + k;
            let kf = k as f64;
            let mut dot = 0.0;
            if k >= 2 {
                dot -= kf
                    * (kf - 1.0)
                    * (0.5 * s2 * get(n, i + 2, k - 2)
                        + rsa * get(n, i + 1, k - 1)
                        + 0.5 * a2 * s[idx]);
            }
            if k >= 1 && m + 1 <= n {
                dot -= kf
                    * (s2 * get(n, i + 2, k - 1)
                        + 2.0 * rsa * get(n, i + 1, k)
                        + a2 * get(n, i, k + 1));
                dot += kf * kap * get(n - 1, i, k);
            }
            if m + 2 <= n {
                dot -= 0.5 * s2 * get(n, i + 2, k)
                    + rsa * get(n, i + 1, k + 1)
                    + 0.5 * a2 * get(n, i, k + 2);
            }
            if bw != 0.0 && m + 1 <= n {
                for l in 0..=i {
                    let w = binom[i][l] * b_der[l];
                    let mut bracket = get(n - l, i - l + 1, k);
                    if k >= 1 {
                        bracket += 2.0 * kf * get(n - l - 1, i - l + 1, k - 1);
                    }
                    if k >= 2 {
                        bracket += kf * (kf - 1.0) * get(n - l - 2, i - l + 1, k - 2);
                    }
                    dot += bw * w * bracket;
                }
            }
            out[idx] = dot;
        }
    };

    let columns = rk4_backward(rhs, &term_state, grid, DEFAULT_MAGNITUDE_CAP)
        .map_err(crate::heston::label_divergence)?;
    CoefficientTable::from_entries(n_max, grid, columns, TerminalPattern::XDiagonal)
}

/// Truncation histories of the raw moments `γ_1..γ_{m_max}` of the
/// terminal transformed state, each from its own monomial-payoff solve.
pub fn sabr_moment_convergence(
    params: &SabrParams,
    m_max: usize,
    n_max: usize,
    grid: TimeGrid,
) -> Result<MomentConvergence> {
    crate::heston::monomial_moment_convergence(m_max, n_max, |terminal| {
        sabr_solve(params, terminal, n_max, grid)
    })
}

/// The fully truncated raw moments `γ_1..γ_{m_max}` of the terminal
/// transformed state.
pub fn sabr_moments(
    params: &SabrParams,
    m_max: usize,
    n_max: usize,
    grid: TimeGrid,
) -> Result<MomentVector> {
    sabr_moment_convergence(params, m_max, n_max, grid)?.final_moments()
}
