//! Coefficient recursion for the exponential-utility portfolio problem
//! with one stochastic-volatility factor — a backward SDE whose driver is
//! quadratic in the volatility control.
//!
//! The certainty-equivalent value `V(t, x, y)` solves a semilinear system
//! whose driver contains `−(α²/2)(1−ρ²)(1+y)(∂ᵧV)²` plus the squared
//! market price of risk `Θ(t, x, y) = c₀e^{−c₁x}(y+1)` and a terminal
//! liability `H(x, y) = e^{−g₁x}G(y)` with a polynomial `G`. Expanding in
//! powers of the noise scale turns it into the linear-in-the-unknown
//! backward system (`m = i + k`, `ξ² = 1 − ρ²`):
//!
//! ```text
//! v̇[n]_{i,k} =
//!   − 𝕀(k≥1, m≤n−1)·k·[σ²/2·v[n]_{i+2,k−1} + ρσα·v[n]_{i+1,k} + α²/2·v[n]_{i,k+1}]
//!   − 𝕀(m≤n−2)·[σ²/2·v[n]_{i+2,k} + ρσα·v[n]_{i+1,k+1} + α²/2·v[n]_{i,k+2}]
//!   + 𝕀(m=n)·½·∂ₓ^i∂ᵧ^k Θ(t,0,0)
//!   + 𝕀(m≤n−1)·σ²/2·v[n]_{i+1,k}
//!   + 𝕀(k≥1, m≤n−1)·k·[σ²/2·v[n−1]_{i+1,k−1} + κ·v[n−1]_{i,k}]
//!   − (α²ξ²/2)·Σ_{l=1}^{n−1} Σ_{j=1∨(l+2−n+m)}^{l∧(m+1)} Σ_{p=1∨(j−m+k)}^{j∧(k+1)}
//!         C(i,j−p)·C(k,p−1)·v[l]_{j−p,p}·v[n−l]_{i−j+p,k−p+2}
//!   − (α²ξ²/2)·Σ_{l=1}^{n−2} Σ_{j=1∨(l+2−n+m)}^{l∧m} Σ_{p=1∨(j−m+k)}^{j∧k}
//!         C(i,j−p)·C(k,p)·p·v[l]_{j−p,p}·v[n−l−1]_{i−j+p,k−p+1}
//! ```
//!
//! with terminal data `v[n]_{n−k,k}(T) = γ·∂ₓ^{n−k}∂ᵧ^k H(0,0)` on the
//! whole degree-`n` diagonal. The two triple sums are the order-`n`
//! coefficients of `(∂ᵧV)²` and `y·(∂ᵧV)²`; they couple only
//! lower-order, already-determined coefficients, so each unknown still
//! satisfies a linear equation even though the system as a whole is
//! quadratic. The printed summation bounds are intricate enough that the
//! tests re-derive the same terms from brute-force polynomial
//! multiplication and require exact agreement.
//!
//! For affine `Θ` and terminal slopes the exact value stays affine in
//! `(x, y)` with coefficients solving a scalar Riccati system;
//! [`riccati_exact`] integrates it directly and serves as the convergence
//! benchmark for the truncated expansion.

use crate::error::{Error, Result};
use crate::grid::{Curve, SampledFunction, TimeGrid};
use crate::math::{binomial, factorial};
use crate::ode::{rk4_backward, DEFAULT_MAGNITUDE_CAP};
use crate::table::{CoefficientTable, TerminalPattern};

/// Default sampling band of the volatility factor for liability fits.
///
/// The factor starts at 0 and mean-reverts; for every parameter set used
/// here its terminal distribution is well inside `[−1, 1]`, and the fitted
/// polynomial is only ever evaluated where paths actually land.
pub const DEFAULT_LIABILITY_FIT_RANGE: (f64, f64) = (-1.0, 1.0);

/// Default number of equally spaced sample points for liability fits;
/// dense enough that the discrete least-squares problem is a stable stand-in
/// for the continuous one.
pub const DEFAULT_LIABILITY_FIT_POINTS: usize = 201;

/// Default liability fit degree.
pub const DEFAULT_LIABILITY_FIT_DEGREE: usize = 5;

/// Squared market price of risk `Θ(t, x, y) = c₀·e^{−c₁x}·(y + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSpec {
    /// Level `c₀ ≥ 0` (Θ is a squared quantity).
    pub c0: f64,
    /// Wealth-decay rate `c₁`.
    pub c1: f64,
}

impl ThetaSpec {
    /// Builds the spec, rejecting a negative level.
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        if !(c0.is_finite() && c1.is_finite()) || c0 < 0.0 {
            return Err(Error::InvalidInput(format!(
                "risk-premium spec needs finite c1 and c0 >= 0, got c0 = {c0}, c1 = {c1}"
            )));
        }
        Ok(Self { c0, c1 })
    }

    /// Evaluates `Θ(x, y) = c₀e^{−c₁x}(y + 1)` (time-homogeneous).
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.c0 * (-self.c1 * x).exp() * (y + 1.0)
    }
}

/// Exact mixed derivative `∂ₓ^a∂ᵧ^b Θ(0, 0)`: `c₀(−c₁)^a` for
/// `b ∈ {0, 1}` and zero otherwise (Θ is affine in `y`).
pub fn theta_derivative(spec: &ThetaSpec, a: usize, b: usize) -> f64 {
    if b > 1 {
        return 0.0;
    }
    spec.c0 * (-spec.c1).powi(a as i32)
}

/// Terminal liability `H(x, y) = e^{−g₁x}·G(y)` with polynomial
/// `G(y) = Σ_k g_k y^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiabilitySpec {
    /// Wealth-decay rate `g₁` of the terminal exposure.
    pub g1: f64,
    /// Polynomial coefficients `g_0..g_D` of `G`.
    pub g: Vec<f64>,
}

impl LiabilitySpec {
    /// Builds the spec, rejecting empty or non-finite coefficients.
    pub fn new(g1: f64, g: Vec<f64>) -> Result<Self> {
        if !g1.is_finite() || g.is_empty() || g.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "liability spec needs finite g1 and a non-empty finite coefficient list"
                    .to_string(),
            ));
        }
        Ok(Self { g1, g })
    }

    /// Constant liability `H ≡ g₀`.
    pub fn constant(g0: f64) -> Self {
        Self { g1: 0.0, g: vec![g0] }
    }

    /// Degree `D` of the polynomial part.
    pub fn degree(&self) -> usize {
        self.g.len() - 1
    }

    /// Evaluates `G(y)` by Horner's rule.
    pub fn g_value(&self, y: f64) -> f64 {
        self.g.iter().rev().fold(0.0, |acc, &c| acc * y + c)
    }

    /// Evaluates `H(x, y) = e^{−g₁x}·G(y)`.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        (-self.g1 * x).exp() * self.g_value(y)
    }
}

/// Exact terminal coefficient `γ·∂ₓ^{n−k}∂ᵧ^k H(0, 0)
/// = γ·(−g₁)^{n−k}·k!·g_k` (zero for `k` beyond the fit degree).
pub fn liability_derivative(spec: &LiabilitySpec, risk_aversion: f64, n: usize, k: usize) -> f64 {
    debug_assert!(k <= n, "k = {k} exceeds n = {n}");
    if k > spec.degree() {
        return 0.0;
    }
    risk_aversion * (-spec.g1).powi((n - k) as i32) * factorial(k) * spec.g[k]
}

/// Ordinary least-squares polynomial fit of `target` on `n_points`
/// equally spaced samples of `fit_range`; returns coefficients `g_0..g_D`.
///
/// The normal equations are solved by a Cholesky factorization; a pivot
/// collapsing below `1e−12` of the matrix scale reports `RankDeficient`
/// (degrees much past 20 on a unit interval exhaust double precision).
pub fn fit_liability_poly(
    target: impl Fn(f64) -> f64,
    degree: usize,
    fit_range: (f64, f64),
    n_points: usize,
) -> Result<Vec<f64>> {
    let (lo, hi) = fit_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!(
            "fit range must be a non-degenerate interval, got [{lo}, {hi}]"
        )));
    }
    if n_points <= degree {
        return Err(Error::InvalidInput(format!(
            "need more sample points ({n_points}) than the fit degree ({degree})"
        )));
    }
    let d = degree + 1;
    let mut normal = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    let mut powers = vec![0.0; d];
    for idx in 0..n_points {
        let x = lo + (hi - lo) * idx as f64 / (n_points - 1) as f64;
        let fx = target(x);
        if !fx.is_finite() {
            return Err(Error::InvalidInput(format!(
                "target is not finite at sample point {x}"
            )));
        }
        let mut p = 1.0;
        for power in powers.iter_mut() {
            *power = p;
            p *= x;
        }
        for r in 0..d {
            rhs[r] += powers[r] * fx;
            for c in 0..d {
                normal[r][c] += powers[r] * powers[c];
            }
        }
    }
    cholesky_solve(normal, rhs)
}

/// Solves the symmetric positive-definite system `M c = b` in place.
fn cholesky_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let d = m.len();
    let scale = m
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    for j in 0..d {
        let mut diag = m[j][j];
        for c in 0..j {
            diag -= m[j][c] * m[j][c];
        }
        if !(diag > 1e-12 * scale) {
            return Err(Error::RankDeficient(format!(
                "normal equations lost positive-definiteness at column {j} \
                 (pivot {diag:.3e} against scale {scale:.3e})"
            )));
        }
        let root = diag.sqrt();
        m[j][j] = root;
        for r in (j + 1)..d {
            let mut v = m[r][j];
            for c in 0..j {
                v -= m[r][c] * m[j][c];
            }
            m[r][j] = v / root;
        }
    }
    // Forward then backward substitution.
    for r in 0..d {
        for c in 0..r {
            b[r] -= m[r][c] * b[c];
        }
        b[r] /= m[r][r];
    }
    for r in (0..d).rev() {
        for c in (r + 1)..d {
            b[r] -= m[c][r] * b[c];
        }
        b[r] /= m[r][r];
    }
    Ok(b)
}

/// Parameters of the exponential-utility problem.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityParams {
    /// Wealth volatility scale `σ(t) ≥ 0`.
    pub sigma: Curve,
    /// Vol-of-vol `α(t) ≥ 0`.
    pub alpha: Curve,
    /// Brownian correlation `ρ(t) ∈ [−1, 1]`.
    pub rho: Curve,
    /// Factor mean-reversion speed `κ(t) ≥ 0`.
    pub kappa: Curve,
    /// Squared market price of risk.
    pub risk_premium: ThetaSpec,
    /// Terminal liability.
    pub liability: LiabilitySpec,
    /// Absolute risk aversion `γ > 0`.
    pub risk_aversion: f64,
}

impl UtilityParams {
    /// Checks sign and range constraints on every parameter.
    pub fn validate(&self) -> Result<()> {
        validate_base_curves(&self.sigma, &self.alpha, &self.rho, &self.kappa)?;
        if !(self.risk_aversion > 0.0 && self.risk_aversion.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "risk aversion must be positive, got {}",
                self.risk_aversion
            )));
        }
        if self.risk_premium.c0 < 0.0 {
            return Err(Error::InvalidInput(
                "risk-premium level c0 must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

fn validate_base_curves(sigma: &Curve, alpha: &Curve, rho: &Curve, kappa: &Curve) -> Result<()> {
    sigma.validate("sigma")?;
    alpha.validate("alpha")?;
    rho.validate("rho")?;
    kappa.validate("kappa")?;
    for (name, curve) in [("sigma", sigma), ("alpha", alpha), ("kappa", kappa)] {
        if curve.bounds().0 < 0.0 {
            return Err(Error::InvalidInput(format!("{name} must be non-negative")));
        }
    }
    let (rho_lo, rho_hi) = rho.bounds();
    if rho_lo < -1.0 || rho_hi > 1.0 {
        return Err(Error::InvalidInput("rho must lie in [-1, 1]".to_string()));
    }
    Ok(())
}

/// The two quadratic convolution sums for entry `(n, i, k)` evaluated on
/// a flat state vector: the order-`n` coefficients of `(∂ᵧV)²` and
/// `y·(∂ᵧV)²`, without the `α²ξ²/2` prefactor.
fn quadratic_coupling(state: &[f64], binom: &[Vec<f64>], n: usize, i: usize, k: usize) -> f64 {
    let m = i + k;
    let get = |nn: usize, ii: usize, kk: usize| -> f64 {
        CoefficientTable::entry_index(nn, ii, kk).map_or(0.0, |idx| state[idx])
    };
    let mut total = 0.0;
    // Pairs of y-derivatives, orders l + (n − l) = n.
    if n >= 2 {
        for l in 1..n {
            let j_lo = 1.max((l + 2 + m).saturating_sub(n));
            let j_hi = l.min(m + 1);
            for j in j_lo..=j_hi {
                let p_lo = 1.max((j + k).saturating_sub(m));
                let p_hi = j.min(k + 1);
                for p in p_lo..=p_hi {
                    let a = j - p;
                    total += binom[i][a]
                        * binom[k][p - 1]
                        * get(l, a, p)
                        * get(n - l, i - a, k + 2 - p);
                }
            }
        }
    }
    // The same product carrying one explicit factor of y, orders
    // l + (n − 1 − l) = n − 1.
    if n >= 3 && k >= 1 {
        for l in 1..=(n - 2) {
            let j_lo = 1.max((l + 2 + m).saturating_sub(n));
            let j_hi = l.min(m);
            for j in j_lo..=j_hi {
                let p_lo = 1.max((j + k).saturating_sub(m));
                let p_hi = j.min(k);
                for p in p_lo..=p_hi {
                    let a = j - p;
                    total += binom[i][a]
                        * binom[k][p]
                        * p as f64
                        * get(l, a, p)
                        * get(n - l - 1, i - a, k - p + 1);
                }
            }
        }
    }
    total
}

/// Solves the utility coefficient system with caller-supplied derivative
/// data: `theta_derivs(t, a, b) = ∂ₓ^a∂ᵧ^b Θ(t, 0, 0)` feeds the diagonal
/// forcing and `terminal_derivs(i, k) = γ·∂ₓ^i∂ᵧ^k H(0, 0)` the terminal
/// condition. This is the entry point for non-standard premium or
/// liability shapes such as the affine benchmark case.
#[allow(clippy::too_many_arguments)] // flat list of model inputs, no natural grouping
pub fn utility_solve_with(
    sigma: &Curve,
    alpha: &Curve,
    rho: &Curve,
    kappa: &Curve,
    theta_derivs: impl Fn(f64, usize, usize) -> f64,
    terminal_derivs: impl Fn(usize, usize) -> f64,
    n_max: usize,
    grid: TimeGrid,
) -> Result<CoefficientTable> {
    validate_base_curves(sigma, alpha, rho, kappa)?;
    let total = CoefficientTable::total_entries(n_max);
    let mut term_state = vec![0.0; total];
    for n in 0..=n_max {
        for k in 0..=n {
            let idx = CoefficientTable::entry_index(n, n - k, k).expect("diagonal entry");
            term_state[idx] = terminal_derivs(n - k, k);
        }
    }

    let triples: Vec<(usize, usize, usize)> =
        (0..total).map(CoefficientTable::entry_triple).collect();
    let binom: Vec<Vec<f64>> = (0..=n_max)
        .map(|i| (0..=i).map(|l| binomial(i, l)).collect())
        .collect();

    let rhs = |t: f64, s: &[f64], out: &mut [f64]| {
        let sig = sigma.value(t);
        let al = alpha.value(t);
        let rho_t = rho.value(t);
        let kap = kappa.value(t);
        let s2 = sig * sig;
        let rsa = rho_t * sig * al;
        let a2 = al * al;
        let quad_w = 0.5 * a2 * (1.0 - rho_t * rho_t);
        let get = |n: usize, i: usize, k: usize| -> f64 {
            CoefficientTable::entry_index(n, i, k).map_or(0.0, |idx| s[idx])
        };
        for (idx, &(n, i, k)) in triples.iter().enumerate() {
            let m = i + k;
            let kf = k as f64;
            let mut dot = 0.0;
            if k >= 1 && m + 1 <= n {
                dot -= kf
                    * (0.5 * s2 * get(n, i + 2, k - 1)
                        + rsa * get(n, i + 1, k)
                        + 0.5 * a2 * get(n, i, k + 1));
                dot += kf * (0.5 * s2 * get(n - 1, i + 1, k - 1) + kap * get(n - 1, i, k));
            }
            if m + 2 <= n {
                dot -= 0.5 * s2 * get(n, i + 2, k)
                    + rsa * get(n, i + 1, k + 1)
                    + 0.5 * a2 * get(n, i, k + 2);
            }
            if m == n {
                dot += 0.5 * theta_derivs(t, i, k);
            }
            if m + 1 <= n {
                dot += 0.5 * s2 * get(n, i + 1, k);
            }
            if quad_w != 0.0 && m + 2 <= n {
                dot -= quad_w * quadratic_coupling(s, &binom, n, i, k);
            }
            out[idx] = dot;
        }
    };

    let columns = rk4_backward(rhs, &term_state, grid, DEFAULT_MAGNITUDE_CAP)
        .map_err(crate::heston::label_divergence)?;
    CoefficientTable::from_entries(n_max, grid, columns, TerminalPattern::XyDiagonal)
}

/// Solves the coefficient system for a standard parameter set up to order
/// `n_max` on `grid`.
pub fn utility_solve(
    params: &UtilityParams,
    n_max: usize,
    grid: TimeGrid,
) -> Result<CoefficientTable> {
    params.validate()?;
    utility_solve_with(
        &params.sigma,
        &params.alpha,
        &params.rho,
        &params.kappa,
        |_t, a, b| theta_derivative(&params.risk_premium, a, b),
        |i, k| liability_derivative(&params.liability, params.risk_aversion, i + k, k),
        n_max,
        grid,
    )
}

/// Exact affine benchmark: for `Θ = Θ_x·x + Θ_y·y + Θ_0` and terminal
/// slopes `H = h_x·x + h_y·y + h_0`, the value stays affine,
/// `V = v_x·x + v_y·y + v_0`, with coefficients solving
///
/// ```text
/// v̇_x = ½Θ_x,
/// v̇_y = ½(σ²v_x − α²(1−ρ²)v_y²) + κv_y + ½Θ_y,
/// v̇_0 = ½(σ²v_x − α²(1−ρ²)v_y²) + ½Θ_0,
/// ```
///
/// backward from `(γh_x, γh_y, γh_0)`. Returns `(v_x, v_y, v_0)`. Only
/// the four factor curves and the risk aversion of `params` are read.
/// The `v_y` equation is of Riccati type and can blow up in finite time;
/// that is reported as a divergence at the first affected node.
pub fn riccati_exact(
    h: (f64, f64, f64),
    theta_lin: (&Curve, &Curve, &Curve),
    params: &UtilityParams,
    grid: TimeGrid,
) -> Result<(SampledFunction, SampledFunction, SampledFunction)> {
    validate_base_curves(&params.sigma, &params.alpha, &params.rho, &params.kappa)?;
    let gamma = params.risk_aversion;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "risk aversion must be positive, got {gamma}"
        )));
    }
    let (theta_x, theta_y, theta_0) = theta_lin;
    let terminal = [gamma * h.0, gamma * h.1, gamma * h.2];
    let rhs = |t: f64, s: &[f64], out: &mut [f64]| {
        let sig = params.sigma.value(t);
        let al = params.alpha.value(t);
        let rho_t = params.rho.value(t);
        let kap = params.kappa.value(t);
        let xi2 = 1.0 - rho_t * rho_t;
        let common = 0.5 * (sig * sig * s[0] - al * al * xi2 * s[1] * s[1]);
        out[0] = 0.5 * theta_x.value(t);
        out[1] = common + kap * s[1] + 0.5 * theta_y.value(t);
        out[2] = common + 0.5 * theta_0.value(t);
    };
    let mut cols = rk4_backward(rhs, &terminal, grid, DEFAULT_MAGNITUDE_CAP).map_err(|e| {
        if let Error::DivergedSolve { time, component, .. } = e {
            Error::DivergedSolve {
                time,
                component,
                label: ["v_x", "v_y", "v_0"][component].to_string(),
            }
        } else {
            e
        }
    })?;
    let v0 = cols.pop().expect("three components");
    let vy = cols.pop().expect("three components");
    let vx = cols.pop().expect("three components");
    Ok((vx, vy, v0))
}
