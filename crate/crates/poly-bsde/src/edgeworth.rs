//! From raw moments of the terminal state to option prices: cumulants,
//! the Edgeworth density expansion with probabilists'-Hermite
//! corrections, closed-form call/put formulas for exponential payoffs,
//! and quadrature pricing for payoffs without a closed form.
//!
//! With `μ = χ₁`, `Σ = √χ₂`, `z = (x−μ)/Σ`, the order-`n` density
//! approximation is
//!
//! ```text
//! p_n(x) = φ(z)/Σ · [1 + Σ_{s=1}^{n−2} Σ_{partitions of s}
//!            Σ^{−(s+2r)}·H_{s+2r}(z)·Π_m (1/k_m!)·(χ_{m+2}/(m+2)!)^{k_m}],
//! ```
//!
//! where a partition of `s` is a tuple `k_1..k_s ≥ 0` with
//! `Σ m·k_m = s` and `r = Σ k_m`. The same partition sums convert
//! moments to cumulants and back. For payoffs of the form
//! `(s₀eˣ − K)⁺` the Hermite corrections integrate in closed form via
//!
//! ```text
//! ∫_d^∞ φ(y)H_j(y) dy          = φ(d)·H_{j−1}(d),
//! ∫_d^∞ e^{Σy}φ(y)H_j(y) dy    = e^{Σd}φ(d)H_{j−1}(d) + Σ·I_{j−1},
//! ```
//!
//! unrolled down to `I₀ = e^{Σ²/2}N(Σ−d)`; puts use the mirrored
//! lower-tail recursions. The expansion is not guaranteed to be a true
//! density — it can dip negative when high cumulants are large — so the
//! module surfaces diagnostics (minimum over a scan grid, cumulant scale
//! ratios) instead of repairing the series.

use crate::error::{Error, Result};
use crate::math::{factorial, integrate_adaptive, norm_cdf, norm_pdf};
use crate::moments::MomentVector;

/// Relative tolerance of the adaptive quadrature used by
/// [`price_numeric`]; comfortably below the agreement tolerances the
/// closed-form comparisons are held to.
pub const PRICE_QUAD_REL_TOL: f64 = 1e-9;

/// Half-width of the default pricing integration window in units of Σ.
/// φ(12) ≈ 2e−32, so the truncated tail is far below every tolerance in
/// use even after multiplication by polynomially growing corrections.
pub const PRICE_BOUND_SIGMAS: f64 = 12.0;

/// Cumulants `χ_1..χ_M` of a scalar distribution.
pub struct CumulantVector {
    chis: Vec<f64>,
}

impl CumulantVector {
    /// Builds the vector, rejecting empty or non-finite input.
    pub fn new(chis: Vec<f64>) -> Result<Self> {
        if chis.is_empty() || chis.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidCumulants(
                "cumulant list must be non-empty and finite".to_string(),
            ));
        }
        Ok(Self { chis })
    }

    /// Highest available cumulant order `M`.
    pub fn order(&self) -> usize {
        self.chis.len()
    }

    /// The cumulant `χ_m`, 1-based; panics if `m` is 0 or beyond `M`.
    pub fn chi(&self, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.chis.len(), "cumulant order {m} unavailable");
        self.chis[m - 1]
    }

    /// All cumulants in order.
    pub fn as_slice(&self) -> &[f64] {
        &self.chis
    }

    /// A shorter view keeping only `χ_1..χ_m`.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m < 1 || m > self.chis.len() {
            return Err(Error::OutOfRangeOrder { requested: m, available: self.chis.len() });
        }
        Self::new(self.chis[..m].to_vec())
    }

    /// Location `μ = χ₁` and scale `Σ = √χ₂` of the Gaussian backbone;
    /// requires at least two cumulants and `χ₂ > 0`.
    pub fn location_scale(&self) -> Result<(f64, f64)> {
        if self.chis.len() < 2 {
            return Err(Error::InvalidCumulants(format!(
                "need at least two cumulants, got {}",
                self.chis.len()
            )));
        }
        let chi2 = self.chis[1];
        if !(chi2 > 0.0) {
            return Err(Error::InvalidCumulants(format!(
                "second cumulant must be positive, got {chi2}"
            )));
        }
        Ok((self.chis[0], chi2.sqrt()))
    }
}

/// Invokes `f` once per integer partition of `n`, passing the list of
/// `(part, multiplicity)` pairs with every multiplicity ≥ 1.
fn for_each_partition(n: usize, mut f: impl FnMut(&[(usize, usize)])) {
    fn descend(
        part: usize,
        remaining: usize,
        acc: &mut Vec<(usize, usize)>,
        f: &mut impl FnMut(&[(usize, usize)]),
    ) {
        if remaining == 0 {
            f(acc);
            return;
        }
        if part == 0 {
            return;
        }
        for mult in (0..=(remaining / part)).rev() {
            if mult > 0 {
                acc.push((part, mult));
            }
            descend(part - 1, remaining - mult * part, acc, f);
            if mult > 0 {
                acc.pop();
            }
        }
    }
    let mut acc = Vec::new();
    descend(n, n, &mut acc, &mut f);
}

/// Converts raw moments `γ_1..γ_M` to cumulants via
/// `χ_n = n!·Σ_{partitions} (−1)^{r−1}(r−1)!·Π (1/k_m!)(γ_m/m!)^{k_m}`.
pub fn moments_to_cumulants(moments: &MomentVector) -> CumulantVector {
    let m_max = moments.order();
    let mut chis = vec![0.0; m_max];
    for n in 1..=m_max {
        let mut sum = 0.0;
        for_each_partition(n, |parts| {
            let r: usize = parts.iter().map(|&(_, k)| k).sum();
            let sign = if (r - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
            let mut term = sign * factorial(r - 1);
            for &(m, k) in parts {
                term *= (moments.gamma(m) / factorial(m)).powi(k as i32) / factorial(k);
            }
            sum += term;
        });
        chis[n - 1] = factorial(n) * sum;
    }
    CumulantVector { chis }
}

/// Converts cumulants back to raw moments via
/// `γ_n = n!·Σ_{partitions} Π (1/k_m!)(χ_m/m!)^{k_m}` — the inverse of
/// [`moments_to_cumulants`] through the same partition machinery.
pub fn cumulants_to_moments(cumulants: &CumulantVector) -> MomentVector {
    let m_max = cumulants.order();
    let mut gammas = vec![0.0; m_max];
    for n in 1..=m_max {
        let mut sum = 0.0;
        for_each_partition(n, |parts| {
            let mut term = 1.0;
            for &(m, k) in parts {
                term *= (cumulants.chi(m) / factorial(m)).powi(k as i32) / factorial(k);
            }
            sum += term;
        });
        gammas[n - 1] = factorial(n) * sum;
    }
    MomentVector::new(gammas).expect("finite moments from finite cumulants")
}

/// Probabilists' Hermite polynomial `H_n(x)`, by the recursion
/// `H_{n+1} = x·H_n − n·H_{n−1}` from `H_0 = 1`, `H_1 = x`.
pub fn hermite(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let (mut prev, mut cur) = (1.0, x);
    for m in 1..n {
        (prev, cur) = (cur, x * cur - m as f64 * prev);
    }
    cur
}

/// Correction weights `c_j` with `p_n(x) = φ(z)/Σ·(1 + Σ_j c_j H_j(z))`:
/// every partition of `s ≤ n−2` contributes
/// `Σ^{−(s+2r)}·Π (1/k_m!)(χ_{m+2}/(m+2)!)^{k_m}` at `j = s + 2r`.
fn hermite_coefficients(cumulants: &CumulantVector) -> Result<Vec<f64>> {
    let (_, sigma) = cumulants.location_scale()?;
    let n = cumulants.order();
    let mut coef = vec![0.0; 3 * n.saturating_sub(2) + 1];
    for s in 1..=n.saturating_sub(2) {
        for_each_partition(s, |parts| {
            let r: usize = parts.iter().map(|&(_, k)| k).sum();
            let j = s + 2 * r;
            let mut term = sigma.powi(-(j as i32));
            for &(m, k) in parts {
                term *= (cumulants.chi(m + 2) / factorial(m + 2)).powi(k as i32) / factorial(k);
            }
            coef[j] += term;
        });
    }
    Ok(coef)
}

/// Density approximation built from `χ_1..χ_n`, evaluated at `x`. At
/// `n = 2` this is exactly the Gaussian with mean `χ₁` and variance
/// `χ₂`; higher orders add Hermite corrections and may go negative
/// (reported as-is, never clamped).
pub fn edgeworth_density(cumulants: &CumulantVector, x: f64) -> Result<f64> {
    let (mu, sigma) = cumulants.location_scale()?;
    let coef = hermite_coefficients(cumulants)?;
    let z = (x - mu) / sigma;
    let mut series = 1.0;
    for (j, &cj) in coef.iter().enumerate() {
        if cj != 0.0 {
            series += cj * hermite(j, z);
        }
    }
    Ok(norm_pdf(z) / sigma * series)
}

/// Location and size of the density minimum over a uniform scan of
/// `μ ± 6Σ`; a negative minimum flags an unstable expansion order.
pub fn density_minimum(cumulants: &CumulantVector, n_points: usize) -> Result<(f64, f64)> {
    if n_points < 2 {
        return Err(Error::InvalidInput(format!(
            "density scan needs at least 2 points, got {n_points}"
        )));
    }
    let (mu, sigma) = cumulants.location_scale()?;
    let mut best = (f64::NAN, f64::INFINITY);
    for idx in 0..n_points {
        let x = mu - 6.0 * sigma + 12.0 * sigma * idx as f64 / (n_points - 1) as f64;
        let p = edgeworth_density(cumulants, x)?;
        if p < best.1 {
            best = (x, p);
        }
    }
    Ok(best)
}

/// Size ratios `|χ_n| / χ₂^{n/2}` for `n ≥ 3` — the natural
/// dimensionless magnitudes of the correction terms. Ratios well above
/// one signal that the expansion at that order is unreliable.
pub fn cumulant_scale_ratios(cumulants: &CumulantVector) -> Result<Vec<(usize, f64)>> {
    let (_, sigma) = cumulants.location_scale()?;
    Ok((3..=cumulants.order())
        .map(|n| (n, cumulants.chi(n).abs() / sigma.powi(n as i32)))
        .collect())
}

fn check_positive_prices(s0: f64, strike: f64) -> Result<()> {
    if !(s0 > 0.0 && strike > 0.0) {
        return Err(Error::InvalidInput(format!(
            "spot and strike must be positive, got s0 = {s0}, strike = {strike}"
        )));
    }
    Ok(())
}

/// Fully analytic price of a call `(s₀eˣ − K)⁺` against the density
/// expansion: upper-tail Hermite integrals in closed form, no
/// quadrature.
pub fn call_price_closed(s0: f64, strike: f64, cumulants: &CumulantVector) -> Result<f64> {
    check_positive_prices(s0, strike)?;
    let (mu, sigma) = cumulants.location_scale()?;
    let coef = hermite_coefficients(cumulants)?;
    let d = ((strike / s0).ln() - mu) / sigma;
    let pdf_d = norm_pdf(d);
    let exp_sd = (sigma * d).exp();
    // I_j = ∫_d^∞ e^{Σy}φ(y)H_j(y) dy by upward recursion.
    let mut exp_part = (0.5 * sigma * sigma).exp() * norm_cdf(sigma - d);
    let mut plain_part = norm_cdf(-d);
    let mut total = coef_free_sum(s0, mu, strike, exp_part, plain_part);
    for (j, &cj) in coef.iter().enumerate() {
        if j >= 1 {
            let h = hermite(j - 1, d);
            exp_part = exp_sd * pdf_d * h + sigma * exp_part;
            plain_part = pdf_d * h;
            if cj != 0.0 {
                total += cj * coef_free_sum(s0, mu, strike, exp_part, plain_part);
            }
        }
    }
    Ok(total)
}

fn coef_free_sum(s0: f64, mu: f64, strike: f64, exp_part: f64, plain_part: f64) -> f64 {
    s0 * mu.exp() * exp_part - strike * plain_part
}

/// Fully analytic price of a put `(K − s₀eˣ)⁺` against the density
/// expansion — the lower-tail mirror of [`call_price_closed`], not a
/// parity transform.
pub fn put_price_closed(s0: f64, strike: f64, cumulants: &CumulantVector) -> Result<f64> {
    check_positive_prices(s0, strike)?;
    let (mu, sigma) = cumulants.location_scale()?;
    let coef = hermite_coefficients(cumulants)?;
    let d = ((strike / s0).ln() - mu) / sigma;
    let pdf_d = norm_pdf(d);
    let exp_sd = (sigma * d).exp();
    // J_j = ∫_{−∞}^d e^{Σy}φ(y)H_j(y) dy by upward recursion.
    let mut exp_part = (0.5 * sigma * sigma).exp() * norm_cdf(d - sigma);
    let mut plain_part = norm_cdf(d);
    let mut total = strike * plain_part - s0 * mu.exp() * exp_part;
    for (j, &cj) in coef.iter().enumerate() {
        if j >= 1 {
            let h = hermite(j - 1, d);
            exp_part = sigma * exp_part - exp_sd * pdf_d * h;
            plain_part = -pdf_d * h;
            if cj != 0.0 {
                total += cj * (strike * plain_part - s0 * mu.exp() * exp_part);
            }
        }
    }
    Ok(total)
}

/// Integrates `payoff(x)` against the density expansion over `bounds`
/// by adaptive panel quadrature — for payoffs with no closed form, such
/// as power-transformed terminal states.
pub fn price_numeric(
    payoff: impl Fn(f64) -> f64,
    cumulants: &CumulantVector,
    bounds: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!(
            "integration bounds must be a finite non-degenerate interval, got [{lo}, {hi}]"
        )));
    }
    let (mu, sigma) = cumulants.location_scale()?;
    let coef = hermite_coefficients(cumulants)?;
    let density = |x: f64| {
        let z = (x - mu) / sigma;
        let mut series = 1.0;
        for (j, &cj) in coef.iter().enumerate() {
            if cj != 0.0 {
                series += cj * hermite(j, z);
            }
        }
        norm_pdf(z) / sigma * series
    };
    integrate_adaptive(&mut |x| payoff(x) * density(x), lo, hi, PRICE_QUAD_REL_TOL)
}

/// Default integration window `μ ± 12Σ` for [`price_numeric`], with the
/// lower edge raised to `floor` when the state has bounded support. The
/// quadrature nodes are strictly interior, so a payoff defined only
/// above the floor is never evaluated on it.
pub fn default_price_bounds(cumulants: &CumulantVector, floor: Option<f64>) -> Result<(f64, f64)> {
    let (mu, sigma) = cumulants.location_scale()?;
    let mut lo = mu - PRICE_BOUND_SIGMAS * sigma;
    if let Some(f) = floor {
        lo = lo.max(f);
    }
    Ok((lo, mu + PRICE_BOUND_SIGMAS * sigma))
}

/// Zero-rate Black–Scholes call price.
pub fn bs_call_price(s0: f64, strike: f64, vol: f64, t_end: f64) -> f64 {
    let st = vol * t_end.sqrt();
    let d1 = (s0 / strike).ln() / st + 0.5 * st;
    s0 * norm_cdf(d1) - strike * norm_cdf(d1 - st)
}

/// Zero-rate Black–Scholes put price.
pub fn bs_put_price(s0: f64, strike: f64, vol: f64, t_end: f64) -> f64 {
    bs_call_price(s0, strike, vol, t_end) - s0 + strike
}

/// Implied Black–Scholes volatility of a zero-rate call price, by
/// bisection to an absolute vol tolerance of 1e−10. The price must lie
/// strictly inside the no-arbitrage band `(max(s₀−K, 0), s₀)`.
pub fn implied_vol(price: f64, s0: f64, strike: f64, t_end: f64) -> Result<f64> {
    check_positive_prices(s0, strike)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!(
            "maturity must be positive, got {t_end}"
        )));
    }
    let lower = (s0 - strike).max(0.0);
    if !(price > lower && price < s0) {
        return Err(Error::OutOfBounds(format!(
            "call price {price} outside the arbitrage-free band ({lower}, {s0})"
        )));
    }
    let (mut lo, mut hi) = (1e-9, 10.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if bs_call_price(s0, strike, mid, t_end) < price {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Implied Black–Scholes volatility of a zero-rate put price. The
/// Black–Scholes call and put at equal vol differ by exactly `s₀ − K`,
/// so the put inversion reduces to the call inversion of
/// `price + s₀ − K`; bounds are checked on the put scale first.
pub fn implied_vol_put(price: f64, s0: f64, strike: f64, t_end: f64) -> Result<f64> {
    check_positive_prices(s0, strike)?;
    let lower = (strike - s0).max(0.0);
    if !(price > lower && price < strike) {
        return Err(Error::OutOfBounds(format!(
            "put price {price} outside the arbitrage-free band ({lower}, {strike})"
        )));
    }
    implied_vol(price + s0 - strike, s0, strike, t_end)
}
