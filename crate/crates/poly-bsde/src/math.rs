//! Scalar numerical utilities: standard-normal density and distribution
//! functions, exact small factorials and binomials, and adaptive
//! Gauss–Legendre quadrature.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// `1/√(2π)`.
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density `φ(x)`.
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function `N(x)`.
///
/// Computed through the complementary error function, which keeps full
/// double precision in both tails — the pricing identities downstream are
/// verified to tolerances near 1e−10, far beyond what rational
/// approximations of `N` deliver.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `n!` as a float, exact for every `n` where the product is exactly
/// representable and correctly rounded beyond.
pub fn factorial(n: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 2..=n {
        acc *= i as f64;
    }
    acc
}

/// Binomial coefficient `C(n, k)` as a float, exact for the small orders
/// used by the expansion recursions.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `j`-th raw moment of a `Normal(mu, sigma²)` variable, by the recursion
/// `q_j = mu·q_{j−1} + (j−1)·sigma²·q_{j−2}` with `q_0 = 1`.
///
/// Exact in exact arithmetic for every order; used for jump-size moments
/// and for turning Gaussian cumulants back into moments.
pub fn gaussian_raw_moment(mu: f64, sigma: f64, j: usize) -> f64 {
    let var = sigma * sigma;
    let mut prev = 0.0; // q_{-1}, multiplied by (j-1) = 0 at the first step
    let mut cur = 1.0; // q_0
    for n in 1..=j {
        let next = mu * cur + (n - 1) as f64 * var * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Number of abscissas per Gauss–Legendre panel.
const GL_POINTS: usize = 20;

/// Legendre polynomial value and derivative at `x` for order `n`.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0f64;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Nodes and weights of the `GL_POINTS`-point Gauss–Legendre rule on
/// `[-1, 1]`, computed once by Newton iteration from Chebyshev initial
/// guesses.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut rule = Vec::with_capacity(n);
        for i in 0..n {
            let mut x =
                (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_pair(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre_pair(n, x);
            let w = 2.0 / ((1.0 - x * x) * d * d);
            rule.push((x, w));
        }
        rule
    })
}

/// Fixed 20-point Gauss–Legendre estimate of `∫_a^b f`.
pub fn integrate_panel<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for &(x, w) in gauss_legendre() {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Adaptive Gauss–Legendre quadrature of `∫_a^b f` to relative tolerance
/// `rel_tol`.
///
/// Each panel's one-rule estimate is compared against its two-half
/// refinement; panels that disagree are split, to a maximum depth of 40.
/// The tolerance is applied against the accumulated whole-integral scale
/// (with a tiny absolute floor so integrals near zero terminate). Returns
/// [`Error::QuadratureNotConverged`](crate::error::Error::QuadratureNotConverged)
/// if the depth limit is hit before the local estimates agree.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "quadrature bounds must be finite, got [{a}, {b}]"
        )));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "quadrature tolerance must be positive, got {rel_tol}"
        )));
    }
    if a == b {
        return Ok(0.0);
    }

    // Scale for the relative tolerance: the coarse whole-interval estimate,
    // refreshed upward as panels resolve, floored to keep near-zero
    // integrals from demanding unbounded refinement.
    let coarse = integrate_panel(f, a, b).abs();
    let scale = coarse.max(1e-300);

    fn recurse<F: FnMut(f64) -> f64>(
        f: &mut F,
        a: f64,
        b: f64,
        whole: f64,
        tol_abs: f64,
        depth: usize,
    ) -> Result<f64> {
        let mid = 0.5 * (a + b);
        let left = integrate_panel(f, a, mid);
        let right = integrate_panel(f, mid, b);
        let refined = left + right;
        if (refined - whole).abs() <= tol_abs {
            return Ok(refined);
        }
        if depth == 0 {
            return Err(Error::QuadratureNotConverged(format!(
                "panel [{a}, {b}] still disagrees by {:.3e} at the depth limit",
                (refined - whole).abs()
            )));
        }
        let l = recurse(f, a, mid, left, 0.5 * tol_abs, depth - 1)?;
        let r = recurse(f, mid, b, right, 0.5 * tol_abs, depth - 1)?;
        Ok(l + r)
    }

    let whole = integrate_panel(f, a, b);
    // A safety factor below the requested tolerance absorbs the summation of
    // per-panel errors.
    let tol_abs = 0.1 * rel_tol * scale.max(whole.abs());
    recurse(f, a, b, whole, tol_abs, 40)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_functions_match_reference_values() {
        assert!((norm_pdf(0.0) - FRAC_1_SQRT_2PI).abs() < 1e-16);
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        // N(1) and N(-1), reference values to 1e-15.
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        // Deep tail stays accurate in relative terms.
        let tail = norm_cdf(-8.0);
        assert!((tail - 6.220_960_574_271_78e-16).abs() < 1e-21, "tail {tail}");
        // Symmetry.
        for x in [-3.0, -0.7, 0.3, 2.5] {
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn factorials_and_binomials_are_exact_small() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(1), 1.0);
        assert_eq!(factorial(5), 120.0);
        assert_eq!(factorial(10), 3_628_800.0);
        assert_eq!(binomial(0, 0), 1.0);
        assert_eq!(binomial(10, 3), 120.0);
        assert_eq!(binomial(20, 10), 184_756.0);
        assert_eq!(binomial(5, 7), 0.0);
        // Pascal identity over a block.
        for n in 1..18usize {
            for k in 1..n {
                assert_eq!(binomial(n, k), binomial(n - 1, k - 1) + binomial(n - 1, k));
            }
        }
    }

    #[test]
    fn gaussian_raw_moments_match_closed_forms_and_quadrature() {
        let (mu, sigma) = (-0.02f64, 0.03f64);
        assert_eq!(gaussian_raw_moment(mu, sigma, 0), 1.0);
        assert!((gaussian_raw_moment(mu, sigma, 1) - mu).abs() < 1e-18);
        assert!((gaussian_raw_moment(mu, sigma, 2) - (mu * mu + sigma * sigma)).abs() < 1e-18);
        assert!(
            (gaussian_raw_moment(mu, sigma, 3) - (mu.powi(3) + 3.0 * mu * sigma * sigma)).abs()
                < 1e-18
        );
        let q4 = mu.powi(4) + 6.0 * mu * mu * sigma * sigma + 3.0 * sigma.powi(4);
        assert!((gaussian_raw_moment(mu, sigma, 4) - q4).abs() < 1e-18);

        // Independent check at a higher order via direct quadrature.
        let (mu, sigma) = (0.1f64, 0.2f64);
        let numeric = integrate_adaptive(
            &mut |z: f64| z.powi(6) * norm_pdf((z - mu) / sigma) / sigma,
            mu - 12.0 * sigma,
            mu + 12.0 * sigma,
            1e-12,
        )
        .unwrap();
        let exact = gaussian_raw_moment(mu, sigma, 6);
        assert!(
            (numeric - exact).abs() < 1e-12 * exact.abs(),
            "quadrature {numeric} vs recursion {exact}"
        );
    }

    #[test]
    fn panel_rule_is_exact_on_high_degree_polynomials() {
        // A 20-point rule integrates degree ≤ 39 exactly.
        let mut f = |x: f64| x.powi(12) - 3.0 * x.powi(7) + 2.0 * x - 5.0;
        let got = integrate_panel(&mut f, -1.0, 2.0);
        // ∫ x^12 = x^13/13, ∫ x^7 = x^8/8, over [-1, 2].
        let exact = (2.0f64.powi(13) + 1.0) / 13.0 - 3.0 * (2.0f64.powi(8) - 1.0) / 8.0
            + (4.0 - 1.0)
            - 5.0 * 3.0;
        assert!((got - exact).abs() < 1e-11 * exact.abs().max(1.0));
    }

    #[test]
    fn adaptive_quadrature_meets_tolerance_on_smooth_and_kinked_integrands() {
        // Smooth: ∫_0^1 e^x = e − 1.
        let got = integrate_adaptive(&mut |x: f64| x.exp(), 0.0, 1.0, 1e-10).unwrap();
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-10);

        // Gaussian over a wide span integrates to 1.
        let got =
            integrate_adaptive(&mut |x: f64| norm_pdf(x), -12.0, 12.0, 1e-10).unwrap();
        assert!((got - 1.0).abs() < 1e-10);

        // Kinked: ∫_-1^1 |x| = 1; the kink forces real subdivision.
        let got = integrate_adaptive(&mut |x: f64| x.abs(), -1.0, 1.0, 1e-9).unwrap();
        assert!((got - 1.0).abs() < 1e-9);

        // Call-style kinked payoff against a Gaussian weight:
        // ∫ (e^x − 1)^+ φ(x) dx = e^{1/2} N(1) − N(0).
        let exact = (0.5f64).exp() * norm_cdf(1.0) - 0.5;
        let got = integrate_adaptive(
            &mut |x: f64| (x.exp() - 1.0).max(0.0) * norm_pdf(x),
            -12.0,
            12.0,
            1e-9,
        )
        .unwrap();
        assert!(
            (got - exact).abs() < 1e-9 * exact,
            "got {got}, exact {exact}"
        );
    }

    #[test]
    fn adaptive_quadrature_rejects_bad_bounds() {
        assert!(integrate_adaptive(&mut |x: f64| x, 0.0, f64::INFINITY, 1e-8).is_err());
        assert!(integrate_adaptive(&mut |x: f64| x, 0.0, 1.0, 0.0).is_err());
        assert_eq!(
            integrate_adaptive(&mut |x: f64| x, 2.0, 2.0, 1e-8).unwrap(),
            0.0
        );
    }
}
