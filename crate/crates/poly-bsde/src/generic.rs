//! Order-2 expansion for a single scalar forward factor with jumps.
//!
//! This module is the small, auditable reference form of the expansion
//! scheme: one spatial factor `x`, a driver `f(t, x, v, z, u)` depending on
//! time, state, value, control, and the jump-compensation integral, with
//! the continuous quadratic covariation restricted to a quadratic of the
//! state, `d⟨X^c⟩ = (σ₂(t)x² + σ₁(t)x + σ₀(t)) dt`, and jump sizes entering
//! only through their raw moments `q_j(t)`.
//!
//! Writing `V = Σ_n V[n]` with `V[n](t, x) = Σ_{m≤n} x^m/m! · v[n]_m(t)`,
//! the coefficients solve, in dependency order (`∂f` below always evaluated
//! at the expansion point `(x, z, u) = (0, 0, 0)` and at the already-solved
//! zeroth-order value `v[0]_0(t)`):
//!
//! ```text
//! v̇[0]_0 = f(t, 0, v[0]_0, 0, 0)                              v[0]_0(T) = H(0)
//! v̇[1]_1 = ∂ₓf + ∂ᵥf·v[1]_1                                   v[1]_1(T) = ∂ₓH(0)
//! v̇[1]_0 = ∂ᵥf·v[1]_0 + (∂_zf + ∂_uf·q₁)·v[1]_1               v[1]_0(T) = 0
//! v̇[2]_2 = (∂ᵥf − σ₂)·v[2]_2 + ∂ₓₓf + ∂ᵥᵥf·(v[1]_1)² + 2∂ₓᵥf·v[1]_1
//!                                                              v[2]_2(T) = ∂ₓ²H(0)
//! v̇[2]_1 = ∂ᵥf·v[2]_1 + (∂_zf + ∂_uf·q₁ − σ₁/2)·v[2]_2
//!        + (∂ᵥ_zf + ∂ᵥ_uf·q₁)·(v[1]_1)² + ∂ᵥᵥf·v[1]_1·v[1]_0
//!        + (∂ₓ_zf + ∂ₓ_uf·q₁)·v[1]_1 + ∂ₓᵥf·v[1]_0             v[2]_1(T) = 0
//! v̇[2]_0 = ∂ᵥf·v[2]_0 + ½(∂_uf·q₂ − σ₀)·v[2]_2 + (∂_zf + ∂_uf·q₁)·v[2]_1
//!        + ½∂ᵥᵥf·(v[1]_0)² + ½(∂_zzf + ∂_uuf·q₁² + 2∂_zuf·q₁)·(v[1]_1)²
//!        + (∂ᵥ_zf + ∂ᵥ_uf·q₁)·v[1]_1·v[1]_0                    v[2]_0(T) = 0
//! ```
//!
//! Only the zeroth equation is nonlinear; the six equations are integrated
//! jointly by the backward Runge–Kutta scheme, which keeps the zeroth
//! component bit-identical to a standalone [`solve_zeroth`] run while
//! giving the linear equations fourth-order access to `v[0]_0` at the
//! stage midpoints.
//!
//! Jump moments may be time-dependent but not state-dependent; higher
//! orders and a second factor live in the model-specific solver modules.

use crate::error::{Error, Result};
use crate::grid::{Curve, SampledFunction, TimeGrid};
use crate::ode::{rk4_backward, DEFAULT_MAGNITUDE_CAP};
use crate::table::{CoefficientTable, TerminalPattern};

/// Driver `f(t, x, v, z, u)` of the scalar backward equation, supplied as
/// its value and partial derivatives at the expansion point
/// `(x, z, u) = (0, 0, 0)` as callables of `(t, v⁰)`, where `v⁰` is the
/// zeroth-order value at time `t`.
///
/// Every derivative defaults to zero, so a driver implementation states
/// exactly the sensitivities it actually has.
pub trait GenericDriver {
    /// `f(t, 0, v, 0, 0)` — the only place the full driver value is needed.
    fn value(&self, t: f64, v0: f64) -> f64;
    /// `∂ₓf`.
    fn dx(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ᵥf`.
    fn dv(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂_z f`.
    fn dz(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂_u f`.
    fn du(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ₓ²f`.
    fn dxx(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ᵥ²f`.
    fn dvv(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂_z²f`.
    fn dzz(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂_u²f`.
    fn duu(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ₓ∂ᵥf`.
    fn dxv(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ₓ∂_zf`.
    fn dxz(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ₓ∂_uf`.
    fn dxu(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ᵥ∂_zf`.
    fn dvz(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂ᵥ∂_uf`.
    fn dvu(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
    /// `∂_z∂_uf`.
    fn dzu(&self, _t: f64, _v0: f64) -> f64 {
        0.0
    }
}

/// Quadratic-of-state continuous covariation,
/// `d⟨X^c⟩ = (σ₂(t)x² + σ₁(t)x + σ₀(t)) dt`, with the state range on which
/// non-negativity of the quadratic is enforced.
pub struct QuadCovSpec {
    sigma2: Curve,
    sigma1: Curve,
    sigma0: Curve,
    x_range: (f64, f64),
}

impl QuadCovSpec {
    /// Wraps the three coefficient curves and the state range.
    pub fn new(sigma2: Curve, sigma1: Curve, sigma0: Curve, x_range: (f64, f64)) -> Result<Self> {
        if !(x_range.0.is_finite() && x_range.1.is_finite() && x_range.0 < x_range.1) {
            return Err(Error::InvalidInput(format!(
                "state range must be a finite interval, got ({}, {})",
                x_range.0, x_range.1
            )));
        }
        sigma2.validate("sigma2")?;
        sigma1.validate("sigma1")?;
        sigma0.validate("sigma0")?;
        Ok(Self {
            sigma2,
            sigma1,
            sigma0,
            x_range,
        })
    }

    /// Constant-in-time coefficients.
    pub fn constant(sigma2: f64, sigma1: f64, sigma0: f64, x_range: (f64, f64)) -> Result<Self> {
        Self::new(
            Curve::Const(sigma2),
            Curve::Const(sigma1),
            Curve::Const(sigma0),
            x_range,
        )
    }

    /// The three coefficients at time `t`.
    pub fn coeffs_at(&self, t: f64) -> (f64, f64, f64) {
        (
            self.sigma2.value(t),
            self.sigma1.value(t),
            self.sigma0.value(t),
        )
    }

    /// Checks `σ₂x² + σ₁x + σ₀ ≥ 0` on the state range at every node of
    /// `grid`, probing the range endpoints and (when interior) the vertex
    /// of the quadratic.
    pub fn validate_on(&self, grid: TimeGrid) -> Result<()> {
        let (lo, hi) = self.x_range;
        for node in 0..grid.n_nodes() {
            let t = grid.node(node);
            let (s2, s1, s0) = self.coeffs_at(t);
            let q = |x: f64| s2 * x * x + s1 * x + s0;
            let mut probes = vec![lo, hi];
            if s2 != 0.0 {
                let vertex = -s1 / (2.0 * s2);
                if vertex > lo && vertex < hi {
                    probes.push(vertex);
                }
            }
            for x in probes {
                if q(x) < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "covariation quadratic is negative at t = {t}, x = {x}: {}",
                        q(x)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Raw moments `q_j(t)` of the jump-size distribution, deterministic in
/// time. `q_0` must be 1 (the jump measure is a probability measure).
pub struct JumpMomentSpec {
    q: Box<dyn Fn(f64, usize) -> f64 + Send + Sync>,
}

impl JumpMomentSpec {
    /// Arbitrary deterministic moment function `q(t, j)`.
    pub fn from_fn<F>(q: F) -> Self
    where
        F: Fn(f64, usize) -> f64 + Send + Sync + 'static,
    {
        Self { q: Box::new(q) }
    }

    /// Degenerate jumps of size zero: `q_0 = 1`, all higher moments 0.
    pub fn none() -> Self {
        Self::from_fn(|_, j| if j == 0 { 1.0 } else { 0.0 })
    }

    /// Moments of `Normal(mu, sigma²)` jump sizes, time-constant.
    pub fn gaussian(mu: f64, sigma: f64) -> Self {
        Self::from_fn(move |_, j| crate::math::gaussian_raw_moment(mu, sigma, j))
    }

    /// The `j`-th raw moment at time `t`.
    pub fn moment(&self, t: f64, j: usize) -> f64 {
        (self.q)(t, j)
    }

    /// Checks `q(t, 0) = 1` at every node of `grid`.
    pub fn validate_on(&self, grid: TimeGrid) -> Result<()> {
        for node in 0..grid.n_nodes() {
            let t = grid.node(node);
            let q0 = self.moment(t, 0);
            if (q0 - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "jump moment q(t, 0) must be 1, got {q0} at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Labels of the six live entries, in state-vector order.
const ENTRY_LABELS: [(usize, usize); 6] = [(0, 0), (1, 1), (1, 0), (2, 2), (2, 1), (2, 0)];

/// Solves the scalar expansion to order 2 and returns a table of maximum
/// order 2 whose live entries are `(n, i, 0)`; the mixed `(n, i, k>0)`
/// entries of the two-factor layout are identically zero.
///
/// `h_derivs` are the payoff data `(H(0), ∂ₓH(0), ∂ₓ²H(0))`.
pub fn solve_generic(
    driver: &dyn GenericDriver,
    quad: &QuadCovSpec,
    jumps: &JumpMomentSpec,
    h_derivs: (f64, f64, f64),
    grid: TimeGrid,
) -> Result<CoefficientTable> {
    let (h0, h1, h2) = h_derivs;
    if !(h0.is_finite() && h1.is_finite() && h2.is_finite()) {
        return Err(Error::InvalidInput(
            "terminal derivatives must be finite".to_string(),
        ));
    }
    quad.validate_on(grid)?;
    jumps.validate_on(grid)?;

    // State vector [v[0]_0, v[1]_1, v[1]_0, v[2]_2, v[2]_1, v[2]_0].
    let terminal = [h0, h1, 0.0, h2, 0.0, 0.0];
    let rhs = |t: f64, s: &[f64], out: &mut [f64]| {
        let v0 = s[0];
        let (s2, s1, s0) = quad.coeffs_at(t);
        let q1 = jumps.moment(t, 1);
        let q2 = jumps.moment(t, 2);
        let dx = driver.dx(t, v0);
        let dv = driver.dv(t, v0);
        let dz = driver.dz(t, v0);
        let du = driver.du(t, v0);
        let v11 = s[1];
        let v01 = s[2];
        let v22 = s[3];
        let v12 = s[4];
        let v02 = s[5];
        out[0] = driver.value(t, v0);
        out[1] = dx + dv * v11;
        out[2] = dv * v01 + (dz + du * q1) * v11;
        out[3] = (dv - s2) * v22
            + driver.dxx(t, v0)
            + driver.dvv(t, v0) * v11 * v11
            + 2.0 * driver.dxv(t, v0) * v11;
        out[4] = dv * v12
            + (dz + du * q1 - 0.5 * s1) * v22
            + (driver.dvz(t, v0) + driver.dvu(t, v0) * q1) * v11 * v11
            + driver.dvv(t, v0) * v11 * v01
            + (driver.dxz(t, v0) + driver.dxu(t, v0) * q1) * v11
            + driver.dxv(t, v0) * v01;
        out[5] = dv * v02
            + 0.5 * (du * q2 - s0) * v22
            + (dz + du * q1) * v12
            + 0.5 * driver.dvv(t, v0) * v01 * v01
            + 0.5
                * (driver.dzz(t, v0) + driver.duu(t, v0) * q1 * q1
                    + 2.0 * driver.dzu(t, v0) * q1)
                * v11
                * v11
            + (driver.dvz(t, v0) + driver.dvu(t, v0) * q1) * v11 * v01;
    };

    let columns =
        rk4_backward(rhs, &terminal, grid, DEFAULT_MAGNITUDE_CAP).map_err(|e| match e {
            Error::DivergedSolve {
                time, component, ..
            } => {
                let (n, m) = ENTRY_LABELS[component];
                Error::DivergedSolve {
                    time,
                    component,
                    label: format!("coefficient ({n}, {m})"),
                }
            }
            other => other,
        })?;

    // Scatter the six solved columns into the full two-factor layout.
    let zero = SampledFunction::constant(grid, 0.0)?;
    let mut entries = vec![zero; CoefficientTable::total_entries(2)];
    for (state_idx, &(n, m)) in ENTRY_LABELS.iter().enumerate() {
        let idx = CoefficientTable::entry_index(n, m, 0).expect("diagonal triple is valid");
        entries[idx] = columns[state_idx].clone();
    }
    CoefficientTable::from_entries(2, grid, entries, TerminalPattern::XDiagonal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::solve_zeroth;
    use crate::table::TruncationOrder;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Driver built from a closed-form `f(t, x, v, z, u)` closure with all
    /// derivatives taken by central finite differences — the independent
    /// cross-check implementation, never used outside tests.
    struct FdDriver<F: Fn(f64, f64, f64, f64, f64) -> f64> {
        f: F,
        step: f64,
    }

    impl<F: Fn(f64, f64, f64, f64, f64) -> f64> FdDriver<F> {
        fn first(&self, t: f64, v0: f64, arg: usize) -> f64 {
            let h = self.step;
            let mut lo = [0.0, v0, 0.0, 0.0];
            let mut hi = lo;
            lo[arg] -= h;
            hi[arg] += h;
            ((self.f)(t, hi[0], hi[1], hi[2], hi[3]) - (self.f)(t, lo[0], lo[1], lo[2], lo[3]))
                / (2.0 * h)
        }

        fn second(&self, t: f64, v0: f64, a: usize, b: usize) -> f64 {
            let h = self.step;
            let base = [0.0, v0, 0.0, 0.0];
            if a == b {
                let mut lo = base;
                let mut hi = base;
                lo[a] -= h;
                hi[a] += h;
                ((self.f)(t, hi[0], hi[1], hi[2], hi[3])
                    + (self.f)(t, lo[0], lo[1], lo[2], lo[3])
                    - 2.0 * (self.f)(t, base[0], base[1], base[2], base[3]))
                    / (h * h)
            } else {
                let mut pp = base;
                let mut pm = base;
                let mut mp = base;
                let mut mm = base;
                pp[a] += h;
                pp[b] += h;
                pm[a] += h;
                pm[b] -= h;
                mp[a] -= h;
                mp[b] += h;
                mm[a] -= h;
                mm[b] -= h;
                ((self.f)(t, pp[0], pp[1], pp[2], pp[3])
                    - (self.f)(t, pm[0], pm[1], pm[2], pm[3])
                    - (self.f)(t, mp[0], mp[1], mp[2], mp[3])
                    + (self.f)(t, mm[0], mm[1], mm[2], mm[3]))
                    / (4.0 * h * h)
            }
        }
    }

    impl<F: Fn(f64, f64, f64, f64, f64) -> f64> GenericDriver for FdDriver<F> {
        fn value(&self, t: f64, v0: f64) -> f64 {
            (self.f)(t, 0.0, v0, 0.0, 0.0)
        }
        fn dx(&self, t: f64, v0: f64) -> f64 {
            self.first(t, v0, 0)
        }
        fn dv(&self, t: f64, v0: f64) -> f64 {
            self.first(t, v0, 1)
        }
        fn dz(&self, t: f64, v0: f64) -> f64 {
            self.first(t, v0, 2)
        }
        fn du(&self, t: f64, v0: f64) -> f64 {
            self.first(t, v0, 3)
        }
        fn dxx(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 0, 0)
        }
        fn dvv(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 1, 1)
        }
        fn dzz(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 2, 2)
        }
        fn duu(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 3, 3)
        }
        fn dxv(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 0, 1)
        }
        fn dxz(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 0, 2)
        }
        fn dxu(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 0, 3)
        }
        fn dvz(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 1, 2)
        }
        fn dvu(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 1, 3)
        }
        fn dzu(&self, t: f64, v0: f64) -> f64 {
            self.second(t, v0, 2, 3)
        }
    }

    struct ZeroDriver;
    impl GenericDriver for ZeroDriver {
        fn value(&self, _t: f64, _v0: f64) -> f64 {
            0.0
        }
    }

    /// `f = c·z`.
    struct LinearControlDriver {
        c: f64,
    }
    impl GenericDriver for LinearControlDriver {
        fn value(&self, _t: f64, _v0: f64) -> f64 {
            0.0
        }
        fn dz(&self, _t: f64, _v0: f64) -> f64 {
            self.c
        }
    }

    fn grid100() -> TimeGrid {
        TimeGrid::new(1.0, 100).unwrap()
    }

    fn diffusion_quad(var: f64) -> QuadCovSpec {
        QuadCovSpec::constant(0.0, 0.0, var, (-1.0, 1.0)).unwrap()
    }

    #[test]
    fn identity_payoff_with_zero_driver_is_the_state_itself() {
        let grid = grid100();
        let table = solve_generic(
            &ZeroDriver,
            &diffusion_quad(0.04),
            &JumpMomentSpec::none(),
            (0.0, 1.0, 0.0),
            grid,
        )
        .unwrap();
        for node in 0..grid.n_nodes() {
            assert_eq!(table.value_at_node(1, 1, 0, node), 1.0);
            for &(n, i) in &[(0usize, 0usize), (1, 0), (2, 2), (2, 1), (2, 0)] {
                assert_eq!(table.value_at_node(n, i, 0, node), 0.0, "entry ({n}, {i})");
            }
        }
    }

    #[test]
    fn control_linear_driver_shifts_the_first_order_constant() {
        // f = c·z with identity payoff: the slope coefficient stays 1 and
        // the first-order constant is −c(T−t).
        let c = 0.8;
        let grid = grid100();
        let table = solve_generic(
            &LinearControlDriver { c },
            &diffusion_quad(0.04),
            &JumpMomentSpec::none(),
            (0.0, 1.0, 0.0),
            grid,
        )
        .unwrap();
        for node in 0..grid.n_nodes() {
            let t = grid.node(node);
            assert_eq!(table.value_at_node(1, 1, 0, node), 1.0);
            let expected = -c * (1.0 - t);
            assert!(
                (table.value_at_node(1, 0, 0, node) - expected).abs() < 1e-12,
                "node {node}"
            );
        }
    }

    #[test]
    fn value_linear_driver_matches_the_exponential() {
        // f = −v with constant payoff 1: v[0]_0(t) = e^{T−t}.
        struct NegValue;
        impl GenericDriver for NegValue {
            fn value(&self, _t: f64, v0: f64) -> f64 {
                -v0
            }
            fn dv(&self, _t: f64, _v0: f64) -> f64 {
                -1.0
            }
        }
        let grid = grid100();
        let table = solve_generic(
            &NegValue,
            &diffusion_quad(0.04),
            &JumpMomentSpec::none(),
            (1.0, 0.0, 0.0),
            grid,
        )
        .unwrap();
        for node in 0..grid.n_nodes() {
            let t = grid.node(node);
            let v = table.value_at_node(0, 0, 0, node);
            assert!(((v - (1.0 - t).exp()) / (1.0 - t).exp()).abs() < 1e-8);
        }
        // The order-1 constant solves v̇ = −v from 0, so stays 0; order-2
        // likewise.
        for node in 0..grid.n_nodes() {
            assert_eq!(table.value_at_node(1, 0, 0, node), 0.0);
            assert_eq!(table.value_at_node(2, 0, 0, node), 0.0);
        }
    }

    #[test]
    fn quadratic_payoff_pure_diffusion_closed_form() {
        // f ≡ 0, d⟨X⟩ = σ₀ dt, H = x²/2: curvature stays 1 and the
        // constant term carries the accumulated variance σ₀(T−t)/2.
        let var = 0.09;
        let grid = grid100();
        let table = solve_generic(
            &ZeroDriver,
            &diffusion_quad(var),
            &JumpMomentSpec::none(),
            (0.0, 0.0, 1.0),
            grid,
        )
        .unwrap();
        for node in 0..grid.n_nodes() {
            let t = grid.node(node);
            assert_eq!(table.value_at_node(2, 2, 0, node), 1.0);
            let expected = var * (1.0 - t) / 2.0;
            assert!((table.value_at_node(2, 0, 0, node) - expected).abs() < 1e-12);
            assert_eq!(table.value_at_node(2, 1, 0, node), 0.0);
        }
    }

    #[test]
    fn zeroth_column_is_bit_identical_to_the_scalar_solver() {
        // Joint integration must not perturb the nonlinear zeroth-order
        // solve in any bit: its stage arithmetic is self-contained.
        struct Riccatish;
        impl GenericDriver for Riccatish {
            fn value(&self, t: f64, v0: f64) -> f64 {
                -v0 * v0 + (1.3 * t).sin()
            }
            fn dv(&self, t: f64, v0: f64) -> f64 {
                let _ = t;
                -2.0 * v0
            }
            fn dx(&self, _t: f64, _v0: f64) -> f64 {
                0.7
            }
        }
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let table = solve_generic(
            &Riccatish,
            &diffusion_quad(0.04),
            &JumpMomentSpec::none(),
            (0.5, 1.0, 0.0),
            grid,
        )
        .unwrap();
        let scalar = solve_zeroth(
            |t, v| Riccatish.value(t, v),
            0.5,
            grid,
            crate::ode::DEFAULT_MAGNITUDE_CAP,
        )
        .unwrap();
        for node in 0..grid.n_nodes() {
            assert_eq!(
                table.value_at_node(0, 0, 0, node),
                scalar.value_at_node(node),
                "node {node}"
            );
        }
    }

    #[test]
    fn linear_payoff_without_second_derivatives_has_no_second_order() {
        // First-order-only driver, no jumps, linear payoff: every order-2
        // entry is exactly zero — the order-2 system is homogeneous with
        // zero terminal data.
        struct FirstOrderOnly;
        impl GenericDriver for FirstOrderOnly {
            fn value(&self, _t: f64, v0: f64) -> f64 {
                0.4 * v0 + 0.1
            }
            fn dx(&self, _t: f64, _v0: f64) -> f64 {
                -0.2
            }
            fn dv(&self, _t: f64, _v0: f64) -> f64 {
                0.4
            }
            fn dz(&self, _t: f64, _v0: f64) -> f64 {
                0.6
            }
        }
        let grid = grid100();
        let table = solve_generic(
            &FirstOrderOnly,
            &QuadCovSpec::constant(0.2, 0.05, 0.1, (-0.4, 0.4)).unwrap(),
            &JumpMomentSpec::none(),
            (0.3, -1.2, 0.0),
            grid,
        )
        .unwrap();
        for node in 0..grid.n_nodes() {
            for i in 0..=2 {
                assert_eq!(table.value_at_node(2, i, 0, node), 0.0, "entry (2, {i})");
            }
        }
    }

    #[test]
    fn analytic_and_finite_difference_derivatives_agree() {
        // A driver exercising every first and second derivative, solved
        // twice: once with hand-written sensitivities, once with the
        // finite-difference fallback. The tables must agree closely.
        let f = |t: f64, x: f64, v: f64, z: f64, u: f64| {
            (x + 2.0 * v).sin()
                + z * (-v).exp()
                + u * (1.0 + x)
                + 0.5 * u * u
                + 0.5 * t * z * z
                + 3.0 * x * z
                + 2.0 * v * u
                + 5.0 * z * u
        };
        struct Analytic;
        impl GenericDriver for Analytic {
            fn value(&self, _t: f64, v0: f64) -> f64 {
                (2.0 * v0).sin()
            }
            fn dx(&self, _t: f64, v0: f64) -> f64 {
                (2.0 * v0).cos()
            }
            fn dv(&self, _t: f64, v0: f64) -> f64 {
                2.0 * (2.0 * v0).cos()
            }
            fn dz(&self, _t: f64, v0: f64) -> f64 {
                (-v0).exp()
            }
            fn du(&self, _t: f64, v0: f64) -> f64 {
                1.0 + 2.0 * v0
            }
            fn dxx(&self, _t: f64, v0: f64) -> f64 {
                -(2.0 * v0).sin()
            }
            fn dvv(&self, _t: f64, v0: f64) -> f64 {
                -4.0 * (2.0 * v0).sin()
            }
            fn dzz(&self, t: f64, _v0: f64) -> f64 {
                t
            }
            fn duu(&self, _t: f64, _v0: f64) -> f64 {
                1.0
            }
            fn dxv(&self, _t: f64, v0: f64) -> f64 {
                -2.0 * (2.0 * v0).sin()
            }
            fn dxz(&self, _t: f64, _v0: f64) -> f64 {
                3.0
            }
            fn dxu(&self, _t: f64, _v0: f64) -> f64 {
                1.0
            }
            fn dvz(&self, _t: f64, v0: f64) -> f64 {
                -(-v0).exp()
            }
            fn dvu(&self, _t: f64, _v0: f64) -> f64 {
                2.0
            }
            fn dzu(&self, _t: f64, _v0: f64) -> f64 {
                5.0
            }
        }
        let grid = grid100();
        let quad = QuadCovSpec::constant(0.3, 0.1, 0.2, (-0.5, 0.5)).unwrap();
        let jumps = JumpMomentSpec::gaussian(0.1, 0.2);
        let h = (0.4, -0.7, 1.3);
        let exact = solve_generic(&Analytic, &quad, &jumps, h, grid).unwrap();
        let fd = FdDriver { f, step: 1e-4 };
        let approx = solve_generic(&fd, &quad, &jumps, h, grid).unwrap();
        for node in 0..grid.n_nodes() {
            for &(n, m) in &ENTRY_LABELS {
                let a = exact.value_at_node(n, m, 0, node);
                let b = approx.value_at_node(n, m, 0, node);
                assert!(
                    (a - b).abs() <= 1e-6 * a.abs().max(1.0),
                    "entry ({n}, {m}) node {node}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn covariation_quadratic_must_be_nonnegative_on_the_range() {
        // Plainly negative constant term.
        assert!(QuadCovSpec::constant(0.0, 0.0, -0.1, (-1.0, 1.0))
            .unwrap()
            .validate_on(grid100())
            .is_err());
        // Negative only at the interior vertex — endpoints are fine.
        let dipped = QuadCovSpec::constant(1.0, 0.0, -0.01, (-1.0, 1.0)).unwrap();
        assert!(dipped.validate_on(grid100()).is_err());
        // Same quadratic on a range excluding the vertex passes.
        let shifted = QuadCovSpec::constant(1.0, 0.0, -0.01, (0.5, 1.0)).unwrap();
        assert!(shifted.validate_on(grid100()).is_ok());
    }

    #[test]
    fn jump_moments_must_normalize() {
        let bad = JumpMomentSpec::from_fn(|_, j| if j == 0 { 0.9 } else { 0.0 });
        assert!(bad.validate_on(grid100()).is_err());
        assert!(JumpMomentSpec::gaussian(-0.02, 0.03)
            .validate_on(grid100())
            .is_ok());
    }

    #[test]
    fn order_two_residual_is_centered_for_a_quadratic_payoff() {
        // Forward model: X Brownian with variance rate σ₀, driver c·z,
        // payoff x²/2. The order-2 expansion is exact here, so the
        // path-wise residual of the discretized value process carries only
        // Euler noise: its mean must vanish within 3 standard errors.
        // (Left-node driver accumulation has an O(h) bias of ½c²hT, so c is
        // kept small enough that the bias sits well inside the noise band.)
        let c = 0.05;
        let var = 0.04f64;
        let sd = var.sqrt();
        let t_end = 1.0;
        let n_steps = 200;
        let grid = TimeGrid::new(t_end, n_steps).unwrap();
        let table = solve_generic(
            &LinearControlDriver { c },
            &diffusion_quad(var),
            &JumpMomentSpec::none(),
            (0.0, 0.0, 1.0),
            grid,
        )
        .unwrap();

        let n_paths = 8000;
        let h = t_end / n_steps as f64;
        let order = TruncationOrder(2);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..n_paths {
            let mut x = 0.0f64;
            let mut acc = table.evaluate_value(order, 0.0, 0.0, 0.0).unwrap();
            for step in 0..n_steps {
                let t = grid.node(step);
                let (z, _) = table.evaluate_controls(order, t, x, 0.0).unwrap();
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                let dx = sd * h.sqrt() * g;
                // Driver f = c·z along the path, then the control term.
                acc += c * z * h + z * dx;
                x += dx;
            }
            let residual = x * x / 2.0 - acc;
            sum += residual;
            sum_sq += residual * residual;
        }
        let mean = sum / n_paths as f64;
        let var_hat = (sum_sq - sum * sum / n_paths as f64) / (n_paths as f64 - 1.0);
        let stderr = (var_hat / n_paths as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * stderr,
            "residual mean {mean} exceeds 3 × stderr {stderr}"
        );
    }
}
