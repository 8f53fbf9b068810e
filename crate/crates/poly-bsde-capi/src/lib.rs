//! C interface to the polynomial expansion solver.
//!
//! The underlying library prices claims on a log forward price `x` driven
//! by a mean-reverting volatility factor `y`. The value function is
//! expanded as a power series
//!
//! ```text
//! V(t, x, y) = sum_n eps^n V[n](t, x, y),
//! ```
//!
//! where each correction `V[n]` is a polynomial in `(x, y)` whose
//! time-dependent coefficients solve a triangular system of linear ODEs
//! backward from the terminal condition. This crate exposes the solvers
//! over a plain C ABI:
//!
//! * every fallible entry point returns a [`PbStatus`]; `PB_STATUS_OK`
//!   is zero and the only success code,
//! * solved coefficient tables live behind an opaque [`PbTable`] handle
//!   released with [`pb_table_free`],
//! * the message for the most recent failure on the calling thread is
//!   readable through [`pb_last_error_message`],
//! * panics never unwind across the boundary; they are caught and
//!   reported as `PB_STATUS_INTERNAL`.
//!
//! Handles are immutable after construction, so a single `PbTable` may be
//! queried from many threads concurrently; the caller must only ensure it
//! is not freed while still in use. The generated header is written to
//! `include/poly_bsde.h` by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use poly_bsde::heston::{self, GaussianJump, IntensityPoly};
use poly_bsde::sabr;
use poly_bsde::table::{CoefficientTable, TerminalSpec, TruncationOrder};
use poly_bsde::utility::{self, LiabilitySpec, ThetaSpec};
use poly_bsde::{Curve, Error, TimeGrid};

/// Outcome of a C API call. Zero means success; every other value is a
/// failure and leaves a human-readable explanation in
/// [`pb_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    /// The call succeeded and all output parameters are filled.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments were rejected before or during evaluation: parameters
    /// outside their admissible ranges, a truncation order above the
    /// table maximum, or a query time outside the solved span.
    InvalidInput = 2,
    /// The backward integration produced a non-finite or capped value;
    /// typically the expansion does not converge for these parameters.
    Diverged = 3,
    /// An internal least-squares system was numerically singular.
    RankDeficient = 4,
    /// A panic was caught at the boundary; this indicates a bug in the
    /// library rather than bad input.
    Internal = 5,
}

/// Opaque handle to a solved coefficient table: every polynomial
/// coefficient of every expansion order on every time node. Created by
/// the `pb_solve_*` functions and released with [`pb_table_free`].
pub struct PbTable {
    table: CoefficientTable,
}

/// Flat-volatility parameters of the jump model with a state-dependent
/// jump intensity.
///
/// The forward dynamics are, with `sig(y) = sigma * sqrt(y + 1)`,
///
/// ```text
/// dx = -(sig(y)^2 / 2 + lambda(y) * beta) dt + sig(y) dW + jumps,
/// dy = -kappa * y dt + alpha * sqrt(y + 1) dB,   d<W, B> = rho dt,
/// ```
///
/// with jump sizes `N(jump_mu, jump_sigma^2)` arriving at rate
/// `lambda(y) = max(0, sum_j intensity_coeffs[j] * y^j)` and `beta` the
/// compensator `E[e^J - 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PbHestonParams {
    /// Base volatility scale; must be positive (typical range 0.05–1).
    pub sigma: f64,
    /// Volatility of the factor; must be non-negative.
    pub alpha: f64,
    /// Correlation between the price and factor noises, in [-1, 1].
    pub rho: f64,
    /// Mean-reversion speed of the factor; must be non-negative.
    pub kappa: f64,
    /// Mean jump size in log-price units.
    pub jump_mu: f64,
    /// Jump-size standard deviation; must be non-negative.
    pub jump_sigma: f64,
    /// Coefficients of the intensity polynomial in `y`, constant term
    /// first. May be null when `n_intensity` is zero, which disables
    /// jumps entirely.
    pub intensity_coeffs: *const f64,
    /// Number of intensity coefficients behind `intensity_coeffs`.
    pub n_intensity: usize,
    /// Lower edge of the factor range on which the intensity polynomial
    /// must stay non-negative (validated at construction).
    pub intensity_lo: f64,
    /// Upper edge of that factor range; must exceed `intensity_lo`.
    pub intensity_hi: f64,
}

/// Flat-volatility parameters of the controlled-elasticity model
///
/// ```text
/// dx = -beta * sigma^2 * (1 + y)^2 * b(x) / 2 dt + sigma * (1 + y) dW,
/// dy = -kappa * y dt + alpha * (1 + y) dB,      d<W, B> = rho dt,
/// ```
///
/// in which the local factor `b(x) = 1 / (1 + (1 - beta) x)` carries the
/// elasticity of the original price process: `beta = 1` is lognormal,
/// `beta = 0` normal, and for `beta < 1` the state is confined to
/// `1 + (1 - beta) x > 0`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PbSabrParams {
    /// Base volatility scale; must be positive.
    pub sigma: f64,
    /// Volatility of the factor; must be non-negative.
    pub alpha: f64,
    /// Correlation between the price and factor noises, in [-1, 1].
    pub rho: f64,
    /// Mean-reversion speed of the factor; must be non-negative.
    pub kappa: f64,
    /// Elasticity exponent, in [0, 1].
    pub beta: f64,
}

/// Parameters of the exponential-utility hedging model. The indifference
/// value solves a semilinear equation whose driver contains the squared
/// market price of risk `Theta(x, y) = premium_base + premium_slope * y`
/// (floored at zero) and a quadratic penalty on the unhedgeable factor
/// noise; the terminal condition is `risk_aversion * liability`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PbUtilityParams {
    /// Base volatility scale of the traded asset; must be positive.
    pub sigma: f64,
    /// Volatility of the factor; must be non-negative.
    pub alpha: f64,
    /// Correlation between the asset and factor noises, in (-1, 1);
    /// the endpoints are excluded because the driver divides by
    /// `1 - rho^2`.
    pub rho: f64,
    /// Mean-reversion speed of the factor; must be non-negative.
    pub kappa: f64,
    /// Constant part of the squared risk premium; must be non-negative.
    pub premium_base: f64,
    /// Slope of the squared risk premium in the factor.
    pub premium_slope: f64,
    /// Absolute risk aversion of the exponential utility; must be
    /// positive.
    pub risk_aversion: f64,
    /// Linear loading of the liability on the terminal factor value.
    pub liability_slope: f64,
    /// Coefficients of the liability's polynomial leg in the terminal
    /// log price, constant term first; must hold at least one entry.
    pub liability_coeffs: *const f64,
    /// Number of coefficients behind `liability_coeffs`.
    pub n_liability: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("interior NULs removed above");
    });
}

fn status_of(err: &Error) -> PbStatus {
    match err {
        Error::DivergedSolve { .. } => PbStatus::Diverged,
        Error::RankDeficient(_) => PbStatus::RankDeficient,
        _ => PbStatus::InvalidInput,
    }
}

fn fail(err: &Error) -> PbStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn fail_null(what: &str) -> PbStatus {
    set_last_error(&format!("{what} must not be null"));
    PbStatus::NullPointer
}

/// Runs `body` with panics converted to `PB_STATUS_INTERNAL` so that no
/// unwind ever crosses the C boundary.
fn guarded(body: impl FnOnce() -> PbStatus) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("internal panic: {detail}"));
            PbStatus::Internal
        }
    }
}

fn grid_for(t_end: f64, n_steps: usize) -> Result<TimeGrid, Error> {
    TimeGrid::new(t_end, n_steps)
}

unsafe fn coeff_slice<'a>(
    ptr: *const f64,
    len: usize,
    what: &str,
) -> Result<&'a [f64], PbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// Version of the library behind this interface as a static
/// NUL-terminated string; never null and valid for the process lifetime.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on the calling thread, as a
/// NUL-terminated string. Never null; empty before the first failure.
/// The pointer stays valid until the next failing call on the same
/// thread, after which it must not be read.
#[no_mangle]
pub extern "C" fn pb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a table handle. Passing null is a no-op; passing the same
/// handle twice, or a pointer not produced by a `pb_solve_*` function,
/// is undefined behaviour.
///
/// # Safety
///
/// `table` must be null or a handle previously returned through a
/// `pb_solve_*` out-parameter and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pb_table_free(table: *mut PbTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Highest expansion order held by the table, or -1 when `table` is
/// null. Orders `0..=n_max` are valid in the query functions.
///
/// # Safety
///
/// `table` must be null or a live handle from a `pb_solve_*` function.
#[no_mangle]
pub unsafe extern "C" fn pb_table_n_max(table: *const PbTable) -> i32 {
    match table.as_ref() {
        Some(handle) => handle.table.n_max() as i32,
        None => -1,
    }
}

/// Evaluates the expansion value summed through `order` at time `t` and
/// state `(x, y)`, writing it to `out_value`. The time must lie inside
/// the solved span `[0, t_end]`; it is resolved to the nearest grid node
/// from below.
///
/// # Safety
///
/// `table` must be a live handle from a `pb_solve_*` function and
/// `out_value` must point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn pb_table_value(
    table: *const PbTable,
    order: usize,
    t: f64,
    x: f64,
    y: f64,
    out_value: *mut f64,
) -> PbStatus {
    guarded(|| {
        let Some(handle) = (unsafe { table.as_ref() }) else {
            return fail_null("table");
        };
        if out_value.is_null() {
            return fail_null("out_value");
        }
        match handle.table.evaluate_value(TruncationOrder(order), t, x, y) {
            Ok(v) => {
                unsafe { *out_value = v };
                PbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Evaluates the hedging controls of the truncated value at time `t` and
/// state `(x, y)`: `out_z` receives the partial derivative in `x` (the
/// diffusion control) and `out_gamma` the partial derivative in `y` (the
/// factor exposure).
///
/// # Safety
///
/// `table` must be a live handle from a `pb_solve_*` function; `out_z`
/// and `out_gamma` must each point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn pb_table_controls(
    table: *const PbTable,
    order: usize,
    t: f64,
    x: f64,
    y: f64,
    out_z: *mut f64,
    out_gamma: *mut f64,
) -> PbStatus {
    guarded(|| {
        let Some(handle) = (unsafe { table.as_ref() }) else {
            return fail_null("table");
        };
        if out_z.is_null() {
            return fail_null("out_z");
        }
        if out_gamma.is_null() {
            return fail_null("out_gamma");
        }
        match handle
            .table
            .evaluate_controls(TruncationOrder(order), t, x, y)
        {
            Ok((z, g)) => {
                unsafe {
                    *out_z = z;
                    *out_gamma = g;
                }
                PbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Evaluates the jump control of the truncated value: the exact change
/// of the order-`order` truncation when the log price jumps from `x` to
/// `x + jump`, written to `out_value`. It satisfies
///
/// ```text
/// U(t, x, y, jump) = V(t, x + jump, y) - V(t, x, y)
/// ```
///
/// for the truncated polynomial `V`.
///
/// # Safety
///
/// `table` must be a live handle from a `pb_solve_*` function and
/// `out_value` must point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn pb_table_jump_control(
    table: *const PbTable,
    order: usize,
    t: f64,
    x: f64,
    y: f64,
    jump: f64,
    out_value: *mut f64,
) -> PbStatus {
    guarded(|| {
        let Some(handle) = (unsafe { table.as_ref() }) else {
            return fail_null("table");
        };
        if out_value.is_null() {
            return fail_null("out_value");
        }
        let mut total = 0.0;
        for j in 0..=order {
            match handle
                .table
                .evaluate_jump_control(TruncationOrder(j), t, x, y, jump)
            {
                Ok(u) => total += u,
                Err(err) => return fail(&err),
            }
        }
        unsafe { *out_value = total };
        PbStatus::Ok
    })
}

unsafe fn heston_params_from(
    raw: *const PbHestonParams,
) -> Result<heston::HestonParams, PbStatus> {
    let Some(p) = (unsafe { raw.as_ref() }) else {
        return Err(fail_null("params"));
    };
    let coeffs = unsafe { coeff_slice(p.intensity_coeffs, p.n_intensity, "intensity_coeffs")? };
    let intensity = if coeffs.is_empty() {
        IntensityPoly::zero()
    } else {
        IntensityPoly::new(coeffs.to_vec(), (p.intensity_lo, p.intensity_hi))
            .map_err(|e| fail(&e))?
    };
    Ok(heston::HestonParams::constant(
        p.sigma,
        p.alpha,
        p.rho,
        p.kappa,
        intensity,
        GaussianJump {
            mu: p.jump_mu,
            sigma: p.jump_sigma,
        },
    ))
}

fn store_table(out_table: *mut *mut PbTable, table: CoefficientTable) -> PbStatus {
    let handle = Box::new(PbTable { table });
    unsafe { *out_table = Box::into_raw(handle) };
    PbStatus::Ok
}

/// Solves the jump model for the terminal condition `x^moment` through
/// expansion order `n_max` on a uniform grid of `n_steps` steps over
/// `[0, t_end]`, writing a fresh handle to `out_table` on success. On
/// failure `out_table` is left untouched.
///
/// # Safety
///
/// `params` must point to a valid [`PbHestonParams`] (with
/// `intensity_coeffs` covering `n_intensity` doubles when non-null) and
/// `out_table` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_solve_heston(
    params: *const PbHestonParams,
    moment: usize,
    n_max: usize,
    t_end: f64,
    n_steps: usize,
    out_table: *mut *mut PbTable,
) -> PbStatus {
    guarded(|| {
        if out_table.is_null() {
            return fail_null("out_table");
        }
        let model = match unsafe { heston_params_from(params) } {
            Ok(m) => m,
            Err(status) => return status,
        };
        let grid = match grid_for(t_end, n_steps) {
            Ok(g) => g,
            Err(err) => return fail(&err),
        };
        let spec = TerminalSpec::monomial(moment, n_max);
        match heston::heston_solve(&model, &spec, n_max, grid) {
            Ok(table) => store_table(out_table, table),
            Err(err) => fail(&err),
        }
    })
}

/// Solves the controlled-elasticity model for the terminal condition
/// `x^moment` through expansion order `n_max` on a uniform grid of
/// `n_steps` steps over `[0, t_end]`, writing a fresh handle to
/// `out_table` on success.
///
/// # Safety
///
/// `params` must point to a valid [`PbSabrParams`] and `out_table` must
/// point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_solve_sabr(
    params: *const PbSabrParams,
    moment: usize,
    n_max: usize,
    t_end: f64,
    n_steps: usize,
    out_table: *mut *mut PbTable,
) -> PbStatus {
    guarded(|| {
        if out_table.is_null() {
            return fail_null("out_table");
        }
        let Some(p) = (unsafe { params.as_ref() }) else {
            return fail_null("params");
        };
        let model = sabr::SabrParams::constant(p.sigma, p.alpha, p.rho, p.kappa, p.beta);
        let grid = match grid_for(t_end, n_steps) {
            Ok(g) => g,
            Err(err) => return fail(&err),
        };
        let spec = TerminalSpec::monomial(moment, n_max);
        match sabr::sabr_solve(&model, &spec, n_max, grid) {
            Ok(table) => store_table(out_table, table),
            Err(err) => fail(&err),
        }
    })
}

/// Solves the utility hedging model through expansion order `n_max` on a
/// uniform grid of `n_steps` steps over `[0, t_end]`, writing a fresh
/// handle to `out_table` on success. The solved quantity is the
/// certainty-equivalent exponent; its value and controls are queried
/// with the same `pb_table_*` functions as the pricing models.
///
/// # Safety
///
/// `params` must point to a valid [`PbUtilityParams`] (with
/// `liability_coeffs` covering `n_liability` doubles) and `out_table`
/// must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_solve_utility(
    params: *const PbUtilityParams,
    n_max: usize,
    t_end: f64,
    n_steps: usize,
    out_table: *mut *mut PbTable,
) -> PbStatus {
    guarded(|| {
        if out_table.is_null() {
            return fail_null("out_table");
        }
        let Some(p) = (unsafe { params.as_ref() }) else {
            return fail_null("params");
        };
        let coeffs = match unsafe { coeff_slice(p.liability_coeffs, p.n_liability, "liability_coeffs") }
        {
            Ok(c) => c,
            Err(status) => return status,
        };
        if coeffs.is_empty() {
            return fail(&Error::InvalidInput(
                "liability_coeffs must hold at least one entry".to_string(),
            ));
        }
        let premium = match ThetaSpec::new(p.premium_base, p.premium_slope) {
            Ok(t) => t,
            Err(err) => return fail(&err),
        };
        let liability = match LiabilitySpec::new(p.liability_slope, coeffs.to_vec()) {
            Ok(l) => l,
            Err(err) => return fail(&err),
        };
        let model = utility::UtilityParams {
            sigma: Curve::Const(p.sigma),
            alpha: Curve::Const(p.alpha),
            rho: Curve::Const(p.rho),
            kappa: Curve::Const(p.kappa),
            risk_premium: premium,
            liability,
            risk_aversion: p.risk_aversion,
        };
        let grid = match grid_for(t_end, n_steps) {
            Ok(g) => g,
            Err(err) => return fail(&err),
        };
        match utility::utility_solve(&model, n_max, grid) {
            Ok(table) => store_table(out_table, table),
            Err(err) => fail(&err),
        }
    })
}

/// Computes the power moments of the terminal log price under the jump
/// model: `out_gammas[i]` receives the order-`n_max` estimate of
/// `E[x_T^(i+1)]` for `i = 0..m_max`, so the array must hold `m_max`
/// doubles (first moment first). The backward grid has `n_steps`
/// uniform steps over `[0, t_end]`.
///
/// # Safety
///
/// `params` must point to a valid [`PbHestonParams`] and `out_gammas`
/// must point to writable memory for `m_max` doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_heston_moments(
    params: *const PbHestonParams,
    m_max: usize,
    n_max: usize,
    t_end: f64,
    n_steps: usize,
    out_gammas: *mut f64,
) -> PbStatus {
    guarded(|| {
        if out_gammas.is_null() {
            return fail_null("out_gammas");
        }
        let model = match unsafe { heston_params_from(params) } {
            Ok(m) => m,
            Err(status) => return status,
        };
        let grid = match grid_for(t_end, n_steps) {
            Ok(g) => g,
            Err(err) => return fail(&err),
        };
        match heston::heston_moments(&model, m_max, n_max, grid) {
            Ok(moments) => {
                let out = unsafe { slice::from_raw_parts_mut(out_gammas, m_max) };
                out.copy_from_slice(moments.as_slice());
                PbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}

/// Computes the power moments of the terminal log price under the
/// controlled-elasticity model; see [`pb_heston_moments`] for the
/// output convention.
///
/// # Safety
///
/// `params` must point to a valid [`PbSabrParams`] and `out_gammas`
/// must point to writable memory for `m_max` doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_sabr_moments(
    params: *const PbSabrParams,
    m_max: usize,
    n_max: usize,
    t_end: f64,
    n_steps: usize,
    out_gammas: *mut f64,
) -> PbStatus {
    guarded(|| {
        if out_gammas.is_null() {
            return fail_null("out_gammas");
        }
        let Some(p) = (unsafe { params.as_ref() }) else {
            return fail_null("params");
        };
        let model = sabr::SabrParams::constant(p.sigma, p.alpha, p.rho, p.kappa, p.beta);
        let grid = match grid_for(t_end, n_steps) {
            Ok(g) => g,
            Err(err) => return fail(&err),
        };
        match sabr::sabr_moments(&model, m_max, n_max, grid) {
            Ok(moments) => {
                let out = unsafe { slice::from_raw_parts_mut(out_gammas, m_max) };
                out.copy_from_slice(moments.as_slice());
                PbStatus::Ok
            }
            Err(err) => fail(&err),
        }
    })
}
