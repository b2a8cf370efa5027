//! Asymptotic run-length theory for the GLR-CUSUM scan.
//!
//! Under the null the stopping time is approximately exponential with mean
//! `1 / (D_a ξ φ(ξ))`, where `D_a` is built from Siegmund's overshoot function
//! `ν(x) = 2x⁻² exp(-2 Σ_{n≥1} n⁻¹ Φ(-x√n/2))`. Two evaluation modes exist:
//! the exact series and the small-`x` approximation `ν(x) ≈ exp(-ρx)`.
//! They do not agree: the exact function sits above the exponential for every
//! `x > 0` (it decays like `2/x²`), so exact-mode `D` is larger than
//! `1/(4ρ²) ≈ 0.7355`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{integrate, integrate_to_infinity, normal_cdf, normal_pdf};

/// Siegmund's constant in `ν(x) = exp(-ρx) + o(x²)`.
pub const SIEGMUND_RHO: f64 = 0.583;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// `max |B̃₃(t)| / 3!` for the periodic Bernoulli polynomial: bounds the
/// Euler–Maclaurin remainder after the `f'` correction.
const EM_REMAINDER: f64 = 0.008_019_0;
const EM_MIN_TERMS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NuMode {
    #[default]
    Exact,
    Approx,
}

impl fmt::Display for NuMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NuMode::Exact => "exact",
            NuMode::Approx => "approx",
        })
    }
}

impl FromStr for NuMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(NuMode::Exact),
            "approx" => Ok(NuMode::Approx),
            other => Err(Error::config(format!("unknown nu mode '{other}' (exact|approx)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub rho: f64,
    /// Bound on the neglected tail of the ν series.
    pub series_tol: f64,
    /// Absolute tolerance handed to the adaptive quadrature.
    pub quad_tol: f64,
}

impl Default for TheoryConstants {
    fn default() -> Self {
        Self {
            rho: SIEGMUND_RHO,
            series_tol: 1e-10,
            quad_tol: 1e-9,
        }
    }
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.series_tol > 0.0 && self.quad_tol > 0.0) {
            return Err(Error::config("theory tolerances must be positive"));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::config("rho must be positive and finite"));
        }
        Ok(())
    }
}

/// Value of the ν series together with a bound on its truncation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuValue {
    pub value: f64,
    /// Bound on |Σ_exact − Σ_computed| for the inner series.
    pub series_error: f64,
    /// Number of explicitly summed terms.
    pub terms: u64,
}

/// Evaluates `S(x) = Σ_{n≥1} n⁻¹ Φ(-x√n/2)` and returns ν(x).
///
/// Terms are summed until either the Gaussian tail inequality
/// `Φ(-u) ≤ φ(u)/u` bounds the remainder below `tol`, or an Euler–Maclaurin
/// tail (exact integral, `f/2`, `f'/12`) has a remainder bound below `tol`.
/// The summand is completely monotone in `n`, so the remainder after the
/// `f'` term is at most `0.00802 |f''(N)|`.
pub fn nu_exact_detailed(x: f64, tol: f64) -> Result<NuValue> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("nu(x) needs finite x > 0, got {x}")));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("series tolerance must be positive"));
    }
    let c = 0.5 * x;
    let one_minus_decay = -(-0.5 * c * c).exp_m1();
    let mut sum = 0.0;
    let mut n: u64 = 0;
    loop {
        n += 1;
        let nf = n as f64;
        sum += normal_cdf(-c * nf.sqrt()) / nf;

        let next = nf + 1.0;
        let gauss_tail =
            INV_SQRT_2PI * (-0.5 * c * c * next).exp() / (c * next.powf(1.5) * one_minus_decay);
        if gauss_tail <= tol {
            sum += 0.5 * gauss_tail;
            return Ok(finish(x, sum, 0.5 * gauss_tail, n));
        }
        if n + 1 >= EM_MIN_TERMS {
            let (f, fp, fpp) = summand_derivatives(c, next);
            let remainder = EM_REMAINDER * fpp.abs();
            if remainder <= tol {
                let tail = tail_integral(c, next) + 0.5 * f - fp / 12.0;
                return Ok(finish(x, sum + tail, remainder, n));
            }
        }
    }
}

fn finish(x: f64, sum: f64, err: f64, terms: u64) -> NuValue {
    NuValue {
        value: 2.0 / (x * x) * (-2.0 * sum).exp(),
        series_error: err,
        terms,
    }
}

/// `f(t) = Φ(-c√t)/t` and its first two derivatives.
fn summand_derivatives(c: f64, t: f64) -> (f64, f64, f64) {
    let st = t.sqrt();
    let u = c * st;
    let h = normal_cdf(-u);
    let dens = normal_pdf(u);
    let h1 = -dens * c / (2.0 * st);
    let h2 = dens * (u * c * c / (4.0 * t) + c / (4.0 * t * st));
    let f = h / t;
    let f1 = h1 / t - h / (t * t);
    let f2 = h2 / t - 2.0 * h1 / (t * t) + 2.0 * h / (t * t * t);
    (f, f1, f2)
}

/// `∫_N^∞ Φ(-c√t)/t dt = 2 ∫_{u0}^∞ Φ(-u)/u du` with `u0 = c√N`.
fn tail_integral(c: f64, n: f64) -> f64 {
    let u0 = c * n.sqrt();
    2.0 * upper_phi_over_u(u0)
}

/// `∫_{u0}^∞ Φ(-u)/u du`.
///
/// For small `u0`, integrating by parts gives
/// `-ln(u0) Φ(-u0) - (γ + ln 2)/4 - ∫_0^{u0} ln(u) φ(u) du`, the last term by
/// its power series; larger `u0` uses quadrature directly.
pub(crate) fn upper_phi_over_u(u0: f64) -> f64 {
    if u0 > 2.0 {
        return integrate_to_infinity(|u| normal_cdf(-u) / u, u0, 1e-15);
    }
    let ln_u0 = u0.ln();
    let u2 = u0 * u0;
    let mut series = 0.0;
    let mut power = u0; // u0^(2k+1)
    let mut coef = 1.0; // (-1)^k / (2^k k!)
    for k in 0..200 {
        let m = (2 * k + 1) as f64;
        let term = coef * power * (ln_u0 / m - 1.0 / (m * m));
        series += term;
        if term.abs() < 1e-18 * series.abs().max(1e-300) && k > 2 {
            break;
        }
        power *= u2;
        coef *= -0.5 / (k as f64 + 1.0);
    }
    let lower_log_moment = INV_SQRT_2PI * series;
    -ln_u0 * normal_cdf(-u0) - (EULER_GAMMA + std::f64::consts::LN_2) / 4.0 - lower_log_moment
}

/// ν(x) by the exact series, to the given series tolerance.
pub fn nu_exact(x: f64, tol: f64) -> Result<f64> {
    nu_exact_detailed(x, tol).map(|v| v.value)
}

/// `exp(-ρx)`.
pub fn nu_approx(x: f64, rho: f64) -> f64 {
    (-rho * x).exp()
}

fn nu_for(mode: NuMode, consts: &TheoryConstants) -> impl Fn(f64) -> f64 + '_ {
    move |x: f64| match mode {
        NuMode::Approx => nu_approx(x, consts.rho),
        NuMode::Exact => {
            if x <= 0.0 {
                1.0
            } else {
                nu_exact(x, consts.series_tol).expect("x > 0 checked")
            }
        }
    }
}

/// `D = ∫_0^∞ x ν²(x) dx`. The approximate mode is the closed form `1/(4ρ²)`.
pub fn big_d(mode: NuMode, consts: &TheoryConstants) -> Result<f64> {
    consts.validate()?;
    match mode {
        NuMode::Approx => Ok(1.0 / (4.0 * consts.rho * consts.rho)),
        NuMode::Exact => {
            let nu = nu_for(mode, consts);
            // Split at 1 so the small-x region gets its own panels.
            let near = integrate(|x| x * nu(x).powi(2), 0.0, 1.0, 0.5 * consts.quad_tol);
            let far = integrate_to_infinity(|x| x * nu(x).powi(2), 1.0, 0.5 * consts.quad_tol);
            Ok(near + far)
        }
    }
}

/// `D_a = d(a) = ∫_{a^{-1/2}}^∞ x ν² dx − a⁻¹ ∫_{a^{-1/2}}^∞ x⁻¹ ν² dx`.
/// `a = ∞` returns [`big_d`].
pub fn d_of_a(a: f64, mode: NuMode, consts: &TheoryConstants) -> Result<f64> {
    consts.validate()?;
    if a.is_nan() || a <= 0.0 {
        return Err(Error::domain(format!("d(a) needs a > 0, got {a}")));
    }
    if a == f64::INFINITY {
        return big_d(mode, consts);
    }
    let nu = nu_for(mode, consts);
    let lo = a.powf(-0.5);
    let tol = 0.25 * consts.quad_tol;
    let first = integrate_to_infinity(|x| x * nu(x).powi(2), lo, tol);
    let second = integrate_to_infinity(|x| nu(x).powi(2) / x, lo, tol);
    Ok(first - second / a)
}

/// Window-to-threshold ratio `a = w_n / ξ²`; unbounded windows map to ∞.
pub fn window_ratio(w_n: Option<usize>, xi: f64) -> f64 {
    match w_n {
        Some(w) => w as f64 / (xi * xi),
        None => f64::INFINITY,
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if xi.is_finite() && xi > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("threshold must be finite and positive, got {xi}")))
    }
}

/// Expected observations to a false alarm, `1 / (D_a ξ φ(ξ))`.
pub fn arl_theory(xi: f64, a: f64, mode: NuMode, consts: &TheoryConstants) -> Result<f64> {
    check_xi(xi)?;
    let da = d_of_a(a, mode, consts)?;
    Ok(1.0 / (da * xi * normal_pdf(xi)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdrBound {
    /// `min(1, ℓ D_a ξ φ(ξ))`.
    pub linear: f64,
    /// `1 − exp(−ℓ D_a ξ φ(ξ))`.
    pub exponential: f64,
}

/// Probability of at least one false alarm within `ell` observations.
pub fn fdr_theory(
    xi: f64,
    a: f64,
    ell: f64,
    mode: NuMode,
    consts: &TheoryConstants,
) -> Result<FdrBound> {
    check_xi(xi)?;
    if !(ell >= 0.0) {
        return Err(Error::domain(format!("horizon must be non-negative, got {ell}")));
    }
    let rate = ell * d_of_a(a, mode, consts)? * xi * normal_pdf(xi);
    Ok(FdrBound {
        linear: rate.min(1.0),
        exponential: -(-rate).exp_m1(),
    })
}

/// Expected post-change delay `(ξ² − 3)/μ² + 4ρ/μ`, `μ` the standardized
/// drift per observation.
pub fn edd_closed_form(xi: f64, mu: f64, rho: f64) -> Result<f64> {
    check_xi(xi)?;
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::domain(format!("post-change drift must be positive, got {mu}")));
    }
    Ok((xi * xi - 3.0) / (mu * mu) + 4.0 * rho / mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> TheoryConstants {
        TheoryConstants::default()
    }

    /// Brute-force oracle: direct summation of `terms` terms plus the
    /// Gaussian-tail bound on the rest (midpoint of the bracket).
    fn nu_brute(x: f64, terms: u64) -> (f64, f64) {
        let c = 0.5 * x;
        let mut s = 0.0;
        for n in 1..=terms {
            let nf = n as f64;
            s += normal_cdf(-c * nf.sqrt()) / nf;
        }
        let next = (terms + 1) as f64;
        let bound = INV_SQRT_2PI * (-0.5 * c * c * next).exp()
            / (c * next.powf(1.5) * (1.0 - (-0.5 * c * c).exp()));
        (2.0 / (x * x) * (-2.0 * (s + 0.5 * bound)).exp(), bound)
    }

    #[test]
    fn nu_at_one_matches_brute_force() {
        let (oracle, bound) = nu_brute(1.0, 10_000_000);
        assert!(bound < 1e-12);
        let v = nu_exact(1.0, 1e-12).unwrap();
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
    }

    #[test]
    fn nu_small_x_limit() {
        let x = 1e-3;
        let v = nu_exact(x, 1e-12).unwrap();
        assert!((v * (SIEGMUND_RHO * x).exp() - 1.0).abs() < 1e-2);
        // The tail route was taken, not ten million terms.
        assert!(nu_exact_detailed(x, 1e-12).unwrap().terms < 10_000);
    }

    #[test]
    fn euler_maclaurin_tail_matches_long_sum() {
        // At x = 0.05 the explicit sum needs ~10^5 terms; compare the tail
        // route against a brute sum with a tiny Gaussian bound.
        let (oracle, bound) = nu_brute(0.05, 2_000_000);
        assert!(bound < 1e-12);
        let v = nu_exact(0.05, 1e-12).unwrap();
        assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
    }

    #[test]
    fn upper_phi_over_u_matches_quadrature() {
        for &u0 in &[0.01, 0.3, 1.0, 1.9, 2.5] {
            let q = integrate(|u: f64| normal_cdf(-u) / u, u0, 40.0, 1e-14);
            assert!((upper_phi_over_u(u0) - q).abs() < 1e-11, "u0 = {u0}");
        }
    }

    #[test]
    fn nu_monotone_and_domain() {
        let a = nu_exact(1.0, 1e-10).unwrap();
        let b = nu_exact(2.0, 1e-10).unwrap();
        assert!(b < a);
        assert!(nu_exact(0.0, 1e-10).is_err());
        assert!(nu_exact(-1.0, 1e-10).is_err());
    }

    #[test]
    fn nu_approx_values() {
        assert_eq!(nu_approx(0.0, SIEGMUND_RHO), 1.0);
        let v = nu_approx(1.0 / SIEGMUND_RHO, SIEGMUND_RHO);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn approx_d_is_closed_form() {
        let d = big_d(NuMode::Approx, &consts()).unwrap();
        assert!((d - 0.7355).abs() < 1e-3);
        // ∫ x e^{-2ρx} dx by quadrature reproduces the closed form.
        let q = integrate_to_infinity(|x| x * nu_approx(x, SIEGMUND_RHO).powi(2), 0.0, 1e-12);
        assert!((q - d).abs() < 1e-10);
    }

    #[test]
    fn exact_nu_lies_above_exponential() {
        // The pointwise comparison that decides the ordering of the two D's.
        let mut x = 1e-3;
        while x < 20.0 {
            let exact = nu_exact(x, 1e-12).unwrap();
            assert!(exact >= nu_approx(x, SIEGMUND_RHO) - 1e-9, "x = {x}");
            x *= 1.3;
        }
        let exact = big_d(NuMode::Exact, &consts()).unwrap();
        let approx = big_d(NuMode::Approx, &consts()).unwrap();
        assert!(exact > approx);
    }

    #[test]
    fn exact_d_stable_under_refinement() {
        let c1 = consts();
        let c2 = TheoryConstants {
            quad_tol: c1.quad_tol / 2.0,
            series_tol: c1.series_tol / 2.0,
            ..c1
        };
        let d1 = big_d(NuMode::Exact, &c1).unwrap();
        let d2 = big_d(NuMode::Exact, &c2).unwrap();
        assert!((d1 - d2).abs() < 1e-4);
        assert!((d1 - d2).abs() < 10.0 * c1.quad_tol.max(c1.series_tol));
    }

    #[test]
    fn d_of_a_limits_and_order() {
        for mode in [NuMode::Exact, NuMode::Approx] {
            let c = consts();
            let inf = d_of_a(f64::INFINITY, mode, &c).unwrap();
            assert_eq!(inf, big_d(mode, &c).unwrap());
            let d2 = d_of_a(2.0, mode, &c).unwrap();
            let d10 = d_of_a(10.0, mode, &c).unwrap();
            assert!(d2 < d10 && d10 < inf, "{mode}: {d2} {d10} {inf}");
            assert!(d_of_a(0.0, mode, &c).is_err());
            assert!(d_of_a(-1.0, mode, &c).is_err());
        }
    }

    #[test]
    fn arl_direct_evaluation() {
        let c = consts();
        let arl = arl_theory(3.4, f64::INFINITY, NuMode::Approx, &c).unwrap();
        let expected = 1.0 / (1.0 / (4.0 * 0.583f64.powi(2)) * 3.4 * normal_pdf(3.4));
        assert!((arl - expected).abs() < 1e-9);
        assert!((arl - 325.0).abs() < 1.0);
        let a4 = arl_theory(4.0, f64::INFINITY, NuMode::Approx, &c).unwrap();
        assert!(arl < a4);
    }

    #[test]
    fn fdr_forms() {
        let c = consts();
        let zero = fdr_theory(4.0, 30.0 / 16.0, 0.0, NuMode::Exact, &c).unwrap();
        assert_eq!(zero.linear, 0.0);
        assert_eq!(zero.exponential, 0.0);
        for &xi in &[3.0, 3.5, 4.0, 4.5] {
            let f = fdr_theory(xi, f64::INFINITY, 390.0, NuMode::Approx, &c).unwrap();
            assert!(f.exponential <= f.linear);
            let arl = arl_theory(xi, f64::INFINITY, NuMode::Approx, &c).unwrap();
            assert!((f.exponential - (1.0 - (-390.0 / arl).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn edd_closed_form_values() {
        assert!((edd_closed_form(4.0, 1.0, SIEGMUND_RHO).unwrap() - 15.332).abs() < 1e-12);
        assert!(edd_closed_form(4.0, 100.0, SIEGMUND_RHO).unwrap() < 0.03);
        let lead = |mu: f64| (16.0 - 3.0) / (mu * mu);
        assert!((lead(1.0) / lead(2.0) - 4.0).abs() < 1e-12);
        assert!(edd_closed_form(4.0, 0.0, SIEGMUND_RHO).is_err());
        assert!(edd_closed_form(4.0, -1.0, SIEGMUND_RHO).is_err());
    }
}
