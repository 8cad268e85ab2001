//! Term-by-term audit of the Laplace expansion of `ln E(tau_0)`.
//!
//! Each term of the exact sum splits as
//!
//! ```text
//! ln(pi_i / delta_i) = ln K + m F(i/m) + G(i/m) + S(i) + R(i)
//! ```
//!
//! where `S` is the Stirling defect and `R(i) = 1 + R2(i) - R1(i)` collects
//! the Riemann-sum remainders. This module evaluates every piece, measures the
//! remainders, and checks the bounds that make the expansion work.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::asymptotics::{self, DEGENERATE_L_Q};
use crate::bd_chain::{self, log_extinction_terms};
use crate::error::{Error, Result};
use crate::log_weight::log_sum_exp;
use crate::params::ModelParams;

/// Largest population the audit sums over.
pub const AUDIT_MAX_M: usize = 100_000;

/// "m large enough": below this, the asymptotic bounds are reported but
/// not enforced.
pub const LARGE_M: usize = 64;

/// Uniform bound on `|S(i)|`.
pub const STIRLING_BOUND: f64 = 2.0;

/// `ln C(m,i) + (m-i) ln(1-i/m) + i ln(i/m) + (1/2) ln(i (m-i) / m)`.
///
/// Written so that swapping `i` and `m - i` permutes commutative operations
/// only, which makes the symmetry exact.
pub fn stirling_defect(m: usize, i: usize) -> Result<f64> {
    if i < 1 || i + 1 > m {
        return Err(Error::OutOfDomain {
            what: "i",
            value: i as f64,
            domain: "[1, m-1]",
        });
    }
    let (mf, a, b) = (m as f64, i as f64, (m - i) as f64);
    let ln_binom = ln_gamma(mf + 1.0) - (ln_gamma(a + 1.0) + ln_gamma(b + 1.0));
    let entropy = a * (a / mf).ln() + b * (b / mf).ln();
    Ok(ln_binom + entropy + 0.5 * (a * b / mf).ln())
}

/// `(1+t) ln(1+t) / t - 1`, continuous through `t = 0`.
fn h(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        t * (0.5 - t * (1.0 / 6.0 - t * (1.0 / 12.0 - t / 20.0)))
    } else {
        (1.0 + t) * t.ln_1p() / t - 1.0
    }
}

/// `int_0^x ln(a + c s) ds`, for `a >= 0` and `a + c s > 0` on `(0, x]`.
fn int_ln_affine(a: f64, c: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if a == 0.0 {
        x * (c * x).ln() - x
    } else {
        x * a.ln() + x * h(c * x / a)
    }
}

fn one_minus_x_ln(x: f64) -> f64 {
    if x == 1.0 {
        0.0
    } else {
        (1.0 - x) * (-x).ln_1p()
    }
}

/// The functions `F`, `F~`, `G` and the constant `K` of the expansion,
/// with the parameter-only quantities precomputed.
///
/// When `|L_q| < 1e-3` the degenerate form is selected: `F` absorbs `F~`
/// (its last term becomes `phi ln phi / (L_q + p)`) and `G` drops `m F~`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Laplace {
    m: usize,
    sigma: f64,
    ln_sigma_s: f64,
    l: f64,
    /// `p = (1-q)^ell Q^theta`.
    p: f64,
    q_theta: f64,
    degenerate: bool,
}

impl Laplace {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let l = params.l_q();
        Ok(Laplace {
            m: params.m,
            sigma: params.sigma,
            ln_sigma_s: params.sigma.ln() + params.ell as f64 * (-params.q).ln_1p(),
            l,
            p: params.discovery_prob(),
            q_theta: params.q_big_pow_theta(),
            degenerate: l.abs() < DEGENERATE_L_Q,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn slope(&self) -> f64 {
        self.l + self.p
    }

    /// Maximiser of `F`. The degenerate form moves it to
    /// `(sigma s - 1 + p) / (sigma - 1 + p)`.
    pub fn rho_star(&self) -> f64 {
        let sigma_s = self.ln_sigma_s.exp();
        if self.degenerate {
            (sigma_s - 1.0 + self.p) / (self.sigma - 1.0 + self.p)
        } else {
            (sigma_s - 1.0) / (self.sigma - 1.0)
        }
    }

    // Affine denominator of F'' and its slope: `1 + L x` or `phi(x)`.
    fn affine(&self) -> (f64, f64) {
        if self.degenerate {
            (1.0 - self.p, self.slope())
        } else {
            (1.0, self.l)
        }
    }

    /// `(1 + L x) ln(1 + L x) / L`, continuous in `L`.
    fn lx_term(&self, x: f64) -> f64 {
        x * (1.0 + h(self.l * x))
    }

    /// `phi(x) ln phi(x) / (L + p)`.
    fn phi_term(&self, x: f64) -> f64 {
        if self.p == 0.0 {
            return self.lx_term(x);
        }
        let a = 1.0 - self.p;
        let ln_a = (-self.p).ln_1p();
        a * ln_a / self.slope() + x * ln_a + x * (1.0 + h(self.slope() * x / a))
    }

    fn f_raw(&self, x: f64) -> f64 {
        let last = if self.degenerate {
            self.phi_term(x)
        } else {
            self.lx_term(x)
        };
        -one_minus_x_ln(x) + x * self.ln_sigma_s - last
    }

    fn check_unit(x: f64) -> Result<()> {
        if (0.0..1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                what: "x",
                value: x,
                domain: "[0, 1)",
            })
        }
    }

    pub fn f(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        Ok(self.f_raw(x))
    }

    pub fn f1(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        let (a, c) = self.affine();
        Ok((-x).ln_1p() + self.ln_sigma_s - (a + c * x).ln())
    }

    pub fn f2(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        let (a, c) = self.affine();
        Ok(-1.0 / (1.0 - x) - c / (a + c * x))
    }

    pub fn f3(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        let (a, c) = self.affine();
        let d = a + c * x;
        Ok(-1.0 / ((1.0 - x) * (1.0 - x)) + c * c / (d * d))
    }

    pub fn f4(&self, x: f64) -> Result<f64> {
        Self::check_unit(x)?;
        let (a, c) = self.affine();
        let d = a + c * x;
        Ok(-2.0 / (1.0 - x).powi(3) - 2.0 * c.powi(3) / d.powi(3))
    }

    /// `F(1) + F~(1)`, the exponent of the `i = m` term.
    pub fn f_plus_tilde_at_one(&self) -> f64 {
        self.ln_sigma_s - self.phi_term(1.0)
    }

    /// `F~(x) = (1 + L x) ln(1 + L x) / L - phi(x) ln phi(x) / (L + p)`.
    /// Vanishes identically when `Q = 0`.
    pub fn f_tilde(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain {
                what: "x",
                value: x,
                domain: "[0, 1]",
            });
        }
        Ok(self.f_tilde_raw(x))
    }

    fn f_tilde_raw(&self, x: f64) -> f64 {
        if self.p == 0.0 {
            return 0.0;
        }
        self.lx_term(x) - self.phi_term(x)
    }

    /// `psi(x) = Q^theta / sigma + (1 - Q^theta / sigma) x`.
    fn psi(&self, x: f64) -> f64 {
        let a = self.q_theta / self.sigma;
        a + (1.0 - a) * x
    }

    fn g_raw(&self, x: f64) -> f64 {
        let (m, sigma, qt) = (self.m as f64, self.sigma, self.q_theta);
        let mut g = (((sigma - 1.0) * x + 1.0).ln() - self.ln_sigma_s)
            + (m * qt / (sigma - qt) - 0.5) * self.psi(x).ln()
            + m * x * (qt / sigma * (1.0 / x - 1.0)).ln_1p()
            - 0.5 * (m * x * (1.0 - x)).ln();
        if !self.degenerate {
            g += m * self.f_tilde_raw(x);
        }
        g
    }

    /// `G` on `[1/m, 1 - 1/m]`.
    pub fn g(&self, x: f64) -> Result<f64> {
        let lo = 1.0 / self.m as f64;
        let slack = 1e-12 * lo;
        if !(x >= lo - slack && x <= 1.0 - lo + slack) {
            return Err(Error::OutOfDomain {
                what: "x",
                value: x,
                domain: "[1/m, 1 - 1/m]",
            });
        }
        Ok(self.g_raw(x))
    }

    /// `ln K = (-m Q^theta/(sigma - Q^theta) - 1/2) ln psi(1/m)
    ///        + m (1-p) ln(1-p) / (L + p)`; `(1/2) ln m` at `Q = 0`.
    pub fn ln_k(&self) -> f64 {
        let (m, qt) = (self.m as f64, self.q_theta);
        let first = (-m * qt / (self.sigma - qt) - 0.5) * self.psi(1.0 / m).ln();
        if self.p == 0.0 {
            return first;
        }
        first + m * (1.0 - self.p) * (-self.p).ln_1p() / self.slope()
    }

    /// `m F(i/m) + G(i/m)` for `i = 1..m-1`.
    fn exponent(&self, i: usize) -> f64 {
        let x = i as f64 / self.m as f64;
        self.m as f64 * self.f_raw(x) + self.g_raw(x)
    }

    /// Closed form of `sum_{k<=i} ln phi(k/m)` without its remainder `R1`.
    fn riemann_phi_closed(&self, x: f64) -> f64 {
        self.m as f64 * int_ln_affine(1.0 - self.p, self.slope(), x)
    }

    /// Closed form of `sum_{k<=i} ln psi(k/m)` without its remainder `R2`.
    fn riemann_psi_closed(&self, x: f64) -> f64 {
        let a = self.q_theta / self.sigma;
        let (c, lo) = (1.0 - a, 1.0 / self.m as f64);
        self.m as f64 * (int_ln_affine(a, c, x) - int_ln_affine(a, c, lo))
            + 0.5 * (self.psi(x).ln() + self.psi(lo).ln())
    }
}

/// `F` and its first three derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FValues {
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

pub fn f_big(x: f64, params: &ModelParams) -> Result<FValues> {
    let lap = Laplace::new(params)?;
    Ok(FValues {
        f: lap.f(x)?,
        f1: lap.f1(x)?,
        f2: lap.f2(x)?,
        f3: lap.f3(x)?,
    })
}

pub fn g_big(x: f64, params: &ModelParams) -> Result<f64> {
    Laplace::new(params)?.g(x)
}

pub fn f_tilde(x: f64, params: &ModelParams) -> Result<f64> {
    Laplace::new(params)?.f_tilde(x)
}

pub fn k_const(params: &ModelParams) -> Result<f64> {
    Ok(Laplace::new(params)?.ln_k())
}

fn check_audit_size(m: usize) -> Result<()> {
    if m > AUDIT_MAX_M {
        return Err(Error::TooLarge { m, cap: AUDIT_MAX_M });
    }
    if m < 2 {
        return Err(Error::param("m", "the Laplace sum needs m >= 2"));
    }
    Ok(())
}

/// `S_m` and the `i = m` term `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectSum {
    /// `ln sum_{i=1}^{m-1} exp(m F(i/m) + G(i/m))`.
    pub ln_s_m: f64,
    pub ln_k: f64,
    /// Exact `ln(pi_m / delta_m)`.
    pub ln_t: f64,
    /// `ln T - (ln K + m (F(1) + F~(1)))`.
    pub c_double_prime: f64,
    /// `ln E - ln(K S_m + K exp(m (F(1) + F~(1))))`: the share of `ln E`
    /// carried by the Stirling and Riemann remainders.
    pub identity_residual: f64,
    pub ln_exact: f64,
}

pub fn direct_sum(params: &ModelParams) -> Result<DirectSum> {
    check_audit_size(params.m)?;
    let lap = Laplace::new(params)?;
    let m = params.m;
    let ln_s_m = log_sum_exp((1..m).map(|i| lap.exponent(i)));
    let ln_k = lap.ln_k();
    let spec = bd_chain::transition_probs(params)?;
    let terms = log_extinction_terms(&spec);
    let ln_t = terms[m - 1].ln();
    let ln_exact = log_sum_exp(terms.iter().map(|t| t.ln()));
    let ln_t_model = m as f64 * lap.f_plus_tilde_at_one();
    let model = ln_k + log_sum_exp([ln_s_m, ln_t_model]);
    Ok(DirectSum {
        ln_s_m,
        ln_k,
        ln_t,
        c_double_prime: ln_t - (ln_k + ln_t_model),
        identity_residual: ln_exact - model,
        ln_exact,
    })
}

/// Summation window `[i_-, i_+]` around `m rho*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub i_minus: usize,
    pub i_plus: usize,
    pub delta: f64,
}

/// `i_- = max(floor(m rho* - delta), 0) + 1`, `i_+ = floor(m rho* + delta)`,
/// the latter clipped to `m - 1`.
pub fn window(m: usize, rho_star: f64, delta: f64) -> Result<Window> {
    let centre = m as f64 * rho_star;
    let lo = ((centre - delta).floor()).max(0.0) as i64 + 1;
    let hi = ((centre + delta).floor() as i64).min(m as i64 - 1);
    if lo > hi {
        return Err(Error::EmptyWindow { lo, hi });
    }
    Ok(Window {
        i_minus: lo as usize,
        i_plus: hi as usize,
        delta,
    })
}

/// `delta = m^{2/3}`.
pub fn default_delta(m: usize) -> f64 {
    (m as f64).powf(2.0 / 3.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSum {
    pub window: Window,
    /// `ln sum_{i_-}^{i_+} exp(m F(i/m) + G(i/m))`.
    pub ln_s_m_delta: f64,
    /// `ln sum_{i_-}^{i_+} exp(m (i/m - rho*)^2 F''(rho*) / 2)`.
    pub ln_t_m_delta: f64,
    pub rho_star: f64,
    pub f2_rho: f64,
}

pub fn truncated_sum(params: &ModelParams, delta: f64) -> Result<TruncatedSum> {
    check_audit_size(params.m)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::param("delta", format!("window width {delta} must be positive")));
    }
    let lap = Laplace::new(params)?;
    let m = params.m;
    let rho = lap.rho_star();
    let w = window(m, rho, delta)?;
    let f2_rho = lap.f2(rho.clamp(0.0, 1.0 - f64::EPSILON))?;
    let mf = m as f64;
    let ln_s_m_delta = log_sum_exp((w.i_minus..=w.i_plus).map(|i| lap.exponent(i)));
    let ln_t_m_delta = log_sum_exp((w.i_minus..=w.i_plus).map(|i| {
        let d = i as f64 / mf - rho;
        mf * d * d * f2_rho / 2.0
    }));
    Ok(TruncatedSum {
        window: w,
        ln_s_m_delta,
        ln_t_m_delta,
        rho_star: rho,
        f2_rho,
    })
}

/// Per-index pieces of the decomposition for `i = 1..m-1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermAudit {
    pub i: usize,
    /// Exact `ln(pi_i / delta_i)`.
    pub exact: f64,
    /// `ln K + m F + G + S`.
    pub model: f64,
    pub stirling: f64,
    /// `sum_{k<=i} ln phi(k/m)` minus its closed form.
    pub r1: f64,
    /// `sum_{k<=i} ln psi(k/m)` minus its closed form.
    pub r2: f64,
}

impl TermAudit {
    /// `exact - model`; equals `1 + r2 - r1` up to rounding.
    pub fn remainder(&self) -> f64 {
        self.exact - self.model
    }
}

pub fn term_audit(params: &ModelParams) -> Result<Vec<TermAudit>> {
    check_audit_size(params.m)?;
    let lap = Laplace::new(params)?;
    let m = params.m;
    let spec = bd_chain::transition_probs(params)?;
    let terms = log_extinction_terms(&spec);
    let ln_k = lap.ln_k();
    let (mut sum_phi, mut sum_psi) = (Kahan::default(), Kahan::default());
    let mut out = Vec::with_capacity(m - 1);
    for i in 1..m {
        let x = i as f64 / m as f64;
        sum_phi.add((1.0 - lap.p + lap.slope() * x).ln());
        sum_psi.add(lap.psi(x).ln());
        let stirling = stirling_defect(m, i)?;
        out.push(TermAudit {
            i,
            exact: terms[i - 1].ln(),
            model: ln_k + lap.exponent(i) + stirling,
            stirling,
            r1: sum_phi.total() - lap.riemann_phi_closed(x),
            r2: sum_psi.total() - lap.riemann_psi_closed(x),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `sup |G|` on the grid `i/m` against `2 (1 + m Q^theta) ln m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GBound {
    pub sup: f64,
    pub bound: f64,
}

impl GBound {
    pub fn holds(&self) -> bool {
        self.sup <= self.bound
    }
}

pub fn g_bound(params: &ModelParams) -> Result<GBound> {
    check_audit_size(params.m)?;
    let lap = Laplace::new(params)?;
    let m = params.m;
    let sup = (1..m)
        .map(|i| lap.g_raw(i as f64 / m as f64).abs())
        .fold(0.0, f64::max);
    Ok(GBound {
        sup,
        bound: remainder_scale(params) * 2.0,
    })
}

/// First `m` in `ms` from which the `G` bound holds at every later entry.
pub fn smallest_m_for_g_bound(params: &ModelParams, ms: &[usize]) -> Result<Option<usize>> {
    let mut found = None;
    for &m in ms.iter().rev() {
        if g_bound(&params.with_m(m))?.holds() {
            found = Some(m);
        } else {
            break;
        }
    }
    Ok(found)
}

/// Measured `sup |F~|` on `[0, 1]` against `8 sigma ln(1/lambda) Q^theta / eta^2`,
/// with `eta = |L_q|` and `lambda = min(1 + L_q, 1/sigma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FTildeBound {
    pub sup: f64,
    pub bound: f64,
    pub lambda: f64,
    pub eta: f64,
}

pub fn f_tilde_bound(params: &ModelParams, grid: usize) -> Result<FTildeBound> {
    let lap = Laplace::new(params)?;
    let sup = (0..=grid)
        .map(|j| lap.f_tilde_raw(j as f64 / grid as f64).abs())
        .fold(0.0, f64::max);
    let eta = lap.l.abs();
    let lambda = (1.0 + lap.l).min(1.0 / params.sigma);
    let bound = 8.0 * params.sigma * (1.0 / lambda).ln() * lap.q_theta / (eta * eta);
    Ok(FTildeBound {
        sup,
        bound,
        lambda,
        eta,
    })
}

/// Measured `sup |F'''|` on `[0, rho* + delta/m]` against
/// `max(sigma^2, ((sigma - 1)/lambda)^2)`.
///
/// `lambda` must keep the window end below `1 - lambda/(sigma - 1)`;
/// `1 + L_q` alone puts that point exactly at `rho*`, so the window's
/// overhang is charged to `lambda` as well.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FThirdBound {
    pub sup: f64,
    pub bound: f64,
    pub upper_end: f64,
    pub lambda: f64,
}

pub fn f_third_bound(params: &ModelParams, delta: f64, grid: usize) -> Result<FThirdBound> {
    let lap = Laplace::new(params)?;
    let upper_end = (lap.rho_star() + delta / params.m as f64).min(1.0 - 1e-9);
    let sup = (0..=grid)
        .map(|j| lap.f3(upper_end * j as f64 / grid as f64).map(f64::abs))
        .try_fold(0.0, |acc: f64, v| v.map(|v| acc.max(v)))?;
    let sigma = params.sigma;
    let lambda = (1.0 + lap.l).min((sigma - 1.0) * (1.0 - upper_end));
    Ok(FThirdBound {
        sup,
        bound: (sigma * sigma).max(((sigma - 1.0) / lambda).powi(2)),
        upper_end,
        lambda,
    })
}

/// `(1 + m Q^theta) ln m`.
pub fn remainder_scale(params: &ModelParams) -> f64 {
    let m = params.m as f64;
    (1.0 + m * params.q_big_pow_theta()) * m.ln()
}

/// Flat decomposition of `ln E(tau_0 | N_0 = 1)`.
///
/// `None` fields were skipped: everything past `ln_exact` when the exact
/// time is infinite, and the window fields when `rho*` is outside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub params: ModelParams,
    pub degenerate: bool,
    pub rho_star: f64,
    pub ln_exact: f64,
    /// `m varphi((1-q)^ell)`.
    pub main_term: f64,
    /// `(1 + m Q^theta) ln m`.
    pub remainder_scale: f64,
    /// `ln_exact - main_term`.
    pub residual: Option<f64>,
    /// `|residual| / remainder_scale`, the measured constant.
    pub ratio: Option<f64>,
    pub ln_k: Option<f64>,
    /// `m F(rho*)`.
    pub m_f_rho: Option<f64>,
    /// `ln_exact - m F(rho*)`.
    pub residual_f_rho: Option<f64>,
    /// `ln_exact - ln K - m F(rho*)`.
    pub residual_f_rho_k: Option<f64>,
    pub stirling_max: Option<f64>,
    pub g_sup: Option<f64>,
    pub ln_s_m: Option<f64>,
    pub c_double_prime: Option<f64>,
    pub identity_residual: Option<f64>,
    pub ln_s_m_delta: Option<f64>,
    pub ln_t_m_delta: Option<f64>,
    /// `(S_m - S_m(delta)) / S_m`.
    pub truncation_share: Option<f64>,
    pub window: Option<Window>,
}

pub fn audit_report(params: &ModelParams) -> Result<AuditReport> {
    audit_report_with_delta(params, default_delta(params.m))
}

pub fn audit_report_with_delta(params: &ModelParams, delta: f64) -> Result<AuditReport> {
    check_audit_size(params.m)?;
    let lap = Laplace::new(params)?;
    let main_term = asymptotics::persistence_log_estimate(params)?.main;
    let scale = remainder_scale(params);
    let spec = bd_chain::transition_probs(params)?;
    let ln_exact = bd_chain::expected_extinction_time(&spec).ln();
    let rho = lap.rho_star();
    let mut report = AuditReport {
        params: *params,
        degenerate: lap.is_degenerate(),
        rho_star: rho,
        ln_exact,
        main_term,
        remainder_scale: scale,
        residual: None,
        ratio: None,
        ln_k: None,
        m_f_rho: None,
        residual_f_rho: None,
        residual_f_rho_k: None,
        stirling_max: None,
        g_sup: None,
        ln_s_m: None,
        c_double_prime: None,
        identity_residual: None,
        ln_s_m_delta: None,
        ln_t_m_delta: None,
        truncation_share: None,
        window: None,
    };
    if !ln_exact.is_finite() {
        return Ok(report);
    }
    let residual = ln_exact - main_term;
    report.residual = Some(residual);
    report.ratio = Some(residual.abs() / scale);

    let direct = direct_sum(params)?;
    report.ln_k = Some(direct.ln_k);
    report.ln_s_m = Some(direct.ln_s_m);
    report.c_double_prime = Some(direct.c_double_prime);
    report.identity_residual = Some(direct.identity_residual);
    let m = params.m;
    let mut stirling_max = 0.0f64;
    for i in 1..m {
        stirling_max = stirling_max.max(stirling_defect(m, i)?.abs());
    }
    report.stirling_max = Some(stirling_max);
    report.g_sup = Some(g_bound(params)?.sup);

    if rho > 0.0 && rho < 1.0 {
        let m_f_rho = m as f64 * lap.f(rho)?;
        report.m_f_rho = Some(m_f_rho);
        report.residual_f_rho = Some(ln_exact - m_f_rho);
        report.residual_f_rho_k = Some(ln_exact - direct.ln_k - m_f_rho);
        if let Ok(t) = truncated_sum(params, delta) {
            report.ln_s_m_delta = Some(t.ln_s_m_delta);
            report.ln_t_m_delta = Some(t.ln_t_m_delta);
            report.truncation_share = Some(-(t.ln_s_m_delta - direct.ln_s_m).exp_m1().max(-1.0));
            report.window = Some(t.window);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{q_from_survival, varphi};

    fn params(m: usize, ell: u64, kappa: u32, sigma: f64, q: f64, theta: u64) -> ModelParams {
        ModelParams::new(m, ell, kappa, sigma, q, theta).unwrap()
    }

    // Sum of logs, no gamma function involved.
    fn stirling_by_logs(m: usize, i: usize) -> f64 {
        let ln_binom: f64 = (1..=i).map(|k| ((m - i + k) as f64 / k as f64).ln()).sum();
        let (mf, x) = (m as f64, i as f64 / m as f64);
        ln_binom + mf * (1.0 - x) * (1.0 - x).ln() + mf * x * x.ln() + 0.5 * (mf * x * (1.0 - x)).ln()
    }

    #[test]
    fn stirling_examples() {
        let s = stirling_defect(2, 1).unwrap();
        assert!((s - (-1.039_720_770_839_917_9)).abs() < 1e-12);
        assert!(stirling_defect(100, 50).unwrap().abs() <= 2.0);
        for (m, i) in [(7, 2), (200, 13), (10_000, 4321)] {
            assert_eq!(stirling_defect(m, i).unwrap(), stirling_defect(m, m - i).unwrap());
        }
        assert!(stirling_defect(5, 0).is_err());
        assert!(stirling_defect(5, 5).is_err());
    }

    #[test]
    fn stirling_matches_direct_log_sum() {
        for m in [2, 3, 10, 57, 200] {
            for i in 1..m {
                let d = stirling_defect(m, i).unwrap() - stirling_by_logs(m, i);
                assert!(d.abs() < 1e-10, "m={m} i={i}: {d}");
            }
        }
    }

    #[test]
    fn h_series_matches_closed_form() {
        for t in [1e-4, -1e-4, 2e-4, -3e-4] {
            let direct = (1.0 + t) * f64::ln_1p(t) / t - 1.0;
            assert!((h(t) - direct).abs() < 1e-15);
        }
        assert_eq!(h(0.0), 0.0);
    }

    #[test]
    fn f_examples() {
        let p = params(100, 1, 2, 2.0, 0.25, 1);
        let lap = Laplace::new(&p).unwrap();
        assert_eq!(lap.f(0.0).unwrap(), 0.0);
        let rho = lap.rho_star();
        assert!((rho - 0.5).abs() < 1e-15);
        assert!((lap.f2(rho).unwrap() + 4.0 / 3.0).abs() < 1e-12);
        assert!((lap.f(rho).unwrap() - varphi(0.75, 2.0).unwrap()).abs() < 1e-12);
        assert!(lap.f1(rho).unwrap().abs() < 1e-14);
        assert!(lap.f(1.0).is_err());
        assert!(lap.f(-0.1).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for (sigma, q, theta) in [(2.0, 0.03, 1), (3.0, 0.01, 5), (1.5, 0.02, 10), (3.0, 0.0402, 1)] {
            let p = params(300, 10, 2, sigma, q, theta);
            let lap = Laplace::new(&p).unwrap();
            let hh = 1e-5;
            for x in [0.1, 0.3, 0.55, 0.8] {
                let c = |f: &dyn Fn(f64) -> f64| (f(x + hh) - f(x - hh)) / (2.0 * hh);
                let d1 = c(&|y| lap.f(y).unwrap());
                let d2 = c(&|y| lap.f1(y).unwrap());
                let d3 = c(&|y| lap.f2(y).unwrap());
                let d4 = c(&|y| lap.f3(y).unwrap());
                assert!((d1 - lap.f1(x).unwrap()).abs() < 1e-8);
                assert!((d2 - lap.f2(x).unwrap()).abs() < 1e-7);
                assert!((d3 - lap.f3(x).unwrap()).abs() < 1e-6);
                assert!((d4 - lap.f4(x).unwrap()).abs() < 1e-5 * (1.0 + lap.f4(x).unwrap().abs()));
            }
        }
    }

    #[test]
    fn f_concave_and_bounded_by_affine() {
        for (sigma, q) in [(1.5, 0.01), (2.0, 0.05), (3.0, 0.02), (5.0, 0.1)] {
            let p = params(50, 10, 2, sigma, q, 1);
            let lap = Laplace::new(&p).unwrap();
            if lap.is_degenerate() {
                continue;
            }
            let l = p.l_q();
            for j in 1..1000 {
                let x = j as f64 / 1000.0;
                let f2 = lap.f2(x).unwrap();
                assert!(f2 <= -(1.0 + l) / (1.0 + l * x) + 1e-12);
                assert!(f2 < 0.0);
                assert!(lap.f4(x).unwrap() < 0.0);
            }
        }
    }

    #[test]
    fn f_third_within_bound_on_window() {
        for (sigma, q) in [(1.5, 0.01), (2.0, 0.02), (3.0, 0.02), (5.0, 0.05), (2.0, 0.01)] {
            for m in [100, 200, 1000] {
                let p = params(m, 20, 2, sigma, q, 1);
                let b = f_third_bound(&p, default_delta(m), 4000).unwrap();
                assert!(b.sup <= b.bound, "{p:?}: {b:?}");
                assert!(b.lambda > 0.0 && b.lambda <= 1.0 + p.l_q());
            }
        }
    }

    #[test]
    fn f_tilde_vanishes_without_mutation_to_master() {
        let p = params(30, 200, 2, 2.0, 1e-3, 200);
        assert_eq!(p.discovery_prob(), 0.0);
        let lap = Laplace::new(&p).unwrap();
        for j in 0..=10 {
            assert_eq!(lap.f_tilde(j as f64 / 10.0).unwrap(), 0.0);
        }
        let zero = params(30, 20, 2, 2.0, 0.0, 1);
        assert_eq!(Laplace::new(&zero).unwrap().f_tilde(0.5).unwrap(), 0.0);
    }

    #[test]
    fn f_tilde_matches_definition() {
        let p = params(30, 5, 2, 2.5, 0.05, 1);
        let lap = Laplace::new(&p).unwrap();
        let (l, pp) = (p.l_q(), p.discovery_prob());
        for x in [0.0, 0.2, 0.7, 1.0] {
            let phi = 1.0 - pp + (l + pp) * x;
            let want = (1.0 + l * x) * (1.0 + l * x).ln() / l - phi * phi.ln() / (l + pp);
            assert!((lap.f_tilde(x).unwrap() - want).abs() < 1e-13);
        }
    }

    #[test]
    fn f_tilde_within_measured_bound() {
        for (sigma, q, theta) in [(1.5, 0.01, 1), (2.0, 0.02, 1), (3.0, 0.005, 1), (4.0, 0.05, 2)] {
            let p = params(100, 20, 2, sigma, q, theta);
            let b = f_tilde_bound(&p, 2000).unwrap();
            assert!(b.sup <= b.bound, "{p:?}: {b:?}");
        }
    }

    #[test]
    fn g_matches_definition() {
        let p = params(40, 6, 3, 2.0, 0.04, 2);
        let lap = Laplace::new(&p).unwrap();
        let (m, s, qt) = (40.0, p.survival(), p.q_big_pow_theta());
        for i in [1, 7, 20, 39] {
            let x = i as f64 / m;
            let psi = qt / 2.0 + (1.0 - qt / 2.0) * x;
            let want = ((x + 1.0) / (2.0 * s)).ln()
                + (m * qt / (2.0 - qt) - 0.5) * psi.ln()
                + m * x * (qt / (2.0 * x) + 1.0 - qt / 2.0).ln()
                - 0.5 * (m * x * (1.0 - x)).ln()
                + m * lap.f_tilde(x).unwrap();
            assert!((lap.g(x).unwrap() - want).abs() < 1e-11);
        }
        assert!(lap.g(0.5 / m).is_err());
        assert!(lap.g(1.0).is_err());
    }

    #[test]
    fn g_bound_with_tiny_q_theta() {
        let p = params(500, 40, 2, 2.0, 0.01, 40);
        assert!(p.q_big_pow_theta() < 1e-70);
        let lap = Laplace::new(&p).unwrap();
        let two_ln_m = 2.0 * 500f64.ln();
        for i in 1..500 {
            assert!(lap.g(i as f64 / 500.0).unwrap().abs() <= two_ln_m);
        }
    }

    #[test]
    fn smallest_m_scan_reports_the_tail() {
        let p = params(10, 20, 2, 2.0, 0.02, 1);
        let ms = [4, 8, 16, 32, 64, 128, 256];
        let found = smallest_m_for_g_bound(&p, &ms).unwrap();
        let m0 = found.expect("bound holds at the largest m");
        for &m in ms.iter().filter(|&&m| m >= m0) {
            assert!(g_bound(&p.with_m(m)).unwrap().holds());
        }
    }

    #[test]
    fn ln_k_reduces_at_zero_q() {
        for m in [2, 10, 1000] {
            let p = params(m, 5, 2, 2.0, 0.0, 1);
            assert!((k_const(&p).unwrap() - 0.5 * (m as f64).ln()).abs() < 1e-13);
        }
    }

    #[test]
    fn term_identity_holds() {
        for (m, sigma, q, theta, ell) in [
            (50, 2.0, 0.02, 1, 10),
            (80, 3.0, 0.05, 2, 8),
            (120, 1.5, 0.01, 1, 20),
            (60, 3.0, 0.0402, 1, 10),
        ] {
            let p = params(m, ell, 2, sigma, q, theta);
            for t in term_audit(&p).unwrap() {
                let want = 1.0 + t.r2 - t.r1;
                assert!(
                    (t.remainder() - want).abs() < 1e-8 * (1.0 + t.exact.abs()),
                    "{p:?} i={}: {} vs {}",
                    t.i,
                    t.remainder(),
                    want
                );
            }
        }
    }

    #[test]
    fn direct_sum_example_residual() {
        let p = params(50, 10, 2, 2.0, 0.02, 1);
        let d = direct_sum(&p).unwrap();
        assert!(d.identity_residual.abs() <= 5.0, "{d:?}");
    }

    #[test]
    fn window_rules() {
        let w = window(1000, 0.5, 100.0).unwrap();
        assert_eq!((w.i_minus, w.i_plus), (401, 600));
        let w = window(1000, 0.01, 100.0).unwrap();
        assert_eq!(w.i_minus, 1);
        assert!(matches!(window(1000, -0.5, 100.0), Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn truncated_sum_bounds() {
        for m in [64, 200, 1000] {
            let p = params(m, 20, 2, 2.0, 0.02, 1);
            let t = truncated_sum(&p, default_delta(m)).unwrap();
            let d = direct_sum(&p).unwrap();
            assert!(t.ln_s_m_delta <= d.ln_s_m + 1e-12);
            let tm = t.ln_t_m_delta.exp();
            assert!(tm <= m as f64);
            assert!(tm >= 0.5);
            assert!(tm >= (t.f2_rho / (2.0 * m as f64)).exp());
            let lap = Laplace::new(&p).unwrap();
            let sup_g = g_bound(&p).unwrap().sup;
            let upper = log_sum_exp([
                t.ln_s_m_delta,
                (m as f64).ln() + m as f64 * lap.f(t.rho_star).unwrap() + sup_g,
            ]);
            assert!(d.ln_s_m <= upper);
        }
    }

    #[test]
    fn truncation_share_pin() {
        let p = params(200, 20, 2, 2.0, 0.02, 1);
        let r = audit_report(&p).unwrap();
        let share = r.truncation_share.unwrap();
        assert!((share - 7.641_698_197_791e-3).abs() < 1e-9, "share = {share:e}");
    }

    #[test]
    fn report_skips_infinite_time() {
        let r = audit_report(&params(20, 5, 2, 2.0, 0.0, 1)).unwrap();
        assert_eq!(r.ln_exact, f64::INFINITY);
        assert!(r.residual.is_none() && r.ln_k.is_none() && r.window.is_none());
    }

    #[test]
    fn report_invariants() {
        let p = params(500, 25, 2, 2.0, 0.02, 25);
        let r = audit_report(&p).unwrap();
        assert!(r.stirling_max.unwrap() <= STIRLING_BOUND);
        let share = r.truncation_share.unwrap();
        assert!((0.0..=1.0).contains(&share));
        assert!(r.ratio.unwrap() <= 5.0, "{r:?}");
    }

    #[test]
    fn degenerate_branch_selected_near_l_zero() {
        // sigma = 3: L_q = 0 at (1-q)^ell = 2/3.
        let p = params(200, 30, 2, 3.0, q_from_survival(2.0 / 3.0 + 1e-4, 30), 1);
        let lap = Laplace::new(&p).unwrap();
        assert!(lap.is_degenerate());
        let rho = lap.rho_star();
        assert!(lap.f1(rho).unwrap().abs() < 1e-12);
        // F2(rho*) in the closed form obtained from the critical-point equation.
        let (s, pp, l) = (p.survival(), p.discovery_prob(), p.l_q());
        let b = l + pp;
        let phi_rho = 1.0 - pp + b * rho;
        let closed = (-1.0 - 1.0 / b) * (1.0 - rho).ln() - (3.0 * s).ln() / b + pp * phi_rho.ln() / b;
        assert!((lap.f(rho).unwrap() - closed).abs() < 1e-9 * closed.abs().max(1.0));
        // Decomposition still exact: F2 + G2 = F + G.
        for t in term_audit(&p).unwrap() {
            assert!((t.remainder() - (1.0 + t.r2 - t.r1)).abs() < 1e-7 * (1.0 + t.exact.abs()));
        }
    }
}
