//! Closed-form asymptotic quantities: the persistence exponent `m varphi`,
//! the discovery exponent `ell ln kappa`, and the error thresholds obtained
//! by equating them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, ModelParams};

/// Below this `|1 - sigma(1-x)|`, [`varphi`] switches to its series.
pub const VARPHI_SERIES_CUTOFF: f64 = 1e-6;

/// `|L_q|` below which the degenerate branch (`L_q -> 0`) is reported.
pub const DEGENERATE_L_Q: f64 = 1e-3;

/// Relative tolerance for calling a comparison a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn q_big(params: &ModelParams) -> f64 {
    params::q_big(params.q, params.kappa)
}

pub fn l_q(params: &ModelParams) -> f64 {
    params.l_q()
}

/// `rho*` together with its degenerate-branch refinement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoStar {
    /// `(sigma (1-q)^ell - 1) / (sigma - 1)`.
    pub value: f64,
    /// `value >= 0`: the quasispecies maximum exists.
    pub in_hypothesis: bool,
    /// Exact maximiser when the `death_affine` term is kept whole:
    /// `(sigma s - 1 + p) / (sigma - 1 + p)`, `p = (1-q)^ell Q^theta`.
    pub degenerate_exact: f64,
    /// First-order coefficient of `degenerate_exact` in `Q^theta`.
    pub degenerate_slope: f64,
    /// `value + degenerate_slope * Q^theta`.
    pub degenerate_expansion: f64,
}

pub fn rho_star(params: &ModelParams) -> RhoStar {
    let sigma = params.sigma;
    let s = params.survival();
    let p = params.discovery_prob();
    let value = params.rho_star();
    let slope = sigma * s * params.mutation_load() / ((sigma - 1.0) * (sigma - 1.0));
    RhoStar {
        value,
        in_hypothesis: value >= 0.0,
        degenerate_exact: (sigma * s - 1.0 + p) / (sigma - 1.0 + p),
        degenerate_slope: slope,
        degenerate_expansion: value + slope * params.q_big_pow_theta(),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            what: "sigma",
            value: sigma,
            domain: "(1, inf)",
        })
    }
}

/// The persistence exponent per individual,
///
/// ```text
/// varphi(x) = [sigma(1-x) ln(sigma(1-x)/(sigma-1)) + ln(sigma x)] / (1 - sigma(1-x)),
/// ```
///
/// with the removable singularity at `x = (sigma-1)/sigma` handled by a series.
pub fn varphi(x: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::OutOfDomain {
            what: "x",
            value: x,
            domain: "(0, 1]",
        });
    }
    let u = 1.0 - sigma * (1.0 - x);
    if u.abs() < VARPHI_SERIES_CUTOFF {
        return Ok(varphi_series(u, sigma));
    }
    let a = sigma * (1.0 - x);
    let entropy = if a == 0.0 { 0.0 } else { a * (a / (sigma - 1.0)).ln() };
    Ok((entropy + (sigma * x).ln()) / u)
}

/// Series of `varphi` in `u = 1 - sigma(1-x)` around `u = 0`:
///
/// ```text
/// ln c - 1 + 1/c + sum_{n>=2} u^{n-1} [1/(n(n-1)) + (-1)^{n+1} / (n c^n)],  c = sigma - 1.
/// ```
pub fn varphi_series(u: f64, sigma: f64) -> f64 {
    let c = sigma - 1.0;
    let mut sum = c.ln() - 1.0 + 1.0 / c;
    let mut u_pow = 1.0;
    let mut c_pow = c;
    for n in 2..=8 {
        u_pow *= u;
        c_pow *= c;
        let nf = n as f64;
        let sign = if n % 2 == 0 { -1.0 } else { 1.0 };
        sum += u_pow * (1.0 / (nf * (nf - 1.0)) + sign / (nf * c_pow));
    }
    sum
}

/// Inverse of `varphi` on `[1/sigma, 1]`, where it increases from 0 to
/// `ln sigma`. Bisection down to adjacent floats.
pub fn varphi_inverse(y: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let top = sigma.ln();
    if !(y >= 0.0 && y <= top) {
        return Err(Error::OutOfDomain {
            what: "y",
            value: y,
            domain: "[0, ln sigma]",
        });
    }
    if y == 0.0 {
        return Ok(1.0 / sigma);
    }
    if y == top {
        return Ok(1.0);
    }
    let mut lo = 1.0 / sigma;
    let mut hi = 1.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if varphi(mid, sigma)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let err = |x: f64| (varphi(x, sigma).map(|v| (v - y).abs())).unwrap_or(f64::INFINITY);
    Ok(if err(lo) <= err(hi) { lo } else { hi })
}

/// `varphi''(1/sigma) = sigma^2 / (sigma - 1)`.
pub fn varphi_curvature_at_inverse_sigma(sigma: f64) -> f64 {
    sigma * sigma / (sigma - 1.0)
}

/// Quadratic approximation of `varphi` at its double zero `1/sigma`:
/// `(x - 1/sigma)^2 sigma^2 / (2(sigma - 1))`.
///
/// Valid for every `sigma > 1`, including `sigma = 2` where `1/sigma` is
/// also the removable singularity of the closed form.
pub fn varphi_expansion_near_inverse_sigma(x: f64, sigma: f64) -> f64 {
    let d = x - 1.0 / sigma;
    0.5 * d * d * varphi_curvature_at_inverse_sigma(sigma)
}

/// Log-scale estimate of the persistence time from one master.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceEstimate {
    /// `m varphi((1-q)^ell)`.
    pub main: f64,
    /// `(1 + m Q^theta) ln m`, the order of the remainder.
    pub remainder_scale: f64,
    /// `m q / (L_q (sigma L_q + (sigma-1) q))`, present when `|L_q|` is
    /// below [`DEGENERATE_L_Q`]. Signed.
    pub degenerate_term: Option<f64>,
    /// `rho* >= 0`; otherwise the estimate is outside its proven range.
    pub in_hypothesis: bool,
}

pub fn persistence_log_estimate(params: &ModelParams) -> Result<PersistenceEstimate> {
    params.validate()?;
    let m = params.m as f64;
    let main = m * varphi(params.survival(), params.sigma)?;
    let remainder_scale = (1.0 + m * params.q_big_pow_theta()) * m.ln();
    let l = params.l_q();
    let degenerate_term = (l.abs() < DEGENERATE_L_Q).then(|| {
        m * params.q / (l * (params.sigma * l + (params.sigma - 1.0) * params.q))
    });
    Ok(PersistenceEstimate {
        main,
        remainder_scale,
        degenerate_term,
        in_hypothesis: params.rho_star() >= 0.0,
    })
}

/// `ell ln kappa`: log-scale discovery time of the master from a neutral
/// population.
pub fn discovery_log_estimate(ell: u64, kappa: u32) -> f64 {
    ell as f64 * f64::from(kappa).ln()
}

/// `sqrt(2 (sigma - 1) ln kappa)`.
pub fn critical_constant(sigma: f64, kappa: u32) -> f64 {
    (2.0 * (sigma - 1.0) * f64::from(kappa).ln()).sqrt()
}

/// Two-term error threshold for a large population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// `ln sigma / ell - c* / sqrt(ell m)`.
    pub q_star: f64,
    /// `c* = sqrt(2 (sigma - 1) ln kappa)`.
    pub c_star: f64,
    /// `m / ell`; the expansion wants it large.
    pub population_ratio: f64,
    /// `ell^2 / (m ln m)`; the expansion wants it large.
    pub genome_ratio: f64,
    /// Both ratios exceed 1.
    pub regime_plausible: bool,
}

pub fn error_threshold(sigma: f64, kappa: u32, ell: u64, m: usize) -> ThresholdEstimate {
    let c_star = critical_constant(sigma, kappa);
    let (l, mf) = (ell as f64, m as f64);
    let q_star = sigma.ln() / l - c_star / (l * mf).sqrt();
    let population_ratio = mf / l;
    let genome_ratio = l * l / (mf * mf.ln());
    ThresholdEstimate {
        q_star,
        c_star,
        population_ratio,
        genome_ratio,
        regime_plausible: population_ratio > 1.0 && genome_ratio > 1.0,
    }
}

/// Mutation probability `q` with `q = ln sigma / ell - c / sqrt(ell m)`.
pub fn q_on_threshold_scale(sigma: f64, ell: u64, m: usize, c: f64) -> f64 {
    sigma.ln() / ell as f64 - c / (ell as f64 * m as f64).sqrt()
}

/// Fraction of masters in the quasispecies phase at offset `c`:
/// `c / (sigma - 1) sqrt(ell / m)`.
pub fn master_fraction(c: f64, sigma: f64, ell: u64, m: usize) -> f64 {
    c / (sigma - 1.0) * (ell as f64 / m as f64).sqrt()
}

/// Limits describing an asymptotic regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    /// `lim ell q`.
    pub a: f64,
    /// `lim m / ell`, possibly `+inf`.
    pub alpha: f64,
    /// Offset in `q = ln sigma / ell - c / sqrt(ell m)`; used when `alpha = inf`.
    pub c: f64,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::param("a", format!("lim ell q = {} must be in (0, inf)", self.a)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::param("alpha", format!("lim m/ell = {} must be >= 0", self.alpha)));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::param("c", format!("offset {} must be finite and >= 0", self.c)));
        }
        Ok(())
    }

    /// `sigma e^{-a} - 1 >= 0`.
    pub fn rho_condition(&self, sigma: f64) -> bool {
        sigma * (-self.a).exp() - 1.0 >= 0.0
    }

    /// `sigma e^{-a} - 1 != sigma - 2`, at tie tolerance.
    pub fn non_degenerate(&self, sigma: f64) -> bool {
        let lhs = sigma * (-self.a).exp() - 1.0;
        !ties(lhs, sigma - 2.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseLabel {
    Neutral,
    Quasispecies,
    Critical,
    NoThreshold,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::Neutral => "neutral",
            PhaseLabel::Quasispecies => "quasispecies",
            PhaseLabel::Critical => "critical",
            PhaseLabel::NoThreshold => "no_threshold",
        }
    }
}

impl std::fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PhaseLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "neutral" => Ok(PhaseLabel::Neutral),
            "quasispecies" => Ok(PhaseLabel::Quasispecies),
            "critical" => Ok(PhaseLabel::Critical),
            "no_threshold" => Ok(PhaseLabel::NoThreshold),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: PhaseLabel,
    /// Threshold target `(1-q*)^ell` in the finite-ratio regime.
    pub survival_target: Option<f64>,
    /// `sigma e^{-a} - 1 >= 0` holds; when it fails the label is reported
    /// but the regime lies outside the estimates.
    pub rho_condition: bool,
    pub non_degenerate: bool,
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

fn compare(lhs: f64, rhs: f64) -> PhaseLabel {
    if ties(lhs, rhs) {
        PhaseLabel::Critical
    } else if lhs > rhs {
        PhaseLabel::Quasispecies
    } else {
        PhaseLabel::Neutral
    }
}

/// Which phase dominates in the given regime.
///
/// * `alpha = inf`: quasispecies iff `c > c*`.
/// * `0 < alpha < inf`: no threshold unless `alpha > ln kappa / ln sigma`;
///   otherwise quasispecies iff `e^{-a}` exceeds the threshold target
///   `varphi^{-1}(ln kappa / alpha)`.
/// * `alpha = 0`: always neutral, reported as no threshold.
pub fn classify_regime(spec: &RegimeSpec, sigma: f64, kappa: u32) -> Result<Classification> {
    spec.validate()?;
    check_sigma(sigma)?;
    if kappa < 2 {
        return Err(Error::param("kappa", "alphabet needs at least 2 letters"));
    }
    let rho_condition = spec.rho_condition(sigma);
    let non_degenerate = spec.non_degenerate(sigma);
    let (label, survival_target) = if spec.alpha == f64::INFINITY {
        (compare(spec.c, critical_constant(sigma, kappa)), None)
    } else if spec.alpha == 0.0 {
        (PhaseLabel::NoThreshold, None)
    } else {
        match threshold_alpha(sigma, kappa, spec.alpha) {
            Ok(target) => (compare((-spec.a).exp(), target), Some(target)),
            Err(Error::NoThreshold { .. }) => (PhaseLabel::NoThreshold, None),
            Err(e) => return Err(e),
        }
    };
    Ok(Classification {
        label,
        survival_target,
        rho_condition,
        non_degenerate,
    })
}

/// Threshold target `(1-q*)^ell = varphi^{-1}(ln kappa / alpha)` when
/// `m / ell -> alpha`.
pub fn threshold_alpha(sigma: f64, kappa: u32, alpha: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let critical = f64::from(kappa).ln() / sigma.ln();
    if !(alpha > critical) {
        return Err(Error::NoThreshold { alpha, critical });
    }
    varphi_inverse(f64::from(kappa).ln() / alpha, sigma)
}

/// `q = 1 - x^{1/ell}`, computed as `-expm1(ln x / ell)`.
pub fn q_from_survival(x: f64, ell: u64) -> f64 {
    -(x.ln() / ell as f64).exp_m1()
}
