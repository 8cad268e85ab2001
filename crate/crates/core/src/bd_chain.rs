//! The lumped birth–death chain on the number of master sequences and its
//! exact expected extinction time.

use crate::error::{Error, Result};
use crate::log_weight::{log_add_exp, LogSumExp, LogWeight};
use crate::params::ModelParams;

/// Largest state space the linear-system oracle accepts.
pub const ORACLE_MAX_STATES: usize = 10_000;

/// Jump probabilities of a birth–death chain on `{0, ..., m}`.
///
/// `delta(k)` is the probability to move from `k` to `k+1` (`k < m`),
/// `gamma(k)` from `k` to `k-1` (`k >= 1`). Remaining mass is a self-loop.
#[derive(Clone, Debug, PartialEq)]
pub struct BirthDeathSpec {
    // up[k] for k = 0..=m with up[m] = 0; down[k] for k = 0..=m with down[0] = 0.
    up: Vec<f64>,
    down: Vec<f64>,
}

impl BirthDeathSpec {
    /// Builds a chain from `delta[k]`, `k = 0..m-1`, and `gamma[k-1]`, `k = 1..=m`.
    pub fn new(delta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let m = delta.len();
        if m == 0 {
            return Err(Error::param("delta", "chain needs at least one state above 0"));
        }
        if gamma.len() != m {
            return Err(Error::param(
                "gamma",
                format!("expected {m} entries, got {}", gamma.len()),
            ));
        }
        let is_prob = |x: f64| (0.0..=1.0).contains(&x);
        if let Some(k) = delta.iter().position(|&d| !is_prob(d)) {
            return Err(Error::param("delta", format!("delta_{k} = {} is not a probability", delta[k])));
        }
        if let Some(k) = gamma.iter().position(|&g| !is_prob(g)) {
            return Err(Error::param(
                "gamma",
                format!("gamma_{} = {} is not a probability", k + 1, gamma[k]),
            ));
        }
        for k in 1..m {
            if delta[k] + gamma[k - 1] > 1.0 + 1e-12 {
                return Err(Error::param(
                    "delta",
                    format!("delta_{k} + gamma_{k} exceeds 1"),
                ));
            }
        }
        let mut up = delta;
        up.push(0.0);
        let mut down = Vec::with_capacity(m + 1);
        down.push(0.0);
        down.extend(gamma);
        Ok(BirthDeathSpec { up, down })
    }

    pub fn m(&self) -> usize {
        self.up.len() - 1
    }

    /// Up-jump probability; zero at `k = m`.
    pub fn delta(&self, k: usize) -> f64 {
        self.up[k]
    }

    /// Down-jump probability; zero at `k = 0`.
    pub fn gamma(&self, k: usize) -> f64 {
        self.down[k]
    }

    /// `delta_0 ..= delta_{m-1}`.
    pub fn deltas(&self) -> &[f64] {
        &self.up[..self.m()]
    }

    /// `gamma_1 ..= gamma_m`.
    pub fn gammas(&self) -> &[f64] {
        &self.down[1..]
    }
}

/// Up- and down-jump probabilities of the master count, from the raw
/// mixture formulas (parent choice, mutation, uniform replacement).
pub fn transition_probs(params: &ModelParams) -> Result<BirthDeathSpec> {
    params.validate()?;
    let m = params.m;
    let sigma = params.sigma;
    let s = params.survival();
    let load = params.mutation_load();
    let p = params.discovery_prob();

    let mf = m as f64;
    let mut delta = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    for k in 0..=m {
        let x = k as f64 / mf;
        let y = (m - k) as f64 / mf;
        let denom = sigma * x + y;
        if k < m {
            delta.push((sigma * x * y * s + y * y * p) / denom);
        }
        if k > 0 {
            gamma.push((sigma * x * x * load + x * y * (1.0 - p)) / denom);
        }
    }
    BirthDeathSpec::new(delta, gamma)
}

/// `ln pi_i` for `i = 1..=m`, plus `ln(pi_m / delta_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogPi {
    /// `ln_pi[i-1] = ln pi_i`.
    pub ln_pi: Vec<LogWeight>,
    /// `ln(delta_1 ... delta_{m-1} / (gamma_1 ... gamma_m))`.
    pub ln_pi_m_over_delta_m: LogWeight,
}

// Running log of a product of probabilities: a zero factor pins it at -inf.
fn ratio(ln_num: f64, ln_den: f64) -> LogWeight {
    if ln_num == f64::NEG_INFINITY {
        LogWeight::ZERO
    } else if ln_den == f64::NEG_INFINITY {
        LogWeight::INFINITY
    } else {
        LogWeight::from_ln(ln_num - ln_den)
    }
}

/// Stationary-style weights `pi_i = delta_1...delta_i / (gamma_1...gamma_i)`.
///
/// A vanishing `delta_k` makes every later weight zero (those states are
/// unreachable from below); otherwise a vanishing `gamma_k` makes it `+inf`.
pub fn log_pi(spec: &BirthDeathSpec) -> LogPi {
    let m = spec.m();
    let mut ln_num = 0.0;
    let mut ln_den = 0.0;
    let mut ln_pi = Vec::with_capacity(m);
    let mut ln_pi_m_over_delta_m = LogWeight::ZERO;
    for i in 1..=m {
        ln_den += spec.gamma(i).ln();
        if i == m {
            ln_pi_m_over_delta_m = ratio(ln_num, ln_den);
        }
        ln_num += spec.delta(i).ln();
        ln_pi.push(ratio(ln_num, ln_den));
    }
    LogPi {
        ln_pi,
        ln_pi_m_over_delta_m,
    }
}

/// Per-index terms `ln(pi_i / delta_i)` of the extinction-time sum,
/// `i = 1..=m`, the last one through the `pi_m / delta_m` convention.
pub fn log_extinction_terms(spec: &BirthDeathSpec) -> Vec<LogWeight> {
    let m = spec.m();
    let mut ln_num = 0.0;
    let mut ln_den = 0.0;
    let mut terms = Vec::with_capacity(m);
    for i in 1..=m {
        ln_den += spec.gamma(i).ln();
        terms.push(ratio(ln_num, ln_den));
        ln_num += spec.delta(i).ln();
    }
    terms
}

/// `ln E(tau_0 | N_0 = 1) = ln sum_{i=1}^m pi_i / delta_i`.
///
/// `+inf` when the chain can reach a state it cannot step down from (e.g.
/// `q = 0`, where `gamma_m = 0`).
pub fn expected_extinction_time(spec: &BirthDeathSpec) -> LogWeight {
    let mut acc = LogSumExp::new();
    for t in log_extinction_terms(spec) {
        acc.push(t.ln());
    }
    acc.total()
}

/// Expected hitting time of 0 from `start`, by solving the first-step
/// equations
///
/// ```text
/// h_0 = 0,  h_k = 1 + delta_k h_{k+1} + gamma_k h_{k-1} + (1 - delta_k - gamma_k) h_k
/// ```
///
/// with a tridiagonal elimination. The pivots of this M-matrix are carried as
/// `delta_k + excess_k` with the excess updated multiplicatively, so nothing
/// is ever subtracted and the whole sweep runs in the log domain.
pub fn extinction_time_oracle(spec: &BirthDeathSpec, start: usize) -> Result<LogWeight> {
    let m = spec.m();
    if m > ORACLE_MAX_STATES {
        return Err(Error::TooLarge {
            m,
            cap: ORACLE_MAX_STATES,
        });
    }
    if start > m {
        return Err(Error::StartOutOfRange { start, m });
    }
    if start == 0 {
        return Ok(LogWeight::ZERO);
    }
    // States above the first zero up-jump are unreachable from `start`.
    let top = (start..m).find(|&k| spec.delta(k) == 0.0).unwrap_or(m);
    if (1..=top).any(|k| spec.gamma(k) == 0.0) {
        return Ok(LogWeight::INFINITY);
    }

    let ln_up = |k: usize| {
        if k == top {
            f64::NEG_INFINITY
        } else {
            spec.delta(k).ln()
        }
    };
    let mut ln_pivot = vec![0.0; top + 1];
    let mut ln_rhs = vec![0.0; top + 1];
    let mut ln_excess = spec.gamma(1).ln();
    ln_pivot[1] = log_add_exp(ln_up(1), ln_excess);
    ln_rhs[1] = 0.0;
    for k in 2..=top {
        let ln_g = spec.gamma(k).ln();
        ln_excess = ln_g + ln_excess - ln_pivot[k - 1];
        ln_pivot[k] = log_add_exp(ln_up(k), ln_excess);
        ln_rhs[k] = log_add_exp(0.0, ln_g + ln_rhs[k - 1] - ln_pivot[k - 1]);
    }

    let mut ln_h = ln_rhs[top] - ln_pivot[top];
    for k in (start..top).rev() {
        ln_h = log_add_exp(ln_rhs[k], ln_up(k) + ln_h) - ln_pivot[k];
    }
    Ok(LogWeight::from_ln(ln_h))
}
