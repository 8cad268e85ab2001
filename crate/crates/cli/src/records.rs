//! Output rows. Every record is flat so that it maps one-to-one onto a CSV
//! row; JSON output nests the model parameters under `params`.

use qlab::laplace_audit::AuditReport;
use qlab::ModelParams;
use serde::{Deserialize, Serialize};

use crate::num::Num;

/// Columns moved under `params` in JSON output.
pub const PARAM_KEYS: [&str; 6] = ["m", "ell", "kappa", "sigma", "q", "theta"];

pub trait Record: Serialize + Default {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactRecord {
    pub m: usize,
    pub ell: u64,
    pub kappa: u32,
    pub sigma: Num,
    pub q: Num,
    pub theta: u64,
    pub log_e_tau0: Num,
    /// Present when `E(tau_0)` fits in a double.
    pub e_tau0: Option<Num>,
}

impl Record for ExactRecord {}

impl ExactRecord {
    pub fn new(p: &ModelParams, log_e_tau0: f64) -> Self {
        let e = log_e_tau0.exp();
        ExactRecord {
            m: p.m,
            ell: p.ell,
            kappa: p.kappa,
            sigma: p.sigma.into(),
            q: p.q.into(),
            theta: p.theta,
            log_e_tau0: log_e_tau0.into(),
            e_tau0: e.is_finite().then_some(Num(e)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    /// `ok` or `no_threshold`.
    pub status: String,
    pub sigma: Num,
    pub kappa: u32,
    pub ell: Option<u64>,
    pub m: Option<usize>,
    pub alpha: Option<Num>,
    pub c_star: Num,
    pub q_star: Option<Num>,
    /// `(1-q*)^ell` in the finite-ratio regime.
    pub survival_target: Option<Num>,
    pub population_ratio: Option<Num>,
    pub genome_ratio: Option<Num>,
    pub regime_plausible: Option<bool>,
}

impl Record for ThresholdRecord {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateRecord {
    pub m: usize,
    pub ell: u64,
    pub kappa: u32,
    pub sigma: Num,
    pub q: Num,
    pub theta: u64,
    /// `lumped` or `full`.
    pub model: String,
    /// `one-master` or `no-master`.
    pub init: String,
    pub replacement: String,
    pub seed: u64,
    pub runs: usize,
    pub start: usize,
    pub step_cap: u64,
    pub censored: usize,
    pub mean: Option<Num>,
    pub variance: Option<Num>,
    pub standard_error: Option<Num>,
    pub ci_low: Option<Num>,
    pub ci_high: Option<Num>,
    /// Exact `ln E(tau_0)` for the lumped chain from one master.
    pub exact_log_e_tau0: Option<Num>,
}

impl Record for SimulateRecord {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub m: usize,
    pub ell: u64,
    pub kappa: u32,
    pub sigma: Num,
    pub q: Num,
    pub theta: u64,
    pub degenerate: bool,
    pub rho_star: Num,
    pub ln_exact: Num,
    pub main_term: Num,
    pub remainder_scale: Num,
    pub residual: Option<Num>,
    pub ratio: Option<Num>,
    pub ln_k: Option<Num>,
    pub m_f_rho: Option<Num>,
    pub residual_f_rho: Option<Num>,
    pub residual_f_rho_k: Option<Num>,
    pub stirling_max: Option<Num>,
    pub g_sup: Option<Num>,
    pub ln_s_m: Option<Num>,
    pub c_double_prime: Option<Num>,
    pub identity_residual: Option<Num>,
    pub ln_s_m_delta: Option<Num>,
    pub ln_t_m_delta: Option<Num>,
    pub truncation_share: Option<Num>,
    pub i_minus: Option<usize>,
    pub i_plus: Option<usize>,
    pub delta: Option<Num>,
}

impl Record for AuditRecord {}

fn num(x: Option<f64>) -> Option<Num> {
    x.map(Num)
}

impl From<&AuditReport> for AuditRecord {
    fn from(r: &AuditReport) -> Self {
        let p = &r.params;
        AuditRecord {
            m: p.m,
            ell: p.ell,
            kappa: p.kappa,
            sigma: p.sigma.into(),
            q: p.q.into(),
            theta: p.theta,
            degenerate: r.degenerate,
            rho_star: r.rho_star.into(),
            ln_exact: r.ln_exact.into(),
            main_term: r.main_term.into(),
            remainder_scale: r.remainder_scale.into(),
            residual: num(r.residual),
            ratio: num(r.ratio),
            ln_k: num(r.ln_k),
            m_f_rho: num(r.m_f_rho),
            residual_f_rho: num(r.residual_f_rho),
            residual_f_rho_k: num(r.residual_f_rho_k),
            stirling_max: num(r.stirling_max),
            g_sup: num(r.g_sup),
            ln_s_m: num(r.ln_s_m),
            c_double_prime: num(r.c_double_prime),
            identity_residual: num(r.identity_residual),
            ln_s_m_delta: num(r.ln_s_m_delta),
            ln_t_m_delta: num(r.ln_t_m_delta),
            truncation_share: num(r.truncation_share),
            i_minus: r.window.map(|w| w.i_minus),
            i_plus: r.window.map(|w| w.i_plus),
            delta: r.window.map(|w| Num(w.delta)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub m: usize,
    pub ell: u64,
    pub kappa: u32,
    pub sigma: Num,
    pub q: Num,
    pub theta: u64,
    /// Offset in `q = ln sigma / ell - c / sqrt(ell m)`, when coupled.
    pub c: Option<Num>,
    /// `m / ell`, when coupled.
    pub alpha: Option<Num>,
    pub log_e_tau0: Num,
    /// `m varphi((1-q)^ell)`.
    pub main_term: Num,
    /// `ell ln kappa`.
    pub discovery: Num,
    /// Which time dominates: `main_term` against `discovery`.
    pub phase: String,
    /// Same comparison with the exact `ln E(tau_0)`.
    pub phase_exact: String,
    /// Limit classification from `c` against `c*`, when `c` is given.
    pub phase_asymptotic: Option<String>,
    pub sim_mean: Option<Num>,
    pub sim_standard_error: Option<Num>,
    pub sim_censored: Option<usize>,
}

impl Record for SweepRecord {}
