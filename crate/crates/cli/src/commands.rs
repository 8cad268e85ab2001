use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use qlab::asymptotics::{self, PhaseLabel, RegimeSpec, TIE_TOLERANCE};
use qlab::simulator::{self, FullConfig, Init, ReplacementRule, DEFAULT_STEP_CAP};
use qlab::{bd_chain, laplace_audit, ModelParams};

use crate::config::{self, Mutation, Population, SweepConfig, SweepPoint, Theta};
use crate::num::Num;
use crate::output::{write_records, Format};
use crate::records::{AuditRecord, ExactRecord, SimulateRecord, SweepRecord, ThresholdRecord};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "qlab", version, about = "Persistence time and error threshold of the sharp-peak Moran model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact ln E(tau_0) of the lumped chain from one master.
    Exact(ExactArgs),
    /// Two-term error threshold, or the threshold target at a finite m/ell.
    Threshold(ThresholdArgs),
    /// Monte Carlo hitting times of the lumped chain or the full model.
    Simulate(SimulateArgs),
    /// Laplace decomposition of ln E(tau_0), one row per population size.
    Audit(AuditArgs),
    /// Evaluate a grid read from a key = value config file.
    Sweep(SweepArgs),
    /// Sweep the threshold offset c at fixed sigma, kappa, ell and m.
    PhaseDiagram(PhaseDiagramArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub ell: u64,
    #[arg(long, default_value_t = 2)]
    pub kappa: u32,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub theta: u64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(self.m, self.ell, self.kappa, self.sigma, self.q, self.theta)?)
    }
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("regime").required(true).args(["alpha", "ell"])))]
pub struct ThresholdArgs {
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub kappa: u32,
    #[arg(long, requires = "m", conflicts_with = "alpha")]
    pub ell: Option<u64>,
    #[arg(long, requires = "ell")]
    pub m: Option<usize>,
    /// Limit of m / ell.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Lumped,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    OneMaster,
    NoMaster,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReplacementArg {
    UniformAll,
    ExcludeParent,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "lumped")]
    pub kind: ModelKind,
    /// Full model only.
    #[arg(long, value_enum, default_value = "one-master")]
    pub init: InitArg,
    /// Full model only.
    #[arg(long, value_enum, default_value = "uniform-all")]
    pub replacement: ReplacementArg,
    /// Lumped model only: initial number of masters.
    #[arg(long, default_value_t = 1)]
    pub start: usize,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    pub step_cap: u64,
    /// Full model only: recount masters after every step.
    #[arg(long)]
    pub verify_counts: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// One or more population sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub m: Vec<usize>,
    #[arg(long)]
    pub ell: u64,
    #[arg(long, default_value_t = 2)]
    pub kappa: u32,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub theta: u64,
    /// Window half-width; defaults to m^(2/3).
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    /// Overrides `format` in the config.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Overrides `output` in the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhaseDiagramArgs {
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub kappa: u32,
    #[arg(long, default_value_t = 100)]
    pub ell: u64,
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    /// `ell`, `one` or an integer.
    #[arg(long, default_value = "one")]
    pub theta: Theta,
    /// Offsets: a list or a `lin:a:b:n` / `log:a:b:n` range.
    #[arg(long, default_value = "lin:0:2:21")]
    pub c: String,
    #[arg(long, default_value_t = 0)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    pub step_cap: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Exact(a) => exact(&a),
        Command::Threshold(a) => threshold(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Audit(a) => audit(&a),
        Command::Sweep(a) => sweep(&a),
        Command::PhaseDiagram(a) => phase_diagram(&a),
    }
}

fn emit<R: crate::records::Record>(records: &[R], out: &OutputArgs) -> Result<(), CliError> {
    write_records(records, out.format.unwrap_or_default(), out.output.as_deref())?;
    Ok(())
}

fn exact(a: &ExactArgs) -> Result<(), CliError> {
    let p = a.model.params()?;
    let ln = bd_chain::expected_extinction_time(&bd_chain::transition_probs(&p)?).ln();
    emit(&[ExactRecord::new(&p, ln)], &a.out)
}

fn threshold(a: &ThresholdArgs) -> Result<(), CliError> {
    if a.kappa < 2 {
        return Err(CliError::Usage("--kappa must be at least 2".into()));
    }
    if !(a.sigma.is_finite() && a.sigma > 1.0) {
        return Err(CliError::Usage("--sigma must be finite and > 1".into()));
    }
    let mut rec = ThresholdRecord {
        status: "ok".into(),
        sigma: a.sigma.into(),
        kappa: a.kappa,
        c_star: asymptotics::critical_constant(a.sigma, a.kappa).into(),
        ..Default::default()
    };
    match (a.ell, a.m, a.alpha) {
        (Some(ell), Some(m), None) => {
            if ell < 1 || m < 2 {
                return Err(CliError::Usage("--ell must be >= 1 and --m >= 2".into()));
            }
            let t = asymptotics::error_threshold(a.sigma, a.kappa, ell, m);
            rec.ell = Some(ell);
            rec.m = Some(m);
            rec.q_star = Some(t.q_star.into());
            rec.survival_target = Some(Num((ell as f64 * (-t.q_star).ln_1p()).exp()));
            rec.population_ratio = Some(t.population_ratio.into());
            rec.genome_ratio = Some(t.genome_ratio.into());
            rec.regime_plausible = Some(t.regime_plausible);
            emit(&[rec], &a.out)
        }
        (None, None, Some(alpha)) => {
            rec.alpha = Some(alpha.into());
            match asymptotics::threshold_alpha(a.sigma, a.kappa, alpha) {
                Ok(x) => {
                    rec.survival_target = Some(x.into());
                    emit(&[rec], &a.out)
                }
                Err(e @ qlab::Error::NoThreshold { .. }) => {
                    rec.status = PhaseLabel::NoThreshold.as_str().into();
                    emit(&[rec], &a.out)?;
                    Err(e.into())
                }
                Err(e) => Err(e.into()),
            }
        }
        _ => Err(CliError::Usage("give either --ell and --m, or --alpha".into())),
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let p = a.model.params()?;
    let (samples, start, init) = match a.kind {
        ModelKind::Lumped => (
            simulator::simulate_lumped(&p, a.runs, a.seed, a.start, a.step_cap)?,
            a.start,
            if a.start == 0 { "no-master" } else { "one-master" },
        ),
        ModelKind::Full => {
            let cfg = FullConfig {
                init: match a.init {
                    InitArg::OneMaster => Init::OneMaster,
                    InitArg::NoMaster => Init::NoMaster,
                },
                step_cap: a.step_cap,
                replacement: match a.replacement {
                    ReplacementArg::UniformAll => ReplacementRule::UniformAll,
                    ReplacementArg::ExcludeParent => ReplacementRule::ExcludeParent,
                },
                verify_counts: a.verify_counts,
            };
            let (start, init) = match a.init {
                InitArg::OneMaster => (1, "one-master"),
                InitArg::NoMaster => (0, "no-master"),
            };
            (simulator::simulate_full(&p, a.runs, a.seed, &cfg)?, start, init)
        }
    };
    let summary = match simulator::summarize(&samples) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("no summary: {e}");
            None
        }
    };
    let exact = if start == 1 {
        Some(Num(bd_chain::expected_extinction_time(&bd_chain::transition_probs(&p)?).ln()))
    } else {
        None
    };
    let rec = SimulateRecord {
        m: p.m,
        ell: p.ell,
        kappa: p.kappa,
        sigma: p.sigma.into(),
        q: p.q.into(),
        theta: p.theta,
        model: match a.kind {
            ModelKind::Lumped => "lumped",
            ModelKind::Full => "full",
        }
        .into(),
        init: init.into(),
        replacement: match (a.kind, a.replacement) {
            (ModelKind::Lumped, _) | (_, ReplacementArg::UniformAll) => "uniform-all",
            (_, ReplacementArg::ExcludeParent) => "exclude-parent",
        }
        .into(),
        seed: a.seed,
        runs: a.runs,
        start,
        step_cap: a.step_cap,
        censored: samples.censored,
        mean: summary.map(|s| Num(s.mean)),
        variance: summary.map(|s| Num(s.variance)),
        standard_error: summary.map(|s| Num(s.standard_error)),
        ci_low: summary.map(|s| Num(s.ci95.0)),
        ci_high: summary.map(|s| Num(s.ci95.1)),
        exact_log_e_tau0: exact,
    };
    emit(&[rec], &a.out)
}

fn audit(a: &AuditArgs) -> Result<(), CliError> {
    let params: Vec<ModelParams> = a
        .m
        .iter()
        .map(|&m| ModelParams::new(m, a.ell, a.kappa, a.sigma, a.q, a.theta))
        .collect::<Result<_, _>>()?;
    let rows: Vec<AuditRecord> = params
        .par_iter()
        .map(|p| {
            let delta = a.delta.unwrap_or_else(|| laplace_audit::default_delta(p.m));
            laplace_audit::audit_report_with_delta(p, delta).map(|r| AuditRecord::from(&r))
        })
        .collect::<Result<_, _>>()?;
    emit(&rows, &a.out)
}

fn dominance(main: f64, discovery: f64) -> PhaseLabel {
    if (main - discovery).abs() <= TIE_TOLERANCE * main.abs().max(discovery.abs()) {
        PhaseLabel::Critical
    } else if main > discovery {
        PhaseLabel::Quasispecies
    } else {
        PhaseLabel::Neutral
    }
}

fn limit_phase(point: &SweepPoint) -> Option<PhaseLabel> {
    let p = &point.params;
    let spec = match (point.c, point.alpha) {
        (Some(c), _) => RegimeSpec {
            a: p.sigma.ln(),
            alpha: f64::INFINITY,
            c,
        },
        (None, Some(alpha)) => RegimeSpec {
            a: p.ell as f64 * p.q,
            alpha,
            c: 0.0,
        },
        (None, None) => return None,
    };
    match asymptotics::classify_regime(&spec, p.sigma, p.kappa) {
        Ok(c) => Some(c.label),
        Err(e) => {
            log::warn!("no limit phase for {p:?}: {e}");
            None
        }
    }
}

/// One sweep row. Simulation, when requested, uses stream `seed + index`.
pub fn sweep_point(point: &SweepPoint, index: usize, cfg: &SweepConfig) -> Result<SweepRecord, CliError> {
    let p = &point.params;
    let log_e_tau0 = bd_chain::expected_extinction_time(&bd_chain::transition_probs(p)?).ln();
    let main_term = asymptotics::persistence_log_estimate(p)?.main;
    let discovery = asymptotics::discovery_log_estimate(p.ell, p.kappa);
    let sim = if cfg.runs > 0 {
        let seed = cfg.seed.wrapping_add(index as u64);
        let samples = simulator::simulate_lumped(p, cfg.runs, seed, 1, cfg.step_cap)?;
        let summary = simulator::summarize(&samples)
            .inspect_err(|e| log::warn!("point {index}: {e}"))
            .ok();
        Some((summary, samples.censored))
    } else {
        None
    };
    Ok(SweepRecord {
        m: p.m,
        ell: p.ell,
        kappa: p.kappa,
        sigma: p.sigma.into(),
        q: p.q.into(),
        theta: p.theta,
        c: point.c.map(Num),
        alpha: point.alpha.map(Num),
        log_e_tau0: log_e_tau0.into(),
        main_term: main_term.into(),
        discovery: discovery.into(),
        phase: dominance(main_term, discovery).as_str().into(),
        phase_exact: dominance(log_e_tau0, discovery).as_str().into(),
        phase_asymptotic: limit_phase(point).map(|l| l.as_str().into()),
        sim_mean: sim.and_then(|(s, _)| s).map(|s| Num(s.mean)),
        sim_standard_error: sim.and_then(|(s, _)| s).map(|s| Num(s.standard_error)),
        sim_censored: sim.map(|(_, c)| c),
    })
}

/// All rows of a sweep, computed in parallel and returned in grid order.
pub fn sweep_records(cfg: &SweepConfig) -> Result<Vec<SweepRecord>, CliError> {
    let points = cfg.points();
    points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| sweep_point(pt, i, cfg))
        .collect()
}

fn run_sweep(cfg: &SweepConfig, format: Option<Format>, output: Option<&Path>) -> Result<(), CliError> {
    let rows = sweep_records(cfg)?;
    let output = output.or(cfg.output.as_deref());
    write_records(&rows, format.unwrap_or(cfg.format), output)?;
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.config)?;
    let cfg: SweepConfig = text.parse()?;
    run_sweep(&cfg, a.format, a.output.as_deref())
}

fn phase_diagram(a: &PhaseDiagramArgs) -> Result<(), CliError> {
    let cs = config::parse_floats(0, "c", &a.c)?;
    let cfg = SweepConfig {
        population: Population::Sizes(vec![a.m]),
        ell: vec![a.ell],
        kappa: vec![a.kappa],
        sigma: vec![a.sigma],
        mutation: Mutation::Offsets(cs),
        theta: vec![a.theta],
        format: Format::default(),
        output: None,
        seed: a.seed,
        runs: a.runs,
        step_cap: a.step_cap,
    };
    run_sweep(&cfg, a.out.format, a.out.output.as_deref())
}
