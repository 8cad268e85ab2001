//! Seeded Monte Carlo estimates of the persistence and discovery times.
//!
//! Replica `r` draws from ChaCha8 seeded with the root seed on stream `r`, so
//! results do not depend on how replicas are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bd_chain;
use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Upper limit on `m * ell` for the sequence-level model.
pub const FULL_MAX_CELLS: u64 = 100_000_000;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HittingSamples {
    /// Uncensored hitting times in replica order.
    pub samples: Vec<u64>,
    pub seed: u64,
    pub n_runs: usize,
    /// Runs that did not hit before the step cap.
    pub censored: usize,
}

impl HittingSamples {
    fn from_outcomes(outcomes: Vec<Option<u64>>, seed: u64) -> Self {
        let n_runs = outcomes.len();
        let samples: Vec<u64> = outcomes.into_iter().flatten().collect();
        HittingSamples {
            censored: n_runs - samples.len(),
            samples,
            seed,
            n_runs,
        }
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_runs as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample variance, `n - 1` denominator.
    pub variance: f64,
    pub standard_error: f64,
    pub ci95: (f64, f64),
    /// Uncensored sample count.
    pub n: usize,
    pub censored_fraction: f64,
}

pub fn summarize(samples: &HittingSamples) -> Result<Summary> {
    let n = samples.samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { uncensored: n });
    }
    let nf = n as f64;
    let mean = samples.samples.iter().map(|&x| x as f64).sum::<f64>() / nf;
    let variance = samples
        .samples
        .iter()
        .map(|&x| (x as f64 - mean).powi(2))
        .sum::<f64>()
        / (nf - 1.0);
    let standard_error = (variance / nf).sqrt();
    Ok(Summary {
        mean,
        variance,
        standard_error,
        ci95: (mean - Z95 * standard_error, mean + Z95 * standard_error),
        n,
        censored_fraction: samples.censored_fraction(),
    })
}

fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

fn check_runs(n_runs: usize, step_cap: u64) -> Result<()> {
    if n_runs == 0 {
        return Err(Error::param("n_runs", "need at least one replica"));
    }
    if step_cap == 0 {
        return Err(Error::param("step_cap", "step cap must be positive"));
    }
    Ok(())
}

/// Holding-time law and jump direction of one state of the lumped chain.
#[derive(Clone, Copy, Debug)]
struct StateLaw {
    /// Failures before a move; `None` when the state is absorbing.
    wait: Option<Geometric>,
    up: f64,
}

/// Hitting time of 0 for the lumped chain from `start` masters.
///
/// Self-loops are skipped in one geometric draw, so a run costs one draw
/// per actual jump. A run that reaches a state with no way out, or whose
/// hitting time exceeds `step_cap`, is censored.
pub fn simulate_lumped(
    params: &ModelParams,
    n_runs: usize,
    seed: u64,
    start: usize,
    step_cap: u64,
) -> Result<HittingSamples> {
    check_runs(n_runs, step_cap)?;
    let spec = bd_chain::transition_probs(params)?;
    let m = spec.m();
    if start > m {
        return Err(Error::StartOutOfRange { start, m });
    }
    if start == 0 {
        log::warn!("start = 0 is already absorbed; every sample is 0");
        return Ok(HittingSamples::from_outcomes(vec![Some(0); n_runs], seed));
    }
    let laws: Vec<StateLaw> = (0..=m)
        .map(|k| {
            let (d, g) = (spec.delta(k), spec.gamma(k));
            let total = (d + g).min(1.0);
            StateLaw {
                wait: (total > 0.0).then(|| Geometric::new(total).expect("probability in (0, 1]")),
                up: if total > 0.0 { d / (d + g) } else { 0.0 },
            }
        })
        .collect();
    let outcomes = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut k = start;
            let mut t: u64 = 0;
            while k > 0 {
                let law = laws[k];
                let wait = law.wait?;
                t = t.saturating_add(wait.sample(&mut rng).saturating_add(1));
                if t > step_cap {
                    return None;
                }
                if rng.random::<f64>() < law.up {
                    k += 1;
                } else {
                    k -= 1;
                }
            }
            Some(t)
        })
        .collect();
    Ok(HittingSamples::from_outcomes(outcomes, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    /// One master among `m - 1` random non-masters; records `tau_0`.
    OneMaster,
    /// `m` random non-masters; records `tau*`.
    NoMaster,
}

/// Which slot an offspring may replace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplacementRule {
    /// Uniform over all `m` slots, parent included. Matches the lumped chain.
    #[default]
    UniformAll,
    /// Uniform over the `m - 1` slots other than the parent.
    ExcludeParent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullConfig {
    pub init: Init,
    pub step_cap: u64,
    pub replacement: ReplacementRule,
    /// Recount the masters after every step and panic on a mismatch.
    pub verify_counts: bool,
}

impl FullConfig {
    pub fn new(init: Init) -> Self {
        FullConfig {
            init,
            step_cap: DEFAULT_STEP_CAP,
            replacement: ReplacementRule::UniformAll,
            verify_counts: cfg!(debug_assertions),
        }
    }
}

/// Population of `m` genomes of length `ell`; the master is all zeros.
#[derive(Clone, Debug)]
pub struct FullModelState {
    ell: usize,
    kappa: u8,
    genomes: Vec<u8>,
    is_master: Vec<bool>,
    masters: Vec<usize>,
    others: Vec<usize>,
    // Position of each slot inside `masters` or `others`.
    pos: Vec<usize>,
}

impl FullModelState {
    fn new(m: usize, ell: usize, kappa: u8, init: Init, rng: &mut impl Rng) -> Self {
        let mut genomes = vec![0u8; m * ell];
        let first_random = match init {
            Init::OneMaster => 1,
            Init::NoMaster => 0,
        };
        for slot in first_random..m {
            let g = &mut genomes[slot * ell..(slot + 1) * ell];
            loop {
                g.iter_mut().for_each(|c| *c = rng.random_range(0..kappa));
                if g.iter().any(|&c| c != 0) {
                    break;
                }
            }
        }
        let mut state = FullModelState {
            ell,
            kappa,
            genomes,
            is_master: vec![false; m],
            masters: Vec::new(),
            others: Vec::new(),
            pos: vec![0; m],
        };
        for slot in 0..m {
            let master = state.genome(slot).iter().all(|&c| c == 0);
            state.is_master[slot] = master;
            state.list_mut(master).push(slot);
            state.pos[slot] = state.list(master).len() - 1;
        }
        state
    }

    fn list(&self, master: bool) -> &Vec<usize> {
        if master {
            &self.masters
        } else {
            &self.others
        }
    }

    fn list_mut(&mut self, master: bool) -> &mut Vec<usize> {
        if master {
            &mut self.masters
        } else {
            &mut self.others
        }
    }

    pub fn genome(&self, slot: usize) -> &[u8] {
        &self.genomes[slot * self.ell..(slot + 1) * self.ell]
    }

    pub fn master_count(&self) -> usize {
        self.masters.len()
    }

    pub fn recount_masters(&self) -> usize {
        self.genomes
            .chunks_exact(self.ell)
            .filter(|g| g.iter().all(|&c| c == 0))
            .count()
    }

    fn set_master(&mut self, slot: usize, master: bool) {
        if self.is_master[slot] == master {
            return;
        }
        let old = self.is_master[slot];
        let p = self.pos[slot];
        let list = self.list_mut(old);
        list.swap_remove(p);
        if let Some(&moved) = list.get(p) {
            self.pos[moved] = p;
        }
        self.list_mut(master).push(slot);
        self.pos[slot] = self.list(master).len() - 1;
        self.is_master[slot] = master;
    }

    /// One replication: weighted parent, mutated copy, replaced slot.
    fn step(
        &mut self,
        sigma: f64,
        mutation: Option<&Geometric>,
        rule: ReplacementRule,
        rng: &mut impl Rng,
    ) {
        let m = self.is_master.len();
        let n_master = self.masters.len() as f64;
        let weight_master = sigma * n_master;
        let total = weight_master + (m as f64 - n_master);
        let parent = if rng.random::<f64>() * total < weight_master {
            self.masters[rng.random_range(0..self.masters.len())]
        } else {
            self.others[rng.random_range(0..self.others.len())]
        };
        let target = match rule {
            ReplacementRule::UniformAll => rng.random_range(0..m),
            ReplacementRule::ExcludeParent => {
                let t = rng.random_range(0..m - 1);
                if t >= parent {
                    t + 1
                } else {
                    t
                }
            }
        };
        let ell = self.ell;
        if target != parent {
            self.genomes
                .copy_within(parent * ell..(parent + 1) * ell, target * ell);
        }
        let mut mutated = false;
        if let Some(geo) = mutation {
            let child = &mut self.genomes[target * ell..(target + 1) * ell];
            let mut site = geo.sample(rng);
            while site < ell as u64 {
                let c = &mut child[site as usize];
                *c = (*c + 1 + rng.random_range(0..self.kappa - 1)) % self.kappa;
                mutated = true;
                site = site.saturating_add(1).saturating_add(geo.sample(rng));
            }
        }
        let parent_master = self.is_master[parent];
        let child_master = if !mutated {
            parent_master
        } else if parent_master {
            false
        } else {
            self.genome(target).iter().all(|&c| c == 0)
        };
        self.set_master(target, child_master);
    }
}

/// Sequence-level Moran process on the sharp-peak landscape. `theta` is
/// ignored: mutations act on whole genomes.
pub fn simulate_full(
    params: &ModelParams,
    n_runs: usize,
    seed: u64,
    config: &FullConfig,
) -> Result<HittingSamples> {
    params.validate()?;
    check_runs(n_runs, config.step_cap)?;
    let (m, ell) = (params.m, params.ell);
    if (m as u64).saturating_mul(ell) > FULL_MAX_CELLS {
        return Err(Error::param(
            "m",
            format!("m * ell = {} exceeds {FULL_MAX_CELLS}", m as u128 * ell as u128),
        ));
    }
    if params.kappa > u32::from(u8::MAX) {
        return Err(Error::param("kappa", "alphabet size above 255 is not supported"));
    }
    if config.replacement == ReplacementRule::ExcludeParent && m < 2 {
        return Err(Error::param("m", "excluding the parent needs m >= 2"));
    }
    let kappa = params.kappa as u8;
    let mutation = (params.q > 0.0).then(|| Geometric::new(params.q).expect("q in (0, 1)"));
    let outcomes = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut state = FullModelState::new(m, ell as usize, kappa, config.init, &mut rng);
            let done = |s: &FullModelState| match config.init {
                Init::OneMaster => s.master_count() == 0,
                Init::NoMaster => s.master_count() >= 1,
            };
            let mut t = 0u64;
            while !done(&state) {
                if t == config.step_cap {
                    return None;
                }
                state.step(params.sigma, mutation.as_ref(), config.replacement, &mut rng);
                t += 1;
                if config.verify_counts {
                    assert_eq!(state.master_count(), state.recount_masters());
                }
            }
            Some(t)
        })
        .collect();
    Ok(HittingSamples::from_outcomes(outcomes, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bd_chain::{expected_extinction_time, transition_probs};

    fn params(m: usize, ell: u64, kappa: u32, sigma: f64, q: f64, theta: u64) -> ModelParams {
        ModelParams::new(m, ell, kappa, sigma, q, theta).unwrap()
    }

    fn exact(p: &ModelParams) -> f64 {
        expected_extinction_time(&transition_probs(p).unwrap()).value()
    }

    fn within_3se(s: &HittingSamples, want: f64) -> bool {
        let sum = summarize(s).unwrap();
        (sum.mean - want).abs() <= 3.0 * sum.standard_error
    }

    #[test]
    fn summarize_examples() {
        let s = HittingSamples { samples: vec![5, 5, 5, 5], seed: 0, n_runs: 4, censored: 0 };
        let sum = summarize(&s).unwrap();
        assert_eq!((sum.mean, sum.variance), (5.0, 0.0));
        let s = HittingSamples { samples: vec![2, 4], seed: 0, n_runs: 3, censored: 1 };
        let sum = summarize(&s).unwrap();
        assert_eq!((sum.mean, sum.variance), (3.0, 2.0));
        assert!((sum.censored_fraction - 1.0 / 3.0).abs() < 1e-15);
        let s = HittingSamples { samples: vec![], seed: 0, n_runs: 5, censored: 5 };
        assert_eq!(summarize(&s), Err(Error::InsufficientSamples { uncensored: 0 }));
    }

    #[test]
    fn lumped_matches_small_exact_values() {
        let m1 = params(1, 1, 2, 2.0, 0.25, 1);
        assert!(within_3se(&simulate_lumped(&m1, 100_000, 7, 1, DEFAULT_STEP_CAP).unwrap(), 4.0));
        let m2 = params(2, 1, 2, 2.0, 0.25, 1);
        assert!(within_3se(&simulate_lumped(&m2, 100_000, 8, 1, DEFAULT_STEP_CAP).unwrap(), 10.4));
    }

    #[test]
    fn lumped_censors_upward_absorption() {
        let p = params(3, 2, 2, 2.0, 0.0, 1);
        let s = simulate_lumped(&p, 2000, 1, 1, 1_000).unwrap();
        assert!(s.censored > 0);
        assert_eq!(s.samples.len() + s.censored, s.n_runs);
    }

    #[test]
    fn lumped_rejections() {
        let p = params(3, 2, 2, 2.0, 0.1, 1);
        assert!(simulate_lumped(&p, 10, 1, 4, 100).is_err());
        assert!(simulate_lumped(&p, 10, 1, 1, 0).is_err());
        assert!(simulate_lumped(&p, 0, 1, 1, 10).is_err());
        let zeros = simulate_lumped(&p, 5, 1, 0, 10).unwrap();
        assert_eq!(zeros.samples, vec![0; 5]);
    }

    #[test]
    fn lumped_is_deterministic_across_pools() {
        let p = params(10, 4, 2, 1.5, 0.05, 1);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_lumped(&p, 500, 99, 1, DEFAULT_STEP_CAP).unwrap())
        };
        assert_eq!(run(1), run(3));
        assert_ne!(run(1).samples, simulate_lumped(&p, 500, 100, 1, DEFAULT_STEP_CAP).unwrap().samples);
    }

    #[test]
    fn full_model_keeps_master_count_cache() {
        let p = params(8, 3, 3, 2.0, 0.1, 1);
        for replacement in [ReplacementRule::UniformAll, ReplacementRule::ExcludeParent] {
            for init in [Init::OneMaster, Init::NoMaster] {
                let cfg = FullConfig { init, step_cap: 5_000, replacement, verify_counts: true };
                let s = simulate_full(&p, 20, 3, &cfg).unwrap();
                assert_eq!(s.samples.len() + s.censored, 20);
            }
        }
    }

    #[test]
    fn full_model_without_mutation_is_the_lumped_chain() {
        // q = 0: the master count is exactly the lumped chain, which from 1
        // either dies out or fixes. Compare the extinction probability.
        let p = params(5, 3, 2, 2.0, 0.0, 1);
        let cfg = FullConfig { step_cap: 2_000, ..FullConfig::new(Init::OneMaster) };
        let full = simulate_full(&p, 20_000, 11, &cfg).unwrap();
        let lumped = simulate_lumped(&p, 20_000, 12, 1, 2_000).unwrap();
        // Fixation probability of one mutant with fitness ratio r = 2:
        // (1 - 1/r) / (1 - 1/r^m).
        let want = 1.0 - 0.5 / (1.0 - 0.5f64.powi(5));
        for s in [&full, &lumped] {
            let dead = s.samples.len() as f64 / s.n_runs as f64;
            let se = (want * (1.0 - want) / s.n_runs as f64).sqrt();
            assert!((dead - want).abs() < 4.0 * se, "{dead} vs {want}");
        }
        let (a, b) = (summarize(&full).unwrap(), summarize(&lumped).unwrap());
        let se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * se);
    }

    #[test]
    fn full_model_sits_between_lumped_bounds() {
        let p = params(10, 3, 2, 3.0, 0.05, 1);
        let cfg = FullConfig { verify_counts: false, ..FullConfig::new(Init::OneMaster) };
        let s = summarize(&simulate_full(&p, 4000, 5, &cfg).unwrap()).unwrap();
        let lo = exact(&p.with_theta(3));
        let hi = exact(&p);
        assert!(s.mean >= lo - 3.0 * s.standard_error, "{} < {lo}", s.mean);
        assert!(s.mean <= hi + 3.0 * s.standard_error, "{} > {hi}", s.mean);
    }

    #[test]
    fn discovery_time_scales_with_alphabet_size() {
        let p = params(5, 2, 2, 2.0, 0.2, 1);
        let cfg = FullConfig::new(Init::NoMaster);
        let s = summarize(&simulate_full(&p, 4000, 21, &cfg).unwrap()).unwrap();
        let rate = s.mean.ln() / 2.0;
        assert!(rate >= 0.5 * 2f64.ln() && rate <= 2.0 * 2f64.ln(), "rate = {rate}");
    }

    #[test]
    fn full_model_rejections() {
        let cfg = FullConfig::new(Init::OneMaster);
        let huge = params(100_000, 10_000, 2, 2.0, 0.01, 1);
        assert!(simulate_full(&huge, 1, 1, &cfg).is_err());
        let one = params(1, 2, 2, 2.0, 0.1, 1);
        let ex = FullConfig { replacement: ReplacementRule::ExcludeParent, ..cfg };
        assert!(simulate_full(&one, 1, 1, &ex).is_err());
        let zero_cap = FullConfig { step_cap: 0, ..cfg };
        assert!(simulate_full(&one, 1, 1, &zero_cap).is_err());
    }
}
