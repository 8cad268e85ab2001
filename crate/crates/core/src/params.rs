//! Model parameters of the lumped two-type Moran chain and the quantities
//! derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One instance of the sharp-peak Moran model, lumped into masters and
/// non-masters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Population size.
    pub m: usize,
    /// Genome length.
    pub ell: u64,
    /// Alphabet size.
    pub kappa: u32,
    /// Fitness of the master sequence.
    pub sigma: f64,
    /// Per-site mutation probability.
    pub q: f64,
    /// Mutations a non-master needs to become a master. `1` over-counts
    /// masters, `ell` under-counts them.
    pub theta: u64,
}

impl ModelParams {
    pub fn new(m: usize, ell: u64, kappa: u32, sigma: f64, q: f64, theta: u64) -> Result<Self> {
        let p = ModelParams {
            m,
            ell,
            kappa,
            sigma,
            q,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::param("m", "population size must be at least 1"));
        }
        if self.ell < 1 {
            return Err(Error::param("ell", "genome length must be at least 1"));
        }
        if self.kappa < 2 {
            return Err(Error::param("kappa", "alphabet needs at least 2 letters"));
        }
        if !(self.sigma.is_finite() && self.sigma > 1.0) {
            return Err(Error::param(
                "sigma",
                format!("fitness {} must be finite and > 1", self.sigma),
            ));
        }
        if !(self.q >= 0.0 && self.q < 1.0) {
            return Err(Error::param(
                "q",
                format!("mutation probability {} must lie in [0, 1)", self.q),
            ));
        }
        if self.theta < 1 || self.theta > self.ell {
            return Err(Error::param(
                "theta",
                format!("theta = {} must lie in [1, ell = {}]", self.theta, self.ell),
            ));
        }
        if self.survival() <= 0.0 {
            return Err(Error::param(
                "q",
                format!(
                    "(1-q)^ell underflows for q = {}, ell = {}",
                    self.q, self.ell
                ),
            ));
        }
        Ok(())
    }

    fn ln_one_minus_q(&self) -> f64 {
        (-self.q).ln_1p()
    }

    /// `(1-q)^ell`: probability that a replication copies the genome exactly.
    pub fn survival(&self) -> f64 {
        (self.ell as f64 * self.ln_one_minus_q()).exp()
    }

    /// `1 - (1-q)^ell`, without cancellation for small `q`.
    pub fn mutation_load(&self) -> f64 {
        -(self.ell as f64 * self.ln_one_minus_q()).exp_m1()
    }

    /// `Q = q / ((1-q)(kappa-1))`.
    pub fn q_big(&self) -> f64 {
        q_big(self.q, self.kappa)
    }

    /// `Q^theta`, evaluated in the log domain.
    pub fn q_big_pow_theta(&self) -> f64 {
        if self.q == 0.0 {
            return 0.0;
        }
        let ln_q_big = self.q.ln() - self.ln_one_minus_q() - f64::from(self.kappa - 1).ln();
        (self.theta as f64 * ln_q_big).exp()
    }

    /// `(1-q)^(ell-theta) (q/(kappa-1))^theta = (1-q)^ell Q^theta`: probability
    /// that a non-master offspring is born a master.
    pub fn discovery_prob(&self) -> f64 {
        if self.q == 0.0 {
            return 0.0;
        }
        let ln = (self.ell - self.theta) as f64 * self.ln_one_minus_q()
            + self.theta as f64 * (self.q.ln() - f64::from(self.kappa - 1).ln());
        ln.exp()
    }

    /// `L_q = sigma - 1 - sigma (1-q)^ell`.
    pub fn l_q(&self) -> f64 {
        self.sigma - 1.0 - self.sigma * self.survival()
    }

    /// `(sigma (1-q)^ell - 1) / (sigma - 1)`, the maximiser of the Laplace
    /// exponent.
    pub fn rho_star(&self) -> f64 {
        (self.sigma * self.survival() - 1.0) / (self.sigma - 1.0)
    }

    /// Affine factor in the birth probability:
    /// `Q^theta/sigma + (1 - Q^theta/sigma) x`.
    pub fn birth_affine(&self, x: f64) -> f64 {
        let a = self.q_big_pow_theta() / self.sigma;
        a + (1.0 - a) * x
    }

    /// Affine factor in the death probability:
    /// `1 - p + (L_q + p) x` with `p = (1-q)^ell Q^theta`.
    pub fn death_affine(&self, x: f64) -> f64 {
        let p = self.discovery_prob();
        1.0 - p + (self.l_q() + p) * x
    }

    /// Slope of [`death_affine`](Self::death_affine): `L_q + (1-q)^ell Q^theta`.
    pub fn death_slope(&self) -> f64 {
        self.l_q() + self.discovery_prob()
    }

    pub fn with_m(self, m: usize) -> Self {
        ModelParams { m, ..self }
    }

    pub fn with_q(self, q: f64) -> Self {
        ModelParams { q, ..self }
    }

    pub fn with_theta(self, theta: u64) -> Self {
        ModelParams { theta, ..self }
    }
}

/// `Q = q / ((1-q)(kappa-1))`.
pub fn q_big(q: f64, kappa: u32) -> f64 {
    q / ((1.0 - q) * f64::from(kappa - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(m: usize, ell: u64, kappa: u32, sigma: f64, q: f64, theta: u64) -> ModelParams {
        ModelParams::new(m, ell, kappa, sigma, q, theta).unwrap()
    }

    #[test]
    fn rejects_each_field() {
        let fields = [
            (ModelParams::new(0, 1, 2, 2.0, 0.1, 1), "m"),
            (ModelParams::new(1, 0, 2, 2.0, 0.1, 1), "ell"),
            (ModelParams::new(1, 1, 1, 2.0, 0.1, 1), "kappa"),
            (ModelParams::new(1, 1, 2, 1.0, 0.1, 1), "sigma"),
            (ModelParams::new(1, 1, 2, f64::NAN, 0.1, 1), "sigma"),
            (ModelParams::new(1, 1, 2, 2.0, 1.0, 1), "q"),
            (ModelParams::new(1, 1, 2, 2.0, -0.1, 1), "q"),
            (ModelParams::new(1, 3, 2, 2.0, 0.1, 4), "theta"),
            (ModelParams::new(1, 3, 2, 2.0, 0.1, 0), "theta"),
            (ModelParams::new(1, 1_000_000, 2, 2.0, 0.9, 1), "q"),
        ];
        for (res, want) in fields {
            match res {
                Err(Error::InvalidParam { field, .. }) => assert_eq!(field, want),
                other => panic!("expected {want} rejection, got {other:?}"),
            }
        }
    }

    #[test]
    fn q_big_examples() {
        assert_eq!(q_big(0.0, 2), 0.0);
        assert!((q_big(0.25, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((q_big(0.2, 5) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn tiny_q_long_genome_is_representable() {
        let params = p(10, 1_000_000, 4, 2.0, 1e-6, 1_000_000);
        let s = params.survival();
        assert!((s - (-1.0f64).exp()).abs() < 1e-6);
        assert!(params.mutation_load() > 0.6);
        assert_eq!(params.discovery_prob(), 0.0);
        let one = p(10, 1_000_000, 4, 2.0, 1e-6, 1);
        assert!((one.q_big_pow_theta() - 1e-6 / (3.0 * (1.0 - 1e-6))).abs() < 1e-18);
    }

    #[test]
    fn discovery_prob_is_survival_times_q_pow_theta() {
        let params = p(10, 12, 3, 2.5, 0.07, 5);
        let lhs = params.discovery_prob();
        let rhs = params.survival() * params.q_big_pow_theta();
        assert!((lhs - rhs).abs() <= 1e-14 * rhs);
    }
}
