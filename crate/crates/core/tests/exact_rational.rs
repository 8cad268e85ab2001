use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use qlab::bd_chain::{expected_extinction_time, transition_probs};
use qlab::ModelParams;

fn r(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `E(tau_0) = sum_i delta_1..delta_{i-1} / (gamma_1..gamma_i)` in exact
/// rational arithmetic, for rational `sigma` and `q`.
fn exact_time(m: i64, ell: u32, kappa: i64, sigma: BigRational, q: BigRational, theta: u32) -> BigRational {
    let one = BigRational::one();
    let keep = &one - &q;
    let s = num_traits::pow(keep.clone(), ell as usize);
    let load = &one - &s;
    let p = num_traits::pow(keep.clone(), (ell - theta) as usize)
        * num_traits::pow(&q / r(kappa - 1, 1), theta as usize);
    let delta = |k: i64| {
        let (x, y) = (r(k, m), r(m - k, m));
        (&sigma * &x * &y * &s + &y * &y * &p) / (&sigma * &x + &y)
    };
    let gamma = |k: i64| {
        let (x, y) = (r(k, m), r(m - k, m));
        (&sigma * &x * &x * &load + &x * &y * (&one - &p)) / (&sigma * &x + &y)
    };
    let mut total = BigRational::zero();
    let mut num = BigRational::one();
    let mut den = BigRational::one();
    for i in 1..=m {
        den *= gamma(i);
        total += &num / &den;
        num *= delta(i);
    }
    total
}

fn ln_big(x: &BigRational) -> f64 {
    // Scale into f64 range through the bit lengths of numerator and denominator.
    let (n, d) = (x.numer(), x.denom());
    let shift = n.bits() as i64 - d.bits() as i64;
    let scaled = if shift >= 0 {
        BigRational::new(n.clone(), d.clone() << shift as u64)
    } else {
        BigRational::new(n.clone() << (-shift) as u64, d.clone())
    };
    scaled.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

#[test]
fn log_domain_sum_matches_rational_arithmetic() {
    for (m, ell, theta) in [(100i64, 10u32, 1u32), (100, 10, 10), (37, 4, 2), (2, 1, 1), (1, 1, 1)] {
        let want = ln_big(&exact_time(m, ell, 2, r(2, 1), r(1, 10), theta));
        let p = ModelParams::new(m as usize, ell as u64, 2, 2.0, 0.1, theta as u64).unwrap();
        let got = expected_extinction_time(&transition_probs(&p).unwrap()).ln();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "m={m} ell={ell} theta={theta}: {got} vs {want}");
    }
}

#[test]
fn hand_values_in_rationals() {
    assert_eq!(exact_time(1, 1, 2, r(2, 1), r(1, 4), 1), r(4, 1));
    assert_eq!(exact_time(2, 1, 2, r(2, 1), r(1, 4), 1), r(52, 5));
}
