//! Posterior exposure checked against 640-bit fixed-point arithmetic.

mod common;

use common::fixed::Fixed;
use expomf::em::e_step_score;

fn oracle(score: f64, mu: f64, lambda_y: f64) -> f64 {
    let (s, m, l) = (Fixed::from_f64(score), Fixed::from_f64(mu), Fixed::from_f64(lambda_y));
    let two_pi = Fixed(Fixed::pi().0 * 2);
    let exponent = Fixed(-(l.mul(&s).mul(&s).div_int(2)).0);
    let weighted = m.mul(&l.div(&two_pi).sqrt()).mul(&exponent.exp());
    weighted.div(&weighted.add(&Fixed::one().sub(&m))).to_f64()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn worked_examples() {
    for (s, mu, ly) in [(0.0, 0.5, 1.0), (0.5, 0.3, 1.0), (1.0, 0.1, 2.0), (-2.5, 0.9, 0.25)] {
        let got = e_step_score(s, mu, ly);
        assert!(rel(got, oracle(s, mu, ly)) < 1e-13, "s={s} mu={mu} ly={ly}: {got}");
    }
}

#[test]
fn far_tail_keeps_relative_accuracy() {
    // p is around 1e-139 for the first case
    for (s, ly) in [(8.0, 10.0), (-6.0, 5.0), (4.0, 30.0)] {
        let got = e_step_score(s, 0.3, ly);
        let want = oracle(s, 0.3, ly);
        assert!(want > 0.0 && rel(got, want) < 1e-12, "s={s}: {got} vs {want}");
    }
}

#[test]
fn near_certain_exposure() {
    let mu = 1.0 - 1e-8;
    for s in [0.0, 1.0, 3.0] {
        let got = e_step_score(s, mu, 1.0);
        assert!(rel(1.0 - got, 1.0 - oracle(s, mu, 1.0)) < 1e-6, "s={s}");
    }
}
