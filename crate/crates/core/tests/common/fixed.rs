//! Binary fixed-point arithmetic on big integers, used as a
//! high-precision oracle for scalar formulas.
//!
//! A value v is stored as the integer round(v · 2^FRAC).

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub const FRAC: u32 = 640;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fixed(pub BigInt);

impl Fixed {
    pub fn one() -> Self {
        Fixed(BigInt::one() << FRAC)
    }

    pub fn from_int(n: i64) -> Self {
        Fixed(BigInt::from(n) << FRAC)
    }

    /// Exact conversion of a finite double.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fixed(BigInt::zero());
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let fraction = bits & ((1u64 << 52) - 1);
        let (mantissa, exp) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1u64 << 52), biased - 1075)
        };
        let shift = exp + FRAC as i64;
        assert!(shift >= 0, "value too small for the fixed-point format");
        let mut v = BigInt::from(mantissa) << (shift as u32);
        if negative {
            v = -v;
        }
        Fixed(v)
    }

    pub fn to_f64(&self) -> f64 {
        // split so neither factor overflows or underflows
        let v = self.0.to_f64().expect("finite");
        v * 2f64.powi(-(FRAC as i32) / 2) * 2f64.powi(-(FRAC as i32) + (FRAC as i32) / 2)
    }

    pub fn add(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Fixed) -> Fixed {
        Fixed(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Fixed) -> Fixed {
        Fixed((&self.0 * &o.0) >> FRAC)
    }

    pub fn div(&self, o: &Fixed) -> Fixed {
        Fixed((&self.0 << FRAC) / &o.0)
    }

    pub fn div_int(&self, n: i64) -> Fixed {
        Fixed(&self.0 / BigInt::from(n))
    }

    pub fn sqrt(&self) -> Fixed {
        assert!(!self.0.is_negative());
        Fixed((&self.0 << FRAC).sqrt())
    }

    /// exp(x) by halving the argument, summing the Taylor series and squaring back.
    pub fn exp(&self) -> Fixed {
        const HALVINGS: u32 = 16;
        let r = Fixed(&self.0 >> HALVINGS);
        let mut sum = Fixed::one();
        let mut term = Fixed::one();
        let mut n = 1i64;
        loop {
            term = term.mul(&r).div_int(n);
            if term.0.is_zero() {
                break;
            }
            sum = sum.add(&term);
            n += 1;
        }
        for _ in 0..HALVINGS {
            sum = sum.mul(&sum);
        }
        sum
    }

    /// π from Machin's formula.
    pub fn pi() -> Fixed {
        fn arctan_inv(n: i64) -> Fixed {
            let n2 = n * n;
            let mut power = Fixed::one().div_int(n);
            let mut sum = power.clone();
            let mut k = 1i64;
            loop {
                power = power.div_int(n2);
                let term = power.div_int(2 * k + 1);
                if term.0.is_zero() {
                    break;
                }
                sum = if k % 2 == 1 { sum.sub(&term) } else { sum.add(&term) };
                k += 1;
            }
            sum
        }
        let a = arctan_inv(5);
        let b = arctan_inv(239);
        Fixed(a.0 * 16 - b.0 * 4)
    }
}

#[test]
fn constants_match_doubles() {
    assert_eq!(Fixed::pi().to_f64(), std::f64::consts::PI);
    assert_eq!(Fixed::one().exp().to_f64(), std::f64::consts::E);
    assert_eq!(Fixed::from_int(2).sqrt().to_f64(), std::f64::consts::SQRT_2);
    let x = Fixed::from_f64(-37.25).exp().to_f64();
    assert!((x / (-37.25f64).exp() - 1.0).abs() < 1e-15);
}
