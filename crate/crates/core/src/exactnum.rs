//! Exact rational numbers.
//!
//! Every position, time, speed and payload in the crate is a `Rational`.
//! Integers are unbounded, so deep constructions never overflow.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RationalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("malformed rational `{0}`")]
    Malformed(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

/// Builds `n/d`. Panics on `d == 0`; meant for constants in code.
pub fn q(n: i64, d: i64) -> Rational {
    assert!(d != 0, "zero denominator");
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Rational {
    BigRational::from_integer(BigInt::from(n))
}

/// `2^-d` exactly.
pub fn pow2_neg(d: u32) -> Rational {
    BigRational::new(BigInt::one(), BigInt::one() << d as usize)
}

pub fn arith(a: &Rational, b: &Rational, op: Op) -> Result<Rational, RationalError> {
    Ok(match op {
        Op::Add => a + b,
        Op::Sub => a - b,
        Op::Mul => a * b,
        Op::Div => {
            if b.is_zero() {
                return Err(RationalError::DivisionByZero);
            }
            a / b
        }
    })
}

fn digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit())
}

/// Parses `-?[0-9]+(/[0-9]+)?` or `-?[0-9]+\.[0-9]+`, exactly.
pub fn parse_rational(text: &str) -> Result<Rational, RationalError> {
    let bad = || RationalError::Malformed(text.to_string());
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let value = if let Some((n, d)) = body.split_once('/') {
        if !digits(n) || !digits(d) {
            return Err(bad());
        }
        let n: BigInt = n.parse().map_err(|_| bad())?;
        let d: BigInt = d.parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(RationalError::ZeroDenominator(text.to_string()));
        }
        BigRational::new(n, d)
    } else if let Some((i, f)) = body.split_once('.') {
        if !digits(i) || !digits(f) {
            return Err(bad());
        }
        let n: BigInt = format!("{i}{f}").parse().map_err(|_| bad())?;
        let d = num_traits::pow(BigInt::from(10), f.len());
        BigRational::new(n, d)
    } else {
        if !digits(body) {
            return Err(bad());
        }
        BigRational::from_integer(body.parse().map_err(|_| bad())?)
    };
    Ok(if neg { -value } else { value })
}

/// Canonical `p/q` text (`p` alone when the denominator is 1).
pub fn fmt_rational(r: &Rational) -> String {
    let r = canonical(r);
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Re-reduces a value; `BigRational` already keeps canonical form, so this is
/// a no-op on values produced by its arithmetic.
pub fn canonical(r: &Rational) -> Rational {
    let g = r.numer().gcd(r.denom());
    let (mut n, mut d) = (r.numer() / &g, r.denom() / &g);
    if d.is_negative() {
        n = -n;
        d = -d;
    }
    BigRational::new_raw(n, d)
}

/// Fixed-point decimal with `places` fractional digits, rounded half away from zero.
pub fn fmt_decimal(r: &Rational, places: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), places);
    let scaled = r * BigRational::from_integer(scale.clone());
    let rounded = scaled.round().to_integer();
    let neg = rounded.is_negative();
    let mag = rounded.abs();
    let (ip, fp) = mag.div_rem(&scale);
    let mut s = String::new();
    if neg && !mag.is_zero() {
        s.push('-');
    }
    s.push_str(&ip.to_string());
    if places > 0 {
        let f = fp.to_string();
        s.push('.');
        for _ in f.len()..places {
            s.push('0');
        }
        s.push_str(&f);
    }
    s
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Least common multiple of the denominators.
pub fn lcm_denoms<'a>(values: impl IntoIterator<Item = &'a Rational>) -> BigInt {
    values
        .into_iter()
        .fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

/// Display adaptor for `p/q` text.
pub struct Q<'a>(pub &'a Rational);

impl fmt::Display for Q<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fmt_rational(self.0))
    }
}
