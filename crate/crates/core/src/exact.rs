//! Exact rational numbers and polynomials over them.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Exact value of a finite float.
pub fn from_f64(x: f64) -> Result<Q> {
    Q::from_float(x).ok_or_else(|| Error::Domain(format!("non-finite value {x}")))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // very large numerators/denominators
        let n = x.numer().to_f64().unwrap_or(f64::NAN);
        let d = x.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Parses `"a/b"`, an integer, or a decimal like `"0.125"` exactly.
pub fn parse_q(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a number: {s:?}"));
    if let Some((a, b)) = s.split_once('/') {
        let a: BigInt = a.trim().parse().map_err(|_| bad())?;
        let b: BigInt = b.trim().parse().map_err(|_| bad())?;
        if b.is_zero() {
            return Err(bad());
        }
        return Ok(Q::new(a, b));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let neg = mant.starts_with('-');
    let mant = mant.trim_start_matches(['-', '+']);
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let n: BigInt = digits.parse().map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut v = Q::from_integer(n);
    if scale >= 0 {
        v *= Q::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        v /= Q::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -v } else { v })
}

/// A probability in `[0, 1]`, held exactly.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Prob(Q);

impl Prob {
    pub fn new(x: Q) -> Result<Self> {
        if x.is_negative() || x > Q::one() {
            return Err(Error::Domain(format!("probability {x} outside [0,1]")));
        }
        Ok(Prob(x))
    }

    pub fn from_f64(x: f64) -> Result<Self> {
        Prob::new(from_f64(x)?)
    }

    pub fn value(&self) -> &Q {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        to_f64(&self.0)
    }
}

/// Polynomial in one variable with exact coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Poly(pub Vec<Q>);

impl Poly {
    pub fn constant(c: Q) -> Self {
        Poly(vec![c]).trimmed()
    }

    /// The polynomial `x`.
    pub fn x() -> Self {
        Poly(vec![Q::zero(), Q::one()])
    }

    fn trimmed(mut self) -> Self {
        while self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    pub fn degree(&self) -> Option<usize> {
        self.0.len().checked_sub(1)
    }

    pub fn eval(&self, x: &Q) -> Q {
        let mut acc = Q::zero();
        for c in self.0.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for c in self.0.iter().rev() {
            acc = acc * x + to_f64(c);
        }
        acc
    }

    pub fn derivative(&self) -> Poly {
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * qi(k as i64))
                .collect(),
        )
        .trimmed()
    }

    pub fn pow(&self, k: usize) -> Poly {
        let mut out = Poly::constant(Q::one());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn scale(&self, c: &Q) -> Poly {
        Poly(self.0.iter().map(|a| a * c).collect()).trimmed()
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let n = self.0.len().max(o.0.len());
        let z = Q::zero();
        Poly((0..n).map(|i| self.0.get(i).unwrap_or(&z) + o.0.get(i).unwrap_or(&z)).collect()).trimmed()
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        self + &o.scale(&-Q::one())
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        if self.0.is_empty() || o.0.is_empty() {
            return Poly::default();
        }
        let mut out = vec![Q::zero(); self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out).trimmed()
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, c) in self.0.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match k {
                0 => write!(f, "{c}")?,
                1 => write!(f, "({c})p")?,
                _ => write!(f, "({c})p^{k}")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_q("1/3").unwrap(), q(1, 3));
        assert_eq!(parse_q("0.125").unwrap(), q(1, 8));
        assert_eq!(parse_q("-2.5e-1").unwrap(), q(-1, 4));
        assert_eq!(parse_q("3").unwrap(), qi(3));
        assert_eq!(parse_q(".5").unwrap(), q(1, 2));
        assert!(parse_q("abc").is_err());
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("").is_err());
    }

    #[test]
    fn poly_ops() {
        let p = Poly::x();
        let one = Poly::constant(qi(1));
        let t2 = &p.pow(2) * &(&Poly::constant(qi(2)) - &p);
        assert_eq!(t2.eval(&q(1, 2)), q(3, 8));
        assert_eq!(t2.derivative(), Poly(vec![qi(0), qi(4), qi(-3)]));
        assert_eq!((&one - &one).degree(), None);
        assert!((t2.eval_f64(0.5) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn prob_range() {
        assert!(Prob::from_f64(1.5).is_err());
        assert!(Prob::from_f64(-0.1).is_err());
        assert_eq!(Prob::from_f64(0.5).unwrap().value(), &q(1, 2));
    }
}
