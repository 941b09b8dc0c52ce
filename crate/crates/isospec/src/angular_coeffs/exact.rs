//! Exact arithmetic for Racah-type sums.
//!
//! Factorial ratios are held as exponent vectors over the primes, so products
//! and quotients are additions. Alternating sums are reduced to a common
//! prime-power factor times an integer sum, which keeps every coefficient as
//! `sign * sqrt(rational)` without rounding.

use std::fmt;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use once_cell::sync::Lazy;
use parking_lot::RwLock;

static PRIMES: Lazy<RwLock<Vec<u64>>> = Lazy::new(|| RwLock::new(vec![2, 3, 5, 7, 11, 13]));

/// All primes `<= n`.
fn primes_up_to(n: u64) -> Vec<u64> {
    {
        let primes = PRIMES.read();
        if *primes.last().unwrap() >= n {
            return primes.iter().copied().take_while(|&p| p <= n).collect();
        }
    }
    let limit = (n as usize).max(64) * 2;
    let mut sieve = vec![true; limit + 1];
    sieve[0] = false;
    sieve[1] = false;
    let mut i = 2;
    while i * i <= limit {
        if sieve[i] {
            let mut j = i * i;
            while j <= limit {
                sieve[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    let all: Vec<u64> = (0..=limit).filter(|&k| sieve[k]).map(|k| k as u64).collect();
    let out = all.iter().copied().take_while(|&p| p <= n).collect();
    let mut table = PRIMES.write();
    if table.len() < all.len() {
        *table = all;
    }
    out
}

/// A positive rational stored as prime exponents; index `i` refers to the
/// `i`-th prime.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Factored {
    exps: Vec<i64>,
}

impl Factored {
    pub fn one() -> Self {
        Factored { exps: Vec::new() }
    }

    /// `n!` via Legendre's formula.
    pub fn factorial(n: u64) -> Self {
        let primes = primes_up_to(n);
        let exps = primes
            .iter()
            .map(|&p| {
                let mut e = 0i64;
                let mut q = p;
                while q <= n {
                    e += (n / q) as i64;
                    q = match q.checked_mul(p) {
                        Some(v) => v,
                        None => break,
                    };
                }
                e
            })
            .collect();
        Factored { exps }
    }

    /// Factorization of a positive integer.
    pub fn integer(n: u64) -> Self {
        assert!(n > 0, "cannot factor zero");
        let primes = primes_up_to(n);
        let mut rest = n;
        let mut exps = vec![0i64; primes.len()];
        for (i, &p) in primes.iter().enumerate() {
            while rest % p == 0 {
                rest /= p;
                exps[i] += 1;
            }
            if rest == 1 {
                break;
            }
        }
        Factored { exps }
    }

    fn resize(&mut self, len: usize) {
        if self.exps.len() < len {
            self.exps.resize(len, 0);
        }
    }

    pub fn mul(&self, other: &Factored) -> Factored {
        let mut out = self.clone();
        out.resize(other.exps.len());
        for (a, b) in out.exps.iter_mut().zip(&other.exps) {
            *a += b;
        }
        out
    }

    pub fn div(&self, other: &Factored) -> Factored {
        let mut out = self.clone();
        out.resize(other.exps.len());
        for (a, b) in out.exps.iter_mut().zip(&other.exps) {
            *a -= b;
        }
        out
    }

    pub fn pow(&self, k: i64) -> Factored {
        Factored {
            exps: self.exps.iter().map(|e| e * k).collect(),
        }
    }

    /// Elementwise minimum of exponents (the largest common factor).
    pub fn min(&self, other: &Factored) -> Factored {
        let len = self.exps.len().max(other.exps.len());
        let exps = (0..len)
            .map(|i| {
                let a = self.exps.get(i).copied().unwrap_or(0);
                let b = other.exps.get(i).copied().unwrap_or(0);
                a.min(b)
            })
            .collect();
        Factored { exps }
    }

    /// Numerator and denominator as big integers.
    pub fn split(&self) -> (BigInt, BigInt) {
        let primes = primes_up_to(self.max_prime());
        let mut num = BigInt::one();
        let mut den = BigInt::one();
        for (&e, &p) in self.exps.iter().zip(&primes) {
            if e > 0 {
                num *= BigInt::from(p).pow(e as u32);
            } else if e < 0 {
                den *= BigInt::from(p).pow((-e) as u32);
            }
        }
        (num, den)
    }

    /// Only valid when every exponent is nonnegative.
    pub fn to_integer(&self) -> BigInt {
        let (num, den) = self.split();
        debug_assert!(den.is_one());
        num
    }

    pub fn to_rational(&self) -> BigRational {
        let (num, den) = self.split();
        BigRational::new(num, den)
    }

    fn max_prime(&self) -> u64 {
        if self.exps.is_empty() {
            return 2;
        }
        let primes = PRIMES.read();
        if self.exps.len() <= primes.len() {
            return primes[self.exps.len() - 1];
        }
        drop(primes);
        // Enough primes must exist for any vector built by this module.
        unreachable!("prime table shorter than exponent vector")
    }
}

/// Sum of `sign_k * f_k` over factored terms, returned as `(s, g)` with the
/// sum equal to `s * g` and `s` an integer.
pub fn alternating_sum(terms: &[(i8, Factored)]) -> (BigInt, Factored) {
    if terms.is_empty() {
        return (BigInt::zero(), Factored::one());
    }
    let mut common = terms[0].1.clone();
    for (_, f) in &terms[1..] {
        common = common.min(f);
    }
    let mut s = BigInt::zero();
    for (sign, f) in terms {
        let k = f.div(&common).to_integer();
        if *sign < 0 {
            s -= k;
        } else {
            s += k;
        }
    }
    (s, common)
}

/// A real number `sign * sqrt(square)` with `square` an exact rational.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientValue {
    pub sign: i8,
    pub square: BigRational,
    pub float: f64,
}

impl CoefficientValue {
    pub fn zero() -> Self {
        CoefficientValue {
            sign: 0,
            square: BigRational::zero(),
            float: 0.0,
        }
    }

    pub fn new(sign: i8, square: BigRational) -> Self {
        if sign == 0 || square.is_zero() {
            return Self::zero();
        }
        let float = f64::from(sign) * rational_to_f64(&square).sqrt();
        CoefficientValue {
            sign,
            square,
            float,
        }
    }

    /// Assemble `sign * sqrt(radicand) * s * g`.
    pub fn from_parts(sign: i8, radicand: &Factored, s: &BigInt, g: &Factored) -> Self {
        if s.is_zero() {
            return Self::zero();
        }
        let sign = if s.sign() == Sign::Minus { -sign } else { sign };
        let square = radicand.mul(&g.pow(2)).to_rational() * BigRational::from(s.abs().pow(2));
        Self::new(sign, square)
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn scale_sqrt(&self, sign: i8, factor: u64) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        Self::new(
            self.sign * sign,
            &self.square * BigRational::from(BigInt::from(factor)),
        )
    }
}

impl fmt::Display for CoefficientValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            s => {
                let sym = if s < 0 { "-" } else { "" };
                if self.square.denom().is_one() {
                    write!(f, "{sym}sqrt({})", self.square.numer())
                } else {
                    write!(
                        f,
                        "{sym}sqrt({}/{})",
                        self.square.numer(),
                        self.square.denom()
                    )
                }
            }
        }
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
