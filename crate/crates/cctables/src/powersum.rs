//! Signed power sums `sum_k c_k * n^(p_k/q_k)` with exact rational
//! coefficients and exponents.
//!
//! These are the margin sequences the symbolic layer works with: closed
//! under addition, subtraction and multiplication, totally ordered by
//! eventual dominance, and evaluable at concrete `n` to any precision via
//! integer root extraction. Exponent denominators stay small (at most 64
//! on input), so perfect-power grids `n = 2^(lcm * j)` make every
//! evaluation an exact integer.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Rational exponent of a power-sum term.
pub type Exponent = Ratio<i64>;

/// Largest exponent denominator accepted when snapping floats.
pub const MAX_EXPONENT_DENOM: i64 = 64;

/// Fixed-point precision for irrational root evaluation.
const EVAL_SHIFT_BITS: u64 = 192;

/// One term `coeff * n^expo`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: BigRational,
    pub expo: Exponent,
}

/// A signed power sum, stored with terms merged and sorted by
/// descending exponent; zero-coefficient terms are dropped.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerSum {
    terms: Vec<Term>,
}

impl PowerSum {
    pub fn zero() -> Self {
        PowerSum { terms: Vec::new() }
    }

    pub fn from_terms(terms: Vec<Term>) -> Self {
        let mut ps = PowerSum { terms };
        ps.normalize();
        ps
    }

    /// Convenience constructor from `(coeff, expo_num, expo_den)` triples.
    pub fn of(parts: &[(i64, i64, i64)]) -> Self {
        Self::from_terms(
            parts
                .iter()
                .map(|&(c, p, q)| Term {
                    coeff: BigRational::from_integer(BigInt::from(c)),
                    expo: Exponent::new(p, q),
                })
                .collect(),
        )
    }

    /// The constant `c`.
    pub fn constant(c: BigRational) -> Self {
        Self::from_terms(vec![Term {
            coeff: c,
            expo: Exponent::zero(),
        }])
    }

    /// The monomial `c * n^expo`.
    pub fn monomial(coeff: BigRational, expo: Exponent) -> Self {
        Self::from_terms(vec![Term { coeff, expo }])
    }

    /// `n` itself.
    pub fn n() -> Self {
        Self::of(&[(1, 1, 1)])
    }

    fn normalize(&mut self) {
        self.terms.sort_by(|a, b| b.expo.cmp(&a.expo));
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.expo == t.expo => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| !t.coeff.is_zero());
        self.terms = merged;
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Leading term, i.e. the one with the largest exponent.
    pub fn leading(&self) -> Option<&Term> {
        self.terms.first()
    }

    /// Coefficient attached to a given exponent (zero if absent).
    pub fn coeff_at(&self, expo: Exponent) -> BigRational {
        self.terms
            .iter()
            .find(|t| t.expo == expo)
            .map(|t| t.coeff.clone())
            .unwrap_or_else(BigRational::zero)
    }

    pub fn add(&self, other: &PowerSum) -> PowerSum {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        PowerSum::from_terms(terms)
    }

    pub fn sub(&self, other: &PowerSum) -> PowerSum {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|t| Term {
            coeff: -t.coeff.clone(),
            expo: t.expo,
        }));
        PowerSum::from_terms(terms)
    }

    pub fn mul(&self, other: &PowerSum) -> PowerSum {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(Term {
                    coeff: &a.coeff * &b.coeff,
                    expo: a.expo + b.expo,
                });
            }
        }
        PowerSum::from_terms(terms)
    }

    /// Divide by `n^k`, shifting every exponent down by `k`.
    pub fn shift_down(&self, k: i64) -> PowerSum {
        PowerSum {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coeff: t.coeff.clone(),
                    expo: t.expo - Exponent::from_integer(k),
                })
                .collect(),
        }
    }

    /// Total order by eventual dominance as `n -> infinity`: compare
    /// term lists lexicographically by (exponent, coefficient).
    pub fn cmp_asymptotic(&self, other: &PowerSum) -> Ordering {
        let mut i = 0;
        let mut j = 0;
        loop {
            match (self.terms.get(i), other.terms.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(a), None) => return sign_order(&a.coeff),
                (None, Some(b)) => return sign_order(&b.coeff).reverse(),
                (Some(a), Some(b)) => match a.expo.cmp(&b.expo) {
                    Ordering::Greater => return sign_order(&a.coeff),
                    Ordering::Less => return sign_order(&b.coeff).reverse(),
                    Ordering::Equal => {
                        match a.coeff.cmp(&b.coeff) {
                            Ordering::Equal => {
                                i += 1;
                                j += 1;
                            }
                            ord => return ord,
                        }
                    }
                },
            }
        }
    }

    /// Whether the sum tends to `+infinity` (positive leading term with
    /// positive exponent).
    pub fn diverges_positive(&self) -> bool {
        match self.leading() {
            Some(t) => t.coeff.is_positive() && t.expo.is_positive(),
            None => false,
        }
    }

    /// Least common multiple of the exponent denominators.
    pub fn exponent_denom_lcm(&self) -> i64 {
        self.terms
            .iter()
            .fold(1i64, |acc, t| acc.lcm(t.expo.denom()))
    }

    /// Evaluate at integer `n` to fixed-point precision, returning an
    /// exact rational approximation. Terms sharing an exponent reuse the
    /// same root value, so symbolic cancellations stay exact.
    pub fn eval(&self, n: &BigUint) -> BigRational {
        let mut acc = BigRational::zero();
        for t in &self.terms {
            acc += &t.coeff * power_fixed(n, t.expo);
        }
        acc
    }

    /// Evaluate and round half-up to the nearest integer.
    pub fn eval_rounded(&self, n: &BigUint) -> BigInt {
        round_half_up(&self.eval(n))
    }

    pub fn to_f64_at(&self, n: &BigUint) -> f64 {
        self.eval(n).to_f64().unwrap_or(f64::NAN)
    }
}

fn sign_order(c: &BigRational) -> Ordering {
    if c.is_positive() {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// `floor(x + 1/2)`.
pub fn round_half_up(x: &BigRational) -> BigInt {
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    (x + half).floor().to_integer()
}

/// `n^(p/q)` as an exact rational `r / 2^shift` with
/// `r = floor(n^(p/q) * 2^shift)`; exact whenever `n^p` is a perfect
/// `q`-th power.
pub fn power_fixed(n: &BigUint, expo: Exponent) -> BigRational {
    let expo = expo.reduced();
    let p = *expo.numer();
    let q = *expo.denom();
    assert!(q > 0, "exponent denominator must be positive");
    if p == 0 {
        return BigRational::one();
    }
    assert!(p > 0, "negative exponents are not evaluated");
    let base = n.pow(p as u32);
    if q == 1 {
        return BigRational::from_integer(base.into());
    }
    let scaled = base << (EVAL_SHIFT_BITS * q as u64);
    let root = scaled.nth_root(q as u32);
    BigRational::new(root.into(), (BigUint::one() << EVAL_SHIFT_BITS).into())
}

/// Snap a float to the nearest rational with denominator at most
/// `max_denom`, rejecting values farther than `tol` from every candidate.
pub fn snap_to_rational(x: f64, max_denom: i64, tol: f64) -> Result<Ratio<i64>> {
    if !x.is_finite() {
        return Err(Error::SpecError(format!("exponent {x} is not finite")));
    }
    let mut best: Option<(f64, Ratio<i64>)> = None;
    for den in 1..=max_denom {
        let num = (x * den as f64).round() as i64;
        let cand = Ratio::new(num, den);
        let err = (x - cand.to_f64().unwrap()).abs();
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, cand));
        }
    }
    match best {
        Some((err, cand)) if err <= tol => Ok(cand.reduced()),
        _ => Err(Error::SpecError(format!(
            "{x} is not close to a rational with denominator <= {max_denom}"
        ))),
    }
}

impl fmt::Display for PowerSum {
    /// Renders e.g. `-n + n^(1/4) + 3n^(1/2)`: leading term first, then
    /// the remaining terms in ascending exponent order; constants bare,
    /// `n^1` as `n`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let order = std::iter::once(&self.terms[0]).chain(self.terms[1..].iter().rev());
        for (i, t) in order.enumerate() {
            let neg = t.coeff.is_negative();
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mag = t.coeff.abs();
            let unit_coeff = mag.is_one();
            if t.expo.is_zero() {
                write!(f, "{}", format_rational(&mag))?;
            } else {
                if !unit_coeff {
                    write!(f, "{}", format_rational(&mag))?;
                }
                if t.expo.is_one() {
                    write!(f, "n")?;
                } else {
                    write!(f, "n^({})", t.expo)?;
                }
            }
        }
        Ok(())
    }
}

fn format_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(parts: &[(i64, i64, i64)]) -> PowerSum {
        PowerSum::of(parts)
    }

    #[test]
    fn merges_and_drops_zero_terms() {
        let a = ps(&[(2, 1, 2), (-1, 1, 2), (3, 0, 1)]);
        assert_eq!(a.terms().len(), 2);
        assert_eq!(a.coeff_at(Exponent::new(1, 2)), BigRational::one());
        let b = ps(&[(1, 1, 2)]).sub(&ps(&[(1, 1, 2)]));
        assert!(b.is_zero());
    }

    #[test]
    fn multiplication_expands() {
        // (n - n^(1/2))^2 = n^2 - 2n^(3/2) + n
        let d = PowerSum::n().sub(&ps(&[(1, 1, 2)]));
        let sq = d.mul(&d);
        assert_eq!(sq.coeff_at(Exponent::new(2, 1)), BigRational::one());
        assert_eq!(
            sq.coeff_at(Exponent::new(3, 2)),
            BigRational::from_integer(BigInt::from(-2))
        );
        assert_eq!(sq.coeff_at(Exponent::one()), BigRational::one());
    }

    #[test]
    fn asymptotic_order_ranks_by_dominance() {
        let half_n = ps(&[(1, 1, 1)]).mul(&PowerSum::constant(BigRational::new(
            BigInt::one(),
            BigInt::from(2),
        )));
        let sqrt_n = ps(&[(1, 1, 2)]);
        let n_minus_sqrt = PowerSum::n().sub(&sqrt_n);
        assert_eq!(sqrt_n.cmp_asymptotic(&half_n), Ordering::Less);
        assert_eq!(half_n.cmp_asymptotic(&n_minus_sqrt), Ordering::Less);
        assert_eq!(sqrt_n.cmp_asymptotic(&sqrt_n), Ordering::Equal);
        // n - n^(1/2) < n - n^(1/4): equal leading terms, lower-order decides
        let n_minus_quarter = PowerSum::n().sub(&ps(&[(1, 1, 4)]));
        assert_eq!(
            n_minus_sqrt.cmp_asymptotic(&n_minus_quarter),
            Ordering::Less
        );
    }

    #[test]
    fn eval_exact_at_perfect_powers() {
        let n = BigUint::from(10_000u32);
        assert_eq!(ps(&[(1, 1, 2)]).eval_rounded(&n), BigInt::from(100));
        assert_eq!(ps(&[(1, 1, 4)]).eval_rounded(&n), BigInt::from(10));
        let spec = PowerSum::n().sub(&ps(&[(1, 1, 4)])).sub(&ps(&[(1, 1, 2)]));
        let n6 = BigUint::from(1_000_000u64);
        // 10^6 - round-half-up(10^1.5 + 10^3) with 10^1.5 = 31.62...
        assert_eq!(spec.eval_rounded(&n6), BigInt::from(998_968u64));
    }

    #[test]
    fn rounding_is_half_up() {
        let n = BigUint::from(5u32);
        let half_n = PowerSum::monomial(
            BigRational::new(BigInt::one(), BigInt::from(2)),
            Exponent::one(),
        );
        // 5/2 = 2.5 rounds up to 3
        assert_eq!(half_n.eval_rounded(&n), BigInt::from(3));
    }

    #[test]
    fn snap_recovers_small_denominators() {
        assert_eq!(snap_to_rational(0.5, 64, 1e-9).unwrap(), Ratio::new(1, 2));
        assert_eq!(
            snap_to_rational(2.0 / 3.0, 64, 1e-9).unwrap(),
            Ratio::new(2, 3)
        );
        assert_eq!(snap_to_rational(1.0, 64, 1e-9).unwrap(), Ratio::new(1, 1));
        assert!(snap_to_rational(0.123456789, 64, 1e-9).is_err());
    }

    #[test]
    fn display_matches_expected_layout() {
        let shift = ps(&[(-1, 1, 1), (1, 1, 4), (3, 1, 2)]);
        assert_eq!(shift.to_string(), "-n + n^(1/4) + 3n^(1/2)");
        let margin = ps(&[(1, 1, 1), (-1, 1, 4), (-1, 1, 2)]);
        assert_eq!(margin.to_string(), "n - n^(1/4) - n^(1/2)");
        assert_eq!(ps(&[(1, 1, 2)]).to_string(), "n^(1/2)");
        assert_eq!(PowerSum::zero().to_string(), "0");
    }
}
