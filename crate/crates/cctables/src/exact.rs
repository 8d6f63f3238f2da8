//! Exact finite-`n` distribution and moments of the all-collectors cell.
//!
//! The cell count evolves as a Markov chain over collectors: given the
//! running intersection count `x` after `k-1` collectors, the count after
//! collector `k` is hypergeometric with population `n`, `x` success
//! states and `a_k` draws. Propagating a mass function through that chain
//! yields the exact law; moments follow from a two-term recursion without
//! touching the law at all.
//!
//! Two arithmetic backends are provided and must be chosen explicitly:
//! exact big-rational arithmetic (practical up to `n` around 10^4) and
//! log-space floating point for large `n`. A closed-form expression for
//! the variance exists in the literature; only the recursion is
//! implemented here, it is exact and cheaper.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::model::MarginVector;

/// Arithmetic backend for distribution computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithMode {
    /// Big-rational arithmetic; results are exact.
    Exact,
    /// `f64` probabilities with log-space hypergeometric weights.
    LogFloat,
}

impl ArithMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ArithMode::Exact => "exact",
            ArithMode::LogFloat => "log-float",
        }
    }
}

/// Default cap on the live support width of the distribution DP.
pub const DEFAULT_SUPPORT_CAP: u64 = 1_000_000;

/// Probabilities below this are trimmed from float-mode support tails.
pub const FLOAT_TAIL_EPS: f64 = 1e-300;

/// A probability mass function on a contiguous integer support.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    offset: i64,
    probs: ProbVec,
    /// Mass trimmed from the tails in float mode.
    truncated: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbVec {
    Exact(Vec<BigRational>),
    Float(Vec<f64>),
}

impl Pmf {
    fn from_exact(offset: i64, probs: Vec<BigRational>) -> Self {
        let mut pmf = Pmf {
            offset,
            probs: ProbVec::Exact(probs),
            truncated: 0.0,
        };
        pmf.trim();
        pmf
    }

    fn from_float(offset: i64, probs: Vec<f64>) -> Self {
        let mut pmf = Pmf {
            offset,
            probs: ProbVec::Float(probs),
            truncated: 0.0,
        };
        pmf.trim();
        pmf
    }

    /// Build from an offset and exact probabilities; zero tails are
    /// trimmed.
    pub fn from_parts_exact(offset: i64, probs: Vec<BigRational>) -> Self {
        Pmf::from_exact(offset, probs)
    }

    /// Build from an offset and float probabilities; sub-cutoff tails
    /// are trimmed into the truncated mass.
    pub fn from_parts_float(offset: i64, probs: Vec<f64>) -> Self {
        Pmf::from_float(offset, probs)
    }

    /// Point mass at `x`.
    pub fn point_mass(x: i64, mode: ArithMode) -> Self {
        match mode {
            ArithMode::Exact => Pmf::from_exact(x, vec![BigRational::one()]),
            ArithMode::LogFloat => Pmf::from_float(x, vec![1.0]),
        }
    }

    fn trim(&mut self) {
        match &mut self.probs {
            ProbVec::Exact(v) => {
                while v.last().is_some_and(|p| p.is_zero()) {
                    v.pop();
                }
                let lead = v.iter().take_while(|p| p.is_zero()).count();
                if lead > 0 {
                    v.drain(..lead);
                    self.offset += lead as i64;
                }
            }
            ProbVec::Float(v) => {
                while v.last().is_some_and(|p| *p < FLOAT_TAIL_EPS) {
                    self.truncated += v.pop().unwrap();
                }
                let lead = v.iter().take_while(|p| **p < FLOAT_TAIL_EPS).count();
                if lead > 0 {
                    self.truncated += v.drain(..lead).sum::<f64>();
                    self.offset += lead as i64;
                }
            }
        }
    }

    pub fn mode(&self) -> ArithMode {
        match self.probs {
            ProbVec::Exact(_) => ArithMode::Exact,
            ProbVec::Float(_) => ArithMode::LogFloat,
        }
    }

    /// Smallest support point.
    pub fn min(&self) -> i64 {
        self.offset
    }

    /// Largest support point.
    pub fn max(&self) -> i64 {
        self.offset + self.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        match &self.probs {
            ProbVec::Exact(v) => v.len(),
            ProbVec::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mass trimmed from the tails (always 0 in exact mode).
    pub fn truncated_mass(&self) -> f64 {
        self.truncated
    }

    /// `P(X = x)` as `f64` (0 outside the support).
    pub fn prob(&self, x: i64) -> f64 {
        if x < self.min() || x > self.max() {
            return 0.0;
        }
        let i = (x - self.offset) as usize;
        match &self.probs {
            ProbVec::Exact(v) => v[i].to_f64().unwrap_or(0.0),
            ProbVec::Float(v) => v[i],
        }
    }

    /// Exact `P(X = x)`; `None` in float mode.
    pub fn prob_exact(&self, x: i64) -> Option<BigRational> {
        match &self.probs {
            ProbVec::Exact(v) => {
                if x < self.min() || x > self.max() {
                    Some(BigRational::zero())
                } else {
                    Some(v[(x - self.offset) as usize].clone())
                }
            }
            ProbVec::Float(_) => None,
        }
    }

    pub fn probs_f64(&self) -> Vec<f64> {
        match &self.probs {
            ProbVec::Exact(v) => v.iter().map(|p| p.to_f64().unwrap_or(0.0)).collect(),
            ProbVec::Float(v) => v.clone(),
        }
    }

    pub fn probs_exact(&self) -> Option<&[BigRational]> {
        match &self.probs {
            ProbVec::Exact(v) => Some(v),
            ProbVec::Float(_) => None,
        }
    }

    pub fn iter_f64(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let offset = self.offset;
        (0..self.len()).map(move |i| (offset + i as i64, self.prob(offset + i as i64)))
    }

    pub fn total_mass_f64(&self) -> f64 {
        neumaier_sum(self.probs_f64().iter().copied())
    }

    pub fn mean_exact(&self) -> Option<BigRational> {
        let probs = self.probs_exact()?;
        let mut acc = BigRational::zero();
        for (i, p) in probs.iter().enumerate() {
            acc += p * BigRational::from_integer(BigInt::from(self.offset + i as i64));
        }
        Some(acc)
    }

    pub fn variance_exact(&self) -> Option<BigRational> {
        let probs = self.probs_exact()?;
        let mean = self.mean_exact()?;
        let mut acc = BigRational::zero();
        for (i, p) in probs.iter().enumerate() {
            let d = BigRational::from_integer(BigInt::from(self.offset + i as i64)) - &mean;
            acc += p * (&d * &d);
        }
        Some(acc)
    }

    pub fn mean_f64(&self) -> f64 {
        neumaier_sum(self.iter_f64().map(|(x, p)| x as f64 * p))
    }

    pub fn variance_f64(&self) -> f64 {
        let mean = self.mean_f64();
        neumaier_sum(self.iter_f64().map(|(x, p)| {
            let d = x as f64 - mean;
            p * d * d
        }))
    }

    /// Law of `sign * X + shift` for `sign` in `{+1, -1}`.
    pub fn affine(&self, sign: i8, shift: i64) -> Pmf {
        assert!(sign == 1 || sign == -1);
        if sign == 1 {
            Pmf {
                offset: self.offset + shift,
                probs: self.probs.clone(),
                truncated: self.truncated,
            }
        } else {
            let probs = match &self.probs {
                ProbVec::Exact(v) => ProbVec::Exact(v.iter().rev().cloned().collect()),
                ProbVec::Float(v) => ProbVec::Float(v.iter().rev().copied().collect()),
            };
            Pmf {
                offset: shift - self.max(),
                probs,
                truncated: self.truncated,
            }
        }
    }

    /// Checks the mass-function invariants: nonnegative entries, nonzero
    /// endpoints, total mass 1 (exact, or within `tol` plus truncation).
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        match &self.probs {
            ProbVec::Exact(v) => {
                if v.is_empty() {
                    return Err(Error::DomainError("empty support".into()));
                }
                if v.iter().any(|p| p.is_negative()) {
                    return Err(Error::DomainError("negative probability".into()));
                }
                if v.first().unwrap().is_zero() || v.last().unwrap().is_zero() {
                    return Err(Error::DomainError("zero mass at support edge".into()));
                }
                let total: BigRational = v.iter().sum();
                if !total.is_one() {
                    return Err(Error::DomainError(format!(
                        "exact mass sums to {total}, not 1"
                    )));
                }
            }
            ProbVec::Float(v) => {
                if v.is_empty() {
                    return Err(Error::DomainError("empty support".into()));
                }
                if v.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                    return Err(Error::DomainError("invalid probability".into()));
                }
                let total = self.total_mass_f64() + self.truncated;
                if (total - 1.0).abs() > tol {
                    return Err(Error::DomainError(format!(
                        "float mass sums to {total}, not 1 within {tol}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Converts exact probabilities to floats (no-op in float mode).
    pub fn to_float(&self) -> Pmf {
        match &self.probs {
            ProbVec::Exact(_) => Pmf {
                offset: self.offset,
                probs: ProbVec::Float(self.probs_f64()),
                truncated: 0.0,
            },
            ProbVec::Float(_) => self.clone(),
        }
    }

    /// Serializes as JSON: exact probabilities as `"num/den"` strings,
    /// float probabilities as numbers.
    pub fn to_json(&self) -> serde_json::Value {
        let probs = match &self.probs {
            ProbVec::Exact(v) => serde_json::Value::Array(
                v.iter()
                    .map(|p| {
                        serde_json::Value::String(format!("{}/{}", p.numer(), p.denom()))
                    })
                    .collect(),
            ),
            ProbVec::Float(v) => serde_json::json!(v),
        };
        serde_json::json!({
            "offset": self.offset,
            "mode": self.mode().as_str(),
            "truncated_mass": self.truncated,
            "probs": probs,
        })
    }

    /// Two-column CSV (`x,prob`), probabilities in decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,prob\n");
        for (x, p) in self.iter_f64() {
            out.push_str(&format!("{x},{p:.17e}\n"));
        }
        out
    }
}

/// Compensated summation.
pub fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut result = BigInt::one();
    for i in 0..k {
        result *= BigInt::from(n - i);
        result /= BigInt::from(i + 1);
    }
    result
}

/// One hypergeometric row in exact arithmetic: unnormalized integer
/// weights `C(s, y) C(n-s, d-y)` for `y` in the support, plus the
/// support offset. Dividing by `C(n, d)` normalizes.
fn hyper_row_exact(n: u64, s: u64, d: u64) -> (u64, Vec<BigInt>) {
    let ylo = (s + d).saturating_sub(n);
    let yhi = s.min(d);
    let mut w = if ylo == 0 {
        binomial(n - s, d)
    } else {
        binomial(s, ylo)
    };
    let mut row = Vec::with_capacity((yhi - ylo + 1) as usize);
    for y in ylo..=yhi {
        row.push(w.clone());
        if y < yhi {
            // (y+1) C(s,y+1) C(n-s,d-y-1) (n-s-d+y+1) = C(s,y) C(n-s,d-y) (s-y)(d-y)
            w *= BigInt::from(s - y) * BigInt::from(d - y);
            let div = BigInt::from(y + 1) * BigInt::from(n + y + 1 - s - d);
            debug_assert!((&w % &div).is_zero());
            w /= div;
        }
    }
    (ylo, row)
}

/// One hypergeometric row in float arithmetic, normalized to sum 1.
/// Weights are built in log space relative to the row maximum, so no
/// factorial-scale cancellation enters.
fn hyper_row_float(n: u64, s: u64, d: u64, scratch: &mut Vec<f64>) -> u64 {
    let ylo = (s + d).saturating_sub(n);
    let yhi = s.min(d);
    let len = (yhi - ylo + 1) as usize;
    scratch.clear();
    scratch.resize(len, 0.0);
    let mut ell = 0.0;
    let mut max_ell = 0.0;
    scratch[0] = 0.0;
    for (i, y) in (ylo..yhi).enumerate() {
        let num = (s - y) as f64 * (d - y) as f64;
        let den = (y + 1) as f64 * (n + y + 1 - s - d) as f64;
        ell += (num / den).ln();
        scratch[i + 1] = ell;
        if ell > max_ell {
            max_ell = ell;
        }
    }
    let mut total = 0.0;
    for v in scratch.iter_mut() {
        *v = (*v - max_ell).exp();
        total += *v;
    }
    for v in scratch.iter_mut() {
        *v /= total;
    }
    ylo
}

/// PMF of the hypergeometric distribution: `draws` taken without
/// replacement from a population of `n` containing `successes` marked
/// items.
pub fn hypergeometric_pmf(n: u64, successes: u64, draws: u64, mode: ArithMode) -> Result<Pmf> {
    if successes > n || draws > n {
        return Err(Error::DomainError(format!(
            "hypergeometric parameters out of range: n={n}, successes={successes}, draws={draws}"
        )));
    }
    match mode {
        ArithMode::Exact => {
            let (ylo, row) = hyper_row_exact(n, successes, draws);
            let den = binomial(n, draws);
            let probs = row
                .into_iter()
                .map(|w| BigRational::new(w, den.clone()))
                .collect();
            Ok(Pmf::from_exact(ylo as i64, probs))
        }
        ArithMode::LogFloat => {
            let mut scratch = Vec::new();
            let ylo = hyper_row_float(n, successes, draws, &mut scratch);
            Ok(Pmf::from_float(ylo as i64, scratch))
        }
    }
}

/// Exact law of the all-collectors cell, by propagating the mass
/// function through the conditional hypergeometric chain. Work per
/// collector is the product of consecutive live support widths.
pub fn cell_pmf(mv: &MarginVector, mode: ArithMode) -> Result<Pmf> {
    cell_pmf_with_cap(mv, mode, DEFAULT_SUPPORT_CAP)
}

/// As [`cell_pmf`] with an explicit cap on the live support width.
pub fn cell_pmf_with_cap(mv: &MarginVector, mode: ArithMode, cap: u64) -> Result<Pmf> {
    let n = mv.n();
    let a = mv.margins();
    let mut lo = a[0];
    let hi = a[0];
    // X after the first collector is its margin, deterministically.
    check_width(lo, hi, cap)?;
    match mode {
        ArithMode::Exact => {
            let mut nums: Vec<BigInt> = vec![BigInt::one()];
            let mut den = BigInt::one();
            for &ak in &a[1..] {
                let new_lo = (lo + ak).saturating_sub(n);
                check_width(new_lo, hi, cap)?;
                let mut acc = vec![BigInt::zero(); (hi - new_lo + 1) as usize];
                for (xi, numx) in nums.iter().enumerate() {
                    if numx.is_zero() {
                        continue;
                    }
                    let x = lo + xi as u64;
                    let (ylo, row) = hyper_row_exact(n, x, ak);
                    for (yi, w) in row.iter().enumerate() {
                        acc[(ylo + yi as u64 - new_lo) as usize] += numx * w;
                    }
                }
                den *= binomial(n, ak);
                nums = acc;
                lo = new_lo;
            }
            let probs = nums
                .into_iter()
                .map(|w| BigRational::new(w, den.clone()))
                .collect();
            Ok(Pmf::from_exact(lo as i64, probs))
        }
        ArithMode::LogFloat => {
            let mut probs: Vec<f64> = vec![1.0];
            let mut scratch = Vec::new();
            for &ak in &a[1..] {
                let new_lo = (lo + ak).saturating_sub(n);
                check_width(new_lo, hi, cap)?;
                let mut acc = vec![0.0f64; (hi - new_lo + 1) as usize];
                for xi in 0..probs.len() {
                    let px = probs[xi];
                    if px <= 0.0 {
                        continue;
                    }
                    let x = lo + xi as u64;
                    let ylo = hyper_row_float(n, x, ak, &mut scratch);
                    let base = (ylo - new_lo) as usize;
                    for (yi, w) in scratch.iter().enumerate() {
                        acc[base + yi] += px * w;
                    }
                }
                probs = acc;
                lo = new_lo;
            }
            Ok(Pmf::from_float(lo as i64, probs))
        }
    }
}

fn check_width(lo: u64, hi: u64, cap: u64) -> Result<()> {
    let width = hi - lo + 1;
    if width > cap {
        return Err(Error::ResourceLimit {
            required: width,
            cap,
        });
    }
    Ok(())
}

/// Expectations `E_1..E_m` and variances `V_1..V_m` of the running
/// intersection count, as exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    pub expectations: Vec<BigRational>,
    pub variances: Vec<BigRational>,
}

impl MomentSequence {
    pub fn m(&self) -> usize {
        self.expectations.len()
    }

    /// Final expectation `E_m`.
    pub fn mean(&self) -> &BigRational {
        self.expectations.last().unwrap()
    }

    /// Final variance `V_m`.
    pub fn variance(&self) -> &BigRational {
        self.variances.last().unwrap()
    }

    pub fn mean_f64(&self) -> f64 {
        self.mean().to_f64().unwrap_or(f64::NAN)
    }

    pub fn variance_f64(&self) -> f64 {
        self.variance().to_f64().unwrap_or(f64::NAN)
    }
}

/// Moment recursion over the collector chain:
/// `E_k = (a_k / n) E_{k-1}` starting from `E_1 = a_1`, and
/// `V_k = a_k (n - a_k) E_{k-1} (n - E_{k-1}) / (n^2 (n-1))
///       + a_k (a_k - 1) V_{k-1} / (n (n-1))` starting from `V_1 = 0`.
pub fn moment_sequence(mv: &MarginVector) -> MomentSequence {
    let a: Vec<BigInt> = mv.margins().iter().map(|&x| BigInt::from(x)).collect();
    moment_sequence_big(&BigInt::from(mv.n()), &a)
}

/// Moment recursion for arbitrarily large integer inputs; used by the
/// asymptotic layer's high-precision grids. Margins need not be sorted.
pub fn moment_sequence_big(n: &BigInt, a: &[BigInt]) -> MomentSequence {
    assert!(a.len() >= 2, "need at least two collectors");
    let n_rat = BigRational::from_integer(n.clone());
    let one = BigRational::one();
    let mut expectations = vec![BigRational::from_integer(a[0].clone())];
    let mut variances = vec![BigRational::zero()];
    for ak in &a[1..] {
        let ak = BigRational::from_integer(ak.clone());
        let e_prev = expectations.last().unwrap().clone();
        let v_prev = variances.last().unwrap().clone();
        let e_k = &ak / &n_rat * &e_prev;
        let nn1 = &n_rat * &n_rat * (&n_rat - &one);
        let v_k = &ak * (&n_rat - &ak) * &e_prev * (&n_rat - &e_prev) / nn1
            + &ak * (&ak - &one) / (&n_rat * (&n_rat - &one)) * v_prev;
        expectations.push(e_k);
        variances.push(v_k);
    }
    MomentSequence {
        expectations,
        variances,
    }
}

/// Closed-form variance for two collectors:
/// `a1 a2 (n - a1)(n - a2) / (n^2 (n - 1))`.
pub fn pair_variance(n: u64, a1: u64, a2: u64) -> Result<BigRational> {
    for (i, a) in [a1, a2].into_iter().enumerate() {
        if a < 1 || a > n - 1 {
            return Err(Error::MarginOutOfRange {
                index: i + 1,
                value: a as i128,
                max: n - 1,
            });
        }
    }
    let n = BigRational::from_integer(BigInt::from(n));
    let a1 = BigRational::from_integer(BigInt::from(a1));
    let a2 = BigRational::from_integer(BigInt::from(a2));
    let one = BigRational::one();
    Ok(&a1 * &a2 * (&n - &a1) * (&n - &a2) / (&n * &n * (&n - &one)))
}
