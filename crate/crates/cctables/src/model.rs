//! Domain types: concrete margin vectors, general tables with fixed
//! margins, and symbolic margin sequences.
//!
//! The underlying model: `m` collectors independently pick uniform random
//! subsets of sizes `a_1..a_m` from `n` coupons. The cell of interest is
//! the number of coupons picked by every collector. A cell of a general
//! `r_1 x ... x r_m` table with fixed margins reduces to this model by
//! keeping, per axis, the margin of the level the cell sits on.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::powersum::{snap_to_rational, PowerSum, Term, MAX_EXPONENT_DENOM};

/// A validated instance of the collector model: grand total `n` and one
/// subset size per collector, kept sorted ascending. The original input
/// order is retained as a permutation tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MarginVector {
    n: u64,
    margins: Vec<u64>,
    /// `permutation[i]` is the 1-based input position of `margins[i]`.
    permutation: Vec<usize>,
}

impl MarginVector {
    /// Validates `1 <= a_i <= n - 1` and `m >= 2`, then canonicalizes.
    pub fn new(n: u64, margins: &[u64]) -> Result<Self> {
        if margins.len() < 2 {
            return Err(Error::DimensionError { m: margins.len() });
        }
        if n < 2 {
            return Err(Error::DomainError(format!("grand total {n} too small")));
        }
        for (i, &a) in margins.iter().enumerate() {
            if a < 1 || a > n - 1 {
                return Err(Error::MarginOutOfRange {
                    index: i + 1,
                    value: a as i128,
                    max: n - 1,
                });
            }
        }
        let mut order: Vec<usize> = (0..margins.len()).collect();
        order.sort_by_key(|&i| (margins[i], i));
        Ok(MarginVector {
            n,
            margins: order.iter().map(|&i| margins[i]).collect(),
            permutation: order.iter().map(|&i| i + 1).collect(),
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> usize {
        self.margins.len()
    }

    /// Margins in canonical ascending order.
    pub fn margins(&self) -> &[u64] {
        &self.margins
    }

    pub fn smallest(&self) -> u64 {
        self.margins[0]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn margin_sum(&self) -> u64 {
        self.margins.iter().sum()
    }

    /// Lower end of the support of the all-collectors cell:
    /// `max(0, sum a_i - (m-1) n)`.
    pub fn support_min(&self) -> u64 {
        let slack = (self.m() as u64 - 1) * self.n;
        self.margin_sum().saturating_sub(slack)
    }

    /// Upper end of the support: the smallest margin.
    pub fn support_max(&self) -> u64 {
        self.smallest()
    }
}

/// Raw JSON form: `{"n": 10, "a": [4, 5, 6]}`.
#[derive(Debug, Deserialize)]
struct MarginVectorJson {
    n: u64,
    a: Vec<u64>,
}

impl MarginVector {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MarginVectorJson = serde_json::from_str(text)
            .map_err(|e| Error::SpecError(format!("margin vector JSON: {e}")))?;
        MarginVector::new(raw.n, &raw.a)
    }
}

/// An `r_1 x ... x r_m` contingency table shape with fixed one-way
/// margins summing to the grand total on every axis.
///
/// JSON form: `{"shape":[3,2,2],"n":16,"margins":[[2,4,10],[4,12],[4,12]]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginTable {
    pub shape: Vec<usize>,
    pub n: u64,
    pub margins: Vec<Vec<u64>>,
}

impl MarginTable {
    pub fn new(shape: Vec<usize>, n: u64, margins: Vec<Vec<u64>>) -> Result<Self> {
        let t = MarginTable { shape, n, margins };
        t.validate()?;
        Ok(t)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: MarginTable = serde_json::from_str(text)
            .map_err(|e| Error::SpecError(format!("margin table JSON: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.len() < 2 {
            return Err(Error::DimensionError {
                m: self.shape.len(),
            });
        }
        if self.shape.len() != self.margins.len() {
            return Err(Error::SpecError(format!(
                "{} axes in shape but {} margin lists",
                self.shape.len(),
                self.margins.len()
            )));
        }
        for (axis, (&r, b)) in self.shape.iter().zip(&self.margins).enumerate() {
            if r < 2 {
                return Err(Error::SpecError(format!(
                    "axis {} has {} levels, need at least 2",
                    axis + 1,
                    r
                )));
            }
            if b.len() != r {
                return Err(Error::SpecError(format!(
                    "axis {} has {} margins for {} levels",
                    axis + 1,
                    b.len(),
                    r
                )));
            }
            let sum: u64 = b.iter().sum();
            if sum != self.n {
                return Err(Error::SpecError(format!(
                    "margins on axis {} sum to {}, expected grand total {}",
                    axis + 1,
                    sum,
                    self.n
                )));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.shape.len()
    }

    /// Reduce the table to the collector model for one cell: along each
    /// axis keep the margin of the level the cell lies on. A margin of 0
    /// or `n` makes the cell deterministic and is reported as an error
    /// rather than silently handled.
    pub fn cell_margins(&self, cell: &CellRef) -> Result<MarginVector> {
        if cell.0.len() != self.m() {
            return Err(Error::DimensionError { m: cell.0.len() });
        }
        let mut a = Vec::with_capacity(self.m());
        for (axis, (&v, b)) in cell.0.iter().zip(&self.margins).enumerate() {
            if v < 1 || v > b.len() {
                return Err(Error::CellOutOfRange {
                    axis: axis + 1,
                    index: v,
                    size: b.len(),
                });
            }
            let margin = b[v - 1];
            if margin == 0 || margin == self.n {
                return Err(Error::MarginOutOfRange {
                    index: axis + 1,
                    value: margin as i128,
                    max: self.n - 1,
                });
            }
            a.push(margin);
        }
        MarginVector::new(self.n, &a)
    }
}

/// 1-based position of a cell in a general table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRef(pub Vec<usize>);

impl CellRef {
    pub fn new(indices: Vec<usize>) -> Self {
        CellRef(indices)
    }
}

/// Symbolic margin sequences `a_i(n)`, one power sum per collector,
/// valid for `n >= n_min`. Concrete margins come from rounding the sums
/// half-up at a given `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSpec {
    pub n_min: u64,
    pub collectors: Vec<PowerSum>,
}

/// JSON forms accepted for coefficients and exponents: a plain number or
/// a `"p/q"` string. Exponents must be rationals with denominator at
/// most 64; floats are snapped to the nearest such rational.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum NumberOrFraction {
    Number(f64),
    Fraction(String),
}

#[derive(Debug, Deserialize)]
struct TermJson {
    c: NumberOrFraction,
    gamma: NumberOrFraction,
}

#[derive(Debug, Deserialize)]
struct CollectorJson {
    terms: Vec<TermJson>,
}

#[derive(Debug, Deserialize)]
struct GrowthSpecJson {
    n_min: u64,
    collectors: Vec<CollectorJson>,
}

fn parse_fraction(s: &str) -> Result<BigRational> {
    let parse_int = |t: &str| {
        t.trim()
            .parse::<BigInt>()
            .map_err(|_| Error::SpecError(format!("bad rational component {t:?}")))
    };
    match s.split_once('/') {
        Some((num, den)) => {
            let den = parse_int(den)?;
            if den.is_zero() {
                return Err(Error::SpecError(format!("zero denominator in {s:?}")));
            }
            Ok(BigRational::new(parse_int(num)?, den))
        }
        None => Ok(BigRational::from_integer(parse_int(s)?)),
    }
}

impl GrowthSpec {
    pub fn new(n_min: u64, collectors: Vec<PowerSum>) -> Result<Self> {
        let g = GrowthSpec { n_min, collectors };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GrowthSpecJson = serde_json::from_str(text)
            .map_err(|e| Error::SpecError(format!("growth spec JSON: {e}")))?;
        let mut collectors = Vec::with_capacity(raw.collectors.len());
        for c in raw.collectors {
            let mut terms = Vec::with_capacity(c.terms.len());
            for t in c.terms {
                let coeff = match t.c {
                    // f64 -> rational is exact (floats are dyadic)
                    NumberOrFraction::Number(x) => BigRational::from_float(x)
                        .ok_or_else(|| Error::SpecError(format!("bad coefficient {x}")))?,
                    NumberOrFraction::Fraction(s) => parse_fraction(&s)?,
                };
                let expo = match t.gamma {
                    NumberOrFraction::Number(x) => {
                        snap_to_rational(x, MAX_EXPONENT_DENOM, 1e-9)?
                    }
                    NumberOrFraction::Fraction(s) => {
                        let r = parse_fraction(&s)?;
                        let num = r.numer().to_i64().ok_or_else(|| {
                            Error::SpecError(format!("exponent {s} out of range"))
                        })?;
                        let den = r.denom().to_i64().ok_or_else(|| {
                            Error::SpecError(format!("exponent {s} out of range"))
                        })?;
                        num_rational::Ratio::new(num, den)
                    }
                };
                terms.push(Term { coeff, expo });
            }
            collectors.push(PowerSum::from_terms(terms));
        }
        GrowthSpec::new(raw.n_min, collectors)
    }

    fn validate(&self) -> Result<()> {
        if self.collectors.len() < 2 {
            return Err(Error::DimensionError {
                m: self.collectors.len(),
            });
        }
        for (i, ps) in self.collectors.iter().enumerate() {
            for t in ps.terms() {
                if t.expo.is_negative() || t.expo > num_rational::Ratio::new(1, 1) {
                    return Err(Error::SpecError(format!(
                        "collector {}: exponent {} outside [0, 1]",
                        i + 1,
                        t.expo
                    )));
                }
            }
            let alpha = ps.coeff_at(num_rational::Ratio::new(1, 1));
            if alpha.is_negative() || alpha > BigRational::from_integer(BigInt::from(1)) {
                return Err(Error::SpecError(format!(
                    "collector {}: linear coefficient {} outside [0, 1]",
                    i + 1,
                    alpha
                )));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.collectors.len()
    }

    /// Concrete margins at `n`, rounded half-up, validated, canonical.
    pub fn margins_at(&self, n: u64) -> Result<MarginVector> {
        if n < self.n_min {
            return Err(Error::DomainError(format!(
                "n = {n} below the spec's validity threshold {}",
                self.n_min
            )));
        }
        let big = self.margins_at_big(&BigUint::from(n))?;
        let margins: Vec<u64> = big.iter().map(|a| a.to_u64().unwrap()).collect();
        MarginVector::new(n, &margins)
    }

    /// Margin evaluation for arbitrarily large `n` (used by the
    /// asymptotic layer's high-precision grids). Checks the `[1, n-1]`
    /// window but skips `u64` conversion.
    pub fn margins_at_big(&self, n: &BigUint) -> Result<Vec<BigInt>> {
        let n_int = BigInt::from(n.clone());
        let mut out = Vec::with_capacity(self.collectors.len());
        for (i, ps) in self.collectors.iter().enumerate() {
            let a = ps.eval_rounded(n);
            if a < BigInt::from(1) || a > &n_int - 1 {
                return Err(Error::MarginOutOfRange {
                    index: i + 1,
                    value: a.to_i128().unwrap_or(i128::MAX),
                    max: n.to_u64().unwrap_or(u64::MAX).saturating_sub(1),
                });
            }
            out.push(a);
        }
        Ok(out)
    }
}

/// A general table shape whose margins are symbolic sequences of `n`:
/// the symbolic counterpart of [`MarginTable`]. Margins on each axis
/// must sum to `n` identically.
#[derive(Debug, Clone)]
pub struct GrowthTable {
    pub shape: Vec<usize>,
    pub n_min: u64,
    pub axes: Vec<Vec<PowerSum>>,
}

impl GrowthTable {
    pub fn new(shape: Vec<usize>, n_min: u64, axes: Vec<Vec<PowerSum>>) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::DimensionError { m: shape.len() });
        }
        if shape.len() != axes.len() {
            return Err(Error::SpecError(format!(
                "{} axes in shape but {} margin lists",
                shape.len(),
                axes.len()
            )));
        }
        for (axis, (&r, bs)) in shape.iter().zip(&axes).enumerate() {
            if bs.len() != r {
                return Err(Error::SpecError(format!(
                    "axis {} has {} margin sequences for {} levels",
                    axis + 1,
                    bs.len(),
                    r
                )));
            }
            let total = bs.iter().fold(PowerSum::zero(), |acc, b| acc.add(b));
            if total != PowerSum::n() {
                return Err(Error::SpecError(format!(
                    "margin sequences on axis {} sum to {total}, expected n",
                    axis + 1
                )));
            }
        }
        Ok(GrowthTable { shape, n_min, axes })
    }

    pub fn m(&self) -> usize {
        self.shape.len()
    }

    /// Growth spec of one cell: along each axis keep the margin sequence
    /// of the level the cell lies on.
    pub fn cell_spec(&self, cell: &CellRef) -> Result<GrowthSpec> {
        if cell.0.len() != self.m() {
            return Err(Error::DimensionError { m: cell.0.len() });
        }
        let mut collectors = Vec::with_capacity(self.m());
        for (axis, (&v, bs)) in cell.0.iter().zip(&self.axes).enumerate() {
            if v < 1 || v > bs.len() {
                return Err(Error::CellOutOfRange {
                    axis: axis + 1,
                    index: v,
                    size: bs.len(),
                });
            }
            collectors.push(bs[v - 1].clone());
        }
        GrowthSpec::new(self.n_min, collectors)
    }

    /// Concrete margin table at a given `n`.
    pub fn margin_table_at(&self, n: u64) -> Result<MarginTable> {
        let nn = BigUint::from(n);
        let mut margins = Vec::with_capacity(self.m());
        for bs in &self.axes {
            let mut row = Vec::with_capacity(bs.len());
            for b in bs {
                let v = b.eval_rounded(&nn).to_u64().ok_or_else(|| {
                    Error::SpecError("margin sequence evaluates negative".into())
                })?;
                row.push(v);
            }
            // rounding may break the exact axis sum; absorb the slack
            // into the largest level so the table stays consistent
            let sum: u64 = row.iter().sum();
            let largest = (0..row.len()).max_by_key(|&i| row[i]).unwrap();
            if sum != n {
                let fixed = row[largest] as i128 + n as i128 - sum as i128;
                if fixed < 0 {
                    return Err(Error::SpecError(
                        "margins cannot be balanced to the grand total".into(),
                    ));
                }
                row[largest] = fixed as u64;
            }
            margins.push(row);
        }
        MarginTable::new(self.shape.clone(), n, margins)
    }
}

/// The two bundled `3 x 2 x 2` layouts accepted by the CLI table
/// command (`which` is 2 or 3). Both share the first two axes; they
/// differ in whether the third axis splits as `(n^(1/2), n - n^(1/2))`
/// or evenly as `(n/2, n/2)`.
pub fn example_growth_table(which: u8) -> Result<GrowthTable> {
    let quarter = PowerSum::of(&[(1, 1, 4)]);
    let sqrt = PowerSum::of(&[(1, 1, 2)]);
    let rest = PowerSum::n().sub(&quarter).sub(&sqrt);
    let n_minus_sqrt = PowerSum::n().sub(&sqrt);
    let half = PowerSum::monomial(
        BigRational::new(BigInt::from(1), BigInt::from(2)),
        num_rational::Ratio::new(1, 1),
    );
    let third_axis = match which {
        2 => vec![sqrt.clone(), n_minus_sqrt.clone()],
        3 => vec![half.clone(), half],
        _ => {
            return Err(Error::SpecError(format!(
                "no example table {which}; available: 2, 3"
            )))
        }
    };
    GrowthTable::new(
        vec![3, 2, 2],
        256,
        vec![
            vec![quarter, sqrt.clone(), rest],
            vec![sqrt, n_minus_sqrt],
            third_axis,
        ],
    )
}
