//! Classification of the limiting distribution of the cell from a
//! symbolic margin spec.
//!
//! The decision procedure follows the variance dichotomy: the cell is
//! asymptotically normal exactly when its variance diverges, and the
//! variance order equals that of `(n - a_1)(n - a_2) / n * prod(a_i / n)`.
//! Under power-sum margins that order is the leading exponent of an
//! explicit power sum, so the test is symbolic and exact. When the
//! variance converges the limit is Poisson (possibly degenerate), the
//! subcase is read off the two smallest margin fractions, and the rate is
//! the limit of the matching mean, evaluated exactly on a grid of
//! perfect-power `n` where every margin is an exact integer.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::exact::{moment_sequence, moment_sequence_big, MomentSequence};
use crate::model::{GrowthSpec, MarginVector};
use crate::powersum::{Exponent, PowerSum};

/// Absolute tolerance on successive matching-mean differences for the
/// rate-limit certificate.
pub const RATE_TOL: f64 = 1e-6;

/// Largest grid point used by the rate estimator, as a power of two.
const MAX_GRID_BITS: u64 = 240;

/// Limiting regime of the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Degenerate,
    PoissonI,
    PoissonII,
    PoissonIII,
    Normal,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Degenerate => "Degenerate",
            Regime::PoissonI => "PoissonI",
            Regime::PoissonII => "PoissonII",
            Regime::PoissonIII => "PoissonIII",
            Regime::Normal => "Normal",
        }
    }

    pub fn is_poisson(self) -> bool {
        matches!(self, Regime::PoissonI | Regime::PoissonII | Regime::PoissonIII)
    }
}

/// Which affine transform of the cell converges: the cell itself, its
/// complement within the smallest margin, or its overshoot over the
/// margin sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoissonCase {
    I,
    II,
    III,
}

/// Leading order of the variance proxy
/// `(n - a_1)(n - a_2) prod(a_i) / n^(m+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceOrder {
    pub exponent: Exponent,
    pub coefficient: BigRational,
}

impl VarianceOrder {
    pub fn coefficient_f64(&self) -> f64 {
        self.coefficient.to_f64().unwrap_or(f64::NAN)
    }
}

/// One grid point of the matching-mean trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSample {
    /// Grid point, approximately (grid points can exceed `u64`).
    pub n: f64,
    pub value: f64,
}

/// Extrapolated limit of the matching mean with its convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub value: f64,
    /// Grid point at which successive differences fell below [`RATE_TOL`].
    pub converged_at: f64,
    pub trace: Vec<RateSample>,
}

/// Classifier output: regime, Poisson rate, margin fractions, and the
/// symbolic evidence backing the call.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub regime: Regime,
    /// Poisson rate; 0 for the degenerate regime, `None` for normal.
    pub rho: Option<f64>,
    /// Limits `a_i / n`, in canonical collector order.
    pub alphas: Vec<BigRational>,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub variance_order: VarianceOrder,
    pub rate: Option<RateEstimate>,
}

impl Classification {
    pub fn alphas_f64(&self) -> Vec<f64> {
        self.alphas.iter().map(|a| a.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Poisson subcase implied by the two smallest margin fractions;
    /// `None` in the normal regime.
    pub fn poisson_case(&self) -> Option<PoissonCase> {
        match self.regime {
            Regime::PoissonI => Some(PoissonCase::I),
            Regime::PoissonII => Some(PoissonCase::II),
            Regime::PoissonIII => Some(PoissonCase::III),
            Regime::Degenerate => {
                let one = BigRational::one();
                match (self.alphas[0].is_zero(), self.alphas[1] == one) {
                    (true, false) => Some(PoissonCase::I),
                    (true, true) => Some(PoissonCase::II),
                    (false, true) => Some(PoissonCase::III),
                    (false, false) => None,
                }
            }
            Regime::Normal => None,
        }
    }
}

/// Sort collectors into canonical order (ascending by eventual
/// dominance) and return the sorted sequences.
fn canonical_collectors(g: &GrowthSpec) -> Vec<PowerSum> {
    let mut cs = g.collectors.clone();
    cs.sort_by(|a, b| a.cmp_asymptotic(b));
    cs
}

/// Margin fraction limits `alpha_i`, in canonical collector order.
pub fn alpha_limits(g: &GrowthSpec) -> Vec<BigRational> {
    canonical_collectors(g)
        .iter()
        .map(|c| c.coeff_at(Exponent::one()))
        .collect()
}

/// Growth-rate admissibility: every margin and every complement must
/// diverge. Constant or near-`n` margins leave the model's asymptotic
/// assumptions and are rejected.
fn check_divergence(collectors: &[PowerSum]) -> Result<()> {
    for (i, c) in collectors.iter().enumerate() {
        if !c.diverges_positive() {
            return Err(Error::SpecError(format!(
                "margin sequence {} ({}) does not tend to infinity",
                i + 1,
                c
            )));
        }
        let complement = PowerSum::n().sub(c);
        if !complement.diverges_positive() {
            return Err(Error::SpecError(format!(
                "margin complement n - ({}) does not tend to infinity",
                c
            )));
        }
    }
    Ok(())
}

/// Leading order of the variance proxy. Exponent > 0 means the variance
/// diverges, = 0 means it stays of constant order, < 0 means it
/// vanishes.
pub fn variance_order(g: &GrowthSpec) -> Result<VarianceOrder> {
    let collectors = canonical_collectors(g);
    check_divergence(&collectors)?;
    variance_order_sorted(&collectors)
}

fn variance_order_sorted(collectors: &[PowerSum]) -> Result<VarianceOrder> {
    let n = PowerSum::n();
    let mut expr = n.sub(&collectors[0]).mul(&n.sub(&collectors[1]));
    for c in collectors {
        expr = expr.mul(c);
    }
    let expr = expr.shift_down(collectors.len() as i64 + 1);
    let lead = expr
        .leading()
        .ok_or_else(|| Error::Unclassifiable("variance proxy vanished".into()))?;
    if !lead.coeff.is_positive() {
        return Err(Error::Unclassifiable(format!(
            "variance proxy has nonpositive leading term {} n^({})",
            lead.coeff, lead.expo
        )));
    }
    Ok(VarianceOrder {
        exponent: lead.expo,
        coefficient: lead.coeff.clone(),
    })
}

/// Matching mean per subcase, as an exact rational at concrete margins.
fn matching_mean(n: &BigInt, a: &[BigInt], case: PoissonCase) -> BigRational {
    let mom = moment_sequence_big(n, a);
    matching_mean_from_moments(n, a, &mom, case)
}

fn matching_mean_from_moments(
    n: &BigInt,
    a: &[BigInt],
    mom: &MomentSequence,
    case: PoissonCase,
) -> BigRational {
    match case {
        PoissonCase::I => mom.mean().clone(),
        PoissonCase::II => {
            let a1 = a.iter().min().unwrap().clone();
            BigRational::from_integer(a1) - mom.mean()
        }
        PoissonCase::III => {
            let m = BigInt::from(a.len() as u64 - 1);
            let sum: BigInt = a.iter().sum();
            mom.mean().clone() + BigRational::from_integer(m * n - sum)
        }
    }
}

/// High-precision limit of the matching mean on a geometric grid.
///
/// When the exponent denominators have a small lcm `L`, the grid walks
/// perfect powers `n = 2^(L j)` so every margin is an exact integer and
/// the sequence carries no rounding jitter. Convergence is certified by
/// two consecutive differences below [`RATE_TOL`]; the reported value is
/// the Aitken-extrapolated limit at that point.
pub fn rate_estimate(g: &GrowthSpec, case: PoissonCase) -> Result<RateEstimate> {
    let lcm = g
        .collectors
        .iter()
        .fold(1i64, |acc, c| acc.lcm(&c.exponent_denom_lcm()));
    let step_bits = if lcm <= 24 { lcm as u64 } else { 1 };
    let start_bits = {
        let mut bits = 64 - g.n_min.max(2).leading_zeros() as u64;
        if !g.n_min.is_power_of_two() {
            bits += 1;
        }
        bits.div_ceil(step_bits) * step_bits
    };

    let mut trace: Vec<RateSample> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut small_deltas = 0usize;
    let mut bits = start_bits;
    while bits <= MAX_GRID_BITS {
        let n = BigUint::one() << bits;
        let a = g.margins_at_big(&n)?;
        let mu = matching_mean(&BigInt::from(n.clone()), &a, case)
            .to_f64()
            .ok_or_else(|| Error::NoConvergence("matching mean overflowed f64".into()))?;
        let n_f = 2f64.powi(bits as i32);
        trace.push(RateSample { n: n_f, value: mu });
        values.push(mu);
        if values.len() >= 2 {
            let delta = (values[values.len() - 1] - values[values.len() - 2]).abs();
            if delta < RATE_TOL {
                small_deltas += 1;
            } else {
                small_deltas = 0;
            }
            if small_deltas >= 2 && values.len() >= 3 {
                return Ok(RateEstimate {
                    value: aitken(&values),
                    converged_at: n_f,
                    trace,
                });
            }
        }
        bits += step_bits;
    }
    Err(Error::NoConvergence(format!(
        "matching mean not stable within {RATE_TOL} by n = 2^{MAX_GRID_BITS}; trace tail: {:?}",
        &values[values.len().saturating_sub(4)..]
    )))
}

/// Aitken delta-squared extrapolation of the last three values, falling
/// back to the final value for (numerically) constant tails.
fn aitken(values: &[f64]) -> f64 {
    let k = values.len();
    let (x0, x1, x2) = (values[k - 3], values[k - 2], values[k - 1]);
    let denom = x2 - 2.0 * x1 + x0;
    if denom.abs() < 1e-14 * (x2.abs() + 1.0) {
        return x2;
    }
    let d = x2 - x1;
    x2 - d * d / denom
}

/// Full classification of a margin spec.
pub fn classify(g: &GrowthSpec) -> Result<Classification> {
    let collectors = canonical_collectors(g);
    check_divergence(&collectors)?;
    let alphas: Vec<BigRational> = collectors
        .iter()
        .map(|c| c.coeff_at(Exponent::one()))
        .collect();
    let order = variance_order_sorted(&collectors)?;

    if order.exponent.is_positive() {
        return Ok(Classification {
            regime: Regime::Normal,
            rho: None,
            alphas,
            evidence: Evidence {
                variance_order: order,
                rate: None,
            },
        });
    }

    // Converging variance forces the two smallest margin fractions into
    // {0, 1}; anything else contradicts the dichotomy.
    let one = BigRational::one();
    let case = match (alphas[0].is_zero(), &alphas[1]) {
        (true, a2) if a2.is_zero() => PoissonCase::I,
        (true, a2) if *a2 == one => PoissonCase::II,
        (false, a2) if alphas[0] == one && *a2 == one => PoissonCase::III,
        _ => {
            return Err(Error::Unclassifiable(format!(
                "variance order n^({}) converges but margin fractions ({:?}) are not 0/1",
                order.exponent,
                alphas.iter().map(|a| a.to_f64().unwrap()).collect::<Vec<_>>()
            )))
        }
    };

    let rate = rate_estimate(g, case)?;
    if order.exponent.is_negative() {
        return Ok(Classification {
            regime: Regime::Degenerate,
            rho: Some(0.0),
            alphas,
            evidence: Evidence {
                variance_order: order,
                rate: Some(rate),
            },
        });
    }

    let regime = match case {
        PoissonCase::I => Regime::PoissonI,
        PoissonCase::II => Regime::PoissonII,
        PoissonCase::III => Regime::PoissonIII,
    };
    Ok(Classification {
        regime,
        rho: Some(rate.value),
        alphas,
        evidence: Evidence {
            variance_order: order,
            rate: Some(rate),
        },
    })
}

/// The limiting law and the affine transform converging to it.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitLaw {
    Poisson(f64),
    StandardNormal,
    PointMassZero,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShiftForm {
    /// Closed-form shift, a power sum in `n`.
    Closed(PowerSum),
    /// Exact finite-`n` mean from the moment recursion.
    ExactMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleForm {
    One,
    /// Exact finite-`n` standard deviation from the moment recursion.
    ExactStdDev,
}

/// The statement `(sign * X + shift) / scale -> law`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitStatement {
    pub sign: i8,
    pub shift: ShiftForm,
    pub scale: ScaleForm,
    pub law: LimitLaw,
    pub case: Option<PoissonCase>,
}

impl LimitStatement {
    /// Integer shift at concrete margins, for the Poisson and degenerate
    /// forms. The shift is built from the rounded margins themselves, so
    /// the transformed variable stays integer-valued.
    pub fn shift_at(&self, mv: &MarginVector) -> Option<i64> {
        match self.case? {
            PoissonCase::I => Some(0),
            PoissonCase::II => Some(mv.smallest() as i64),
            PoissonCase::III => {
                let m = mv.m() as i128 - 1;
                let shift = m * mv.n() as i128 - mv.margin_sum() as i128;
                Some(shift as i64)
            }
        }
    }

    /// Transformed integer law `sign * X + shift` for the Poisson and
    /// degenerate forms.
    pub fn transformed_pmf(&self, pmf: &crate::exact::Pmf, mv: &MarginVector) -> Option<crate::exact::Pmf> {
        let shift = self.shift_at(mv)?;
        Some(pmf.affine(self.sign, shift))
    }

    /// Matching mean of the transformed variable at concrete margins.
    pub fn matching_mean_at(&self, mv: &MarginVector) -> Option<BigRational> {
        let case = self.case?;
        let n = BigInt::from(mv.n());
        let a: Vec<BigInt> = mv.margins().iter().map(|&x| BigInt::from(x)).collect();
        Some(matching_mean(&n, &a, case))
    }

    /// Human-readable transform, e.g. `-X + n^(1/2) -> Pois(2)`.
    pub fn describe(&self) -> String {
        let lhs = match (&self.shift, self.sign) {
            (ShiftForm::ExactMean, _) => "(X - mean(n)) / sd(n)".to_string(),
            (ShiftForm::Closed(ps), sign) => {
                let var = if sign >= 0 { "X" } else { "-X" };
                if ps.is_zero() {
                    var.to_string()
                } else {
                    let rendered = ps.to_string();
                    match rendered.strip_prefix('-') {
                        Some(rest) => format!("{var} - {rest}"),
                        None => format!("{var} + {rendered}"),
                    }
                }
            }
        };
        let rhs = match &self.law {
            LimitLaw::Poisson(rho) => format!("Pois({})", format_compact(*rho)),
            LimitLaw::StandardNormal => "N(0,1)".to_string(),
            LimitLaw::PointMassZero => "0".to_string(),
        };
        format!("{lhs} -> {rhs}")
    }
}

/// Format with six decimals, trailing zeros trimmed.
pub fn format_compact(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Build the limit statement for a classification.
pub fn limit_statement(c: &Classification, g: &GrowthSpec) -> Result<LimitStatement> {
    let collectors = canonical_collectors(g);
    let case = c.poisson_case();
    let (sign, shift) = match (c.regime, case) {
        (Regime::Normal, _) => (1, ShiftForm::ExactMean),
        (_, Some(PoissonCase::I)) => (1, ShiftForm::Closed(PowerSum::zero())),
        (_, Some(PoissonCase::II)) => (-1, ShiftForm::Closed(collectors[0].clone())),
        (_, Some(PoissonCase::III)) => {
            let m = collectors.len() as i64;
            let mn = PowerSum::monomial(
                BigRational::from_integer(BigInt::from(m - 1)),
                Exponent::one(),
            );
            let sum = collectors.iter().fold(PowerSum::zero(), |acc, c| acc.add(c));
            (1, ShiftForm::Closed(mn.sub(&sum)))
        }
        (regime, None) => {
            return Err(Error::Unclassifiable(format!(
                "no transform for regime {} with margin fractions {:?}",
                regime.as_str(),
                c.alphas_f64()
            )))
        }
    };
    let (scale, law) = match c.regime {
        Regime::Normal => (ScaleForm::ExactStdDev, LimitLaw::StandardNormal),
        Regime::Degenerate => (ScaleForm::One, LimitLaw::PointMassZero),
        _ => (ScaleForm::One, LimitLaw::Poisson(c.rho.unwrap())),
    };
    Ok(LimitStatement {
        sign,
        shift,
        scale,
        law,
        case,
    })
}

/// Exact mean and standard deviation at concrete margins, the centering
/// and scaling used by the normal regime.
pub fn standardization(mv: &MarginVector) -> (f64, f64) {
    let mom = moment_sequence(mv);
    (mom.mean_f64(), mom.variance_f64().sqrt())
}
