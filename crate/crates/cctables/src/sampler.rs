//! Monte Carlo generation of collector subsets, full cell tables, the
//! negative-association decomposition sums, and the birthday scenario.
//!
//! Reproducibility contract: every replication draws from its own
//! counter-derived stream of one ChaCha generator, so aggregates are
//! identical for any worker count, and identical seeds give identical
//! outputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::MarginVector;

/// Memory cap for modes that materialize all `n` coupons.
pub const FULL_TABLE_COUPON_CAP: u64 = 100_000_000;

/// Cap on the number of collectors in full-table mode (the table has
/// `2^m` cells).
pub const FULL_TABLE_COLLECTOR_CAP: usize = 20;

/// Independent generator for one replication index: one shared seed,
/// one ChaCha stream per counter value.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Collection indicators: bit `j` of row `i` is set iff coupon `j` was
/// collected by collector `i`. Row `i` has exactly `a_i` bits set.
#[derive(Debug, Clone)]
pub struct IndicatorMatrix {
    n: u64,
    rows: Vec<Vec<u64>>,
}

impl IndicatorMatrix {
    fn empty(n: u64, m: usize) -> Self {
        let words = (n as usize).div_ceil(64);
        IndicatorMatrix {
            n,
            rows: vec![vec![0u64; words]; m],
        }
    }

    /// Build from explicit coupon sets (0-based indices).
    pub fn from_sets(n: u64, sets: &[Vec<u64>]) -> Self {
        let mut im = Self::empty(n, sets.len());
        for (i, set) in sets.iter().enumerate() {
            for &j in set {
                assert!(j < n);
                im.rows[i][(j / 64) as usize] |= 1u64 << (j % 64);
            }
        }
        im
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn collected(&self, collector: usize, coupon: u64) -> bool {
        self.rows[collector][(coupon / 64) as usize] & (1u64 << (coupon % 64)) != 0
    }

    pub fn row_count(&self, collector: usize) -> u64 {
        self.rows[collector].iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// Draw one indicator matrix: each collector's subset uniform among the
/// size-`a_i` subsets, collectors independent.
pub fn sample_indicators(mv: &MarginVector, rng: &mut impl Rng) -> Result<IndicatorMatrix> {
    if mv.n() > FULL_TABLE_COUPON_CAP {
        return Err(Error::ResourceLimit {
            required: mv.n(),
            cap: FULL_TABLE_COUPON_CAP,
        });
    }
    let mut im = IndicatorMatrix::empty(mv.n(), mv.m());
    for (i, &a) in mv.margins().iter().enumerate() {
        let picks = rand::seq::index::sample(rng, mv.n() as usize, a as usize);
        for j in picks {
            im.rows[i][j / 64] |= 1u64 << (j % 64);
        }
    }
    Ok(im)
}

/// All `2^m` cell counts of the collected/not-collected table, indexed
/// by bitmask (bit `i` set = collected by collector `i`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellCounts {
    m: usize,
    counts: Vec<u64>,
}

impl CellCounts {
    pub fn m(&self) -> usize {
        self.m
    }

    /// Count for a cell given in 1/2 coordinates (1 = collected).
    pub fn count(&self, cell: &[usize]) -> u64 {
        assert_eq!(cell.len(), self.m);
        let mut mask = 0usize;
        for (i, &v) in cell.iter().enumerate() {
            assert!(v == 1 || v == 2);
            if v == 1 {
                mask |= 1 << i;
            }
        }
        self.counts[mask]
    }

    /// Count of coupons collected by every collector.
    pub fn intersection(&self) -> u64 {
        self.counts[(1 << self.m) - 1]
    }

    /// Margin of collector `i` recovered from the table.
    pub fn margin(&self, i: usize) -> u64 {
        (0..self.counts.len())
            .filter(|mask| mask & (1 << i) != 0)
            .map(|mask| self.counts[mask])
            .sum()
    }
}

/// Tabulate an indicator matrix into cell counts.
pub fn tabulate(im: &IndicatorMatrix) -> CellCounts {
    let m = im.m();
    assert!(m <= FULL_TABLE_COLLECTOR_CAP);
    let mut counts = vec![0u64; 1 << m];
    for j in 0..im.n() {
        let mut mask = 0usize;
        for i in 0..m {
            if im.collected(i, j) {
                mask |= 1 << i;
            }
        }
        counts[mask] += 1;
    }
    CellCounts { m, counts }
}

/// One table draw: sample subsets and tabulate all `2^m` cells.
pub fn sample_table(mv: &MarginVector, rng: &mut impl Rng) -> Result<CellCounts> {
    if mv.m() > FULL_TABLE_COLLECTOR_CAP {
        return Err(Error::ResourceLimit {
            required: mv.m() as u64,
            cap: FULL_TABLE_COLLECTOR_CAP as u64,
        });
    }
    Ok(tabulate(&sample_indicators(mv, rng)?))
}

/// The three decomposition sums of the indicator matrix, each a sum of
/// negatively associated per-coupon contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecompositionSums {
    /// Coupons collected by every collector (equals the cell count).
    pub intersection: u64,
    /// Coupons collected by the first collector but missed by at least
    /// one other (equals `a_1` minus the cell count).
    pub first_not_shared: u64,
    /// Sum over coupons of `max(misses - 1, 0)` (equals the cell count
    /// plus `(m-1) n` minus the margin sum).
    pub excess_misses: u64,
}

/// Compute the decomposition sums coupon by coupon. "First collector"
/// means row 0, which for a canonical margin vector carries the
/// smallest margin.
pub fn decompose(im: &IndicatorMatrix) -> DecompositionSums {
    let m = im.m();
    let mut intersection = 0u64;
    let mut first_not_shared = 0u64;
    let mut excess = 0u64;
    for j in 0..im.n() {
        let mut misses = 0u64;
        for i in 0..m {
            if !im.collected(i, j) {
                misses += 1;
            }
        }
        if misses == 0 {
            intersection += 1;
        }
        let first = im.collected(0, j);
        let missed_by_others = misses > if first { 0 } else { 1 };
        if first && missed_by_others {
            first_not_shared += 1;
        }
        excess += misses.saturating_sub(1);
    }
    DecompositionSums {
        intersection,
        first_not_shared,
        excess_misses: excess,
    }
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// One hypergeometric variate: `draws` without replacement from `n`
/// with `successes` marked. Inverse-CDF walk outward from the mode;
/// small supports and small draw counts fall back to a linear walk and
/// an explicit index sample respectively.
pub fn hypergeometric_draw(rng: &mut impl Rng, n: u64, successes: u64, draws: u64) -> u64 {
    let s = successes;
    let d = draws;
    debug_assert!(s <= n && d <= n);
    let lo = (s + d).saturating_sub(n);
    let hi = s.min(d);
    if lo == hi {
        return lo;
    }

    if s.min(d) <= 16 {
        // cheaper to place the smaller set explicitly and count hits
        let (small, other) = if s <= d { (s, d) } else { (d, s) };
        let picks = rand::seq::index::sample(rng, n as usize, small as usize);
        return picks.iter().filter(|&j| (j as u64) < other).count() as u64;
    }

    let mode = (((d + 1) as u128 * (s + 1) as u128) / (n + 2) as u128) as u64;
    let mode = mode.clamp(lo, hi);
    let ln_pm = ln_binomial(s, mode) + ln_binomial(n - s, d - mode) - ln_binomial(n, d);
    let pm = ln_pm.exp();

    let ratio_up = |y: u64| -> f64 {
        ((s - y) as f64 * (d - y) as f64) / ((y + 1) as f64 * (n + y + 1 - s - d) as f64)
    };
    let ratio_down = |x: u64| -> f64 {
        (x as f64 * (n + x - s - d) as f64) / ((s - x + 1) as f64 * (d - x + 1) as f64)
    };

    let mut u: f64 = rng.gen();
    if u <= pm {
        return mode;
    }
    u -= pm;
    let (mut xr, mut pr) = (mode, pm);
    let (mut xl, mut pl) = (mode, pm);
    loop {
        let mut stuck = true;
        if xr < hi {
            pr *= ratio_up(xr);
            xr += 1;
            if u <= pr {
                return xr;
            }
            u -= pr;
            stuck = false;
        }
        if xl > lo {
            pl *= ratio_down(xl);
            xl -= 1;
            if u <= pl {
                return xl;
            }
            u -= pl;
            stuck = false;
        }
        if stuck {
            // residual floating-point mass
            return mode;
        }
    }
}

/// One cell draw through the collector chain: O(m) hypergeometric
/// variates, no per-coupon allocation. Identically distributed to the
/// intersection count of [`sample_table`].
pub fn sample_cell(mv: &MarginVector, rng: &mut impl Rng) -> u64 {
    let n = mv.n();
    let a = mv.margins();
    let mut x = a[0];
    for &ak in &a[1..] {
        x = hypergeometric_draw(rng, n, x, ak);
    }
    x
}

/// Histogram of cell draws on the known support window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub offset: i64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(move |(i, &c)| (self.offset + i as i64, c))
    }

    pub fn mean(&self) -> f64 {
        let total = self.total() as f64;
        self.iter().map(|(x, c)| x as f64 * c as f64).sum::<f64>() / total
    }

    pub fn variance(&self) -> f64 {
        let total = self.total() as f64;
        let mean = self.mean();
        self.iter()
            .map(|(x, c)| c as f64 * (x as f64 - mean).powi(2))
            .sum::<f64>()
            / total
    }

    fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.offset, other.offset);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Two-column CSV (`value,count`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,count\n");
        for (x, c) in self.iter() {
            out.push_str(&format!("{x},{c}\n"));
        }
        out
    }
}

/// Replicated cell sampling, fanned out over `workers` threads.
/// Replication `r` always uses stream `r` of the shared seed, so the
/// histogram is identical for every worker count.
pub fn simulate_histogram(
    mv: &MarginVector,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<Histogram> {
    if reps == 0 {
        return Err(Error::EmptyInput);
    }
    let workers = workers.clamp(1, 1024);
    let offset = mv.support_min() as i64;
    let width = (mv.support_max() - mv.support_min() + 1) as usize;
    let chunk = reps.div_ceil(workers as u64);
    let mut partials: Vec<Histogram> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers as u64 {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(reps);
            let mv = &mv;
            handles.push(scope.spawn(move || {
                let mut counts = vec![0u64; width];
                for r in lo..hi {
                    let mut rng = stream_rng(seed, r);
                    let x = sample_cell(mv, &mut rng) as i64;
                    counts[(x - offset) as usize] += 1;
                }
                Histogram { offset, counts }
            }));
        }
        for h in handles {
            partials.push(h.join().expect("sampler worker panicked"));
        }
    });
    let mut total = partials.remove(0);
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}

/// Summary of the birthday scenario: every collector misses exactly one
/// coupon (`a_i = n - 1`), so the shifted cell `m - n + X` counts slot
/// collisions among `m` uniformly thrown misses.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthdaySummary {
    pub n: u64,
    pub m: u64,
    pub reps: u64,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
    /// Histogram of `m - n + X` (the collision count).
    pub histogram: Histogram,
}

/// Simulate the birthday scenario with `reps` replications: throw `m`
/// missed coupons uniformly into `n` slots; the cell is `n` minus the
/// number of occupied slots. O(m log m) per replication.
pub fn birthday_scenario(n: u64, m: u64, reps: u64, seed: u64) -> Result<BirthdaySummary> {
    if m < 2 {
        return Err(Error::DimensionError { m: m as usize });
    }
    if reps == 0 {
        return Err(Error::EmptyInput);
    }
    let mut slots: Vec<u64> = Vec::with_capacity(m as usize);
    let mut counts: Vec<u64> = Vec::new();
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for r in 0..reps {
        let mut rng = stream_rng(seed, r);
        slots.clear();
        for _ in 0..m {
            slots.push(rng.gen_range(0..n));
        }
        slots.sort_unstable();
        let distinct = 1 + slots.windows(2).filter(|w| w[0] != w[1]).count() as u64;
        let collisions = m - distinct;
        if counts.len() <= collisions as usize {
            counts.resize(collisions as usize + 1, 0);
        }
        counts[collisions as usize] += 1;
        sum += collisions as f64;
        sum_sq += (collisions * collisions) as f64;
    }
    let mean = sum / reps as f64;
    let variance = sum_sq / reps as f64 - mean * mean;
    Ok(BirthdaySummary {
        n,
        m,
        reps,
        seed,
        mean,
        variance,
        histogram: Histogram { offset: 0, counts },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{cell_pmf, ArithMode};

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: Vec<u64> = (0..4).map(|i| stream_rng(7, i).gen()).collect();
        let b: Vec<u64> = (0..4).map(|i| stream_rng(7, i).gen()).collect();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] != w[1]));
        assert_ne!(stream_rng(8, 0).gen::<u64>(), stream_rng(7, 0).gen::<u64>());
    }

    #[test]
    fn sampled_tables_satisfy_margin_constraints() {
        let mv = MarginVector::new(4, &[2, 2]).unwrap();
        for rep in 0..200 {
            let mut rng = stream_rng(11, rep);
            let t = sample_table(&mv, &mut rng).unwrap();
            assert_eq!(t.count(&[1, 1]) + t.count(&[1, 2]), 2);
            assert_eq!(t.count(&[1, 1]) + t.count(&[2, 1]), 2);
            let total: u64 = (0..4).map(|mask| t.counts[mask]).sum();
            assert_eq!(total, 4);
        }
        let mv = MarginVector::new(30, &[5, 12, 20]).unwrap();
        for rep in 0..100 {
            let mut rng = stream_rng(12, rep);
            let t = sample_table(&mv, &mut rng).unwrap();
            for (i, &a) in mv.margins().iter().enumerate() {
                assert_eq!(t.margin(i), a);
            }
        }
    }

    #[test]
    fn near_full_margins_leave_single_misses() {
        // every collector misses exactly one coupon
        let mv = MarginVector::new(10, &[9, 9, 9]).unwrap();
        for rep in 0..50 {
            let mut rng = stream_rng(3, rep);
            let im = sample_indicators(&mv, &mut rng).unwrap();
            let mut missed: Vec<u64> = Vec::new();
            for i in 0..3 {
                for j in 0..10 {
                    if !im.collected(i, j) {
                        missed.push(j);
                    }
                }
            }
            missed.sort_unstable();
            missed.dedup();
            let t = tabulate(&im);
            assert_eq!(t.intersection(), 10 - missed.len() as u64);
        }
    }

    #[test]
    fn empirical_two_collector_law() {
        let mv = MarginVector::new(4, &[2, 2]).unwrap();
        let reps = 100_000u64;
        let mut ones = 0u64;
        for rep in 0..reps {
            let mut rng = stream_rng(2024, rep);
            if sample_table(&mv, &mut rng).unwrap().intersection() == 1 {
                ones += 1;
            }
        }
        let p = ones as f64 / reps as f64;
        let sigma = (2.0 / 9.0 / reps as f64).sqrt();
        assert!((p - 2.0 / 3.0).abs() < 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn chain_sampler_matches_exact_law() {
        let mv = MarginVector::new(4, &[2, 2, 2]).unwrap();
        let pmf = cell_pmf(&mv, ArithMode::Exact).unwrap();
        let reps = 100_000u64;
        let hist = simulate_histogram(&mv, reps, 99, 4).unwrap();
        for (x, c) in hist.iter() {
            let p = pmf.prob(x);
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            let err = (c as f64 / reps as f64 - p).abs();
            assert!(err < 4.0 * se + 1e-9, "x={x}: err {err}, se {se}");
        }
    }

    #[test]
    fn chain_sampler_one_step_is_hypergeometric() {
        let mv = MarginVector::new(10, &[3, 9]).unwrap();
        let pmf = cell_pmf(&mv, ArithMode::Exact).unwrap();
        let reps = 50_000u64;
        let hist = simulate_histogram(&mv, reps, 5, 1).unwrap();
        assert_eq!(hist.offset, 2);
        for (x, c) in hist.iter() {
            let p = pmf.prob(x);
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((c as f64 / reps as f64 - p).abs() < 4.0 * se + 1e-9);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mv = MarginVector::new(50, &[20, 30, 40]).unwrap();
        let a: Vec<u64> = (0..64)
            .map(|r| sample_cell(&mv, &mut stream_rng(42, r)))
            .collect();
        let b: Vec<u64> = (0..64)
            .map(|r| sample_cell(&mv, &mut stream_rng(42, r)))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_identical_across_worker_counts() {
        let mv = MarginVector::new(40, &[15, 20, 35]).unwrap();
        let h1 = simulate_histogram(&mv, 5_000, 7, 1).unwrap();
        let h4 = simulate_histogram(&mv, 5_000, 7, 4).unwrap();
        let h16 = simulate_histogram(&mv, 5_000, 7, 16).unwrap();
        assert_eq!(h1, h4);
        assert_eq!(h4, h16);
    }

    #[test]
    fn decomposition_identities_by_hand() {
        // two collectors on four coupons, sets {0,1} and {1,2}
        let im = IndicatorMatrix::from_sets(4, &[vec![0, 1], vec![1, 2]]);
        let d = decompose(&im);
        assert_eq!(d.intersection, 1);
        assert_eq!(d.first_not_shared, 1);
        assert_eq!(d.excess_misses, 1);

        // total overlap
        let im = IndicatorMatrix::from_sets(6, &[vec![1, 3, 5], vec![1, 3, 5]]);
        let d = decompose(&im);
        assert_eq!(d.intersection, 3);
        assert_eq!(d.first_not_shared, 0);

        // perfect packing: disjoint sets covering all coupons
        let im = IndicatorMatrix::from_sets(6, &[vec![0, 1, 2], vec![3, 4, 5]]);
        let d = decompose(&im);
        assert_eq!(d.intersection, 0);
        assert_eq!(d.excess_misses, 0);
    }

    #[test]
    fn decomposition_identities_hold_per_sample() {
        for (n, a) in [(12u64, vec![3u64, 5, 9]), (8, vec![2, 2, 7, 7]), (20, vec![10, 19])] {
            let mv = MarginVector::new(n, &a).unwrap();
            let m = mv.m() as u64;
            let sum: u64 = mv.margin_sum();
            for rep in 0..200 {
                let mut rng = stream_rng(13, rep);
                let im = sample_indicators(&mv, &mut rng).unwrap();
                let d = decompose(&im);
                let x = tabulate(&im).intersection();
                assert_eq!(d.intersection, x);
                assert_eq!(d.first_not_shared, mv.smallest() - x);
                assert_eq!(
                    d.excess_misses as i64,
                    x as i64 + ((m - 1) * n) as i64 - sum as i64
                );
            }
        }
    }

    #[test]
    fn hypergeometric_draw_tracks_exact_moments() {
        let (n, s, d) = (1000u64, 300u64, 450u64);
        let reps = 40_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for rep in 0..reps {
            let mut rng = stream_rng(31, rep);
            let x = hypergeometric_draw(&mut rng, n, s, d) as f64;
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / reps as f64;
        let var = sum_sq / reps as f64 - mean * mean;
        let exact_mean = (s * d) as f64 / n as f64;
        let exact_var =
            (s * d * (n - s) * (n - d)) as f64 / ((n * n) as f64 * (n - 1) as f64);
        assert!((mean - exact_mean).abs() < 4.0 * (exact_var / reps as f64).sqrt());
        assert!((var - exact_var).abs() / exact_var < 0.05);
    }

    #[test]
    fn birthday_two_collectors_is_collision_probability() {
        let n = 100u64;
        let reps = 50_000u64;
        let s = birthday_scenario(n, 2, reps, 17).unwrap();
        let se = (1.0 / n as f64 / reps as f64).sqrt();
        assert!((s.mean - 1.0 / n as f64).abs() < 4.0 * se, "mean = {}", s.mean);
    }

    #[test]
    fn birthday_sparse_regime_vanishes() {
        // m = n^(1/4): collision rate m^2/(2n) -> 0
        let s = birthday_scenario(1_000_000, 31, 2_000, 23).unwrap();
        assert!(s.mean < 0.01, "mean = {}", s.mean);
    }
}
