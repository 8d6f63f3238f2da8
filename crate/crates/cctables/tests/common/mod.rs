//! Shared test oracles, independent of the library's computation paths.

use num_bigint::BigInt;
use num_rational::BigRational;

/// Brute-force law of the all-collectors cell: enumerate every tuple of
/// collector subsets (uniform over the product of binomials) and tally
/// the size of the common intersection.
pub fn enumerate_cell_law(n: u64, a: &[u64]) -> Vec<BigRational> {
    assert!(n <= 16, "enumeration oracle is for tiny instances");
    let subsets: Vec<Vec<u32>> = a.iter().map(|&k| k_subsets(n, k)).collect();
    let mut counts = vec![0u64; a.iter().copied().min().unwrap() as usize + 1];
    let mut total = 0u64;
    let mut idx = vec![0usize; a.len()];
    loop {
        let inter = idx
            .iter()
            .zip(&subsets)
            .fold(u32::MAX, |acc, (&i, sets)| acc & sets[i]);
        counts[inter.count_ones() as usize] += 1;
        total += 1;
        // odometer over the tuple space
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < subsets[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == idx.len() {
                let denom = BigInt::from(total);
                return counts
                    .into_iter()
                    .map(|c| BigRational::new(BigInt::from(c), denom.clone()))
                    .collect();
            }
        }
    }
}

/// All k-subsets of an n-bit mask, via Gosper's hack.
pub fn k_subsets(n: u64, k: u64) -> Vec<u32> {
    assert!(k >= 1 && k <= n);
    let mut sets = Vec::new();
    let mut mask: u32 = (1 << k) - 1;
    let limit: u32 = 1 << n;
    while mask < limit {
        sets.push(mask);
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    sets
}
