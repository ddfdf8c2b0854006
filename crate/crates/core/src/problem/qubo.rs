//! Dense QUBO matrices stored in upper-triangular form.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ProblemError;

/// Default cap on the number of variables accepted by [`brute_force_optimum`].
pub const BRUTE_FORCE_CAP: usize = 20;

/// A binary objective `x^T Q x` over `n` variables.
///
/// Entries below the diagonal are always zero: on ingestion `Q[j][i]` is
/// folded into `Q[i][j]` for `i < j`, which leaves the objective unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl QuboMatrix {
    pub fn zeros(n: usize) -> Result<Self, ProblemError> {
        if n == 0 {
            return Err(ProblemError::EmptyMatrix);
        }
        Ok(Self {
            n,
            entries: vec![0.0; n * n],
        })
    }

    /// Builds a matrix from row-major rows, folding the lower triangle upward.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProblemError> {
        let n = rows.len();
        let mut q = Self::zeros(n)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ProblemError::NotSquare {
                    rows: n,
                    row: i,
                    len: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ProblemError::NonFinite { row: i, col: j });
                }
                q.add(i, j, v);
            }
        }
        Ok(q)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Coefficient of `x_i x_j` in canonical position (zero below the diagonal).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Adds `v` to the coefficient of `x_i x_j`, in either index order.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.entries[a * self.n + b] += v;
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            *e *= factor;
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// Number of nonzero slots on or above the diagonal.
    pub fn nonzero_slots(&self) -> usize {
        self.upper_entries().filter(|&(_, _, v)| v != 0.0).count()
    }

    /// Nonzero slots strictly above the diagonal.
    pub fn nonzero_couplings(&self) -> usize {
        self.upper_entries()
            .filter(|&(i, j, v)| i != j && v != 0.0)
            .count()
    }

    /// Fraction of nonzero slots among the `n(n+1)/2` upper-triangular positions.
    pub fn density(&self) -> f64 {
        self.nonzero_slots() as f64 / (self.n * (self.n + 1) / 2) as f64
    }

    /// Iterates `(i, j, Q_ij)` for `i <= j`.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| (i..self.n).map(move |j| (i, j, self.get(i, j))))
    }

    /// Evaluates `sum_{i<=j} x_i Q_ij x_j`.
    pub fn objective(&self, x: &[u8]) -> Result<f64, ProblemError> {
        if x.len() != self.n {
            return Err(ProblemError::LengthMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self.objective_unchecked(x))
    }

    pub(crate) fn objective_unchecked(&self, x: &[u8]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            if x[i] == 0 {
                continue;
            }
            let row = &self.entries[i * self.n..(i + 1) * self.n];
            for j in i..self.n {
                if x[j] != 0 {
                    total += row[j];
                }
            }
        }
        total
    }

    /// Objective of the basis state with index `idx`, where variable 0 is the
    /// most significant bit.
    pub fn objective_of_index(&self, idx: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            if !bit(idx, i, self.n) {
                continue;
            }
            let row = &self.entries[i * self.n..(i + 1) * self.n];
            for (j, &q) in row.iter().enumerate().skip(i) {
                if bit(idx, j, self.n) {
                    total += q;
                }
            }
        }
        total
    }

    /// Mean and standard deviation of the objective over uniformly random
    /// bitstrings, from the Walsh expansion in `s_i = 2 x_i - 1`.
    pub fn uniform_moments(&self) -> (f64, f64) {
        let n = self.n;
        let mut mean = 0.0;
        let mut linear = vec![0.0; n];
        let mut var = 0.0;
        for (i, j, v) in self.upper_entries() {
            if i == j {
                mean += v / 2.0;
                linear[i] += v / 2.0;
            } else {
                mean += v / 4.0;
                linear[i] += v / 4.0;
                linear[j] += v / 4.0;
                var += (v / 4.0) * (v / 4.0);
            }
        }
        var += linear.iter().map(|h| h * h).sum::<f64>();
        (mean, var.sqrt())
    }

    /// Objective values of all `2^n` bitstrings, indexed by binary value.
    pub fn objective_table(&self) -> Vec<f64> {
        (0..1usize << self.n)
            .map(|idx| self.objective_of_index(idx))
            .collect()
    }
}

#[inline]
fn bit(idx: usize, var: usize, n: usize) -> bool {
    (idx >> (n - 1 - var)) & 1 == 1
}

/// Bitstring of basis index `idx`, variable 0 first.
pub fn index_to_bits(idx: usize, n: usize) -> Vec<u8> {
    (0..n).map(|v| bit(idx, v, n) as u8).collect()
}

pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b as usize & 1))
}

pub fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
}

pub fn parse_bitstring(s: &str) -> Option<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        })
        .collect()
}

/// `sum_{i<=j} x_i Q_ij x_j`.
pub fn qubo_objective(q: &QuboMatrix, x: &[u8]) -> Result<f64, ProblemError> {
    q.objective(x)
}

/// Exhaustive minimum with ties broken by lowest binary value.
pub fn brute_force_optimum(q: &QuboMatrix) -> Result<(Vec<u8>, f64), ProblemError> {
    brute_force_optimum_capped(q, BRUTE_FORCE_CAP)
}

pub fn brute_force_optimum_capped(
    q: &QuboMatrix,
    cap: usize,
) -> Result<(Vec<u8>, f64), ProblemError> {
    let n = q.n();
    if n > cap {
        return Err(ProblemError::TooLarge { n, cap });
    }
    // Gray-code walk: each step flips one variable and updates the objective
    // by that variable's marginal contribution.
    let mut x = vec![0u8; n];
    let mut value = 0.0;
    let mut best_idx = 0usize;
    let mut best = 0.0;
    for step in 1..(1usize << n) {
        let flip_bit = step.trailing_zeros() as usize;
        let var = n - 1 - flip_bit;
        let mut delta = q.get(var, var);
        for (j, &xj) in x.iter().enumerate() {
            if j != var && xj != 0 {
                delta += q.get(var, j) + q.get(j, var);
            }
        }
        if x[var] == 0 {
            x[var] = 1;
            value += delta;
        } else {
            x[var] = 0;
            value -= delta;
        }
        let idx = bits_to_index(&x);
        if value < best || (value == best && idx < best_idx) {
            best = value;
            best_idx = idx;
        }
    }
    // Re-evaluate the winner directly so the reported value carries no
    // accumulated rounding from the incremental walk.
    let bits = index_to_bits(best_idx, n);
    let exact = q.objective_unchecked(&bits);
    Ok((bits, exact))
}

/// Seeded random QUBO with a prescribed fraction of nonzero upper-triangular slots.
pub fn random_qubo(n: usize, density: f64, seed: u64) -> Result<QuboMatrix, ProblemError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(ProblemError::InvalidDensity(density));
    }
    let mut q = QuboMatrix::zeros(n)?;
    let slots: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let count = ((density * slots.len() as f64).round() as usize).clamp(1, slots.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();
    for k in chosen {
        let (i, j) = slots[k];
        let mut v = 0.0;
        while v == 0.0 {
            v = rng.random_range(-1.0..=1.0);
        }
        q.add(i, j, v);
    }
    Ok(q)
}

impl Serialize for QuboMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for QuboMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        QuboMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_objective() {
        let q = QuboMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(q.objective(&[1, 1]).unwrap(), 2.0);
        assert_eq!(q.objective(&[0, 0]).unwrap(), 0.0);
        assert!(matches!(
            q.objective(&[1]),
            Err(ProblemError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn lower_triangle_is_folded() {
        let q = QuboMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(q.get(0, 1), 3.0);
        assert_eq!(q.get(1, 0), 0.0);
    }

    #[test]
    fn rejects_ragged_and_nonfinite() {
        assert!(matches!(
            QuboMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0]]),
            Err(ProblemError::NotSquare { .. })
        ));
        assert!(matches!(
            QuboMatrix::from_rows(&[vec![f64::NAN]]),
            Err(ProblemError::NonFinite { .. })
        ));
        assert!(matches!(
            QuboMatrix::from_rows(&[]),
            Err(ProblemError::EmptyMatrix)
        ));
    }

    #[test]
    fn brute_force_small_cases() {
        let q = QuboMatrix::from_rows(&[vec![-1.0]]).unwrap();
        assert_eq!(brute_force_optimum(&q).unwrap(), (vec![1], -1.0));
        let q = QuboMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(brute_force_optimum(&q).unwrap(), (vec![0, 0], 0.0));
    }

    #[test]
    fn brute_force_tie_prefers_lowest_value() {
        // x=(0,1) and x=(1,0) both reach -1.
        let q = QuboMatrix::from_rows(&[vec![-1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(brute_force_optimum(&q).unwrap(), (vec![0, 1], -1.0));
    }

    #[test]
    fn brute_force_respects_cap() {
        let q = QuboMatrix::zeros(5).unwrap();
        assert!(matches!(
            brute_force_optimum_capped(&q, 4),
            Err(ProblemError::TooLarge { n: 5, cap: 4 })
        ));
    }

    #[test]
    fn random_qubo_density_counts() {
        let full = random_qubo(4, 1.0, 3).unwrap();
        assert_eq!(full.nonzero_slots(), 10);
        let sparse = random_qubo(4, 0.1, 3).unwrap();
        assert_eq!(sparse.nonzero_slots(), 1);
        assert_eq!(random_qubo(4, 0.5, 9).unwrap(), random_qubo(4, 0.5, 9).unwrap());
        assert!(matches!(
            random_qubo(4, 0.0, 1),
            Err(ProblemError::InvalidDensity(_))
        ));
        assert!(matches!(
            random_qubo(4, 1.5, 1),
            Err(ProblemError::InvalidDensity(_))
        ));
        for (_, _, v) in full.upper_entries() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn uniform_moments_match_enumeration() {
        let q = QuboMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (mean, std) = q.uniform_moments();
        assert!((mean - 1.0).abs() < 1e-15);
        assert!((std - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        for seed in 0..5 {
            let q = random_qubo(6, 0.6, seed).unwrap();
            let table = q.objective_table();
            let m = table.iter().sum::<f64>() / 64.0;
            let v = table.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / 64.0;
            let (mean, std) = q.uniform_moments();
            assert!((mean - m).abs() < 1e-12);
            assert!((std - v.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn index_bit_order_is_big_endian() {
        assert_eq!(index_to_bits(0b100, 3), vec![1, 0, 0]);
        assert_eq!(bits_to_index(&[0, 1, 1]), 3);
        let q = random_qubo(5, 0.7, 11).unwrap();
        for idx in 0..32 {
            let bits = index_to_bits(idx, 5);
            assert!((q.objective_of_index(idx) - q.objective(&bits).unwrap()).abs() < 1e-12);
        }
    }
}
