//! Dense statevector simulation. Qubit 0 is the most significant bit of the
//! basis index, so basis index and bitstring read the same way.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{BackendError, Circuit, Gate};
use crate::problem::{bits_to_string, index_to_bits, parse_bitstring, QuboMatrix};

/// Above this many shots per basis state, counts are drawn as a multinomial.
const MULTINOMIAL_FACTOR: u64 = 64;

/// Default qubit cap of the statevector simulator.
pub const STATEVECTOR_CAP: usize = 20;

type Mat2 = [[Complex64; 2]; 2];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn single_qubit_matrix(g: &Gate) -> Option<(usize, Mat2)> {
    let (q, m) = match *g {
        Gate::H { q } => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (q, [[c(s, 0.0), c(s, 0.0)], [c(s, 0.0), c(-s, 0.0)]])
        }
        Gate::Rx { q, theta } => {
            let (s, co) = (theta / 2.0).sin_cos();
            (q, [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]])
        }
        Gate::Ry { q, theta } => {
            let (s, co) = (theta / 2.0).sin_cos();
            (q, [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]])
        }
        _ => return None,
    };
    Some((q, m))
}

/// Simulates `circuit` from |0...0> up to `cap` qubits.
pub fn simulate_statevector_capped(
    circuit: &Circuit,
    cap: usize,
) -> Result<Vec<Complex64>, BackendError> {
    if circuit.n_qubits > cap {
        return Err(BackendError::TooManyQubits {
            requested: circuit.n_qubits,
            cap,
        });
    }
    circuit.check()?;
    let n = circuit.n_qubits;
    let mut psi = vec![Complex64::new(0.0, 0.0); 1 << n];
    psi[0] = Complex64::new(1.0, 0.0);
    for g in &circuit.gates {
        apply_gate(&mut psi, n, g);
    }
    Ok(psi)
}

pub fn simulate_statevector(circuit: &Circuit) -> Result<Vec<Complex64>, BackendError> {
    simulate_statevector_capped(circuit, STATEVECTOR_CAP)
}

#[inline]
fn mask(n: usize, q: usize) -> usize {
    1 << (n - 1 - q)
}

pub(crate) fn apply_gate(psi: &mut [Complex64], n: usize, g: &Gate) {
    if let Some((q, m)) = single_qubit_matrix(g) {
        let stride = mask(n, q);
        for base in (0..psi.len()).step_by(stride << 1) {
            for i in base..base + stride {
                let a = psi[i];
                let b = psi[i + stride];
                psi[i] = m[0][0] * a + m[0][1] * b;
                psi[i + stride] = m[1][0] * a + m[1][1] * b;
            }
        }
        return;
    }
    match *g {
        Gate::Rz { q, theta } => {
            let m = mask(n, q);
            let (s, co) = (theta / 2.0).sin_cos();
            let p0 = c(co, -s);
            let p1 = c(co, s);
            for (i, amp) in psi.iter_mut().enumerate() {
                *amp *= if i & m == 0 { p0 } else { p1 };
            }
        }
        Gate::Rzz { q1, q2, theta } => {
            let (m1, m2) = (mask(n, q1), mask(n, q2));
            let (s, co) = (theta / 2.0).sin_cos();
            let even = c(co, -s);
            let odd = c(co, s);
            for (i, amp) in psi.iter_mut().enumerate() {
                let parity = ((i & m1 != 0) as u8) ^ ((i & m2 != 0) as u8);
                *amp *= if parity == 0 { even } else { odd };
            }
        }
        Gate::Cx { c: ctl, t } => {
            let (mc, mt) = (mask(n, ctl), mask(n, t));
            for i in 0..psi.len() {
                if i & mc != 0 && i & mt == 0 {
                    psi.swap(i, i | mt);
                }
            }
        }
        _ => unreachable!("single-qubit gates handled above"),
    }
}

pub fn probabilities(psi: &[Complex64]) -> Vec<f64> {
    psi.iter().map(|a| a.norm_sqr()).collect()
}

/// Measurement counts keyed by bitstring (qubit 0 first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotResult {
    pub counts: BTreeMap<String, u64>,
    pub n_shots: u64,
}

impl ShotResult {
    pub fn most_frequent(&self) -> Option<&str> {
        // Ties resolve to the lexicographically smallest string.
        self.counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(k, _)| k.as_str())
    }
}

/// Draws `n_shots` basis states from `|psi|^2`.
pub fn sample_probabilities(
    probs: &[f64],
    n_qubits: usize,
    n_shots: u64,
    seed: u64,
) -> Result<ShotResult, BackendError> {
    if n_shots == 0 {
        return Err(BackendError::NoShots);
    }
    let total: f64 = probs.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_index: BTreeMap<usize, u64> = BTreeMap::new();
    if n_shots > MULTINOMIAL_FACTOR * probs.len() as u64 {
        // sequential conditional binomials draw the whole multinomial at once
        let (mut left, mut mass) = (n_shots, total);
        for (idx, &p) in probs.iter().enumerate() {
            if left == 0 {
                break;
            }
            let k = if idx + 1 == probs.len() || p >= mass {
                left
            } else if p <= 0.0 {
                0
            } else {
                Binomial::new(left, (p / mass).min(1.0)).map_or(0, |b| b.sample(&mut rng))
            };
            if k > 0 {
                by_index.insert(idx, k);
            }
            left -= k;
            mass -= p;
        }
    } else {
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in probs {
            acc += p;
            cumulative.push(acc);
        }
        for _ in 0..n_shots {
            let u: f64 = rng.random::<f64>() * total;
            let idx = cumulative
                .partition_point(|&c| c <= u)
                .min(probs.len() - 1);
            *by_index.entry(idx).or_insert(0) += 1;
        }
    }
    let counts = by_index
        .into_iter()
        .map(|(idx, k)| (bits_to_string(&index_to_bits(idx, n_qubits)), k))
        .collect();
    Ok(ShotResult { counts, n_shots })
}

pub fn sample(circuit: &Circuit, n_shots: u64, seed: u64) -> Result<ShotResult, BackendError> {
    let psi = simulate_statevector(circuit)?;
    sample_probabilities(&probabilities(&psi), circuit.n_qubits, n_shots, seed)
}

/// `sum_x |psi_x|^2 * qubo(x)`.
pub fn exact_expectation(circuit: &Circuit, q: &QuboMatrix) -> Result<f64, BackendError> {
    if circuit.n_qubits != q.n() {
        return Err(BackendError::SizeMismatch {
            circuit: circuit.n_qubits,
            qubo: q.n(),
        });
    }
    let psi = simulate_statevector(circuit)?;
    Ok(expectation_from_state(&psi, &q.objective_table()))
}

pub fn expectation_from_state(psi: &[Complex64], diag: &[f64]) -> f64 {
    psi.iter().zip(diag).map(|(a, d)| a.norm_sqr() * d).sum()
}

/// Counts-weighted mean of the QUBO objective.
pub fn estimate_expectation(shots: &ShotResult, q: &QuboMatrix) -> Result<f64, BackendError> {
    let mut total = 0.0;
    for (bits, &k) in &shots.counts {
        let x = parse_bitstring(bits).ok_or_else(|| BackendError::MalformedBitstring(bits.clone()))?;
        if x.len() != q.n() {
            return Err(BackendError::SizeMismatch {
                circuit: x.len(),
                qubo: q.n(),
            });
        }
        total += k as f64 * q.objective_unchecked(&x);
    }
    Ok(total / shots.n_shots as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn hadamard_on_zero() {
        let mut circ = Circuit::new(1);
        circ.h(0);
        let psi = simulate_statevector(&circ).unwrap();
        assert!(close(psi[0], c(FRAC_1_SQRT_2, 0.0)));
        assert!(close(psi[1], c(FRAC_1_SQRT_2, 0.0)));
    }

    #[test]
    fn empty_circuit_is_ground_state() {
        let psi = simulate_statevector(&Circuit::new(2)).unwrap();
        assert_eq!(psi, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn cx_flips_target_when_control_set() {
        let mut circ = Circuit::new(2);
        circ.rx(0, PI).cx(0, 1);
        let probs = probabilities(&simulate_statevector(&circ).unwrap());
        assert!((probs[0b11] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qubit_cap() {
        let circ = Circuit::new(3);
        assert!(matches!(
            simulate_statevector_capped(&circ, 2),
            Err(BackendError::TooManyQubits { requested: 3, cap: 2 })
        ));
    }

    #[test]
    fn sampling_edge_cases() {
        let circ = Circuit::new(3);
        let r = sample(&circ, 50, 1).unwrap();
        assert_eq!(r.counts.len(), 1);
        assert_eq!(r.counts["000"], 50);
        assert!(matches!(sample(&circ, 0, 1), Err(BackendError::NoShots)));

        let mut h = Circuit::new(2);
        h.h(0).h(1);
        assert_eq!(sample(&h, 1000, 9).unwrap(), sample(&h, 1000, 9).unwrap());
    }

    #[test]
    fn hadamard_sampling_frequency() {
        let mut h = Circuit::new(1);
        h.h(0);
        let r = sample(&h, 100_000, 2024).unwrap();
        let freq = r.counts["1"] as f64 / 1e5;
        assert!((freq - 0.5).abs() < 0.0047, "freq {freq}");
    }

    #[test]
    fn large_shot_counts_follow_probabilities() {
        let probs = [0.5, 0.25, 0.125, 0.0, 0.0625, 0.0625, 0.0, 0.0];
        let n = 10_000_000u64;
        let r = sample_probabilities(&probs, 3, n, 5).unwrap();
        assert_eq!(r.counts.values().sum::<u64>(), n);
        assert!(!r.counts.contains_key("011") && !r.counts.contains_key("111"));
        for (i, p) in probs.iter().enumerate().filter(|(_, p)| **p > 0.0) {
            let k = r.counts[&bits_to_string(&index_to_bits(i, 3))] as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((k - n as f64 * p).abs() < 5.0 * sd, "{i}: {k}");
        }
    }

    #[test]
    fn expectations() {
        let q = QuboMatrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0], vec![0.0, 0.0, -1.5]])
            .unwrap();
        let mut uniform = Circuit::new(3);
        uniform.h(0).h(1).h(2);
        let mean: f64 = q.objective_table().iter().sum::<f64>() / 8.0;
        assert!((exact_expectation(&uniform, &q).unwrap() - mean).abs() < 1e-12);
        assert_eq!(exact_expectation(&Circuit::new(3), &q).unwrap(), 0.0);

        let mut basis = Circuit::new(3);
        basis.rx(0, PI).rx(2, PI);
        let want = q.objective(&[1, 0, 1]).unwrap();
        assert!((exact_expectation(&basis, &q).unwrap() - want).abs() < 1e-12);

        let shots = sample(&basis, 100, 3).unwrap();
        assert!((estimate_expectation(&shots, &q).unwrap() - want).abs() < 1e-12);
        assert!(matches!(
            exact_expectation(&Circuit::new(2), &q),
            Err(BackendError::SizeMismatch { .. })
        ));
    }
}
