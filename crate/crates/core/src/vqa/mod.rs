//! Variational algorithm execution: ansatz circuits, the optimize-measure
//! loop and loss-call accounting.

mod ansatz;
mod optimizers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ansatz::{
    build_hea_circuit, build_qaoa_circuit, ising_form, is_rzz, lr_qaoa_schedule, AnsatzSpec,
    Binding, IsingForm, ParametricCircuit,
};
pub use optimizers::{Nft, Objective, Optimizer, ParamShiftGd, Spsa};

use crate::backend::{
    estimate_expectation, expectation_from_state, probabilities, sample_probabilities,
    BackendError, QuantumBackend,
};
use crate::problem::{bits_to_string, parse_bitstring, QuboMatrix};

/// Readout shots used to extract the solution bitstring at the best parameters.
pub const READOUT_SHOTS: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqaError {
    #[error("schedule must have at least one layer")]
    EmptySchedule,
    #[error("linear-ramp width must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("expected {expected} parameters, got {got}")]
    ParamCountMismatch { expected: usize, got: usize },
    #[error("ansatz `{0}` has no circuit construction")]
    UnsupportedAnsatz(&'static str),
    #[error("noise level must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("call budget must be at least 1")]
    ZeroBudget,
    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// How each loss call is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LossMode {
    /// Noise-free expectation value.
    Exact,
    /// Mean over `shots` sampled bitstrings.
    Shots { shots: u64 },
    /// Exact value plus Gaussian noise of standard deviation `epsilon * σ_U`.
    Noisy { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaConfig {
    pub ansatz: AnsatzSpec,
    pub loss: LossMode,
    /// Maximum number of loss calls.
    pub budget: usize,
    pub seed: u64,
    #[serde(default = "default_readout")]
    pub readout_shots: u64,
}

fn default_readout() -> u64 {
    READOUT_SHOTS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Evaluation,
    /// Shifted-gate circuit executed for a gradient component.
    Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub params: Vec<f64>,
    pub loss: f64,
    pub kind: CallKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    BudgetExhausted,
}

/// Record of one variational run. `history` holds every circuit execution
/// (so `n_calls == history.len()`); `best_loss` is the minimum over
/// evaluation entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaTrace {
    pub vqa: String,
    pub optimizer: String,
    pub n_calls: usize,
    pub best_params: Vec<f64>,
    pub best_loss: f64,
    /// Noise-free loss at `best_params`.
    pub best_exact_loss: f64,
    pub best_bitstring: Vec<u8>,
    pub history: Vec<TracePoint>,
    /// `None` when losses were not shot-based.
    pub shots_per_call: Option<u64>,
    pub status: TraceStatus,
}

impl VqaTrace {
    /// 1-based index of the call that produced `best_loss`.
    pub fn calls_to_best(&self) -> usize {
        self.history
            .iter()
            .position(|p| p.kind == CallKind::Evaluation && p.loss == self.best_loss)
            .map_or(self.n_calls, |i| i + 1)
    }
}

/// Additive Gaussian loss noise with standard deviation `epsilon * σ_U`,
/// where σ_U is the loss spread over uniformly random bitstrings.
pub struct NoisyLoss<F> {
    exact: F,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl<F: FnMut(&[f64]) -> f64> NoisyLoss<F> {
    pub fn eval(&mut self, params: &[f64]) -> f64 {
        let v = (self.exact)(params);
        match &mut self.noise {
            Some((dist, rng)) => v + dist.sample(rng),
            None => v,
        }
    }

    pub fn std(&self) -> f64 {
        self.noise.as_ref().map_or(0.0, |(d, _)| d.std_dev())
    }
}

/// Wraps an exact loss with normalized Gaussian noise. `epsilon = 0` returns
/// the exact loss unchanged.
pub fn inject_noise_loss<F: FnMut(&[f64]) -> f64>(
    q: &QuboMatrix,
    exact: F,
    epsilon: f64,
    seed: u64,
) -> Result<NoisyLoss<F>, VqaError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(VqaError::NegativeEpsilon(epsilon));
    }
    let sigma = epsilon * q.uniform_moments().1;
    let noise = if sigma > 0.0 {
        Some((
            Normal::new(0.0, sigma).expect("finite positive sigma"),
            ChaCha8Rng::seed_from_u64(seed),
        ))
    } else {
        None
    };
    Ok(NoisyLoss { exact, noise })
}

/// Parameter-shift gradient of the exact loss. Each bound gate has the form
/// `exp(-i θ P / 2)` with `P^2 = I`, so its shift rule is exact and the
/// gradient is the coefficient-weighted sum over gates sharing a parameter.
pub fn parameter_shift_gradient(
    circuit: &ParametricCircuit,
    q: &QuboMatrix,
    params: &[f64],
    backend: &dyn QuantumBackend,
) -> Result<Vec<f64>, VqaError> {
    let diag = q.objective_table();
    let base = circuit.bind(params)?;
    let mut grad = vec![0.0; circuit.n_params];
    for b in &circuit.bindings {
        let mut terms = [0.0; 2];
        for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut c = base.clone();
            c.gates[b.gate] = c.gates[b.gate].shifted(sign * std::f64::consts::FRAC_PI_2);
            terms[slot] = expectation_from_state(&backend.statevector(&c)?, &diag);
        }
        grad[b.param] += b.coef * (terms[0] - terms[1]) / 2.0;
    }
    Ok(grad)
}

struct VqaObjective<'a> {
    circuit: ParametricCircuit,
    q: &'a QuboMatrix,
    diag: Vec<f64>,
    backend: &'a dyn QuantumBackend,
    loss: LossMode,
    noise: Option<Normal<f64>>,
    noise_rng: ChaCha8Rng,
    shot_rng: ChaCha8Rng,
    budget: usize,
    history: Vec<TracePoint>,
    best: Option<(f64, Vec<f64>)>,
    error: Option<VqaError>,
}

impl VqaObjective<'_> {
    fn measure(&mut self, circuit: &crate::backend::Circuit) -> Result<f64, VqaError> {
        match self.loss {
            LossMode::Exact => Ok(expectation_from_state(
                &self.backend.statevector(circuit)?,
                &self.diag,
            )),
            LossMode::Noisy { .. } => {
                let exact = expectation_from_state(&self.backend.statevector(circuit)?, &self.diag);
                Ok(match &self.noise {
                    Some(d) => exact + d.sample(&mut self.noise_rng),
                    None => exact,
                })
            }
            LossMode::Shots { shots } => {
                let seed = self.shot_rng.random();
                let r = self.backend.sample(circuit, shots, seed)?;
                Ok(estimate_expectation(&r, self.q)?)
            }
        }
    }

    fn call(&mut self, params: &[f64], circuit: crate::backend::Circuit, kind: CallKind) -> Option<f64> {
        if self.error.is_some() || self.history.len() >= self.budget {
            return None;
        }
        match self.measure(&circuit) {
            Ok(loss) => {
                self.history.push(TracePoint {
                    params: params.to_vec(),
                    loss,
                    kind,
                });
                if kind == CallKind::Evaluation
                    && self.best.as_ref().is_none_or(|(b, _)| loss < *b)
                {
                    self.best = Some((loss, params.to_vec()));
                }
                Some(loss)
            }
            Err(e) => {
                self.error = Some(e);
                None
            }
        }
    }
}

impl Objective for VqaObjective<'_> {
    fn dim(&self) -> usize {
        self.circuit.n_params
    }

    fn eval(&mut self, params: &[f64]) -> Option<f64> {
        match self.circuit.bind(params) {
            Ok(c) => self.call(params, c, CallKind::Evaluation),
            Err(e) => {
                self.error = Some(e);
                None
            }
        }
    }

    fn gradient(&mut self, params: &[f64]) -> Option<Vec<f64>> {
        let base = match self.circuit.bind(params) {
            Ok(c) => c,
            Err(e) => {
                self.error = Some(e);
                return None;
            }
        };
        let bindings = self.circuit.bindings.clone();
        let mut grad = vec![0.0; self.circuit.n_params];
        for b in bindings {
            let mut plus = base.clone();
            plus.gates[b.gate] = plus.gates[b.gate].shifted(std::f64::consts::FRAC_PI_2);
            let mut minus = base.clone();
            minus.gates[b.gate] = minus.gates[b.gate].shifted(-std::f64::consts::FRAC_PI_2);
            let fp = self.call(params, plus, CallKind::Shift)?;
            let fm = self.call(params, minus, CallKind::Shift)?;
            grad[b.param] += b.coef * (fp - fm) / 2.0;
        }
        Some(grad)
    }
}

/// Initial parameters: small angles for QAOA-type schedules, full-range
/// rotations for hardware-efficient layers.
fn initial_params(ansatz: &AnsatzSpec, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match ansatz {
        AnsatzSpec::HardwareEfficient { .. } => (0..dim)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect(),
        _ => (0..dim).map(|_| rng.random_range(0.0..0.5)).collect(),
    }
}

/// Runs the optimize-measure loop of one variational algorithm.
pub fn run_vqa(
    config: &VqaConfig,
    optimizer: &mut dyn Optimizer,
    backend: &dyn QuantumBackend,
    q: &QuboMatrix,
) -> Result<VqaTrace, VqaError> {
    if config.budget == 0 {
        return Err(VqaError::ZeroBudget);
    }
    let circuit = config.ansatz.parametric(q)?;
    let noise = match config.loss {
        LossMode::Noisy { epsilon } => {
            if epsilon.is_nan() || epsilon < 0.0 {
                return Err(VqaError::NegativeEpsilon(epsilon));
            }
            let sigma = epsilon * q.uniform_moments().1;
            (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
        }
        _ => None,
    };
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let x0 = initial_params(&config.ansatz, circuit.n_params, &mut master);
    let mut objective = VqaObjective {
        diag: q.objective_table(),
        circuit,
        q,
        backend,
        loss: config.loss,
        noise,
        noise_rng: ChaCha8Rng::seed_from_u64(master.random()),
        shot_rng: ChaCha8Rng::seed_from_u64(master.random()),
        budget: config.budget,
        history: Vec::new(),
        best: None,
        error: None,
    };
    let readout_seed: u64 = master.random();
    let mut opt_rng = ChaCha8Rng::seed_from_u64(master.random());

    objective.eval(&x0);
    if objective.circuit.n_params > 0 {
        optimizer.minimize(&mut objective, x0, &mut opt_rng)?;
    }
    if let Some(e) = objective.error.take() {
        return Err(e);
    }
    let (best_loss, best_params) = objective
        .best
        .clone()
        .ok_or_else(|| VqaError::OptimizerFailure("no loss evaluation completed".into()))?;

    let best_circuit = objective.circuit.bind(&best_params)?;
    let psi = backend.statevector(&best_circuit)?;
    let best_exact_loss = expectation_from_state(&psi, &objective.diag);
    let readout = sample_probabilities(&probabilities(&psi), q.n(), config.readout_shots.max(1), readout_seed)?;
    let best_bitstring = match config.loss {
        LossMode::Shots { .. } => readout
            .most_frequent()
            .and_then(parse_bitstring)
            .expect("readout has at least one shot"),
        _ => readout
            .counts
            .keys()
            .filter_map(|k| parse_bitstring(k))
            .min_by(|a, b| {
                let fa = q.objective_unchecked(a);
                let fb = q.objective_unchecked(b);
                fa.total_cmp(&fb).then_with(|| bits_to_string(a).cmp(&bits_to_string(b)))
            })
            .expect("readout has at least one shot"),
    };

    let n_calls = objective.history.len();
    let status = if n_calls >= config.budget && objective.circuit.n_params > 0 {
        TraceStatus::BudgetExhausted
    } else {
        TraceStatus::Completed
    };
    Ok(VqaTrace {
        vqa: config.ansatz.vqa_id().to_string(),
        optimizer: optimizer.id().to_string(),
        n_calls,
        best_params,
        best_loss,
        best_exact_loss,
        best_bitstring,
        history: objective.history,
        shots_per_call: match config.loss {
            LossMode::Shots { shots } => Some(shots),
            _ => None,
        },
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::LocalSimulator;
    use crate::problem::{brute_force_optimum, random_qubo};

    fn spsa() -> Spsa {
        Spsa {
            a: 0.2,
            c: 0.1,
            max_iters: 1000,
            stability: 10.0,
        }
    }

    #[test]
    fn lr_qaoa_uses_one_call() {
        let q = random_qubo(4, 0.8, 2).unwrap();
        let cfg = VqaConfig {
            ansatz: AnsatzSpec::LrQaoa { p: 3, delta: 0.7 },
            loss: LossMode::Shots { shots: 100 },
            budget: 50,
            seed: 1,
            readout_shots: READOUT_SHOTS,
        };
        let t = run_vqa(&cfg, &mut spsa(), &LocalSimulator::default(), &q).unwrap();
        assert_eq!(t.n_calls, 1);
        assert_eq!(t.history.len(), 1);
        assert_eq!(t.best_bitstring.len(), 4);
    }

    #[test]
    fn single_shot_trace_is_valid() {
        let q = random_qubo(3, 1.0, 4).unwrap();
        let cfg = VqaConfig {
            ansatz: AnsatzSpec::Qaoa { p: 1 },
            loss: LossMode::Shots { shots: 1 },
            budget: 40,
            seed: 3,
            readout_shots: READOUT_SHOTS,
        };
        let t = run_vqa(&cfg, &mut spsa(), &LocalSimulator::default(), &q).unwrap();
        assert!(t.n_calls <= 40);
        assert_eq!(t.n_calls, t.history.len());
        let min = t
            .history
            .iter()
            .filter(|p| p.kind == CallKind::Evaluation)
            .map(|p| p.loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(t.best_loss, min);
        assert_eq!(t.status, TraceStatus::BudgetExhausted);
        // Single-shot losses are objective values of individual bitstrings.
        let table = q.objective_table();
        for p in &t.history {
            assert!(table.iter().any(|v| (v - p.loss).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_budget_and_bad_epsilon() {
        let q = random_qubo(2, 1.0, 1).unwrap();
        let mut cfg = VqaConfig {
            ansatz: AnsatzSpec::Qaoa { p: 1 },
            loss: LossMode::Exact,
            budget: 0,
            seed: 0,
            readout_shots: 16,
        };
        let sim = LocalSimulator::default();
        assert_eq!(run_vqa(&cfg, &mut spsa(), &sim, &q), Err(VqaError::ZeroBudget));
        cfg.budget = 5;
        cfg.loss = LossMode::Noisy { epsilon: -1.0 };
        assert!(matches!(
            run_vqa(&cfg, &mut spsa(), &sim, &q),
            Err(VqaError::NegativeEpsilon(_))
        ));
        assert!(matches!(
            inject_noise_loss(&q, |_: &[f64]| 0.0, -0.5, 1),
            Err(VqaError::NegativeEpsilon(_))
        ));
    }

    #[test]
    fn noise_injection_statistics() {
        let q = QuboMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((q.uniform_moments().1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let mut clean = inject_noise_loss(&q, |p: &[f64]| p[0] * 3.0, 0.0, 5).unwrap();
        assert_eq!(clean.eval(&[0.25]), 0.75);

        let q = random_qubo(5, 0.8, 12).unwrap();
        let sigma_u = q.uniform_moments().1;
        let mut noisy = inject_noise_loss(&q, |_: &[f64]| 1.5, 0.1, 77).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| noisy.eval(&[])).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((std / (0.1 * sigma_u) - 1.0).abs() < 0.05, "{std} vs {}", 0.1 * sigma_u);
    }

    #[test]
    fn exact_hea_spsa_finds_small_optimum() {
        let q = random_qubo(3, 1.0, 21).unwrap();
        let (_, opt) = brute_force_optimum(&q).unwrap();
        let cfg = VqaConfig {
            ansatz: AnsatzSpec::HardwareEfficient { layers: 1 },
            loss: LossMode::Exact,
            budget: 400,
            seed: 8,
            readout_shots: READOUT_SHOTS,
        };
        let t = run_vqa(&cfg, &mut spsa(), &LocalSimulator::default(), &q).unwrap();
        assert_eq!(q.objective(&t.best_bitstring).unwrap(), opt);
    }
}
