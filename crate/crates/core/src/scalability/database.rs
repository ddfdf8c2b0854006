//! The scaling database and the benchmark sweep that fills it.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fit::{fit_calls, fit_kappa, fit_scaling, fit_threshold, CallsFit, FitError, Hypothesis, KappaFit, ScalingFit, ThresholdPoint};
use super::{DatabaseSummary, ScalabilityError, SUCCESS_GAP};
use crate::backend::{estimate_expectation, probabilities, sample_probabilities, LocalSimulator, QuantumBackend};
use crate::builders::{BuilderRegistry, HyperValues};
use crate::problem::{brute_force_optimum, formulate_problem, random_qubo, Knapsack, MaxCut, ProblemInstance, QuboMatrix};
use crate::vqa::{run_vqa, AnsatzSpec, CallKind, LossMode, VqaConfig, VqaError};

pub const DB_SCHEMA: &str = "decitree.scaling-db/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub plan_hash: String,
    pub seed: u64,
    pub cell_index: usize,
    pub date: String,
}

/// Fitted scaling behaviour of one (problem type, density, VQA, optimizer)
/// cell under one hypothesis. Threshold, sampling and call data are shared
/// by the three records of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub problem_type: String,
    /// Graph or QUBO density; capacity ratio for knapsack.
    pub density: f64,
    pub vqa: String,
    pub optimizer: String,
    pub ansatz: AnsatzSpec,
    pub optimizer_hyperparams: HyperValues,
    pub budget: usize,
    pub hypothesis: Hypothesis,
    pub fit: Option<ScalingFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    pub thresholds: Vec<ThresholdPoint>,
    /// Sizes whose success rate never reached 0.5.
    pub never_succeeds: Vec<usize>,
    /// Sizes whose success rate stayed above 0.5 over the whole grid.
    pub no_crossing: Vec<usize>,
    pub kappa: KappaFit,
    pub calls: Option<CallsFit>,
    pub fitted_n_range: (usize, usize),
    pub provenance: RecordProvenance,
}

impl ScalingRecord {
    pub fn valid(&self) -> bool {
        self.fit.as_ref().is_some_and(|f| f.valid)
    }

    fn key(&self) -> (String, u64, String, String, Hypothesis) {
        (
            self.problem_type.clone(),
            self.density.to_bits(),
            self.vqa.clone(),
            self.optimizer.clone(),
            self.hypothesis,
        )
    }
}

/// Versioned collection of scaling records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDatabase {
    pub schema: String,
    pub records: Vec<ScalingRecord>,
}

impl Default for ScalingDatabase {
    fn default() -> Self {
        ScalingDatabase {
            schema: DB_SCHEMA.into(),
            records: Vec::new(),
        }
    }
}

impl ScalingDatabase {
    pub fn from_json(text: &str) -> Result<Self, ScalabilityError> {
        let db: ScalingDatabase = serde_json::from_str(text).map_err(|e| ScalabilityError::Database(e.to_string()))?;
        if db.schema != DB_SCHEMA {
            return Err(ScalabilityError::Database(format!("unsupported schema `{}`", db.schema)));
        }
        Ok(db)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, ScalabilityError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScalabilityError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScalabilityError> {
        std::fs::write(path, self.to_json()).map_err(|e| ScalabilityError::Io(format!("{}: {e}", path.display())))
    }

    /// Appends records whose key is not yet present; existing records are
    /// left untouched. Returns the number added.
    pub fn merge(&mut self, other: ScalingDatabase) -> usize {
        let mut keys: std::collections::BTreeSet<_> = self.records.iter().map(ScalingRecord::key).collect();
        let before = self.records.len();
        for r in other.records {
            if keys.insert(r.key()) {
                self.records.push(r);
            }
        }
        self.records.len() - before
    }

    pub fn problem_types(&self) -> Vec<String> {
        let mut v: Vec<String> = self.records.iter().map(|r| r.problem_type.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Distinct grid densities of a problem type, ascending.
    pub fn densities(&self, problem_type: &str) -> Vec<f64> {
        let mut v: Vec<f64> = self.records.iter().filter(|r| r.problem_type == problem_type).map(|r| r.density).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn slice(&self, problem_type: &str, density: f64) -> impl Iterator<Item = &ScalingRecord> {
        let pt = problem_type.to_string();
        self.records.iter().filter(move |r| r.problem_type == pt && r.density == density)
    }

    pub fn summary(&self) -> DatabaseSummary {
        let mut hashes: Vec<String> = self.records.iter().map(|r| r.provenance.plan_hash.clone()).collect();
        hashes.sort();
        hashes.dedup();
        DatabaseSummary {
            schema: self.schema.clone(),
            records: self.records.len(),
            plan_hashes: hashes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerPlan {
    pub id: String,
    #[serde(default)]
    pub hyperparams: HyperValues,
}

/// Log-spaced noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl EpsilonGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let (a, b) = (self.min.ln(), self.max.ln());
        (0..self.count)
            .map(|i| (a + (b - a) * i as f64 / (self.count - 1) as f64).exp())
            .collect()
    }
}

fn default_budget() -> usize {
    300
}
fn default_kappa_shots() -> u64 {
    64
}
fn default_kappa_reps() -> usize {
    32
}
fn default_gap() -> f64 {
    SUCCESS_GAP
}

/// Benchmark sweep definition, read from YAML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub problem_types: Vec<String>,
    pub densities: Vec<f64>,
    pub vqas: Vec<AnsatzSpec>,
    pub optimizers: Vec<OptimizerPlan>,
    pub n_min: usize,
    pub n_max: usize,
    pub epsilons: EpsilonGrid,
    pub trials: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_kappa_shots")]
    pub kappa_shots: u64,
    #[serde(default = "default_kappa_reps")]
    pub kappa_reps: usize,
    #[serde(default = "default_gap")]
    pub success_gap: f64,
    pub seed: u64,
}

impl SweepPlan {
    pub fn from_yaml(text: &str) -> Result<Self, ScalabilityError> {
        let plan: SweepPlan = serde_yaml::from_str(text).map_err(|e| ScalabilityError::Plan(e.to_string()))?;
        plan.check()?;
        Ok(plan)
    }

    pub fn check(&self) -> Result<(), ScalabilityError> {
        let bad = |m: &str| Err(ScalabilityError::Plan(m.into()));
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("need 1 <= n_min <= n_max");
        }
        if self.n_max > crate::problem::BRUTE_FORCE_CAP {
            return bad("n_max exceeds the brute-force cap");
        }
        if self.trials == 0 || self.budget == 0 || self.kappa_shots == 0 || self.kappa_reps < 2 {
            return bad("trials, budget and kappa_shots must be positive and kappa_reps at least 2");
        }
        if !(self.epsilons.min > 0.0 && self.epsilons.max >= self.epsilons.min && self.epsilons.count >= 1) {
            return bad("epsilon grid must be positive and ascending");
        }
        if self.densities.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return bad("densities must lie in (0, 1]");
        }
        for v in &self.vqas {
            v.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the plan's JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("plan serializes")))
    }
}

/// Seed derived from a tag and integer parts.
pub fn derive_seed(tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seeded benchmark instance with `n` QUBO variables.
pub fn generate_instance(problem_type: &str, density: f64, n: usize, seed: u64) -> Result<QuboMatrix, ScalabilityError> {
    match problem_type {
        "maxcut" => {
            let g = MaxCut::random(n, density, true, seed)?;
            let inst = ProblemInstance::new(Arc::new(g), None)?;
            Ok(formulate_problem(&inst, "standard")?.qubo)
        }
        "random_qubo" => Ok(random_qubo(n, density, seed)?),
        "knapsack" => {
            // items + binary slack bits = n; the largest item count that fits is used
            use rand::{Rng, SeedableRng};
            let mut best = None;
            for items in (1..=n).rev() {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed("knapsack", &[seed, items as u64]));
                let weights: Vec<u64> = (0..items).map(|_| rng.random_range(1..=7)).collect();
                let values: Vec<f64> = (0..items).map(|_| f64::from(rng.random_range(1u32..=9))).collect();
                let total: u64 = weights.iter().sum();
                let capacity = ((density * total as f64).floor() as u64).max(1);
                let k = Knapsack::new(values, weights, capacity, None)?;
                let inst = ProblemInstance::new(Arc::new(k), Some("binary_slack"))?;
                let q = formulate_problem(&inst, "binary_slack")?.qubo;
                if q.n() == n {
                    return Ok(q);
                }
                if q.n() < n && best.is_none() {
                    best = Some(q);
                }
            }
            best.ok_or_else(|| ScalabilityError::Plan(format!("no knapsack instance with {n} variables")))
        }
        other => Err(ScalabilityError::Plan(format!("unknown problem type `{other}`"))),
    }
}

/// `(f - opt) / |opt|`, or relative to σ_U when the optimum is zero.
pub fn relative_gap(value: f64, optimum: f64, sigma_u: f64) -> f64 {
    let scale = if optimum.abs() > 1e-12 {
        optimum.abs()
    } else if sigma_u > 0.0 {
        sigma_u
    } else {
        1.0
    };
    (value - optimum) / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    pub gap: f64,
    pub calls_to_best: usize,
    pub n_calls: usize,
    /// Evaluated parameter points, in call order.
    pub visited: Vec<Vec<f64>>,
    pub best_params: Vec<f64>,
}

/// One noisy-loss optimization. Success means the most probable basis
/// state of the final circuit is within `gap` of the optimum.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    q: &QuboMatrix,
    optimum: f64,
    ansatz: &AnsatzSpec,
    optimizer: &OptimizerPlan,
    builders: &BuilderRegistry,
    epsilon: f64,
    budget: usize,
    gap: f64,
    seed: u64,
) -> Result<TrialOutcome, ScalabilityError> {
    let mut opt = builders
        .build(&optimizer.id, &optimizer.hyperparams)?
        .into_optimizer()
        .ok_or_else(|| ScalabilityError::Plan(format!("`{}` is not an optimizer", optimizer.id)))?;
    let backend = LocalSimulator::default();
    let cfg = VqaConfig {
        ansatz: ansatz.clone(),
        loss: LossMode::Noisy { epsilon },
        budget,
        seed,
        readout_shots: 1,
    };
    let trace = run_vqa(&cfg, opt.as_mut(), &backend, q)?;
    let circuit = ansatz.parametric(q)?.bind(&trace.best_params)?;
    let probs = probabilities(&backend.statevector(&circuit).map_err(VqaError::from)?);
    let top = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let g = relative_gap(q.objective_of_index(top), optimum, q.uniform_moments().1);
    Ok(TrialOutcome {
        success: g <= gap + 1e-12,
        gap: g,
        calls_to_best: trace.calls_to_best(),
        n_calls: trace.n_calls,
        visited: trace
            .history
            .iter()
            .filter(|p| p.kind == CallKind::Evaluation)
            .map(|p| p.params.clone())
            .collect(),
        best_params: trace.best_params,
    })
}

/// Benchmark instance with its brute-force optimum.
struct Bench {
    q: QuboMatrix,
    optimum: f64,
}

fn bench_instances(problem_type: &str, density: f64, n: usize, trials: usize, seed: u64) -> Result<Vec<Bench>, ScalabilityError> {
    (0..trials)
        .map(|t| {
            let s = derive_seed(&format!("instance/{problem_type}/{}", density.to_bits()), &[seed, n as u64, t as u64]);
            let q = generate_instance(problem_type, density, n, s)?;
            let (_, optimum) = brute_force_optimum(&q)?;
            Ok(Bench { q, optimum })
        })
        .collect()
}

/// Fraction of `trials` fresh seeded instances solved at noise `epsilon`.
#[allow(clippy::too_many_arguments)]
pub fn measure_success_rate(
    problem_type: &str,
    density: f64,
    ansatz: &AnsatzSpec,
    optimizer: &OptimizerPlan,
    builders: &BuilderRegistry,
    n: usize,
    epsilon: f64,
    trials: usize,
    budget: usize,
    seed: u64,
) -> Result<f64, ScalabilityError> {
    let benches = bench_instances(problem_type, density, n, trials, seed)?;
    let outcomes = benches
        .par_iter()
        .enumerate()
        .map(|(t, b)| run_trial(&b.q, b.optimum, ansatz, optimizer, builders, epsilon, budget, SUCCESS_GAP, derive_seed("trial", &[seed, t as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(outcomes.iter().filter(|o| o.success).count() as f64 / trials as f64)
}

/// Normalized one-shot sampling error of a state: the empirical standard
/// deviation of `reps` shot estimates, times `√shots / σ_U`.
pub fn measure_kappa(q: &QuboMatrix, probs: &[f64], shots: u64, reps: usize, seed: u64) -> Result<f64, ScalabilityError> {
    let sigma_u = q.uniform_moments().1;
    if sigma_u == 0.0 || reps < 2 {
        return Ok(0.0);
    }
    let mut est = Vec::with_capacity(reps);
    for r in 0..reps {
        let s = sample_probabilities(probs, q.n(), shots, derive_seed("kappa", &[seed, r as u64])).map_err(VqaError::from)?;
        est.push(estimate_expectation(&s, q).map_err(VqaError::from)?);
    }
    let mean = est.iter().sum::<f64>() / reps as f64;
    let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    Ok(var.sqrt() * (shots as f64).sqrt() / sigma_u)
}

/// Probe states per size for the sampling coefficient.
const KAPPA_PROBES: usize = 5;

struct CellResult {
    thresholds: Vec<ThresholdPoint>,
    never_succeeds: Vec<usize>,
    no_crossing: Vec<usize>,
    kappa: KappaFit,
    calls: Option<CallsFit>,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    plan: &SweepPlan,
    problem_type: &str,
    density: f64,
    ansatz: &AnsatzSpec,
    optimizer: &OptimizerPlan,
    builders: &BuilderRegistry,
    cell_seed: u64,
) -> Result<CellResult, ScalabilityError> {
    let eps = plan.epsilons.values();
    let mut out = CellResult {
        thresholds: Vec::new(),
        never_succeeds: Vec::new(),
        no_crossing: Vec::new(),
        kappa: fit_kappa(&[]),
        calls: None,
    };
    let mut kappa_samples = Vec::new();
    let mut call_samples = Vec::new();
    for n in plan.n_min..=plan.n_max {
        // the same instances and optimizer seeds at every noise level
        let benches = bench_instances(problem_type, density, n, plan.trials, plan.seed)?;
        let trial_seed = |t: usize| derive_seed("trial", &[cell_seed, n as u64, t as u64]);
        let run_at = |e: f64| -> Result<Vec<TrialOutcome>, ScalabilityError> {
            benches
                .par_iter()
                .enumerate()
                .map(|(t, b)| run_trial(&b.q, b.optimum, ansatz, optimizer, builders, e, plan.budget, plan.success_gap, trial_seed(t)))
                .collect()
        };
        let mut curve = Vec::with_capacity(eps.len());
        let mut per_eps = Vec::with_capacity(eps.len());
        for &e in &eps {
            let outcomes = run_at(e)?;
            curve.push((e, outcomes.iter().filter(|o| o.success).count() as f64 / plan.trials as f64));
            per_eps.push(outcomes);
        }

        // sampling coefficient at points visited by the lowest-noise runs
        let mut ks = Vec::new();
        for (t, o) in per_eps[0].iter().enumerate().take(KAPPA_PROBES) {
            let q = &benches[t].q;
            let pc = ansatz.parametric(q)?;
            let mut probes = vec![o.best_params.clone()];
            if let Some(first) = o.visited.first() {
                probes.push(first.clone());
            }
            if o.visited.len() > 2 {
                probes.push(o.visited[o.visited.len() / 2].clone());
            }
            for (k, p) in probes.iter().enumerate() {
                let psi = LocalSimulator::default().statevector(&pc.bind(p)?).map_err(VqaError::from)?;
                let seed = derive_seed("kappa-probe", &[cell_seed, n as u64, t as u64, k as u64]);
                ks.push(measure_kappa(q, &probabilities(&psi), plan.kappa_shots, plan.kappa_reps, seed)?);
            }
        }
        if !ks.is_empty() {
            kappa_samples.push((n, (ks.iter().map(|k| k * k).sum::<f64>() / ks.len() as f64).sqrt()));
        }

        let calls_eps = match fit_threshold(n, &curve, plan.trials) {
            Ok(tp) => {
                let e = tp.epsilon_star / 2.0;
                out.thresholds.push(tp);
                Some(e)
            }
            Err(FitError::NoCrossing) => {
                out.no_crossing.push(n);
                eps.last().copied()
            }
            Err(FitError::NeverSucceeds) => {
                out.never_succeeds.push(n);
                None
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(e) = calls_eps {
            let outcomes = match eps.iter().position(|x| *x == e) {
                Some(i) => std::mem::take(&mut per_eps[i]),
                None => run_at(e)?,
            };
            let ok: Vec<f64> = outcomes.iter().filter(|o| o.success).map(|o| o.calls_to_best as f64).collect();
            if !ok.is_empty() {
                call_samples.push((n, ok.iter().sum::<f64>() / ok.len() as f64));
            }
        }
    }
    out.kappa = fit_kappa(&kappa_samples);
    out.calls = fit_calls(&call_samples);
    Ok(out)
}

/// Runs the sweep. Cells are processed in parallel with seeds derived from
/// the plan seed and cell index, so the result does not depend on thread
/// scheduling. A failing cell yields records without fits.
pub fn build_database(plan: &SweepPlan, builders: &BuilderRegistry, date: &str) -> Result<ScalingDatabase, ScalabilityError> {
    plan.check()?;
    let plan_hash = plan.hash();
    let mut cells = Vec::new();
    for pt in &plan.problem_types {
        for &d in &plan.densities {
            for v in &plan.vqas {
                for o in &plan.optimizers {
                    let hyper = builders.resolve_values(&o.id, &o.hyperparams)?;
                    cells.push((pt.clone(), d, v.clone(), OptimizerPlan { id: o.id.clone(), hyperparams: hyper }));
                }
            }
        }
    }
    let records: Vec<Vec<ScalingRecord>> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, (pt, d, v, o))| {
            let cell_seed = derive_seed("cell", &[plan.seed, idx as u64]);
            let result = run_cell(plan, pt, *d, v, o, builders, cell_seed);
            let provenance = RecordProvenance {
                plan_hash: plan_hash.clone(),
                seed: plan.seed,
                cell_index: idx,
                date: date.to_string(),
            };
            let base = |hypothesis| ScalingRecord {
                problem_type: pt.clone(),
                density: *d,
                vqa: v.vqa_id().into(),
                optimizer: o.id.clone(),
                ansatz: v.clone(),
                optimizer_hyperparams: o.hyperparams.clone(),
                budget: plan.budget,
                hypothesis,
                fit: None,
                fit_error: None,
                thresholds: Vec::new(),
                never_succeeds: Vec::new(),
                no_crossing: Vec::new(),
                kappa: fit_kappa(&[]),
                calls: None,
                fitted_n_range: (0, 0),
                provenance: provenance.clone(),
            };
            Hypothesis::ALL
                .iter()
                .map(|&h| {
                    let mut r = base(h);
                    match &result {
                        Ok(c) => {
                            match fit_scaling(&c.thresholds, h) {
                                Ok(f) => {
                                    r.fitted_n_range = f.n_range;
                                    r.fit = Some(f);
                                }
                                Err(e) => r.fit_error = Some(e.to_string()),
                            }
                            r.thresholds = c.thresholds.clone();
                            r.never_succeeds = c.never_succeeds.clone();
                            r.no_crossing = c.no_crossing.clone();
                            r.kappa = c.kappa.clone();
                            r.calls = c.calls.clone();
                        }
                        Err(e) => {
                            log::warn!("cell {idx} ({pt}, {d}, {}, {}) failed: {e}", v.vqa_id(), o.id);
                            r.fit_error = Some(e.to_string());
                        }
                    }
                    r
                })
                .collect()
        })
        .collect();
    Ok(ScalingDatabase {
        schema: DB_SCHEMA.into(),
        records: records.into_iter().flatten().collect(),
    })
}
