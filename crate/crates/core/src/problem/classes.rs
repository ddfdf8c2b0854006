use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    from_payload, random_qubo, AffineRelation, Formulation, OptimizationProblem, ProblemError,
    QuboMatrix,
};

fn unknown_mode(class: &str, mode: &str) -> ProblemError {
    ProblemError::UnknownMode {
        class: class.to_string(),
        mode: mode.to_string(),
    }
}

fn check_len(expected: usize, x: &[u8]) -> Result<(), ProblemError> {
    if x.len() != expected {
        return Err(ProblemError::LengthMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Weighted MaxCut on an undirected simple graph.
///
/// Mode `standard` yields `qubo(x) = -cut(x)`. Mode `normalized` divides the
/// same matrix by the smallest power of two not below the total absolute edge
/// weight, so `cut(x) = -2^k * qubo(x)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxCut {
    nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaxCutPayload {
    nodes: usize,
    edges: Vec<Vec<f64>>,
}

impl MaxCut {
    pub fn new(nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, ProblemError> {
        if nodes == 0 {
            return Err(ProblemError::schema("nodes", "graph needs at least one node"));
        }
        let mut seen = BTreeSet::new();
        for (k, &(i, j, w)) in edges.iter().enumerate() {
            let field = format!("edges[{k}]");
            if i >= nodes || j >= nodes {
                return Err(ProblemError::schema(field, "endpoint out of range"));
            }
            if i == j {
                return Err(ProblemError::schema(field, "self loops are not allowed"));
            }
            if !w.is_finite() {
                return Err(ProblemError::schema(field, "weight must be finite"));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(ProblemError::schema(field, "duplicate edge"));
            }
        }
        Ok(Self { nodes, edges })
    }

    /// Seeded Erdős–Rényi-style graph with exactly `round(density * n(n-1)/2)` edges.
    pub fn random(nodes: usize, density: f64, weighted: bool, seed: u64) -> Result<Self, ProblemError> {
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};
        if !(density > 0.0 && density <= 1.0) {
            return Err(ProblemError::InvalidDensity(density));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pairs: Vec<(usize, usize)> = (0..nodes)
            .flat_map(|i| (i + 1..nodes).map(move |j| (i, j)))
            .collect();
        let count = ((density * pairs.len() as f64).round() as usize).clamp(
            usize::from(!pairs.is_empty()),
            pairs.len(),
        );
        pairs.shuffle(&mut rng);
        let mut chosen = pairs[..count].to_vec();
        chosen.sort_unstable();
        let edges = chosen
            .into_iter()
            .map(|(i, j)| {
                // Dyadic weights keep cut and QUBO arithmetic exact.
                let w = if weighted {
                    f64::from(rng.random_range(1u32..=8)) / 4.0
                } else {
                    1.0
                };
                (i, j, w)
            })
            .collect();
        Self::new(nodes, edges)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn cut_value(&self, x: &[u8]) -> f64 {
        self.edges
            .iter()
            .filter(|&&(i, j, _)| x[i] != x[j])
            .map(|&(_, _, w)| w)
            .sum()
    }

    fn standard_qubo(&self) -> QuboMatrix {
        let mut q = QuboMatrix::zeros(self.nodes).expect("nodes > 0");
        for &(i, j, w) in &self.edges {
            q.add(i, i, -w);
            q.add(j, j, -w);
            q.add(i, j, 2.0 * w);
        }
        q
    }
}

impl OptimizationProblem for MaxCut {
    fn class_name(&self) -> &'static str {
        "maxcut"
    }

    fn num_variables(&self) -> usize {
        self.nodes
    }

    fn modes(&self) -> &'static [&'static str] {
        &["standard", "normalized"]
    }

    fn formulate(&self, mode: &str) -> Result<Formulation, ProblemError> {
        let mut qubo = self.standard_qubo();
        let scale = match mode {
            "standard" => 1.0,
            "normalized" => {
                let total: f64 = self.edges.iter().map(|e| e.2.abs()).sum();
                if total > 0.0 {
                    2f64.powi(total.log2().ceil() as i32)
                } else {
                    1.0
                }
            }
            other => return Err(unknown_mode("maxcut", other)),
        };
        qubo.scale(1.0 / scale);
        Ok(Formulation {
            mode: mode.to_string(),
            qubo,
            problem_variables: self.nodes,
            relation: AffineRelation {
                scale: -scale,
                offset: 0.0,
            },
        })
    }

    fn objective(&self, x: &[u8]) -> Result<(f64, bool), ProblemError> {
        check_len(self.nodes, x)?;
        Ok((self.cut_value(x), true))
    }

    fn graph_density(&self) -> Option<f64> {
        if self.nodes < 2 {
            return Some(0.0);
        }
        Some(self.edges.len() as f64 / (self.nodes * (self.nodes - 1) / 2) as f64)
    }

    fn payload(&self) -> Value {
        let edges: Vec<Value> = self
            .edges
            .iter()
            .map(|&(i, j, w)| serde_json::json!([i, j, w]))
            .collect();
        serde_json::json!({ "nodes": self.nodes, "edges": edges })
    }
}

pub(super) fn parse_maxcut(doc: Value) -> Result<Arc<dyn OptimizationProblem>, ProblemError> {
    let p: MaxCutPayload = from_payload(doc)?;
    let mut edges = Vec::with_capacity(p.edges.len());
    for (k, e) in p.edges.iter().enumerate() {
        let field = format!("edges[{k}]");
        let as_index = |v: f64| -> Result<usize, ProblemError> {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(ProblemError::schema(&field, "endpoints must be node indices"));
            }
            Ok(v as usize)
        };
        match e.as_slice() {
            [i, j] => edges.push((as_index(*i)?, as_index(*j)?, 1.0)),
            [i, j, w] => edges.push((as_index(*i)?, as_index(*j)?, *w)),
            _ => return Err(ProblemError::schema(field, "edge must be [i, j] or [i, j, weight]")),
        }
    }
    Ok(Arc::new(MaxCut::new(p.nodes, edges)?))
}

/// 0/1 knapsack with integer weights and capacity.
///
/// The capacity constraint becomes `P (sum w_i x_i + sum c_k s_k - C)^2` over
/// slack bits `s`. Mode `binary_slack` uses power-of-two slack coefficients,
/// `unary_slack` uses `C` unit slack bits. When all items fit together the
/// constraint can never bind and both modes omit it.
///
/// For feasible `x`, minimizing the QUBO over slack gives
/// `value(x) = -qubo(x, s*) - P C^2` (or `-qubo` when the constraint is omitted).
#[derive(Debug, Clone, PartialEq)]
pub struct Knapsack {
    values: Vec<f64>,
    weights: Vec<u64>,
    capacity: u64,
    penalty: f64,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct KnapsackPayload {
    values: Vec<f64>,
    weights: Vec<u64>,
    capacity: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    penalty: Option<f64>,
}

impl Knapsack {
    pub fn new(
        values: Vec<f64>,
        weights: Vec<u64>,
        capacity: u64,
        penalty: Option<f64>,
    ) -> Result<Self, ProblemError> {
        if values.is_empty() {
            return Err(ProblemError::schema("values", "at least one item required"));
        }
        if values.len() != weights.len() {
            return Err(ProblemError::schema(
                "weights",
                format!("{} weights for {} values", weights.len(), values.len()),
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ProblemError::schema(
                format!("values[{k}]"),
                "values must be finite and non-negative",
            ));
        }
        let penalty = match penalty {
            Some(p) if p.is_finite() && p > 0.0 => p,
            Some(_) => return Err(ProblemError::schema("penalty", "must be positive")),
            None => Self::default_penalty(&values),
        };
        Ok(Self {
            values,
            weights,
            capacity,
            penalty,
        })
    }

    /// `2 * max value * item count`, or 1 when every value is zero.
    pub fn default_penalty(values: &[f64]) -> f64 {
        let max = values.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            2.0 * max * values.len() as f64
        } else {
            1.0
        }
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    fn total_weight(&self, x: &[u8]) -> u64 {
        self.weights
            .iter()
            .zip(x)
            .filter(|(_, &b)| b != 0)
            .map(|(w, _)| *w)
            .sum()
    }

    fn constraint_binds(&self) -> bool {
        self.weights.iter().sum::<u64>() > self.capacity
    }

    fn slack_coefficients(&self, mode: &str) -> Result<Vec<u64>, ProblemError> {
        if !self.constraint_binds() {
            return Ok(Vec::new());
        }
        Ok(match mode {
            "binary_slack" => {
                let bits = if self.capacity == 0 {
                    0
                } else {
                    64 - self.capacity.leading_zeros()
                };
                (0..bits).map(|k| 1u64 << k).collect()
            }
            "unary_slack" => vec![1; self.capacity as usize],
            other => return Err(unknown_mode("knapsack", other)),
        })
    }
}

impl OptimizationProblem for Knapsack {
    fn class_name(&self) -> &'static str {
        "knapsack"
    }

    fn num_variables(&self) -> usize {
        self.values.len()
    }

    fn modes(&self) -> &'static [&'static str] {
        &["binary_slack", "unary_slack"]
    }

    fn formulate(&self, mode: &str) -> Result<Formulation, ProblemError> {
        let slack = self.slack_coefficients(mode)?;
        let items = self.values.len();
        let n = items + slack.len();
        let mut q = QuboMatrix::zeros(n)?;
        for (i, v) in self.values.iter().enumerate() {
            q.add(i, i, -v);
        }
        let mut offset = 0.0;
        if self.constraint_binds() {
            let coeffs: Vec<f64> = self
                .weights
                .iter()
                .chain(slack.iter())
                .map(|&a| a as f64)
                .collect();
            let p = self.penalty;
            let c = self.capacity as f64;
            for i in 0..n {
                q.add(i, i, p * (coeffs[i] * coeffs[i] - 2.0 * c * coeffs[i]));
                for j in i + 1..n {
                    q.add(i, j, 2.0 * p * coeffs[i] * coeffs[j]);
                }
            }
            offset = -p * c * c;
        }
        Ok(Formulation {
            mode: mode.to_string(),
            qubo: q,
            problem_variables: items,
            relation: AffineRelation { scale: -1.0, offset },
        })
    }

    fn objective(&self, x: &[u8]) -> Result<(f64, bool), ProblemError> {
        check_len(self.values.len(), x)?;
        let value = self
            .values
            .iter()
            .zip(x)
            .filter(|(_, &b)| b != 0)
            .map(|(v, _)| *v)
            .sum();
        Ok((value, self.total_weight(x) <= self.capacity))
    }

    fn complete_slack(&self, mode: &str, x: &[u8]) -> Result<Vec<u8>, ProblemError> {
        check_len(self.values.len(), x)?;
        let coeffs = self.slack_coefficients(mode)?;
        let mut full = x.to_vec();
        let used = self.total_weight(x);
        let mut remaining = self.capacity.saturating_sub(used);
        if used > self.capacity {
            remaining = 0;
        }
        // Largest coefficient first; exact for both power-of-two and unit slack.
        let mut slack = vec![0u8; coeffs.len()];
        for k in (0..coeffs.len()).rev() {
            if coeffs[k] <= remaining {
                slack[k] = 1;
                remaining -= coeffs[k];
            }
        }
        full.extend(slack);
        Ok(full)
    }

    fn capacity_ratio(&self) -> Option<f64> {
        let total: u64 = self.weights.iter().sum();
        Some(if total == 0 {
            1.0
        } else {
            self.capacity as f64 / total as f64
        })
    }

    fn payload(&self) -> Value {
        serde_json::to_value(KnapsackPayload {
            values: self.values.clone(),
            weights: self.weights.clone(),
            capacity: self.capacity,
            penalty: Some(self.penalty),
        })
        .expect("payload serializes")
    }
}

pub(super) fn parse_knapsack(doc: Value) -> Result<Arc<dyn OptimizationProblem>, ProblemError> {
    let p: KnapsackPayload = from_payload(doc)?;
    Ok(Arc::new(Knapsack::new(p.values, p.weights, p.capacity, p.penalty)?))
}

/// A QUBO given directly as a matrix; the objective is the QUBO value itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RawQubo {
    matrix: QuboMatrix,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuboPayload {
    matrix: Vec<Vec<f64>>,
}

impl RawQubo {
    pub fn new(matrix: QuboMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &QuboMatrix {
        &self.matrix
    }
}

impl OptimizationProblem for RawQubo {
    fn class_name(&self) -> &'static str {
        "qubo"
    }

    fn num_variables(&self) -> usize {
        self.matrix.n()
    }

    fn modes(&self) -> &'static [&'static str] {
        &["direct"]
    }

    fn formulate(&self, mode: &str) -> Result<Formulation, ProblemError> {
        if mode != "direct" {
            return Err(unknown_mode("qubo", mode));
        }
        Ok(direct(self.matrix.clone()))
    }

    fn objective(&self, x: &[u8]) -> Result<(f64, bool), ProblemError> {
        Ok((self.matrix.objective(x)?, true))
    }

    fn payload(&self) -> Value {
        serde_json::json!({ "matrix": self.matrix.rows() })
    }
}

fn direct(qubo: QuboMatrix) -> Formulation {
    let problem_variables = qubo.n();
    Formulation {
        mode: "direct".to_string(),
        qubo,
        problem_variables,
        relation: AffineRelation {
            scale: 1.0,
            offset: 0.0,
        },
    }
}

pub(super) fn parse_raw_qubo(doc: Value) -> Result<Arc<dyn OptimizationProblem>, ProblemError> {
    let p: RawQuboPayload = from_payload(doc)?;
    let matrix = QuboMatrix::from_rows(&p.matrix)
        .map_err(|e| ProblemError::schema("matrix", e.to_string()))?;
    Ok(Arc::new(RawQubo::new(matrix)))
}

/// A seeded random QUBO described by `(n, density, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomQuboClass {
    n: usize,
    density: f64,
    seed: u64,
    matrix: QuboMatrix,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomQuboPayload {
    n: usize,
    density: f64,
    seed: u64,
}

impl RandomQuboClass {
    pub fn new(n: usize, density: f64, seed: u64) -> Result<Self, ProblemError> {
        let matrix = random_qubo(n, density, seed)?;
        Ok(Self {
            n,
            density,
            seed,
            matrix,
        })
    }

    pub fn matrix(&self) -> &QuboMatrix {
        &self.matrix
    }
}

impl OptimizationProblem for RandomQuboClass {
    fn class_name(&self) -> &'static str {
        "random_qubo"
    }

    fn num_variables(&self) -> usize {
        self.n
    }

    fn modes(&self) -> &'static [&'static str] {
        &["direct"]
    }

    fn formulate(&self, mode: &str) -> Result<Formulation, ProblemError> {
        if mode != "direct" {
            return Err(unknown_mode("random_qubo", mode));
        }
        Ok(direct(self.matrix.clone()))
    }

    fn objective(&self, x: &[u8]) -> Result<(f64, bool), ProblemError> {
        Ok((self.matrix.objective(x)?, true))
    }

    fn payload(&self) -> Value {
        serde_json::json!({ "n": self.n, "density": self.density, "seed": self.seed })
    }
}

pub(super) fn parse_random_qubo(doc: Value) -> Result<Arc<dyn OptimizationProblem>, ProblemError> {
    let p: RandomQuboPayload = from_payload(doc)?;
    Ok(Arc::new(RandomQuboClass::new(p.n, p.density, p.seed)?))
}
