//! Optimization problem classes, their JSON instance format and QUBO formulations.
//!
//! Every class registers one or more formulation modes. A formulation maps
//! the instance onto a [`QuboMatrix`] (possibly with extra slack variables)
//! together with an [`AffineRelation`] tying the application objective to
//! the QUBO value. Objective evaluation never looks at a formulation.

mod classes;
mod qubo;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use classes::{Knapsack, MaxCut, RandomQuboClass, RawQubo};
pub use qubo::{
    bits_to_index, bits_to_string, brute_force_optimum, brute_force_optimum_capped,
    index_to_bits, parse_bitstring, qubo_objective, random_qubo, QuboMatrix, BRUTE_FORCE_CAP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown problem class `{0}`")]
    UnknownProblemClass(String),
    #[error("schema violation at `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("problem class `{class}` has no formulation mode `{mode}`")]
    UnknownMode { class: String, mode: String },
    #[error("bitstring has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{n} variables exceed the brute-force cap of {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("density must lie in (0, 1], got {0}")]
    InvalidDensity(f64),
    #[error("problem class `{0}` is not graph based")]
    NotGraphBased(String),
    #[error("matrix must have at least one row")]
    EmptyMatrix,
    #[error("matrix is not square: {rows} rows but row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

impl ProblemError {
    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ProblemError::SchemaViolation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// `objective = scale * qubo_value + offset`, after slack variables (if any)
/// are minimized out for a feasible assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRelation {
    pub scale: f64,
    pub offset: f64,
}

impl AffineRelation {
    pub fn apply(&self, qubo_value: f64) -> f64 {
        self.scale * qubo_value + self.offset
    }
}

/// A QUBO produced by one formulation mode of a problem class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formulation {
    pub mode: String,
    pub qubo: QuboMatrix,
    /// Leading QUBO variables that correspond one-to-one to problem variables.
    /// The remaining variables are slack and are dropped when decoding.
    pub problem_variables: usize,
    pub relation: AffineRelation,
}

impl Formulation {
    pub fn decode<'a>(&self, qubo_bits: &'a [u8]) -> Result<&'a [u8], ProblemError> {
        if qubo_bits.len() != self.qubo.n() {
            return Err(ProblemError::LengthMismatch {
                expected: self.qubo.n(),
                got: qubo_bits.len(),
            });
        }
        Ok(&qubo_bits[..self.problem_variables])
    }
}

/// Application-level quality of one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub bitstring: Vec<u8>,
    pub objective_value: f64,
    /// Value under the class's default formulation, slack completed optimally.
    pub qubo_value: f64,
    pub feasible: bool,
}

/// Behaviour shared by all problem classes.
pub trait OptimizationProblem: fmt::Debug + Send + Sync {
    fn class_name(&self) -> &'static str;

    fn num_variables(&self) -> usize;

    fn modes(&self) -> &'static [&'static str];

    fn default_mode(&self) -> &'static str {
        self.modes()[0]
    }

    fn formulate(&self, mode: &str) -> Result<Formulation, ProblemError>;

    /// Application objective of `x`; must not consult any formulation.
    fn objective(&self, x: &[u8]) -> Result<(f64, bool), ProblemError>;

    /// Extends a problem assignment with the slack values that minimize the
    /// QUBO of `mode`.
    fn complete_slack(&self, mode: &str, x: &[u8]) -> Result<Vec<u8>, ProblemError> {
        let _ = mode;
        Ok(x.to_vec())
    }

    fn graph_density(&self) -> Option<f64> {
        None
    }

    /// Knapsack-style classes report capacity over total weight.
    fn capacity_ratio(&self) -> Option<f64> {
        None
    }

    /// Payload in the instance JSON format, without `problem_class`.
    fn payload(&self) -> Value;
}

/// A parsed, validated instance together with its selected formulation mode.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    problem: Arc<dyn OptimizationProblem>,
    formulation_mode: String,
}

impl ProblemInstance {
    pub fn new(
        problem: Arc<dyn OptimizationProblem>,
        mode: Option<&str>,
    ) -> Result<Self, ProblemError> {
        let formulation_mode = match mode {
            Some(m) => {
                if !problem.modes().contains(&m) {
                    return Err(ProblemError::UnknownMode {
                        class: problem.class_name().to_string(),
                        mode: m.to_string(),
                    });
                }
                m.to_string()
            }
            None => problem.default_mode().to_string(),
        };
        Ok(Self {
            problem,
            formulation_mode,
        })
    }

    pub fn problem_class(&self) -> &'static str {
        self.problem.class_name()
    }

    pub fn formulation_mode(&self) -> &str {
        &self.formulation_mode
    }

    pub fn num_variables(&self) -> usize {
        self.problem.num_variables()
    }

    pub fn problem(&self) -> &dyn OptimizationProblem {
        self.problem.as_ref()
    }

    pub fn to_json(&self) -> Value {
        let mut payload = self.problem.payload();
        if let Value::Object(map) = &mut payload {
            map.insert("problem_class".into(), Value::from(self.problem_class()));
            map.insert(
                "formulation_mode".into(),
                Value::from(self.formulation_mode.clone()),
            );
        }
        payload
    }
}

/// Formulates `instance` under `mode`.
pub fn formulate_problem(instance: &ProblemInstance, mode: &str) -> Result<Formulation, ProblemError> {
    instance.problem.formulate(mode)
}

/// Objective report for a problem-variable assignment.
pub fn evaluate_solution(instance: &ProblemInstance, x: &[u8]) -> Result<ObjectiveReport, ProblemError> {
    let p = instance.problem();
    let (objective_value, feasible) = p.objective(x)?;
    let mode = p.default_mode();
    let full = p.complete_slack(mode, x)?;
    let qubo_value = p.formulate(mode)?.qubo.objective(&full)?;
    Ok(ObjectiveReport {
        bitstring: x.to_vec(),
        objective_value,
        qubo_value,
        feasible,
    })
}

/// Edge count over `n(n-1)/2` for graph classes.
pub fn graph_density(instance: &ProblemInstance) -> Result<f64, ProblemError> {
    instance
        .problem
        .graph_density()
        .ok_or_else(|| ProblemError::NotGraphBased(instance.problem_class().to_string()))
}

type ParseFn = fn(Value) -> Result<Arc<dyn OptimizationProblem>, ProblemError>;

/// Problem classes known to the loader, keyed by `problem_class`.
#[derive(Clone)]
pub struct ProblemRegistry {
    parsers: BTreeMap<String, ParseFn>,
}

impl fmt::Debug for ProblemRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.parsers.keys()).finish()
    }
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("maxcut", classes::parse_maxcut);
        r.register("knapsack", classes::parse_knapsack);
        r.register("qubo", classes::parse_raw_qubo);
        r.register("random_qubo", classes::parse_random_qubo);
        r
    }
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self {
            parsers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, class: &str, parse: ParseFn) {
        self.parsers.insert(class.to_string(), parse);
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.parsers.keys().map(String::as_str)
    }

    pub fn parse_value(&self, mut doc: Value) -> Result<ProblemInstance, ProblemError> {
        let map = doc
            .as_object_mut()
            .ok_or_else(|| ProblemError::schema("$", "instance must be a JSON object"))?;
        let class = match map.remove("problem_class") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(ProblemError::schema("problem_class", "must be a string")),
            None => return Err(ProblemError::schema("problem_class", "missing field")),
        };
        let mode = match map.remove("formulation_mode") {
            Some(Value::String(s)) => Some(s),
            None | Some(Value::Null) => None,
            Some(_) => {
                return Err(ProblemError::schema("formulation_mode", "must be a string"))
            }
        };
        let parse = self
            .parsers
            .get(&class)
            .ok_or_else(|| ProblemError::UnknownProblemClass(class.clone()))?;
        let problem = parse(doc)?;
        ProblemInstance::new(problem, mode.as_deref())
    }

    pub fn parse_instance(&self, document: &str) -> Result<ProblemInstance, ProblemError> {
        let value: Value = serde_json::from_str(document)
            .map_err(|e| ProblemError::schema("$", format!("malformed JSON: {e}")))?;
        self.parse_value(value)
    }
}

/// Parses an instance using the built-in classes.
pub fn parse_instance(document: &str) -> Result<ProblemInstance, ProblemError> {
    ProblemRegistry::default().parse_instance(document)
}

/// Deserializes a class payload, turning serde's diagnostics into
/// [`ProblemError::SchemaViolation`] with the offending key.
pub(crate) fn from_payload<T: serde::de::DeserializeOwned>(doc: Value) -> Result<T, ProblemError> {
    serde_json::from_value(doc).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
            .unwrap_or("$")
            .to_string();
        ProblemError::SchemaViolation { field, reason: msg }
    })
}
