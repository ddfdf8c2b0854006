//! Node library registered under `decitree.nodes`.
//!
//! | type                    | requires                                  | creates                          |
//! |-------------------------|-------------------------------------------|----------------------------------|
//! | `load_problem`          | problem_instance                          | problem_class, num_variables, formulation_mode |
//! | `encode_qubo`           | problem_instance, formulation_mode        | qubo_matrix, formulation         |
//! | `scalability_assessment`| qubo_matrix, problem_class, problem_instance | scalability_assessment        |
//! | `algorithm_selection`   | num_variables                             | algorithm                        |
//! | `ansatz_setup`          | -                                         | ansatz                           |
//! | `optimizer_selection`   | algorithm                                 | optimizer                        |
//! | `scalability_estimate`  | qubo_matrix, problem_class, algorithm, optimizer | shot_estimate             |
//! | `vqa_execution`         | qubo_matrix, ansatz (, optimizer)         | vqa_trace, qubo_bitstring        |
//! | `classical_solver`      | qubo_matrix                               | qubo_bitstring, classical_result |

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{
    Delta, InterpretContext, Node, NodeArgs, NodeContext, NodeContract, NodeError, NodeRegistry, ProblemData,
    Services, BUILTIN_NAMESPACE, PROBLEM_INSTANCE_KEY, QUBO_MATRIX_KEY,
};
use crate::backend::BackendError;
use crate::builders::{BuilderKind, HyperParam, HyperValues, ValueKind};
use crate::problem::{
    bits_to_string, brute_force_optimum, evaluate_solution, formulate_problem, parse_bitstring, ProblemInstance,
    QuboMatrix, BRUTE_FORCE_CAP,
};
use crate::query::{AnswerPredicate, Query, QueryKind, QueryTree, Validator};
use crate::scalability::{assess, write_outputs, Assessment, Feasibility, Recommendation, ScalabilityError};
use crate::vqa::{run_vqa, AnsatzSpec, LossMode, Objective, Optimizer, VqaConfig, VqaError, VqaTrace, READOUT_SHOTS};

fn instance(ctx_data: &ProblemData, services: &Services) -> Result<ProblemInstance, NodeError> {
    let mut doc = ctx_data.require(PROBLEM_INSTANCE_KEY)?.clone();
    if let (Some(mode), Value::Object(m)) = (ctx_data.get("formulation_mode"), &mut doc) {
        m.insert("formulation_mode".into(), mode.clone());
    }
    Ok(services.problems.parse_value(doc)?)
}

fn qubo(data: &ProblemData) -> Result<QuboMatrix, NodeError> {
    let rows: Vec<Vec<f64>> = data.get_as(QUBO_MATRIX_KEY)?;
    Ok(QuboMatrix::from_rows(&rows)?)
}

fn bits(data: &ProblemData, key: &str) -> Result<Vec<u8>, NodeError> {
    let s: String = data.get_as(key)?;
    parse_bitstring(&s).ok_or_else(|| NodeError::BadEntry {
        key: key.into(),
        reason: format!("`{s}` is not a bitstring"),
    })
}

fn assessment(data: &ProblemData) -> Option<Assessment> {
    data.get("scalability_assessment")
        .filter(|v| !v.is_null())
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

fn recommended_combination(data: &ProblemData) -> Option<(Assessment, String, String)> {
    let a = assessment(data)?;
    match &a.recommendation {
        Recommendation::Combination { vqa, optimizer, .. } => {
            let (v, o) = (vqa.clone(), optimizer.clone());
            Some((a, v, o))
        }
        Recommendation::ClassicalFallback { .. } => None,
    }
}

/// Routing table `{value: child}` from init_args.
fn routes(args: &NodeArgs) -> Result<BTreeMap<String, String>, String> {
    args.get::<BTreeMap<String, String>>("routes")?
        .ok_or_else(|| format!("node `{}` needs init_args.routes", args.name))
}

fn route(
    ctx: &NodeContext<'_>,
    key: &str,
    table: &BTreeMap<String, String>,
    children: &[String],
) -> Result<String, NodeError> {
    let v = ctx
        .path_value(key)
        .or_else(|| ctx.data.get(key))
        .ok_or_else(|| NodeError::NoViableChild(format!("no `{key}` selected")))?;
    let s = v.as_str().ok_or_else(|| NodeError::NoViableChild(format!("`{key}` = {v} is not a name")))?;
    let child = table
        .get(s)
        .ok_or_else(|| NodeError::NoViableChild(format!("no route for {key} `{s}`")))?;
    if !children.contains(child) {
        return Err(NodeError::NoViableChild(format!("route target `{child}` is not a child")));
    }
    Ok(child.clone())
}

fn path_or<T: serde::de::DeserializeOwned>(ctx: &NodeContext<'_>, key: &str, default: T) -> Result<T, NodeError> {
    match ctx.path_value(key) {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| NodeError::BadEntry {
            key: format!("path.{key}"),
            reason: e.to_string(),
        }),
        None => Ok(default),
    }
}

/// Query for one builder hyperparameter.
pub fn hyperparam_query(id: &str, h: &HyperParam) -> Result<Query, NodeError> {
    let prompt = format!("{} ({})", h.name, h.description);
    let q = match h.value_kind {
        ValueKind::Choice => Query::new(id, QueryKind::SingleChoice, &prompt, h.options.clone(), h.default.clone(), None, Validator::OptionMember)?,
        kind => Query::new(
            id,
            if kind == ValueKind::Integer { QueryKind::Integer } else { QueryKind::Real },
            &prompt,
            Vec::new(),
            h.default.clone(),
            None,
            Validator::Range {
                min: h.min,
                min_exclusive: h.min_exclusive,
                max: h.max,
            },
        )?,
    };
    Ok(q)
}

// ---------------------------------------------------------------------------

struct LoadProblem;

impl Node for LoadProblem {
    fn contract(&self) -> NodeContract {
        NodeContract::new(
            [PROBLEM_INSTANCE_KEY],
            ["problem_class", "num_variables", "formulation_mode"],
            ["formulation_mode"],
        )
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let inst = instance(ctx.data, ctx.services)?;
        let mode = match ctx.path_value("formulation_mode") {
            Some(Value::String(m)) => {
                if !inst.problem().modes().contains(&m.as_str()) {
                    return Err(crate::problem::ProblemError::UnknownMode {
                        class: inst.problem_class().into(),
                        mode: m.clone(),
                    }
                    .into());
                }
                m.clone()
            }
            Some(other) => {
                return Err(NodeError::BadEntry {
                    key: "path.formulation_mode".into(),
                    reason: format!("{other} is not a mode name"),
                })
            }
            None => inst.formulation_mode().to_string(),
        };
        Ok(Delta::from([
            ("problem_class".into(), json!(inst.problem_class())),
            ("num_variables".into(), json!(inst.num_variables())),
            ("formulation_mode".into(), json!(mode)),
        ]))
    }

    fn interpret_result(&self, ctx: &InterpretContext<'_>) -> Result<Delta, NodeError> {
        let Some(s) = ctx.results.get("solution_bitstring").and_then(Value::as_str) else {
            return Ok(Delta::new());
        };
        let x = parse_bitstring(s).ok_or_else(|| NodeError::BadEntry {
            key: "solution_bitstring".into(),
            reason: "not a bitstring".into(),
        })?;
        let report = evaluate_solution(&instance(ctx.data, ctx.services)?, &x)?;
        Ok(Delta::from([("objective_report".into(), json!({
            "bitstring": bits_to_string(&report.bitstring),
            "objective_value": report.objective_value,
            "qubo_value": report.qubo_value,
            "feasible": report.feasible,
        }))]))
    }
}

struct EncodeQubo;

impl Node for EncodeQubo {
    fn contract(&self) -> NodeContract {
        NodeContract::new([PROBLEM_INSTANCE_KEY, "formulation_mode"], [QUBO_MATRIX_KEY, "formulation"], [])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let inst = instance(ctx.data, ctx.services)?;
        let f = formulate_problem(&inst, inst.formulation_mode())?;
        Ok(Delta::from([
            (QUBO_MATRIX_KEY.into(), json!(f.qubo.rows())),
            (
                "formulation".into(),
                json!({
                    "mode": f.mode,
                    "n_qubo_variables": f.qubo.n(),
                    "problem_variables": f.problem_variables,
                    "relation": f.relation,
                }),
            ),
        ]))
    }

    fn interpret_result(&self, ctx: &InterpretContext<'_>) -> Result<Delta, NodeError> {
        if !ctx.data.contains("qubo_bitstring") {
            return Ok(Delta::new());
        }
        let x = bits(ctx.data, "qubo_bitstring")?;
        let q = qubo(ctx.data)?;
        let problem_variables: usize = ctx.data.get("formulation").and_then(|f| f["problem_variables"].as_u64()).unwrap_or(q.n() as u64) as usize;
        if x.len() != q.n() || problem_variables > x.len() {
            return Err(NodeError::BadEntry {
                key: "qubo_bitstring".into(),
                reason: format!("length {} for {} QUBO variables", x.len(), q.n()),
            });
        }
        Ok(Delta::from([
            ("solution_bitstring".into(), json!(bits_to_string(&x[..problem_variables]))),
            ("qubo_value".into(), json!(q.objective(&x)?)),
        ]))
    }
}

struct ScalabilityAssessmentNode {
    output_dir: Option<std::path::PathBuf>,
}

impl Node for ScalabilityAssessmentNode {
    fn contract(&self) -> NodeContract {
        NodeContract::new([QUBO_MATRIX_KEY, "problem_class", PROBLEM_INSTANCE_KEY], ["scalability_assessment"], [])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let out = |v: Value| Ok(Delta::from([("scalability_assessment".into(), v)]));
        let Some(db) = ctx.services.database.clone() else {
            ctx.note("no scaling database configured; assessment skipped".into());
            return out(Value::Null);
        };
        let q = qubo(ctx.data)?;
        let class: String = ctx.data.get_as("problem_class")?;
        let declared = (class != "qubo").then_some(class.as_str());
        let ratio = instance(ctx.data, ctx.services)?.problem().capacity_ratio();
        match assess(&q, declared, ratio, &db, &ctx.services.builders, None) {
            Ok(a) => {
                if let Some(dir) = &self.output_dir {
                    write_outputs(&a, dir, ctx.services.backends.max_qubits()).map_err(|e| NodeError::Other(e.to_string()))?;
                }
                out(serde_json::to_value(&a).expect("assessment serializes"))
            }
            Err(e @ ScalabilityError::EmptyDatabaseSlice { .. }) => {
                ctx.note(format!("assessment skipped: {e}"));
                out(Value::Null)
            }
            Err(e) => Err(NodeError::Other(e.to_string())),
        }
    }
}

struct AlgorithmSelection {
    routes: BTreeMap<String, String>,
    default: Option<String>,
}

impl Node for AlgorithmSelection {
    fn contract(&self) -> NodeContract {
        NodeContract::new(["num_variables"], ["algorithm"], ["algorithm"])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let options: Vec<String> = self.routes.keys().cloned().collect();
        let mut q = Query::single_choice("algorithm", "Select the solution algorithm", options.clone(), self.default.as_deref())?;
        let n: usize = ctx.data.get_as("num_variables")?;
        let qubits: usize = ctx
            .data
            .get("formulation")
            .and_then(|f| f["n_qubo_variables"].as_u64())
            .map_or(n, |v| v as usize);
        let capacity = ctx.services.backends.max_qubits();
        let has = |o: &str| options.iter().any(|x| x == o);
        if qubits > capacity && has("classical") {
            q = q.with_recommendation(
                json!("classical"),
                &format!("{qubits} qubits needed; the largest backend provides {capacity}"),
            )?;
        } else if let Some(a) = assessment(ctx.data) {
            match &a.recommendation {
                Recommendation::Combination { vqa, optimizer, .. } if has(vqa) => {
                    q = q.with_recommendation(
                        json!(vqa),
                        &format!("scalability assessment: {vqa} + {optimizer} has the lowest worst-case shot requirement"),
                    )?;
                }
                Recommendation::ClassicalFallback { reason } if has("classical") => {
                    q = q.with_recommendation(json!("classical"), &format!("scalability assessment: {reason}"))?;
                }
                _ => {}
            }
        }
        let v = ctx.ask(q)?;
        Ok(Delta::from([("algorithm".into(), v)]))
    }

    fn next_node(&self, ctx: &NodeContext<'_>, children: &[String]) -> Result<String, NodeError> {
        route(ctx, "algorithm", &self.routes, children)
    }
}

struct AnsatzSetup {
    builder: String,
}

impl Node for AnsatzSetup {
    fn contract(&self) -> NodeContract {
        NodeContract::new([], ["ansatz"], ["depth", "ansatz.*"])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let desc = ctx.services.builders.descriptor(&self.builder)?;
        let recommended = recommended_combination(ctx.data).and_then(|(a, vqa, opt)| {
            a.entries
                .into_iter()
                .find(|e| e.vqa == vqa && e.optimizer == opt && e.ansatz.builder_id() == self.builder)
        });
        let mut values = HyperValues::new();
        for h in &desc.hyperparams {
            if h.name == "p" || h.name == "layers" {
                let mut q = hyperparam_query("depth", h)?;
                q.prompt = format!("Circuit depth for {}", desc.display_name);
                if let Some(e) = &recommended {
                    q = q.with_recommendation(json!(e.ansatz.depth()), "depth used for the scaling database")?;
                }
                values.insert(h.name.clone(), ctx.ask(q)?);
            } else if let Some(v) = ctx.path_value(&format!("ansatz.{}", h.name)) {
                values.insert(h.name.clone(), v.clone());
            } else if let Some(v) = recommended.as_ref().and_then(|e| e.ansatz.hyperparams().get(&h.name).cloned()) {
                values.insert(h.name.clone(), v);
            }
        }
        let spec = ctx
            .services
            .builders
            .build(&self.builder, &values)?
            .into_ansatz()
            .ok_or_else(|| NodeError::Other(format!("builder `{}` does not produce an ansatz", self.builder)))?;
        Ok(Delta::from([("ansatz".into(), serde_json::to_value(spec).expect("ansatz serializes"))]))
    }
}

struct OptimizerSelection {
    routes: BTreeMap<String, String>,
    default: Option<String>,
    tune_hyperparams: bool,
}

impl Node for OptimizerSelection {
    fn contract(&self) -> NodeContract {
        NodeContract::new(["algorithm"], ["optimizer"], ["optimizer", "optimizer.*"])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let builders = ctx.services.builders.clone();
        let available: Vec<_> = builders
            .list_builders(BuilderKind::Optimizer)
            .into_iter()
            .filter(|d| d.available)
            .collect();
        let ids: Vec<String> = available.iter().map(|d| d.id.clone()).collect();
        if ids.is_empty() {
            return Err(NodeError::Other("no optimizer builders available".into()));
        }
        let default = self.default.clone().filter(|d| ids.contains(d)).unwrap_or_else(|| ids[0].clone());
        let algorithm: String = ctx.data.get_as("algorithm")?;
        let recommended = recommended_combination(ctx.data).and_then(|(a, vqa, opt)| {
            (vqa == algorithm && ids.contains(&opt))
                .then(|| a.entries.into_iter().find(|e| e.vqa == vqa && e.optimizer == opt))
                .flatten()
        });
        let mut root = Query::single_choice("optimizer", "Select the classical optimizer", ids.clone(), Some(&default))?;
        if let Some(e) = &recommended {
            root = root.with_recommendation(json!(e.optimizer), "scalability assessment: lowest worst-case shot requirement")?;
        }
        let mut tree = QueryTree::new(root);
        if self.tune_hyperparams {
            for d in &available {
                let mut parent = ("optimizer".to_string(), AnswerPredicate::Equals { value: json!(d.id) });
                for h in &d.hyperparams {
                    let id = format!("optimizer.{}.{}", d.id, h.name);
                    let mut q = hyperparam_query(&id, h)?;
                    if let Some(v) = recommended.as_ref().filter(|e| e.optimizer == d.id).and_then(|e| e.optimizer_hyperparams.get(&h.name)) {
                        q = q.with_recommendation(v.clone(), "value used for the scaling database")?;
                    }
                    tree.add_follow_up(&parent.0, parent.1, q)?;
                    parent = (id, AnswerPredicate::Always);
                }
            }
        }
        let answers = tree.walk(|q| ctx.ask(q.clone()))?;
        let id = answers["optimizer"].as_str().unwrap_or_default().to_string();
        let prefix = format!("optimizer.{id}.");
        let mut values: HyperValues = answers
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|h| (h.to_string(), v.clone())))
            .collect();
        if !self.tune_hyperparams {
            let desc = builders.descriptor(&id)?;
            for h in &desc.hyperparams {
                if let Some(v) = ctx.path_value(&format!("{prefix}{}", h.name)) {
                    values.insert(h.name.clone(), v.clone());
                } else if let Some(v) = recommended.as_ref().filter(|e| e.optimizer == id).and_then(|e| e.optimizer_hyperparams.get(&h.name)) {
                    values.insert(h.name.clone(), v.clone());
                }
            }
        }
        let resolved = builders.resolve_values(&id, &values)?;
        Ok(Delta::from([("optimizer".into(), json!({"id": id, "hyperparams": resolved}))]))
    }

    fn next_node(&self, ctx: &NodeContext<'_>, children: &[String]) -> Result<String, NodeError> {
        route(ctx, "algorithm", &self.routes, children)
    }
}

struct ScalabilityEstimate {
    routes: BTreeMap<String, String>,
}

impl Node for ScalabilityEstimate {
    fn contract(&self) -> NodeContract {
        NodeContract::new([QUBO_MATRIX_KEY, "problem_class", "algorithm", "optimizer"], ["shot_estimate"], [])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let out = |v: Value| Ok(Delta::from([("shot_estimate".into(), v)]));
        let Some(db) = ctx.services.database.clone() else {
            ctx.note("no scaling database configured; shot estimate skipped".into());
            return out(Value::Null);
        };
        let q = qubo(ctx.data)?;
        let class: String = ctx.data.get_as("problem_class")?;
        let algorithm: String = ctx.data.get_as("algorithm")?;
        let optimizer = ctx.data.require("optimizer")?["id"].as_str().unwrap_or_default().to_string();
        let declared = (class != "qubo").then_some(class.as_str());
        let ratio = instance(ctx.data, ctx.services)?.problem().capacity_ratio();
        let combo = [(algorithm.clone(), optimizer.clone())];
        match assess(&q, declared, ratio, &db, &ctx.services.builders, Some(&combo)) {
            Ok(a) => match a.entries.into_iter().next() {
                Some(e) => {
                    if e.status != Feasibility::Feasible {
                        ctx.note(format!("{algorithm} + {optimizer} assessed as {}", e.status.label()));
                    }
                    out(json!({
                        "vqa": e.vqa,
                        "optimizer": e.optimizer,
                        "estimates": e.estimates,
                        "worst_case": e.worst_case,
                        "worst_case_log10": e.worst_case_log10,
                        "n_calls": e.n_calls,
                        "status": e.status,
                        "boundary_log10": a.boundary.log10,
                    }))
                }
                None => {
                    ctx.note(format!("no database records for {algorithm} + {optimizer}"));
                    out(Value::Null)
                }
            },
            Err(e @ ScalabilityError::EmptyDatabaseSlice { .. }) => {
                ctx.note(format!("shot estimate skipped: {e}"));
                out(Value::Null)
            }
            Err(e) => Err(NodeError::Other(e.to_string())),
        }
    }

    fn next_node(&self, ctx: &NodeContext<'_>, children: &[String]) -> Result<String, NodeError> {
        route(ctx, "algorithm", &self.routes, children)
    }
}

/// Placeholder for schedules without free parameters.
struct FixedSchedule;

impl Optimizer for FixedSchedule {
    fn id(&self) -> &str {
        "none"
    }

    fn minimize(&mut self, _: &mut dyn Objective, _: Vec<f64>, _: &mut ChaCha8Rng) -> Result<(), VqaError> {
        Ok(())
    }
}

struct VqaExecution {
    requires_optimizer: bool,
    shots: u64,
    budget: usize,
    seed: u64,
}

impl Node for VqaExecution {
    fn contract(&self) -> NodeContract {
        let mut requires = vec![QUBO_MATRIX_KEY, "ansatz"];
        if self.requires_optimizer {
            requires.push("optimizer");
        }
        NodeContract::new(requires, ["vqa_trace", "qubo_bitstring"], ["shots", "budget", "seed", "backend"])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let q = qubo(ctx.data)?;
        let ansatz: AnsatzSpec = ctx.data.get_as("ansatz")?;
        let mut optimizer: Box<dyn Optimizer> = match ctx.data.get("optimizer") {
            Some(o) => {
                let id = o["id"].as_str().unwrap_or_default();
                let hp: HyperValues = serde_json::from_value(o["hyperparams"].clone()).unwrap_or_default();
                ctx.services
                    .builders
                    .build(id, &hp)?
                    .into_optimizer()
                    .ok_or_else(|| NodeError::Other(format!("`{id}` is not an optimizer")))?
            }
            None if ansatz.parameter_count(q.n())? == 0 => Box::new(FixedSchedule),
            None => return Err(NodeError::MissingKey("optimizer".into())),
        };
        let shots: u64 = path_or(ctx, "shots", self.shots)?;
        let budget: usize = path_or(ctx, "budget", self.budget)?;
        let seed: u64 = path_or(ctx, "seed", self.seed)?;
        let backend_id: String = match ctx.path_value("backend") {
            Some(_) => path_or(ctx, "backend", String::new())?,
            None => ctx
                .services
                .backends
                .select_for(q.n())
                .map(|r| r.id)
                .ok_or(BackendError::TooManyQubits {
                    requested: q.n(),
                    cap: ctx.services.backends.max_qubits(),
                })?,
        };
        let (_, backend) = ctx.services.backends.get(&backend_id)?;
        let config = VqaConfig {
            ansatz,
            loss: if shots == 0 { LossMode::Exact } else { LossMode::Shots { shots } },
            budget,
            seed,
            readout_shots: READOUT_SHOTS,
        };
        let trace = run_vqa(&config, optimizer.as_mut(), backend.as_ref(), &q)?;
        Ok(Delta::from([
            ("qubo_bitstring".into(), json!(bits_to_string(&trace.best_bitstring))),
            ("vqa_trace".into(), serde_json::to_value(&trace).expect("trace serializes")),
        ]))
    }

    fn interpret_result(&self, ctx: &InterpretContext<'_>) -> Result<Delta, NodeError> {
        let t: VqaTrace = ctx.data.get_as("vqa_trace")?;
        Ok(Delta::from([(
            "algorithm_trace".into(),
            json!({
                "solver": "vqa",
                "vqa": t.vqa,
                "optimizer": t.optimizer,
                "n_calls": t.n_calls,
                "calls_to_best": t.calls_to_best(),
                "shots_per_call": t.shots_per_call,
                "best_loss": t.best_loss,
                "best_exact_loss": t.best_exact_loss,
                "best_params": t.best_params,
                "status": t.status,
            }),
        )]))
    }
}

struct ClassicalSolver {
    restarts: usize,
    seed: u64,
}

/// Best single-flip local minimum over seeded random restarts.
fn local_search(q: &QuboMatrix, restarts: usize, seed: u64) -> (Vec<u8>, f64) {
    let n = q.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<u8>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let mut x: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
        let mut f = q.objective_unchecked(&x);
        loop {
            let mut improved = false;
            for i in 0..n {
                x[i] ^= 1;
                let g = q.objective_unchecked(&x);
                if g < f - 1e-12 {
                    f = g;
                    improved = true;
                } else {
                    x[i] ^= 1;
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((x, f));
        }
    }
    best.expect("at least one restart")
}

impl Node for ClassicalSolver {
    fn contract(&self) -> NodeContract {
        NodeContract::new([QUBO_MATRIX_KEY], ["qubo_bitstring", "classical_result"], [])
    }

    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError> {
        let q = qubo(ctx.data)?;
        let (x, value, method) = if q.n() <= BRUTE_FORCE_CAP {
            let (x, v) = brute_force_optimum(&q)?;
            (x, v, "brute_force")
        } else {
            let (x, v) = local_search(&q, self.restarts, self.seed);
            (x, v, "local_search")
        };
        Ok(Delta::from([
            ("qubo_bitstring".into(), json!(bits_to_string(&x))),
            ("classical_result".into(), json!({"method": method, "qubo_value": value})),
        ]))
    }

    fn interpret_result(&self, ctx: &InterpretContext<'_>) -> Result<Delta, NodeError> {
        let r = ctx.data.require("classical_result")?;
        Ok(Delta::from([(
            "algorithm_trace".into(),
            json!({"solver": "classical", "method": r["method"], "qubo_value": r["qubo_value"]}),
        )]))
    }
}

fn factory<N: Node + 'static>(f: fn(&NodeArgs) -> Result<N, String>) -> super::NodeFactory {
    Arc::new(move |args: &NodeArgs, _: &Services| Ok(Arc::new(f(args)?) as Arc<dyn Node>))
}

pub fn register(registry: &mut NodeRegistry) {
    let ns = BUILTIN_NAMESPACE;
    registry.register(ns, "load_problem", factory(|_| Ok(LoadProblem)));
    registry.register(ns, "encode_qubo", factory(|_| Ok(EncodeQubo)));
    registry.register(
        ns,
        "scalability_assessment",
        factory(|a| Ok(ScalabilityAssessmentNode { output_dir: a.get("output_dir")? })),
    );
    registry.register(
        ns,
        "algorithm_selection",
        factory(|a| {
            Ok(AlgorithmSelection {
                routes: routes(a)?,
                default: a.get("default")?,
            })
        }),
    );
    registry.register(
        ns,
        "ansatz_setup",
        factory(|a| {
            Ok(AnsatzSetup {
                builder: a.get("builder")?.ok_or("ansatz_setup needs init_args.builder")?,
            })
        }),
    );
    registry.register(
        ns,
        "optimizer_selection",
        factory(|a| {
            Ok(OptimizerSelection {
                routes: routes(a)?,
                default: a.get("default")?,
                tune_hyperparams: a.get("tune_hyperparams")?.unwrap_or(true),
            })
        }),
    );
    registry.register(ns, "scalability_estimate", factory(|a| Ok(ScalabilityEstimate { routes: routes(a)? })));
    registry.register(
        ns,
        "vqa_execution",
        factory(|a| {
            Ok(VqaExecution {
                requires_optimizer: a.get("requires_optimizer")?.unwrap_or(true),
                shots: a.get("shots")?.unwrap_or(1024),
                budget: a.get("budget")?.unwrap_or(200),
                seed: a.get("seed")?.unwrap_or(7),
            })
        }),
    );
    registry.register(
        ns,
        "classical_solver",
        factory(|a| {
            Ok(ClassicalSolver {
                restarts: a.get("restarts")?.unwrap_or(32),
                seed: a.get("seed")?.unwrap_or(7),
            })
        }),
    );
}
