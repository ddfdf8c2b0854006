//! Scalability assessment: the scaling database, shot estimates under three
//! decay hypotheses, feasibility against the brute-force boundary, and the
//! recommendation with its output files.

mod database;
mod fit;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use database::{
    build_database, derive_seed, generate_instance, measure_kappa, measure_success_rate, relative_gap,
    run_trial, EpsilonGrid, OptimizerPlan, RecordProvenance, ScalingDatabase, ScalingRecord, SweepPlan,
    TrialOutcome, DB_SCHEMA,
};
pub use fit::{
    fit_calls, fit_kappa, fit_scaling, fit_threshold, weighted_line, CallsFit, Cov2, FitError, Hypothesis,
    KappaFit, ScalingFit, ThresholdPoint, MIN_R_SQUARED,
};

use crate::backend::LocalSimulator;
use crate::builders::{BuildError, BuilderRegistry, HyperValues};
use crate::problem::{ProblemError, QuboMatrix};
use crate::tree::{PathSpec, RecommendedConfig, TreeConfig};
use crate::vqa::{AnsatzSpec, VqaError};

/// Relative optimality gap counted as success.
pub const SUCCESS_GAP: f64 = 0.05;
pub const ASSESSMENT_SCHEMA: &str = "decitree.assessment/v1";
pub const ASSESSMENT_FILE: &str = "scalability_assessment.json";
pub const RECOMMENDED_CONFIG_FILE: &str = "recommended_config.yaml";
/// Density slices closer than this are treated as equidistant.
const GRID_TIE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScalabilityError {
    #[error("no database records for `{class}`: {reason}")]
    EmptyDatabaseSlice { class: String, reason: String },
    #[error("sweep plan: {0}")]
    Plan(String),
    #[error("database: {0}")]
    Database(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Vqa(#[from] VqaError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Shot requirement under one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotEstimate {
    pub hypothesis: Hypothesis,
    pub valid: bool,
    /// ε* is not positive at the target size; the requirement is infinite.
    pub domain_exceeded: bool,
    pub epsilon_star: Option<f64>,
    pub kappa: f64,
    /// `ceil((κ/ε*)²)`, exact below 2^53.
    pub point: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub log10_point: Option<f64>,
    pub log10_low: Option<f64>,
    pub log10_high: Option<f64>,
}

/// Inverts the solvability condition `κ(n)/√n_shots < ε*(n)` at `n`.
pub fn estimate_shots(fit: &ScalingFit, kappa: &KappaFit, n: usize) -> ShotEstimate {
    let nf = n as f64;
    let mut est = ShotEstimate {
        hypothesis: fit.hypothesis,
        valid: fit.valid,
        domain_exceeded: false,
        epsilon_star: None,
        kappa: kappa.kappa(nf),
        point: None,
        low: None,
        high: None,
        log10_point: None,
        log10_low: None,
        log10_high: None,
    };
    let Some((ln_eps, var_eps)) = fit.ln_epsilon_star(nf) else {
        est.domain_exceeded = true;
        return est;
    };
    est.epsilon_star = Some(ln_eps.exp());
    let Some((ln_k, var_k)) = kappa.ln_kappa(nf) else {
        // zero-variance probes: one shot already resolves the loss
        for f in [&mut est.point, &mut est.low, &mut est.high] {
            *f = Some(1.0);
        }
        for f in [&mut est.log10_point, &mut est.log10_low, &mut est.log10_high] {
            *f = Some(0.0);
        }
        return est;
    };
    let ln_raw = 2.0 * (ln_k - ln_eps);
    let raw = ln_raw.exp();
    let ln_point = if raw.is_finite() {
        let p = raw.ceil().max(1.0);
        est.point = Some(p);
        p.ln()
    } else {
        ln_raw
    };
    let sigma = (4.0 * (var_k + var_eps)).sqrt();
    let (ln_lo, ln_hi) = (ln_point - 1.96 * sigma, ln_point + 1.96 * sigma);
    let l10 = std::f64::consts::LN_10;
    est.log10_point = Some(ln_point / l10);
    est.log10_low = Some(ln_lo / l10);
    est.log10_high = Some(ln_hi / l10);
    let finite = |x: f64| x.is_finite().then_some(x);
    if est.point.is_some() {
        est.low = finite(if sigma == 0.0 { raw.ceil().max(1.0) } else { ln_lo.exp() });
        est.high = finite(if sigma == 0.0 { raw.ceil().max(1.0) } else { ln_hi.exp() });
    }
    est
}

/// `n_shots · n_calls < 2^n`, evaluated in log space; products within
/// rounding distance of the boundary are settled exactly.
pub fn disadvantage_check(n: u32, n_shots: u64, n_calls: u64) -> bool {
    if n_shots == 0 || n_calls == 0 {
        return true;
    }
    let lhs = (n_shots as f64).log2() + (n_calls as f64).log2();
    let rhs = f64::from(n);
    if (lhs - rhs).abs() > 1e-9 {
        return lhs < rhs;
    }
    let product = u128::from(n_shots) * u128::from(n_calls);
    n >= 128 || product < (1u128 << n)
}

/// Log-space form for requirements beyond integer range. Non-finite
/// inputs (an infinite requirement) are never feasible.
pub fn disadvantage_check_log10(n: usize, log10_shots: f64, log10_calls: f64) -> bool {
    if !(log10_shots.is_finite() && log10_calls.is_finite()) {
        return false;
    }
    log10_shots + log10_calls < n as f64 * std::f64::consts::LOG10_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
    NotCharacterizable,
}

impl Feasibility {
    /// Table notation.
    pub fn label(self) -> &'static str {
        match self {
            Feasibility::Feasible => "feasible",
            Feasibility::Infeasible => "infeasible",
            Feasibility::NotCharacterizable => "n.c.",
        }
    }
}

/// Sizes at which a combination never reaches 50% success before it is
/// considered not characterizable.
pub const NEVER_SUCCEEDS_LIMIT: usize = 2;

/// Worst case over valid hypotheses: `(log10 shots, point)`. `None` when
/// no hypothesis is valid; infinite when a valid one is out of domain.
pub fn worst_case(estimates: &[ShotEstimate]) -> Option<(f64, Option<f64>, Hypothesis)> {
    let mut worst: Option<(f64, Option<f64>, Hypothesis)> = None;
    for e in estimates.iter().filter(|e| e.valid) {
        let (l, p) = if e.domain_exceeded {
            (f64::INFINITY, None)
        } else {
            match e.log10_point {
                Some(l) => (l, e.point),
                None => continue,
            }
        };
        if worst.as_ref().is_none_or(|w| l > w.0) {
            worst = Some((l, p, e.hypothesis));
        }
    }
    worst
}

/// Feasibility of one combination at size `n`.
pub fn classify(estimates: &[ShotEstimate], never_succeeds: usize, n: usize, n_calls: Option<f64>) -> Feasibility {
    if never_succeeds >= NEVER_SUCCEEDS_LIMIT {
        return Feasibility::NotCharacterizable;
    }
    let Some((log10_shots, point, _)) = worst_case(estimates) else {
        return Feasibility::NotCharacterizable;
    };
    let Some(calls) = n_calls.filter(|c| c.is_finite() && *c > 0.0) else {
        return Feasibility::NotCharacterizable;
    };
    let calls = calls.ceil();
    let as_int = |x: f64| (x <= u64::MAX as f64 / 2.0).then_some(x as u64);
    let feasible = match (point.and_then(as_int), as_int(calls), u32::try_from(n)) {
        (Some(s), Some(c), Ok(n32)) => disadvantage_check(n32, s, c),
        _ => disadvantage_check_log10(n, log10_shots, calls.log10()),
    };
    if feasible {
        Feasibility::Feasible
    } else {
        Feasibility::Infeasible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recommendation {
    Combination {
        vqa: String,
        optimizer: String,
        worst_case_log10: f64,
        total_cost_log10: f64,
    },
    ClassicalFallback { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentEntry {
    pub vqa: String,
    pub optimizer: String,
    pub ansatz: AnsatzSpec,
    pub optimizer_hyperparams: HyperValues,
    pub budget: usize,
    pub estimates: Vec<ShotEstimate>,
    pub worst_case: Option<f64>,
    pub worst_case_log10: Option<f64>,
    pub worst_hypothesis: Option<Hypothesis>,
    pub n_calls: Option<f64>,
    pub total_cost_log10: Option<f64>,
    pub status: Feasibility,
    /// Sizes in the database where the combination never reached 50%.
    pub never_succeeds: Vec<usize>,
    /// Both builders are implemented in this installation.
    pub executable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemCharacteristics {
    pub n: usize,
    pub density: f64,
    /// `edge_density`, `capacity_ratio` or `qubo_density`.
    pub density_measure: String,
    pub declared_class: Option<String>,
    pub matched_class: String,
    pub grid_density: f64,
    /// How the slice was chosen.
    pub matching: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub expression: String,
    pub log10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSummary {
    pub schema: String,
    pub records: usize,
    pub plan_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub schema: String,
    pub problem: ProblemCharacteristics,
    pub boundary: Boundary,
    pub entries: Vec<AssessmentEntry>,
    pub recommendation: Recommendation,
    pub database: DatabaseSummary,
}

fn entry_order(a: &AssessmentEntry, b: &AssessmentEntry) -> std::cmp::Ordering {
    let key = |e: &AssessmentEntry| (e.worst_case_log10.unwrap_or(f64::INFINITY), e.total_cost_log10.unwrap_or(f64::INFINITY));
    let (wa, ca) = key(a);
    let (wb, cb) = key(b);
    wa.total_cmp(&wb)
        .then(ca.total_cmp(&cb))
        .then_with(|| (&a.vqa, &a.optimizer).cmp(&(&b.vqa, &b.optimizer)))
}

/// Lowest worst-case shot count among feasible entries; ties by total cost,
/// then by name.
pub fn recommend(entries: &[AssessmentEntry]) -> Recommendation {
    match entries.iter().filter(|e| e.status == Feasibility::Feasible).min_by(|a, b| entry_order(a, b)) {
        Some(e) => Recommendation::Combination {
            vqa: e.vqa.clone(),
            optimizer: e.optimizer.clone(),
            worst_case_log10: e.worst_case_log10.unwrap_or(f64::INFINITY),
            total_cost_log10: e.total_cost_log10.unwrap_or(f64::INFINITY),
        },
        None => Recommendation::ClassicalFallback {
            reason: if entries.is_empty() {
                "no variational combination in the database slice".into()
            } else {
                "no variational combination beats brute-force enumeration".into()
            },
        },
    }
}

/// Size, density and matched database slice of a QUBO.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboAnalysis {
    pub characteristics: ProblemCharacteristics,
}

/// Characterizes `q` and picks the database slice. With a declared class
/// its own slice is used (raw `qubo` input maps to `random_qubo`); without
/// one the random-QUBO slice is matched on density. Densities snap to the
/// nearest grid point, ties to the lower one.
pub fn analyze_qubo(
    q: &QuboMatrix,
    declared_class: Option<&str>,
    capacity_ratio: Option<f64>,
    db: &ScalingDatabase,
) -> Result<QuboAnalysis, ScalabilityError> {
    let n = q.n();
    let mut notes = Vec::new();
    let (matched, density, measure) = match declared_class {
        Some("maxcut") => {
            let pairs = n * n.saturating_sub(1) / 2;
            let d = if pairs == 0 { 0.0 } else { q.nonzero_couplings() as f64 / pairs as f64 };
            ("maxcut", d, "edge_density")
        }
        Some("knapsack") => match capacity_ratio {
            Some(r) => ("knapsack", r, "capacity_ratio"),
            None => {
                notes.push("capacity ratio unavailable; QUBO density used".to_string());
                ("knapsack", q.density(), "qubo_density")
            }
        },
        Some("qubo") | Some("random_qubo") | None => ("random_qubo", q.density(), "qubo_density"),
        Some(other) => (other, q.density(), "qubo_density"),
    };
    if density.is_nan() || density <= 0.0 {
        return Err(ScalabilityError::EmptyDatabaseSlice {
            class: matched.into(),
            reason: "matrix has no nonzero entries (density 0)".into(),
        });
    }
    let grid = db.densities(matched);
    let grid_density = grid
        .iter()
        .copied()
        .min_by(|a, b| {
            let (da, dbb) = ((a - density).abs(), (b - density).abs());
            if (da - dbb).abs() <= GRID_TIE {
                a.total_cmp(b)
            } else {
                da.total_cmp(&dbb)
            }
        })
        .ok_or_else(|| ScalabilityError::EmptyDatabaseSlice {
            class: matched.into(),
            reason: "database has no records for this class".into(),
        })?;
    if (grid_density - density).abs() > GRID_TIE {
        notes.push(format!("{measure} {density:.4} matched to nearest grid point {grid_density}"));
    }
    let matching = if declared_class.is_some() {
        format!("declared class `{}`", declared_class.unwrap_or_default())
    } else {
        "automatic (size and density against the random-QUBO slice)".to_string()
    };
    Ok(QuboAnalysis {
        characteristics: ProblemCharacteristics {
            n,
            density,
            density_measure: measure.into(),
            declared_class: declared_class.map(String::from),
            matched_class: matched.into(),
            grid_density,
            matching,
            notes,
        },
    })
}

/// Shot estimates, statuses and the recommendation for every combination
/// in the matched slice. `combos` restricts the assessment to the listed
/// `(vqa, optimizer)` pairs.
pub fn assess(
    q: &QuboMatrix,
    declared_class: Option<&str>,
    capacity_ratio: Option<f64>,
    db: &ScalingDatabase,
    builders: &BuilderRegistry,
    combos: Option<&[(String, String)]>,
) -> Result<Assessment, ScalabilityError> {
    let analysis = analyze_qubo(q, declared_class, capacity_ratio, db)?;
    let ch = analysis.characteristics;
    let n = ch.n;
    let mut groups: BTreeMap<(String, String), Vec<&ScalingRecord>> = BTreeMap::new();
    for r in db.slice(&ch.matched_class, ch.grid_density) {
        if combos.is_some_and(|c| !c.iter().any(|(v, o)| *v == r.vqa && *o == r.optimizer)) {
            continue;
        }
        groups.entry((r.vqa.clone(), r.optimizer.clone())).or_default().push(r);
    }
    let available = |id: &str| builders.descriptor(id).is_ok_and(|d| d.available);
    let mut entries = Vec::new();
    for ((vqa, optimizer), mut records) in groups {
        records.sort_by_key(|r| r.hypothesis);
        let first = records[0];
        let estimates: Vec<ShotEstimate> = records
            .iter()
            .filter_map(|r| r.fit.as_ref().map(|f| estimate_shots(f, &r.kappa, n)))
            .collect();
        let n_calls = first.calls.as_ref().map(|c| c.calls(n as f64).ceil().max(1.0));
        let worst = worst_case(&estimates);
        let status = classify(&estimates, first.never_succeeds.len(), n, n_calls);
        let total = match (&worst, n_calls) {
            (Some((l, _, _)), Some(c)) => Some(l + c.log10()),
            _ => None,
        };
        entries.push(AssessmentEntry {
            executable: available(first.ansatz.builder_id()) && available(&optimizer),
            vqa,
            optimizer,
            ansatz: first.ansatz.clone(),
            optimizer_hyperparams: first.optimizer_hyperparams.clone(),
            budget: first.budget,
            estimates,
            worst_case: worst.as_ref().and_then(|w| w.1),
            worst_case_log10: worst.as_ref().map(|w| w.0).filter(|l| l.is_finite()),
            worst_hypothesis: worst.as_ref().map(|w| w.2),
            n_calls,
            total_cost_log10: total.filter(|t| t.is_finite()),
            status,
            never_succeeds: first.never_succeeds.clone(),
        });
    }
    // VQA groups ordered by their best entry, rows within a group by entry_order
    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entry_order(&entries[a], &entries[b]));
    for (rank, &i) in order.iter().enumerate() {
        best.entry(entries[i].vqa.clone()).or_insert(rank);
    }
    entries.sort_by(|a, b| best[&a.vqa].cmp(&best[&b.vqa]).then_with(|| entry_order(a, b)));
    let recommendation = recommend(&entries);
    Ok(Assessment {
        schema: ASSESSMENT_SCHEMA.into(),
        boundary: Boundary {
            expression: format!("2^{n}"),
            log10: n as f64 * std::f64::consts::LOG10_2,
        },
        problem: ch,
        entries,
        recommendation,
        database: db.summary(),
    })
}

/// `1.9x10^6`-style rendering of a base-10 logarithm.
pub fn format_log10(l: f64) -> String {
    if !l.is_finite() {
        return "inf".into();
    }
    let mut e = l.floor();
    let mut m = 10f64.powf(l - e);
    if (m * 10.0).round() >= 100.0 {
        m /= 10.0;
        e += 1.0;
    }
    format!("{m:.1}x10^{e}")
}

impl Assessment {
    /// Worst-case table: one row per combination, grouped by VQA.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "n = {}, {} = {:.3} ({}, grid {})",
            self.problem.n, self.problem.density_measure, self.problem.density, self.problem.matched_class, self.problem.grid_density
        );
        let _ = writeln!(out, "{:<14} {:<10} {:<14} Status", "VQA", "Optimizer", "n_shots");
        let mut last_vqa = "";
        for e in &self.entries {
            let vqa = if e.vqa == last_vqa {
                String::new()
            } else {
                format!("{} ({}={})", e.vqa, e.ansatz.depth_name(), e.ansatz.depth())
            };
            last_vqa = &e.vqa;
            let (shots, status) = match e.status {
                Feasibility::NotCharacterizable => ("n.c.".to_string(), "--"),
                s => (
                    e.worst_case_log10.map_or_else(|| "inf".into(), format_log10),
                    s.label(),
                ),
            };
            let _ = writeln!(out, "{vqa:<14} {:<10} {shots:<14} {status}", e.optimizer);
        }
        let _ = writeln!(out, "boundary {} = {}", self.boundary.expression, format_log10(self.boundary.log10));
        let _ = match &self.recommendation {
            Recommendation::Combination { vqa, optimizer, .. } => writeln!(out, "recommended: {vqa} + {optimizer}"),
            Recommendation::ClassicalFallback { reason } => writeln!(out, "recommended: classical solver ({reason})"),
        };
        out
    }
}

/// The shipped basic tree, used as the skeleton of recommended configs.
pub fn basic_tree_config() -> TreeConfig {
    TreeConfig::from_yaml(include_str!("../../../../configs/basic_tree.yaml")).expect("shipped basic tree parses")
}

/// Path fixing a VQA run at the database-benchmark settings of `entry`.
pub fn path_for_entry(entry: &AssessmentEntry, backend: &str) -> PathSpec {
    let mut path = PathSpec::new()
        .with("algorithm", entry.vqa.clone())
        .with("depth", entry.ansatz.depth());
    for (k, v) in entry.ansatz.hyperparams() {
        if k != entry.ansatz.depth_name() {
            path.0.insert(format!("ansatz.{k}"), v);
        }
    }
    if !matches!(entry.ansatz, AnsatzSpec::LrQaoa { .. }) {
        path.0.insert("optimizer".into(), entry.optimizer.clone().into());
        for (k, v) in &entry.optimizer_hyperparams {
            path.0.insert(format!("optimizer.{}.{k}", entry.optimizer), v.clone());
        }
    }
    if let Some(s) = entry.worst_case {
        path.0.insert("shots".into(), Value::from(s as u64));
    }
    path.0.insert("budget".into(), entry.budget.into());
    path.0.insert("backend".into(), backend.into());
    path
}

/// Tree and path realizing the assessment on this installation. A
/// recommended combination whose builders are not implemented here is
/// replaced by the best executable feasible one; problems larger than
/// every backend go to the classical solver.
pub fn recommended_config(assessment: &Assessment, max_qubits: usize) -> RecommendedConfig {
    let mut notes = Vec::new();
    let classical = |notes: Vec<String>| RecommendedConfig {
        tree: basic_tree_config(),
        path: PathSpec::new().with("algorithm", "classical"),
        notes,
    };
    if let Recommendation::ClassicalFallback { reason } = &assessment.recommendation {
        notes.push(format!("classical solver: {reason}"));
        return classical(notes);
    }
    if assessment.problem.n > max_qubits {
        notes.push(format!(
            "recommended combination needs {} qubits; available backends provide {max_qubits}; classical solver selected",
            assessment.problem.n
        ));
        return classical(notes);
    }
    let mut feasible: Vec<&AssessmentEntry> =
        assessment.entries.iter().filter(|e| e.status == Feasibility::Feasible).collect();
    feasible.sort_by(|a, b| entry_order(a, b));
    if let Some(top) = feasible.first().filter(|e| !e.executable) {
        notes.push(format!("{} + {} is not implemented in this installation", top.vqa, top.optimizer));
    }
    match feasible.into_iter().find(|e| e.executable) {
        Some(e) => {
            if !notes.is_empty() {
                notes.push(format!("using {} + {} instead", e.vqa, e.optimizer));
            }
            RecommendedConfig {
                tree: basic_tree_config(),
                path: path_for_entry(e, LocalSimulator::ID),
                notes,
            }
        }
        None => {
            notes.push("no executable feasible combination; classical solver selected".into());
            classical(notes)
        }
    }
}

/// Writes `scalability_assessment.json` and `recommended_config.yaml`.
pub fn write_outputs(assessment: &Assessment, dir: &Path, max_qubits: usize) -> Result<(PathBuf, PathBuf), ScalabilityError> {
    let io = |p: &Path, e: std::io::Error| ScalabilityError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let json_path = dir.join(ASSESSMENT_FILE);
    let text = serde_json::to_string_pretty(assessment).expect("assessment serializes");
    std::fs::write(&json_path, text + "\n").map_err(|e| io(&json_path, e))?;
    let yaml_path = dir.join(RECOMMENDED_CONFIG_FILE);
    std::fs::write(&yaml_path, recommended_config(assessment, max_qubits).to_yaml()).map_err(|e| io(&yaml_path, e))?;
    Ok((json_path, yaml_path))
}
