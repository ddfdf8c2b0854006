use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    Asker, Delta, Direction, InterpretContext, Node, NodeArgs, NodeConfig, NodeContext, NodeContract, NodeError,
    NodeRegistry, PathSpec, ProblemData, ProvenanceEntry, Services, TreeConfig, TreeError, PROBLEM_INSTANCE_KEY,
};
use crate::problem::ProblemInstance;
use crate::query::{resolve, AnswerSource, Automation, Query, QueryError};

/// Root-to-leaf paths beyond this count are not enumerated.
const MAX_VALIDATED_PATHS: usize = 100_000;
const ENGINE: &str = "engine";

struct TreeNode {
    config: NodeConfig,
    contract: NodeContract,
    node: Arc<dyn Node>,
}

/// An instantiated, immutable node graph.
pub struct DecisionTree {
    config: TreeConfig,
    nodes: BTreeMap<String, TreeNode>,
    services: Services,
}

impl fmt::Debug for DecisionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecisionTree")
            .field("root", &self.config.root)
            .field("nodes", &self.nodes.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PathViolation {
    /// `node` requires `key`, which no ancestor on `path` creates.
    MissingKey { path: Vec<String>, node: String, key: String },
    Cycle { cycle: Vec<String> },
}

impl fmt::Display for PathViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathViolation::MissingKey { path, node, key } => {
                write!(f, "`{key}` unavailable at `{node}` on path {}", path.join(" -> "))
            }
            PathViolation::Cycle { cycle } => write!(f, "cycle {}", cycle.join(" -> ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub paths_checked: usize,
    pub violations: Vec<PathViolation>,
    pub warnings: Vec<String>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            write!(f, "valid ({} paths checked)", self.paths_checked)?;
        } else {
            write!(f, "invalid: {} violation(s)", self.violations.len())?;
            for v in &self.violations {
                write!(f, "\n  error: {v}")?;
            }
        }
        for w in &self.warnings {
            write!(f, "\n  warning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { node: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub node: String,
    pub id: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub status: RunStatus,
    pub visited_path: Vec<String>,
    /// Order of the backward pass; the reverse of `visited_path`.
    pub backward_order: Vec<String>,
    pub result_entries: BTreeMap<String, Value>,
    pub queries: Vec<QueryRecord>,
    pub notes: Vec<String>,
    pub problem_data: BTreeMap<String, Value>,
    pub provenance: Vec<ProvenanceEntry>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunResult {
    /// Everything except the run id and timestamps.
    pub fn content(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("run result serializes");
        if let Value::Object(m) = &mut v {
            for k in ["run_id", "started_at", "finished_at"] {
                m.remove(k);
            }
        }
        v
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Per-run settings.
#[derive(Default)]
pub struct RunOptions<'s> {
    /// Overrides the tree's automation flag.
    pub mode: Option<Automation>,
    /// Answers queries in manual mode.
    pub source: Option<&'s mut dyn AnswerSource>,
    pub run_id: Option<String>,
    /// Overrides the tree's log directory.
    pub log_dir: Option<PathBuf>,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn fresh_run_id() -> String {
    let n = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
    format!("run-{}-{n}", chrono::Utc::now().format("%Y%m%dT%H%M%S%.6f"))
}

struct RunAsker<'p, 's> {
    path: &'p PathSpec,
    mode: Automation,
    source: Option<&'s mut dyn AnswerSource>,
    queries: Vec<QueryRecord>,
    notes: Vec<String>,
}

impl Asker for RunAsker<'_, '_> {
    fn ask(&mut self, node: &str, query: Query) -> Result<Value, QueryError> {
        let value = match self.path.get(&query.id) {
            Some(v) => {
                let value = query.accept(v).map_err(|reason| QueryError::Rejected {
                    id: query.id.clone(),
                    reason,
                })?;
                if let Some(r) = query.recommendation.as_ref().filter(|r| r.value != value) {
                    let msg = format!(
                        "path sets `{}` = {value}, overriding recommendation {} ({})",
                        query.id, r.value, r.rationale
                    );
                    log::info!("{msg}");
                    self.notes.push(msg);
                }
                value
            }
            None => resolve(&query, self.mode, self.source.as_deref_mut())?,
        };
        self.queries.push(QueryRecord {
            node: node.into(),
            id: query.id,
            value: value.clone(),
        });
        Ok(value)
    }

    fn path_value(&self, key: &str) -> Option<&Value> {
        self.path.get(key)
    }

    fn note(&mut self, message: String) {
        self.notes.push(message);
    }

    fn mode(&self) -> Automation {
        self.mode
    }
}

impl DecisionTree {
    /// Instantiates every node of `config` from the namespaces it lists.
    pub fn build(config: TreeConfig, registry: &NodeRegistry, services: Services) -> Result<Self, TreeError> {
        let mut nodes = BTreeMap::new();
        for nc in &config.nodes {
            if nodes.contains_key(&nc.name) {
                return Err(TreeError::DuplicateName(nc.name.clone()));
            }
            let factory = registry
                .lookup(&config.node_sources, &nc.node_type)
                .ok_or_else(|| TreeError::UnknownNodeType {
                    name: nc.name.clone(),
                    node_type: nc.node_type.clone(),
                    sources: config.node_sources.clone(),
                })?;
            let args = NodeArgs {
                name: nc.name.clone(),
                init_args: nc.init_args.clone(),
            };
            let node = factory(&args, &services).map_err(|reason| TreeError::NodeConstruction {
                name: nc.name.clone(),
                reason,
            })?;
            nodes.insert(
                nc.name.clone(),
                TreeNode {
                    config: nc.clone(),
                    contract: node.contract(),
                    node,
                },
            );
        }
        if !nodes.contains_key(&config.root) {
            return Err(TreeError::MissingRoot(config.root.clone()));
        }
        for nc in &config.nodes {
            if let Some(c) = nc.children.iter().find(|c| !nodes.contains_key(*c)) {
                return Err(TreeError::UnknownNode(c.clone()));
            }
            let mut seen = BTreeSet::new();
            if let Some(c) = nc.children.iter().find(|c| !seen.insert(*c)) {
                return Err(TreeError::Config(format!("`{}` lists child `{c}` twice", nc.name)));
            }
        }
        Ok(DecisionTree { config, nodes, services })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn root(&self) -> &str {
        &self.config.root
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn children(&self, name: &str) -> Option<&[String]> {
        self.nodes.get(name).map(|n| n.config.children.as_slice())
    }

    pub fn contract(&self, name: &str) -> Option<&NodeContract> {
        self.nodes.get(name).map(|n| &n.contract)
    }

    /// Node graph with contracts, for rendering.
    pub fn describe(&self) -> Value {
        let nodes: Vec<Value> = self
            .config
            .nodes
            .iter()
            .map(|nc| {
                let c = &self.nodes[&nc.name].contract;
                json!({
                    "name": nc.name,
                    "type": nc.node_type,
                    "children": nc.children,
                    "requires": c.requires,
                    "creates": c.creates,
                    "path_keys": c.path_keys,
                })
            })
            .collect();
        let edges: Vec<Value> = self
            .config
            .nodes
            .iter()
            .flat_map(|nc| nc.children.iter().map(move |c| json!({"from": nc.name, "to": c})))
            .collect();
        json!({ "root": self.config.root, "nodes": nodes, "edges": edges, "flags": self.config.flags })
    }

    pub fn request_info(&self, topic: &str) -> Result<Value, TreeError> {
        self.services.request_info(topic)
    }

    /// Checks every root-to-leaf path: each node's requirements must be
    /// created by an ancestor or be the injected instance key.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut warnings = Vec::new();
        let mut paths = 0usize;
        let mut truncated = false;
        let mut reached = BTreeSet::new();
        let mut cycles = BTreeSet::new();

        // Depth-first walk over paths; each frame holds the next child index.
        let root = self.config.root.clone();
        let mut stack: Vec<(String, usize)> = vec![(root.clone(), 0)];
        let mut avail_stack: Vec<BTreeSet<String>> = vec![BTreeSet::from([PROBLEM_INSTANCE_KEY.to_string()])];
        self.enter(&root, &stack, &mut avail_stack, &mut violations);
        reached.insert(root);
        while let Some((name, idx)) = stack.last().cloned() {
            let children = &self.nodes[&name].config.children;
            if idx == 0 && children.is_empty() {
                paths += 1;
                if paths >= MAX_VALIDATED_PATHS {
                    truncated = true;
                    break;
                }
            }
            if idx >= children.len() {
                stack.pop();
                avail_stack.pop();
                continue;
            }
            stack.last_mut().expect("non-empty").1 += 1;
            let child = children[idx].clone();
            if let Some(pos) = stack.iter().position(|(n, _)| *n == child) {
                let mut cycle: Vec<String> = stack[pos..].iter().map(|(n, _)| n.clone()).collect();
                cycle.push(child);
                if cycles.insert(cycle.clone()) {
                    violations.push(PathViolation::Cycle { cycle });
                }
                continue;
            }
            reached.insert(child.clone());
            stack.push((child.clone(), 0));
            self.enter(&child, &stack, &mut avail_stack, &mut violations);
        }

        // The same node missing the same key on many paths is reported once
        // per distinct path; deduplicate exact repeats only.
        let mut seen = BTreeSet::new();
        violations.retain(|v| seen.insert(v.clone()));

        let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for nc in &self.config.nodes {
            if reached.contains(&nc.name) {
                for c in &nc.children {
                    parents.entry(c.as_str()).or_default().push(nc.name.as_str());
                }
            }
        }
        for (node, ps) in parents {
            if ps.len() > 1 {
                warnings.push(format!(
                    "`{node}` is reached from {}; it executes once per run (first arrival)",
                    ps.join(", ")
                ));
            }
        }
        for name in self.nodes.keys() {
            if !reached.contains(name) {
                warnings.push(format!("`{name}` is unreachable from the root"));
            }
        }
        if truncated {
            warnings.push(format!("path enumeration stopped after {MAX_VALIDATED_PATHS} paths"));
        }
        ValidationReport {
            valid: violations.is_empty(),
            paths_checked: paths,
            violations,
            warnings,
        }
    }

    fn enter(
        &self,
        name: &str,
        stack: &[(String, usize)],
        avail_stack: &mut Vec<BTreeSet<String>>,
        violations: &mut Vec<PathViolation>,
    ) {
        let contract = &self.nodes[name].contract;
        let mut avail = avail_stack.last().cloned().unwrap_or_default();
        for key in &contract.requires {
            if !avail.contains(key) {
                violations.push(PathViolation::MissingKey {
                    path: stack.iter().map(|(n, _)| n.clone()).collect(),
                    node: name.into(),
                    key: key.clone(),
                });
            }
        }
        avail.extend(contract.creates.iter().cloned());
        avail_stack.push(avail);
    }

    /// Rejects path keys that no node accepts.
    pub fn check_path(&self, path: &PathSpec) -> Result<(), TreeError> {
        for key in path.0.keys() {
            if !self.nodes.values().any(|n| n.contract.accepts_path_key(key)) {
                return Err(TreeError::UnknownPathKey(key.clone()));
            }
        }
        Ok(())
    }

    /// Runs a parsed instance.
    pub fn run_instance(
        &self,
        instance: &ProblemInstance,
        path: &PathSpec,
        options: RunOptions<'_>,
    ) -> Result<RunResult, TreeError> {
        self.run(instance.to_json(), path, options)
    }

    /// Forward pass from the root to a final node, choosing among children
    /// with `next_node`, then `interpret_result` in exact reverse order.
    /// A node failure aborts the run and skips the backward pass.
    pub fn run(&self, instance: Value, path: &PathSpec, options: RunOptions<'_>) -> Result<RunResult, TreeError> {
        let report = self.validate();
        if !report.valid {
            return Err(TreeError::InvalidTree(report.to_string()));
        }
        self.check_path(path)?;
        let run_id = options.run_id.unwrap_or_else(fresh_run_id);
        let started_at = chrono::Utc::now().to_rfc3339();
        let mut asker = RunAsker {
            path,
            mode: options.mode.unwrap_or(self.config.flags.automation),
            source: options.source,
            queries: Vec::new(),
            notes: Vec::new(),
        };
        let mut events: Vec<Value> = Vec::new();
        let mut data = ProblemData::new();
        data.record_modification(
            ENGINE,
            Delta::from([(PROBLEM_INSTANCE_KEY.to_string(), instance)]),
            &BTreeSet::from([PROBLEM_INSTANCE_KEY.to_string()]),
            Direction::Forward,
        )?;

        let mut visited: Vec<String> = Vec::new();
        let mut status = RunStatus::Completed;
        let mut current = self.config.root.clone();
        loop {
            let tn = &self.nodes[&current];
            match self.step(&current, tn, &mut data, &mut asker) {
                Ok(()) => {}
                Err(e) => {
                    status = RunStatus::Aborted {
                        node: current.clone(),
                        reason: e.to_string(),
                    };
                    events.push(json!({"event": "abort", "node": current, "reason": e.to_string()}));
                    break;
                }
            }
            visited.push(current.clone());
            events.push(json!({"event": "execute", "node": current}));
            let children = &tn.config.children;
            let next = match children.len() {
                0 => break,
                1 => Ok(children[0].clone()),
                _ => {
                    let ctx = NodeContext {
                        node: &current,
                        data: &data,
                        services: &self.services,
                        asker: &mut asker,
                    };
                    tn.node.next_node(&ctx, children).and_then(|c| {
                        if children.contains(&c) {
                            Ok(c)
                        } else {
                            Err(NodeError::NoViableChild(format!("`{c}` is not a child of `{current}`")))
                        }
                    })
                }
            };
            match next {
                Ok(c) if visited.contains(&c) => {
                    status = RunStatus::Aborted {
                        node: current.clone(),
                        reason: format!("`{c}` already executed in this run"),
                    };
                    break;
                }
                Ok(c) => current = c,
                Err(e) => {
                    status = RunStatus::Aborted {
                        node: current.clone(),
                        reason: e.to_string(),
                    };
                    events.push(json!({"event": "abort", "node": current, "reason": e.to_string()}));
                    break;
                }
            }
        }

        let mut results = BTreeMap::new();
        let mut backward = Vec::new();
        if status == RunStatus::Completed {
            for name in visited.iter().rev() {
                let tn = &self.nodes[name];
                let ctx = InterpretContext {
                    node: name,
                    data: &data,
                    results: &results,
                    services: &self.services,
                };
                match tn.node.interpret_result(&ctx) {
                    Ok(delta) => {
                        data.append_provenance(name, delta.keys().cloned().collect(), Direction::Backward);
                        results.extend(delta);
                        backward.push(name.clone());
                        events.push(json!({"event": "interpret", "node": name}));
                    }
                    Err(e) => {
                        status = RunStatus::Aborted {
                            node: name.clone(),
                            reason: e.to_string(),
                        };
                        events.push(json!({"event": "abort", "node": name, "reason": e.to_string()}));
                        break;
                    }
                }
            }
        }

        let result = RunResult {
            run_id,
            status,
            visited_path: visited,
            backward_order: backward,
            result_entries: results,
            queries: asker.queries,
            notes: asker.notes,
            provenance: data.provenance().to_vec(),
            problem_data: data.entries().clone(),
            started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        };
        if let Some(dir) = options.log_dir.as_ref().or(self.config.flags.log_dir.as_ref()) {
            write_logs(dir, &result, &events)?;
        }
        Ok(result)
    }

    fn step(&self, name: &str, tn: &TreeNode, data: &mut ProblemData, asker: &mut RunAsker<'_, '_>) -> Result<(), NodeError> {
        if let Some(k) = tn.contract.requires.iter().find(|k| !data.contains(k)) {
            return Err(NodeError::MissingKey(k.clone()));
        }
        let delta = {
            let mut ctx = NodeContext {
                node: name,
                data,
                services: &self.services,
                asker,
            };
            tn.node.execute(&mut ctx)?
        };
        data.record_modification(name, delta, &tn.contract.creates, Direction::Forward)?;
        if let Some(k) = tn.contract.creates.iter().find(|k| !data.contains(k)) {
            return Err(NodeError::Other(format!("declared key `{k}` was not produced")));
        }
        Ok(())
    }
}

impl ProblemData {
    pub(crate) fn append_provenance(&mut self, node: &str, keys: Vec<String>, direction: Direction) {
        self.provenance.push(ProvenanceEntry {
            node: node.into(),
            keys,
            direction,
        });
    }
}

fn write_logs(dir: &Path, result: &RunResult, events: &[Value]) -> Result<(), TreeError> {
    let io = |e: std::io::Error| TreeError::Io(format!("{}: {e}", dir.display()));
    let runs = dir.join("runs");
    std::fs::create_dir_all(&runs).map_err(io)?;
    let mut f = std::fs::File::create(runs.join(format!("{}.jsonl", result.run_id))).map_err(io)?;
    for e in events {
        writeln!(f, "{e}").map_err(io)?;
    }
    writeln!(f, "{}", json!({"event": "result", "result": result})).map_err(io)?;
    let mut persistent = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("decitree.log"))
        .map_err(io)?;
    writeln!(
        persistent,
        "{}",
        json!({
            "run_id": result.run_id,
            "started_at": result.started_at,
            "finished_at": result.finished_at,
            "status": result.status,
            "visited_path": result.visited_path,
        })
    )
    .map_err(io)?;
    Ok(())
}
