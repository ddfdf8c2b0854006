//! Decision trees: the shared problem-data store, the node contract, DAG
//! construction and validation, and forward/backward execution.

mod config;
mod engine;
pub mod nodes;
pub mod stub;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use config::{NodeConfig, RecommendedConfig, TreeConfig, TreeFlags};
pub use engine::{
    DecisionTree, PathViolation, QueryRecord, RunOptions, RunResult, RunStatus, ValidationReport,
};

use crate::backend::{BackendError, BackendRegistry};
use crate::builders::{BuildError, BuilderKind, BuilderRegistry};
use crate::problem::{ProblemError, ProblemRegistry};
use crate::query::{Automation, Query, QueryError};
use crate::scalability::ScalingDatabase;
use crate::vqa::VqaError;

/// The one key the engine injects before the root executes.
pub const PROBLEM_INSTANCE_KEY: &str = "problem_instance";
/// Validated as a square matrix on every write.
pub const QUBO_MATRIX_KEY: &str = "qubo_matrix";
/// Namespace of the node library shipped with this crate.
pub const BUILTIN_NAMESPACE: &str = "decitree.nodes";

/// Keys and values written by one node.
pub type Delta = BTreeMap<String, Value>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("tree config: {0}")]
    Config(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{name}`: type `{node_type}` not found in namespaces {sources:?}")]
    UnknownNodeType {
        name: String,
        node_type: String,
        sources: Vec<String>,
    },
    #[error("node `{name}` could not be constructed: {reason}")]
    NodeConstruction { name: String, reason: String },
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("root `{0}` is not a declared node")]
    MissingRoot(String),
    #[error("tree failed validation: {0}")]
    InvalidTree(String),
    #[error("path key `{0}` is not declared by any node")]
    UnknownPathKey(String),
    #[error("node `{node}` wrote undeclared key `{key}`")]
    UndeclaredWrite { node: String, key: String },
    #[error("`{key}` must be a square two-dimensional array: {reason}")]
    NotSquare { key: String, reason: String },
    #[error("unknown info topic `{0}`")]
    UnknownTopic(String),
    #[error("log output: {0}")]
    Io(String),
}

/// Failure inside a node; aborts the run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("missing problem-data key `{0}`")]
    MissingKey(String),
    #[error("entry `{key}` has an unexpected shape: {reason}")]
    BadEntry { key: String, reason: String },
    #[error("no viable child: {0}")]
    NoViableChild(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Vqa(#[from] VqaError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{0}")]
    Other(String),
}

/// Data-flow declaration of a node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeContract {
    pub requires: BTreeSet<String>,
    pub creates: BTreeSet<String>,
    /// Accepted path-specification keys. A key ending in `.*` accepts every
    /// key with that prefix.
    pub path_keys: BTreeSet<String>,
}

impl NodeContract {
    pub fn new<'a>(
        requires: impl IntoIterator<Item = &'a str>,
        creates: impl IntoIterator<Item = &'a str>,
        path_keys: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let set = |it: &mut dyn Iterator<Item = &'a str>| it.map(String::from).collect();
        NodeContract {
            requires: set(&mut requires.into_iter()),
            creates: set(&mut creates.into_iter()),
            path_keys: set(&mut path_keys.into_iter()),
        }
    }

    pub fn accepts_path_key(&self, key: &str) -> bool {
        self.path_keys.iter().any(|k| match k.strip_suffix('*') {
            Some(prefix) => key.starts_with(prefix) && key.len() > prefix.len(),
            None => k == key,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub node: String,
    pub keys: Vec<String>,
    pub direction: Direction,
}

/// Keyed store passed along the forward path. Every write is attributed to
/// a node in an append-only provenance log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemData {
    entries: BTreeMap<String, Value>,
    provenance: Vec<ProvenanceEntry>,
}

impl ProblemData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, Value> {
        &self.entries
    }

    pub fn provenance(&self) -> &[ProvenanceEntry] {
        &self.provenance
    }

    pub fn require(&self, key: &str) -> Result<&Value, NodeError> {
        self.get(key).ok_or_else(|| NodeError::MissingKey(key.into()))
    }

    pub fn get_as<T: DeserializeOwned>(&self, key: &str) -> Result<T, NodeError> {
        serde_json::from_value(self.require(key)?.clone()).map_err(|e| NodeError::BadEntry {
            key: key.into(),
            reason: e.to_string(),
        })
    }

    /// Applies `delta` on behalf of `node`. Forward writes must be declared
    /// in `creates`; the whole delta is rejected otherwise.
    pub fn record_modification(
        &mut self,
        node: &str,
        delta: Delta,
        creates: &BTreeSet<String>,
        direction: Direction,
    ) -> Result<(), TreeError> {
        if direction == Direction::Forward {
            if let Some(key) = delta.keys().find(|k| !creates.contains(*k)) {
                return Err(TreeError::UndeclaredWrite {
                    node: node.into(),
                    key: key.clone(),
                });
            }
        }
        if let Some(q) = delta.get(QUBO_MATRIX_KEY) {
            check_square(q)?;
        }
        let keys: Vec<String> = delta.keys().cloned().collect();
        self.entries.extend(delta);
        self.provenance.push(ProvenanceEntry {
            node: node.into(),
            keys,
            direction,
        });
        Ok(())
    }
}

fn check_square(v: &Value) -> Result<(), TreeError> {
    let bad = |reason: &str| TreeError::NotSquare {
        key: QUBO_MATRIX_KEY.into(),
        reason: reason.into(),
    };
    let rows = v.as_array().ok_or_else(|| bad("not an array"))?;
    if rows.is_empty() {
        return Err(bad("empty matrix"));
    }
    for r in rows {
        let r = r.as_array().ok_or_else(|| bad("row is not an array"))?;
        if r.len() != rows.len() {
            return Err(bad("row length differs from row count"));
        }
        if r.iter().any(|x| !x.as_f64().is_some_and(f64::is_finite)) {
            return Err(bad("entries must be finite numbers"));
        }
    }
    Ok(())
}

/// User-supplied overrides steering the route through the tree.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathSpec(pub BTreeMap<String, Value>);

impl PathSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    pub fn from_yaml(text: &str) -> Result<Self, TreeError> {
        if text.trim().is_empty() {
            return Ok(Self::new());
        }
        serde_yaml::from_str(text).map_err(|e| TreeError::Config(format!("path file: {e}")))
    }
}

/// Shared facilities available to nodes.
#[derive(Clone)]
pub struct Services {
    pub backends: Arc<BackendRegistry>,
    pub builders: Arc<BuilderRegistry>,
    pub problems: Arc<ProblemRegistry>,
    pub database: Option<Arc<ScalingDatabase>>,
}

impl fmt::Debug for Services {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Services")
            .field("backends", &self.backends.list_backends().len())
            .field("database", &self.database.as_ref().map(|d| d.records.len()))
            .finish()
    }
}

impl Default for Services {
    fn default() -> Self {
        Services {
            backends: Arc::new(BackendRegistry::with_local_simulator()),
            builders: Arc::new(BuilderRegistry::default()),
            problems: Arc::new(ProblemRegistry::default()),
            database: None,
        }
    }
}

impl Services {
    /// Forwards runtime information to nodes.
    pub fn request_info(&self, topic: &str) -> Result<Value, TreeError> {
        match topic {
            "backends" => Ok(serde_json::to_value(self.backends.list_backends()).expect("records serialize")),
            "builders" => Ok(serde_json::json!({
                "optimizer": self.builders.list_builders(BuilderKind::Optimizer),
                "ansatz": self.builders.list_builders(BuilderKind::Ansatz),
            })),
            "problem_classes" => Ok(Value::from(self.problems.classes().collect::<Vec<_>>())),
            other => Err(TreeError::UnknownTopic(other.into())),
        }
    }
}

/// Query resolution as seen from inside a node.
pub(crate) trait Asker {
    fn ask(&mut self, node: &str, query: Query) -> Result<Value, QueryError>;
    fn path_value(&self, key: &str) -> Option<&Value>;
    fn note(&mut self, message: String);
    fn mode(&self) -> Automation;
}

/// Forward-pass view handed to [`Node::execute`] and [`Node::next_node`].
pub struct NodeContext<'a> {
    pub node: &'a str,
    pub data: &'a ProblemData,
    pub services: &'a Services,
    asker: &'a mut dyn Asker,
}

impl NodeContext<'_> {
    /// Resolves `query`. A path assignment under the query id wins over
    /// answers, recommendations and defaults; disagreement with a
    /// recommendation is logged.
    pub fn ask(&mut self, query: Query) -> Result<Value, NodeError> {
        Ok(self.asker.ask(self.node, query)?)
    }

    pub fn path_value(&self, key: &str) -> Option<&Value> {
        self.asker.path_value(key)
    }

    pub fn mode(&self) -> Automation {
        self.asker.mode()
    }

    /// Adds a line to the run's notes.
    pub fn note(&mut self, message: String) {
        self.asker.note(message);
    }

    pub fn request_info(&self, topic: &str) -> Result<Value, TreeError> {
        self.services.request_info(topic)
    }
}

/// Backward-pass view handed to [`Node::interpret_result`].
pub struct InterpretContext<'a> {
    pub node: &'a str,
    pub data: &'a ProblemData,
    /// Entries produced so far by nodes later on the path.
    pub results: &'a BTreeMap<String, Value>,
    pub services: &'a Services,
}

/// A computation step in a decision tree.
pub trait Node: Send + Sync {
    fn contract(&self) -> NodeContract;

    /// Forward pass. Returns the entries to write; the engine applies them.
    fn execute(&self, ctx: &mut NodeContext<'_>) -> Result<Delta, NodeError>;

    /// Picks one of `children`; called only when there are several.
    fn next_node(&self, ctx: &NodeContext<'_>, children: &[String]) -> Result<String, NodeError> {
        let _ = (ctx, children);
        Err(NodeError::NoViableChild("node does not branch".into()))
    }

    /// Backward pass. Returns result entries.
    fn interpret_result(&self, ctx: &InterpretContext<'_>) -> Result<Delta, NodeError> {
        let _ = ctx;
        Ok(Delta::new())
    }
}

/// Constructor arguments for a node.
#[derive(Debug, Clone, Default)]
pub struct NodeArgs {
    pub name: String,
    pub init_args: serde_json::Map<String, Value>,
}

impl NodeArgs {
    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, String> {
        self.init_args
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| format!("init_args.{key}: {e}")))
            .transpose()
    }
}

pub type NodeFactory = Arc<dyn Fn(&NodeArgs, &Services) -> Result<Arc<dyn Node>, String> + Send + Sync>;

/// Node types by namespace.
#[derive(Clone, Default)]
pub struct NodeRegistry {
    namespaces: BTreeMap<String, BTreeMap<String, NodeFactory>>,
}

impl fmt::Debug for NodeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m: BTreeMap<&String, Vec<&String>> = self.namespaces.iter().map(|(k, v)| (k, v.keys().collect())).collect();
        f.debug_map().entries(m).finish()
    }
}

impl NodeRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped node library plus the stub namespace.
    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        nodes::register(&mut r);
        stub::register(&mut r);
        r
    }

    pub fn register(&mut self, namespace: &str, node_type: &str, factory: NodeFactory) {
        self.namespaces
            .entry(namespace.into())
            .or_default()
            .insert(node_type.into(), factory);
    }

    pub fn lookup(&self, sources: &[String], node_type: &str) -> Option<&NodeFactory> {
        sources
            .iter()
            .filter_map(|ns| self.namespaces.get(ns))
            .find_map(|m| m.get(node_type))
    }

    pub fn node_types(&self, namespace: &str) -> Vec<String> {
        self.namespaces.get(namespace).map_or_else(Vec::new, |m| m.keys().cloned().collect())
    }
}
