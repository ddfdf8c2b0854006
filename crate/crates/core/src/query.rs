//! Decision points: queries resolved automatically from defaults and
//! recommendations, or answered by a person through an [`AnswerSource`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, Write};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Invalid answers are re-prompted at most this many times.
pub const RETRY_CAP: usize = 3;
pub const DEFAULT_ANSWER_TIMEOUT: Duration = Duration::from_secs(15 * 60);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query `{0}` has neither a recommendation nor a default")]
    NoDefaultAvailable(String),
    #[error("no answer to query `{0}` arrived in time")]
    AnswerTimeout(String),
    #[error("query `{id}`: retries exhausted, last error: {last}")]
    RetriesExhausted { id: String, last: String },
    #[error("query `{0}` cannot be answered: no answer source")]
    UnanswerableQuery(String),
    #[error("malformed query `{id}`: {reason}")]
    InvalidQuery { id: String, reason: String },
    #[error("query tree: {0}")]
    InvalidTree(String),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("query `{0}` was already answered")]
    AlreadyAnswered(String),
    #[error("rejected answer to `{id}`: {reason}")]
    Rejected { id: String, reason: String },
    #[error("answer source failed: {0}")]
    Source(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Integer,
    Real,
    FilePath,
    SingleChoice,
    MultiValue,
}

/// Constraint an answer must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Validator {
    Any,
    Range {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default)]
        min_exclusive: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    /// Answer (or each element, for multi-value queries) is one of the options.
    OptionMember,
    Pattern { regex: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub value: Value,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub kind: QueryKind,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default)]
    pub default: Option<Value>,
    #[serde(default)]
    pub recommendation: Option<Recommendation>,
    pub validator: Validator,
}

impl Query {
    /// Builds a query and checks that default and recommendation pass the
    /// validator.
    pub fn new(
        id: &str,
        kind: QueryKind,
        prompt: &str,
        options: Vec<String>,
        default: Option<Value>,
        recommendation: Option<Recommendation>,
        validator: Validator,
    ) -> Result<Self, QueryError> {
        let q = Query {
            id: id.into(),
            kind,
            prompt: prompt.into(),
            options,
            default,
            recommendation,
            validator,
        };
        q.check_invariants()?;
        Ok(q)
    }

    pub fn single_choice(id: &str, prompt: &str, options: Vec<String>, default: Option<&str>) -> Result<Self, QueryError> {
        Self::new(
            id,
            QueryKind::SingleChoice,
            prompt,
            options,
            default.map(Value::from),
            None,
            Validator::OptionMember,
        )
    }

    pub fn with_recommendation(mut self, value: Value, rationale: &str) -> Result<Self, QueryError> {
        self.recommendation = Some(Recommendation {
            value,
            rationale: rationale.into(),
        });
        self.check_invariants()?;
        Ok(self)
    }

    fn check_invariants(&self) -> Result<(), QueryError> {
        let bad = |reason: String| QueryError::InvalidQuery {
            id: self.id.clone(),
            reason,
        };
        if matches!(self.kind, QueryKind::SingleChoice) && self.options.is_empty() {
            return Err(bad("single-choice query without options".into()));
        }
        if let Validator::Pattern { regex } = &self.validator {
            Regex::new(regex).map_err(|e| bad(e.to_string()))?;
        }
        if let Some(d) = &self.default {
            self.accept(d).map_err(|e| bad(format!("default: {e}")))?;
        }
        if let Some(r) = &self.recommendation {
            self.accept(&r.value).map_err(|e| bad(format!("recommendation: {e}")))?;
        }
        Ok(())
    }

    /// Normalizes a raw answer to the query's kind and applies the
    /// validator. Textual answers are parsed, so `"7"` answers an integer
    /// query with 7.
    pub fn accept(&self, raw: &Value) -> Result<Value, String> {
        let value = self.coerce(raw)?;
        match &self.validator {
            Validator::Any => {}
            Validator::Range {
                min,
                min_exclusive,
                max,
            } => {
                let v = value.as_f64().ok_or("range validator needs a number")?;
                if let Some(m) = *min {
                    if v < m || (*min_exclusive && v == m) {
                        return Err(format!("{v} is below the allowed minimum {m}"));
                    }
                }
                if let Some(m) = *max {
                    if v > m {
                        return Err(format!("{v} exceeds the allowed maximum {m}"));
                    }
                }
            }
            Validator::OptionMember => {
                let items: Vec<&Value> = match &value {
                    Value::Array(a) => a.iter().collect(),
                    v => vec![v],
                };
                for it in items {
                    let s = it.as_str().ok_or("option answers must be text")?;
                    if !self.options.iter().any(|o| o == s) {
                        return Err(format!("`{s}` is not one of {:?}", self.options));
                    }
                }
            }
            Validator::Pattern { regex } => {
                let re = Regex::new(regex).map_err(|e| e.to_string())?;
                let items: Vec<String> = match &value {
                    Value::Array(a) => a.iter().map(value_text).collect(),
                    v => vec![value_text(v)],
                };
                if let Some(s) = items.iter().find(|s| !re.is_match(s)) {
                    return Err(format!("`{s}` does not match `{regex}`"));
                }
            }
        }
        Ok(value)
    }

    fn coerce(&self, raw: &Value) -> Result<Value, String> {
        let text = raw.as_str().map(str::trim);
        match self.kind {
            QueryKind::Integer => {
                if let Some(i) = raw.as_i64() {
                    return Ok(Value::from(i));
                }
                if let Some(f) = raw.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < 9.0e15) {
                    return Ok(Value::from(f as i64));
                }
                text.and_then(|t| t.parse::<i64>().ok())
                    .map(Value::from)
                    .ok_or_else(|| format!("expected an integer, got {raw}"))
            }
            QueryKind::Real => raw
                .as_f64()
                .or_else(|| text.and_then(|t| t.parse::<f64>().ok()))
                .filter(|f| f.is_finite())
                .map(Value::from)
                .ok_or_else(|| format!("expected a finite number, got {raw}")),
            QueryKind::FilePath | QueryKind::SingleChoice => match text {
                Some(t) if !t.is_empty() => Ok(Value::from(t)),
                _ => Err(format!("expected text, got {raw}")),
            },
            QueryKind::MultiValue => match raw {
                Value::Array(a) if !a.is_empty() => Ok(raw.clone()),
                Value::Array(_) => Err("expected at least one value".into()),
                Value::String(s) => {
                    let parts: Vec<Value> = s
                        .split(',')
                        .map(str::trim)
                        .filter(|p| !p.is_empty())
                        .map(Value::from)
                        .collect();
                    if parts.is_empty() {
                        Err("expected at least one value".into())
                    } else {
                        Ok(Value::Array(parts))
                    }
                }
                v => Ok(Value::Array(vec![v.clone()])),
            },
        }
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Automation {
    #[default]
    Automatic,
    Manual,
}

/// Supplies answers in manual mode.
pub trait AnswerSource: Send {
    /// `last_error` carries the validator message after a rejected answer.
    fn answer(&mut self, query: &Query, last_error: Option<&str>) -> Result<Value, QueryError>;
}

/// Resolves one query. Automatic mode takes the recommendation, then the
/// default. Manual mode asks `source`, re-prompting invalid answers up to
/// [`RETRY_CAP`] times.
pub fn resolve(query: &Query, mode: Automation, source: Option<&mut (dyn AnswerSource + '_)>) -> Result<Value, QueryError> {
    match mode {
        Automation::Automatic => query
            .recommendation
            .as_ref()
            .map(|r| r.value.clone())
            .or_else(|| query.default.clone())
            .ok_or_else(|| QueryError::NoDefaultAvailable(query.id.clone())),
        Automation::Manual => {
            let source = source.ok_or_else(|| QueryError::UnanswerableQuery(query.id.clone()))?;
            let mut last: Option<String> = None;
            for _ in 0..=RETRY_CAP {
                let raw = source.answer(query, last.as_deref())?;
                match query.accept(&raw) {
                    Ok(v) => return Ok(v),
                    Err(e) => last = Some(e),
                }
            }
            Err(QueryError::RetriesExhausted {
                id: query.id.clone(),
                last: last.unwrap_or_default(),
            })
        }
    }
}

/// Condition on a parent answer selecting a follow-up query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "when", rename_all = "snake_case")]
pub enum AnswerPredicate {
    Always,
    Equals { value: Value },
    OneOf { values: Vec<Value> },
    Range { min: f64, max: f64 },
}

impl AnswerPredicate {
    pub fn matches(&self, answer: &Value) -> bool {
        match self {
            AnswerPredicate::Always => true,
            AnswerPredicate::Equals { value } => loose_eq(value, answer),
            AnswerPredicate::OneOf { values } => values.iter().any(|v| loose_eq(v, answer)),
            AnswerPredicate::Range { min, max } => answer.as_f64().is_some_and(|a| a >= *min && a <= *max),
        }
    }
}

fn loose_eq(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEdge {
    pub from: String,
    pub predicate: AnswerPredicate,
    pub to: String,
}

/// Queries chained conditionally on earlier answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTree {
    root: String,
    queries: BTreeMap<String, Query>,
    edges: Vec<QueryEdge>,
}

impl QueryTree {
    pub fn new(root: Query) -> Self {
        let id = root.id.clone();
        QueryTree {
            root: id.clone(),
            queries: BTreeMap::from([(id, root)]),
            edges: Vec::new(),
        }
    }

    /// Adds `child` as a follow-up of `parent`, asked when `predicate`
    /// matches the parent's answer. A query may have several parents.
    pub fn add_follow_up(&mut self, parent: &str, predicate: AnswerPredicate, child: Query) -> Result<(), QueryError> {
        if !self.queries.contains_key(parent) {
            return Err(QueryError::InvalidTree(format!("unknown parent `{parent}`")));
        }
        if let Some(existing) = self.queries.get(&child.id) {
            if existing != &child {
                return Err(QueryError::InvalidTree(format!("query id `{}` reused", child.id)));
            }
        }
        if self.reaches(&child.id, parent) {
            return Err(QueryError::InvalidTree(format!("edge {parent} -> {} closes a cycle", child.id)));
        }
        let to = child.id.clone();
        self.queries.insert(to.clone(), child);
        self.edges.push(QueryEdge {
            from: parent.into(),
            predicate,
            to,
        });
        Ok(())
    }

    fn reaches(&self, from: &str, target: &str) -> bool {
        let mut stack = vec![from.to_string()];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == target {
                return true;
            }
            if seen.insert(n.clone()) {
                stack.extend(self.edges.iter().filter(|e| e.from == n).map(|e| e.to.clone()));
            }
        }
        false
    }

    pub fn root(&self) -> &Query {
        &self.queries[&self.root]
    }

    pub fn get(&self, id: &str) -> Option<&Query> {
        self.queries.get(id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.values()
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Query> {
        self.queries.get_mut(id)
    }

    /// Visits queries from the root, following edges whose predicate
    /// matches the answer `answer` returns for the parent.
    pub fn walk<E>(&self, mut answer: impl FnMut(&Query) -> Result<Value, E>) -> Result<BTreeMap<String, Value>, E> {
        let mut answers = BTreeMap::new();
        let mut queue = VecDeque::from([self.root.clone()]);
        while let Some(id) = queue.pop_front() {
            if answers.contains_key(&id) {
                continue;
            }
            let value = answer(&self.queries[&id])?;
            for e in self.edges.iter().filter(|e| e.from == id) {
                if e.predicate.matches(&value) {
                    queue.push_back(e.to.clone());
                }
            }
            answers.insert(id, value);
        }
        Ok(answers)
    }

    /// Resolves from the root, following edges whose predicate matches.
    /// Queries listed in `preset` are not asked; their given value is used
    /// for branching instead.
    pub fn resolve_with(
        &self,
        mode: Automation,
        mut source: Option<&mut dyn AnswerSource>,
        preset: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>, QueryError> {
        self.walk(|q| match preset.get(&q.id) {
            Some(v) => q.accept(v).map_err(|reason| QueryError::Rejected {
                id: q.id.clone(),
                reason,
            }),
            None => match source {
                Some(ref mut s) => resolve(q, mode, Some(&mut **s)),
                None => resolve(q, mode, None),
            },
        })
    }

    pub fn resolve_tree(&self, mode: Automation, source: Option<&mut dyn AnswerSource>) -> Result<BTreeMap<String, Value>, QueryError> {
        self.resolve_with(mode, source, &BTreeMap::new())
    }
}

/// Answers from a script keyed by query id, consumed in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAnswers {
    answers: BTreeMap<String, VecDeque<Value>>,
    asked: Vec<String>,
}

impl ScriptedAnswers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, id: &str, value: Value) -> &mut Self {
        self.answers.entry(id.into()).or_default().push_back(value);
        self
    }

    pub fn from_map(map: BTreeMap<String, Value>) -> Self {
        let mut s = Self::new();
        for (k, v) in map {
            s.push(&k, v);
        }
        s
    }

    /// Query ids in the order they were asked.
    pub fn asked(&self) -> &[String] {
        &self.asked
    }
}

impl AnswerSource for ScriptedAnswers {
    fn answer(&mut self, query: &Query, _last_error: Option<&str>) -> Result<Value, QueryError> {
        self.asked.push(query.id.clone());
        self.answers
            .get_mut(&query.id)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| QueryError::UnanswerableQuery(query.id.clone()))
    }
}

/// Prompts on a text stream. An empty line accepts the recommendation or
/// default when there is one.
pub struct ConsoleSource<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead + Send, W: Write + Send> ConsoleSource<R, W> {
    pub fn new(input: R, output: W) -> Self {
        ConsoleSource { input, output }
    }
}

impl<R: BufRead + Send, W: Write + Send> AnswerSource for ConsoleSource<R, W> {
    fn answer(&mut self, query: &Query, last_error: Option<&str>) -> Result<Value, QueryError> {
        let io = |e: std::io::Error| QueryError::Source(e.to_string());
        if let Some(e) = last_error {
            writeln!(self.output, "  invalid answer: {e}").map_err(io)?;
        }
        writeln!(self.output, "{}", query.prompt).map_err(io)?;
        for o in &query.options {
            writeln!(self.output, "  - {o}").map_err(io)?;
        }
        let suggested = query
            .recommendation
            .as_ref()
            .map(|r| {
                let _ = writeln!(self.output, "  recommended: {} ({})", r.value, r.rationale);
                r.value.clone()
            })
            .or_else(|| query.default.clone());
        if let Some(s) = &suggested {
            write!(self.output, "[{}]> ", value_text(s)).map_err(io)?;
        } else {
            write!(self.output, "> ").map_err(io)?;
        }
        self.output.flush().map_err(io)?;
        let mut line = String::new();
        if self.input.read_line(&mut line).map_err(io)? == 0 {
            return Err(QueryError::UnanswerableQuery(query.id.clone()));
        }
        let line = line.trim();
        match (line.is_empty(), suggested) {
            (true, Some(s)) => Ok(s),
            _ => Ok(Value::from(line)),
        }
    }
}

/// A query waiting for an answer from outside the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingQuery {
    /// Globally unique id used to answer the query.
    pub qid: String,
    pub run_id: String,
    pub query: Query,
}

#[derive(Default)]
struct BrokerState {
    runs: BTreeSet<String>,
    pending: BTreeMap<String, PendingQuery>,
    /// Accepted answers not yet picked up by the waiting run.
    delivered: BTreeMap<String, Value>,
    answered: BTreeSet<String>,
}

/// Hand-off point between runs blocked on a query and answers arriving from
/// other threads (for example HTTP handlers). Each query accepts exactly one
/// answer.
#[derive(Default)]
pub struct QueryBroker {
    state: Mutex<BrokerState>,
    cv: Condvar,
}

impl QueryBroker {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn register_run(&self, run_id: &str) {
        self.state.lock().expect("broker lock").runs.insert(run_id.into());
    }

    /// Forgets a run and any queries it still has open.
    pub fn remove_run(&self, run_id: &str) {
        let mut st = self.state.lock().expect("broker lock");
        st.runs.remove(run_id);
        st.pending.retain(|_, p| p.run_id != run_id);
    }

    pub fn pending_queries(&self, run_id: &str) -> Result<Vec<PendingQuery>, QueryError> {
        let st = self.state.lock().expect("broker lock");
        if !st.runs.contains(run_id) {
            return Err(QueryError::UnknownRun(run_id.into()));
        }
        Ok(st.pending.values().filter(|p| p.run_id == run_id).cloned().collect())
    }

    /// Validates and hands an answer to the waiting run.
    pub fn submit(&self, qid: &str, raw: &Value) -> Result<(), QueryError> {
        let mut st = self.state.lock().expect("broker lock");
        if st.answered.contains(qid) {
            return Err(QueryError::AlreadyAnswered(qid.into()));
        }
        let p = st.pending.get(qid).ok_or_else(|| QueryError::UnknownQuery(qid.into()))?;
        let value = p.query.accept(raw).map_err(|reason| QueryError::Rejected {
            id: qid.into(),
            reason,
        })?;
        st.pending.remove(qid);
        st.answered.insert(qid.into());
        st.delivered.insert(qid.into(), value);
        self.cv.notify_all();
        Ok(())
    }

    fn wait_for(&self, run_id: &str, query: &Query, timeout: Duration) -> Result<Value, QueryError> {
        let qid = format!("{run_id}.{}", query.id);
        let mut st = self.state.lock().expect("broker lock");
        if st.answered.contains(&qid) {
            return Err(QueryError::AlreadyAnswered(qid));
        }
        st.pending.insert(
            qid.clone(),
            PendingQuery {
                qid: qid.clone(),
                run_id: run_id.into(),
                query: query.clone(),
            },
        );
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(v) = st.delivered.remove(&qid) {
                return Ok(v);
            }
            if !st.runs.contains(run_id) {
                return Err(QueryError::UnknownRun(run_id.into()));
            }
            let now = Instant::now();
            if now >= deadline {
                st.pending.remove(&qid);
                return Err(QueryError::AnswerTimeout(qid));
            }
            st = self.cv.wait_timeout(st, deadline - now).expect("broker lock").0;
        }
    }
}

/// [`AnswerSource`] for one run backed by a [`QueryBroker`].
pub struct BrokerSource {
    broker: Arc<QueryBroker>,
    run_id: String,
    timeout: Duration,
}

impl BrokerSource {
    pub fn new(broker: Arc<QueryBroker>, run_id: &str, timeout: Duration) -> Self {
        broker.register_run(run_id);
        BrokerSource {
            broker,
            run_id: run_id.into(),
            timeout,
        }
    }
}

impl AnswerSource for BrokerSource {
    fn answer(&mut self, query: &Query, _last_error: Option<&str>) -> Result<Value, QueryError> {
        self.broker.wait_for(&self.run_id, query, self.timeout)
    }
}
