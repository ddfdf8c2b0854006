//! HTTP/JSON service: runs, pending queries, assessments, backends and the
//! tree graph. Runs execute on their own threads; answers cross over through
//! the query broker.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use decitree_core::problem::{ProblemInstance, QuboMatrix};
use decitree_core::query::{Automation, BrokerSource, QueryBroker, QueryError, ScriptedAnswers, DEFAULT_ANSWER_TIMEOUT};
use decitree_core::scalability::{assess, Assessment};
use decitree_core::tree::{DecisionTree, PathSpec, RunOptions, RunResult};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_RETENTION: Duration = Duration::from_secs(24 * 3600);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Validating,
    Running,
    AwaitingQuery,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLinks {
    pub result: String,
    pub queries: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHandle {
    pub run_id: String,
    pub state: RunState,
    pub links: RunLinks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Error body: machine-readable code plus a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }

    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let msg = e.to_string();
        match e {
            QueryError::UnknownRun(_) => Self::new(StatusCode::NOT_FOUND, "unknown_run", msg),
            QueryError::UnknownQuery(_) => Self::new(StatusCode::NOT_FOUND, "unknown_query", msg),
            QueryError::AlreadyAnswered(_) => Self::new(StatusCode::CONFLICT, "already_answered", msg),
            QueryError::Rejected { .. } => Self::unprocessable("validation_failed", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "query_error", msg),
        }
    }
}

struct RunEntry {
    created: Instant,
    state: RunState,
    result: Option<RunResult>,
    error: Option<String>,
}

/// Shared state of one service instance.
pub struct AppState {
    tree: Arc<DecisionTree>,
    broker: Arc<QueryBroker>,
    runs: Mutex<HashMap<String, RunEntry>>,
    retention: Duration,
    answer_timeout: Duration,
}

impl AppState {
    pub fn new(tree: DecisionTree) -> Arc<Self> {
        Self::with_settings(tree, DEFAULT_RETENTION, DEFAULT_ANSWER_TIMEOUT)
    }

    pub fn with_settings(tree: DecisionTree, retention: Duration, answer_timeout: Duration) -> Arc<Self> {
        Arc::new(AppState {
            tree: Arc::new(tree),
            broker: QueryBroker::new(),
            runs: Mutex::new(HashMap::new()),
            retention,
            answer_timeout,
        })
    }

    fn purge_expired(&self) {
        let mut runs = self.runs.lock().expect("run table lock");
        let expired: Vec<String> = runs
            .iter()
            .filter(|(_, e)| e.created.elapsed() > self.retention)
            .map(|(k, _)| k.clone())
            .collect();
        for id in expired {
            runs.remove(&id);
            self.broker.remove_run(&id);
        }
    }

    fn handle(&self, run_id: &str) -> Result<RunHandle, ApiError> {
        let runs = self.runs.lock().expect("run table lock");
        let e = runs
            .get(run_id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_run", format!("unknown run `{run_id}`")))?;
        let state = match e.state {
            RunState::Running if self.broker.pending_queries(run_id).is_ok_and(|p| !p.is_empty()) => RunState::AwaitingQuery,
            s => s,
        };
        Ok(RunHandle {
            run_id: run_id.into(),
            state,
            links: links(run_id),
            result: e.result.clone(),
            error: e.error.clone(),
        })
    }
}

fn links(run_id: &str) -> RunLinks {
    RunLinks {
        result: format!("/runs/{run_id}"),
        queries: format!("/runs/{run_id}/queries"),
    }
}

/// Path given either as a mapping or as YAML text.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PathInput {
    Map(BTreeMap<String, Value>),
    Yaml(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunRequest {
    pub instance: Value,
    #[serde(default)]
    pub path: Option<PathInput>,
    #[serde(default)]
    pub mode: Option<Automation>,
    /// Pre-scripted answers for manual mode, keyed by query id. Queries
    /// without a scripted answer wait for POST /queries/{qid}/answer.
    #[serde(default)]
    pub answers: Option<BTreeMap<String, Value>>,
}

/// Scripted answers first, then the broker.
struct ScriptThenBroker {
    script: ScriptedAnswers,
    broker: BrokerSource,
}

impl decitree_core::query::AnswerSource for ScriptThenBroker {
    fn answer(&mut self, query: &decitree_core::query::Query, last: Option<&str>) -> Result<Value, QueryError> {
        match self.script.answer(query, last) {
            Ok(v) if last.is_none() => Ok(v),
            _ => self.broker.answer(query, last),
        }
    }
}

pub fn parse_path(input: Option<PathInput>) -> Result<PathSpec, ApiError> {
    match input {
        None => Ok(PathSpec::new()),
        Some(PathInput::Map(m)) => Ok(PathSpec(m)),
        Some(PathInput::Yaml(text)) => PathSpec::from_yaml(&text).map_err(|e| ApiError::unprocessable("invalid_path", e.to_string())),
    }
}

async fn create_run(State(app): State<Arc<AppState>>, Json(req): Json<RunRequest>) -> Result<(StatusCode, Json<RunHandle>), ApiError> {
    app.purge_expired();
    let run_id = format!("run-{}", uuid::Uuid::new_v4().simple());
    app.runs.lock().expect("run table lock").insert(
        run_id.clone(),
        RunEntry {
            created: Instant::now(),
            state: RunState::Validating,
            result: None,
            error: None,
        },
    );
    let checked = (|| {
        let path = parse_path(req.path)?;
        app.tree.check_path(&path).map_err(|e| ApiError::unprocessable("invalid_path", e.to_string()))?;
        app.tree
            .services()
            .problems
            .parse_value(req.instance.clone())
            .map_err(|e| ApiError::unprocessable("invalid_instance", e.to_string()))?;
        Ok::<_, ApiError>(path)
    })();
    let path = match checked {
        Ok(p) => p,
        Err(e) => {
            app.runs.lock().expect("run table lock").remove(&run_id);
            return Err(e);
        }
    };
    let mode = req.mode.unwrap_or(app.tree.config().flags.automation);
    if let Some(e) = app.runs.lock().expect("run table lock").get_mut(&run_id) {
        e.state = RunState::Running;
    }
    let handle = app.handle(&run_id)?;

    let worker = app.clone();
    let id = run_id.clone();
    let instance = req.instance;
    let answers = req.answers.unwrap_or_default();
    std::thread::spawn(move || {
        let mut source = ScriptThenBroker {
            script: ScriptedAnswers::from_map(answers),
            broker: BrokerSource::new(worker.broker.clone(), &id, worker.answer_timeout),
        };
        let outcome = worker.tree.run(
            instance,
            &path,
            RunOptions {
                mode: Some(mode),
                source: Some(&mut source),
                run_id: Some(id.clone()),
                log_dir: None,
            },
        );
        let mut runs = worker.runs.lock().expect("run table lock");
        if let Some(e) = runs.get_mut(&id) {
            match outcome {
                Ok(r) => {
                    e.state = if r.is_completed() { RunState::Finished } else { RunState::Aborted };
                    e.result = Some(r);
                }
                Err(err) => {
                    e.state = RunState::Aborted;
                    e.error = Some(err.to_string());
                }
            }
        }
        drop(runs);
        worker.broker.remove_run(&id);
    });
    Ok((StatusCode::ACCEPTED, Json(handle)))
}

async fn get_run(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<RunHandle>, ApiError> {
    app.purge_expired();
    Ok(Json(app.handle(&id)?))
}

async fn get_queries(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    app.purge_expired();
    let handle = app.handle(&id)?;
    let pending = match handle.state {
        RunState::Finished | RunState::Aborted => Vec::new(),
        _ => app.broker.pending_queries(&id).unwrap_or_default(),
    };
    Ok(Json(json!({"run_id": id, "state": handle.state, "queries": pending})))
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnswerRequest {
    pub value: Value,
}

async fn answer_query(
    State(app): State<Arc<AppState>>,
    Path(qid): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> Result<StatusCode, ApiError> {
    app.broker.submit(&qid, &req.value)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn backends(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"backends": app.tree.services().backends.list_backends()}))
}

async fn tree(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(app.tree.describe())
}

#[derive(Debug, Clone, Deserialize)]
pub struct AssessmentRequest {
    #[serde(default)]
    pub instance: Option<Value>,
    #[serde(default)]
    pub qubo: Option<Vec<Vec<f64>>>,
    /// Declared problem class; overrides the instance class.
    #[serde(default)]
    pub class: Option<String>,
    #[serde(default)]
    pub combos: Option<Vec<(String, String)>>,
}

/// Assessment of an instance or raw QUBO against the service database.
pub fn assess_request(app: &AppState, req: AssessmentRequest) -> Result<Assessment, ApiError> {
    let services = app.tree.services();
    let db = services
        .database
        .clone()
        .ok_or_else(|| ApiError::unprocessable("no_database", "the service has no scaling database"))?;
    let (q, class, ratio) = match (req.instance, req.qubo) {
        (Some(doc), None) => {
            let inst: ProblemInstance = services
                .problems
                .parse_value(doc)
                .map_err(|e| ApiError::unprocessable("invalid_instance", e.to_string()))?;
            let f = decitree_core::problem::formulate_problem(&inst, inst.formulation_mode())
                .map_err(|e| ApiError::unprocessable("invalid_instance", e.to_string()))?;
            (f.qubo, Some(inst.problem_class().to_string()), inst.problem().capacity_ratio())
        }
        (None, Some(rows)) => (
            QuboMatrix::from_rows(&rows).map_err(|e| ApiError::unprocessable("invalid_qubo", e.to_string()))?,
            None,
            None,
        ),
        _ => return Err(ApiError::unprocessable("invalid_request", "give exactly one of `instance` or `qubo`")),
    };
    let class = req.class.or(class).filter(|c| c != "qubo");
    assess(&q, class.as_deref(), ratio, &db, &services.builders, req.combos.as_deref())
        .map_err(|e| ApiError::unprocessable("assessment_failed", e.to_string()))
}

async fn create_assessment(State(app): State<Arc<AppState>>, Json(req): Json<AssessmentRequest>) -> Result<Json<Assessment>, ApiError> {
    let app2 = app.clone();
    tokio::task::spawn_blocking(move || assess_request(&app2, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map(Json)
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/queries", get(get_queries))
        .route("/queries/{qid}/answer", post(answer_query))
        .route("/backends", get(backends))
        .route("/assessments", post(create_assessment))
        .route("/tree", get(tree))
        .with_state(app)
}

/// Serves until the process ends.
pub async fn serve(app: Arc<AppState>, host: &str, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
