//! Command-line dispatch. Exit codes: 0 success, 1 failure, 2 usage or
//! missing input file.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use decitree_core::builders::BuilderRegistry;
use decitree_core::problem::formulate_problem;
use decitree_core::query::{Automation, ConsoleSource};
use decitree_core::scalability::{assess, build_database, write_outputs, ScalingDatabase, SweepPlan};
use decitree_core::tree::{DecisionTree, NodeRegistry, PathSpec, RunOptions, Services, TreeConfig};

use crate::api::{self, AppState};

/// Environment variable naming the default scaling database.
pub const DB_ENV: &str = "DECITREE_DB";

#[derive(Debug, Parser)]
#[command(name = "decitree", version, about = "Decision-tree orchestration of hybrid quantum-classical optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Auto,
    Manual,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every root-to-leaf path of a tree for data-flow errors.
    Validate { tree: PathBuf },
    /// Run a tree on a problem instance and print the run result as JSON.
    Run {
        tree: PathBuf,
        instance: PathBuf,
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Scaling database for assessment nodes; defaults to $DECITREE_DB.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Also write the run result to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Assess an instance against a scaling database and write
    /// scalability_assessment.json and recommended_config.yaml.
    Assess {
        instance: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        /// Declared problem class; `qubo` requests automatic matching.
        #[arg(long)]
        class: Option<String>,
        /// Restrict to VQA,optimizer pairs; repeatable.
        #[arg(long, value_parser = parse_combo)]
        combo: Vec<(String, String)>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Build (or extend) a scaling database from a sweep plan.
    BuildDb {
        plan: PathBuf,
        #[arg(long, default_value = "scaling_db.json")]
        out: PathBuf,
        /// Merge into an existing database at --out instead of replacing it.
        #[arg(long)]
        merge: bool,
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        eps_min: Option<f64>,
        #[arg(long)]
        eps_max: Option<f64>,
        #[arg(long)]
        eps_count: Option<usize>,
        #[arg(long)]
        kappa_shots: Option<u64>,
        #[arg(long)]
        kappa_reps: Option<usize>,
        #[arg(long)]
        success_gap: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        problem_types: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        densities: Option<Vec<f64>>,
    },
    /// Serve the HTTP API for one tree.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Tree served to clients; defaults to the shipped recommend tree.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        retention_hours: u64,
        /// Seconds a run waits for an answer to a pending query.
        #[arg(long, default_value_t = 900)]
        answer_timeout: u64,
    },
}

fn parse_combo(s: &str) -> Result<(String, String), String> {
    match s.split_once(',') {
        Some((v, o)) if !v.is_empty() && !o.is_empty() => Ok((v.trim().into(), o.trim().into())),
        _ => Err(format!("`{s}` is not of the form vqa,optimizer")),
    }
}

/// Failure carrying the exit code and a one-line diagnostic.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn fail(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError {
            code: 2,
            message: format!("file not found: {}", path.display()),
        },
        _ => CliError::fail(format!("{}: {e}", path.display())),
    })
}

fn load_db(explicit: Option<&Path>) -> Result<Option<Arc<ScalingDatabase>>, CliError> {
    let path = explicit.map(PathBuf::from).or_else(|| std::env::var_os(DB_ENV).map(PathBuf::from));
    match path {
        None => Ok(None),
        Some(p) => {
            let text = read_file(&p)?;
            let db = ScalingDatabase::from_json(&text).map_err(|e| CliError::fail(format!("{}: {e}", p.display())))?;
            Ok(Some(Arc::new(db)))
        }
    }
}

pub fn build_tree(text: &str, database: Option<Arc<ScalingDatabase>>) -> Result<DecisionTree, CliError> {
    let config = TreeConfig::from_yaml(text).map_err(|e| CliError::fail(e.to_string()))?;
    let services = Services { database, ..Services::default() };
    DecisionTree::build(config, &NodeRegistry::with_builtin(), services).map_err(|e| CliError::fail(e.to_string()))
}

/// Tree and path from either a tree file or a recommended config.
fn load_tree_and_path(text: &str, database: Option<Arc<ScalingDatabase>>) -> Result<(DecisionTree, PathSpec), CliError> {
    if let Ok(rc) = decitree_core::tree::RecommendedConfig::from_yaml(text) {
        let services = Services { database, ..Services::default() };
        let tree = DecisionTree::build(rc.tree, &NodeRegistry::with_builtin(), services).map_err(|e| CliError::fail(e.to_string()))?;
        return Ok((tree, rc.path));
    }
    Ok((build_tree(text, database)?, PathSpec::new()))
}

pub const SHIPPED_RECOMMEND_TREE: &str = include_str!("../../../configs/recommend_tree.yaml");

/// Runs one command. Diagnostics go to `err`, results to `out`.
pub fn execute(cli: Cli, input: &mut (dyn BufRead + Send), out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::fail(e.to_string());
    match cli.command {
        Command::Validate { tree } => {
            let tree = build_tree(&read_file(&tree)?, None)?;
            let report = tree.validate();
            for w in &report.warnings {
                writeln!(err, "warning: {w}").map_err(io)?;
            }
            if report.valid {
                writeln!(out, "valid ({} paths checked)", report.paths_checked).map_err(io)?;
                Ok(())
            } else {
                Err(CliError::fail(format!("invalid tree:\n{report}")))
            }
        }
        Command::Run { tree, instance, path, mode, db, output } => {
            let tree_text = read_file(&tree)?;
            let instance_text = read_file(&instance)?;
            let extra = match &path {
                Some(p) => PathSpec::from_yaml(&read_file(p)?).map_err(|e| CliError::fail(e.to_string()))?,
                None => PathSpec::new(),
            };
            let (tree, mut full_path) = load_tree_and_path(&tree_text, load_db(db.as_deref())?)?;
            full_path.0.extend(extra.0);
            let doc: serde_json::Value =
                serde_json::from_str(&instance_text).map_err(|e| CliError::fail(format!("{}: malformed JSON: {e}", instance.display())))?;
            let mode = mode.map(|m| match m {
                ModeArg::Auto => Automation::Automatic,
                ModeArg::Manual => Automation::Manual,
            });
            let mut console = ConsoleSource::new(input, &mut *err);
            let result = tree
                .run(
                    doc,
                    &full_path,
                    RunOptions {
                        mode,
                        source: Some(&mut console),
                        ..Default::default()
                    },
                )
                .map_err(|e| CliError::fail(e.to_string()))?;
            let text = serde_json::to_string_pretty(&result).expect("run result serializes");
            if let Some(p) = output {
                std::fs::write(&p, &text).map_err(|e| CliError::fail(format!("{}: {e}", p.display())))?;
            }
            writeln!(out, "{text}").map_err(io)?;
            if result.is_completed() {
                Ok(())
            } else {
                Err(CliError::fail(format!("run aborted: {:?}", result.status)))
            }
        }
        Command::Assess { instance, db, class, combo, out_dir } => {
            let text = read_file(&instance)?;
            let db = load_db(db.as_deref())?.ok_or_else(|| CliError {
                code: 2,
                message: format!("no scaling database: pass --db or set {DB_ENV}"),
            })?;
            let services = Services::default();
            let inst = services.problems.parse_instance(&text).map_err(|e| CliError::fail(e.to_string()))?;
            let f = formulate_problem(&inst, inst.formulation_mode()).map_err(|e| CliError::fail(e.to_string()))?;
            let declared = class.unwrap_or_else(|| inst.problem_class().to_string());
            let declared = (declared != "qubo").then_some(declared);
            let combos = (!combo.is_empty()).then_some(combo.as_slice());
            let a = assess(&f.qubo, declared.as_deref(), inst.problem().capacity_ratio(), &db, &services.builders, combos)
                .map_err(|e| CliError::fail(e.to_string()))?;
            let (json_path, yaml_path) =
                write_outputs(&a, &out_dir, services.backends.max_qubits()).map_err(|e| CliError::fail(e.to_string()))?;
            write!(out, "{}", a.render_table()).map_err(io)?;
            writeln!(out, "wrote {}", json_path.display()).map_err(io)?;
            writeln!(out, "wrote {}", yaml_path.display()).map_err(io)?;
            Ok(())
        }
        Command::BuildDb {
            plan,
            out: out_path,
            merge,
            n_min,
            n_max,
            trials,
            budget,
            eps_min,
            eps_max,
            eps_count,
            kappa_shots,
            kappa_reps,
            success_gap,
            seed,
            problem_types,
            densities,
        } => {
            let mut p: SweepPlan = serde_yaml::from_str(&read_file(&plan)?).map_err(|e| CliError::fail(format!("{}: {e}", plan.display())))?;
            macro_rules! set {
                ($($opt:ident => $field:expr),*) => {$(if let Some(v) = $opt { $field = v; })*};
            }
            set!(n_min => p.n_min, n_max => p.n_max, trials => p.trials, budget => p.budget,
                eps_min => p.epsilons.min, eps_max => p.epsilons.max, eps_count => p.epsilons.count,
                kappa_shots => p.kappa_shots, kappa_reps => p.kappa_reps, success_gap => p.success_gap,
                seed => p.seed, problem_types => p.problem_types, densities => p.densities);
            p.check().map_err(|e| CliError::fail(e.to_string()))?;
            let date = chrono::Utc::now().format("%Y-%m-%d").to_string();
            let built = build_database(&p, &BuilderRegistry::default(), &date).map_err(|e| CliError::fail(e.to_string()))?;
            let mut db = if merge && out_path.exists() {
                ScalingDatabase::load(&out_path).map_err(|e| CliError::fail(e.to_string()))?
            } else {
                ScalingDatabase::default()
            };
            let added = db.merge(built);
            db.save(&out_path).map_err(|e| CliError::fail(e.to_string()))?;
            let valid = db.records.iter().filter(|r| r.valid()).count();
            writeln!(out, "{added} records added; {} total, {valid} with valid fits; wrote {}", db.records.len(), out_path.display())
                .map_err(io)?;
            Ok(())
        }
        Command::Serve { port, host, tree, db, retention_hours, answer_timeout } => {
            let text = match &tree {
                Some(p) => read_file(p)?,
                None => SHIPPED_RECOMMEND_TREE.to_string(),
            };
            let tree = build_tree(&text, load_db(db.as_deref())?)?;
            let report = tree.validate();
            if !report.valid {
                return Err(CliError::fail(format!("invalid tree:\n{report}")));
            }
            let app = AppState::with_settings(tree, Duration::from_secs(retention_hours * 3600), Duration::from_secs(answer_timeout));
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(api::serve(app, &host, port)).map_err(|e| CliError::fail(format!("server: {e}")))
        }
    }
}

/// Parses `args` and runs the command, returning the exit code.
pub fn dispatch<I, T>(args: I, input: &mut (dyn BufRead + Send), out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(if code == 0 { out as &mut dyn Write } else { err as &mut dyn Write }, "{e}");
            return code;
        }
    };
    match execute(cli, input, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}
