//! Command-line front end: `learn`, `eval` and `check`.
//!
//! Exit codes: 0 converged (or success), 2 not converged, 3 parse error,
//! 4 grounding cap exceeded, 5 I/O error, 64 usage error.

use crate::continuous::{AttachOptions, ContinuousError, FeatureTable, DEFAULT_SHARPNESS};
use crate::dnl::DEFAULT_WIDE_MEAN;
use crate::eval::{cross_validate_relational, cross_validate_table, load_relational, EvalError, FoldPlan, RelationalOptions};
use crate::ground::{build_space, compile_index, GroundError, SpaceOptions, SubstitutionGrid};
use crate::logic::{candidate_atoms, parse_problem, AmalgamateKind, IlpProblem, ParseError};
use crate::train::{Session, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_GROUNDING: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Continuous(#[from] ContinuousError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse { .. } => EXIT_PARSE,
            CliError::Ground(e) | CliError::Train(TrainError::Ground(e)) | CliError::Eval(EvalError::Train(TrainError::Ground(e))) => {
                match e {
                    GroundError::Io(_) => EXIT_IO,
                    _ => EXIT_GROUNDING,
                }
            }
            CliError::Eval(EvalError::Parse(_)) => EXIT_PARSE,
            CliError::Io { .. } | CliError::Train(TrainError::Io(_)) | CliError::Eval(EvalError::Io(_)) => EXIT_IO,
            CliError::Continuous(ContinuousError::Io(_)) | CliError::Eval(EvalError::Continuous(ContinuousError::Io(_))) => EXIT_IO,
            CliError::Continuous(_) | CliError::Eval(EvalError::Malformed { .. } | EvalError::UnknownPredicate { .. }) => EXIT_PARSE,
            _ => EXIT_USAGE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "diffilp", version, about = "Learn logic programs with differentiable forward chaining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a problem file and print the learned program.
    Learn(LearnArgs),
    /// Cross-validate on a feature table or a relational problem.
    Eval(EvalArgs),
    /// Parse and ground a problem and report its sizes without training.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Amalgamate {
    Or,
    And,
    Replace,
}

impl From<Amalgamate> for AmalgamateKind {
    fn from(a: Amalgamate) -> Self {
        match a {
            Amalgamate::Or => AmalgamateKind::Or,
            Amalgamate::And => AmalgamateKind::And,
            Amalgamate::Replace => AmalgamateKind::Replace,
        }
    }
}

/// Options that rewrite the parsed problem.
#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Forward-chaining steps (overrides `param tmax=`).
    #[arg(long)]
    pub tmax: Option<usize>,
    /// Allow or forbid head-predicate atoms in every rule body.
    #[arg(long, value_enum)]
    pub recursion: Option<OnOff>,
    /// Default amalgamate function.
    #[arg(long, value_enum)]
    pub amalgamate: Option<Amalgamate>,
}

impl ProblemArgs {
    pub fn apply(&self, p: &mut IlpProblem) {
        if let Some(t) = self.tmax {
            p.t_max = t;
        }
        if let Some(r) = self.recursion {
            for rule in &mut p.rules {
                rule.recursion = r == OnOff::On;
            }
        }
        if let Some(a) = self.amalgamate {
            p.amalgamate = a.into();
        }
    }
}

/// Options shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Mean initial raw weight of layers wider than 64 inputs.
    #[arg(long, allow_hyphen_values = true)]
    pub init_mean: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Print the loss every 100 epochs.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub problem_args: ProblemArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Skip post-training pruning.
    #[arg(long)]
    pub no_prune: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// `wine`, `sonar`, a feature CSV with a `class` column, or a problem
    /// file (relational data).
    #[arg(long)]
    pub dataset: String,
    /// Extra fact files merged into a relational problem.
    #[arg(long, num_args = 1..)]
    pub facts: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Boundaries per feature and direction.
    #[arg(long, default_value_t = 6)]
    pub boundaries: usize,
    /// Conjunctive terms per class predicate.
    #[arg(long, default_value_t = 4)]
    pub terms: usize,
    /// Training negatives kept per positive (relational data).
    #[arg(long)]
    pub negative_ratio: Option<f64>,
    #[command(flatten)]
    pub problem_args: ProblemArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub problem_args: ProblemArgs,
}

/// Bundled feature table of a named dataset.
pub fn bundled_dataset(name: &str) -> Option<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    match name {
        "wine" => Some(dir.join("wine.csv")),
        "sonar" => Some(dir.join("sonar.csv")),
        _ => None,
    }
}

/// Default `(learning rate, epochs, wide init mean)` for a feature table
/// with `n_features` columns.
pub fn table_defaults(n_features: usize) -> (f64, usize, f64) {
    if n_features > 20 {
        (0.05, 300, -3.5)
    } else {
        (0.05, 500, DEFAULT_WIDE_MEAN)
    }
}

fn read_problem(path: &Path, args: &ProblemArgs) -> Result<IlpProblem, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut p =
        parse_problem(&text).map_err(|source| CliError::Parse { path: path.display().to_string(), source })?;
    args.apply(&mut p);
    Ok(p)
}

fn set_threads(n: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn train_config(t: &TrainArgs, lr: f64, epochs: usize, wide: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: t.lr.unwrap_or(lr),
        epochs: t.epochs.unwrap_or(epochs),
        seed: t.seed,
        wide_init_mean: t.init_mean.unwrap_or(wide),
        ..Default::default()
    }
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Trains, prunes, saves `model.json`, `train_log.csv` and `program.txt`
/// under the output directory, and prints the program.
pub fn cmd_learn(args: &LearnArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    set_threads(args.train.threads)?;
    let problem = read_problem(&args.problem, &args.problem_args)?;
    let session = Session::new(&problem, &SpaceOptions::default())?;
    let defaults = TrainConfig::default();
    let cfg = train_config(&args.train, defaults.learning_rate, defaults.epochs, defaults.wide_init_mean);
    let verbose = args.train.verbose;
    let mut model = session.train_with(&cfg, None, |r| {
        if verbose && r.epoch % 100 == 0 {
            eprintln!("epoch {:>6}  loss {:.6}  {:.1}s", r.epoch, r.loss, r.seconds);
        }
    })?;
    if model.converged && !args.no_prune {
        session.prune(&mut model.functions, None, cfg.eps_log, cfg.prune_delta)?;
        model.refresh_program(&problem, &session.index);
    }
    let dir = &args.train.out;
    create_out(dir)?;
    model.save(&dir.join("model.json"), &problem)?;
    model.write_log(&dir.join("train_log.csv"))?;
    let program = model.program.join("\n");
    std::fs::write(dir.join("program.txt"), format!("{program}\n")).map_err(io_err(dir))?;
    let status = if model.converged { "converged" } else { "not converged" };
    let w = |e| CliError::Io { path: "stdout".into(), source: e };
    writeln!(out, "% {status} after {} epochs, loss {:.3e}", model.epochs, model.final_loss).map_err(w)?;
    writeln!(out, "{program}").map_err(w)?;
    Ok(if model.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Cross-validates and writes `report.json` and per-fold PR curves.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    set_threads(args.train.threads)?;
    let plan = FoldPlan { k: args.folds, seed: args.train.seed, stratified: true };
    if plan.k < 2 {
        return Err(CliError::Usage(format!("--folds must be at least 2, got {}", plan.k)));
    }
    let path = bundled_dataset(&args.dataset).unwrap_or_else(|| PathBuf::from(&args.dataset));
    let name = path.file_stem().map_or(args.dataset.clone(), |s| s.to_string_lossy().into_owned());
    let report = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let table = FeatureTable::from_path(&path)?;
            let (lr, epochs, wide) = table_defaults(table.names.len());
            let cfg = train_config(&args.train, lr, epochs, wide);
            let opts = AttachOptions { k: args.boundaries, c: DEFAULT_SHARPNESS, terms: args.terms };
            cross_validate_table(&name, &table, &plan, &opts, &cfg)?
        }
        Some(_) if path.exists() => {
            let schema = read_problem(&path, &args.problem_args)?;
            let files: Vec<&Path> = args.facts.iter().map(PathBuf::as_path).collect();
            let (problem, _) = load_relational(&schema, &files)?;
            let d = TrainConfig::default();
            let cfg = train_config(&args.train, d.learning_rate, d.epochs, d.wide_init_mean);
            let opts = RelationalOptions { negative_ratio: args.negative_ratio, ..Default::default() };
            cross_validate_relational(&name, &problem, &plan, &opts, &cfg)?
        }
        _ => return Err(CliError::Usage(format!("unknown dataset '{}'", args.dataset))),
    };
    let dir = &args.train.out;
    create_out(dir)?;
    report.write_json(&dir.join("report.json"))?;
    report.write_pr_curves(dir)?;
    let w = |e| CliError::Io { path: "stdout".into(), source: e };
    for (i, f) in report.folds.iter().enumerate() {
        writeln!(out, "fold {i}: accuracy {:.4}  aupr {:.4}  loss {:.4}", f.accuracy, f.aupr, f.loss).map_err(w)?;
    }
    writeln!(out, "{}: mean accuracy {:.4}  mean aupr {:.4}", report.dataset, report.mean_accuracy, report.mean_aupr)
        .map_err(w)?;
    Ok(EXIT_OK)
}

/// Static size report.
pub fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let problem = read_problem(&args.problem, &args.problem_args)?;
    let w = |e| CliError::Io { path: "stdout".into(), source: e };
    let opts = SpaceOptions::default();
    let space = match build_space(&problem, &opts) {
        Ok(s) => s,
        Err(e @ GroundError::CapExceeded { .. }) => {
            writeln!(out, "warning: {e}").map_err(w)?;
            return Ok(EXIT_OK);
        }
        Err(e) => return Err(e.into()),
    };
    writeln!(out, "|G| = {}", space.total).map_err(w)?;
    for (p, sig) in problem.signatures.iter().enumerate() {
        writeln!(out, "  |G_{}| = {}", sig.name, space.len(p)).map_err(w)?;
    }
    let mut params = 0usize;
    for (r, rule) in problem.rules.iter().enumerate() {
        let cands = candidate_atoms(rule, &problem.signatures, &problem.functions);
        let sig = &problem.signatures[rule.pred];
        let theta = SubstitutionGrid::new(&problem, rule).len();
        let n_rule = problem.rules_of(rule.pred).position(|(i, _)| i == r).unwrap_or(0) + 1;
        let weights = crate::dnl::Shape::from(rule.network).num_weights(cands.width());
        params += weights;
        writeln!(
            out,
            "  |I^{n_rule}_{}| = {}  (inputs {}, |Θ| per atom = {theta}, weights {weights})",
            sig.name,
            cands.num_atoms(),
            cands.width()
        )
        .map_err(w)?;
    }
    match compile_index(&problem, &space, &opts) {
        Ok(index) => {
            let bytes = index.memory_bytes() + space.total * 8 * (problem.t_max + 1) + params * 8 * 4;
            writeln!(out, "weights {params}, estimated memory {:.1} MiB", bytes as f64 / (1024.0 * 1024.0)).map_err(w)?;
        }
        Err(e @ GroundError::IndexCapExceeded { .. }) => writeln!(out, "warning: {e}").map_err(w)?,
        Err(e) => return Err(e.into()),
    }
    Ok(EXIT_OK)
}

/// Parses `argv` and runs the chosen command, returning the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Learn(a) => cmd_learn(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Check(a) => cmd_check(a, out),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
