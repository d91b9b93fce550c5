//! Command-line front end. [`run`] is the whole program minus process exit,
//! so tests can drive it in-process.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use dbsurf::bench::{
    sweep_csv, toy_objective, Method, OptimRunSpec, PGrid, StepRule, SweepEstimator, SweepKind, SweepSpec,
    ToyEstimator,
};
use dbsurf::nas_sim::{generate_synthetic_table, load_table, run_search, SearchConfig, SearchSpace};
use dbsurf::optim::OptimizerKind;
use dbsurf::oracle::{closed_form_variance, enumerate_path_law, moments, nu_recursion, PathLaw};
use dbsurf::prob_core::{discrepancy, empirical_mean, sigmoid, CategoricalRow, LogitParams, ProbVector};
use dbsurf::sampler::{
    db_sample_bernoulli, db_sample_categorical, db_sample_finite_support, db_sample_infinite_support,
    FiniteSupport, SamplerConfig, TailGroupedSupport, DEFAULT_TAIL_EPSILON,
};
use dbsurf::{fmt_num, BUILD_ID};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dbsurf", version, about = "Discrepancy-based sampling and gradient estimators")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (or directory for `sweep` and `nas search`); stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key=value file whose keys mirror long flag names; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sweeps. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a batch and report its mean and discrepancy.
    Sample(SampleArgs),
    /// Exact reference quantities.
    Oracle(OracleArgs),
    /// Run a sweep and write its CSV.
    Sweep(SweepArgs),
    /// Optimize the toy objective and write the trajectory.
    Optimize(OptimizeArgs),
    /// Tabular architecture search.
    #[command(subcommand)]
    Nas(NasCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleMode {
    Bernoulli,
    Categorical,
    Finite,
    Infinite,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum, default_value = "bernoulli")]
    mode: SampleMode,
    /// Bernoulli probabilities, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "theta")]
    p: Option<Vec<f64>>,
    /// Bernoulli logits, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    /// Categorical rows: entries separated by ',', rows by ';'.
    #[arg(long)]
    probs: Option<String>,
    /// Support points for `finite`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    atoms: Option<Vec<f64>>,
    /// `poisson:<lambda>` or `geometric:<p>` for `infinite`.
    #[arg(long)]
    dist: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TAIL_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Query {
    Law,
    Nu,
    Moments,
    Variance,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long, value_enum)]
    query: Query,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Toy objective target for `variance`.
    #[arg(long, default_value_t = 0.49)]
    target: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    kind: SweepKind,
    /// `lo:hi:count`.
    #[arg(long)]
    grid: Option<PGrid>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    alpha_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<SweepEstimator>>,
    #[arg(long)]
    mc_reps: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    target: Option<f64>,
    /// File name tag; defaults to `seed<seed>`.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta0: f64,
    #[arg(long, default_value_t = 0.49)]
    target: f64,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value = "dbsurf")]
    estimator: ToyEstimator,
    #[arg(long, default_value = "adam")]
    optimizer: StepRule,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    maximize: bool,
}

#[derive(Debug, Subcommand)]
enum NasCommand {
    /// Generate a synthetic score table.
    Gen(NasGenArgs),
    /// Search a score table.
    Search(NasSearchArgs),
}

#[derive(Debug, Args)]
struct NasGenArgs {
    #[arg(long, default_value_t = 6)]
    edges: usize,
    #[arg(long, default_value_t = 5)]
    ops: usize,
    /// Operation names; overrides `--ops`.
    #[arg(long, value_delimiter = ',')]
    op_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NasOptimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
struct NasSearchArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long, default_value_t = 5)]
    n_paths: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    #[arg(long, default_value_t = 3000)]
    train: usize,
    #[arg(long, default_value_t = 0.8)]
    prune_threshold: f64,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: NasOptimizer,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    /// Maximum number of table lookups.
    #[arg(long)]
    budget: Option<u64>,
    /// File name tag; defaults to `seed<seed>`.
    #[arg(long)]
    tag: Option<String>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<dbsurf::Error> for Failure {
    fn from(e: dbsurf::Error) -> Self {
        let code = if e.is_resource_guard() {
            EXIT_RESOURCE
        } else if matches!(e, dbsurf::Error::Io(_)) {
            EXIT_INTERNAL
        } else {
            EXIT_VALIDATION
        };
        Self { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_VALIDATION, message: message.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_INTERNAL, message: format!("{}: {e}", path.display()) }
}

type Outcome = Result<(), Failure>;

/// Appends `--key value` for each config entry whose flag is not already on
/// the command line.
fn expand_config(args: Vec<String>) -> Result<Vec<String>, Failure> {
    let path = args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| invalid(format!("config {path}: {e}")))?;
    let mut out = args.clone();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("config {path} line {}: expected key=value", k + 1)))?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        if flag == "--config" {
            return Err(invalid(format!("config {path} line {}: nested config", k + 1)));
        }
        let given = args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if !given {
            out.push(format!("{flag}={}", value.trim()));
        }
    }
    Ok(out)
}

/// Runs the program on `args` (including the program name). Returns the exit
/// code.
pub fn run<W: Write, E: Write>(args: Vec<String>, stdout: &mut W, stderr: &mut E) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch<W: Write>(cli: &Cli, stdout: &mut W) -> Outcome {
    if cli.jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    match &cli.command {
        Command::Sample(a) => emit(cli, stdout, &cmd_sample(cli, a)?),
        Command::Oracle(a) => emit(cli, stdout, &cmd_oracle(a)?),
        Command::Sweep(a) => cmd_sweep(cli, a, stdout),
        Command::Optimize(a) => emit(cli, stdout, &cmd_optimize(cli, a)?),
        Command::Nas(NasCommand::Gen(a)) => emit(cli, stdout, &cmd_nas_gen(cli, a)?),
        Command::Nas(NasCommand::Search(a)) => cmd_nas_search(cli, a, stdout),
    }
}

fn write_file(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn print<W: Write>(stdout: &mut W, text: &str) -> Outcome {
    stdout.write_all(text.as_bytes()).map_err(|e| Failure { code: EXIT_INTERNAL, message: e.to_string() })
}

/// Writes `text` to `--out` if given, else to stdout.
fn emit<W: Write>(cli: &Cli, stdout: &mut W, text: &str) -> Outcome {
    match &cli.out {
        Some(path) => write_file(path, text),
        None => print(stdout, text),
    }
}

fn out_dir(cli: &Cli) -> Result<Option<&Path>, Failure> {
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            Ok(Some(dir.as_path()))
        }
        None => Ok(None),
    }
}

fn header(fields: &[String]) -> String {
    format!("# {BUILD_ID}\n{}\n", fields.join(","))
}

fn join_nums(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(";")
}

fn parse_rows(text: &str) -> Result<Vec<Vec<f64>>, Failure> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| invalid(format!("bad number '{}' in --probs", v.trim()))))
                .collect()
        })
        .collect()
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Result<String, Failure> {
    let cfg = SamplerConfig::new(a.alpha, a.n, cli.seed)?;
    let mut out;
    match a.mode {
        SampleMode::Bernoulli => {
            let p = match (&a.p, &a.theta) {
                (Some(p), None) => ProbVector::new(p.clone())?,
                (None, Some(t)) => sigmoid(&LogitParams::new(t.clone())?),
                _ => return Err(invalid("bernoulli mode needs exactly one of --p or --theta")),
            };
            let s = db_sample_bernoulli(&p, &cfg)?;
            out = header(&(1..=p.len()).map(|k| format!("x_{k}")).collect::<Vec<_>>());
            for row in s.rows() {
                out.push_str(&row.iter().map(u8::to_string).collect::<Vec<_>>().join(","));
                out.push('\n');
            }
            let _ = writeln!(out, "# p={}", join_nums(p.values()));
            let _ = writeln!(out, "# p_hat={}", join_nums(&empirical_mean(&s)?));
            let _ = writeln!(out, "# discrepancy={}", join_nums(&discrepancy(&s, p.values())?));
        }
        SampleMode::Categorical => {
            let text = a.probs.as_deref().ok_or_else(|| invalid("categorical mode needs --probs"))?;
            let rows: Vec<CategoricalRow> =
                parse_rows(text)?.into_iter().map(CategoricalRow::new).collect::<dbsurf::Result<_>>()?;
            let s = db_sample_categorical(&rows, &cfg)?;
            out = header(&(1..=rows.len()).map(|k| format!("slot_{k}")).collect::<Vec<_>>());
            for i in 0..s.n() {
                out.push_str(&s.indices(i).iter().map(usize::to_string).collect::<Vec<_>>().join(","));
                out.push('\n');
            }
            let p: Vec<f64> = rows.iter().flat_map(|r| r.values().iter().copied()).collect();
            let _ = writeln!(out, "# p={}", join_nums(&p));
            let _ = writeln!(out, "# p_hat={}", join_nums(&empirical_mean(&s)?));
            let _ = writeln!(out, "# discrepancy={}", join_nums(&discrepancy(&s, &p)?));
        }
        SampleMode::Finite => {
            let atoms = a.atoms.clone().ok_or_else(|| invalid("finite mode needs --atoms"))?;
            let text = a.probs.as_deref().ok_or_else(|| invalid("finite mode needs --probs"))?;
            let mut rows = parse_rows(text)?;
            if rows.len() != 1 {
                return Err(invalid("finite mode takes a single --probs row"));
            }
            let probs = CategoricalRow::new(rows.remove(0))?;
            let support = FiniteSupport::new(atoms, probs.clone())?;
            let xs = db_sample_finite_support(&support, &cfg)?;
            out = values_report(&xs, Some(mean_of_pmf(support.atoms(), probs.values())));
        }
        SampleMode::Infinite => {
            let spec = a.dist.as_deref().ok_or_else(|| invalid("infinite mode needs --dist"))?;
            let (family, param) =
                spec.split_once(':').ok_or_else(|| invalid("--dist must look like poisson:<lambda>"))?;
            let param: f64 = param.parse().map_err(|_| invalid(format!("bad --dist parameter '{param}'")))?;
            let (support, mean) = match family {
                "poisson" => (TailGroupedSupport::poisson(param, a.epsilon)?, param),
                "geometric" => (TailGroupedSupport::geometric(param, a.epsilon)?, 1.0 / param),
                _ => return Err(invalid(format!("unknown distribution '{family}'"))),
            };
            let xs = db_sample_infinite_support(&support, &cfg)?;
            out = values_report(&xs, Some(mean));
            let _ = writeln!(out, "# head_atoms={}", support.atoms().len());
            let _ = writeln!(out, "# tail_prob={}", fmt_num(support.tail_prob()));
        }
    }
    Ok(out)
}

fn mean_of_pmf(atoms: &[f64], probs: &[f64]) -> f64 {
    atoms.iter().zip(probs).map(|(a, p)| a * p).sum()
}

fn values_report(xs: &[f64], mean: Option<f64>) -> String {
    let mut out = header(&["x".to_string()]);
    for x in xs {
        out.push_str(&fmt_num(*x));
        out.push('\n');
    }
    let sample_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let _ = writeln!(out, "# sample_mean={}", fmt_num(sample_mean));
    if let Some(m) = mean {
        let _ = writeln!(out, "# mean={}", fmt_num(m));
        let _ = writeln!(out, "# discrepancy={}", fmt_num(sample_mean - m));
    }
    out
}

fn cmd_oracle(a: &OracleArgs) -> Result<String, Failure> {
    let mut out;
    match a.query {
        Query::Law => {
            let law = enumerate_path_law(a.p, a.alpha, a.n)?;
            let mut cols: Vec<String> = (1..=a.n).map(|i| format!("x_{i}")).collect();
            cols.push("prob".into());
            out = header(&cols);
            for mask in 0..(1usize << a.n) {
                for i in 0..a.n {
                    let _ = write!(out, "{},", PathLaw::outcome(mask, i));
                }
                let _ = writeln!(out, "{}", fmt_num(law.prob(mask)));
            }
        }
        Query::Nu => {
            let nu = nu_recursion(a.p, a.alpha, a.n)?;
            out = header(&["m".into(), "k".into(), "prob".into()]);
            for m in 1..=a.n {
                for (k, w) in nu.row(m).iter().enumerate() {
                    let _ = writeln!(out, "{m},{k},{}", fmt_num(*w));
                }
            }
        }
        Query::Moments => {
            let r = moments(&enumerate_path_law(a.p, a.alpha, a.n)?);
            out = header(
                &["i", "j", "mu_i", "mu_j", "joint", "covariance", "correlation"].map(String::from),
            );
            for i in 0..a.n {
                for j in 0..a.n {
                    let fields = [r.marginals[i], r.marginals[j], r.joint[i][j], r.covariance[i][j], r.correlation[i][j]];
                    let _ = writeln!(
                        out,
                        "{},{},{}",
                        i + 1,
                        j + 1,
                        fields.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(",")
                    );
                }
            }
            let _ = writeln!(out, "# expected_sq_discrepancy={}", fmt_num(r.expected_sq_discrepancy));
            let _ = writeln!(out, "# bias={}", fmt_num(r.bias(a.p)));
        }
        Query::Variance => {
            let f = toy_objective(a.target)?;
            let v = closed_form_variance(a.p, a.alpha, &f)?;
            out = header(&["p".into(), "alpha".into(), "variance".into()]);
            let _ = writeln!(out, "{},{},{}", fmt_num(a.p), fmt_num(a.alpha), fmt_num(v));
        }
    }
    Ok(out)
}

fn cmd_sweep<W: Write>(cli: &Cli, a: &SweepArgs, stdout: &mut W) -> Outcome {
    let mut spec = SweepSpec::defaults(a.kind);
    spec.seed = cli.seed;
    spec.jobs = cli.jobs;
    if let Some(g) = a.grid {
        spec.grid = g;
    }
    if let Some(v) = &a.n_list {
        spec.n_list = v.clone();
    }
    if let Some(v) = &a.alpha_list {
        spec.alpha_list = v.clone();
    }
    if let Some(v) = &a.estimators {
        spec.estimators = v.clone();
    }
    if let Some(v) = a.mc_reps {
        spec.mc_reps = v;
    }
    if let Some(v) = a.method {
        spec.method = v;
    }
    if let Some(v) = a.target {
        spec.target = v;
    }
    let csv = sweep_csv(a.kind, &spec)?;
    match out_dir(cli)? {
        Some(dir) => {
            let tag = a.tag.clone().unwrap_or_else(|| format!("seed{}", cli.seed));
            let path = dir.join(format!("{}_{tag}.csv", a.kind));
            write_file(&path, &csv)?;
            print(stdout, &format!("{}\n", path.display()))
        }
        None => print(stdout, &csv),
    }
}

fn cmd_optimize(cli: &Cli, a: &OptimizeArgs) -> Result<String, Failure> {
    let spec = OptimRunSpec {
        theta0: a.theta0,
        target: a.target,
        step_size: a.step_size,
        steps: a.steps,
        n: a.n,
        alpha: a.alpha,
        estimator: a.estimator,
        optimizer: a.optimizer,
        maximize: a.maximize,
        seed: cli.seed,
    };
    let run = dbsurf::bench::optimize_toy(&spec)?;
    Ok(run.to_csv(&spec))
}

fn cmd_nas_gen(cli: &Cli, a: &NasGenArgs) -> Result<String, Failure> {
    let space = match &a.op_names {
        Some(names) => SearchSpace::new(a.edges, names.clone())?,
        None => SearchSpace::with_ops(a.edges, a.ops)?,
    };
    let table = generate_synthetic_table(&space, cli.seed)?;
    Ok(table.to_csv())
}

fn cmd_nas_search<W: Write>(cli: &Cli, a: &NasSearchArgs, stdout: &mut W) -> Outcome {
    let table = load_table(&a.table, None, true).map_err(|e| match e {
        dbsurf::Error::Io(io) => invalid(format!("{}: {io}", a.table.display())),
        e => e.into(),
    })?;
    let optimizer = match a.optimizer {
        NasOptimizer::Adam => OptimizerKind::adam(a.lr, a.beta1, a.beta2),
        NasOptimizer::Sgd => OptimizerKind::Sgd { lr: a.lr },
    };
    let cfg = SearchConfig {
        n_paths: a.n_paths,
        alpha: a.alpha,
        warmup_steps: a.warmup,
        train_steps: a.train,
        prune_threshold: a.prune_threshold,
        optimizer,
        seed: cli.seed,
        eval_budget: a.budget,
    };
    let result = run_search(&table, &cfg)?;
    let summary = result.summary(&table, &cfg);
    if let Some(dir) = out_dir(cli)? {
        let tag = a.tag.clone().unwrap_or_else(|| format!("seed{}", cli.seed));
        write_file(&dir.join(format!("search_summary_{tag}.txt")), &summary)?;
        write_file(&dir.join(format!("search_trajectory_{tag}.csv")), &result.trajectory_csv(&table))?;
    }
    print(stdout, &summary)
}
