use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use gmrf_logdet::likelihood::{fit_hyperparams, FitBackend, FitConfig, Schedule};
use gmrf_logdet::mtx::{read_matrix_market_file, write_matrix_market_file};
use gmrf_logdet::probing::color_distance_k;
use gmrf_logdet::quadrature::{
    build_log_quadrature, choose_order, estimate_spectral_bounds, SpectralBounds, DEFAULT_MARGIN,
};
use gmrf_logdet::spde::build_precision;
use gmrf_logdet::{
    AdjacencyGraph, Boundary, CsrMatrix, Error, Estimator, GridSpec, Hyperparams, LogDetMethod,
    ProbingMode, SolverConfig,
};

const THREADS_ENV: &str = "GMRF_LOGDET_THREADS";

#[derive(Parser)]
#[command(name = "gmrf-logdet", version, about = "Log-determinants of sparse GMRF precision matrices")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the SPDE precision of a grid as Matrix Market
    Build(BuildArgs),
    /// Greedy distance-k colouring
    Color(ColorArgs),
    /// Quadrature nodes and weights for log on a spectral interval
    QuadratureTable(QuadArgs),
    /// Estimate log det Q
    Logdet(LogdetArgs),
    /// Fit (kappa, tau) to observed field values
    Fit(FitArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Grid extents, e.g. 64x64 or 128x128x8
    #[arg(long)]
    grid: Option<GridSpec>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    kappa: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    tau: f64,
    #[arg(long, default_value = "neumann")]
    boundary: Boundary,
}

impl GridArgs {
    fn grid(&self) -> Result<GridSpec> {
        let grid = self.grid.clone().context("--grid is required")?;
        Ok(grid.with_boundary(self.boundary))
    }

    fn precision(&self) -> Result<CsrMatrix> {
        Ok(build_precision(&self.grid()?, &Hyperparams::new(self.kappa, self.tau)?)?)
    }
}

#[derive(Args, Clone)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["grid", "matrix"])))]
struct SourceArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Matrix Market file (real symmetric coordinate)
    #[arg(long)]
    matrix: Option<PathBuf>,
}

impl SourceArgs {
    fn load(&self) -> Result<CsrMatrix> {
        match &self.matrix {
            Some(path) => read_matrix_market_file(path)
                .with_context(|| format!("reading {}", path.display())),
            None => self.grid.precision(),
        }
    }

    fn describe(&self) -> Value {
        match &self.matrix {
            Some(path) => json!({ "matrix": path.display().to_string() }),
            None => json!({
                "grid": self.grid.grid.as_ref().map(|g| g.to_string()),
                "kappa": self.grid.kappa,
                "tau": self.grid.tau,
                "boundary": format!("{:?}", self.grid.boundary).to_lowercase(),
            }),
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Output .mtx path
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    /// Nearest-neighbour stencil of the Laplacian (grids only)
    Stencil,
    /// Sparsity graph of the matrix itself
    Matrix,
}

#[derive(Args)]
struct ColorArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    k: usize,
    /// Graph to colour; grids default to the stencil, files to the matrix
    #[arg(long, value_enum)]
    graph: Option<GraphKind>,
    /// Write the colour of each node, one per line
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct QuadArgs {
    /// Quadrature order
    #[arg(short = 'N', long = "order", alias = "N")]
    order: Option<usize>,
    #[arg(long)]
    lmin: Option<f64>,
    #[arg(long)]
    lmax: Option<f64>,
    /// Bounds from Lanczos on a matrix instead of --lmin/--lmax
    #[arg(long)]
    grid: Option<GridSpec>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    kappa: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    tau: f64,
    #[arg(long, default_value = "neumann")]
    boundary: Boundary,
    /// Target scalar error when choosing the order
    #[arg(long, default_value_t = 1e-4)]
    target: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Probing,
    Hutchinson,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "signed")]
    mode: ProbingMode,
    /// Quadrature order (default: smallest with scalar error below 0.1 x tol)
    #[arg(short = 'N', long = "order", alias = "N")]
    order: Option<usize>,
}

#[derive(Args)]
struct LogdetArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_enum, default_value = "probing")]
    method: MethodArg,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    s: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    solve: SolveArgs,
    /// Also write the JSON result here
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethodArg {
    Exact,
    Probing,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    grid: GridSpec,
    #[arg(long, default_value = "neumann")]
    boundary: Boundary,
    /// Whitespace-separated field values in row-major grid order
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    init_kappa: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    init_tau: f64,
    #[arg(long, default_value = "2:20,4:10,6:10")]
    schedule: Schedule,
    #[arg(long, value_enum, default_value = "probing")]
    method: FitMethodArg,
    #[command(flatten)]
    solve: SolveArgs,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Flag combinations clap cannot express; reported like clap usage errors.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn solver_config(args: &SolveArgs) -> Result<SolverConfig> {
    let cfg = SolverConfig::with_tol(args.tol);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn emit(value: &Value, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = output {
        fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    print_stdout(&text)
}

// A closed pipe (`| head`) is not an error worth reporting.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_build(args: &BuildArgs) -> Result<Value> {
    let q = args.grid.precision()?;
    write_matrix_market_file(&q, &args.output)
        .with_context(|| format!("writing {}", args.output.display()))?;
    Ok(json!({
        "command": "build",
        "grid": args.grid.grid()?.to_string(),
        "kappa": args.grid.kappa,
        "tau": args.grid.tau,
        "n": q.n(),
        "nnz": q.nnz(),
        "output": args.output.display().to_string(),
    }))
}

fn cmd_color(args: &ColorArgs) -> Result<Value> {
    if args.k == 0 {
        return Err(usage("--k must be >= 1"));
    }
    let kind = match (args.graph, &args.source.matrix) {
        (Some(GraphKind::Stencil), Some(_)) => {
            return Err(usage("--graph stencil needs --grid"));
        }
        (Some(kind), _) => kind,
        (None, Some(_)) => GraphKind::Matrix,
        (None, None) => GraphKind::Stencil,
    };
    let graph = match kind {
        GraphKind::Stencil => args.source.grid.grid()?.stencil_graph(),
        GraphKind::Matrix => AdjacencyGraph::from_matrix(&args.source.load()?),
    };
    let coloring = color_distance_k(&graph, args.k)?;
    if let Some(path) = &args.output {
        let body: String = coloring.color_of.iter().map(|c| format!("{c}\n")).collect();
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(json!({
        "command": "color",
        "source": args.source.describe(),
        "graph": match kind { GraphKind::Stencil => "stencil", GraphKind::Matrix => "matrix" },
        "k": args.k,
        "n": graph.n(),
        "num_colors": coloring.num_colors,
        "output": args.output.as_ref().map(|p| p.display().to_string()),
    }))
}

fn cmd_quadrature(args: &QuadArgs) -> Result<Value> {
    let bounds = match (args.lmin, args.lmax, &args.grid, &args.matrix) {
        (Some(lo), Some(hi), None, None) => SpectralBounds::new(lo, hi)?,
        (None, None, Some(grid), None) => {
            let grid = grid.clone().with_boundary(args.boundary);
            let q = build_precision(&grid, &Hyperparams::new(args.kappa, args.tau)?)?;
            estimate_spectral_bounds(&q, 200, DEFAULT_MARGIN)?.bounds
        }
        (None, None, None, Some(path)) => {
            let q = read_matrix_market_file(path)?;
            estimate_spectral_bounds(&q, 200, DEFAULT_MARGIN)?.bounds
        }
        _ => return Err(usage("give either --lmin and --lmax, or exactly one of --grid/--matrix")),
    };
    let order = match args.order {
        Some(order) => order,
        None => choose_order(bounds, args.target)?,
    };
    let rule = build_log_quadrature(bounds, order)?;
    let nodes: Vec<Value> = rule
        .shifts
        .iter()
        .zip(&rule.weights)
        .map(|(s, w)| json!({ "alpha": [w.re, w.im], "sigma": [s.re, s.im] }))
        .collect();
    Ok(json!({
        "command": "quadrature-table",
        "order": order,
        "lambda_min": bounds.lambda_min,
        "lambda_max": bounds.lambda_max,
        "modulus": rule.modulus,
        "rate_per_node": rule.rate_per_node(),
        "predicted_error": rule.max_scalar_error(256),
        "nodes": nodes,
    }))
}

fn cmd_logdet(args: &LogdetArgs) -> Result<Value> {
    let solver = solver_config(&args.solve)?;
    let method = match args.method {
        MethodArg::Exact => LogDetMethod::ExactDense,
        MethodArg::Probing if args.k == 0 => return Err(usage("--k must be >= 1")),
        MethodArg::Probing => LogDetMethod::Probing {
            k: args.k,
            mode: args.solve.mode,
        },
        MethodArg::Hutchinson if args.s == 0 => return Err(usage("--s must be >= 1")),
        MethodArg::Hutchinson => LogDetMethod::Hutchinson { s: args.s },
    };
    let q = args.source.load()?;
    let mut estimator = Estimator::new(method);
    estimator.solver = solver;
    estimator.seed = args.solve.seed;
    estimator.order = args.solve.order;
    estimator.level = args.level;
    let start = Instant::now();
    let est = estimator.estimate(&q)?;
    let wall = start.elapsed().as_secs_f64();
    Ok(json!({
        "command": "logdet",
        "source": args.source.describe(),
        "n": q.n(),
        "value": est.value,
        "method": est.method,
        "num_vectors": est.num_vectors,
        "seed_iterations_total": est.stats.seed_iterations,
        "stats": est.stats,
        "quadrature_order": est.quadrature_order,
        "bounds": est.bounds,
        "confidence": est.confidence,
        "tol": solver.rel_tol,
        "seed": args.solve.seed,
        "threads": rayon::current_num_threads(),
        "wall_time_s": wall,
    }))
}

fn read_data(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<f64>()
                .with_context(|| format!("{}: value {} ({tok:?}) is not a number", path.display(), i + 1))
        })
        .collect()
}

fn cmd_fit(args: &FitArgs) -> Result<Value> {
    let solver = solver_config(&args.solve)?;
    let grid = args.grid.clone().with_boundary(args.boundary);
    let x = read_data(&args.data)?;
    if x.len() != grid.size() {
        bail!("data has {} values, grid {} has {}", x.len(), grid, grid.size());
    }
    let backend = match args.method {
        FitMethodArg::Exact => FitBackend::Exact,
        FitMethodArg::Probing => FitBackend::Probing {
            mode: args.solve.mode,
        },
    };
    let cfg = FitConfig {
        schedule: args.schedule.clone(),
        backend,
        solver,
        seed: args.solve.seed,
        order: args.solve.order,
        ..FitConfig::default()
    };
    let init = Hyperparams::new(args.init_kappa, args.init_tau)?;
    let start = Instant::now();
    let (h, trace) = fit_hyperparams(&x, &grid, init, &cfg)?;
    Ok(json!({
        "command": "fit",
        "grid": grid.to_string(),
        "kappa": h.kappa,
        "tau": h.tau,
        "schedule": args.schedule.to_string(),
        "backend": backend,
        "seed": args.solve.seed,
        "trace": trace,
        "wall_time_s": start.elapsed().as_secs_f64(),
    }))
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_)) => "io",
        Some(Error::Parse { .. }) => "parse",
        Some(Error::InvalidArgument(_)) | Some(Error::InvalidMatrix(_)) | Some(Error::DimensionMismatch { .. }) => {
            "input"
        }
        Some(Error::DenseCapExceeded { .. }) => "dense_cap",
        Some(Error::FitAborted { .. }) => "fit_aborted",
        Some(_) => "numerical",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "input",
    }
}

fn run(cli: &Cli) -> Result<Value> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let (value, output) = match &cli.command {
        Command::Build(a) => (cmd_build(a)?, None),
        Command::Color(a) => (cmd_color(a)?, None),
        Command::QuadratureTable(a) => (cmd_quadrature(a)?, None),
        Command::Logdet(a) => (cmd_logdet(a)?, a.output.as_deref()),
        Command::Fit(a) => (cmd_fit(a)?, a.output.as_deref()),
    };
    emit(&value, output)?;
    Ok(value)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) if err.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {err}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(err) => {
            let mut body = json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": format!("{err:#}"),
                }
            });
            if let Some(Error::FitAborted { trace, .. }) = err.downcast_ref::<Error>() {
                body["error"]["trace"] = serde_json::to_value(trace).unwrap_or(Value::Null);
            }
            let _ = print_stdout(&serde_json::to_string_pretty(&body).unwrap_or_default());
            ExitCode::from(1)
        }
    }
}
