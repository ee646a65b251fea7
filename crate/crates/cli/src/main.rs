use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uotkit::color::{read_image, write_image, ColorSolver, ColorTransferConfig};
use uotkit::io::{read_problem, write_csv, write_json, write_plan, write_problem, write_trace};
use uotkit::oracle::{
    tau_scaling_study, theorem2_check, theorem4_check, theorem4_constant, BoundReport,
    TauStudyOptions,
};
use uotkit::problem::{sparsity_ratio, UotProblem};
use uotkit::rounding::gem_ot;
use uotkit::solvers::{gem_ruot, gem_uot, sinkhorn_uot, GemConfig, SinkhornConfig, SolveReport};
use uotkit::synthetic::{generate_synthetic, ExperimentConfig};
use uotkit::UotError;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "uotkit", version, about = "Unbalanced optimal transport toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic problem as JSON.
    Generate(GenerateArgs),
    /// Solve a UOT problem and write the plan and a report.
    Solve(SolveArgs),
    /// Approximate balanced OT plan by GEM-UOT and rounding.
    RetrieveOt(RetrieveArgs),
    /// Marginal gap of the UOT optimum against its bound over a τ grid.
    CheckThm2(BoundArgs),
    /// OT − UOT against M/τ over a τ grid.
    CheckThm4(BoundArgs),
    /// Iteration counts of GEM-UOT and Sinkhorn over a τ grid.
    TauStudy(TauStudyArgs),
    /// Recolor a source image with the palette of a target image.
    ColorTransfer(ColorArgs),
    /// Plan sparsity of GEM-UOT and Sinkhorn on one problem.
    Sparsity(SparsityArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4.0)]
    alpha: f64,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    #[arg(long, default_value_t = 55.0)]
    tau: f64,
    /// Put both measures on the probability simplex (overrides --alpha/--beta).
    #[arg(long)]
    simplex: bool,
    #[arg(long, default_value = "problem.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverChoice {
    GemUot,
    GemRuot,
    Sinkhorn,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverChoice::GemUot)]
    solver: SolverChoice,
    /// Overrides τ from the problem file.
    #[arg(long)]
    tau: Option<f64>,
    /// Regularization weight, or `auto`.
    #[arg(long, default_value = "auto")]
    eta: String,
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long)]
    max_iters: Option<u64>,
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value = "plan.csv")]
    out: PathBuf,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value = "plan.csv")]
    out: PathBuf,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
}

/// Problem source shared by the studies: a file, or a seeded instance.
#[derive(Args)]
struct InstanceArgs {
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
    taus: Vec<f64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TauStudyArgs {
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long)]
    sinkhorn_eta: Option<f64>,
    #[arg(long, default_value_t = 200_000)]
    gem_max_iters: u64,
    #[arg(long, default_value_t = 20_000_000)]
    sinkhorn_max_iters: u64,
    #[arg(long, default_value = "tau_study.csv")]
    out: PathBuf,
    /// JSON with the rows and the model fits.
    #[arg(long, default_value = "tau_study.json")]
    report: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorSolverChoice {
    GemUot,
    Sinkhorn,
}

#[derive(Args)]
struct ColorArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, value_enum, default_value_t = ColorSolverChoice::GemUot)]
    solver: ColorSolverChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to 10‖C‖∞.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    max_iters: u64,
    #[arg(long, default_value = "recolored.ppm")]
    out: PathBuf,
    #[arg(long, default_value = "sparsity.json")]
    report: PathBuf,
}

#[derive(Args)]
struct SparsityArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-10)]
    threshold: f64,
    /// Sinkhorn entropic weight; defaults to 2ε/(α+β).
    #[arg(long)]
    sinkhorn_eta: Option<f64>,
    #[arg(long, default_value = "sparsity.csv")]
    out: PathBuf,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    version: &'static str,
    /// `F_a` at the averaged potentials (GEM-RUOT only).
    distance_estimate: Option<f64>,
    #[serde(flatten)]
    report: &'a SolveReport,
}

#[derive(Serialize)]
struct Versioned<T: Serialize> {
    version: &'static str,
    #[serde(flatten)]
    inner: T,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                UotError::Divergence { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(command: Command) -> uotkit::Result<()> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Solve(args) => solve(args),
        Command::RetrieveOt(args) => retrieve(args),
        Command::CheckThm2(args) => bound_study(args, false),
        Command::CheckThm4(args) => bound_study(args, true),
        Command::TauStudy(args) => tau_study(args),
        Command::ColorTransfer(args) => color(args),
        Command::Sparsity(args) => sparsity(args),
    }
}

fn generate(args: GenerateArgs) -> uotkit::Result<()> {
    let config = if args.simplex {
        ExperimentConfig::simplex(args.seed, args.n, args.tau)
    } else {
        ExperimentConfig {
            seed: args.seed,
            n: args.n,
            alpha: args.alpha,
            beta: args.beta,
            tau: args.tau,
            ..ExperimentConfig::default()
        }
    };
    write_problem(&args.out, &generate_synthetic(&config)?)
}

fn load(path: &Path, tau: Option<f64>) -> uotkit::Result<UotProblem> {
    let p = read_problem(path)?;
    let p = match tau {
        Some(t) => p.with_tau(t)?,
        None => p,
    };
    if let Some(w) = p.tau_assumption_warning(1.0) {
        log::warn!("{w}");
    }
    Ok(p)
}

fn parse_eta(text: &str) -> uotkit::Result<Option<f64>> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    text.parse()
        .map(Some)
        .map_err(|_| UotError::InvalidParameter(format!("--eta must be `auto` or a number, got `{text}`")))
}

fn solve(args: SolveArgs) -> uotkit::Result<()> {
    let p = load(&args.problem, args.tau)?;
    let eta = parse_eta(&args.eta)?;
    let record_trace = args.trace.is_some();
    let (plan, report, distance) = match args.solver {
        SolverChoice::GemUot | SolverChoice::GemRuot => {
            let mut config = GemConfig::new(args.epsilon);
            config.eta = eta;
            config.gap_tol = args.gap_tol;
            config.record_trace = record_trace;
            if let Some(k) = args.max_iters {
                config.max_iters = k;
            }
            if matches!(args.solver, SolverChoice::GemUot) {
                let (x, r) = gem_uot(&p, &config)?;
                (x, r, None)
            } else {
                let out = gem_ruot(&p, &config)?;
                (out.plan, out.report, Some(out.value))
            }
        }
        SolverChoice::Sinkhorn => {
            let mass = p.a().total() + p.b().total();
            let mut config = SinkhornConfig::new(eta.unwrap_or(2.0 * args.epsilon / mass), args.epsilon);
            config.record_trace = record_trace;
            if let Some(k) = args.max_iters {
                config.max_iters = k;
            }
            let (x, r) = sinkhorn_uot(&p, &config)?;
            (x, r, None)
        }
    };
    if let Some(path) = &args.trace {
        write_trace(path, &report.trace)?;
    }
    write_plan(&args.out, plan.entries())?;
    write_json(
        &args.report,
        &SolveOutput {
            version: VERSION,
            distance_estimate: distance,
            report: &report,
        },
    )
}

fn retrieve(args: RetrieveArgs) -> uotkit::Result<()> {
    let p = read_problem(&args.problem)?;
    let (y, report) = gem_ot(p.cost(), p.a(), p.b(), args.epsilon)?;
    write_plan(&args.out, y.entries())?;
    write_json(&args.report, &report)
}

fn instance(args: &InstanceArgs) -> uotkit::Result<UotProblem> {
    match &args.problem {
        Some(path) => read_problem(path),
        None => generate_synthetic(&ExperimentConfig::simplex(args.seed, args.n, 1.0)),
    }
}

fn bound_rows(rows: &[BoundReport]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                format!("{}", r.tau),
                format!("{:e}", r.empirical_gap),
                format!("{:e}", r.theoretical_bound),
                r.satisfied.to_string(),
            ]
        })
        .collect()
}

fn bound_study(args: BoundArgs, distance: bool) -> uotkit::Result<()> {
    let p = instance(&args.instance)?;
    let rows: Vec<BoundReport> = if distance {
        log::info!("M = {}", theorem4_constant(&p));
        let rows = theorem4_check(&p, &args.taus)?;
        for r in rows.iter().filter(|r| !r.lower_satisfied) {
            log::warn!("tau = {}: OT − UOT = {} below the sandwich tolerance", r.bound.tau, r.bound.empirical_gap);
        }
        rows.into_iter().map(|r| r.bound).collect()
    } else {
        theorem2_check(&p, &args.taus)?
    };
    let header = ["tau", "empirical", "bound", "satisfied"];
    let rows = bound_rows(&rows);
    match &args.out {
        Some(path) => write_csv(path, &header, &rows),
        None => {
            println!("{}", header.join(","));
            for r in rows {
                println!("{}", r.join(","));
            }
            Ok(())
        }
    }
}

fn tau_study(args: TauStudyArgs) -> uotkit::Result<()> {
    let p = match &args.problem {
        Some(path) => read_problem(path)?,
        None => generate_synthetic(&ExperimentConfig {
            seed: args.seed,
            n: args.n,
            ..ExperimentConfig::default()
        })?,
    };
    let options = TauStudyOptions {
        epsilon: args.epsilon,
        sinkhorn_eta: args.sinkhorn_eta,
        gem_max_iters: args.gem_max_iters,
        sinkhorn_max_iters: args.sinkhorn_max_iters,
    };
    let study = tau_scaling_study(&p, &args.taus, &options)?;
    let count = |k: Option<u64>| k.map_or(String::new(), |k| k.to_string());
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.tau),
                format!("{:e}", r.reference),
                count(r.gem_iterations),
                count(r.sinkhorn_iterations),
                format!("{:e}", r.gem_objective),
                format!("{:e}", r.sinkhorn_objective),
                format!("{:e}", r.sinkhorn_eta),
            ]
        })
        .collect();
    write_csv(
        &args.out,
        &[
            "tau",
            "reference",
            "gem_iterations",
            "sinkhorn_iterations",
            "gem_objective",
            "sinkhorn_objective",
            "sinkhorn_eta",
        ],
        &rows,
    )?;
    write_json(
        &args.report,
        &Versioned {
            version: VERSION,
            inner: &study,
        },
    )
}

fn color(args: ColorArgs) -> uotkit::Result<()> {
    let src = read_image(&args.src)?;
    let dst = read_image(&args.dst)?;
    let config = ColorTransferConfig {
        n: args.n,
        seed: args.seed,
        solver: match args.solver {
            ColorSolverChoice::GemUot => ColorSolver::GemUot,
            ColorSolverChoice::Sinkhorn => ColorSolver::Sinkhorn,
        },
        tau: args.tau,
        epsilon: args.epsilon,
        eta: args.eta,
        max_iters: args.max_iters,
    };
    let out = uotkit::color::color_transfer(&src, &dst, &config)?;
    write_image(&args.out, &out.image)?;
    write_json(&args.report, &out.report)
}

fn sparsity(args: SparsityArgs) -> uotkit::Result<()> {
    let p = load(&args.problem, None)?;
    let mut gem = GemConfig::new(args.epsilon);
    gem.early_stop = false;
    let (xg, rg) = gem_uot(&p, &gem)?;
    let mass = p.a().total() + p.b().total();
    let eta = args.sinkhorn_eta.unwrap_or(2.0 * args.epsilon / mass);
    let (xs, rs) = sinkhorn_uot(&p, &SinkhornConfig::new(eta, args.epsilon))?;
    let row = |name: &str, x, r: &SolveReport| {
        vec![
            name.to_string(),
            format!("{:e}", args.threshold),
            format!("{}", sparsity_ratio(x, args.threshold)),
            format!("{}", sparsity_ratio(x, 0.0)),
            format!("{:e}", r.final_objective),
            r.iterations.to_string(),
        ]
    };
    write_csv(
        &args.out,
        &["solver", "threshold", "sparsity", "sparsity_zero", "objective", "iterations"],
        &[row("gem-uot", &xg, &rg), row("sinkhorn", &xs, &rs)],
    )
}
