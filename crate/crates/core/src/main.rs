use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracstep::bench::{self, ReferenceMode, ReportFormat, StudyConfig};
use fracstep::cq::cq_weights;
use fracstep::discretize::{assemble, Backend, Mesh};
use fracstep::problems::by_name;
use fracstep::stepper::{run, StepperConfig};
use fracstep::Error;

#[derive(Parser)]
#[command(name = "fracstep", version, about = "Corrected BDF convolution quadrature for semilinear subdiffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study over step-size halvings.
    Study(StudyArgs),
    /// Print the convolution quadrature weights ω_0..ω_n.
    Weights {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n: usize,
    },
    /// Run one problem and write nodal snapshots as CSV.
    Solve(SolveArgs),
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    problem: String,
    /// Comma-separated list.
    #[arg(long, default_value = "0.3,0.5,0.7")]
    alpha: String,
    /// Comma-separated list or an inclusive range such as `1..6`.
    #[arg(long, default_value = "1..6")]
    k: String,
    #[arg(long)]
    uncorrected: bool,
    #[arg(long, default_value_t = 50)]
    base_steps: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 200)]
    mesh: usize,
    /// Defaults to fd1d for 1D problems and fem2d for 2D ones.
    #[arg(long)]
    backend: Option<String>,
    /// `exact` or `fine[:multiplier[:k_ref]]`.
    #[arg(long = "ref", default_value = "fine:16")]
    reference: String,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    workers: Option<usize>,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print a summary table to standard error.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    mesh: usize,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    uncorrected: bool,
    #[arg(long, default_value_t = fracstep::stepper::DEFAULT_NEWTON_MAX_ITER)]
    newton_max_iter: usize,
    /// Comma-separated step indices; the final step is always included.
    #[arg(long, default_value = "")]
    snapshot: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(name: &str, text: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("bad {name} entry `{s}`")))
        })
        .collect()
}

fn parse_orders(text: &str) -> Result<Vec<usize>, Error> {
    if let Some((lo, hi)) = text.split_once("..") {
        let bad = || Error::Config(format!("bad k range `{text}`"));
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    parse_list("k", text)
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn study(args: StudyArgs) -> Result<bool, Error> {
    let problem = by_name(&args.problem)?;
    let backend = match &args.backend {
        Some(b) => b.parse()?,
        None => problem.default_backend(),
    };
    let format: ReportFormat = args.format.parse()?;
    let config = StudyConfig {
        problem: args.problem,
        alphas: parse_list("alpha", &args.alpha)?,
        ks: parse_orders(&args.k)?,
        corrected: !args.uncorrected,
        base_steps: args.base_steps,
        levels: args.levels,
        backend,
        mesh: args.mesh,
        reference: args.reference.parse::<ReferenceMode>()?,
        workers: args.workers,
        output: args.out.clone().map(|p| (p, format)),
    };
    let report = bench::run_study(&config)?;
    if args.table {
        eprint!("{}", bench::render_table(&report));
    }
    match &args.out {
        Some(path) => bench::emit_report(&report, format, path)?,
        None => print!(
            "{}",
            match format {
                ReportFormat::Csv => bench::to_csv(&report),
                ReportFormat::Json => bench::to_json(&report),
            }
        ),
    }
    Ok(!report.has_failures())
}

fn weights(k: usize, alpha: f64, n: usize) -> Result<bool, Error> {
    let w = cq_weights(k, alpha, n)?;
    let mut text = String::new();
    for v in w.as_slice() {
        let _ = writeln!(text, "{v:.16e}");
    }
    print!("{text}");
    Ok(true)
}

fn solve(args: SolveArgs) -> Result<bool, Error> {
    let mut problem = by_name(&args.problem)?;
    if let Some(alpha) = args.alpha {
        problem = problem.with_alpha(alpha)?;
    }
    let backend: Backend = match &args.backend {
        Some(b) => b.parse()?,
        None => problem.default_backend(),
    };
    if backend.dim() != problem.dim {
        return Err(Error::Config(format!(
            "backend {backend} does not match the {}D problem {}",
            problem.dim, problem.name
        )));
    }
    let mesh = Mesh::new(problem.dim, args.mesh)?;
    let ops = assemble(backend, &mesh, problem.kappa)?;
    let config = StepperConfig::new(args.k, problem.alpha, args.steps, problem.final_time)?
        .with_correction(!args.uncorrected)
        .with_newton_max_iter(args.newton_max_iter);
    let snapshot_at: Vec<usize> = parse_list("snapshot", &args.snapshot)?;
    if let Some(bad) = snapshot_at.iter().find(|&&n| n > args.steps) {
        return Err(Error::Config(format!("snapshot {bad} beyond the last step {}", args.steps)));
    }
    let traj = run(&config, &ops, &problem.rhs, &problem.initial_nodal(&mesh), &snapshot_at)?;

    let mut text = String::new();
    let coord_names: &[&str] = if problem.dim == 2 { &["x", "y"] } else { &["x"] };
    let mut header: Vec<String> = coord_names.iter().map(|s| s.to_string()).collect();
    header.extend(traj.snapshots.keys().map(|n| format!("u_{n}")));
    let _ = writeln!(text, "{}", header.join(","));
    for row in 0..mesh.num_interior() {
        let c = mesh.coords(row);
        let mut fields: Vec<String> = c[..problem.dim].iter().map(|v| format!("{v:.16e}")).collect();
        fields.extend(traj.snapshots.values().map(|u| format!("{:.16e}", u[row])));
        let _ = writeln!(text, "{}", fields.join(","));
    }
    write_output(args.out.as_ref(), &text)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Study(args) => study(args),
        Command::Weights { k, alpha, n } => weights(k, alpha, n),
        Command::Solve(args) => solve(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("fracstep: some runs failed; see the report");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("fracstep: {e}");
            if e.is_solver_failure() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
