//! Convergence studies: refinement ladders, error measurement against a
//! reference, observed orders and report output.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cq::MAX_ORDER;
use crate::discretize::{assemble, Backend, Mesh, OperatorPair};
use crate::error::{Error, Result};
use crate::problems::{by_name, ProblemSpec};
use crate::stepper::{run, StepperConfig, DEFAULT_NEWTON_TOL};

/// Floor used with an exact oracle: the accuracy of the Mittag-Leffler evaluation.
pub const ORACLE_NOISE_FLOOR: f64 = 1e-13;
/// Rates are only reported when both errors exceed this multiple of the floor.
pub const FLOOR_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ReferenceMode {
    ExactOracle,
    FineRun { multiplier: usize, k_ref: usize },
}

impl Default for ReferenceMode {
    fn default() -> Self {
        ReferenceMode::FineRun {
            multiplier: 16,
            k_ref: 6,
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceMode::ExactOracle => f.write_str("exact"),
            ReferenceMode::FineRun { multiplier, k_ref } => write!(f, "fine:{multiplier}:{k_ref}"),
        }
    }
}

impl FromStr for ReferenceMode {
    type Err = Error;

    /// `exact`, `fine`, `fine:<multiplier>` or `fine:<multiplier>:<k_ref>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad reference `{s}` (expected exact or fine[:mult[:k]])"));
        let mut parts = s.split(':');
        match parts.next() {
            Some("exact") | Some("exact-oracle") if parts.clone().next().is_none() => {
                Ok(ReferenceMode::ExactOracle)
            }
            Some("fine") | Some("fine-run") => {
                let multiplier = parts.next().map(|p| p.parse().map_err(|_| bad())).transpose()?;
                let k_ref = parts.next().map(|p| p.parse().map_err(|_| bad())).transpose()?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(ReferenceMode::FineRun {
                    multiplier: multiplier.unwrap_or(16),
                    k_ref: k_ref.unwrap_or(6),
                })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub problem: String,
    pub alphas: Vec<f64>,
    pub ks: Vec<usize>,
    pub corrected: bool,
    pub base_steps: usize,
    pub levels: usize,
    pub backend: Backend,
    pub mesh: usize,
    pub reference: ReferenceMode,
    /// Worker threads for independent runs; `None` uses all cores.
    pub workers: Option<usize>,
    pub output: Option<(PathBuf, ReportFormat)>,
}

impl StudyConfig {
    /// Acceptance-scale defaults for `problem`.
    pub fn new(problem: &str) -> Self {
        Self {
            problem: problem.to_string(),
            alphas: vec![0.3, 0.5, 0.7],
            ks: (1..=MAX_ORDER).collect(),
            corrected: true,
            base_steps: 50,
            levels: 4,
            backend: Backend::Fd1d,
            mesh: 200,
            reference: ReferenceMode::default(),
            workers: None,
            output: None,
        }
    }

    pub fn finest_steps(&self) -> usize {
        self.base_steps << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<ProblemSpec> {
        let problem = by_name(&self.problem)?;
        if self.alphas.is_empty() || self.ks.is_empty() {
            return Err(Error::Config("need at least one alpha and one k".into()));
        }
        for &alpha in &self.alphas {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
            }
        }
        for &k in &self.ks {
            if !(1..=MAX_ORDER).contains(&k) {
                return Err(Error::Config(format!("k {k} outside 1..={MAX_ORDER}")));
            }
        }
        let k_max = *self.ks.iter().max().unwrap();
        if self.base_steps < k_max {
            return Err(Error::Config(format!(
                "base steps {} below the largest order {k_max}",
                self.base_steps
            )));
        }
        if !(1..=24).contains(&self.levels) {
            return Err(Error::Config(format!("levels {} outside 1..=24", self.levels)));
        }
        if self.mesh < 2 {
            return Err(Error::Config(format!("mesh {} needs at least 2 cells", self.mesh)));
        }
        if self.backend.dim() != problem.dim {
            return Err(Error::Config(format!(
                "backend {} is {}D but problem {} is {}D",
                self.backend,
                self.backend.dim(),
                problem.name,
                problem.dim
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be positive".into()));
        }
        match self.reference {
            ReferenceMode::ExactOracle => {
                if problem.exact.is_none() {
                    return Err(Error::Config(format!(
                        "problem {} has no exact oracle; use a fine-run reference",
                        problem.name
                    )));
                }
            }
            ReferenceMode::FineRun { multiplier, k_ref } => {
                if multiplier < 4 {
                    return Err(Error::Config(format!(
                        "reference multiplier {multiplier} must be at least 4"
                    )));
                }
                if !(1..=MAX_ORDER).contains(&k_ref) {
                    return Err(Error::Config(format!("reference k {k_ref} outside 1..={MAX_ORDER}")));
                }
            }
        }
        Ok(problem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub steps: usize,
    pub tau: f64,
    pub error: Option<f64>,
    /// `log₂(e_{ℓ-1}/e_ℓ)`; absent at the first level or below the noise floor.
    pub rate: Option<f64>,
    pub wall_ms: f64,
    pub newton_avg: Option<f64>,
    pub newton_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub alpha: f64,
    pub k: usize,
    pub expected_rate: f64,
    pub tail_rate: Option<f64>,
    pub noise_floor: f64,
    pub levels: Vec<LevelReport>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub backend: Backend,
    pub mesh: usize,
    pub corrected: bool,
    pub reference: ReferenceMode,
    pub cells: Vec<CellReport>,
}

impl ConvergenceReport {
    pub fn empty(problem: &str, backend: Backend, mesh: usize, corrected: bool) -> Self {
        Self {
            problem: problem.to_string(),
            backend,
            mesh,
            corrected,
            reference: ReferenceMode::default(),
            cells: Vec::new(),
        }
    }

    pub fn cell(&self, alpha: f64, k: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.alpha == alpha && c.k == k)
    }

    /// Copy with all wall times zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for level in out.cells.iter_mut().flat_map(|c| c.levels.iter_mut()) {
            level.wall_ms = 0.0;
        }
        out
    }

    pub fn has_failures(&self) -> bool {
        self.cells.iter().any(|c| c.failure.is_some())
    }
}

/// `r_ℓ = log₂(e_ℓ / e_{ℓ+1})`.
pub fn observed_order(errors: &[f64]) -> Result<Vec<f64>> {
    if errors.len() < 2 {
        return Err(Error::Precondition("need at least two errors".into()));
    }
    if let Some(bad) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::range("error", *bad, "errors must be positive and finite"));
    }
    Ok(errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect())
}

/// Mean of the last two entries; `None` when fewer than two are available.
pub fn tail_rate(rates: &[Option<f64>]) -> Option<f64> {
    match rates {
        [.., Some(a), Some(b)] => Some(0.5 * (a + b)),
        _ => None,
    }
}

/// `1` without correction; `k` for linear problems and `min(k, 1 + 2α)`
/// for nonlinear ones with correction.
pub fn expected_rate(k: usize, alpha: f64, corrected: bool, linear: bool) -> f64 {
    match (corrected, linear) {
        (false, _) => 1.0,
        (true, true) => k as f64,
        (true, false) => (k as f64).min(1.0 + 2.0 * alpha),
    }
}

struct Setup {
    problem: ProblemSpec,
    mesh: Mesh,
    ops: OperatorPair,
    u0: Vec<f64>,
}

struct Reference {
    values: Option<Vec<f64>>,
    floor: f64,
    failure: Option<String>,
}

struct RunOutcome {
    state: Result<Vec<f64>>,
    wall_ms: f64,
    newton_avg: f64,
    newton_max: usize,
}

fn timed_run(setup: &Setup, config: &StepperConfig) -> RunOutcome {
    let start = Instant::now();
    let result = run(config, &setup.ops, &setup.problem.rhs, &setup.u0, &[]);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(traj) => RunOutcome {
            newton_avg: traj.mean_newton_iters(),
            newton_max: traj.max_newton_iters(),
            state: Ok(traj.final_state().to_vec()),
            wall_ms,
        },
        Err(e) => RunOutcome {
            state: Err(e),
            wall_ms,
            newton_avg: 0.0,
            newton_max: 0,
        },
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn reference_for(config: &StudyConfig, setup: &Setup, alpha: f64) -> Reference {
    let problem = &setup.problem;
    let build = || -> Result<Reference> {
        match config.reference {
            ReferenceMode::ExactOracle => {
                let oracle = problem.exact.expect("validated");
                Ok(Reference {
                    values: Some(oracle.nodal(config.backend, &setup.mesh, problem.final_time)?),
                    floor: ORACLE_NOISE_FLOOR,
                    failure: None,
                })
            }
            ReferenceMode::FineRun { multiplier, k_ref } => {
                let n_ref = multiplier * config.finest_steps();
                let fine = StepperConfig::new(k_ref, alpha, n_ref, problem.final_time)?;
                let values = timed_run(setup, &fine).state?;
                // self-consistency: the finest study level with the reference
                // order, solved to a looser Newton tolerance
                let coarse = StepperConfig::new(k_ref, alpha, config.finest_steps(), problem.final_time)?;
                let tight = timed_run(setup, &coarse).state?;
                let loose = timed_run(setup, &coarse.with_newton_tol(DEFAULT_NEWTON_TOL * 1e4)).state?;
                Ok(Reference {
                    values: Some(values),
                    floor: max_diff(&tight, &loose).max(f64::EPSILON),
                    failure: None,
                })
            }
        }
    };
    build().unwrap_or_else(|e| Reference {
        values: None,
        floor: f64::NAN,
        failure: Some(format!("reference: {e}")),
    })
}

fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Runs every `(α, k, ℓ)` cell of the study. Step failures are recorded per
/// cell; only invalid configurations abort the study.
pub fn run_study(config: &StudyConfig) -> Result<ConvergenceReport> {
    let base = config.validate()?;
    let mesh = Mesh::new(base.dim, config.mesh)?;
    let ops = assemble(config.backend, &mesh, base.kappa)?;
    let setups: Vec<Setup> = config
        .alphas
        .iter()
        .map(|&alpha| {
            let problem = base.clone().with_alpha(alpha)?;
            let u0 = problem.initial_nodal(&mesh);
            Ok(Setup {
                problem,
                mesh: mesh.clone(),
                ops: ops.clone(),
                u0,
            })
        })
        .collect::<Result<_>>()?;
    let linear = base.is_linear();

    let cells = in_pool(config.workers, || {
        let references: Vec<Reference> = setups
            .par_iter()
            .zip(config.alphas.par_iter())
            .map(|(setup, &alpha)| reference_for(config, setup, alpha))
            .collect();

        let jobs: Vec<(usize, usize, usize)> = (0..config.alphas.len())
            .flat_map(|a| config.ks.iter().flat_map(move |&k| (0..config.levels).map(move |l| (a, k, l))))
            .collect();
        let outcomes: Vec<RunOutcome> = jobs
            .par_iter()
            .map(|&(a, k, level)| {
                let setup = &setups[a];
                let steps = config.base_steps << level;
                match StepperConfig::new(k, config.alphas[a], steps, setup.problem.final_time) {
                    Ok(c) => timed_run(setup, &c.with_correction(config.corrected)),
                    Err(e) => RunOutcome {
                        state: Err(e),
                        wall_ms: 0.0,
                        newton_avg: 0.0,
                        newton_max: 0,
                    },
                }
            })
            .collect();

        let mut outcomes = outcomes.into_iter();
        let mut cells = Vec::new();
        for (a, &alpha) in config.alphas.iter().enumerate() {
            let reference = &references[a];
            for &k in &config.ks {
                let runs: Vec<RunOutcome> = outcomes.by_ref().take(config.levels).collect();
                cells.push(assemble_cell(config, reference, alpha, k, linear, base.final_time, runs));
            }
        }
        cells
    })?;

    Ok(ConvergenceReport {
        problem: base.name,
        backend: config.backend,
        mesh: config.mesh,
        corrected: config.corrected,
        reference: config.reference,
        cells,
    })
}

fn assemble_cell(
    config: &StudyConfig,
    reference: &Reference,
    alpha: f64,
    k: usize,
    linear: bool,
    final_time: f64,
    runs: Vec<RunOutcome>,
) -> CellReport {
    let mut failure = reference.failure.clone();
    let mut levels = Vec::with_capacity(runs.len());
    for (level, run) in runs.into_iter().enumerate() {
        let steps = config.base_steps << level;
        let tau = final_time / steps as f64;
        let (error, newton_avg, newton_max) = match (&run.state, &reference.values) {
            (Ok(u), Some(r)) => (Some(max_diff(u, r)), Some(run.newton_avg), Some(run.newton_max)),
            (Ok(_), None) => (None, Some(run.newton_avg), Some(run.newton_max)),
            (Err(e), _) => {
                failure.get_or_insert_with(|| format!("N={steps}: {e}"));
                (None, None, None)
            }
        };
        levels.push(LevelReport {
            level,
            steps,
            tau,
            error,
            rate: None,
            wall_ms: run.wall_ms,
            newton_avg,
            newton_max,
        });
    }
    let threshold = FLOOR_FACTOR * reference.floor;
    for l in 1..levels.len() {
        if let (Some(prev), Some(cur)) = (levels[l - 1].error, levels[l].error) {
            if prev > threshold && cur > threshold {
                levels[l].rate = Some((prev / cur).log2());
            }
        }
    }
    let rates: Vec<Option<f64>> = levels.iter().skip(1).map(|l| l.rate).collect();
    CellReport {
        alpha,
        k,
        expected_rate: expected_rate(k, alpha, config.corrected, linear),
        tail_rate: tail_rate(&rates),
        noise_floor: reference.floor,
        levels,
        failure,
    }
}

pub const CSV_HEADER: &str =
    "problem,alpha,k,corrected,level,N,tau,error,rate,expected_rate,wall_ms,newton_avg";

fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(csv_float).unwrap_or_default()
}

pub fn write_csv<W: Write>(report: &ConvergenceReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for cell in &report.cells {
        for level in &cell.levels {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                report.problem,
                csv_float(cell.alpha),
                cell.k,
                report.corrected,
                level.level,
                level.steps,
                csv_float(level.tau),
                csv_opt(level.error),
                csv_opt(level.rate),
                csv_float(cell.expected_rate),
                csv_float(level.wall_ms),
                csv_opt(level.newton_avg),
            )?;
        }
    }
    Ok(())
}

pub fn to_csv(report: &ConvergenceReport) -> String {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is ascii")
}

pub fn to_json(report: &ConvergenceReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<ConvergenceReport> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        path: PathBuf::from("<memory>"),
        source,
    })
}

pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
    };
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Human-readable table: one row per `(α, k)` with errors per level and
/// `≈ tail (expected)` in the last column.
pub fn render_table(report: &ConvergenceReport) -> String {
    let levels = report.cells.iter().map(|c| c.levels.len()).max().unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:>5} {:>2}", "alpha", "k");
    for cell_level in report.cells.first().map(|c| c.levels.as_slice()).unwrap_or(&[]) {
        let _ = write!(out, " {:>10}", format!("N={}", cell_level.steps));
    }
    for _ in report.cells.first().map_or(0, |c| c.levels.len())..levels {
        let _ = write!(out, " {:>10}", "");
    }
    let _ = writeln!(out, "  rate");
    for cell in &report.cells {
        let _ = write!(out, "{:>5.2} {:>2}", cell.alpha, cell.k);
        for level in &cell.levels {
            let text = level.error.map_or_else(|| "-".to_string(), |e| format!("{e:.2e}"));
            let _ = write!(out, " {text:>10}");
        }
        let tail = cell.tail_rate.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"));
        let _ = write!(out, "  ≈ {tail} ({:.2})", cell.expected_rate);
        if let Some(f) = &cell.failure {
            let _ = write!(out, "  [{f}]");
        }
        out.push('\n');
    }
    out
}
