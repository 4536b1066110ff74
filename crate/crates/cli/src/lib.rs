//! Command dispatch for `sigma2lab`: every command produces a [`Report`],
//! wrapped with the configuration that produced it and the wall time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sigma2_core::suites::{
    verify_balance, verify_ellipticity, verify_jacobi, verify_qellip, verify_transform,
};
use sigma2_core::Report;
use sigma2_pde::io::{write_atomic, write_grid};
use sigma2_pde::profile::Profile;
use sigma2_pde::scaling::{grad_sup, ExperimentRecord, ScalingFamily};
use sigma2_pde::suites::{
    default_lambda, ijac_report, invariance_suite, jacobi_family, mvi_report, scaling_suite,
    JacobiFamily, JacobiRecord,
};
use sigma2_pde::{newton_solve, SolverOptions};

/// Log-spaced λ₁ values in the conformal ellipticity scan.
pub const ELLIPTICITY_POINTS: usize = 25;
/// Fraction of the covered dual half-width used by the invariance box.
pub const INVARIANCE_BOX_FRACTION: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(
    name = "sigma2lab",
    version,
    about = "Verification suites and grid experiments for σ₂(D²u) = 1"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    VerifyJacobi,
    VerifyBalance,
    VerifyTransform,
    VerifyEllipticity,
    VerifyQellip,
    Solve,
    ExperimentInvariance,
    ExperimentMvi,
    ExperimentIjac,
    ExperimentScaling,
}

impl CommandKind {
    fn is_grid(self) -> bool {
        matches!(
            self,
            Self::Solve
                | Self::ExperimentInvariance
                | Self::ExperimentMvi
                | Self::ExperimentIjac
                | Self::ExperimentScaling
        )
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pointwise Jacobi inequality: finds Λ(n,K) (unless --Lambda) and checks the margin above it.
    VerifyJacobi(RunArgs),
    /// Positive-balance identity on constrained third-derivative slices.
    VerifyBalance(RunArgs),
    /// Legendre–Lewy transformation rule against a finite-difference oracle.
    VerifyTransform(RunArgs),
    /// Conformal uniform ellipticity along on-shell λ₁ sweeps (--samples per sweep point).
    VerifyEllipticity(RunArgs),
    /// Ellipticity bounds: small-eigenvalue bound, σ₁ lower bound, f-identities.
    VerifyQellip(RunArgs),
    /// Solves σ₂(D²u) = 1 on [−R, R]ⁿ with boundary data from --bc.
    Solve(RunArgs),
    /// Operator invariance under the Legendre–Lewy transform (n = 2, grids --grid/4+1, /2+1, --grid).
    ExperimentInvariance(RunArgs),
    /// Mean value inequality on the λ₁-growing family (R = 3, t ∈ {4, 8, 16}).
    ExperimentMvi(RunArgs),
    /// Integral Jacobi inequality on the λ₁-growing family (R = 3, t ∈ {4, 8, 16}).
    ExperimentIjac(RunArgs),
    /// Hessian-estimate scaling: envelope of ln λ_max(0) in ‖Du‖²/R² (--samples seeds).
    ExperimentScaling(RunArgs),
}

impl Command {
    pub fn split(self) -> (CommandKind, RunArgs) {
        match self {
            Self::VerifyJacobi(a) => (CommandKind::VerifyJacobi, a),
            Self::VerifyBalance(a) => (CommandKind::VerifyBalance, a),
            Self::VerifyTransform(a) => (CommandKind::VerifyTransform, a),
            Self::VerifyEllipticity(a) => (CommandKind::VerifyEllipticity, a),
            Self::VerifyQellip(a) => (CommandKind::VerifyQellip, a),
            Self::Solve(a) => (CommandKind::Solve, a),
            Self::ExperimentInvariance(a) => (CommandKind::ExperimentInvariance, a),
            Self::ExperimentMvi(a) => (CommandKind::ExperimentMvi, a),
            Self::ExperimentIjac(a) => (CommandKind::ExperimentIjac, a),
            Self::ExperimentScaling(a) => (CommandKind::ExperimentScaling, a),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dimension (2..8; 2..3 for grid commands). Default 3, or 2 for experiment-invariance.
    #[arg(long)]
    pub n: Option<usize>,
    /// Semiconvexity constant: D²u ≥ −K·I.
    #[arg(long = "K", default_value_t = 1.0)]
    pub k: f64,
    /// Jacobi exponent ε in Δ_F b ≥ ε|∇_F b|².
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    /// Jacobi threshold Λ. Default: searched (verify-jacobi) or max(1, 5K/3).
    #[arg(long = "Lambda")]
    pub lambda: Option<f64>,
    /// Sample count (seeds for experiment-scaling). Default 10000, or 3 seeds.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Master seed; every random draw derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per axis (odd). Default 33; 65 for experiment-invariance, 17 for experiment-scaling.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Box half-width for solve.
    #[arg(long = "R", default_value_t = 1.0)]
    pub r: f64,
    /// Newton tolerance on the max-norm residual.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// JSON report path; experiments add a .csv next to it, solve a .grid snapshot.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Boundary data for solve: `quadratic:d1,…,dn` (½Σdᵢxᵢ²) or
    /// `bump:A,d1,…,dn` (the same plus A·R²·exp(−2|x/R|²)).
    #[arg(long)]
    pub bc: Option<String>,
}

/// The configuration echoed into every report, with defaults resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub epsilon: f64,
    #[serde(rename = "Lambda")]
    pub lambda: Option<f64>,
    pub samples: u64,
    pub seed: u64,
    pub grid: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub tol: f64,
    pub out_path: Option<PathBuf>,
    pub bc: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sigma2_core::Error),
    #[error(transparent)]
    Pde(#[from] sigma2_pde::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RunConfig {
    pub fn resolve(command: CommandKind, a: RunArgs) -> Result<Self, CliError> {
        let cfg = Self {
            command,
            n: a.n
                .unwrap_or(if command == CommandKind::ExperimentInvariance {
                    2
                } else {
                    3
                }),
            k: a.k,
            epsilon: a.epsilon,
            lambda: a.lambda,
            samples: a
                .samples
                .unwrap_or(if command == CommandKind::ExperimentScaling {
                    3
                } else {
                    10_000
                }),
            seed: a.seed,
            grid: a.grid.unwrap_or(match command {
                CommandKind::ExperimentInvariance => 65,
                CommandKind::ExperimentScaling => 17,
                _ => 33,
            }),
            r: a.r,
            tol: a.tol,
            out_path: a.out,
            bc: a.bc,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.samples == 0 {
            return bad("--samples must be at least 1".into());
        }
        let dims = if self.command.is_grid() { 2..=3 } else { 2..=8 };
        if !dims.contains(&self.n) {
            return bad(format!(
                "--n {} outside {}..={}",
                self.n,
                dims.start(),
                dims.end()
            ));
        }
        if self.command == CommandKind::ExperimentInvariance && self.n != 2 {
            return bad("experiment-invariance runs in two dimensions (--n 2)".into());
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return bad(format!("--K {} must be finite and non-negative", self.k));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("--epsilon {} outside (0, 1)", self.epsilon));
        }
        if self.lambda.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return bad("--Lambda must be positive".into());
        }
        if !(self.r > 0.0 && self.r.is_finite()) || !(self.tol > 0.0) {
            return bad("--R and --tol must be positive".into());
        }
        if self.command.is_grid() && (self.grid < 5 || self.grid % 2 == 0) {
            return bad(format!("--grid {} must be odd and at least 5", self.grid));
        }
        if self.command == CommandKind::Solve && self.bc.is_none() {
            return bad("solve needs --bc".into());
        }
        Ok(())
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions {
            k: self.k,
            tol: self.tol,
            ..SolverOptions::default()
        }
    }

    fn grid_lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(self.k))
    }

    fn sibling(&self, ext: &str) -> Option<PathBuf> {
        self.out_path.as_ref().map(|p| p.with_extension(ext))
    }
}

/// Everything written to the JSON report. `report` holds only reproducible
/// numbers; the wall time sits beside it.
#[derive(Debug, Serialize)]
pub struct Outcome {
    pub config: RunConfig,
    pub pass: bool,
    pub report: Option<Report>,
    pub error: Option<String>,
    pub csv_path: Option<PathBuf>,
    pub grid_path: Option<PathBuf>,
    pub wall_time_seconds: f64,
}

/// Row of the scaling CSV.
#[derive(Debug, Serialize)]
struct ScalingRow {
    t: f64,
    #[serde(rename = "R")]
    r: f64,
    grad_sup: f64,
    lambda_max_origin: f64,
    b_origin: f64,
    residual_norm: f64,
    flagged: bool,
}

impl From<&ExperimentRecord> for ScalingRow {
    fn from(r: &ExperimentRecord) -> Self {
        Self {
            t: r.t,
            r: r.r,
            grad_sup: r.grad_sup,
            lambda_max_origin: r.lambda_max_origin,
            b_origin: r.b_origin,
            residual_norm: r.residual_norm,
            flagged: r.flagged,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

struct Produced {
    report: Report,
    csv_path: Option<PathBuf>,
    grid_path: Option<PathBuf>,
}

impl From<Report> for Produced {
    fn from(report: Report) -> Self {
        Self {
            report,
            csv_path: None,
            grid_path: None,
        }
    }
}

fn jacobi_records(cfg: &RunConfig) -> Result<(JacobiFamily, Vec<JacobiRecord>), CliError> {
    let family = JacobiFamily::standard(cfg.n, cfg.grid, cfg.grid_lambda())?;
    let records = jacobi_family(&family, &cfg.solver())?;
    Ok((family, records))
}

fn solve(cfg: &RunConfig) -> Result<Produced, CliError> {
    let spec = cfg.bc.as_deref().unwrap_or_default();
    let profile = Profile::parse(spec)?;
    if profile.dim() != cfg.n {
        return Err(CliError::Config(format!(
            "--bc `{spec}` has {} coefficients for --n {}",
            profile.dim(),
            cfg.n
        )));
    }
    let data = profile.sample(cfg.grid, cfg.r)?;
    let sol = newton_solve(&data, &cfg.solver())?;
    let mut report = Report::new("solve", 1, cfg.seed);
    report
        .metric("residual_norm", sol.residual_norm)
        .metric("iterations", sol.iterations as f64)
        .metric("stages", sol.stages as f64)
        .metric("min_shear_eig", sol.min_shear_eig)
        .metric(
            "lambda_max_origin",
            sol.lambda_max_field.values()[sol.u.origin()],
        )
        .metric("grad_sup", grad_sup(&sol.u))
        .metric("max_diff_from_profile", sol.u.max_abs_diff(&data))
        .check_le("residual_norm", sol.residual_norm, cfg.tol)
        .check_gt("min_shear_eig", sol.min_shear_eig, 0.0);
    let grid_path = cfg.sibling("grid");
    if let Some(p) = &grid_path {
        write_grid(p, &sol.u, cfg.k)?;
    }
    Ok(Produced {
        report,
        csv_path: None,
        grid_path,
    })
}

fn dispatch(cfg: &RunConfig) -> Result<Produced, CliError> {
    let (n, k, s, seed) = (cfg.n, cfg.k, cfg.samples, cfg.seed);
    Ok(match cfg.command {
        CommandKind::VerifyJacobi => verify_jacobi(n, k, cfg.epsilon, s, seed, cfg.lambda)?.into(),
        CommandKind::VerifyBalance => verify_balance(n, k, s, seed)?.into(),
        CommandKind::VerifyTransform => verify_transform(n, k, s, seed)?.into(),
        CommandKind::VerifyEllipticity => {
            let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(k));
            verify_ellipticity(n, k, lambda, ELLIPTICITY_POINTS, s, seed)?.into()
        }
        CommandKind::VerifyQellip => verify_qellip(n, k, s, seed)?.into(),
        CommandKind::Solve => solve(cfg)?,
        CommandKind::ExperimentInvariance => {
            invariance_suite(k, cfg.grid, INVARIANCE_BOX_FRACTION, &cfg.solver())?.into()
        }
        CommandKind::ExperimentMvi | CommandKind::ExperimentIjac => {
            let (family, records) = jacobi_records(cfg)?;
            let report = if cfg.command == CommandKind::ExperimentMvi {
                mvi_report(&family, &records)
            } else {
                ijac_report(&family, &records)
            };
            let csv_path = cfg.sibling("csv");
            if let Some(p) = &csv_path {
                write_csv(p, &records)?;
            }
            Produced {
                report,
                csv_path,
                grid_path: None,
            }
        }
        CommandKind::ExperimentScaling => {
            let family = ScalingFamily {
                seeds: s,
                ..ScalingFamily::standard(n, seed)
            };
            let (report, records) =
                scaling_suite(&family, cfg.grid, &cfg.solver(), cfg.grid_lambda())?;
            let csv_path = cfg.sibling("csv");
            if let Some(p) = &csv_path {
                write_csv(p, records.iter().map(ScalingRow::from))?;
            }
            Produced {
                report,
                csv_path,
                grid_path: None,
            }
        }
    })
}

/// Runs the command; module errors become a failed outcome carrying the
/// message rather than a panic.
pub fn run(cfg: RunConfig) -> Outcome {
    let start = Instant::now();
    let result = dispatch(&cfg);
    let wall_time_seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(p) => Outcome {
            pass: p.report.pass,
            report: Some(p.report),
            error: None,
            csv_path: p.csv_path,
            grid_path: p.grid_path,
            config: cfg,
            wall_time_seconds,
        },
        Err(e) => Outcome {
            pass: false,
            report: None,
            error: Some(e.to_string()),
            csv_path: None,
            grid_path: None,
            config: cfg,
            wall_time_seconds,
        },
    }
}

/// Serializes the outcome and writes it to `out_path` when one is set.
pub fn emit(outcome: &Outcome) -> Result<String, CliError> {
    let json = serde_json::to_string_pretty(outcome)?;
    if let Some(p) = &outcome.config.out_path {
        write_atomic(p, json.as_bytes()).map_err(CliError::Pde)?;
    }
    Ok(json)
}
