use std::f64::consts::PI;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use memcurse::analytic::{
    hidden_variance, lambda_hessian, lambda_hessian_trace, normalized_sensitivity_coordinate, sensitivity_variance,
    NormalizationSpec, ParametrizationSpec,
};
use memcurse::experiments::{
    default_lr_grid, landscape_grid_1d, lr_grid_sweep, sigprop_at_init, student_family, train, train_1d_angle,
    AngleConfig, AngleParam, LandscapeScenario, NormKind, SigpropCell, SigpropConfig, SigpropData, TeacherSpec,
    TrainConfig,
};
use memcurse::hessian::{adam_effective_lr, gauss_newton_hessian, inverse_participation_ratio, TOP_K};
use memcurse::models::{build_teacher, DiagonalComplexCell, RecurrentCell};
use memcurse::optim::Schedule;
use memcurse::stochastic::{
    burn_in_steps, monte_carlo_variances, required_samples, sample_wss_sequence, AutocorrelationModel, SequenceBatch,
};
use memcurse::{Error, RngStream};

use crate::output::{num, Table};

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Command {
    /// Closed-form hidden-state and sensitivity variances on a λ × ρ grid.
    Analytic(AnalyticArgs),
    /// Monte-Carlo check of the closed-form variances.
    Validate(ValidateArgs),
    /// One-dimensional loss landscapes.
    Landscape(LandscapeArgs),
    /// Learning an eigenvalue angle under different parametrizations.
    Angle(AngleArgs),
    /// Teacher-student learning-rate sweeps.
    Train(TrainArgs),
    /// Gauss-Newton Hessian of a student at optimality.
    Hessian(HessianArgs),
    /// Signal propagation in deep recurrent networks at initialization.
    Sigprop(SigpropArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyticArgs {
    /// Eigenvalue magnitudes: `lo:hi:count` or a comma list.
    #[arg(long, default_value = "0:0.99:100")]
    pub lambda: String,
    /// Eigenvalue angle shared by every grid point.
    #[arg(long, default_value = "0")]
    pub theta: String,
    /// Input autocorrelation decay rates.
    #[arg(long, default_value = "0,0.5,0.9")]
    pub rho: String,
    /// Input normalizations: none, sqrt, sqrt_stop.
    #[arg(long, default_value = "none")]
    pub norm: String,
    /// Parametrizations: direct, tanh, double_exp, optimal1_d, polar_direct,
    /// polar_exp_angle, tanh_exp_angle.
    #[arg(long, default_value = "direct")]
    pub param: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long, default_value = "0.5,0.9,0.99")]
    pub lambda: String,
    #[arg(long, default_value = "0")]
    pub theta: String,
    #[arg(long, default_value = "0,0.5,0.9")]
    pub rho: String,
    /// Independent stationary samples per cell.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Relative tolerance.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LandscapeArgs {
    /// real_axis, circle or reparam_grid.
    #[arg(long, default_value = "real_axis")]
    pub scenario: String,
    #[arg(long, default_value_t = 0.9)]
    pub nu_star: f64,
    #[arg(long, default_value = "0")]
    pub theta_star: String,
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AngleArgs {
    /// polar, exp, optimal.
    #[arg(long, default_value = "polar,exp,optimal")]
    pub params: String,
    #[arg(long, default_value_t = 0.99)]
    pub nu0: f64,
    #[arg(long, default_value = "pi/4")]
    pub theta0: String,
    #[arg(long, default_value_t = 0.99)]
    pub nu_star: f64,
    #[arg(long, default_value = "pi/100")]
    pub theta_star: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 50_000)]
    pub steps: usize,
    /// Runs per parametrization, seeded root, root + 1, ...
    #[arg(long, default_value_t = 1)]
    pub n_seeds: u64,
    /// Relative perturbation of the starting point across seeds.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Trajectory rows are written every this many steps.
    #[arg(long, default_value_t = 100)]
    pub record_every: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// lru, complex_diagonal, block_diagonal, dense, lstm.
    #[arg(long, default_value = "lru,complex_diagonal,dense")]
    pub families: String,
    /// Teacher eigenvalue magnitude floor.
    #[arg(long, default_value_t = 0.99)]
    pub nu: f64,
    /// Student magnitude floor; defaults to the teacher's.
    #[arg(long)]
    pub nu_init: Option<f64>,
    #[arg(long, default_value = "pi")]
    pub theta0: String,
    #[arg(long, default_value_t = 4)]
    pub n_teacher: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 300)]
    pub seq_len: usize,
    /// Learning rates shared by every family; per-family defaults otherwise.
    #[arg(long)]
    pub lr_grid: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub n_seeds: u64,
    /// Temporal correlation of the teacher inputs.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Retrain the selected cell of each family on the first seed and write
    /// the optimizer's per-group effective learning rates.
    #[arg(long, default_value_t = false)]
    pub effective_lr: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HessianArgs {
    /// complex_diagonal or dense.
    #[arg(long, default_value = "complex_diagonal")]
    pub student: String,
    /// Diagonal student with b = c = 1 and these eigenvalues, each `nu` or
    /// `nu@theta`; replaces the random teacher.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0.99)]
    pub nu: f64,
    #[arg(long, default_value = "pi")]
    pub theta0: String,
    /// Sequences in the Gauss-Newton average.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SigpropArgs {
    /// crnn, lru, lstm.
    #[arg(long, default_value = "crnn,lru,lstm")]
    pub cells: String,
    #[arg(long, default_value = "0.32,0.9,0.99")]
    pub nu: String,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// none or layer_norm.
    #[arg(long, default_value = "none")]
    pub norm: String,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Sequences in the dataset; a multiple of the batch size.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 512)]
    pub length: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// AR(1) coefficient of the synthetic embeddings.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Raw little-endian float32 tensor [count × length × dim] used instead
    /// of synthetic embeddings.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Numeric(String),
    Other(String),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        match e {
            Error::ParameterDomain(_) | Error::Contract(_) | Error::DimensionMismatch { .. } => {
                CmdError::Usage(e.to_string())
            }
            Error::Divergence(_)
            | Error::Overflow { .. }
            | Error::SweepFailure { .. }
            | Error::Diverged { .. }
            | Error::Convergence { .. } => CmdError::Numeric(e.to_string()),
            Error::Io(_) | Error::Json(_) | Error::ProbeUninitialized => CmdError::Other(e.to_string()),
        }
    }
}

/// Non-fatal findings that still set a nonzero exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Diverged(String),
    Failed(String),
}

pub struct Context {
    pub root_seed: u64,
    pub jobs: usize,
}

type Run = Result<(Vec<Table>, Status), CmdError>;

fn usage<T>(msg: impl Into<String>) -> Result<T, CmdError> {
    Err(CmdError::Usage(msg.into()))
}

/// A real number, `pi`, `pi/k` or `x*pi`.
pub fn parse_scalar(s: &str) -> Result<f64, CmdError> {
    let t = s.trim();
    let v = if t == "pi" {
        Some(PI)
    } else if let Some(k) = t.strip_prefix("pi/") {
        k.parse::<f64>().ok().map(|k| PI / k)
    } else if let Some(x) = t.strip_suffix("*pi") {
        x.parse::<f64>().ok().map(|x| x * PI)
    } else {
        t.parse::<f64>().ok()
    };
    match v {
        Some(v) if v.is_finite() => Ok(v),
        _ => usage(format!("not a number: '{s}'")),
    }
}

/// `lo:hi:count` (inclusive, evenly spaced) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CmdError> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [lo, hi, n] => {
            let (lo, hi) = (parse_scalar(lo)?, parse_scalar(hi)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| CmdError::Usage(format!("bad grid count in '{s}'")))?;
            match n {
                0 => Vec::new(),
                1 => vec![lo],
                _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
            }
        }
        [_] => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(parse_scalar)
            .collect::<Result<_, _>>()?,
        _ => return usage(format!("grid must be lo:hi:count or a comma list, got '{s}'")),
    };
    if grid.is_empty() {
        return usage(format!("empty grid '{s}'"));
    }
    Ok(grid)
}

fn parse_names(s: &str) -> Vec<String> {
    s.split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn check_magnitudes(grid: &[f64], what: &str) -> Result<(), CmdError> {
    match grid.iter().find(|v| !(0.0..1.0).contains(*v)) {
        Some(v) => usage(format!("{what} must lie in [0, 1), got {v}")),
        None => Ok(()),
    }
}

fn parse_norm(s: &str) -> Result<NormalizationSpec, CmdError> {
    match s {
        "none" => Ok(NormalizationSpec::none()),
        "sqrt" => Ok(NormalizationSpec::sqrt_one_minus_nu_sq(false)),
        "sqrt_stop" => Ok(NormalizationSpec::sqrt_one_minus_nu_sq(true)),
        other => usage(format!("unknown normalization '{other}'")),
    }
}

fn parse_param(s: &str) -> Result<ParametrizationSpec, CmdError> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| CmdError::Usage(format!("unknown parametrization '{s}'")))
}

fn model_for(rho: f64) -> Result<AutocorrelationModel, CmdError> {
    Ok(AutocorrelationModel::from_rho(rho)?)
}

pub fn run(cmd: &Command, ctx: &Context) -> Run {
    match cmd {
        Command::Analytic(a) => analytic(a),
        Command::Validate(a) => validate(a, ctx),
        Command::Landscape(a) => landscape(a),
        Command::Angle(a) => angle(a, ctx),
        Command::Train(a) => train_cmd(a, ctx),
        Command::Hessian(a) => hessian(a, ctx),
        Command::Sigprop(a) => sigprop(a, ctx),
    }
}

fn analytic(a: &AnalyticArgs) -> Run {
    let lambdas = parse_grid(&a.lambda)?;
    check_magnitudes(&lambdas, "lambda")?;
    let theta = parse_scalar(&a.theta)?;
    let rhos = parse_grid(&a.rho)?;
    let norms: Vec<(String, NormalizationSpec)> = parse_names(&a.norm)
        .into_iter()
        .map(|n| parse_norm(&n).map(|s| (n, s)))
        .collect::<Result<_, _>>()?;
    let params: Vec<(String, ParametrizationSpec)> = parse_names(&a.param)
        .into_iter()
        .map(|n| parse_param(&n).map(|s| (n, s)))
        .collect::<Result<_, _>>()?;
    if norms.is_empty() || params.is_empty() {
        return usage("need at least one normalization and parametrization");
    }
    let mut t = Table::new(
        "analytic.csv",
        &[
            "lambda",
            "theta",
            "rho",
            "norm",
            "param",
            "hidden_variance",
            "sensitivity_variance",
            "normalized_hidden_variance",
            "normalized_sensitivity_omega0",
            "normalized_sensitivity_omega1",
        ],
    );
    for (pname, param) in &params {
        for (nname, norm) in &norms {
            for &rho in &rhos {
                let model = model_for(rho)?;
                for &nu in &lambdas {
                    let l = Complex64::from_polar(nu, theta);
                    let hv = hidden_variance(l, &model).unwrap_or(f64::NAN);
                    let sv = sensitivity_variance(l, &model).unwrap_or(f64::NAN);
                    let gamma = norm.gamma(l).unwrap_or(f64::NAN);
                    // coordinates outside a map's domain are reported as NaN
                    let coord = |k| normalized_sensitivity_coordinate(l, norm, param, &model, k).unwrap_or(f64::NAN);
                    t.row([
                        num(nu),
                        num(theta),
                        num(rho),
                        nname.clone(),
                        pname.clone(),
                        num(hv),
                        num(sv),
                        num(gamma * gamma * hv),
                        num(coord(0)),
                        num(coord(1)),
                    ]);
                }
            }
        }
    }
    Ok((vec![t], Status::Ok))
}

fn validate(a: &ValidateArgs, ctx: &Context) -> Run {
    let lambdas = parse_grid(&a.lambda)?;
    check_magnitudes(&lambdas, "lambda")?;
    let theta = parse_scalar(&a.theta)?;
    let rhos = parse_grid(&a.rho)?;
    if !(a.tol > 0.0) {
        return usage("tolerance must be positive");
    }
    let needed = required_samples(a.tol);
    if a.samples < needed {
        return usage(format!(
            "{} samples cannot resolve a relative tolerance of {}: at least {needed} are required",
            a.samples, a.tol
        ));
    }
    let root = RngStream::new(ctx.root_seed);
    let mut t = Table::new(
        "validate.csv",
        &[
            "lambda",
            "theta",
            "rho",
            "quantity",
            "analytic",
            "monte_carlo",
            "rel_error",
            "pass",
        ],
    );
    let mut failures = 0;
    let mut cell = 0u64;
    for &rho in &rhos {
        let model = model_for(rho)?;
        for &nu in &lambdas {
            let l = Complex64::from_polar(nu, theta);
            let mc = monte_carlo_variances(l, &model, a.samples, &root.child(cell))?;
            cell += 1;
            for (name, exact, est) in [
                ("hidden", hidden_variance(l, &model)?, mc.hidden),
                ("sensitivity", sensitivity_variance(l, &model)?, mc.sensitivity),
            ] {
                let rel = (est - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
                let pass = rel <= a.tol;
                failures += usize::from(!pass);
                t.row([
                    num(nu),
                    num(theta),
                    num(rho),
                    name.into(),
                    num(exact),
                    num(est),
                    num(rel),
                    pass.to_string(),
                ]);
            }
        }
    }
    let status = if failures == 0 {
        Status::Ok
    } else {
        Status::Failed(format!("{failures} comparisons exceed the tolerance {}", a.tol))
    };
    Ok((vec![t], status))
}

fn landscape(a: &LandscapeArgs) -> Run {
    let scenario = match a.scenario.as_str() {
        "real_axis" => LandscapeScenario::RealAxis,
        "circle" => LandscapeScenario::Circle,
        "reparam_grid" => LandscapeScenario::ReparamGrid,
        other => return usage(format!("unknown scenario '{other}'")),
    };
    let star = Complex64::from_polar(a.nu_star, parse_scalar(&a.theta_star)?);
    let grid = landscape_grid_1d(star, scenario, a.resolution, a.rho)?;
    let mut t = Table::new(
        "landscape.csv",
        &["param", "slice", "w0", "w1", "lambda_re", "lambda_im", "loss", "pole"],
    );
    for p in grid {
        t.row([
            p.param,
            p.slice,
            num(p.w0),
            num(p.w1),
            num(p.lambda_re),
            num(p.lambda_im),
            num(p.loss),
            p.pole.to_string(),
        ]);
    }
    Ok((vec![t], Status::Ok))
}

fn angle(a: &AngleArgs, ctx: &Context) -> Run {
    let params: Vec<AngleParam> = parse_names(&a.params)
        .iter()
        .map(|n| match n.as_str() {
            "polar" => Ok(AngleParam::Polar),
            "exp" => Ok(AngleParam::Exp),
            "optimal" => Ok(AngleParam::Optimal),
            other => usage(format!("unknown angle parametrization '{other}'")),
        })
        .collect::<Result<_, _>>()?;
    if a.record_every == 0 || a.n_seeds == 0 {
        return usage("record_every and n_seeds must be positive");
    }
    let start = Complex64::from_polar(a.nu0, parse_scalar(&a.theta0)?);
    let star = Complex64::from_polar(a.nu_star, parse_scalar(&a.theta_star)?);
    let mut traj = Table::new(
        "angle_trajectory.csv",
        &["param", "seed", "step", "lambda_re", "lambda_im", "loss"],
    );
    let mut summary = Table::new(
        "angle_summary.csv",
        &["param", "seed", "terminal_distance", "diverged_at"],
    );
    let mut diverged = Vec::new();
    for param in params {
        for i in 0..a.n_seeds {
            let seed = ctx.root_seed + i;
            let cfg = AngleConfig {
                lr: a.lr,
                steps: a.steps,
                seed,
                init_jitter: a.jitter,
                ..AngleConfig::default()
            };
            let run = train_1d_angle(start, star, param, &cfg)?;
            let last = run.lambdas.len();
            for (k, (l, loss)) in run.lambdas.iter().zip(&run.losses).enumerate() {
                if (k + 1) % a.record_every == 0 || k + 1 == last {
                    traj.row([
                        param.name().into(),
                        seed.to_string(),
                        (k + 1).to_string(),
                        num(l.re),
                        num(l.im),
                        num(*loss),
                    ]);
                }
            }
            let at = run.diverged.map(|s| s.to_string()).unwrap_or_default();
            if run.diverged.is_some() {
                diverged.push(format!("{} seed {seed}", param.name()));
            }
            summary.row([
                param.name().into(),
                seed.to_string(),
                num(run.terminal_distance(star)),
                at,
            ]);
        }
    }
    let status = if diverged.is_empty() {
        Status::Ok
    } else {
        Status::Diverged(format!("diverged: {}", diverged.join(", ")))
    };
    Ok((vec![traj, summary], status))
}

fn train_cmd(a: &TrainArgs, ctx: &Context) -> Run {
    let families = parse_names(&a.families);
    if families.is_empty() {
        return usage("no student families given");
    }
    if a.n_seeds == 0 {
        return usage("n_seeds must be positive");
    }
    let shared_grid = a.lr_grid.as_deref().map(parse_grid).transpose()?;
    let teacher = TeacherSpec::Random {
        n: a.n_teacher,
        nu: a.nu,
        theta0: parse_scalar(&a.theta0)?,
    };
    let seeds: Vec<u64> = (0..a.n_seeds).map(|i| ctx.root_seed + i).collect();
    let mut cells = Table::new(
        "train_cells.csv",
        &["family", "init", "lr", "seed", "final_loss", "diverged"],
    );
    let mut summary = Table::new(
        "train_summary.csv",
        &[
            "family",
            "best_init",
            "best_lr",
            "median_final_loss",
            "seed_final_losses",
        ],
    );
    let mut probes = Table::new("train_effective_lr.csv", &["family", "group", "mean_effective_lr"]);
    for name in &families {
        let family = student_family(name, a.hidden, a.nu_init.unwrap_or(a.nu))?;
        let grid = shared_grid.clone().unwrap_or_else(|| default_lr_grid(name));
        let cfg = TrainConfig {
            batch_size: a.batch,
            seq_len: a.seq_len,
            steps: a.steps,
            optimizer: Default::default(),
            lr: grid[0],
            schedule: Schedule::Cosine,
            seed: seeds[0],
            lr_grid: Some(grid),
            inputs: model_for(a.rho)?,
        };
        let sweep = lr_grid_sweep(&family, &teacher, &cfg, &seeds, ctx.jobs)?;
        for c in &sweep.cells {
            cells.row([
                name.clone(),
                c.init.to_string(),
                num(c.lr),
                c.seed.to_string(),
                num(c.final_loss),
                c.diverged.to_string(),
            ]);
        }
        let losses: Vec<String> = sweep.best_final_losses.iter().map(|v| num(*v)).collect();
        summary.row([
            name.clone(),
            sweep.best_init.to_string(),
            num(sweep.best_lr),
            num(sweep.best_median_final_loss),
            losses.join(";"),
        ]);
        if a.effective_lr {
            let run_cfg = TrainConfig {
                lr: sweep.best_lr,
                lr_grid: None,
                ..cfg.clone()
            };
            let trace = train(&family.inits[sweep.best_init], &teacher.for_seed(seeds[0])?, &run_cfg)?;
            let lrs = adam_effective_lr(&trace.adam_probe)?;
            let mut offset = 0;
            for g in &trace.final_params.groups {
                let n = g.values.len();
                let mean = lrs[offset..offset + n].iter().sum::<f64>() / n.max(1) as f64;
                probes.row([name.clone(), g.label.clone(), num(mean)]);
                offset += n;
            }
        }
    }
    let mut tables = vec![cells, summary];
    if a.effective_lr {
        tables.push(probes);
    }
    Ok((tables, Status::Ok))
}

/// `nu` or `nu@theta`.
fn parse_polar(s: &str) -> Result<Complex64, CmdError> {
    let (nu, theta) = match s.split_once('@') {
        Some((n, t)) => (parse_scalar(n)?, parse_scalar(t)?),
        None => (parse_scalar(s)?, 0.0),
    };
    if !(0.0..1.0).contains(&nu) {
        return usage(format!("eigenvalue magnitude must lie in [0, 1), got {nu}"));
    }
    Ok(Complex64::from_polar(nu, theta))
}

fn hessian(a: &HessianArgs, ctx: &Context) -> Run {
    let root = RngStream::new(ctx.root_seed);
    let student = match (a.student.as_str(), &a.lambda) {
        ("complex_diagonal", Some(list)) => {
            let lambda: Vec<Complex64> = list.split(',').map(parse_polar).collect::<Result<_, _>>()?;
            let one = vec![Complex64::new(1.0, 0.0); lambda.len()];
            RecurrentCell::Diagonal(DiagonalComplexCell::from_lambda(
                &lambda,
                &one,
                &one,
                vec![0.0],
                1,
                1,
                ParametrizationSpec::Direct,
                NormalizationSpec::none(),
            )?)
        }
        (_, Some(_)) => return usage("--lambda requires --student complex_diagonal"),
        (kind, None) => {
            let teacher = build_teacher(a.n, a.nu, parse_scalar(&a.theta0)?, &root.child(0))?;
            match kind {
                "complex_diagonal" => RecurrentCell::Diagonal(DiagonalComplexCell::from_dense(&teacher)?),
                "dense" => RecurrentCell::Dense(teacher),
                other => return usage(format!("unknown Hessian student '{other}'")),
            }
        }
    };
    let radius = match &student {
        RecurrentCell::Diagonal(c) => c.lambdas()?.iter().map(|l| l.norm()).fold(0.0, f64::max),
        RecurrentCell::Dense(d) => d.spectral_radius()?,
        _ => unreachable!("only diagonal and dense students are built"),
    };
    let burn = burn_in_steps(radius)?;
    let x = sample_wss_sequence(&model_for(a.rho)?, burn + 1, a.samples, 1, &root.child(1))?;
    let report = gauss_newton_hessian(&student, &x, burn)?;
    let p = report.dim;
    let mut matrix = Table::new("hessian_matrix.csv", &["row", "col", "row_label", "col_label", "value"]);
    for i in 0..p {
        for j in 0..p {
            matrix.row([
                i.to_string(),
                j.to_string(),
                report.param_labels[i].clone(),
                report.param_labels[j].clone(),
                num(report.matrix[i * p + j]),
            ]);
        }
    }
    let mut eigen = Table::new("hessian_eigen.csv", &["k", "eigenvalue", "ipr"]);
    for k in 0..p {
        eigen.row([
            k.to_string(),
            num(report.eigenvalues[k]),
            num(inverse_participation_ratio(&report.eigenvector(k))),
        ]);
    }
    let mut summary = Table::new("hessian_summary.csv", &["metric", "value"]);
    summary.row(["dim".to_string(), p.to_string()]);
    summary.row(["axis_alignment".to_string(), num(report.metrics.axis_alignment)]);
    summary.row([format!("mean_top{TOP_K}_ipr"), num(report.metrics.mean_ipr())]);
    summary.row(["burn_in".to_string(), burn.to_string()]);
    if let RecurrentCell::Diagonal(cell) = &student {
        let idx = report.indices_of_groups(&["lambda.re", "lambda.im"]);
        let sub = report.submatrix(&idx);
        let q = idx.len();
        let trace: f64 = (0..q).map(|k| sub[k * q + k]).sum();
        let lambda = cell.lambdas()?;
        let b: Vec<Complex64> = (0..cell.m)
            .map(|k| Complex64::new(cell.b_re[k], cell.b_im[k]))
            .collect();
        let c: Vec<Complex64> = (0..cell.m)
            .map(|k| Complex64::new(cell.c_re[k], cell.c_im[k]))
            .collect();
        let exact = lambda_hessian(&b, &c, &lambda, &ParametrizationSpec::Direct, &model_for(a.rho)?)?;
        let diff: f64 = sub.iter().zip(&exact).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
        summary.row(["lambda_block_trace".to_string(), num(trace)]);
        summary.row([
            "analytic_lambda_trace".to_string(),
            num(lambda_hessian_trace(&b, &c, &lambda, a.rho)?),
        ]);
        summary.row(["analytic_frobenius_rel_error".to_string(), num(diff / norm)]);
        let mut analytic = Table::new(
            "hessian_analytic.csv",
            &["row", "col", "row_label", "col_label", "value"],
        );
        for i in 0..q {
            for j in 0..q {
                analytic.row([
                    i.to_string(),
                    j.to_string(),
                    report.param_labels[idx[i]].clone(),
                    report.param_labels[idx[j]].clone(),
                    num(exact[i * q + j]),
                ]);
            }
        }
        return Ok((vec![matrix, eigen, summary, analytic], Status::Ok));
    }
    Ok((vec![matrix, eigen, summary], Status::Ok))
}

fn sigprop(a: &SigpropArgs, ctx: &Context) -> Run {
    let cells: Vec<SigpropCell> = parse_names(&a.cells)
        .iter()
        .map(|n| match n.as_str() {
            "crnn" => Ok(SigpropCell::Crnn),
            "lru" => Ok(SigpropCell::Lru),
            "lstm" => Ok(SigpropCell::Lstm),
            other => usage(format!("unknown sigprop cell '{other}'")),
        })
        .collect::<Result<_, _>>()?;
    let nus = parse_grid(&a.nu)?;
    check_magnitudes(&nus, "nu")?;
    let norm = match a.norm.as_str() {
        "none" => NormKind::None,
        "layer_norm" => NormKind::LayerNorm,
        other => return usage(format!("unknown norm '{other}'")),
    };
    let root = RngStream::new(ctx.root_seed);
    let data: SequenceBatch = match &a.input {
        Some(path) => SequenceBatch::load_f32_file(path, a.count, a.length, a.dim)?,
        None => SigpropData {
            count: a.count,
            length: a.length,
            dim: a.dim,
            rho: a.rho,
        }
        .sample(&root.child(0))?,
    };
    let mut t = Table::new(
        "sigprop.csv",
        &["cell", "nu", "layer", "group", "mean_square", "finite"],
    );
    let mut overflow = Vec::new();
    for cell in cells {
        let cfg = SigpropConfig {
            cell,
            hidden: a.hidden,
            depth: a.depth,
            norm,
            batch_size: a.batch,
            seed: ctx.root_seed,
        };
        for r in sigprop_at_init(&cfg, &data, &nus, ctx.jobs)? {
            if !r.finite {
                overflow.push(format!("{} nu={} layer {} {}", r.cell, r.nu, r.layer, r.group));
            }
            t.row([
                r.cell,
                num(r.nu),
                r.layer.to_string(),
                r.group,
                num(r.mean_square),
                r.finite.to_string(),
            ]);
        }
    }
    let status = if overflow.is_empty() {
        Status::Ok
    } else {
        Status::Diverged(format!("non-finite statistics: {}", overflow.join("; ")))
    };
    Ok((vec![t], status))
}
