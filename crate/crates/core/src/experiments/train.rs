use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hessian::AdamProbe;
use crate::models::{build_teacher, DenseLinearSSM, ParamBundle, RecurrentCell, RecurrentCellSpec};
use crate::optim::{Adam, AdamConfig, Schedule};
use crate::rng::RngStream;
use crate::stochastic::{sample_wss_sequence, AutocorrelationModel, SequenceBatch};

/// Fraction of the final steps averaged into [`TrainTrace::final_loss`].
pub const FINAL_LOSS_FRACTION: f64 = 0.05;

// child indices of the root stream of a run
const STREAM_TEACHER: u64 = 0;
const STREAM_STUDENT: u64 = 1;
const STREAM_DATA: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub steps: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub lr: f64,
    #[serde(default)]
    pub schedule: Schedule,
    pub seed: u64,
    #[serde(default)]
    pub lr_grid: Option<Vec<f64>>,
    /// Temporal correlation of the teacher inputs.
    #[serde(default = "iid")]
    pub inputs: AutocorrelationModel,
}

fn iid() -> AutocorrelationModel {
    AutocorrelationModel::Iid
}

impl TrainConfig {
    /// Desk-scale defaults: batch 32, sequences of 300 steps, 2000 steps.
    pub fn desk(lr: f64, seed: u64) -> Self {
        Self {
            batch_size: 32,
            seq_len: 300,
            steps: 2000,
            optimizer: AdamConfig::default(),
            lr,
            schedule: Schedule::Cosine,
            seed,
            lr_grid: None,
            inputs: AutocorrelationModel::Iid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::ParameterDomain("steps must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::ParameterDomain(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::ParameterDomain(
                "batch size and sequence length must be >= 1".into(),
            ));
        }
        if let Some(grid) = &self.lr_grid {
            if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::ParameterDomain("lr grid must be nonempty and positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub loss: Vec<f64>,
    pub final_params: ParamBundle,
    pub adam_probe: AdamProbe,
    /// Informational; never written to deterministic outputs.
    pub wall_steps_per_sec: f64,
    /// Step at which the loss became non-finite.
    pub diverged: Option<usize>,
}

impl TrainTrace {
    /// Mean loss over the last [`FINAL_LOSS_FRACTION`] of the steps; infinite
    /// for diverged runs.
    pub fn final_loss(&self) -> f64 {
        if self.diverged.is_some() || self.loss.is_empty() {
            return f64::INFINITY;
        }
        let k = ((self.loss.len() as f64 * FINAL_LOSS_FRACTION).ceil() as usize).clamp(1, self.loss.len());
        self.loss[self.loss.len() - k..].iter().sum::<f64>() / k as f64
    }
}

/// ½|y − y*|² averaged over time and sequences, and its output errors.
pub fn mse_and_errors(y: &[f64], target: &[f64], rows: usize) -> (f64, Vec<f64>) {
    let inv = 1.0 / rows as f64;
    let mut loss = 0.0;
    let errors = y
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = a - b;
            loss += 0.5 * d * d;
            d * inv
        })
        .collect();
    (loss * inv, errors)
}

/// Trains `student` on a stream of fresh teacher-labeled batches.
pub fn train_cell(mut student: RecurrentCell, teacher: &DenseLinearSSM, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    check_dim(teacher.d_in, student.d_in(), "student input dimension")?;
    check_dim(teacher.d_out, student.d_out(), "student output dimension")?;
    let data = RngStream::new(cfg.seed).child(STREAM_DATA);
    let mut params = student.flat_params();
    let mut adam = Adam::new(params.len(), cfg.optimizer);
    let mut loss = Vec::with_capacity(cfg.steps);
    let mut diverged = None;
    let start = Instant::now();
    for step in 0..cfg.steps {
        let x = sample_wss_sequence(
            &cfg.inputs,
            cfg.seq_len,
            cfg.batch_size,
            teacher.d_in,
            &data.child(step as u64),
        )?;
        let target = teacher.forward(&x)?.outputs;
        let fwd = student.forward(&x)?;
        let (l, errors) = mse_and_errors(&fwd.outputs, &target, x.count * x.length);
        if !l.is_finite() {
            diverged = Some(step);
            break;
        }
        loss.push(l);
        let grads = student.backward(&x, &fwd, &errors)?.grads.flatten();
        if grads.iter().any(|g| !g.is_finite()) {
            diverged = Some(step);
            break;
        }
        adam.step(&mut params, &grads, cfg.schedule.lr_at(cfg.lr, step, cfg.steps))?;
        if student.set_flat_params(&params).is_err() {
            // the parametrization left its domain
            diverged = Some(step);
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(TrainTrace {
        wall_steps_per_sec: loss.len() as f64 / secs.max(1e-12),
        loss,
        final_params: student.params(),
        adam_probe: adam.probe(),
        diverged,
    })
}

/// Builds the student from `spec` on the run's student stream and trains it.
pub fn train(student: &RecurrentCellSpec, teacher: &DenseLinearSSM, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let cell = student.build(
        teacher.d_in,
        teacher.d_out,
        &RngStream::new(cfg.seed).child(STREAM_STUDENT),
    )?;
    train_cell(cell, teacher, cfg)
}

/// Where the teacher of each seed comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSpec {
    Fixed {
        teacher: DenseLinearSSM,
    },
    /// [`build_teacher`] on the seed's teacher stream.
    Random {
        n: usize,
        nu: f64,
        theta0: f64,
    },
}

impl TeacherSpec {
    pub fn for_seed(&self, seed: u64) -> Result<DenseLinearSSM> {
        match self {
            TeacherSpec::Fixed { teacher } => Ok(teacher.clone()),
            TeacherSpec::Random { n, nu, theta0 } => {
                build_teacher(*n, *nu, *theta0, &RngStream::new(seed).child(STREAM_TEACHER))
            }
        }
    }
}

/// A named set of student initializations sharing one lr grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudentFamily {
    pub name: String,
    pub inits: Vec<RecurrentCellSpec>,
}

/// Families of the teacher-student comparison at memory level ν: "lru",
/// "complex_diagonal", "block_diagonal", "dense" (initialized at ν and at 0)
/// and "lstm". Angles start in [−π, π].
pub fn student_family(name: &str, hidden: usize, nu: f64) -> Result<StudentFamily> {
    let pi = std::f64::consts::PI;
    let inits = match name {
        "lru" => vec![RecurrentCellSpec::lru(hidden, nu, pi)],
        "complex_diagonal" => vec![RecurrentCellSpec::complex_diagonal(hidden, nu, pi)],
        "block_diagonal" => vec![RecurrentCellSpec::BlockDiagonal {
            hidden,
            nu_init: nu,
            theta0: pi,
        }],
        "dense" => vec![
            RecurrentCellSpec::Dense {
                hidden,
                nu_init: nu,
                theta0: pi,
            },
            RecurrentCellSpec::Dense {
                hidden,
                nu_init: 0.0,
                theta0: pi,
            },
        ],
        "lstm" => vec![RecurrentCellSpec::Lstm { hidden, nu }],
        other => return Err(Error::ParameterDomain(format!("unknown student family '{other}'"))),
    };
    Ok(StudentFamily {
        name: name.to_string(),
        inits,
    })
}

/// Desk-scale learning-rate grid of a family: half decades around 1e−2 for
/// the diagonal families, decades from 1e−4 for the dense ones.
pub fn default_lr_grid(family: &str) -> Vec<f64> {
    match family {
        "lru" | "complex_diagonal" => vec![3e-3, 1e-2, 3e-2],
        "dense" => vec![1e-4, 1e-3, 1e-2],
        _ => vec![1e-3, 3e-3, 1e-2],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub init: usize,
    pub lr: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub family: String,
    /// Every (init, lr, seed) cell in grid order.
    pub cells: Vec<SweepCell>,
    pub best_init: usize,
    pub best_lr: f64,
    pub best_median_final_loss: f64,
    /// Final loss of each seed at the selected (init, lr).
    pub best_final_losses: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every (init, lr, seed) cell of `family` and selects the (init, lr)
/// with the lowest median final loss across seeds. Cells run on a pool of
/// `jobs` threads; results do not depend on `jobs`.
pub fn lr_grid_sweep(
    family: &StudentFamily,
    teacher: &TeacherSpec,
    cfg: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepOutcome> {
    let grid = cfg.lr_grid.clone().unwrap_or_else(|| vec![cfg.lr]);
    if grid.is_empty() || seeds.is_empty() || family.inits.is_empty() {
        return Err(Error::ParameterDomain(
            "sweep needs a nonempty grid, seed list and init list".into(),
        ));
    }
    let mut jobs_list = Vec::new();
    for init in 0..family.inits.len() {
        for &lr in &grid {
            for &seed in seeds {
                jobs_list.push((init, lr, seed));
            }
        }
    }
    let run = |&(init, lr, seed): &(usize, f64, u64)| -> Result<SweepCell> {
        let teacher = teacher.for_seed(seed)?;
        let run_cfg = TrainConfig {
            lr,
            seed,
            lr_grid: None,
            ..cfg.clone()
        };
        let trace = train(&family.inits[init], &teacher, &run_cfg)?;
        Ok(SweepCell {
            init,
            lr,
            seed,
            final_loss: trace.final_loss(),
            diverged: trace.diverged.is_some(),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let cells: Vec<SweepCell> = pool.install(|| jobs_list.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    if cells.iter().all(|c| c.diverged) {
        return Err(Error::SweepFailure { cells: cells.len() });
    }
    let mut best: Option<(usize, f64, f64, Vec<f64>)> = None;
    for init in 0..family.inits.len() {
        for &lr in &grid {
            let losses: Vec<f64> = cells
                .iter()
                .filter(|c| c.init == init && c.lr == lr)
                .map(|c| c.final_loss)
                .collect();
            let m = median(&losses);
            if best.as_ref().is_none_or(|b| m < b.2) {
                best = Some((init, lr, m, losses));
            }
        }
    }
    let (best_init, best_lr, best_median_final_loss, best_final_losses) = best.expect("grid is nonempty");
    Ok(SweepOutcome {
        family: family.name.clone(),
        cells,
        best_init,
        best_lr,
        best_median_final_loss,
        best_final_losses,
    })
}

/// Generates a teacher-labeled evaluation batch.
pub fn teacher_batch(
    teacher: &DenseLinearSSM,
    inputs: &AutocorrelationModel,
    count: usize,
    length: usize,
    stream: &RngStream,
) -> Result<(SequenceBatch, Vec<f64>)> {
    let x = sample_wss_sequence(inputs, length, count, teacher.d_in, stream)?;
    let y = teacher.forward(&x)?.outputs;
    Ok((x, y))
}
