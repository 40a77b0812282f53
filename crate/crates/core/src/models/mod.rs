//! Recurrent cells with exact forward and backward passes.
//!
//! Every cell maps a [`SequenceBatch`] of shape (count, length, d_in) to
//! outputs of shape (count, length, d_out) with h_{-1} = 0. `backward`
//! returns the exact gradient of Σ_t e_tᵀ y_t for given output errors e.

mod block;
mod dense;
mod diagonal;
mod lstm;
mod params;
mod sensitivity;
mod teacher;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use block::BlockDiagonalCell;
pub use dense::DenseLinearSSM;
pub use diagonal::DiagonalComplexCell;
pub use lstm::{chrono_init, LstmCell};
pub use params::{GradientBundle, ParamBundle, ParamGroup};
pub use sensitivity::{sensitivity_decomposition, SensitivityNorms};
pub use teacher::{build_teacher, build_teacher_eigenbasis, build_teacher_with_dims, diagonalize, TRUNCATION_SIGMAS};

use crate::analytic::{NormalizationSpec, ParametrizationSpec};
use crate::error::{check_dim, Result};
use crate::rng::{RngStream, StreamRng};
use crate::stochastic::SequenceBatch;

/// Hidden trajectories kept for the backward pass, sequence-major rows.
#[derive(Debug, Clone, PartialEq)]
pub enum States {
    Real {
        width: usize,
        h: Vec<f64>,
    },
    Complex {
        width: usize,
        re: Vec<f64>,
        im: Vec<f64>,
    },
    /// `gates` holds post-activation [i, f, g, o] per row.
    Lstm {
        width: usize,
        h: Vec<f64>,
        c: Vec<f64>,
        gates: Vec<f64>,
    },
}

impl States {
    pub fn width(&self) -> usize {
        match self {
            States::Real { width, .. } | States::Complex { width, .. } | States::Lstm { width, .. } => *width,
        }
    }

    /// Mean of |h|² over rows and units.
    pub fn mean_square(&self) -> f64 {
        let (sum, len) = match self {
            States::Real { h, .. } | States::Lstm { h, .. } => (h.iter().map(|v| v * v).sum::<f64>(), h.len()),
            States::Complex { re, im, .. } => (re.iter().zip(im).map(|(a, b)| a * a + b * b).sum::<f64>(), re.len()),
        };
        if len == 0 {
            0.0
        } else {
            sum / len as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub count: usize,
    pub length: usize,
    pub d_out: usize,
    /// (count·length) × d_out, row r = s·length + t.
    pub outputs: Vec<f64>,
    pub states: States,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    pub grads: GradientBundle,
    /// Gradient with respect to the inputs, same layout as the batch.
    pub input_grad: Vec<f64>,
}

pub(crate) fn check_batch(x: &SequenceBatch, fwd: &Forward, errors: &[f64], d_in: usize, d_out: usize) -> Result<()> {
    check_dim(d_in, x.dim, "input dimension")?;
    check_dim(x.count, fwd.count, "forward sequence count")?;
    check_dim(x.length, fwd.length, "forward sequence length")?;
    check_dim(x.count * x.length * d_out, errors.len(), "output errors")
}

/// Any of the supported recurrent cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecurrentCell {
    Dense(DenseLinearSSM),
    BlockDiagonal(BlockDiagonalCell),
    Diagonal(DiagonalComplexCell),
    Lstm(LstmCell),
}

impl RecurrentCell {
    pub fn d_in(&self) -> usize {
        match self {
            Self::Dense(c) => c.d_in,
            Self::BlockDiagonal(c) => c.d_in,
            Self::Diagonal(c) => c.d_in,
            Self::Lstm(c) => c.d_in,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Self::Dense(c) => c.d_out,
            Self::BlockDiagonal(c) => c.d_out,
            Self::Diagonal(c) => c.d_out,
            Self::Lstm(c) => c.d_out,
        }
    }

    pub fn forward(&self, x: &SequenceBatch) -> Result<Forward> {
        match self {
            Self::Dense(c) => c.forward(x),
            Self::BlockDiagonal(c) => c.forward(x),
            Self::Diagonal(c) => c.forward(x),
            Self::Lstm(c) => c.forward(x),
        }
    }

    pub fn backward(&self, x: &SequenceBatch, fwd: &Forward, errors: &[f64]) -> Result<Backward> {
        match self {
            Self::Dense(c) => c.backward(x, fwd, errors),
            Self::BlockDiagonal(c) => c.backward(x, fwd, errors),
            Self::Diagonal(c) => c.backward(x, fwd, errors),
            Self::Lstm(c) => c.backward(x, fwd, errors),
        }
    }

    pub fn params(&self) -> ParamBundle {
        match self {
            Self::Dense(c) => c.params(),
            Self::BlockDiagonal(c) => c.params(),
            Self::Diagonal(c) => c.params(),
            Self::Lstm(c) => c.params(),
        }
    }

    pub fn set_params(&mut self, p: &ParamBundle) -> Result<()> {
        match self {
            Self::Dense(c) => c.set_params(p),
            Self::BlockDiagonal(c) => c.set_params(p),
            Self::Diagonal(c) => c.set_params(p),
            Self::Lstm(c) => c.set_params(p),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().flatten()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let p = self.params().with_flat(flat)?;
        self.set_params(&p)
    }
}

/// Student architecture and initialization law.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecurrentCellSpec {
    /// Dense linear RNN initialized like a teacher with magnitude floor `nu_init`.
    Dense { hidden: usize, nu_init: f64, theta0: f64 },
    /// 2 × 2 rotation-scale blocks, eigenvalue magnitudes ring-uniform in [nu_init, 1).
    BlockDiagonal { hidden: usize, nu_init: f64, theta0: f64 },
    /// Diagonal complex cell, magnitudes ring-uniform in [nu_init, nu_max), angles in
    /// [−θ0, θ0] (in (0, θ0] for exponential angle maps).
    ComplexDiagonal {
        hidden: usize,
        nu_init: f64,
        #[serde(default = "default_nu_max")]
        nu_max: f64,
        theta0: f64,
        param: ParametrizationSpec,
        norm: NormalizationSpec,
    },
    /// Chrono-initialized LSTM.
    Lstm { hidden: usize, nu: f64 },
}

/// Largest initial eigenvalue magnitude drawn by the ring law.
pub const INIT_MAX_MAGNITUDE: f64 = 0.9999;

fn default_nu_max() -> f64 {
    1.0
}

/// Draws |λ| with |λ|² uniform on [lo², hi²), capped at [`INIT_MAX_MAGNITUDE`].
fn ring_magnitude(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo * lo, hi * hi);
    (a + (b - a) * rng.uniform()).sqrt().min(INIT_MAX_MAGNITUDE)
}

impl RecurrentCellSpec {
    /// Diagonal cell without input normalization, parametrized by real and
    /// imaginary parts.
    pub fn complex_diagonal(hidden: usize, nu_init: f64, theta0: f64) -> Self {
        Self::ComplexDiagonal {
            hidden,
            nu_init,
            nu_max: 1.0,
            theta0,
            param: ParametrizationSpec::Direct,
            norm: NormalizationSpec::none(),
        }
    }

    /// Exponential magnitude and angle maps with γ = √(1 − |λ|²).
    pub fn lru(hidden: usize, nu_init: f64, theta0: f64) -> Self {
        Self::ComplexDiagonal {
            hidden,
            nu_init,
            nu_max: 1.0,
            theta0,
            param: ParametrizationSpec::PolarExpAngle,
            norm: NormalizationSpec::sqrt_one_minus_nu_sq(false),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Self::Dense { hidden, .. }
            | Self::BlockDiagonal { hidden, .. }
            | Self::ComplexDiagonal { hidden, .. }
            | Self::Lstm { hidden, .. } => *hidden,
        }
    }

    /// Short family name used in tables.
    pub fn family(&self) -> &'static str {
        match self {
            Self::Dense { .. } => "dense",
            Self::BlockDiagonal { .. } => "block_diagonal",
            Self::ComplexDiagonal { param, norm, .. } => {
                if matches!(norm.kind, crate::analytic::GammaKind::SqrtOneMinusNuSq) {
                    "lru"
                } else if *param == ParametrizationSpec::Direct {
                    "complex_diagonal"
                } else {
                    "complex_diagonal_polar"
                }
            }
            Self::Lstm { .. } => "lstm",
        }
    }

    pub fn build(&self, d_in: usize, d_out: usize, stream: &RngStream) -> Result<RecurrentCell> {
        match *self {
            Self::Dense {
                hidden,
                nu_init,
                theta0,
            } => Ok(RecurrentCell::Dense(build_teacher_with_dims(
                hidden, d_in, d_out, nu_init, theta0, stream,
            )?)),
            Self::BlockDiagonal {
                hidden,
                nu_init,
                theta0,
            } => {
                if hidden % 2 != 0 {
                    return Err(crate::Error::ParameterDomain(format!(
                        "block-diagonal width must be even, got {hidden}"
                    )));
                }
                let mut rng = stream.child(0).rng();
                let mut blocks = Vec::with_capacity(2 * hidden);
                for _ in 0..hidden / 2 {
                    let r = ring_magnitude(&mut rng, nu_init, 1.0);
                    let th = rng.uniform_range(-theta0, theta0);
                    let (a, b) = (r * th.cos(), r * th.sin());
                    blocks.extend_from_slice(&[a, -b, b, a]);
                }
                let (b, c, d) = teacher::readout_weights(hidden, d_in, d_out, &stream.child(1));
                Ok(RecurrentCell::BlockDiagonal(BlockDiagonalCell::new(
                    hidden, d_in, d_out, blocks, b, c, d,
                )?))
            }
            Self::ComplexDiagonal {
                hidden,
                nu_init,
                nu_max,
                theta0,
                param,
                ref norm,
            } => {
                let mut rng = stream.child(0).rng();
                let exp_angle = matches!(
                    param,
                    ParametrizationSpec::PolarExpAngle | ParametrizationSpec::TanhExpAngle
                );
                let mut lambda = Vec::with_capacity(hidden);
                for _ in 0..hidden {
                    let r = ring_magnitude(&mut rng, nu_init, nu_max).max(1e-6);
                    let th = if exp_angle {
                        // (0, θ0]: the exponential angle map cannot reach θ ≤ 0
                        theta0 * (1.0 - rng.uniform())
                    } else {
                        rng.uniform_range(-theta0, theta0)
                    };
                    lambda.push(Complex64::from_polar(r, th));
                }
                let mut w = stream.child(1).rng();
                let b_std = (1.0 / (2.0 * d_in as f64)).sqrt();
                let b: Vec<Complex64> = (0..hidden * d_in)
                    .map(|_| Complex64::new(b_std * w.normal(), b_std * w.normal()))
                    .collect();
                let c_std = 1.0 / (hidden as f64).sqrt();
                let c: Vec<Complex64> = (0..d_out * hidden)
                    .map(|_| Complex64::new(c_std * w.normal(), c_std * w.normal()))
                    .collect();
                let d_std = 1.0 / (d_in as f64).sqrt();
                let d: Vec<f64> = (0..d_out * d_in).map(|_| d_std * w.normal()).collect();
                Ok(RecurrentCell::Diagonal(DiagonalComplexCell::from_lambda(
                    &lambda,
                    &b,
                    &c,
                    d,
                    d_in,
                    d_out,
                    param,
                    norm.clone(),
                )?))
            }
            Self::Lstm { hidden, nu } => Ok(RecurrentCell::Lstm(chrono_init(hidden, d_in, d_out, nu, stream)?)),
        }
    }
}

/// Relative error ‖g_fd − g‖ / ‖g‖ per parameter group between `backward`
/// and central finite differences of Σ_t e_tᵀ y_t with step `h`.
pub fn gradient_check(cell: &RecurrentCell, x: &SequenceBatch, errors: &[f64], h: f64) -> Result<Vec<(String, f64)>> {
    let fwd = cell.forward(x)?;
    let exact = cell.backward(x, &fwd, errors)?.grads;
    let objective =
        |c: &RecurrentCell| -> Result<f64> { Ok(c.forward(x)?.outputs.iter().zip(errors).map(|(y, e)| y * e).sum()) };
    let base = cell.flat_params();
    let mut probe = cell.clone();
    let mut out = Vec::with_capacity(exact.groups.len());
    let mut k = 0;
    for g in &exact.groups {
        let (mut diff, mut norm) = (0.0, 0.0);
        for &gv in &g.values {
            let mut w = base.clone();
            w[k] = base[k] + h;
            probe.set_flat_params(&w)?;
            let up = objective(&probe)?;
            w[k] = base[k] - h;
            probe.set_flat_params(&w)?;
            let down = objective(&probe)?;
            let fd = (up - down) / (2.0 * h);
            diff += (fd - gv).powi(2);
            norm += gv * gv;
            k += 1;
        }
        let rel = if norm == 0.0 { diff.sqrt() } else { (diff / norm).sqrt() };
        out.push((g.label.clone(), rel));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
