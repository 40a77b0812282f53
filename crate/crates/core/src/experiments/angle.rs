use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic::{normalized_loss_1d, ParametrizationSpec};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngStream;

/// Angle maps compared in the angle-learning scenario. All use ν = tanh ω_ν.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleParam {
    /// θ = ω_θ.
    Polar,
    /// θ = exp ω_θ.
    Exp,
    /// θ = ω_θ (1 − ν²)/(ν√(1 + ν²)).
    Optimal,
}

impl AngleParam {
    pub const ALL: [AngleParam; 3] = [AngleParam::Polar, AngleParam::Exp, AngleParam::Optimal];

    pub fn spec(&self) -> ParametrizationSpec {
        match self {
            AngleParam::Polar => ParametrizationSpec::Tanh,
            AngleParam::Exp => ParametrizationSpec::TanhExpAngle,
            AngleParam::Optimal => ParametrizationSpec::Optimal1D,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AngleParam::Polar => "polar",
            AngleParam::Exp => "exp",
            AngleParam::Optimal => "optimal",
        }
    }
}

/// Value and gradient G = ∂L/∂Re λ + i ∂L/∂Im λ of the normalized
/// one-dimensional loss.
pub fn normalized_loss_1d_gradient(lambda: Complex64, lambda_star: Complex64) -> Result<(f64, Complex64)> {
    let loss = normalized_loss_1d(lambda, lambda_star)?;
    let g = (1.0 - lambda.norm_sqr()).sqrt();
    let g_star = (1.0 - lambda_star.norm_sqr()).sqrt();
    let d = Complex64::new(1.0, 0.0) - lambda.conj() * lambda_star;
    // F = γ γ* / D with ∂D/∂x = −λ*, ∂D/∂y = iλ*
    let common = lambda_star * g / (d * d);
    let dfx = Complex64::new(-lambda.re / g, 0.0) / d + common;
    let dfy = Complex64::new(-lambda.im / g, 0.0) / d - Complex64::i() * common;
    Ok((loss, Complex64::new(-g_star * dfx.re, -g_star * dfy.re)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleConfig {
    pub lr: f64,
    pub steps: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Relative perturbation of the initial point: ω_ν moves by up to
    /// `init_jitter` and θ by up to a fraction `init_jitter` of itself.
    #[serde(default)]
    pub init_jitter: f64,
}

impl Default for AngleConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 50_000,
            optimizer: AdamConfig::default(),
            seed: 0,
            init_jitter: 0.0,
        }
    }
}

/// Default start 0.99·e^{iπ/4}.
pub fn default_angle_start() -> Complex64 {
    Complex64::from_polar(0.99, std::f64::consts::FRAC_PI_4)
}

/// Default target 0.99·e^{iπ/100}.
pub fn default_angle_target() -> Complex64 {
    Complex64::from_polar(0.99, std::f64::consts::PI / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleTrajectory {
    pub param: AngleParam,
    /// λ after each step.
    pub lambdas: Vec<Complex64>,
    pub losses: Vec<f64>,
    pub diverged: Option<usize>,
}

impl AngleTrajectory {
    pub fn terminal_distance(&self, lambda_star: Complex64) -> f64 {
        match (self.diverged, self.lambdas.last()) {
            (None, Some(l)) => (l - lambda_star).norm(),
            _ => f64::INFINITY,
        }
    }
}

/// Adam on (ω_ν, ω_θ) minimizing the normalized loss, with exact gradients.
pub fn train_1d_angle(
    lambda0: Complex64,
    lambda_star: Complex64,
    theta_param: AngleParam,
    cfg: &AngleConfig,
) -> Result<AngleTrajectory> {
    if !(lambda0.norm() < 1.0) {
        return Err(Error::ParameterDomain(format!(
            "start needs |lambda0| < 1, got {}",
            lambda0.norm()
        )));
    }
    if !(cfg.lr > 0.0) || cfg.steps == 0 {
        return Err(Error::ParameterDomain(
            "angle training needs lr > 0 and steps >= 1".into(),
        ));
    }
    let spec = theta_param.spec();
    let mut w = spec.omega(lambda0)?;
    if cfg.init_jitter > 0.0 {
        let mut rng = RngStream::new(cfg.seed).rng();
        let w_nu = w[0] + cfg.init_jitter * (2.0 * rng.uniform() - 1.0);
        let theta = lambda0.arg() * (1.0 + cfg.init_jitter * (2.0 * rng.uniform() - 1.0));
        w = spec.omega(Complex64::from_polar(w_nu.tanh(), theta))?;
    }
    let mut adam = Adam::new(2, cfg.optimizer);
    let mut lambdas = Vec::with_capacity(cfg.steps);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut diverged = None;
    for step in 0..cfg.steps {
        let p = match spec.point(w) {
            Ok(p) if p.lambda.norm() < 1.0 => p,
            _ => {
                diverged = Some(step);
                break;
            }
        };
        let (loss, g) = match normalized_loss_1d_gradient(p.lambda, lambda_star) {
            Ok(v) if v.0.is_finite() => v,
            _ => {
                diverged = Some(step);
                break;
            }
        };
        let grad = [
            g.re * p.jacobian[0].re + g.im * p.jacobian[0].im,
            g.re * p.jacobian[1].re + g.im * p.jacobian[1].im,
        ];
        adam.step(&mut w, &grad, cfg.lr)?;
        let Ok(next) = spec.lambda(w) else {
            diverged = Some(step);
            break;
        };
        losses.push(loss);
        lambdas.push(next);
    }
    Ok(AngleTrajectory {
        param: theta_param,
        lambdas,
        losses,
        diverged,
    })
}
