//! Closed-form variances, sensitivities, one-dimensional losses and Hessian
//! kernels for diagonal linear recurrences h_t = λ h_{t-1} + x_t.
//!
//! Public derivatives are taken with respect to real coordinates only.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::{
    alpha_weighted_double_sum, geometric_double_sum, weighted_double_sum, AutocorrelationModel, DEFAULT_TOL,
};

/// Distance to a pole below which formulas refuse to evaluate.
pub const POLE_EPS: f64 = 1e-12;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    Cartesian { re: f64, im: f64 },
    Polar { nu: f64, theta: f64 },
}

/// A recurrent eigenvalue strictly inside the unit disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub value: Complex64,
    pub representation: Representation,
}

impl Eigenvalue {
    pub fn cartesian(re: f64, im: f64) -> Result<Self> {
        let value = Complex64::new(re, im);
        check_stable(value)?;
        Ok(Self {
            value,
            representation: Representation::Cartesian { re, im },
        })
    }

    pub fn real(x: f64) -> Result<Self> {
        Self::cartesian(x, 0.0)
    }

    /// `nu ≥ 0`, `theta ∈ (−π, π]`.
    pub fn polar(nu: f64, theta: f64) -> Result<Self> {
        if nu < 0.0 || !(theta > -PI && theta <= PI) {
            return Err(Error::ParameterDomain(format!(
                "polar eigenvalue needs nu >= 0 and theta in (-pi, pi], got ({nu}, {theta})"
            )));
        }
        let value = Complex64::from_polar(nu, theta);
        check_stable(value)?;
        Ok(Self {
            value,
            representation: Representation::Polar { nu, theta },
        })
    }

    pub fn nu(&self) -> f64 {
        match self.representation {
            Representation::Polar { nu, .. } => nu,
            Representation::Cartesian { .. } => self.value.norm(),
        }
    }

    pub fn theta(&self) -> f64 {
        match self.representation {
            Representation::Polar { theta, .. } => theta,
            Representation::Cartesian { .. } => self.value.arg(),
        }
    }
}

impl From<Eigenvalue> for Complex64 {
    fn from(e: Eigenvalue) -> Self {
        e.value
    }
}

fn check_stable(lambda: Complex64) -> Result<()> {
    let gap = 1.0 - lambda.norm_sqr();
    if gap < POLE_EPS || !gap.is_finite() {
        return Err(Error::Divergence(format!(
            "|lambda| = {} is not inside the unit disc",
            lambda.norm()
        )));
    }
    Ok(())
}

fn check_pole(z: Complex64, what: &str) -> Result<()> {
    if (ONE - z).norm() < POLE_EPS {
        return Err(Error::Divergence(format!("pole: 1 - {what} vanishes")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization

/// A user-supplied input normalization: its value and its real gradient
/// ∂γ/∂Re λ + i ∂γ/∂Im λ.
#[derive(Clone)]
pub struct CustomGamma {
    pub value: Arc<dyn Fn(Complex64) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>,
}

impl fmt::Debug for CustomGamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomGamma")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    #[default]
    None,
    /// γ(λ) = √(1 − |λ|²).
    SqrtOneMinusNuSq,
    #[serde(skip)]
    Custom(CustomGamma),
}

/// Input scaling γ(λ) applied before the recurrence.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub kind: GammaKind,
    /// Treat γ as a constant when differentiating.
    pub stop_gradient: bool,
}

impl NormalizationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn sqrt_one_minus_nu_sq(stop_gradient: bool) -> Self {
        Self {
            kind: GammaKind::SqrtOneMinusNuSq,
            stop_gradient,
        }
    }

    pub fn gamma(&self, lambda: Complex64) -> Result<f64> {
        match &self.kind {
            GammaKind::None => Ok(1.0),
            GammaKind::SqrtOneMinusNuSq => {
                let v = 1.0 - lambda.norm_sqr();
                if v < 0.0 {
                    return Err(Error::Divergence(format!(
                        "gamma undefined for |lambda| = {}",
                        lambda.norm()
                    )));
                }
                Ok(v.sqrt())
            }
            GammaKind::Custom(c) => Ok((c.value)(lambda)),
        }
    }

    /// ∂γ/∂Re λ + i ∂γ/∂Im λ, ignoring `stop_gradient`.
    pub fn gamma_gradient(&self, lambda: Complex64) -> Result<Complex64> {
        match &self.kind {
            GammaKind::None => Ok(Complex64::new(0.0, 0.0)),
            GammaKind::SqrtOneMinusNuSq => {
                let g2 = 1.0 - lambda.norm_sqr();
                if g2 < POLE_EPS {
                    return Err(Error::Divergence("gamma gradient at |lambda| = 1".into()));
                }
                Ok(-lambda / g2.sqrt())
            }
            GammaKind::Custom(c) => Ok((c.gradient)(lambda)),
        }
    }

    /// dγ/dω for a coordinate with dλ/dω = `z`; zero under stop-gradient.
    pub fn gamma_derivative(&self, lambda: Complex64, z: Complex64) -> Result<f64> {
        if self.stop_gradient {
            return Ok(0.0);
        }
        let g = self.gamma_gradient(lambda)?;
        Ok(g.re * z.re + g.im * z.im)
    }
}

// ---------------------------------------------------------------------------
// Parametrization

/// A map from two real coordinates (ω_0, ω_1) to λ.
///
/// Polar kinds use ω_0 for the magnitude and ω_1 for the angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParametrizationSpec {
    /// λ = ω_0 + i ω_1.
    Direct,
    /// ν = tanh ω_0, θ = ω_1.
    Tanh,
    /// ν = exp(−exp ω_0), θ = ω_1.
    DoubleExp,
    /// ν = tanh ω_0, θ = ω_1 (1−ν²)/(ν√(1+ν²)).
    Optimal1D,
    /// ν = ω_0, θ = ω_1.
    PolarDirect,
    /// ν = exp(−exp ω_0), θ = exp ω_1.
    PolarExpAngle,
    /// ν = tanh ω_0, θ = exp ω_1.
    TanhExpAngle,
}

/// λ and its derivatives with respect to both coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPoint {
    pub lambda: Complex64,
    pub jacobian: [Complex64; 2],
}

/// θ scale of the optimal one-dimensional parametrization and its ν-derivative.
fn optimal_angle_scale(nu: f64) -> Result<(f64, f64)> {
    if nu == 0.0 {
        return Err(Error::ParameterDomain("optimal angle map is singular at nu = 0".into()));
    }
    let q = (1.0 + nu * nu).sqrt();
    let s = (1.0 - nu * nu) / (nu * q);
    // d/dν log s = −2ν/(1−ν²) − 1/ν − ν/(1+ν²)
    let ds = s * (-2.0 * nu / (1.0 - nu * nu) - 1.0 / nu - nu / (1.0 + nu * nu));
    Ok((s, ds))
}

impl ParametrizationSpec {
    pub fn is_polar(&self) -> bool {
        !matches!(self, Self::Direct)
    }

    /// Labels of the two coordinates.
    pub fn coordinate_names(&self) -> [&'static str; 2] {
        match self {
            Self::Direct => ["lambda.re", "lambda.im"],
            _ => ["omega_nu", "omega_theta"],
        }
    }

    /// (ν, dν/dω_0).
    fn magnitude(&self, w: f64) -> (f64, f64) {
        match self {
            Self::Tanh | Self::Optimal1D | Self::TanhExpAngle => {
                let nu = w.tanh();
                (nu, 1.0 - nu * nu)
            }
            Self::DoubleExp | Self::PolarExpAngle => {
                let e = w.exp();
                let nu = (-e).exp();
                (nu, -e * nu)
            }
            Self::PolarDirect => (w, 1.0),
            Self::Direct => unreachable!("direct parametrization has no magnitude map"),
        }
    }

    /// (θ, ∂θ/∂ω_1, ∂θ/∂ν).
    fn angle(&self, w: f64, nu: f64) -> Result<(f64, f64, f64)> {
        Ok(match self {
            Self::Tanh | Self::DoubleExp | Self::PolarDirect => (w, 1.0, 0.0),
            Self::PolarExpAngle | Self::TanhExpAngle => {
                let e = w.exp();
                (e, e, 0.0)
            }
            Self::Optimal1D => {
                let (s, ds) = optimal_angle_scale(nu)?;
                (w * s, s, w * ds)
            }
            Self::Direct => unreachable!("direct parametrization has no angle map"),
        })
    }

    pub fn lambda(&self, omega: [f64; 2]) -> Result<Complex64> {
        Ok(self.point(omega)?.lambda)
    }

    /// λ(ω) with its Jacobian.
    pub fn point(&self, omega: [f64; 2]) -> Result<ParamPoint> {
        if let Self::Direct = self {
            return Ok(ParamPoint {
                lambda: Complex64::new(omega[0], omega[1]),
                jacobian: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)],
            });
        }
        let (nu, dnu) = self.magnitude(omega[0]);
        let (theta, dtheta_dw, dtheta_dnu) = self.angle(omega[1], nu)?;
        let phase = Complex64::from_polar(1.0, theta);
        let lambda = phase * nu;
        let i_lambda = Complex64::new(0.0, 1.0) * lambda;
        Ok(ParamPoint {
            lambda,
            jacobian: [phase * dnu + i_lambda * (dtheta_dnu * dnu), i_lambda * dtheta_dw],
        })
    }

    /// Coordinates ω with λ(ω) = `lambda`. Angles are taken in (−π, π].
    pub fn omega(&self, lambda: Complex64) -> Result<[f64; 2]> {
        if let Self::Direct = self {
            return Ok([lambda.re, lambda.im]);
        }
        let nu = lambda.norm();
        let theta = if nu == 0.0 { 0.0 } else { lambda.arg() };
        let w0 = match self {
            Self::Tanh | Self::Optimal1D | Self::TanhExpAngle => {
                if nu >= 1.0 {
                    return Err(Error::ParameterDomain(format!("tanh needs nu < 1, got {nu}")));
                }
                nu.atanh()
            }
            Self::DoubleExp | Self::PolarExpAngle => {
                if !(nu > 0.0 && nu < 1.0) {
                    return Err(Error::ParameterDomain(format!("double-exp needs 0 < nu < 1, got {nu}")));
                }
                (-nu.ln()).ln()
            }
            Self::PolarDirect => nu,
            Self::Direct => unreachable!(),
        };
        let w1 = match self {
            Self::PolarExpAngle | Self::TanhExpAngle => {
                if !(theta > 0.0) {
                    return Err(Error::ParameterDomain(format!(
                        "exponential angle map needs theta > 0, got {theta}"
                    )));
                }
                theta.ln()
            }
            Self::Optimal1D => theta / optimal_angle_scale(nu)?.0,
            _ => theta,
        };
        Ok([w0, w1])
    }
}

/// The optimal one-dimensional parametrization at (ω_ν, ω_θ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimal1DPoint {
    pub lambda: Eigenvalue,
    /// dν/dω_ν = 1 − ν².
    pub nu_prime: f64,
    /// dθ/dω_θ = (1 − ν²)/(ν √(1 + ν²)).
    pub theta_prime: f64,
}

pub fn optimal_1d_parametrization(omega_nu: f64, omega_theta: f64) -> Result<Optimal1DPoint> {
    let nu = omega_nu.tanh();
    let (s, _) = optimal_angle_scale(nu)?;
    let theta = omega_theta * s;
    let wrapped = theta.sin().atan2(theta.cos());
    let lambda = if nu < 0.0 {
        Eigenvalue::cartesian(nu * theta.cos(), nu * theta.sin())?
    } else {
        Eigenvalue::polar(nu, wrapped)?
    };
    Ok(Optimal1DPoint {
        lambda,
        nu_prime: 1.0 - nu * nu,
        theta_prime: s,
    })
}

// ---------------------------------------------------------------------------
// Variances

/// E[h^α h^β] = Σ α^n β^m R(n−m) for the filters h^α = Σ α^n x_{−n}.
pub fn cross_moment(alpha: Complex64, beta: Complex64, model: &AutocorrelationModel) -> Result<Complex64> {
    check_stable(alpha)?;
    check_stable(beta)?;
    match model {
        AutocorrelationModel::Empirical { .. } => geometric_double_sum(alpha, beta, model, DEFAULT_TOL),
        _ => {
            let rho = model.rho().expect("rational model");
            g_rational(alpha, beta, rho)
        }
    }
}

/// (1 − ρ²αβ) / ((1 − αβ)(1 − ρα)(1 − ρβ)).
fn g_rational(alpha: Complex64, beta: Complex64, rho: f64) -> Result<Complex64> {
    let p = alpha * beta;
    check_pole(p, "alpha*beta")?;
    if rho == 0.0 {
        return Ok(ONE / (ONE - p));
    }
    check_pole(alpha * rho, "rho*alpha")?;
    check_pole(beta * rho, "rho*beta")?;
    if rho == 1.0 {
        return Ok(ONE / ((ONE - alpha) * (ONE - beta)));
    }
    Ok((ONE - p * (rho * rho)) / ((ONE - p) * (ONE - alpha * rho) * (ONE - beta * rho)))
}

/// ∂/∂α of [`cross_moment`]: E[(dh^α/dα) h^β].
pub fn cross_moment_alpha_derivative(
    alpha: Complex64,
    beta: Complex64,
    model: &AutocorrelationModel,
) -> Result<Complex64> {
    check_stable(alpha)?;
    check_stable(beta)?;
    match model {
        AutocorrelationModel::Empirical { .. } => alpha_weighted_double_sum(alpha, beta, model, DEFAULT_TOL),
        _ => {
            let rho = model.rho().expect("rational model");
            let g = g_rational(alpha, beta, rho)?;
            let p = alpha * beta;
            let dlog = beta / (ONE - p) + rho / (ONE - alpha * rho) - beta * (rho * rho) / (ONE - p * (rho * rho));
            Ok(g * dlog)
        }
    }
}

/// E[|h_t|²] in the stationary regime.
pub fn hidden_variance(lambda: impl Into<Complex64>, model: &AutocorrelationModel) -> Result<f64> {
    let l = lambda.into();
    check_stable(l)?;
    match model {
        AutocorrelationModel::Iid => Ok(1.0 / (1.0 - l.norm_sqr())),
        AutocorrelationModel::Constant => {
            check_pole(l, "lambda")?;
            Ok(1.0 / (ONE - l).norm_sqr())
        }
        AutocorrelationModel::ExpDecay { rho } => {
            let rho = *rho;
            check_pole(l * rho, "rho*lambda")?;
            Ok((1.0 - rho * rho * l.norm_sqr()) / ((ONE - l * rho).norm_sqr() * (1.0 - l.norm_sqr())))
        }
        AutocorrelationModel::Empirical { .. } => Ok(geometric_double_sum(l, l.conj(), model, DEFAULT_TOL)?.re),
    }
}

/// E[|dh_t/dλ|²] in the stationary regime.
pub fn sensitivity_variance(lambda: impl Into<Complex64>, model: &AutocorrelationModel) -> Result<f64> {
    let l = lambda.into();
    check_stable(l)?;
    Ok(s_kernel_model(l, l.conj(), model)?.re)
}

/// S(λ_i, λ_j) = Σ_{n,m≥1} n m λ_i^{n−1} λ_j^{m−1} ρ^|n−m|.
pub fn s_kernel(lambda_i: Complex64, lambda_j: Complex64, rho: f64) -> Result<Complex64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::ParameterDomain(format!("rho must lie in [0, 1], got {rho}")));
    }
    let x = lambda_i * lambda_j;
    check_pole(x, "lambda_i*lambda_j")?;
    let one_minus_x = ONE - x;
    if rho == 0.0 {
        return Ok((ONE + x) / (one_minus_x * one_minus_x * one_minus_x));
    }
    check_pole(lambda_i * rho, "rho*lambda_i")?;
    check_pole(lambda_j * rho, "rho*lambda_j")?;
    let di = ONE - lambda_i * rho;
    let dj = ONE - lambda_j * rho;
    if rho == 1.0 {
        return Ok(ONE / (di * di * dj * dj));
    }
    let s = lambda_i + lambda_j;
    let r2 = rho * rho;
    let r4 = r2 * r2;
    let x2 = x * x;
    let numerator =
        ONE + x - x * (4.0 * r2) + x2 * (4.0 * r2) - x2 * r4 - x2 * x * r4 - x * s * (2.0 * rho * (1.0 - r2));
    Ok(numerator / (one_minus_x * one_minus_x * one_minus_x * di * di * dj * dj))
}

/// [`s_kernel`] for any autocorrelation model.
pub fn s_kernel_model(lambda_i: Complex64, lambda_j: Complex64, model: &AutocorrelationModel) -> Result<Complex64> {
    match model.rho() {
        Some(rho) => s_kernel(lambda_i, lambda_j, rho),
        None => weighted_double_sum(lambda_i, lambda_j, model, DEFAULT_TOL),
    }
}

/// E[|dh_t/dω_0|²] for h_t = γ(λ) Σ λ^n x_{t−n} with λ = λ(ω).
///
/// `lambda` is mapped to ω through `param`; the γ′ term is included unless the
/// normalization sets `stop_gradient`.
pub fn normalized_sensitivity(
    lambda: impl Into<Complex64>,
    norm: &NormalizationSpec,
    param: &ParametrizationSpec,
    model: &AutocorrelationModel,
) -> Result<f64> {
    normalized_sensitivity_coordinate(lambda, norm, param, model, 0)
}

/// [`normalized_sensitivity`] for coordinate `coord` ∈ {0, 1}.
pub fn normalized_sensitivity_coordinate(
    lambda: impl Into<Complex64>,
    norm: &NormalizationSpec,
    param: &ParametrizationSpec,
    model: &AutocorrelationModel,
    coord: usize,
) -> Result<f64> {
    if coord > 1 {
        return Err(Error::Contract(format!("coordinate {coord} out of range")));
    }
    let l = lambda.into();
    check_stable(l)?;
    let point = param.point(param.omega(l)?)?;
    let z = point.jacobian[coord];
    let gamma = norm.gamma(l)?;
    let dgamma = norm.gamma_derivative(l, z)?;
    let mut total = gamma * gamma * z.norm_sqr() * sensitivity_variance(l, model)?;
    if dgamma != 0.0 {
        let var = hidden_variance(l, model)?;
        let k = cross_moment_alpha_derivative(l, l.conj(), model)?;
        total += dgamma * dgamma * var + 2.0 * dgamma * gamma * (z * k).re;
    }
    Ok(total)
}

/// The magnitude and angle addends ¼E[|dh/dλ|²]ν′² and ¼E[|dh/dλ|²]ν²θ′²,
/// in the ½-Wirtinger convention.
pub fn polar_sensitivity_split(
    lambda: &Eigenvalue,
    nu_prime: f64,
    theta_prime: f64,
    model: &AutocorrelationModel,
) -> Result<(f64, f64)> {
    let s = sensitivity_variance(lambda.value, model)?;
    let nu = lambda.nu();
    Ok((
        0.25 * s * nu_prime * nu_prime,
        0.25 * s * nu * nu * theta_prime * theta_prime,
    ))
}

// ---------------------------------------------------------------------------
// One-dimensional losses

/// lim_t ½E|h_t − h*_t|² for unit-gain filters with eigenvalues λ and λ*,
/// inputs with R(Δ) = ρ^|Δ|.
pub fn loss_1d(lambda: Complex64, lambda_star: Complex64, rho: f64) -> Result<f64> {
    check_stable(lambda)?;
    check_stable(lambda_star)?;
    if rho == 0.0 {
        check_pole(lambda.conj() * lambda_star, "conj(lambda)*lambda_star")?;
        let cross = ONE / (ONE - lambda * lambda_star.conj());
        return Ok(0.5 * (1.0 / (1.0 - lambda.norm_sqr()) + 1.0 / (1.0 - lambda_star.norm_sqr()) - 2.0 * cross.re));
    }
    if rho == 1.0 {
        check_pole(lambda, "lambda")?;
        check_pole(lambda_star, "lambda_star")?;
        return Ok(0.5 * (ONE / (ONE - lambda) - ONE / (ONE - lambda_star)).norm_sqr());
    }
    let model = AutocorrelationModel::exp_decay(rho)?;
    loss_1d_model(lambda, lambda_star, &model)
}

/// [`loss_1d`] for any autocorrelation model, from the four cross moments.
pub fn loss_1d_model(lambda: Complex64, lambda_star: Complex64, model: &AutocorrelationModel) -> Result<f64> {
    check_stable(lambda)?;
    check_stable(lambda_star)?;
    let sum = |a: Complex64, b: Complex64| geometric_double_sum(a, b, model, DEFAULT_TOL);
    let hh = sum(lambda, lambda.conj())?;
    let ss = sum(lambda_star, lambda_star.conj())?;
    let hs = sum(lambda, lambda_star.conj())?;
    let sh = sum(lambda_star, lambda.conj())?;
    Ok(0.5 * (hh + ss - hs - sh).re)
}

/// 1 − Re[γ(λ)γ(λ*)/(1 − λ̄λ*)] with γ = √(1 − |·|²), IID inputs.
pub fn normalized_loss_1d(lambda: Complex64, lambda_star: Complex64) -> Result<f64> {
    check_stable(lambda)?;
    check_stable(lambda_star)?;
    let denom = ONE - lambda.conj() * lambda_star;
    if denom.norm() < POLE_EPS {
        return Err(Error::Divergence("pole: 1 - conj(lambda)*lambda_star vanishes".into()));
    }
    let g = (1.0 - lambda.norm_sqr()).sqrt() * (1.0 - lambda_star.norm_sqr()).sqrt();
    Ok(1.0 - (g / denom).re)
}

// ---------------------------------------------------------------------------
// Hessian at optimality

fn check_unit_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::Contract(format!("unit index {i} out of range for {n} units")));
    }
    Ok(())
}

/// d²L/dλ_i dλ_j = b_i b_j c_i c_j S(λ_i, λ_j) and
/// d²L/dλ_i dλ̄_j = b_i b̄_j c_i c̄_j S(λ_i, λ̄_j).
pub fn complex_hessian_entries(
    i: usize,
    j: usize,
    b: &[Complex64],
    c: &[Complex64],
    lambda: &[Complex64],
    model: &AutocorrelationModel,
) -> Result<(Complex64, Complex64)> {
    let n = lambda.len();
    crate::error::check_dim(n, b.len(), "b length")?;
    crate::error::check_dim(n, c.len(), "c length")?;
    check_unit_index(i, n)?;
    check_unit_index(j, n)?;
    for &l in lambda {
        check_stable(l)?;
    }
    let a = b[i] * b[j] * c[i] * c[j] * s_kernel_model(lambda[i], lambda[j], model)?;
    let bb = b[i] * b[j].conj() * c[i] * c[j].conj() * s_kernel_model(lambda[i], lambda[j].conj(), model)?;
    Ok((a, bb))
}

/// Real Hessian block for coordinates with dλ_i/dω = `zi[k]`, dλ_j/dω = `zj[l]`:
/// H_kl = ½ Re(z w A_ij + z w̄ B_ij).
fn block_from_jacobians(a: Complex64, b: Complex64, zi: [Complex64; 2], zj: [Complex64; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        for l in 0..2 {
            out[k][l] = 0.5 * (zi[k] * zj[l] * a + zi[k] * zj[l].conj() * b).re;
        }
    }
    out
}

/// Hessian block over (Re λ_i, Im λ_i) × (Re λ_j, Im λ_j) at optimality.
pub fn hessian_block_ri(
    i: usize,
    j: usize,
    b: &[Complex64],
    c: &[Complex64],
    lambda: &[Complex64],
    rho: f64,
) -> Result<[[f64; 2]; 2]> {
    let model = AutocorrelationModel::from_rho(rho)?;
    let (a, bb) = complex_hessian_entries(i, j, b, c, lambda, &model)?;
    Ok([
        [0.5 * (a + bb).re, 0.5 * (bb - a).im],
        [0.5 * (-a - bb).im, 0.5 * (bb - a).re],
    ])
}

/// Hessian block over (ω_0, ω_1) of unit i × unit j under `param`.
pub fn hessian_block_param(
    i: usize,
    j: usize,
    b: &[Complex64],
    c: &[Complex64],
    lambda: &[Complex64],
    param: &ParametrizationSpec,
    model: &AutocorrelationModel,
) -> Result<[[f64; 2]; 2]> {
    let (a, bb) = complex_hessian_entries(i, j, b, c, lambda, model)?;
    let zi = param.point(param.omega(lambda[i])?)?.jacobian;
    let zj = param.point(param.omega(lambda[j])?)?.jacobian;
    Ok(block_from_jacobians(a, bb, zi, zj))
}

/// Hessian block over (ω_ν, ω_θ) of unit i × unit j for a polar
/// parametrization. `param` must be polar.
pub fn hessian_block_polar(
    i: usize,
    j: usize,
    b: &[Complex64],
    c: &[Complex64],
    lambda: &[Complex64],
    param: &ParametrizationSpec,
    rho: f64,
) -> Result<[[f64; 2]; 2]> {
    if !param.is_polar() {
        return Err(Error::Contract(
            "hessian_block_polar needs a polar parametrization".into(),
        ));
    }
    hessian_block_param(i, j, b, c, lambda, param, &AutocorrelationModel::from_rho(rho)?)
}

/// Full 2n × 2n Hessian over the recurrent coordinates, row-major, ordered
/// [ω_0 of every unit, ω_1 of every unit].
pub fn lambda_hessian(
    b: &[Complex64],
    c: &[Complex64],
    lambda: &[Complex64],
    param: &ParametrizationSpec,
    model: &AutocorrelationModel,
) -> Result<Vec<f64>> {
    let n = lambda.len();
    let p = 2 * n;
    let mut h = vec![0.0; p * p];
    for i in 0..n {
        for j in 0..n {
            let block = hessian_block_param(i, j, b, c, lambda, param, model)?;
            for k in 0..2 {
                for l in 0..2 {
                    h[(k * n + i) * p + l * n + j] = block[k][l];
                }
            }
        }
    }
    Ok(h)
}

/// Tr H^RI = Σ_i |b_i|²|c_i|² S(λ_i, λ̄_i).
pub fn lambda_hessian_trace(b: &[Complex64], c: &[Complex64], lambda: &[Complex64], rho: f64) -> Result<f64> {
    let n = lambda.len();
    crate::error::check_dim(n, b.len(), "b length")?;
    crate::error::check_dim(n, c.len(), "c length")?;
    let mut total = 0.0;
    for k in 0..n {
        check_stable(lambda[k])?;
        total += b[k].norm_sqr() * c[k].norm_sqr() * s_kernel(lambda[k], lambda[k].conj(), rho)?.re;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stochastic::{sample_wss_sequence, LagTable};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn variance_examples() {
        let iid = AutocorrelationModel::Iid;
        let one = AutocorrelationModel::Constant;
        assert_eq!(hidden_variance(0.0, &iid).unwrap(), 1.0);
        assert_eq!(hidden_variance(0.0, &one).unwrap(), 1.0);
        assert!((hidden_variance(0.9, &iid).unwrap() - 5.263158).abs() < 1e-6);
        assert!((hidden_variance(0.5, &one).unwrap() - 4.0).abs() < 1e-12);
        assert!((sensitivity_variance(0.0, &iid).unwrap() - 1.0).abs() < 1e-15);
        assert!((sensitivity_variance(0.9, &iid).unwrap() - 263.887).abs() < 1e-3);
        assert!((sensitivity_variance(0.5, &one).unwrap() - 16.0).abs() < 1e-12);
        assert!(matches!(hidden_variance(1.0, &iid), Err(Error::Divergence(_))));
        assert!(matches!(
            sensitivity_variance(c(0.0, 1.0), &one),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn rational_forms_match_lag_series() {
        for rho in [0.0f64, 0.3, 0.7, 0.9] {
            let model = AutocorrelationModel::from_rho(rho).unwrap();
            let lags = LagTable((0..4000).map(|d| rho.powi(d)).collect());
            for l in [c(0.5, 0.0), c(0.3, -0.6), c(-0.8, 0.1), c(0.9, 0.3)] {
                let hv = hidden_variance(l, &model).unwrap();
                let hv_series = geometric_double_sum(l, l.conj(), &lags, 1e-14).unwrap().re;
                assert!(rel(hv, hv_series) < 1e-10, "rho {rho} l {l}: {hv} vs {hv_series}");
                let sv = sensitivity_variance(l, &model).unwrap();
                let sv_series = weighted_double_sum(l, l.conj(), &lags, 1e-14).unwrap().re;
                assert!(rel(sv, sv_series) < 1e-10, "rho {rho} l {l}: {sv} vs {sv_series}");
            }
        }
    }

    #[test]
    fn s_kernel_off_diagonal_matches_series() {
        for rho in [0.0f64, 0.4, 0.8, 1.0] {
            let lags = LagTable((0..4000).map(|d| rho.powi(d)).collect());
            for (a, b) in [(c(0.5, 0.2), c(-0.3, 0.6)), (c(0.9, 0.0), c(0.1, -0.2))] {
                let k = s_kernel(a, b, rho).unwrap();
                let series = weighted_double_sum(a, b, &lags, 1e-14).unwrap();
                assert!((k - series).norm() < 1e-9 * series.norm(), "rho {rho}");
            }
        }
    }

    #[test]
    fn s_kernel_examples() {
        for rho in [0.0, 0.5, 1.0] {
            assert!((s_kernel(c(0.0, 0.0), c(0.0, 0.0), rho).unwrap() - 1.0).norm() < 1e-15);
        }
        assert!((s_kernel(c(0.9, 0.0), c(0.9, 0.0), 0.0).unwrap().re - 263.887).abs() < 1e-3);
        let l = Complex64::from_polar(0.9, PI / 4.0);
        let v = s_kernel(l, l.conj(), 0.0).unwrap();
        assert!(v.im.abs() < 1e-12);
        assert!((v.re - 263.887).abs() < 1e-3);
        assert!(s_kernel(c(1.0, 0.0), c(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn normalized_sensitivity_examples() {
        let iid = AutocorrelationModel::Iid;
        let none = NormalizationSpec::none();
        let sg = NormalizationSpec::sqrt_one_minus_nu_sq(true);
        let d = ParametrizationSpec::Direct;
        let t = ParametrizationSpec::Tanh;
        assert!((normalized_sensitivity(0.9, &none, &d, &iid).unwrap() - 263.887).abs() < 1e-3);
        assert!((normalized_sensitivity(0.9, &sg, &d, &iid).unwrap() - 50.139).abs() < 1e-3);
        assert!((normalized_sensitivity(0.9, &sg, &t, &iid).unwrap() - 1.8100).abs() < 1e-4);
    }

    /// Monte-Carlo estimate of E|dh/dω|² with γ-scaled inputs and finite
    /// differences in ω, for the full (non stop-gradient) normalization.
    #[test]
    fn gamma_prime_term_matches_simulation() {
        let model = AutocorrelationModel::exp_decay(0.5).unwrap();
        let param = ParametrizationSpec::Tanh;
        let norm = NormalizationSpec::sqrt_one_minus_nu_sq(false);
        let lambda = Complex64::from_polar(0.7, 0.4);
        let analytic = normalized_sensitivity(lambda, &norm, &param, &model).unwrap();
        let omega = param.omega(lambda).unwrap();
        let burn = 80;
        let n = 20_000;
        let batch = sample_wss_sequence(&model, burn, n, 1, &RngStream::new(21)).unwrap();
        let h_end = |w0: f64| -> Vec<Complex64> {
            let l = param.lambda([w0, omega[1]]).unwrap();
            let g = norm.gamma(l).unwrap();
            (0..n)
                .map(|s| {
                    let mut h = c(0.0, 0.0);
                    for &x in batch.sequence(s) {
                        h = l * h + g * x;
                    }
                    h
                })
                .collect()
        };
        let eps = 1e-6;
        let hp = h_end(omega[0] + eps);
        let hm = h_end(omega[0] - eps);
        let mc: f64 = hp
            .iter()
            .zip(&hm)
            .map(|(a, b)| ((a - b) / (2.0 * eps)).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!(rel(mc, analytic) < 0.05, "mc {mc} analytic {analytic}");
        let stopped =
            normalized_sensitivity(lambda, &NormalizationSpec::sqrt_one_minus_nu_sq(true), &param, &model).unwrap();
        assert!(rel(stopped, analytic) > 0.05, "gamma' term should matter here");
    }

    #[test]
    fn polar_split_examples() {
        let iid = AutocorrelationModel::Iid;
        let e = Eigenvalue::polar(0.9, 0.0).unwrap();
        let (a, b) = polar_sensitivity_split(&e, 1.0, 0.0, &iid).unwrap();
        assert!((a - 65.972).abs() < 1e-3 && b == 0.0);
        let (a, b) = polar_sensitivity_split(&e, 0.0, 1.0, &iid).unwrap();
        assert!(a == 0.0 && (b - 53.437).abs() < 1e-3);
        let z = Eigenvalue::polar(0.0, 0.3).unwrap();
        assert_eq!(polar_sensitivity_split(&z, 1.0, 7.0, &iid).unwrap().1, 0.0);
    }

    #[test]
    fn loss_examples() {
        for rho in [0.0, 0.5, 1.0] {
            let l = c(0.3, 0.4);
            assert!(loss_1d(l, l, rho).unwrap().abs() < 1e-12);
        }
        assert!((loss_1d(c(0.0, 0.0), c(0.5, 0.0), 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((loss_1d(c(0.0, 0.0), c(0.9, 0.0), 0.0).unwrap() - 2.131579).abs() < 1e-6);
        assert!(normalized_loss_1d(c(0.6, 0.2), c(0.6, 0.2)).unwrap().abs() < 1e-12);
        assert!((normalized_loss_1d(c(0.0, 0.0), c(0.9, 0.0)).unwrap() - 0.564110).abs() < 1e-6);
        assert!((normalized_loss_1d(c(0.9, 0.0), c(-0.9, 0.0)).unwrap() - 0.895028).abs() < 1e-6);
    }

    #[test]
    fn general_rho_loss_limits() {
        let (l, s) = (c(0.4, 0.3), c(-0.2, 0.7));
        let near0 = loss_1d_model(l, s, &AutocorrelationModel::Iid).unwrap();
        assert!((near0 - loss_1d(l, s, 0.0).unwrap()).abs() < 1e-10);
        let mid = loss_1d(l, s, 0.5).unwrap();
        let series = loss_1d_model(l, s, &AutocorrelationModel::ExpDecay { rho: 0.5 }).unwrap();
        assert!((mid - series).abs() < 1e-12);
        // direct check against the rational cross moments
        let m = AutocorrelationModel::ExpDecay { rho: 0.5 };
        let g = |a: Complex64, b: Complex64| cross_moment(a, b, &m).unwrap();
        let direct = 0.5 * (g(l, l.conj()) + g(s, s.conj()) - 2.0 * g(l, s.conj())).re;
        assert!((mid - direct).abs() < 1e-10);
    }

    /// Normalized filter outputs simulated over a long horizon.
    #[test]
    fn normalized_loss_matches_simulation() {
        let (l, s) = (c(0.9, 0.0), c(-0.9, 0.0));
        let n = 20_000;
        let batch = sample_wss_sequence(&AutocorrelationModel::Iid, 200, n, 1, &RngStream::new(2)).unwrap();
        let gl = (1.0 - l.norm_sqr()).sqrt();
        let gs = (1.0 - s.norm_sqr()).sqrt();
        let mut acc = 0.0;
        for k in 0..n {
            let (mut h, mut hs) = (c(0.0, 0.0), c(0.0, 0.0));
            for &x in batch.sequence(k) {
                h = l * h + gl * x;
                hs = s * hs + gs * x;
            }
            acc += 0.5 * (h - hs).norm_sqr();
        }
        let mc = acc / n as f64;
        let exact = normalized_loss_1d(l, s).unwrap();
        assert!(rel(mc, exact) < 0.03, "{mc} vs {exact}");
    }

    #[test]
    fn hessian_block_examples() {
        let one = [c(1.0, 0.0)];
        let h = hessian_block_ri(0, 0, &one, &one, &[c(0.0, 0.0)], 0.0).unwrap();
        assert_eq!(h, [[1.0, 0.0], [0.0, 0.0]]);
        let h = hessian_block_ri(0, 0, &[c(0.0, 0.0)], &one, &[c(0.4, 0.2)], 0.3).unwrap();
        assert_eq!(h, [[0.0; 2]; 2]);
        let h = hessian_block_ri(0, 0, &one, &one, &[c(0.9, 0.0)], 0.0).unwrap();
        assert!((h[0][0] - 263.887).abs() < 1e-3);
        assert!(h[0][1].abs() < 1e-12 && h[1][0].abs() < 1e-12 && h[1][1].abs() < 1e-9);
        let h = hessian_block_polar(0, 0, &one, &one, &[c(0.5, 0.0)], &ParametrizationSpec::PolarDirect, 0.0).unwrap();
        assert!((h[0][0] - 2.96296).abs() < 1e-5);
        assert!(hessian_block_ri(0, 1, &one, &one, &[c(0.1, 0.0)], 0.0).is_err());
    }

    #[test]
    fn polar_block_matches_ri_up_to_basis_change() {
        let b = [c(0.4, -0.3), c(1.1, 0.2)];
        let cc = [c(-0.7, 0.5), c(0.2, 0.9)];
        let lam = [Complex64::from_polar(0.8, 0.0), Complex64::from_polar(0.6, 0.0)];
        let ri = hessian_block_ri(0, 1, &b, &cc, &lam, 0.4).unwrap();
        let pol = hessian_block_polar(0, 1, &b, &cc, &lam, &ParametrizationSpec::PolarDirect, 0.4).unwrap();
        // at θ = 0: ∂λ/∂ν = 1 = ∂λ/∂Re, ∂λ/∂θ = iν = ν ∂λ/∂Im
        let nu = [0.8, 0.6];
        assert!((pol[0][0] - ri[0][0]).abs() < 1e-12);
        assert!((pol[0][1] - ri[0][1] * nu[1]).abs() < 1e-12);
        assert!((pol[1][0] - ri[1][0] * nu[0]).abs() < 1e-12);
        assert!((pol[1][1] - ri[1][1] * nu[0] * nu[1]).abs() < 1e-12);
    }

    #[test]
    fn double_exp_block_stays_bounded() {
        let one = [c(1.0, 0.0)];
        let lam = [c(0.999, 0.0)];
        let direct = hessian_block_polar(0, 0, &one, &one, &lam, &ParametrizationSpec::PolarDirect, 0.0).unwrap();
        let dexp = hessian_block_polar(0, 0, &one, &one, &lam, &ParametrizationSpec::DoubleExp, 0.0).unwrap();
        assert!(direct[0][0] / dexp[0][0] > 1e2);
    }

    #[test]
    fn trace_examples() {
        let one = [c(1.0, 0.0)];
        assert!((lambda_hessian_trace(&one, &one, &[c(0.9, 0.0)], 0.0).unwrap() - 263.887).abs() < 1e-3);
        assert_eq!(
            lambda_hessian_trace(&[c(0.0, 0.0)], &one, &[c(0.3, 0.1)], 0.5).unwrap(),
            0.0
        );
        let two = [c(1.0, 0.0); 2];
        let v = lambda_hessian_trace(&two, &two, &[c(0.5, 0.0); 2], 0.0).unwrap();
        assert!((v - 5.92593).abs() < 1e-5);
    }

    #[test]
    fn lambda_hessian_symmetric_with_matching_trace() {
        let b = [c(0.4, -0.3), c(1.1, 0.2), c(0.3, 0.3)];
        let cc = [c(-0.7, 0.5), c(0.2, 0.9), c(1.0, 0.0)];
        let lam = [c(0.5, 0.5), c(-0.2, 0.8), c(0.9, -0.1)];
        let h = lambda_hessian(&b, &cc, &lam, &ParametrizationSpec::Direct, &AutocorrelationModel::Iid).unwrap();
        let p = 6;
        let mut tr = 0.0;
        for i in 0..p {
            tr += h[i * p + i];
            for j in 0..p {
                assert!((h[i * p + j] - h[j * p + i]).abs() < 1e-10 * h[i * p + i].abs().max(1.0));
            }
        }
        let want = lambda_hessian_trace(&b, &cc, &lam, 0.0).unwrap();
        assert!(rel(tr, want) < 1e-12);
    }

    #[test]
    fn optimal_parametrization_examples() {
        let p = optimal_1d_parametrization(0.5f64.atanh(), 0.1).unwrap();
        assert!((p.theta_prime - 1.341641).abs() < 1e-6);
        assert!((p.nu_prime - 0.75).abs() < 1e-12);
        assert!(optimal_1d_parametrization(10.0, 0.0).unwrap().nu_prime < 1e-7);
        assert!(matches!(
            optimal_1d_parametrization(0.0, 1.0),
            Err(Error::ParameterDomain(_))
        ));
    }

    /// Second differences of the normalized loss along ν and θ at the optimum.
    #[test]
    fn curvature_at_optimum() {
        let nu = 0.5f64;
        let h = 1e-4;
        let star = c(nu, 0.0);
        let f = |l: Complex64| normalized_loss_1d(l, star).unwrap();
        let dnn = (f(c(nu + h, 0.0)) - 2.0 * f(star) + f(c(nu - h, 0.0))) / (h * h);
        assert!(rel(dnn, 1.77778) < 1e-4, "{dnn}");
        let dtt = (f(Complex64::from_polar(nu, h)) - 2.0 * f(star) + f(Complex64::from_polar(nu, -h))) / (h * h);
        assert!(rel(dtt, 0.555556) < 1e-4, "{dtt}");
    }

    #[test]
    fn eigenvalue_constructors() {
        assert!(Eigenvalue::cartesian(0.6, 0.8).is_err());
        assert!(Eigenvalue::polar(-0.1, 0.0).is_err());
        assert!(Eigenvalue::polar(0.5, -PI).is_err());
        let e = Eigenvalue::polar(0.5, PI).unwrap();
        assert!((e.value - c(-0.5, 0.0)).norm() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const ALL: [ParametrizationSpec; 7] = [
            ParametrizationSpec::Direct,
            ParametrizationSpec::Tanh,
            ParametrizationSpec::DoubleExp,
            ParametrizationSpec::Optimal1D,
            ParametrizationSpec::PolarDirect,
            ParametrizationSpec::PolarExpAngle,
            ParametrizationSpec::TanhExpAngle,
        ];

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn jacobian_matches_finite_differences(k in 0usize..7, w0 in -5.0f64..5.0, w1 in -5.0f64..5.0) {
                let p = ALL[k];
                prop_assume!(!(p == ParametrizationSpec::Optimal1D && w0.abs() < 0.05));
                let point = p.point([w0, w1]).unwrap();
                for (coord, z) in point.jacobian.iter().enumerate() {
                    let h = 1e-6 * (1.0 + [w0, w1][coord].abs());
                    let mut wp = [w0, w1];
                    let mut wm = [w0, w1];
                    wp[coord] += h;
                    wm[coord] -= h;
                    let fd = (p.lambda(wp).unwrap() - p.lambda(wm).unwrap()) / (2.0 * h);
                    let scale = z.norm().max(point.lambda.norm() * 1e-3).max(1e-12);
                    prop_assert!((fd - z).norm() <= 1e-6 * scale.max(1e-3),
                        "{p:?} coord {coord}: fd {fd} analytic {z}");
                }
            }

            #[test]
            fn tanh_flat_at_optimality(w in -5.0f64..5.0) {
                let nu = w.tanh();
                let nu_prime = 1.0 - nu * nu;
                prop_assert!((nu_prime * nu_prime / (1.0 - nu * nu).powi(2) - 1.0).abs() < 1e-12);
            }

            #[test]
            fn normalized_loss_nonnegative(r1 in 0.0f64..0.99, t1 in -3.1f64..3.1, r2 in 0.0f64..0.99, t2 in -3.1f64..3.1) {
                let a = Complex64::from_polar(r1, t1);
                let b = Complex64::from_polar(r2, t2);
                let v = normalized_loss_1d(a, b).unwrap();
                prop_assert!((-1e-12..=2.0 + 1e-12).contains(&v));
                if (a - b).norm() > 1e-3 {
                    prop_assert!(v > 0.0);
                }
            }

            #[test]
            fn s_kernel_conjugate_is_sensitivity(r in 0.0f64..0.95, t in -3.1f64..3.1, k in 0usize..4) {
                let rho = [0.0, 0.3, 0.7, 0.9][k];
                let l = Complex64::from_polar(r, t);
                let s = s_kernel(l, l.conj(), rho).unwrap();
                let m = AutocorrelationModel::from_rho(rho).unwrap();
                let want = weighted_double_sum(l, l.conj(), &m, 1e-14).unwrap().re;
                prop_assert!(s.im.abs() <= 1e-10 * s.re.abs());
                prop_assert!((s.re - want).abs() <= 1e-10 * want.abs());
            }
        }

        #[test]
        fn variances_monotone_in_magnitude() {
            for rho in [0.0, 0.3, 0.7, 0.9] {
                let m = AutocorrelationModel::from_rho(rho).unwrap();
                for theta in [0.0, 0.5, 2.0] {
                    let mut prev = (0.0, 0.0);
                    for k in 0..100 {
                        let l = Complex64::from_polar(k as f64 * 0.0099, theta);
                        let cur = (hidden_variance(l, &m).unwrap(), sensitivity_variance(l, &m).unwrap());
                        if k > 0 && (theta == 0.0 || rho == 0.0) {
                            assert!(cur.0 > prev.0 && cur.1 > prev.1, "rho {rho} k {k}");
                        }
                        prev = cur;
                    }
                }
            }
        }
    }
}
