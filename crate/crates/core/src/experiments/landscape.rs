use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analytic::{loss_1d, normalized_loss_1d, ParametrizationSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeScenario {
    /// λ on [0, 1), unnormalized loss.
    RealAxis,
    /// λ on the circle of radius |λ*|, unnormalized loss.
    Circle,
    /// Normalized loss along a magnitude slice (θ = θ*) and an angle slice
    /// (ν = |λ*|) in the coordinates of each of [`REPARAM_KINDS`].
    ReparamGrid,
}

/// Parametrizations compared by [`LandscapeScenario::ReparamGrid`].
pub const REPARAM_KINDS: [(&str, ParametrizationSpec); 3] = [
    ("polar", ParametrizationSpec::PolarDirect),
    ("exp", ParametrizationSpec::PolarExpAngle),
    ("optimal", ParametrizationSpec::Optimal1D),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    /// "lambda" for the unparametrized scenarios, else the parametrization.
    pub param: String,
    /// "real_axis", "circle", "magnitude" or "angle".
    pub slice: String,
    pub w0: f64,
    pub w1: f64,
    pub lambda_re: f64,
    pub lambda_im: f64,
    /// NaN at a pole.
    pub loss: f64,
    pub pole: bool,
}

fn evaluate(loss: Result<f64>) -> Result<(f64, bool)> {
    match loss {
        Ok(v) if v.is_finite() => Ok((v, false)),
        Ok(_) | Err(Error::Divergence(_)) => Ok((f64::NAN, true)),
        Err(e) => Err(e),
    }
}

/// `resolution` points spaced `(hi − lo)/resolution` apart in [lo, hi),
/// aligned so that `anchor` is on the grid.
fn aligned_grid(anchor: f64, lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    let h = (hi - lo) / resolution as f64;
    // the slack keeps an anchor that sits on a cell boundary from rounding down a cell
    let k = ((anchor - lo) / h + 1e-9).floor();
    let start = anchor - k * h;
    (0..resolution).map(|i| start + i as f64 * h).collect()
}

/// Loss values on the grid of `scenario`. Grids are aligned so that λ*
/// (or its magnitude and angle) is a grid point. `rho` sets the input
/// autocorrelation of the unnormalized scenarios.
pub fn landscape_grid_1d(
    lambda_star: Complex64,
    scenario: LandscapeScenario,
    resolution: usize,
    rho: f64,
) -> Result<Vec<LandscapePoint>> {
    if !(lambda_star.norm() < 1.0) {
        return Err(Error::ParameterDomain(format!(
            "teacher needs |lambda*| < 1, got {}",
            lambda_star.norm()
        )));
    }
    if resolution < 2 {
        return Err(Error::ParameterDomain("landscape resolution must be >= 2".into()));
    }
    let pi = std::f64::consts::PI;
    let nu_star = lambda_star.norm();
    let theta_star = lambda_star.arg();
    let point = |param: &str, slice: &str, w: [f64; 2], l: Complex64, loss: Result<f64>| -> Result<LandscapePoint> {
        let (loss, pole) = evaluate(loss)?;
        Ok(LandscapePoint {
            param: param.into(),
            slice: slice.into(),
            w0: w[0],
            w1: w[1],
            lambda_re: l.re,
            lambda_im: l.im,
            loss,
            pole,
        })
    };
    let mut out = Vec::new();
    match scenario {
        LandscapeScenario::RealAxis => {
            for r in aligned_grid(lambda_star.re.max(0.0), 0.0, 1.0, resolution) {
                let l = Complex64::new(r, 0.0);
                out.push(point("lambda", "real_axis", [r, 0.0], l, loss_1d(l, lambda_star, rho))?);
            }
        }
        LandscapeScenario::Circle => {
            for th in aligned_grid(theta_star, -pi, pi, resolution) {
                let l = Complex64::from_polar(nu_star, th);
                out.push(point(
                    "lambda",
                    "circle",
                    [nu_star, th],
                    l,
                    loss_1d(l, lambda_star, rho),
                )?);
            }
        }
        LandscapeScenario::ReparamGrid => {
            for (name, param) in REPARAM_KINDS {
                for nu in aligned_grid(nu_star, 0.0, 1.0, resolution) {
                    let l = Complex64::from_polar(nu, theta_star);
                    // points outside the map's domain are not representable
                    let Ok(w) = param.omega(l) else { continue };
                    out.push(point(name, "magnitude", w, l, normalized_loss_1d(l, lambda_star))?);
                }
                for th in aligned_grid(theta_star, -pi, pi, resolution) {
                    let l = Complex64::from_polar(nu_star, th);
                    let Ok(w) = param.omega(l) else { continue };
                    out.push(point(name, "angle", w, l, normalized_loss_1d(l, lambda_star))?);
                }
            }
        }
    }
    Ok(out)
}
