//! Wide-sense-stationary input processes and the double-sum oracles behind
//! every variance formula.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Default truncation tolerance for the lag series.
pub const DEFAULT_TOL: f64 = 1e-12;

const MAX_SERIES_TERMS: usize = 50_000_000;

/// Autocorrelation R_x(Δ) of a unit-variance stationary input process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AutocorrelationModel {
    /// Independent inputs, R(Δ) = δ_Δ.
    Iid,
    /// R(Δ) = ρ^|Δ|.
    ExpDecay { rho: f64 },
    /// Inputs constantly equal to one, R(Δ) = 1.
    Constant,
    /// Tabulated lags, R(0) = 1; lags past the table are zero.
    Empirical { lags: Vec<f64> },
}

impl AutocorrelationModel {
    pub fn exp_decay(rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::ParameterDomain(format!(
                "exp-decay rho must lie in [0, 1], got {rho}"
            )));
        }
        Ok(Self::ExpDecay { rho })
    }

    /// Picks the canonical model for a decay rate: IID at 0, constant at 1.
    pub fn from_rho(rho: f64) -> Result<Self> {
        if rho == 0.0 {
            Ok(Self::Iid)
        } else if rho == 1.0 {
            Ok(Self::Constant)
        } else {
            Self::exp_decay(rho)
        }
    }

    /// Tabulated model. Lags are rescaled so that R(0) = 1.
    pub fn empirical(lags: Vec<f64>) -> Result<Self> {
        let r0 = *lags
            .first()
            .ok_or_else(|| Error::ParameterDomain("empirical model needs R(0)".into()))?;
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(Error::ParameterDomain(format!("R(0) must be positive, got {r0}")));
        }
        let lags: Vec<f64> = lags.iter().map(|r| r / r0).collect();
        if let Some((i, r)) = lags.iter().enumerate().find(|(_, r)| r.abs() > 1.0 + 1e-12) {
            return Err(Error::ParameterDomain(format!("|R({i})| = {} exceeds R(0)", r.abs())));
        }
        Ok(Self::Empirical { lags })
    }

    /// Decay rate for the rational closed forms: 0 for IID, 1 for constant.
    pub fn rho(&self) -> Option<f64> {
        match self {
            Self::Iid => Some(0.0),
            Self::ExpDecay { rho } => Some(*rho),
            Self::Constant => Some(1.0),
            Self::Empirical { .. } => None,
        }
    }
}

/// A bounded symmetric lag sequence u_Δ = u_{-Δ}.
pub trait LagFunction {
    fn at(&self, lag: usize) -> f64;
    /// Upper bound on |u_Δ|.
    fn sup(&self) -> f64;
    /// Index past which every lag is zero, when known.
    fn support(&self) -> Option<usize> {
        None
    }
}

impl LagFunction for AutocorrelationModel {
    fn at(&self, lag: usize) -> f64 {
        match self {
            Self::Iid => {
                if lag == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ExpDecay { rho } => rho.powi(lag as i32),
            Self::Constant => 1.0,
            Self::Empirical { lags } => lags.get(lag).copied().unwrap_or(0.0),
        }
    }

    fn sup(&self) -> f64 {
        1.0
    }

    fn support(&self) -> Option<usize> {
        match self {
            Self::Iid => Some(1),
            Self::ExpDecay { rho } if *rho == 0.0 => Some(1),
            Self::Empirical { lags } => Some(lags.len()),
            _ => None,
        }
    }
}

/// A finite table of lags, zero past its end.
#[derive(Debug, Clone, PartialEq)]
pub struct LagTable(pub Vec<f64>);

impl LagFunction for LagTable {
    fn at(&self, lag: usize) -> f64 {
        self.0.get(lag).copied().unwrap_or(0.0)
    }
    fn sup(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    fn support(&self) -> Option<usize> {
        Some(self.0.len())
    }
}

/// A lag function given by a closure and a known bound.
pub struct LagFn<F: Fn(usize) -> f64> {
    pub f: F,
    pub sup: f64,
}

impl<F: Fn(usize) -> f64> LagFunction for LagFn<F> {
    fn at(&self, lag: usize) -> f64 {
        (self.f)(lag)
    }
    fn sup(&self) -> f64 {
        self.sup
    }
}

/// Where a generated batch came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOrigin {
    pub stream: RngStream,
    pub model: AutocorrelationModel,
}

/// `count` real sequences of `length` steps with `dim` features each, stored
/// sequence-major: `data[(s * length + t) * dim + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub count: usize,
    pub length: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub origin: Option<BatchOrigin>,
}

impl SequenceBatch {
    pub fn from_data(count: usize, length: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(count * length * dim, data.len(), "sequence batch data")?;
        Ok(Self {
            count,
            length,
            dim,
            data,
            origin: None,
        })
    }

    pub fn zeros(count: usize, length: usize, dim: usize) -> Self {
        Self {
            count,
            length,
            dim,
            data: vec![0.0; count * length * dim],
            origin: None,
        }
    }

    #[inline]
    pub fn index(&self, s: usize, t: usize, k: usize) -> usize {
        (s * self.length + t) * self.dim + k
    }

    #[inline]
    pub fn at(&self, s: usize, t: usize, k: usize) -> f64 {
        self.data[self.index(s, t, k)]
    }

    /// Feature vector of sequence `s` at step `t`.
    pub fn step(&self, s: usize, t: usize) -> &[f64] {
        let i = self.index(s, t, 0);
        &self.data[i..i + self.dim]
    }

    pub fn sequence(&self, s: usize) -> &[f64] {
        let n = self.length * self.dim;
        &self.data[s * n..(s + 1) * n]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|x| x * factor).collect(),
            origin: None,
            ..*self
        }
    }

    /// Copies out sequences `[start, start + count)`.
    pub fn slice_sequences(&self, start: usize, count: usize) -> Self {
        let n = self.length * self.dim;
        Self {
            count,
            length: self.length,
            dim: self.dim,
            data: self.data[start * n..(start + count) * n].to_vec(),
            origin: None,
        }
    }

    /// Loads a raw little-endian float32 tensor laid out `[count × length × dim]`.
    pub fn load_f32_file(path: &Path, count: usize, length: usize, dim: usize) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let expected = count * length * dim * 4;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: bytes.len(),
                context: "raw float32 tensor file size in bytes",
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::from_data(count, length, dim, data)
    }
}

/// Per-order linear-prediction coefficients of a stationary Gaussian process
/// (Levinson-Durbin). `coeffs[t]` predicts x_t from x_{t-1}, ..., x_0.
struct LinearPredictor {
    coeffs: Vec<Vec<f64>>,
    innovation_std: Vec<f64>,
}

impl LinearPredictor {
    fn new(model: &AutocorrelationModel, length: usize) -> Result<Self> {
        let r: Vec<f64> = (0..length).map(|d| model.at(d)).collect();
        let mut coeffs = vec![Vec::new()];
        let mut var = r[0];
        let mut innovation_std = vec![var.sqrt()];
        let mut prev: Vec<f64> = Vec::new();
        for m in 1..length {
            let acc: f64 = (1..m).map(|k| prev[k - 1] * r[m - k]).sum();
            let kappa = (r[m] - acc) / var;
            let mut next = vec![0.0; m];
            for k in 1..m {
                next[k - 1] = prev[k - 1] - kappa * prev[m - k - 1];
            }
            next[m - 1] = kappa;
            var *= 1.0 - kappa * kappa;
            if !(var > 1e-14) {
                return Err(Error::ParameterDomain(format!(
                    "autocorrelation table is not positive definite at order {m}"
                )));
            }
            innovation_std.push(var.sqrt());
            coeffs.push(next.clone());
            prev = next;
        }
        Ok(Self { coeffs, innovation_std })
    }
}

/// Draws `count` sequences of a unit-variance stationary Gaussian process whose
/// autocorrelation is `model`. Each sequence uses its own child stream, so the
/// first `k` sequences do not depend on `count`.
///
/// ExpDecay uses the AR(1) recursion x_{t+1} = ρ x_t + √(1−ρ²) ξ_{t+1}
/// started from its stationary law; Empirical uses exact linear prediction.
pub fn sample_wss_sequence(
    model: &AutocorrelationModel,
    length: usize,
    count: usize,
    dim: usize,
    stream: &RngStream,
) -> Result<SequenceBatch> {
    if length == 0 {
        return Err(Error::ParameterDomain("sequence length must be >= 1".into()));
    }
    if let AutocorrelationModel::ExpDecay { rho } = model {
        if !(0.0..1.0).contains(rho) {
            return Err(Error::ParameterDomain(format!(
                "sampling needs 0 <= rho < 1, got {rho}"
            )));
        }
    }
    let predictor = match model {
        AutocorrelationModel::Empirical { .. } => Some(LinearPredictor::new(model, length)?),
        _ => None,
    };
    let mut data = vec![0.0; count * length * dim];
    for s in 0..count {
        let mut rng = stream.child(s as u64).rng();
        let seq = &mut data[s * length * dim..(s + 1) * length * dim];
        match model {
            AutocorrelationModel::Constant => seq.fill(1.0),
            AutocorrelationModel::Iid => seq.iter_mut().for_each(|x| *x = rng.normal()),
            AutocorrelationModel::ExpDecay { rho } => {
                let innov = (1.0 - rho * rho).sqrt();
                for k in 0..dim {
                    seq[k] = rng.normal();
                }
                for t in 1..length {
                    for k in 0..dim {
                        seq[t * dim + k] = rho * seq[(t - 1) * dim + k] + innov * rng.normal();
                    }
                }
            }
            AutocorrelationModel::Empirical { .. } => {
                let p = predictor.as_ref().expect("predictor built for empirical model");
                for t in 0..length {
                    for k in 0..dim {
                        let pred: f64 = p.coeffs[t]
                            .iter()
                            .enumerate()
                            .map(|(j, a)| a * seq[(t - 1 - j) * dim + k])
                            .sum();
                        seq[t * dim + k] = pred + p.innovation_std[t] * rng.normal();
                    }
                }
            }
        }
    }
    Ok(SequenceBatch {
        count,
        length,
        dim,
        data,
        origin: Some(BatchOrigin {
            stream: stream.clone(),
            model: model.clone(),
        }),
    })
}

/// Estimates E[x_{t+Δ} x_t] for Δ = 0..=max_lag, averaged over sequences,
/// features and time.
pub fn empirical_autocorrelation(batch: &SequenceBatch, max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= batch.length {
        return Err(Error::ParameterDomain(format!(
            "max_lag {max_lag} must be below the sequence length {}",
            batch.length
        )));
    }
    let dim = batch.dim;
    let mut out = vec![0.0; max_lag + 1];
    for (lag, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for s in 0..batch.count {
            let seq = batch.sequence(s);
            for t in 0..batch.length - lag {
                for k in 0..dim {
                    acc += seq[(t + lag) * dim + k] * seq[t * dim + k];
                }
            }
        }
        *slot = acc / (batch.count * (batch.length - lag) * dim) as f64;
    }
    Ok(out)
}

fn check_contraction(alpha: Complex64, beta: Complex64) -> Result<()> {
    for (name, z) in [("alpha", alpha), ("beta", beta)] {
        if !(z.norm() < 1.0) {
            return Err(Error::Divergence(format!(
                "double sum needs |{name}| < 1, got {}",
                z.norm()
            )));
        }
    }
    Ok(())
}

/// Partial sums of the lag series shared by the double-sum closed forms:
/// Σ (α^Δ + β^Δ) u_Δ, Σ Δ α^{Δ-1} u_Δ and Σ Δ β^{Δ-1} u_Δ over Δ ≥ 1.
struct LagSeries {
    plain: Complex64,
    d_alpha: Complex64,
    d_beta: Complex64,
}

fn lag_series(alpha: Complex64, beta: Complex64, u: &dyn LagFunction, tol: f64) -> LagSeries {
    let sup = u.sup();
    let ra = alpha.norm();
    let rb = beta.norm();
    let mut out = LagSeries {
        plain: Complex64::new(0.0, 0.0),
        d_alpha: Complex64::new(0.0, 0.0),
        d_beta: Complex64::new(0.0, 0.0),
    };
    if sup == 0.0 {
        return out;
    }
    let limit = u.support().unwrap_or(usize::MAX).min(MAX_SERIES_TERMS);
    // α^{Δ-1} and β^{Δ-1}
    let mut pa = Complex64::new(1.0, 0.0);
    let mut pb = Complex64::new(1.0, 0.0);
    let mut delta = 1usize;
    while delta < limit {
        let u_d = u.at(delta);
        let d = delta as f64;
        out.plain += (pa * alpha + pb * beta) * u_d;
        out.d_alpha += pa * (d * u_d);
        out.d_beta += pb * (d * u_d);
        pa *= alpha;
        pb *= beta;
        delta += 1;
        // Tail bounds past index `delta` for both the plain and the weighted series.
        let n = delta as f64;
        let tail = |r: f64, p: f64| {
            if r == 0.0 {
                0.0
            } else {
                let geometric = p * r / (1.0 - r);
                let weighted = n * p / ((1.0 - r) * (1.0 - r));
                geometric.max(weighted)
            }
        };
        if sup * (tail(ra, pa.norm()) + tail(rb, pb.norm())) < tol {
            break;
        }
    }
    out
}

/// Σ_{n,m≥0} α^n β^m u_{n−m}, evaluated as
/// (u_0 + Σ_{Δ≥1}(α^Δ + β^Δ) u_Δ) / (1 − αβ) with the lag series truncated
/// once its geometric tail bound drops below `tol`.
pub fn geometric_double_sum(alpha: Complex64, beta: Complex64, u: &dyn LagFunction, tol: f64) -> Result<Complex64> {
    check_contraction(alpha, beta)?;
    let series = lag_series(alpha, beta, u, tol);
    Ok((u.at(0) + series.plain) / (1.0 - alpha * beta))
}

/// Σ_{n,m≥0} n m α^{n−1} β^{m−1} u_{n−m}: the mixed α/β derivative of the
/// [`geometric_double_sum`] closed form, expanded by the product rule.
pub fn weighted_double_sum(alpha: Complex64, beta: Complex64, u: &dyn LagFunction, tol: f64) -> Result<Complex64> {
    check_contraction(alpha, beta)?;
    let series = lag_series(alpha, beta, u, tol);
    let p = alpha * beta;
    let one = Complex64::new(1.0, 0.0);
    let q = u.at(0) + series.plain;
    let inv = one / (one - p);
    let inv2 = inv * inv;
    Ok((one + p) * inv2 * inv * q + alpha * inv2 * series.d_alpha + beta * inv2 * series.d_beta)
}

/// Σ_{n,m≥0} n α^{n−1} β^m u_{n−m}: the α-derivative of the
/// [`geometric_double_sum`] closed form. This is E[(dh/dλ) conj(h)] when
/// α = λ, β = conj(λ).
pub fn alpha_weighted_double_sum(
    alpha: Complex64,
    beta: Complex64,
    u: &dyn LagFunction,
    tol: f64,
) -> Result<Complex64> {
    check_contraction(alpha, beta)?;
    let series = lag_series(alpha, beta, u, tol);
    let one = Complex64::new(1.0, 0.0);
    let inv = one / (one - alpha * beta);
    let q = u.at(0) + series.plain;
    Ok(beta * inv * inv * q + inv * series.d_alpha)
}

/// Steps after which the initial-state transient of a recurrence with
/// spectral radius `max_magnitude` falls below 1e−8; at least one.
pub fn burn_in_steps(max_magnitude: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&max_magnitude) {
        return Err(Error::ParameterDomain(format!(
            "burn-in needs |lambda| in [0, 1), got {max_magnitude}"
        )));
    }
    if max_magnitude == 0.0 {
        return Ok(1);
    }
    Ok(((1e-8f64.ln() / max_magnitude.ln()).ceil() as usize).max(1))
}

/// Samples needed for a relative tolerance `tol` to cover three standard
/// errors √(2/N) of a Gaussian second moment.
pub fn required_samples(tol: f64) -> usize {
    (18.0 / (tol * tol)).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloVariances {
    /// E|h_t|².
    pub hidden: f64,
    /// E|dh_t/dλ|².
    pub sensitivity: f64,
    pub samples: usize,
    pub burn_in: usize,
}

const MC_CHUNK: usize = 1000;

/// Simulates h_t = λh_{t−1} + x_t and s_t = dh_t/dλ = λs_{t−1} + h_{t−1}
/// from zero state over `burn_in_steps(|λ|)` steps, and averages |h|² and
/// |s|² at the final step of `samples` independent sequences.
pub fn monte_carlo_variances(
    lambda: Complex64,
    model: &AutocorrelationModel,
    samples: usize,
    stream: &RngStream,
) -> Result<MonteCarloVariances> {
    if samples == 0 {
        return Err(Error::ParameterDomain("need at least one sample".into()));
    }
    let burn_in = burn_in_steps(lambda.norm())?;
    let length = burn_in + 1;
    let (mut hidden, mut sensitivity) = (0.0, 0.0);
    for (chunk, start) in (0..samples).step_by(MC_CHUNK).enumerate() {
        let count = MC_CHUNK.min(samples - start);
        let x = sample_wss_sequence(model, length, count, 1, &stream.child(chunk as u64))?;
        for seq in 0..count {
            let (mut h, mut s) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for &xt in x.sequence(seq) {
                s = lambda * s + h;
                h = lambda * h + xt;
            }
            hidden += h.norm_sqr();
            sensitivity += s.norm_sqr();
        }
    }
    Ok(MonteCarloVariances {
        hidden: hidden / samples as f64,
        sensitivity: sensitivity / samples as f64,
        samples,
        burn_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct truncated double sum, independent of the closed forms.
    pub(crate) fn brute_force(
        alpha: Complex64,
        beta: Complex64,
        u: &dyn LagFunction,
        n_max: usize,
        weighted: bool,
    ) -> Complex64 {
        let mut pa = vec![c(1.0, 0.0); n_max + 1];
        let mut pb = vec![c(1.0, 0.0); n_max + 1];
        for i in 1..=n_max {
            pa[i] = pa[i - 1] * alpha;
            pb[i] = pb[i - 1] * beta;
        }
        let mut acc = c(0.0, 0.0);
        for n in 0..n_max {
            for m in 0..n_max {
                let lag = n.abs_diff(m);
                let term = if weighted {
                    if n == 0 || m == 0 {
                        continue;
                    }
                    pa[n - 1] * pb[m - 1] * (n * m) as f64
                } else {
                    pa[n] * pb[m]
                };
                acc += term * u.at(lag);
            }
        }
        acc
    }

    #[test]
    fn constant_process_is_all_ones() {
        let b = sample_wss_sequence(&AutocorrelationModel::Constant, 5, 1, 1, &RngStream::new(0)).unwrap();
        assert!(b.data.iter().all(|&x| x == 1.0));
        let r = empirical_autocorrelation(&b, 4).unwrap();
        assert!(r.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn iid_unit_variance() {
        let b = sample_wss_sequence(&AutocorrelationModel::Iid, 10_000, 1, 1, &RngStream::new(3)).unwrap();
        let var = b.data.iter().map(|x| x * x).sum::<f64>() / 1e4;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn iid_lag_one_vanishes() {
        let b = sample_wss_sequence(&AutocorrelationModel::Iid, 1000, 1000, 1, &RngStream::new(4)).unwrap();
        let r = empirical_autocorrelation(&b, 1).unwrap();
        assert!(r[1].abs() < 0.005, "{}", r[1]);
    }

    #[test]
    fn ar1_lag_one_matches_rho() {
        // 10^4 sequences; standard error of the lag-1 estimate ~ sqrt((1-rho^2)/N).
        let model = AutocorrelationModel::exp_decay(0.5).unwrap();
        let b = sample_wss_sequence(&model, 2, 10_000, 1, &RngStream::new(5)).unwrap();
        let r = empirical_autocorrelation(&b, 1).unwrap();
        assert!((r[1] - 0.5).abs() < 0.02, "{}", r[1]);
    }

    #[test]
    fn ar1_lag_two_matches_rho_squared() {
        let model = AutocorrelationModel::exp_decay(0.9).unwrap();
        let b = sample_wss_sequence(&model, 100, 1000, 1, &RngStream::new(6)).unwrap();
        let r = empirical_autocorrelation(&b, 2).unwrap();
        assert!((r[2] - 0.81).abs() < 0.02, "{}", r[2]);
    }

    #[test]
    fn empirical_model_reproduces_its_table() {
        let model = AutocorrelationModel::empirical(vec![1.0, 0.6, 0.2, -0.1]).unwrap();
        let b = sample_wss_sequence(&model, 12, 40_000, 1, &RngStream::new(8)).unwrap();
        let r = empirical_autocorrelation(&b, 5).unwrap();
        for (lag, want) in [1.0, 0.6, 0.2, -0.1, 0.0, 0.0].iter().enumerate() {
            assert!((r[lag] - want).abs() < 0.02, "lag {lag}: {} vs {want}", r[lag]);
        }
    }

    #[test]
    fn sampling_errors() {
        let bad = AutocorrelationModel::ExpDecay { rho: 1.0 };
        assert!(matches!(
            sample_wss_sequence(&bad, 4, 1, 1, &RngStream::new(0)),
            Err(Error::ParameterDomain(_))
        ));
        assert!(AutocorrelationModel::exp_decay(-0.1).is_err());
        assert!(AutocorrelationModel::empirical(vec![1.0, 1.5]).is_err());
        let b = SequenceBatch::zeros(1, 3, 1);
        assert!(matches!(
            empirical_autocorrelation(&b, 3),
            Err(Error::ParameterDomain(_))
        ));
        let non_pd = AutocorrelationModel::empirical(vec![1.0, 1.0, -1.0]).unwrap();
        assert!(sample_wss_sequence(&non_pd, 4, 1, 1, &RngStream::new(0)).is_err());
    }

    #[test]
    fn prefix_stable_under_count() {
        let m = AutocorrelationModel::exp_decay(0.7).unwrap();
        let s = RngStream::new(11);
        let a = sample_wss_sequence(&m, 20, 3, 2, &s).unwrap();
        let b = sample_wss_sequence(&m, 20, 5, 2, &s).unwrap();
        assert_eq!(a.data[..], b.data[..a.data.len()]);
    }

    #[test]
    fn geometric_sum_examples() {
        let one = AutocorrelationModel::Constant;
        let delta = AutocorrelationModel::Iid;
        let z = c(0.0, 0.0);
        let u = LagTable(vec![0.7, 0.3, -0.2]);
        assert!((geometric_double_sum(z, z, &u, 1e-12).unwrap() - 0.7).norm() < 1e-15);
        let v = geometric_double_sum(c(0.5, 0.0), c(0.5, 0.0), &one, 1e-12).unwrap();
        assert!((v.re - 4.0).abs() < 1e-10);
        let v = geometric_double_sum(c(0.9, 0.0), c(0.9, 0.0), &delta, 1e-12).unwrap();
        assert!((v.re - 1.0 / 0.19).abs() < 1e-10);
        assert!((v.re - 5.263158).abs() < 1e-6);
    }

    #[test]
    fn weighted_sum_examples() {
        let z = c(0.0, 0.0);
        let u = LagTable(vec![0.7, 0.3, -0.2]);
        assert!((weighted_double_sum(z, z, &u, 1e-12).unwrap() - 0.7).norm() < 1e-15);
        let v = weighted_double_sum(c(0.9, 0.0), c(0.9, 0.0), &AutocorrelationModel::Iid, 1e-12).unwrap();
        assert!((v.re - 1.81 / 0.19f64.powi(3)).abs() < 1e-8);
        assert!((v.re - 263.887).abs() < 1e-3);
        let v = weighted_double_sum(c(0.5, 0.0), c(0.5, 0.0), &AutocorrelationModel::Constant, 1e-12).unwrap();
        // brute force: (Σ n 0.5^{n-1})^2 = 4^2
        let bf = brute_force(c(0.5, 0.0), c(0.5, 0.0), &AutocorrelationModel::Constant, 200, true);
        assert!((bf.re - 16.0).abs() < 1e-9);
        assert!((v.re - 16.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_rejected() {
        let u = AutocorrelationModel::Iid;
        assert!(matches!(
            geometric_double_sum(c(1.0, 0.0), c(0.1, 0.0), &u, 1e-12),
            Err(Error::Divergence(_))
        ));
        assert!(matches!(
            weighted_double_sum(c(0.1, 0.0), c(0.0, -1.2), &u, 1e-12),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn alpha_weighted_matches_brute_force() {
        let u = AutocorrelationModel::exp_decay(0.6).unwrap();
        let a = c(0.5, 0.3);
        let b = a.conj();
        let closed = alpha_weighted_double_sum(a, b, &u, 1e-14).unwrap();
        let mut acc = c(0.0, 0.0);
        for n in 1..300usize {
            for m in 0..300usize {
                acc += a.powu(n as u32 - 1) * b.powu(m as u32) * (n as f64) * u.at(n.abs_diff(m));
            }
        }
        assert!((closed - acc).norm() < 1e-10 * acc.norm());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn complex_in_disc(max: f64) -> impl Strategy<Value = Complex64> {
            (0.0..max, -std::f64::consts::PI..std::f64::consts::PI).prop_map(|(r, th)| Complex64::from_polar(r, th))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn geometric_sum_matches_brute_force(
                a in complex_in_disc(0.95),
                b in complex_in_disc(0.95),
                lags in prop::collection::vec(-1.0f64..1.0, 1..12),
            ) {
                let u = LagTable(lags);
                let tol = 1e-12;
                let closed = geometric_double_sum(a, b, &u, tol).unwrap();
                let bf = brute_force(a, b, &u, 900, false);
                prop_assert!((closed - bf).norm() <= 10.0 * tol + 1e-9 * bf.norm(),
                    "closed {closed} brute {bf}");
            }
        }
    }

    #[test]
    fn burn_in_and_sample_budget() {
        assert_eq!(burn_in_steps(0.0).unwrap(), 1);
        assert_eq!(burn_in_steps(0.5).unwrap(), 27);
        assert!(burn_in_steps(1.0).is_err());
        assert_eq!(required_samples(0.05), 7200);
    }

    #[test]
    fn monte_carlo_matches_memoryless_moments() {
        let mc = monte_carlo_variances(c(0.0, 0.0), &AutocorrelationModel::Iid, 20_000, &RngStream::new(4)).unwrap();
        assert!(
            (mc.hidden - 1.0).abs() < 0.05 && (mc.sensitivity - 1.0).abs() < 0.05,
            "{mc:?}"
        );
        let one = monte_carlo_variances(c(0.5, 0.0), &AutocorrelationModel::Constant, 5, &RngStream::new(4)).unwrap();
        assert!(one.hidden > 0.0);
    }
}
