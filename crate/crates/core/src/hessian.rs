//! Gauss-Newton Hessians at optimality and their structure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::RecurrentCell;
use crate::stochastic::SequenceBatch;

/// Jacobi stopping tolerance on the off-diagonal norm, relative to ‖H‖_F.
pub const JACOBI_TOL: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Number of leading eigenvectors summarized by IPR.
pub const TOP_K: usize = 10;

const SYMMETRY_TOL: f64 = 1e-8;
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianMetrics {
    pub top_k_ipr: Vec<f64>,
    pub axis_alignment: f64,
}

impl HessianMetrics {
    pub fn mean_ipr(&self) -> f64 {
        self.top_k_ipr.iter().sum::<f64>() / self.top_k_ipr.len().max(1) as f64
    }
}

/// A symmetric Hessian with its eigendecomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianReport {
    pub dim: usize,
    /// Row-major p × p.
    pub matrix: Vec<f64>,
    pub param_labels: Vec<String>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Row-major p × p; column k pairs with `eigenvalues[k]`.
    pub eigenvectors: Vec<f64>,
    pub metrics: HessianMetrics,
}

impl HessianReport {
    /// Eigendecomposes `matrix` and computes the diagonality metrics.
    pub fn from_matrix(matrix: Vec<f64>, param_labels: Vec<String>) -> Result<Self> {
        let p = param_labels.len();
        check_dim(p * p, matrix.len(), "hessian matrix")?;
        let (eigenvalues, eigenvectors) = symmetric_eigen(&matrix, p, JACOBI_TOL)?;
        let mut report = Self {
            dim: p,
            matrix,
            param_labels,
            eigenvalues,
            eigenvectors,
            metrics: HessianMetrics {
                top_k_ipr: Vec::new(),
                axis_alignment: 0.0,
            },
        };
        report.metrics = diagonality_metrics(&report);
        Ok(report)
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.eigenvectors[i * self.dim + k]).collect()
    }

    /// Principal submatrix over the given indices.
    pub fn submatrix(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * idx.len());
        for &i in idx {
            for &j in idx {
                out.push(self.matrix[i * self.dim + j]);
            }
        }
        out
    }

    /// Indices of parameters in the named groups, in order.
    pub fn indices_of_groups(&self, groups: &[&str]) -> Vec<usize> {
        self.param_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| groups.iter().any(|g| l.split('[').next() == Some(*g)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Σ_{s, t ≥ burn_in} J_tᵀ J_t / N with J_t = dy_t/dθ, the Gauss-Newton
/// term of the Hessian of ½|y − y*|² averaged over time and sequences.
/// Jacobian rows come from `backward` applied to one-hot output errors.
pub fn gauss_newton_matrix(cell: &RecurrentCell, batch: &SequenceBatch, burn_in: usize) -> Result<Vec<f64>> {
    check_dim(cell.d_in(), batch.dim, "input dimension")?;
    if burn_in >= batch.length {
        return Err(Error::ParameterDomain(format!(
            "burn-in {burn_in} leaves no samples in sequences of length {}",
            batch.length
        )));
    }
    let p = cell.params().len();
    let d_out = cell.d_out();
    let t_len = batch.length;
    let chunks: Vec<usize> = (0..batch.count.div_ceil(CHUNK)).collect();
    let partials: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|&c| {
            let mut h = vec![0.0; p * p];
            let mut errors = vec![0.0; t_len * d_out];
            for s in c * CHUNK..((c + 1) * CHUNK).min(batch.count) {
                let x = batch.slice_sequences(s, 1);
                let fwd = cell.forward(&x)?;
                for t in burn_in..t_len {
                    for o in 0..d_out {
                        errors[t * d_out + o] = 1.0;
                        let j = cell.backward(&x, &fwd, &errors)?.grads.flatten();
                        errors[t * d_out + o] = 0.0;
                        for a in 0..p {
                            if j[a] == 0.0 {
                                continue;
                            }
                            let row = &mut h[a * p..(a + 1) * p];
                            for b in 0..p {
                                row[b] += j[a] * j[b];
                            }
                        }
                    }
                }
            }
            Ok(h)
        })
        .collect();
    let mut h = vec![0.0; p * p];
    for part in partials {
        h.iter_mut().zip(part?).for_each(|(a, b)| *a += b);
    }
    let n = (batch.count * (t_len - burn_in)) as f64;
    for a in 0..p {
        for b in a..p {
            let v = 0.5 * (h[a * p + b] + h[b * p + a]) / n;
            h[a * p + b] = v;
            h[b * p + a] = v;
        }
    }
    let labels = cell
        .params()
        .element_groups()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let mut bad: Vec<String> = Vec::new();
    for a in 0..p {
        if h[a * p..(a + 1) * p].iter().any(|v| !v.is_finite()) && !bad.contains(&labels[a]) {
            bad.push(labels[a].clone());
        }
    }
    if !bad.is_empty() {
        return Err(Error::Overflow { labels: bad });
    }
    Ok(h)
}

/// Gauss-Newton Hessian of a student assumed to fit its teacher exactly.
pub fn gauss_newton_hessian(cell: &RecurrentCell, batch: &SequenceBatch, burn_in: usize) -> Result<HessianReport> {
    let h = gauss_newton_matrix(cell, batch, burn_in)?;
    HessianReport::from_matrix(h, cell.params().element_labels())
}

/// Cyclic Jacobi eigensolver. Returns eigenvalues in descending order and the
/// matching eigenvectors as columns of a row-major p × p matrix.
pub fn symmetric_eigen(h: &[f64], p: usize, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(p * p, h.len(), "symmetric matrix")?;
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    for i in 0..p {
        for j in i + 1..p {
            if (h[i * p + j] - h[j * p + i]).abs() > SYMMETRY_TOL * norm.max(1.0) {
                return Err(Error::Contract(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut a = h.to_vec();
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        v[i * p + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    s += a[i * p + j] * a[i * p + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) > tol * norm {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Convergence {
                solver: "jacobi",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        for k in 0..p {
            for l in k + 1..p {
                let akl = a[k * p + l];
                if akl == 0.0 {
                    continue;
                }
                let tau = (a[l * p + l] - a[k * p + k]) / (2.0 * akl);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..p {
                    let (aik, ail) = (a[i * p + k], a[i * p + l]);
                    a[i * p + k] = c * aik - s * ail;
                    a[i * p + l] = s * aik + c * ail;
                }
                for j in 0..p {
                    let (akj, alj) = (a[k * p + j], a[l * p + j]);
                    a[k * p + j] = c * akj - s * alj;
                    a[l * p + j] = s * akj + c * alj;
                }
                for i in 0..p {
                    let (vik, vil) = (v[i * p + k], v[i * p + l]);
                    v[i * p + k] = c * vik - s * vil;
                    v[i * p + l] = s * vik + c * vil;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| a[y * p + y].total_cmp(&a[x * p + x]));
    let values = order.iter().map(|&k| a[k * p + k]).collect();
    let mut vectors = vec![0.0; p * p];
    for (col, &k) in order.iter().enumerate() {
        for i in 0..p {
            vectors[i * p + col] = v[i * p + k];
        }
    }
    Ok((values, vectors))
}

/// (Σ v²)² / Σ v⁴: 1 for a basis vector, p for a uniform one.
pub fn inverse_participation_ratio(v: &[f64]) -> f64 {
    let s2: f64 = v.iter().map(|x| x * x).sum();
    let s4: f64 = v.iter().map(|x| x.powi(4)).sum();
    s2 * s2 / s4
}

/// Σ_k |H_kk| / Σ_{k,l} |H_kl|.
pub fn axis_alignment(h: &[f64], p: usize) -> f64 {
    let diag: f64 = (0..p).map(|k| h[k * p + k].abs()).sum();
    let total: f64 = h.iter().map(|x| x.abs()).sum();
    diag / total
}

pub fn diagonality_metrics(report: &HessianReport) -> HessianMetrics {
    let k = TOP_K.min(report.dim);
    HessianMetrics {
        top_k_ipr: (0..k)
            .map(|j| inverse_participation_ratio(&report.eigenvector(j)))
            .collect(),
        axis_alignment: axis_alignment(&report.matrix, report.dim),
    }
}

/// Second-moment state of Adam captured after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamProbe {
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub alpha: f64,
    pub eps: f64,
    pub beta2: f64,
}

/// Step Adam would take on a unit gradient: α / (√v̂ + ε), with v̂ the
/// bias-corrected second moment.
pub fn adam_effective_lr(probe: &AdamProbe) -> Result<Vec<f64>> {
    if probe.step_count == 0 {
        return Err(Error::ProbeUninitialized);
    }
    let correction = 1.0 - probe.beta2.powf(probe.step_count as f64);
    Ok(probe
        .second_moment
        .iter()
        .map(|&v| probe.alpha / ((v / correction).sqrt() + probe.eps))
        .collect())
}

#[cfg(test)]
mod tests;
