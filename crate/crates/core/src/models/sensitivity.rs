use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{diagonalize, DenseLinearSSM};
use crate::error::{check_dim, Error, Result};
use crate::stochastic::SequenceBatch;

/// Root-mean-square Frobenius norms of the three factors of dh_t/dA, taken
/// over time steps and sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityNorms {
    /// ‖∂h_t/∂P‖ with h_t = P h_t^diag.
    pub p_term: f64,
    /// ‖dh_t^diag/dλ‖.
    pub lambda_term: f64,
    /// ‖dh_t^diag/dP⁻¹‖.
    pub p_inv_term: f64,
}

impl SensitivityNorms {
    pub fn lambda_over_p(&self) -> f64 {
        self.lambda_term / self.p_term
    }
}

/// Accumulates the three sensitivity factors of a dense SSM over the first
/// `horizon` steps of every input sequence.
pub fn sensitivity_decomposition(
    ssm: &DenseLinearSSM,
    inputs: &SequenceBatch,
    horizon: usize,
) -> Result<SensitivityNorms> {
    check_dim(ssm.d_in, inputs.dim, "input dimension")?;
    if horizon == 0 || horizon > inputs.length {
        return Err(Error::ParameterDomain(format!(
            "horizon {horizon} must lie in 1..={}",
            inputs.length
        )));
    }
    let n = ssm.n;
    let eig = diagonalize(&ssm.a, n)?;
    let lambda = &eig.lambda;
    let zero = Complex64::new(0.0, 0.0);
    let (mut p_acc, mut l_acc, mut r_acc) = (0.0, 0.0, 0.0);
    let mut bx = vec![0.0; n];
    for q in 0..inputs.count {
        let mut hd = vec![zero; n];
        let mut s = vec![zero; n];
        let mut r = vec![zero; n * n];
        for t in 0..horizon {
            let x = inputs.step(q, t);
            for i in 0..n {
                bx[i] = (0..ssm.d_in).map(|j| ssm.b[i * ssm.d_in + j] * x[j]).sum();
            }
            for k in 0..n {
                let u: Complex64 = (0..n).map(|j| eig.p_inv.at(k, j) * bx[j]).sum();
                s[k] = lambda[k] * s[k] + hd[k];
                hd[k] = lambda[k] * hd[k] + u;
                for j in 0..n {
                    r[k * n + j] = lambda[k] * r[k * n + j] + bx[j];
                }
            }
            // every row i of ∂h_i/∂P_ik = h^diag_k contributes once
            p_acc += n as f64 * hd.iter().map(|z| z.norm_sqr()).sum::<f64>();
            l_acc += s.iter().map(|z| z.norm_sqr()).sum::<f64>();
            r_acc += r.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
    }
    let cnt = (inputs.count * horizon) as f64;
    Ok(SensitivityNorms {
        p_term: (p_acc / cnt).sqrt(),
        lambda_term: (l_acc / cnt).sqrt(),
        p_inv_term: (r_acc / cnt).sqrt(),
    })
}
