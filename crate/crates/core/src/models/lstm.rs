use serde::{Deserialize, Serialize};

use super::{check_batch, Backward, Forward, ParamBundle, ParamGroup, States};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{gemm_v, View};
use crate::rng::RngStream;
use crate::stochastic::SequenceBatch;

/// Lower bound on the chrono time constant; τ = 1 would give b_f = −∞.
pub const CHRONO_TAU_MIN: f64 = 1.0 + 1e-6;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// LSTM with gate order [i, f, g, o] and a linear readout y = C h + D x.
///
/// c_t = f ⊙ c_{t-1} + i ⊙ g, h_t = o ⊙ tanh(c_t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub hidden: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// 4H × d_in.
    pub w_input: Vec<f64>,
    /// 4H × H.
    pub w_recurrent: Vec<f64>,
    /// 4H.
    pub bias: Vec<f64>,
    /// d_out × H.
    pub c: Vec<f64>,
    /// d_out × d_in.
    pub d: Vec<f64>,
}

/// Chrono initialization: forget time constants τ ~ U[1/(1−ν), 2/(1−ν)],
/// b_f = log(τ − 1), b_i = −b_f; weights drawn with std 1/√fan_in.
pub fn chrono_init(hidden: usize, d_in: usize, d_out: usize, nu: f64, stream: &RngStream) -> Result<LstmCell> {
    if !(0.0..1.0).contains(&nu) {
        return Err(Error::ParameterDomain(format!(
            "chrono init needs 0 <= nu < 1, got {nu}"
        )));
    }
    let h = hidden;
    let mut rng = stream.child(0).rng();
    let sx = 1.0 / (d_in as f64).sqrt();
    let sh = 1.0 / (h as f64).sqrt();
    let w_input = (0..4 * h * d_in).map(|_| sx * rng.normal()).collect();
    let w_recurrent = (0..4 * h * h).map(|_| sh * rng.normal()).collect();
    let c = (0..d_out * h).map(|_| sh * rng.normal()).collect();
    let d = (0..d_out * d_in).map(|_| sx * rng.normal()).collect();
    let mut bias = vec![0.0; 4 * h];
    let mut taus = stream.child(1).rng();
    let lo = 1.0 / (1.0 - nu);
    for k in 0..h {
        let tau = taus.uniform_range(lo, 2.0 * lo).max(CHRONO_TAU_MIN);
        let bf = (tau - 1.0).ln();
        bias[h + k] = bf;
        bias[k] = -bf;
    }
    Ok(LstmCell {
        hidden,
        d_in,
        d_out,
        w_input,
        w_recurrent,
        bias,
        c,
        d,
    })
}

impl LstmCell {
    pub fn params(&self) -> ParamBundle {
        let h = self.hidden;
        ParamBundle::new(vec![
            ParamGroup::new("w_input", vec![4 * h, self.d_in], self.w_input.clone()),
            ParamGroup::new("w_recurrent", vec![4 * h, h], self.w_recurrent.clone()),
            ParamGroup::new("bias", vec![4 * h], self.bias.clone()),
            ParamGroup::new("C", vec![self.d_out, h], self.c.clone()),
            ParamGroup::new("D", vec![self.d_out, self.d_in], self.d.clone()),
        ])
    }

    pub fn set_params(&mut self, p: &ParamBundle) -> Result<()> {
        let mut own = self.params();
        own.assign_from(p)?;
        self.w_input = own.values("w_input")?.to_vec();
        self.w_recurrent = own.values("w_recurrent")?.to_vec();
        self.bias = own.values("bias")?.to_vec();
        self.c = own.values("C")?.to_vec();
        self.d = own.values("D")?.to_vec();
        Ok(())
    }

    pub fn forward(&self, x: &SequenceBatch) -> Result<Forward> {
        check_dim(self.d_in, x.dim, "input dimension")?;
        let (s, t_len, h) = (x.count, x.length, self.hidden);
        let rows = s * t_len;
        let g4 = 4 * h;
        let mut pre = vec![0.0; rows * g4];
        for row in pre.chunks_exact_mut(g4) {
            row.copy_from_slice(&self.bias);
        }
        gemm_v(
            1.0,
            &x.data,
            View::dense(rows, self.d_in),
            &self.w_input,
            View::dense(g4, self.d_in).t(),
            1.0,
            &mut pre,
            View::dense(rows, g4),
        );
        let mut hs = vec![0.0; rows * h];
        let mut cs = vec![0.0; rows * h];
        let wr_t = View::dense(g4, h).t();
        for t in 0..t_len {
            if t > 0 {
                gemm_v(
                    1.0,
                    &hs,
                    View::rows_at((t - 1) * h, s, h, t_len * h),
                    &self.w_recurrent,
                    wr_t,
                    1.0,
                    &mut pre,
                    View::rows_at(t * g4, s, g4, t_len * g4),
                );
            }
            for q in 0..s {
                let row = q * t_len + t;
                let gate = &mut pre[row * g4..(row + 1) * g4];
                for k in 0..h {
                    gate[k] = sigmoid(gate[k]);
                    gate[h + k] = sigmoid(gate[h + k]);
                    gate[2 * h + k] = gate[2 * h + k].tanh();
                    gate[3 * h + k] = sigmoid(gate[3 * h + k]);
                    let c_prev = if t > 0 { cs[(row - 1) * h + k] } else { 0.0 };
                    let c = gate[h + k] * c_prev + gate[k] * gate[2 * h + k];
                    cs[row * h + k] = c;
                    hs[row * h + k] = gate[3 * h + k] * c.tanh();
                }
            }
        }
        let mut y = vec![0.0; rows * self.d_out];
        let yv = View::dense(rows, self.d_out);
        gemm_v(
            1.0,
            &hs,
            View::dense(rows, h),
            &self.c,
            View::dense(self.d_out, h).t(),
            0.0,
            &mut y,
            yv,
        );
        gemm_v(
            1.0,
            &x.data,
            View::dense(rows, self.d_in),
            &self.d,
            View::dense(self.d_out, self.d_in).t(),
            1.0,
            &mut y,
            yv,
        );
        Ok(Forward {
            count: s,
            length: t_len,
            d_out: self.d_out,
            outputs: y,
            states: States::Lstm {
                width: h,
                h: hs,
                c: cs,
                gates: pre,
            },
        })
    }

    pub fn backward(&self, x: &SequenceBatch, fwd: &Forward, errors: &[f64]) -> Result<Backward> {
        check_batch(x, fwd, errors, self.d_in, self.d_out)?;
        let (hs, cs, gates) = match &fwd.states {
            States::Lstm { h, c, gates, .. } => (h, c, gates),
            _ => return Err(Error::Contract("lstm backward needs an lstm forward pass".into())),
        };
        let (s, t_len, h, d_in, d_out) = (x.count, x.length, self.hidden, self.d_in, self.d_out);
        let rows = s * t_len;
        let g4 = 4 * h;
        let ev = View::dense(rows, d_out);
        let xv = View::dense(rows, d_in);
        let hv = View::dense(rows, h);
        let gv = View::dense(rows, g4);
        // dh starts as the readout contribution Cᵀ e_t
        let mut dh = vec![0.0; rows * h];
        gemm_v(1.0, errors, ev, &self.c, View::dense(d_out, h), 0.0, &mut dh, hv);
        let mut dpre = vec![0.0; rows * g4];
        let mut dc_next = vec![0.0; s * h];
        for t in (0..t_len).rev() {
            if t + 1 < t_len {
                gemm_v(
                    1.0,
                    &dpre,
                    View::rows_at((t + 1) * g4, s, g4, t_len * g4),
                    &self.w_recurrent,
                    View::dense(g4, h),
                    1.0,
                    &mut dh,
                    View::rows_at(t * h, s, h, t_len * h),
                );
            }
            for q in 0..s {
                let row = q * t_len + t;
                let gate = &gates[row * g4..(row + 1) * g4];
                let next_f = (t + 1 < t_len).then(|| &gates[(row + 1) * g4 + h..(row + 1) * g4 + 2 * h]);
                for k in 0..h {
                    let (i, f, g, o) = (gate[k], gate[h + k], gate[2 * h + k], gate[3 * h + k]);
                    let tc = cs[row * h + k].tanh();
                    let dhk = dh[row * h + k];
                    let carry = next_f.map_or(0.0, |nf| dc_next[q * h + k] * nf[k]);
                    let dc = dhk * o * (1.0 - tc * tc) + carry;
                    dc_next[q * h + k] = dc;
                    let c_prev = if t > 0 { cs[(row - 1) * h + k] } else { 0.0 };
                    let dp = &mut dpre[row * g4..(row + 1) * g4];
                    dp[k] = dc * g * i * (1.0 - i);
                    dp[h + k] = dc * c_prev * f * (1.0 - f);
                    dp[2 * h + k] = dc * i * (1.0 - g * g);
                    dp[3 * h + k] = dhk * tc * o * (1.0 - o);
                }
            }
        }
        let mut dwx = vec![0.0; g4 * d_in];
        gemm_v(1.0, &dpre, gv.t(), &x.data, xv, 0.0, &mut dwx, View::dense(g4, d_in));
        let mut dwh = vec![0.0; g4 * h];
        if t_len > 1 {
            for q in 0..s {
                gemm_v(
                    1.0,
                    &dpre,
                    View::rows_at((q * t_len + 1) * g4, t_len - 1, g4, g4).t(),
                    hs,
                    View::rows_at(q * t_len * h, t_len - 1, h, h),
                    1.0,
                    &mut dwh,
                    View::dense(g4, h),
                );
            }
        }
        let mut dbias = vec![0.0; g4];
        for row in dpre.chunks_exact(g4) {
            dbias.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let mut dcw = vec![0.0; d_out * h];
        gemm_v(1.0, errors, ev.t(), hs, hv, 0.0, &mut dcw, View::dense(d_out, h));
        let mut dd = vec![0.0; d_out * d_in];
        gemm_v(1.0, errors, ev.t(), &x.data, xv, 0.0, &mut dd, View::dense(d_out, d_in));
        let mut dx = vec![0.0; rows * d_in];
        gemm_v(1.0, &dpre, gv, &self.w_input, View::dense(g4, d_in), 0.0, &mut dx, xv);
        gemm_v(1.0, errors, ev, &self.d, View::dense(d_out, d_in), 1.0, &mut dx, xv);
        Ok(Backward {
            grads: ParamBundle::new(vec![
                ParamGroup::new("w_input", vec![g4, d_in], dwx),
                ParamGroup::new("w_recurrent", vec![g4, h], dwh),
                ParamGroup::new("bias", vec![g4], dbias),
                ParamGroup::new("C", vec![d_out, h], dcw),
                ParamGroup::new("D", vec![d_out, d_in], dd),
            ]),
            input_grad: dx,
        })
    }
}
