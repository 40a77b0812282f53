use serde::{Deserialize, Serialize};

use super::{check_batch, Backward, Forward, ParamBundle, ParamGroup, States};
use crate::error::{check_dim, Result};
use crate::linalg::{gemm_v, gemm_v_within, real_eigenvalues, View};
use crate::stochastic::SequenceBatch;

/// h_t = A h_{t-1} + B x_t, y_t = C h_t + D x_t, with h_{-1} = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLinearSSM {
    pub n: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// n × n, row-major.
    pub a: Vec<f64>,
    /// n × d_in.
    pub b: Vec<f64>,
    /// d_out × n.
    pub c: Vec<f64>,
    /// d_out × d_in.
    pub d: Vec<f64>,
}

impl DenseLinearSSM {
    pub fn new(
        n: usize,
        d_in: usize,
        d_out: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        d: Vec<f64>,
    ) -> Result<Self> {
        check_dim(n * n, a.len(), "A")?;
        check_dim(n * d_in, b.len(), "B")?;
        check_dim(d_out * n, c.len(), "C")?;
        check_dim(d_out * d_in, d.len(), "D")?;
        Ok(Self {
            n,
            d_in,
            d_out,
            a,
            b,
            c,
            d,
        })
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(real_eigenvalues(&self.a, self.n)?
            .iter()
            .fold(0.0, |m, z| m.max(z.norm())))
    }

    pub fn params(&self) -> ParamBundle {
        ParamBundle::new(vec![
            ParamGroup::new("A", vec![self.n, self.n], self.a.clone()),
            ParamGroup::new("B", vec![self.n, self.d_in], self.b.clone()),
            ParamGroup::new("C", vec![self.d_out, self.n], self.c.clone()),
            ParamGroup::new("D", vec![self.d_out, self.d_in], self.d.clone()),
        ])
    }

    pub fn set_params(&mut self, p: &ParamBundle) -> Result<()> {
        let mut own = self.params();
        own.assign_from(p)?;
        self.a = own.values("A")?.to_vec();
        self.b = own.values("B")?.to_vec();
        self.c = own.values("C")?.to_vec();
        self.d = own.values("D")?.to_vec();
        Ok(())
    }

    pub fn forward(&self, x: &SequenceBatch) -> Result<Forward> {
        check_dim(self.d_in, x.dim, "input dimension")?;
        let (s, t_len, n) = (x.count, x.length, self.n);
        let rows = s * t_len;
        let mut h = vec![0.0; rows * n];
        gemm_v(
            1.0,
            &x.data,
            View::dense(rows, self.d_in),
            &self.b,
            View::dense(n, self.d_in).t(),
            0.0,
            &mut h,
            View::dense(rows, n),
        );
        let a_t = View::dense(n, n).t();
        for t in 1..t_len {
            gemm_v_within(
                1.0,
                &mut h,
                View::rows_at((t - 1) * n, s, n, t_len * n),
                &self.a,
                a_t,
                1.0,
                View::rows_at(t * n, s, n, t_len * n),
            );
        }
        let mut y = vec![0.0; rows * self.d_out];
        let yv = View::dense(rows, self.d_out);
        gemm_v(
            1.0,
            &h,
            View::dense(rows, n),
            &self.c,
            View::dense(self.d_out, n).t(),
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
            states: States::Real { width: n, h },
        })
    }

    pub fn backward(&self, x: &SequenceBatch, fwd: &Forward, errors: &[f64]) -> Result<Backward> {
        check_batch(x, fwd, errors, self.d_in, self.d_out)?;
        let h = match &fwd.states {
            States::Real { h, .. } => h,
            _ => {
                return Err(crate::Error::Contract(
                    "dense backward needs a dense forward pass".into(),
                ))
            }
        };
        let (s, t_len, n, d_in, d_out) = (x.count, x.length, self.n, self.d_in, self.d_out);
        let rows = s * t_len;
        let ev = View::dense(rows, d_out);
        let xv = View::dense(rows, d_in);
        let hv = View::dense(rows, n);
        // g_t = Cᵀ e_t + Aᵀ g_{t+1}, stored as rows
        let mut g = vec![0.0; rows * n];
        gemm_v(1.0, errors, ev, &self.c, View::dense(d_out, n), 0.0, &mut g, hv);
        for t in (0..t_len.saturating_sub(1)).rev() {
            gemm_v_within(
                1.0,
                &mut g,
                View::rows_at((t + 1) * n, s, n, t_len * n),
                &self.a,
                View::dense(n, n),
                1.0,
                View::rows_at(t * n, s, n, t_len * n),
            );
        }
        let mut da = vec![0.0; n * n];
        if t_len > 1 {
            for q in 0..s {
                let base = q * t_len * n;
                gemm_v(
                    1.0,
                    &g,
                    View::rows_at(base + n, t_len - 1, n, n).t(),
                    h,
                    View::rows_at(base, t_len - 1, n, n),
                    1.0,
                    &mut da,
                    View::dense(n, n),
                );
            }
        }
        let mut db = vec![0.0; n * d_in];
        gemm_v(1.0, &g, hv.t(), &x.data, xv, 0.0, &mut db, View::dense(n, d_in));
        let mut dc = vec![0.0; d_out * n];
        gemm_v(1.0, errors, ev.t(), h, hv, 0.0, &mut dc, View::dense(d_out, n));
        let mut dd = vec![0.0; d_out * d_in];
        gemm_v(1.0, errors, ev.t(), &x.data, xv, 0.0, &mut dd, View::dense(d_out, d_in));
        let mut dx = vec![0.0; rows * d_in];
        gemm_v(1.0, &g, hv, &self.b, View::dense(n, d_in), 0.0, &mut dx, xv);
        gemm_v(1.0, errors, ev, &self.d, View::dense(d_out, d_in), 1.0, &mut dx, xv);
        Ok(Backward {
            grads: ParamBundle::new(vec![
                ParamGroup::new("A", vec![n, n], da),
                ParamGroup::new("B", vec![n, d_in], db),
                ParamGroup::new("C", vec![d_out, n], dc),
                ParamGroup::new("D", vec![d_out, d_in], dd),
            ]),
            input_grad: dx,
        })
    }
}
