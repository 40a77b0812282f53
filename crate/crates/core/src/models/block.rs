use serde::{Deserialize, Serialize};

use super::{check_batch, Backward, Forward, ParamBundle, ParamGroup, States};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{gemm_v, View};
use crate::stochastic::SequenceBatch;

/// A linear recurrence whose matrix is block-diagonal with 2 × 2 blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagonalCell {
    pub n: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// n/2 blocks, each row-major `[a00, a01, a10, a11]`.
    pub blocks: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl BlockDiagonalCell {
    pub fn new(
        n: usize,
        d_in: usize,
        d_out: usize,
        blocks: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        d: Vec<f64>,
    ) -> Result<Self> {
        if !n.is_multiple_of(2) {
            return Err(Error::ParameterDomain(format!(
                "block-diagonal width must be even, got {n}"
            )));
        }
        check_dim(2 * n, blocks.len(), "2x2 blocks")?;
        check_dim(n * d_in, b.len(), "B")?;
        check_dim(d_out * n, c.len(), "C")?;
        check_dim(d_out * d_in, d.len(), "D")?;
        Ok(Self {
            n,
            d_in,
            d_out,
            blocks,
            b,
            c,
            d,
        })
    }

    /// The full n × n recurrent matrix.
    pub fn dense_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for k in 0..n / 2 {
            let blk = &self.blocks[4 * k..4 * k + 4];
            let i = 2 * k;
            a[i * n + i] = blk[0];
            a[i * n + i + 1] = blk[1];
            a[(i + 1) * n + i] = blk[2];
            a[(i + 1) * n + i + 1] = blk[3];
        }
        a
    }

    pub fn params(&self) -> ParamBundle {
        ParamBundle::new(vec![
            ParamGroup::new("blocks", vec![self.n / 2, 2, 2], self.blocks.clone()),
            ParamGroup::new("B", vec![self.n, self.d_in], self.b.clone()),
            ParamGroup::new("C", vec![self.d_out, self.n], self.c.clone()),
            ParamGroup::new("D", vec![self.d_out, self.d_in], self.d.clone()),
        ])
    }

    pub fn set_params(&mut self, p: &ParamBundle) -> Result<()> {
        let mut own = self.params();
        own.assign_from(p)?;
        self.blocks = own.values("blocks")?.to_vec();
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
        for q in 0..s {
            for t in 1..t_len {
                let cur = (q * t_len + t) * n;
                let (prev, now) = h[cur - n..cur + n].split_at_mut(n);
                for (k, blk) in self.blocks.chunks_exact(4).enumerate() {
                    let (p0, p1) = (prev[2 * k], prev[2 * k + 1]);
                    now[2 * k] += blk[0] * p0 + blk[1] * p1;
                    now[2 * k + 1] += blk[2] * p0 + blk[3] * p1;
                }
            }
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
            _ => return Err(Error::Contract("block backward needs a real forward pass".into())),
        };
        let (s, t_len, n, d_in, d_out) = (x.count, x.length, self.n, self.d_in, self.d_out);
        let rows = s * t_len;
        let ev = View::dense(rows, d_out);
        let xv = View::dense(rows, d_in);
        let hv = View::dense(rows, n);
        let mut g = vec![0.0; rows * n];
        gemm_v(1.0, errors, ev, &self.c, View::dense(d_out, n), 0.0, &mut g, hv);
        let mut dblocks = vec![0.0; 2 * n];
        for q in 0..s {
            for t in (0..t_len).rev() {
                let cur = (q * t_len + t) * n;
                if t + 1 < t_len {
                    let (now, next) = g[cur..cur + 2 * n].split_at_mut(n);
                    for (k, blk) in self.blocks.chunks_exact(4).enumerate() {
                        let (q0, q1) = (next[2 * k], next[2 * k + 1]);
                        now[2 * k] += blk[0] * q0 + blk[2] * q1;
                        now[2 * k + 1] += blk[1] * q0 + blk[3] * q1;
                    }
                }
                if t > 0 {
                    let prev = &h[cur - n..cur];
                    let gt = &g[cur..cur + n];
                    for k in 0..n / 2 {
                        let (g0, g1) = (gt[2 * k], gt[2 * k + 1]);
                        let (p0, p1) = (prev[2 * k], prev[2 * k + 1]);
                        let db = &mut dblocks[4 * k..4 * k + 4];
                        db[0] += g0 * p0;
                        db[1] += g0 * p1;
                        db[2] += g1 * p0;
                        db[3] += g1 * p1;
                    }
                }
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
                ParamGroup::new("blocks", vec![n / 2, 2, 2], dblocks),
                ParamGroup::new("B", vec![n, d_in], db),
                ParamGroup::new("C", vec![d_out, n], dc),
                ParamGroup::new("D", vec![d_out, d_in], dd),
            ]),
            input_grad: dx,
        })
    }
}
