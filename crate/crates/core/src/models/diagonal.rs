use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_batch, Backward, Forward, ParamBundle, ParamGroup, States};
use crate::analytic::{NormalizationSpec, ParamPoint, ParametrizationSpec};
use crate::error::{check_dim, Error, Result};
use crate::linalg::eigendecompose;
use crate::models::DenseLinearSSM;
use crate::stochastic::SequenceBatch;

/// h_t = λ ⊙ h_{t-1} + γ(λ) ⊙ (b x_t), y_t = Re[c h_t] + d x_t with complex
/// λ, b, c and λ = λ(ω) given by `param`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagonalComplexCell {
    pub m: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// First coordinate of every unit (magnitude for polar kinds).
    pub omega_nu: Vec<f64>,
    /// Second coordinate of every unit (angle for polar kinds).
    pub omega_theta: Vec<f64>,
    /// m × d_in.
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
    /// d_out × m.
    pub c_re: Vec<f64>,
    pub c_im: Vec<f64>,
    /// d_out × d_in.
    pub d: Vec<f64>,
    pub param: ParametrizationSpec,
    pub norm: NormalizationSpec,
}

impl DiagonalComplexCell {
    /// Builds a cell from eigenvalues and complex weights.
    #[allow(clippy::too_many_arguments)]
    pub fn from_lambda(
        lambda: &[Complex64],
        b: &[Complex64],
        c: &[Complex64],
        d: Vec<f64>,
        d_in: usize,
        d_out: usize,
        param: ParametrizationSpec,
        norm: NormalizationSpec,
    ) -> Result<Self> {
        let m = lambda.len();
        check_dim(m * d_in, b.len(), "b")?;
        check_dim(d_out * m, c.len(), "c")?;
        check_dim(d_out * d_in, d.len(), "d")?;
        let mut omega_nu = Vec::with_capacity(m);
        let mut omega_theta = Vec::with_capacity(m);
        for &l in lambda {
            let w = param.omega(l)?;
            omega_nu.push(w[0]);
            omega_theta.push(w[1]);
        }
        Ok(Self {
            m,
            d_in,
            d_out,
            omega_nu,
            omega_theta,
            b_re: b.iter().map(|z| z.re).collect(),
            b_im: b.iter().map(|z| z.im).collect(),
            c_re: c.iter().map(|z| z.re).collect(),
            c_im: c.iter().map(|z| z.im).collect(),
            d,
            param,
            norm,
        })
    }

    /// The diagonalized equivalent of a dense SSM: λ = eig(A), b = P⁻¹B,
    /// c = CP, with the direct parametrization and no normalization.
    pub fn from_dense(ssm: &DenseLinearSSM) -> Result<Self> {
        let eig = eigendecompose(&ssm.a, ssm.n)?;
        let n = ssm.n;
        let mut b = vec![Complex64::new(0.0, 0.0); n * ssm.d_in];
        for i in 0..n {
            for j in 0..ssm.d_in {
                b[i * ssm.d_in + j] = (0..n).map(|k| eig.p_inv.at(i, k) * ssm.b[k * ssm.d_in + j]).sum();
            }
        }
        let mut c = vec![Complex64::new(0.0, 0.0); ssm.d_out * n];
        for o in 0..ssm.d_out {
            for j in 0..n {
                c[o * n + j] = (0..n).map(|k| eig.p.at(k, j) * ssm.c[o * n + k]).sum();
            }
        }
        Self::from_lambda(
            &eig.lambda,
            &b,
            &c,
            ssm.d.clone(),
            ssm.d_in,
            ssm.d_out,
            ParametrizationSpec::Direct,
            NormalizationSpec::none(),
        )
    }

    pub fn points(&self) -> Result<Vec<ParamPoint>> {
        (0..self.m)
            .map(|k| self.param.point([self.omega_nu[k], self.omega_theta[k]]))
            .collect()
    }

    pub fn lambdas(&self) -> Result<Vec<Complex64>> {
        Ok(self.points()?.iter().map(|p| p.lambda).collect())
    }

    pub fn b(&self) -> Vec<Complex64> {
        self.b_re
            .iter()
            .zip(&self.b_im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn c(&self) -> Vec<Complex64> {
        self.c_re
            .iter()
            .zip(&self.c_im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn params(&self) -> ParamBundle {
        let names = self.param.coordinate_names();
        ParamBundle::new(vec![
            ParamGroup::new(names[0], vec![self.m], self.omega_nu.clone()),
            ParamGroup::new(names[1], vec![self.m], self.omega_theta.clone()),
            ParamGroup::new("b.re", vec![self.m, self.d_in], self.b_re.clone()),
            ParamGroup::new("b.im", vec![self.m, self.d_in], self.b_im.clone()),
            ParamGroup::new("c.re", vec![self.d_out, self.m], self.c_re.clone()),
            ParamGroup::new("c.im", vec![self.d_out, self.m], self.c_im.clone()),
            ParamGroup::new("d", vec![self.d_out, self.d_in], self.d.clone()),
        ])
    }

    pub fn set_params(&mut self, p: &ParamBundle) -> Result<()> {
        let names = self.param.coordinate_names();
        let mut own = self.params();
        own.assign_from(p)?;
        self.omega_nu = own.values(names[0])?.to_vec();
        self.omega_theta = own.values(names[1])?.to_vec();
        self.b_re = own.values("b.re")?.to_vec();
        self.b_im = own.values("b.im")?.to_vec();
        self.c_re = own.values("c.re")?.to_vec();
        self.c_im = own.values("c.im")?.to_vec();
        self.d = own.values("d")?.to_vec();
        Ok(())
    }

    fn gammas(&self, points: &[ParamPoint]) -> Result<Vec<f64>> {
        points.iter().map(|p| self.norm.gamma(p.lambda)).collect()
    }

    /// γ-scaled input weights, transposed to d_in × m.
    fn input_weights_t(&self, gammas: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, d_in) = (self.m, self.d_in);
        let t = |w: &[f64]| {
            (0..d_in * m)
                .map(|i| gammas[i % m] * w[(i % m) * d_in + i / m])
                .collect()
        };
        (t(&self.b_re), t(&self.b_im))
    }

    pub fn forward(&self, x: &SequenceBatch) -> Result<Forward> {
        check_dim(self.d_in, x.dim, "input dimension")?;
        let points = self.points()?;
        let gammas = self.gammas(&points)?;
        let (s, t_len, m, d_in, d_out) = (x.count, x.length, self.m, self.d_in, self.d_out);
        let rows = s * t_len;
        let lr: Vec<f64> = points.iter().map(|p| p.lambda.re).collect();
        let li: Vec<f64> = points.iter().map(|p| p.lambda.im).collect();
        let (bgr, bgi) = self.input_weights_t(&gammas);
        let mut hr = vec![0.0; rows * m];
        let mut hi = vec![0.0; rows * m];
        let mut y = vec![0.0; rows * d_out];
        let mut ur = vec![0.0; m];
        let mut ui = vec![0.0; m];
        for q in 0..s {
            for t in 0..t_len {
                let row = q * t_len + t;
                let xt = x.step(q, t);
                project(xt, &bgr, &bgi, &mut ur, &mut ui);
                let cur = row * m;
                if t > 0 {
                    let (prev_r, next_r) = hr[cur - m..cur + m].split_at_mut(m);
                    let (prev_i, next_i) = hi[cur - m..cur + m].split_at_mut(m);
                    let (lr, li, ur, ui) = (&lr[..m], &li[..m], &ur[..m], &ui[..m]);
                    for k in 0..m {
                        next_r[k] = lr[k] * prev_r[k] - li[k] * prev_i[k] + ur[k];
                        next_i[k] = lr[k] * prev_i[k] + li[k] * prev_r[k] + ui[k];
                    }
                } else {
                    hr[cur..cur + m].copy_from_slice(&ur);
                    hi[cur..cur + m].copy_from_slice(&ui);
                }
                let (h_r, h_i) = (&hr[cur..cur + m], &hi[cur..cur + m]);
                for o in 0..d_out {
                    let (cr, ci) = (&self.c_re[o * m..(o + 1) * m], &self.c_im[o * m..(o + 1) * m]);
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += cr[k] * h_r[k] - ci[k] * h_i[k];
                    }
                    for (j, &xj) in xt.iter().enumerate() {
                        acc += self.d[o * d_in + j] * xj;
                    }
                    y[row * d_out + o] = acc;
                }
            }
        }
        Ok(Forward {
            count: s,
            length: t_len,
            d_out,
            outputs: y,
            states: States::Complex {
                width: m,
                re: hr,
                im: hi,
            },
        })
    }

    /// One reverse sweep per sequence carrying G_t = ∂L/∂Re h_t + i ∂L/∂Im h_t.
    pub fn backward(&self, x: &SequenceBatch, fwd: &Forward, errors: &[f64]) -> Result<Backward> {
        check_batch(x, fwd, errors, self.d_in, self.d_out)?;
        let (hr, hi) = match &fwd.states {
            States::Complex { re, im, .. } => (re, im),
            _ => return Err(Error::Contract("diagonal backward needs a complex forward pass".into())),
        };
        let points = self.points()?;
        let gammas = self.gammas(&points)?;
        let (s, t_len, m, d_in, d_out) = (x.count, x.length, self.m, self.d_in, self.d_out);
        let lr: Vec<f64> = points.iter().map(|p| p.lambda.re).collect();
        let li: Vec<f64> = points.iter().map(|p| p.lambda.im).collect();
        let gamma_grad = !self.norm.stop_gradient && !matches!(self.norm.kind, crate::analytic::GammaKind::None);
        let mut glr = vec![0.0; m];
        let mut gli = vec![0.0; m];
        let mut dgamma = vec![0.0; m];
        // Σ_t G_t x_t, d_in × m, scaled by γ at the end
        let mut gx_re = vec![0.0; m * d_in];
        let mut gx_im = vec![0.0; m * d_in];
        let mut dc_re = vec![0.0; d_out * m];
        let mut dc_im = vec![0.0; d_out * m];
        let mut dd = vec![0.0; d_out * d_in];
        let mut dx = vec![0.0; s * t_len * d_in];
        let (bgr, bgi) = self.input_weights_t(&gammas);
        let (btr, bti) = self.input_weights_t(&vec![1.0; m]);
        let mut gr = vec![0.0; m];
        let mut gi = vec![0.0; m];
        let mut vr = vec![0.0; m];
        let mut vi = vec![0.0; m];
        for q in 0..s {
            gr.fill(0.0);
            gi.fill(0.0);
            for t in (0..t_len).rev() {
                let row = q * t_len + t;
                let cur = row * m;
                let e = &errors[row * d_out..(row + 1) * d_out];
                let xt = x.step(q, t);
                // G_t = conj(λ) G_{t+1} + Σ_o e_o conj(c_o)
                let (gr, gi, lr, li) = (&mut gr[..m], &mut gi[..m], &lr[..m], &li[..m]);
                for k in 0..m {
                    let (r, i) = (gr[k], gi[k]);
                    gr[k] = lr[k] * r + li[k] * i;
                    gi[k] = lr[k] * i - li[k] * r;
                }
                let (h_r, h_i) = (&hr[cur..cur + m], &hi[cur..cur + m]);
                for (o, &eo) in e.iter().enumerate() {
                    if eo == 0.0 {
                        continue;
                    }
                    let (cr, ci) = (&self.c_re[o * m..(o + 1) * m], &self.c_im[o * m..(o + 1) * m]);
                    let (dcr, dci) = (&mut dc_re[o * m..(o + 1) * m], &mut dc_im[o * m..(o + 1) * m]);
                    for k in 0..m {
                        gr[k] += eo * cr[k];
                        gi[k] -= eo * ci[k];
                        dcr[k] += eo * h_r[k];
                        dci[k] -= eo * h_i[k];
                    }
                    for (j, &xj) in xt.iter().enumerate() {
                        dd[o * d_in + j] += eo * xj;
                    }
                }
                if t > 0 {
                    let (pr, pi) = (&hr[cur - m..cur], &hi[cur - m..cur]);
                    let (glr, gli) = (&mut glr[..m], &mut gli[..m]);
                    for k in 0..m {
                        glr[k] += gr[k] * pr[k] + gi[k] * pi[k];
                        gli[k] += gi[k] * pr[k] - gr[k] * pi[k];
                    }
                }
                if gamma_grad {
                    project(xt, &btr, &bti, &mut vr, &mut vi);
                    let (dgamma, vr, vi) = (&mut dgamma[..m], &vr[..m], &vi[..m]);
                    for k in 0..m {
                        dgamma[k] += gr[k] * vr[k] + gi[k] * vi[k];
                    }
                }
                let dxt = &mut dx[row * d_in..(row + 1) * d_in];
                for (j, &xj) in xt.iter().enumerate() {
                    let span = j * m..(j + 1) * m;
                    for ((a, b), (&r, &i)) in gx_re[span.clone()]
                        .iter_mut()
                        .zip(&mut gx_im[span.clone()])
                        .zip(gr.iter().zip(gi.iter()))
                    {
                        *a += r * xj;
                        *b += i * xj;
                    }
                    dxt[j] = bgr[span.clone()]
                        .iter()
                        .zip(&bgi[span])
                        .zip(gr.iter().zip(gi.iter()))
                        .map(|((&br, &bi), (&r, &i))| r * br + i * bi)
                        .sum();
                }
                for (o, &eo) in e.iter().enumerate() {
                    for j in 0..d_in {
                        dxt[j] += eo * self.d[o * d_in + j];
                    }
                }
            }
        }
        let mut dw0 = vec![0.0; m];
        let mut dw1 = vec![0.0; m];
        for k in 0..m {
            let z = points[k].jacobian;
            dw0[k] = glr[k] * z[0].re + gli[k] * z[0].im;
            dw1[k] = glr[k] * z[1].re + gli[k] * z[1].im;
            if gamma_grad {
                let l = points[k].lambda;
                dw0[k] += dgamma[k] * self.norm.gamma_derivative(l, z[0])?;
                dw1[k] += dgamma[k] * self.norm.gamma_derivative(l, z[1])?;
            }
        }
        let db_re = (0..m * d_in)
            .map(|i| gammas[i / d_in] * gx_re[(i % d_in) * m + i / d_in])
            .collect();
        let db_im = (0..m * d_in)
            .map(|i| gammas[i / d_in] * gx_im[(i % d_in) * m + i / d_in])
            .collect();
        let names = self.param.coordinate_names();
        Ok(Backward {
            grads: ParamBundle::new(vec![
                ParamGroup::new(names[0], vec![m], dw0),
                ParamGroup::new(names[1], vec![m], dw1),
                ParamGroup::new("b.re", vec![m, d_in], db_re),
                ParamGroup::new("b.im", vec![m, d_in], db_im),
                ParamGroup::new("c.re", vec![d_out, m], dc_re),
                ParamGroup::new("c.im", vec![d_out, m], dc_im),
                ParamGroup::new("d", vec![d_out, d_in], dd),
            ]),
            input_grad: dx,
        })
    }
}

/// u = Wᵀx for W stored d_in × m.
fn project(x: &[f64], wr: &[f64], wi: &[f64], ur: &mut [f64], ui: &mut [f64]) {
    let m = ur.len();
    ur.fill(0.0);
    ui.fill(0.0);
    for (j, &xj) in x.iter().enumerate() {
        for ((a, b), (&r, &i)) in ur
            .iter_mut()
            .zip(ui.iter_mut())
            .zip(wr[j * m..(j + 1) * m].iter().zip(&wi[j * m..(j + 1) * m]))
        {
            *a += r * xj;
            *b += i * xj;
        }
    }
}
