use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::gemm;
use crate::models::{Forward, ParamBundle, RecurrentCell, RecurrentCellSpec};
use crate::rng::RngStream;
use crate::stochastic::{sample_wss_sequence, AutocorrelationModel, SequenceBatch};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    LayerNorm,
}

/// Pointwise nonlinearity after the recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// 0.5 x (1 + tanh(√(2/π)(x + 0.044715 x³))).
    #[default]
    GeluTanh,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSpec {
    pub norm: NormKind,
    pub recurrent: RecurrentCellSpec,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    /// Output width of the gated linear unit; equals `hidden` so the skip
    /// connection type-checks.
    pub glu_width: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepNetSpec {
    /// Embedding dimension seen by the encoder and produced by the decoder.
    pub d_embed: usize,
    pub hidden: usize,
    pub blocks: Vec<BlockSpec>,
}

/// Recurrent layer families compared by the signal-propagation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigpropCell {
    /// Complex diagonal, no input normalization.
    Crnn,
    Lru,
    Lstm,
}

impl SigpropCell {
    pub const ALL: [SigpropCell; 3] = [SigpropCell::Crnn, SigpropCell::Lru, SigpropCell::Lstm];

    pub fn name(&self) -> &'static str {
        match self {
            SigpropCell::Crnn => "crnn",
            SigpropCell::Lru => "lru",
            SigpropCell::Lstm => "lstm",
        }
    }

    /// Cell spec at memory level ν: diagonal magnitudes in [ν, (1 + ν)/2]
    /// with angles up to π, or chrono time constants in [1/(1−ν), 2/(1−ν)].
    pub fn spec(&self, hidden: usize, nu: f64) -> RecurrentCellSpec {
        let pi = std::f64::consts::PI;
        match self {
            SigpropCell::Crnn | SigpropCell::Lru => {
                let mut spec = if *self == SigpropCell::Crnn {
                    RecurrentCellSpec::complex_diagonal(hidden, nu, pi)
                } else {
                    RecurrentCellSpec::lru(hidden, nu, pi)
                };
                if let RecurrentCellSpec::ComplexDiagonal { nu_max, .. } = &mut spec {
                    *nu_max = 0.5 * (1.0 + nu);
                }
                spec
            }
            SigpropCell::Lstm => RecurrentCellSpec::Lstm { hidden, nu },
        }
    }
}

impl DeepNetSpec {
    /// `depth` identical blocks of `cell` at memory level ν.
    pub fn uniform(cell: SigpropCell, nu: f64, d_embed: usize, hidden: usize, depth: usize, norm: NormKind) -> Self {
        Self {
            d_embed,
            hidden,
            blocks: (0..depth)
                .map(|_| BlockSpec {
                    norm,
                    recurrent: cell.spec(hidden, nu),
                    nonlinearity: Nonlinearity::GeluTanh,
                    glu_width: hidden,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.hidden == 0 || self.d_embed == 0 {
            return Err(Error::ParameterDomain(
                "network needs at least one block and positive widths".into(),
            ));
        }
        for (l, b) in self.blocks.iter().enumerate() {
            if b.glu_width != self.hidden {
                return Err(Error::ParameterDomain(format!(
                    "block {l}: GLU width {} must equal hidden {} for the skip connection",
                    b.glu_width, self.hidden
                )));
            }
            if b.recurrent.hidden() == 0 {
                return Err(Error::ParameterDomain(format!(
                    "block {l}: recurrent width must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Initializes every layer from `stream`; block l uses child l + 1.
    pub fn build(&self, stream: &RngStream) -> Result<DeepNet> {
        self.validate()?;
        let (e, h) = (self.d_embed, self.hidden);
        let mut rng = stream.child(0).rng();
        let enc_std = 1.0 / (e as f64).sqrt();
        let h_std = 1.0 / (h as f64).sqrt();
        let encoder = (0..h * e).map(|_| enc_std * rng.normal()).collect();
        let decoder = (0..e * h).map(|_| h_std * rng.normal()).collect();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (l, spec) in self.blocks.iter().enumerate() {
            let s = stream.child(l as u64 + 1);
            let cell = spec.recurrent.build(h, h, &s.child(0))?;
            let mut w = s.child(1).rng();
            blocks.push(Block {
                norm: spec.norm,
                nonlinearity: spec.nonlinearity,
                ln1: LayerNorm::new(h),
                ln2: LayerNorm::new(h),
                cell,
                w1: (0..h * h).map(|_| h_std * w.normal()).collect(),
                b1: vec![0.0; h],
                w2: (0..h * h).map(|_| h_std * w.normal()).collect(),
                b2: vec![0.0; h],
            });
        }
        Ok(DeepNet {
            d_embed: e,
            hidden: h,
            encoder,
            blocks,
            decoder,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn new(h: usize) -> Self {
        Self {
            gain: vec![1.0; h],
            bias: vec![0.0; h],
        }
    }

    /// Returns the output and the normalized input with each row's 1/σ.
    fn forward(&self, x: &[f64], h: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let rows = x.len() / h;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * h..(r + 1) * h];
            let mu = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / h as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv[r] = is;
            for k in 0..h {
                let n = (row[k] - mu) * is;
                xhat[r * h + k] = n;
                y[r * h + k] = self.gain[k] * n + self.bias[k];
            }
        }
        (y, xhat, inv)
    }

    /// Returns (dx, dgain, dbias).
    fn backward(&self, dy: &[f64], xhat: &[f64], inv: &[f64], h: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let rows = dy.len() / h;
        let mut dx = vec![0.0; dy.len()];
        let mut dg = vec![0.0; h];
        let mut db = vec![0.0; h];
        let mut dxhat = vec![0.0; h];
        for r in 0..rows {
            let (dyr, xr) = (&dy[r * h..(r + 1) * h], &xhat[r * h..(r + 1) * h]);
            for k in 0..h {
                dg[k] += dyr[k] * xr[k];
                db[k] += dyr[k];
                dxhat[k] = dyr[k] * self.gain[k];
            }
            let m1 = dxhat.iter().sum::<f64>() / h as f64;
            let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / h as f64;
            for k in 0..h {
                dx[r * h + k] = inv[r] * (dxhat[k] - m1 - xr[k] * m2);
            }
        }
        (dx, dg, db)
    }
}

fn gelu(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let t = (s * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub norm: NormKind,
    pub nonlinearity: Nonlinearity,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub cell: RecurrentCell,
    /// GLU value and gate maps, H × H.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct BlockCache {
    ln1: Option<(Vec<f64>, Vec<f64>)>,
    u: SequenceBatch,
    fwd: Forward,
    r: Vec<f64>,
    ln2: Option<(Vec<f64>, Vec<f64>)>,
    v: Vec<f64>,
    p: Vec<f64>,
    sq: Vec<f64>,
}

impl Block {
    fn forward(&self, z: &[f64], count: usize, length: usize, h: usize) -> Result<(Vec<f64>, BlockCache)> {
        let rows = count * length;
        let (u, ln1) = match self.norm {
            NormKind::None => (z.to_vec(), None),
            NormKind::LayerNorm => {
                let (y, xhat, inv) = self.ln1.forward(z, h);
                (y, Some((xhat, inv)))
            }
        };
        let u = SequenceBatch::from_data(count, length, h, u)?;
        let fwd = self.cell.forward(&u)?;
        let r = fwd.outputs.clone();
        let a: Vec<f64> = r.iter().map(|&v| gelu(v)).collect();
        let (v, ln2) = match self.norm {
            NormKind::None => (a, None),
            NormKind::LayerNorm => {
                let (y, xhat, inv) = self.ln2.forward(&a, h);
                (y, Some((xhat, inv)))
            }
        };
        let mut p = vec![0.0; rows * h];
        let mut q = vec![0.0; rows * h];
        gemm(1.0, &v, &self.w1, 0.0, &mut p, rows, h, h, false, true);
        gemm(1.0, &v, &self.w2, 0.0, &mut q, rows, h, h, false, true);
        let mut out = z.to_vec();
        let mut sq = vec![0.0; rows * h];
        for i in 0..rows * h {
            let k = i % h;
            p[i] += self.b1[k];
            sq[i] = sigmoid(q[i] + self.b2[k]);
            out[i] += p[i] * sq[i];
        }
        Ok((
            out,
            BlockCache {
                ln1,
                u,
                fwd,
                r,
                ln2,
                v,
                p,
                sq,
            },
        ))
    }

    /// Returns dL/dz and the block's gradients, cell groups first.
    fn backward(&self, dout: &[f64], cache: &BlockCache, h: usize) -> Result<(Vec<f64>, NamedGrads)> {
        let rows = dout.len() / h;
        let mut dp = vec![0.0; rows * h];
        let mut dq = vec![0.0; rows * h];
        for i in 0..rows * h {
            let s = cache.sq[i];
            dp[i] = dout[i] * s;
            dq[i] = dout[i] * cache.p[i] * s * (1.0 - s);
        }
        let mut dw1 = vec![0.0; h * h];
        let mut dw2 = vec![0.0; h * h];
        gemm(1.0, &dp, &cache.v, 0.0, &mut dw1, h, rows, h, true, false);
        gemm(1.0, &dq, &cache.v, 0.0, &mut dw2, h, rows, h, true, false);
        let col_sum = |m: &[f64]| -> Vec<f64> {
            let mut s = vec![0.0; h];
            for row in m.chunks_exact(h) {
                s.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            s
        };
        let (db1, db2) = (col_sum(&dp), col_sum(&dq));
        let mut dv = vec![0.0; rows * h];
        gemm(1.0, &dp, &self.w1, 0.0, &mut dv, rows, h, h, false, false);
        gemm(1.0, &dq, &self.w2, 1.0, &mut dv, rows, h, h, false, false);
        let mut groups: NamedGrads = Vec::new();
        let mut ln_groups = Vec::new();
        let da = match &cache.ln2 {
            None => dv,
            Some((xhat, inv)) => {
                let (dx, dg, db) = self.ln2.backward(&dv, xhat, inv, h);
                ln_groups.push(("ln2.gain".to_string(), dg));
                ln_groups.push(("ln2.bias".to_string(), db));
                dx
            }
        };
        let dr: Vec<f64> = da.iter().zip(&cache.r).map(|(d, &r)| d * gelu_derivative(r)).collect();
        let back = self.cell.backward(&cache.u, &cache.fwd, &dr)?;
        for g in back.grads.groups {
            groups.push((g.label, g.values));
        }
        let dz_cell = match &cache.ln1 {
            None => back.input_grad,
            Some((xhat, inv)) => {
                let (dx, dg, db) = self.ln1.backward(&back.input_grad, xhat, inv, h);
                ln_groups.push(("ln1.gain".to_string(), dg));
                ln_groups.push(("ln1.bias".to_string(), db));
                dx
            }
        };
        groups.push(("glu.w1".into(), dw1));
        groups.push(("glu.b1".into(), db1));
        groups.push(("glu.w2".into(), dw2));
        groups.push(("glu.b2".into(), db2));
        groups.extend(ln_groups);
        let dz = dout.iter().zip(&dz_cell).map(|(a, b)| a + b).collect();
        Ok((dz, groups))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepNet {
    pub d_embed: usize,
    pub hidden: usize,
    /// H × d_embed.
    pub encoder: Vec<f64>,
    pub blocks: Vec<Block>,
    /// d_embed × H.
    pub decoder: Vec<f64>,
}

/// Gradients of one block, labeled by parameter group.
pub type NamedGrads = Vec<(String, Vec<f64>)>;

/// Per-layer quantities of one forward/backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassStats {
    pub loss: f64,
    /// Mean |h|² of each block's recurrent state.
    pub hidden_mean_square: Vec<f64>,
    /// Gradient groups of each block, in block order.
    pub block_grads: Vec<NamedGrads>,
    pub encoder_grad: Vec<f64>,
    pub decoder_grad: Vec<f64>,
}

impl DeepNet {
    /// Next-token loss ½|x̂_t − x_{t+1}|² averaged over t < T − 1 and
    /// sequences, with gradients of every parameter.
    pub fn loss_and_grads(&self, x: &SequenceBatch) -> Result<PassStats> {
        check_dim(self.d_embed, x.dim, "embedding dimension")?;
        if x.length < 2 {
            return Err(Error::ParameterDomain(
                "next-token loss needs sequences of length >= 2".into(),
            ));
        }
        let (e, h) = (self.d_embed, self.hidden);
        let (count, length) = (x.count, x.length);
        let rows = count * length;
        let mut z = vec![0.0; rows * h];
        gemm(1.0, &x.data, &self.encoder, 0.0, &mut z, rows, e, h, false, true);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut inputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(&z, count, length, h)?;
            inputs.push(std::mem::replace(&mut z, next));
            caches.push(cache);
        }
        let mut pred = vec![0.0; rows * e];
        gemm(1.0, &z, &self.decoder, 0.0, &mut pred, rows, h, e, false, true);
        let n = (count * (length - 1)) as f64;
        let mut loss = 0.0;
        let mut dpred = vec![0.0; rows * e];
        for s in 0..count {
            for t in 0..length - 1 {
                let row = s * length + t;
                let target = x.step(s, t + 1);
                for k in 0..e {
                    let d = pred[row * e + k] - target[k];
                    loss += 0.5 * d * d;
                    dpred[row * e + k] = d / n;
                }
            }
        }
        let mut decoder_grad = vec![0.0; e * h];
        gemm(1.0, &dpred, &z, 0.0, &mut decoder_grad, e, rows, h, true, false);
        let mut dz = vec![0.0; rows * h];
        gemm(1.0, &dpred, &self.decoder, 0.0, &mut dz, rows, e, h, false, false);
        let mut block_grads = vec![Vec::new(); self.blocks.len()];
        for l in (0..self.blocks.len()).rev() {
            let (next, groups) = self.blocks[l].backward(&dz, &caches[l], h)?;
            dz = next;
            block_grads[l] = groups;
        }
        let mut encoder_grad = vec![0.0; h * e];
        gemm(1.0, &dz, &x.data, 0.0, &mut encoder_grad, h, rows, e, true, false);
        Ok(PassStats {
            loss: loss / n,
            hidden_mean_square: caches.iter().map(|c| c.fwd.states.mean_square()).collect(),
            block_grads,
            encoder_grad,
            decoder_grad,
        })
    }

    /// Every parameter as named groups, for finite-difference checks.
    pub fn params(&self) -> ParamBundle {
        use crate::models::ParamGroup;
        let (e, h) = (self.d_embed, self.hidden);
        let mut groups = vec![ParamGroup::new("encoder", vec![h, e], self.encoder.clone())];
        for (l, b) in self.blocks.iter().enumerate() {
            for g in b.cell.params().groups {
                groups.push(ParamGroup::new(format!("block{l}.{}", g.label), g.shape, g.values));
            }
            groups.push(ParamGroup::new(format!("block{l}.glu.w1"), vec![h, h], b.w1.clone()));
            groups.push(ParamGroup::new(format!("block{l}.glu.b1"), vec![h], b.b1.clone()));
            groups.push(ParamGroup::new(format!("block{l}.glu.w2"), vec![h, h], b.w2.clone()));
            groups.push(ParamGroup::new(format!("block{l}.glu.b2"), vec![h], b.b2.clone()));
            if b.norm == NormKind::LayerNorm {
                groups.push(ParamGroup::new(
                    format!("block{l}.ln2.gain"),
                    vec![h],
                    b.ln2.gain.clone(),
                ));
                groups.push(ParamGroup::new(
                    format!("block{l}.ln2.bias"),
                    vec![h],
                    b.ln2.bias.clone(),
                ));
                groups.push(ParamGroup::new(
                    format!("block{l}.ln1.gain"),
                    vec![h],
                    b.ln1.gain.clone(),
                ));
                groups.push(ParamGroup::new(
                    format!("block{l}.ln1.bias"),
                    vec![h],
                    b.ln1.bias.clone(),
                ));
            }
        }
        groups.push(ParamGroup::new("decoder", vec![e, h], self.decoder.clone()));
        ParamBundle::new(groups)
    }

    pub fn set_params(&mut self, p: &ParamBundle) -> Result<()> {
        check_dim(self.params().len(), p.len(), "network parameters")?;
        self.encoder = p.values("encoder")?.to_vec();
        self.decoder = p.values("decoder")?.to_vec();
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let mut cell = b.cell.params();
            for g in cell.groups.iter_mut() {
                g.values = p.values(&format!("block{l}.{}", g.label))?.to_vec();
            }
            b.cell.set_params(&cell)?;
            b.w1 = p.values(&format!("block{l}.glu.w1"))?.to_vec();
            b.b1 = p.values(&format!("block{l}.glu.b1"))?.to_vec();
            b.w2 = p.values(&format!("block{l}.glu.w2"))?.to_vec();
            b.b2 = p.values(&format!("block{l}.glu.b2"))?.to_vec();
            if b.norm == NormKind::LayerNorm {
                b.ln1.gain = p.values(&format!("block{l}.ln1.gain"))?.to_vec();
                b.ln1.bias = p.values(&format!("block{l}.ln1.bias"))?.to_vec();
                b.ln2.gain = p.values(&format!("block{l}.ln2.gain"))?.to_vec();
                b.ln2.bias = p.values(&format!("block{l}.ln2.bias"))?.to_vec();
            }
        }
        Ok(())
    }

    /// Gradients flattened in the order of [`DeepNet::params`].
    pub fn flat_grads(&self, stats: &PassStats) -> Vec<f64> {
        let mut out = stats.encoder_grad.clone();
        for (l, b) in self.blocks.iter().enumerate() {
            let groups = &stats.block_grads[l];
            let find = |name: &str| {
                groups
                    .iter()
                    .find(|(g, _)| g == name)
                    .map(|(_, v)| v.clone())
                    .unwrap_or_default()
            };
            for g in b.cell.params().groups {
                out.extend(find(&g.label));
            }
            for name in ["glu.w1", "glu.b1", "glu.w2", "glu.b2"] {
                out.extend(find(name));
            }
            if b.norm == NormKind::LayerNorm {
                for name in ["ln2.gain", "ln2.bias", "ln1.gain", "ln1.bias"] {
                    out.extend(find(name));
                }
            }
        }
        out.extend_from_slice(&stats.decoder_grad);
        out
    }
}

/// Synthetic embedding data for the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigpropData {
    pub count: usize,
    pub length: usize,
    pub dim: usize,
    /// AR(1) coefficient of each coordinate; 0 for white noise.
    #[serde(default)]
    pub rho: f64,
}

impl Default for SigpropData {
    fn default() -> Self {
        Self {
            count: 8,
            length: 512,
            dim: 64,
            rho: 0.0,
        }
    }
}

impl SigpropData {
    pub fn sample(&self, stream: &RngStream) -> Result<SequenceBatch> {
        let model = if self.rho == 0.0 {
            AutocorrelationModel::Iid
        } else {
            AutocorrelationModel::from_rho(self.rho)?
        };
        sample_wss_sequence(&model, self.length, self.count, self.dim, stream)
    }
}

/// One row of the study: a hidden-state statistic (`group` = "h") or the
/// mean-squared gradient of a parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigpropRow {
    pub cell: String,
    pub nu: f64,
    /// 1-based block index; 0 for whole-network rows.
    pub layer: usize,
    pub group: String,
    pub mean_square: f64,
    pub finite: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigpropConfig {
    pub cell: SigpropCell,
    pub hidden: usize,
    pub depth: usize,
    pub norm: NormKind,
    /// Sequences per gradient evaluation.
    pub batch_size: usize,
    pub seed: u64,
}

impl SigpropConfig {
    pub fn new(cell: SigpropCell) -> Self {
        Self {
            cell,
            hidden: 64,
            depth: 4,
            norm: NormKind::None,
            batch_size: 8,
            seed: 0,
        }
    }
}

fn mean_square(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64
}

/// Mean-squared hidden states and gradients at initialization for every ν.
/// The network for each ν is drawn from the same stream so that only ν
/// changes across the grid. Statistics are averaged over batches of
/// `cfg.batch_size` sequences; non-finite values are reported, not raised.
pub fn sigprop_at_init(
    cfg: &SigpropConfig,
    data: &SequenceBatch,
    nu_grid: &[f64],
    jobs: usize,
) -> Result<Vec<SigpropRow>> {
    if nu_grid.is_empty() {
        return Err(Error::ParameterDomain("nu grid must be nonempty".into()));
    }
    if cfg.batch_size == 0 || data.count < cfg.batch_size {
        return Err(Error::ParameterDomain(format!(
            "need at least one batch of {} sequences, got {}",
            cfg.batch_size, data.count
        )));
    }
    let batches = data.count / cfg.batch_size;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let per_nu: Vec<Result<Vec<SigpropRow>>> = pool.install(|| {
        nu_grid
            .par_iter()
            .map(|&nu| {
                let spec = DeepNetSpec::uniform(cfg.cell, nu, data.dim, cfg.hidden, cfg.depth, cfg.norm);
                let net = spec.build(&RngStream::new(cfg.seed).child(1))?;
                let mut hidden = vec![0.0; cfg.depth];
                let mut groups: Vec<Vec<(String, f64, usize)>> = vec![Vec::new(); cfg.depth];
                let mut total = 0.0;
                for b in 0..batches {
                    let x = data.slice_sequences(b * cfg.batch_size, cfg.batch_size);
                    let stats = net.loss_and_grads(&x)?;
                    for l in 0..cfg.depth {
                        hidden[l] += stats.hidden_mean_square[l] / batches as f64;
                        if b == 0 {
                            groups[l] = stats.block_grads[l]
                                .iter()
                                .map(|(n, v)| (n.clone(), 0.0, v.len()))
                                .collect();
                        }
                        for (slot, (_, v)) in groups[l].iter_mut().zip(&stats.block_grads[l]) {
                            slot.1 += mean_square(v) / batches as f64;
                        }
                    }
                    let flat = net.flat_grads(&stats);
                    total += mean_square(&flat) / batches as f64;
                }
                let row = |layer: usize, group: &str, v: f64| SigpropRow {
                    cell: cfg.cell.name().into(),
                    nu,
                    layer,
                    group: group.into(),
                    mean_square: v,
                    finite: v.is_finite(),
                };
                let mut rows = Vec::new();
                for l in 0..cfg.depth {
                    rows.push(row(l + 1, "h", hidden[l]));
                    let cell_groups: Vec<&(String, f64, usize)> = groups[l]
                        .iter()
                        .filter(|(n, _, _)| !n.starts_with("glu.") && !n.starts_with("ln"))
                        .collect();
                    for (name, v, _) in &groups[l] {
                        rows.push(row(l + 1, name, *v));
                    }
                    let (num, den) = cell_groups
                        .iter()
                        .fold((0.0, 0usize), |(a, c), (_, v, n)| (a + v * *n as f64, c + n));
                    rows.push(row(l + 1, "cell_total", num / den.max(1) as f64));
                }
                // network-wide groups pool every block's parameters of that kind
                let mut pooled: Vec<(String, f64, usize)> = Vec::new();
                for (name, v, n) in groups.iter().flatten() {
                    match pooled.iter_mut().find(|(p, _, _)| p == name) {
                        Some(slot) => {
                            slot.1 += v * *n as f64;
                            slot.2 += n;
                        }
                        None => pooled.push((name.clone(), v * *n as f64, *n)),
                    }
                }
                for (name, sum, n) in pooled {
                    rows.push(row(0, &name, sum / n.max(1) as f64));
                }
                rows.push(row(0, "total", total));
                Ok(rows)
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in per_nu {
        out.extend(r?);
    }
    Ok(out)
}
