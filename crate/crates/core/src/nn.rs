//! Dense matrices and the layer zoo (linear, layer norm, batch norm,
//! multi-head attention, MLP blocks) with hand-written backward passes.
//!
//! All math is f64. Forward passes are pure: they return an output plus a
//! context struct holding whatever the backward pass needs, so the same
//! parameters can run several forwards (clean and mixed branches) before
//! gradients are accumulated. `backward` methods accumulate into the
//! owning layer's `Param::g` buffers and return the gradient w.r.t. the
//! layer input.

// index loops here walk rows of two matrices at once
#![allow(clippy::needless_range_loop)]

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec size mismatch");
        Mat { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat { rows, cols, data: vec![value; rows * cols] }
    }

    /// Uniform init on [-bound, bound].
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// self[m,k] * rhs[k,n] -> [m,n]
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul inner dims");
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let rrow = &rhs.data[p * n..(p + 1) * n];
                for (o, r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        out
    }

    /// self[m,k] * rhs[n,k]^T -> [m,n]
    pub fn matmul_nt(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.cols, "matmul_nt inner dims");
        let (m, k, n) = (self.rows, self.cols, rhs.rows);
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                let brow = &rhs.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                orow[j] = acc;
            }
        }
        out
    }

    /// self[k,m]^T * rhs[k,n] -> [m,n]
    pub fn matmul_tn(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "matmul_tn inner dims");
        let (k, m, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Mat::zeros(m, n);
        for p in 0..k {
            let arow = &self.data[p * m..(p + 1) * m];
            let brow = &rhs.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = arow[i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_inplace(&mut self, other: &Mat) {
        assert_eq!(self.data.len(), other.data.len(), "add_inplace size");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_inplace(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor: value plus accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub v: Mat,
    pub g: Mat,
}

impl Param {
    pub fn new(v: Mat) -> Self {
        let g = Mat::zeros(v.rows, v.cols);
        Param { v, g }
    }

    pub fn zero_grad(&mut self) {
        self.g.data.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Numerically stable in-place softmax over a slice.
pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const GELU_C: f64 = 0.044715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let s = sqrt_2_over_pi();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let s = sqrt_2_over_pi();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

/// y = x * W^T + b with W stored [out, in].
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            w: Param::new(Mat::uniform(out_dim, in_dim, bound, rng)),
            b: Param::new(Mat::zeros(1, out_dim)),
        }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul_nt(&self.w.v);
        for r in 0..y.rows {
            let row = y.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b.v.data) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates dW, db; returns dx.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        self.w.g.add_inplace(&dy.matmul_tn(x));
        for r in 0..dy.rows {
            let row = dy.row(r);
            for (g, d) in self.b.g.data.iter_mut().zip(row) {
                *g += d;
            }
        }
        dy.matmul(&self.w.v)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

pub struct LayerNormCtx {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Mat::filled(1, dim, 1.0)),
            beta: Param::new(Mat::zeros(1, dim)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, LayerNormCtx) {
        let d = x.cols;
        let mut xhat = Mat::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        let mut y = Mat::zeros(x.rows, d);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            let yr = y.row_mut(r);
            for c in 0..d {
                xh[c] = (row[c] - mean) * inv;
                yr[c] = self.gamma.v.data[c] * xh[c] + self.beta.v.data[c];
            }
        }
        (y, LayerNormCtx { xhat, inv_std })
    }

    pub fn backward(&mut self, ctx: &LayerNormCtx, dy: &Mat) -> Mat {
        let d = dy.cols;
        let mut dx = Mat::zeros(dy.rows, d);
        for r in 0..dy.rows {
            let dyr = dy.row(r);
            let xh = ctx.xhat.row(r);
            let inv = ctx.inv_std[r];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for c in 0..d {
                let dxhat = dyr[c] * self.gamma.v.data[c];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh[c];
                self.gamma.g.data[c] += dyr[c] * xh[c];
                self.beta.g.data[c] += dyr[c];
            }
            let dxr = dx.row_mut(r);
            let n = d as f64;
            for c in 0..d {
                let dxhat = dyr[c] * self.gamma.v.data[c];
                dxr[c] = inv / n * (n * dxhat - sum_dxhat - xh[c] * sum_dxhat_xhat);
            }
        }
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Batch normalization over the batch dimension of a [B, d] matrix.
///
/// `forward_train` is pure; running statistics are folded in explicitly via
/// `update_running` after the step that actually trains.
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCtx {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(dim: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(Mat::filled(1, dim, 1.0)),
            beta: Param::new(Mat::zeros(1, dim)),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward_train(&self, x: &Mat) -> Result<(Mat, BatchNormCtx)> {
        let (b, d) = (x.rows, x.cols);
        if b < 2 {
            return Err(Error::Data(
                "batch normalization: batch statistics undefined for batch of size 1".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..b {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= b as f64;
        }
        for r in 0..b {
            let row = x.row(r);
            for c in 0..d {
                let dlt = row[c] - mean[c];
                var[c] += dlt * dlt;
            }
        }
        for v in &mut var {
            *v /= b as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Mat::zeros(b, d);
        let mut y = Mat::zeros(b, d);
        for r in 0..b {
            let row = x.row(r);
            let xh = xhat.row_mut(r);
            let yr = y.row_mut(r);
            for c in 0..d {
                xh[c] = (row[c] - mean[c]) * inv_std[c];
                yr[c] = self.gamma.v.data[c] * xh[c] + self.beta.v.data[c];
            }
        }
        Ok((y, BatchNormCtx { xhat, inv_std, batch_mean: mean, batch_var: var }))
    }

    pub fn forward_eval(&self, x: &Mat) -> Mat {
        let (b, d) = (x.rows, x.cols);
        let mut y = Mat::zeros(b, d);
        for r in 0..b {
            let row = x.row(r);
            let yr = y.row_mut(r);
            for c in 0..d {
                let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
                yr[c] = self.gamma.v.data[c] * (row[c] - self.running_mean[c]) * inv
                    + self.beta.v.data[c];
            }
        }
        y
    }

    /// Fold batch statistics into the running estimates (unbiased variance).
    pub fn update_running(&mut self, ctx: &BatchNormCtx, batch_size: usize) {
        let unbias = batch_size as f64 / (batch_size as f64 - 1.0);
        for c in 0..self.running_mean.len() {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * ctx.batch_mean[c];
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c]
                + self.momentum * ctx.batch_var[c] * unbias;
        }
    }

    pub fn backward(&mut self, ctx: &BatchNormCtx, dy: &Mat) -> Mat {
        let (b, d) = (dy.rows, dy.cols);
        let n = b as f64;
        let mut dx = Mat::zeros(b, d);
        for c in 0..d {
            let gamma = self.gamma.v.data[c];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for r in 0..b {
                let dxhat = dy.at(r, c) * gamma;
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * ctx.xhat.at(r, c);
                self.gamma.g.data[c] += dy.at(r, c) * ctx.xhat.at(r, c);
                self.beta.g.data[c] += dy.at(r, c);
            }
            for r in 0..b {
                let dxhat = dy.at(r, c) * gamma;
                *dx.at_mut(r, c) = ctx.inv_std[c] / n
                    * (n * dxhat - sum_dxhat - ctx.xhat.at(r, c) * sum_dxhat_xhat);
            }
        }
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Multi-head self-attention over one sequence [N, d].
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

pub struct AttnCtx {
    pub x: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Per-head attention probabilities, each [N, N]; rows sum to 1.
    pub probs: Vec<Mat>,
    pub concat: Mat,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(d_model: usize, n_heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            wq: Linear::new(d_model, d_model, rng),
            wk: Linear::new(d_model, d_model, rng),
            wv: Linear::new(d_model, d_model, rng),
            wo: Linear::new(d_model, d_model, rng),
            n_heads,
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, AttnCtx) {
        let n = x.rows;
        let d = x.cols;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut concat = Mat::zeros(n, d);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let off = h * dh;
            let mut p = Mat::zeros(n, n);
            for i in 0..n {
                let qi = &q.row(i)[off..off + dh];
                let prow = p.row_mut(i);
                for j in 0..n {
                    let kj = &k.row(j)[off..off + dh];
                    let mut acc = 0.0;
                    for t in 0..dh {
                        acc += qi[t] * kj[t];
                    }
                    prow[j] = acc * scale;
                }
                softmax_inplace(prow);
            }
            for i in 0..n {
                let prow = p.row(i);
                let orow = &mut concat.row_mut(i)[off..off + dh];
                for j in 0..n {
                    let pj = prow[j];
                    if pj == 0.0 {
                        continue;
                    }
                    let vj = &v.row(j)[off..off + dh];
                    for (o, vv) in orow.iter_mut().zip(vj) {
                        *o += pj * vv;
                    }
                }
            }
            probs.push(p);
        }
        let y = self.wo.forward(&concat);
        (y, AttnCtx { x: x.clone(), q, k, v, probs, concat })
    }

    pub fn backward(&mut self, ctx: &AttnCtx, dy: &Mat) -> Mat {
        let n = dy.rows;
        let d = dy.cols;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dconcat = self.wo.backward(&ctx.concat, dy);
        let mut dq = Mat::zeros(n, d);
        let mut dk = Mat::zeros(n, d);
        let mut dv = Mat::zeros(n, d);
        for h in 0..self.n_heads {
            let off = h * dh;
            let p = &ctx.probs[h];
            // dP and dV
            let mut dp = Mat::zeros(n, n);
            for i in 0..n {
                let dorow = &dconcat.row(i)[off..off + dh];
                let prow = p.row(i);
                let dprow = dp.row_mut(i);
                for j in 0..n {
                    let vj = &ctx.v.row(j)[off..off + dh];
                    let mut acc = 0.0;
                    for t in 0..dh {
                        acc += dorow[t] * vj[t];
                    }
                    dprow[j] = acc;
                }
                for j in 0..n {
                    let pj = prow[j];
                    if pj == 0.0 {
                        continue;
                    }
                    let dvj = &mut dv.row_mut(j)[off..off + dh];
                    for t in 0..dh {
                        dvj[t] += pj * dorow[t];
                    }
                }
            }
            // softmax backward row-wise: ds = p o (dp - sum(p o dp))
            for i in 0..n {
                let prow = p.row(i);
                let dprow = dp.row_mut(i);
                let dot: f64 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                for (dp, p) in dprow.iter_mut().zip(prow) {
                    *dp = p * (*dp - dot);
                }
            }
            // dq, dk from scores = scale * q k^T
            for i in 0..n {
                let dqi = &mut dq.row_mut(i)[off..off + dh];
                for j in 0..n {
                    let s = dp.at(i, j) * scale;
                    if s == 0.0 {
                        continue;
                    }
                    let kj = &ctx.k.row(j)[off..off + dh];
                    for (d, k) in dqi.iter_mut().zip(kj) {
                        *d += s * k;
                    }
                }
            }
            for j in 0..n {
                let dkj = &mut dk.row_mut(j)[off..off + dh];
                for i in 0..n {
                    let s = dp.at(i, j) * scale;
                    if s == 0.0 {
                        continue;
                    }
                    let qi = &ctx.q.row(i)[off..off + dh];
                    for (d, q) in dkj.iter_mut().zip(qi) {
                        *d += s * q;
                    }
                }
            }
        }
        let mut dx = self.wq.backward(&ctx.x, &dq);
        dx.add_inplace(&self.wk.backward(&ctx.x, &dk));
        dx.add_inplace(&self.wv.backward(&ctx.x, &dv));
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.wq.visit(&format!("{prefix}.wq"), f);
        self.wk.visit(&format!("{prefix}.wk"), f);
        self.wv.visit(&format!("{prefix}.wv"), f);
        self.wo.visit(&format!("{prefix}.wo"), f);
    }
}

pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCtx {
    pub x: Mat,
    pub pre: Mat,
    pub act: Mat,
}

impl Mlp {
    pub fn new<R: Rng>(d_model: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp { fc1: Linear::new(d_model, hidden, rng), fc2: Linear::new(hidden, d_model, rng) }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, MlpCtx) {
        let pre = self.fc1.forward(x);
        let mut act = pre.clone();
        act.data.iter_mut().for_each(|v| *v = gelu(*v));
        let y = self.fc2.forward(&act);
        (y, MlpCtx { x: x.clone(), pre, act })
    }

    pub fn backward(&mut self, ctx: &MlpCtx, dy: &Mat) -> Mat {
        let mut dact = self.fc2.backward(&ctx.act, dy);
        for (d, p) in dact.data.iter_mut().zip(&ctx.pre.data) {
            *d *= gelu_grad(*p);
        }
        self.fc1.backward(&ctx.x, &dact)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }
}

/// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

pub struct BlockCtx {
    pub ln1: LayerNormCtx,
    pub attn: AttnCtx,
    pub ln2: LayerNormCtx,
    pub mlp: MlpCtx,
    pub drop_attn: Option<Mat>,
    pub drop_mlp: Option<Mat>,
}

impl Block {
    pub fn new<R: Rng>(d_model: usize, n_heads: usize, mlp_ratio: usize, rng: &mut R) -> Self {
        Block {
            ln1: LayerNorm::new(d_model),
            attn: MultiHeadAttention::new(d_model, n_heads, rng),
            ln2: LayerNorm::new(d_model),
            mlp: Mlp::new(d_model, d_model * mlp_ratio, rng),
        }
    }

    /// `dropout`: (rate, rng) applied to both sublayer outputs; pass rate 0
    /// (or None) for the deterministic path.
    pub fn forward(
        &self,
        x: &Mat,
        dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> (Mat, BlockCtx) {
        let (h1, ln1ctx) = self.ln1.forward(x);
        let (mut a, attnctx) = self.attn.forward(&h1);
        let mut drop_attn = None;
        let mut drop_mlp = None;
        let mut dropout = dropout;
        if let Some((rate, rng)) = dropout.as_mut() {
            if *rate > 0.0 {
                drop_attn = Some(apply_dropout(&mut a, *rate, &mut **rng));
            }
        }
        let mut x1 = x.clone();
        x1.add_inplace(&a);
        let (h2, ln2ctx) = self.ln2.forward(&x1);
        let (mut m, mlpctx) = self.mlp.forward(&h2);
        if let Some((rate, rng)) = dropout.as_mut() {
            if *rate > 0.0 {
                drop_mlp = Some(apply_dropout(&mut m, *rate, &mut **rng));
            }
        }
        let mut y = x1;
        y.add_inplace(&m);
        (y, BlockCtx { ln1: ln1ctx, attn: attnctx, ln2: ln2ctx, mlp: mlpctx, drop_attn, drop_mlp })
    }

    pub fn backward(&mut self, ctx: &BlockCtx, dy: &Mat) -> Mat {
        let mut dm = dy.clone();
        if let Some(mask) = &ctx.drop_mlp {
            for (d, m) in dm.data.iter_mut().zip(&mask.data) {
                *d *= m;
            }
        }
        let dh2 = self.mlp.backward(&ctx.mlp, &dm);
        let mut dx1 = dy.clone();
        dx1.add_inplace(&self.ln2.backward(&ctx.ln2, &dh2));
        let mut da = dx1.clone();
        if let Some(mask) = &ctx.drop_attn {
            for (d, m) in da.data.iter_mut().zip(&mask.data) {
                *d *= m;
            }
        }
        let dh1 = self.attn.backward(&ctx.attn, &da);
        let mut dx = dx1;
        dx.add_inplace(&self.ln1.backward(&ctx.ln1, &dh1));
        dx
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.ln1.visit(&format!("{prefix}.ln1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.ln2.visit(&format!("{prefix}.ln2"), f);
        self.mlp.visit(&format!("{prefix}.mlp"), f);
    }
}

/// Inverted dropout; scales kept activations by 1/(1-rate) and returns the
/// multiplicative mask for the backward pass.
fn apply_dropout(x: &mut Mat, rate: f64, rng: &mut dyn rand::RngCore) -> Mat {
    let keep = 1.0 - rate;
    let mut mask = Mat::zeros(x.rows, x.cols);
    let r = rng;
    for (v, m) in x.data.iter_mut().zip(mask.data.iter_mut()) {
        if r.gen_range(0.0..1.0) < keep {
            *m = 1.0 / keep;
            *v *= *m;
        } else {
            *m = 0.0;
            *v = 0.0;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn matmul_agrees_with_naive() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
        // A * B == (A * B^T^T): check the transposed kernels against it
        let bt = Mat::from_vec(2, 3, vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        assert_eq!(a.matmul_nt(&bt).data, c.data);
        let at = Mat::from_vec(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(at.matmul_tn(&b).data, c.data);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![1.0, 2.0, 3.0, -1.0];
        softmax_inplace(&mut row);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|v| *v > 0.0));
    }

    /// Central-difference gradient check for a layer wrapped in a scalar loss.
    fn check_linear_grads() -> (f64, f64) {
        let mut r = rng();
        let mut lin = Linear::new(3, 2, &mut r);
        let x = Mat::uniform(4, 3, 1.0, &mut r);
        // loss = sum of squares of output
        let loss = |lin: &Linear, x: &Mat| -> f64 {
            lin.forward(x).data.iter().map(|v| v * v).sum::<f64>()
        };
        let y = lin.forward(&x);
        let mut dy = y.clone();
        dy.scale_inplace(2.0);
        let dx = lin.backward(&x, &dy);

        let h = 1e-6;
        let mut max_rel_w = 0.0f64;
        for i in 0..lin.w.v.data.len() {
            let orig = lin.w.v.data[i];
            lin.w.v.data[i] = orig + h;
            let lp = loss(&lin, &x);
            lin.w.v.data[i] = orig - h;
            let lm = loss(&lin, &x);
            lin.w.v.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = lin.w.g.data[i];
            max_rel_w = max_rel_w.max((an - fd).abs() / fd.abs().max(1e-8));
        }
        let mut max_rel_x = 0.0f64;
        let mut xm = x.clone();
        for i in 0..xm.data.len() {
            let orig = xm.data[i];
            xm.data[i] = orig + h;
            let lp = loss(&lin, &xm);
            xm.data[i] = orig - h;
            let lm = loss(&lin, &xm);
            xm.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            max_rel_x = max_rel_x.max((dx.data[i] - fd).abs() / fd.abs().max(1e-8));
        }
        (max_rel_w, max_rel_x)
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let (w, x) = check_linear_grads();
        assert!(w < 1e-6, "dW rel err {w}");
        assert!(x < 1e-6, "dx rel err {x}");
    }

    #[test]
    fn layernorm_gradients_match_finite_differences() {
        let mut r = rng();
        let mut ln = LayerNorm::new(5);
        ln.gamma.v = Mat::uniform(1, 5, 1.0, &mut r);
        ln.beta.v = Mat::uniform(1, 5, 1.0, &mut r);
        let x = Mat::uniform(3, 5, 1.0, &mut r);
        let loss = |ln: &LayerNorm, x: &Mat| -> f64 {
            ln.forward(x).0.data.iter().enumerate().map(|(i, v)| v * v * (i % 3) as f64).sum()
        };
        let (y, ctx) = ln.forward(&x);
        let mut dy = Mat::zeros(3, 5);
        for (i, (d, v)) in dy.data.iter_mut().zip(&y.data).enumerate() {
            *d = 2.0 * v * (i % 3) as f64;
        }
        let dx = ln.backward(&ctx, &dy);
        let h = 1e-6;
        let mut xm = x.clone();
        for i in 0..xm.data.len() {
            let orig = xm.data[i];
            xm.data[i] = orig + h;
            let lp = loss(&ln, &xm);
            xm.data[i] = orig - h;
            let lm = loss(&ln, &xm);
            xm.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (dx.data[i] - fd).abs() / fd.abs().max(1e-6) < 1e-5,
                "layernorm dx[{i}]: analytic {} vs fd {fd}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn batchnorm_train_rejects_batch_of_one() {
        let bn = BatchNorm1d::new(4);
        let x = Mat::zeros(1, 4);
        assert!(bn.forward_train(&x).is_err());
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let mut r = rng();
        let mut bn = BatchNorm1d::new(4);
        bn.gamma.v = Mat::uniform(1, 4, 1.0, &mut r);
        bn.beta.v = Mat::uniform(1, 4, 1.0, &mut r);
        let x = Mat::uniform(5, 4, 1.0, &mut r);
        let loss = |bn: &BatchNorm1d, x: &Mat| -> f64 {
            bn.forward_train(x).unwrap().0.data.iter().map(|v| v * v).sum()
        };
        let (y, ctx) = bn.forward_train(&x).unwrap();
        let mut dy = y.clone();
        dy.scale_inplace(2.0);
        let dx = bn.backward(&ctx, &dy);
        let h = 1e-5;
        let mut xm = x.clone();
        for i in 0..xm.data.len() {
            let orig = xm.data[i];
            xm.data[i] = orig + h;
            let lp = loss(&bn, &xm);
            xm.data[i] = orig - h;
            let lm = loss(&bn, &xm);
            xm.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (dx.data[i] - fd).abs() / fd.abs().max(1e-4) < 1e-4,
                "batchnorm dx[{i}]: analytic {} vs fd {fd}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn attention_block_gradient_check() {
        let mut r = rng();
        let mut block = Block::new(8, 2, 2, &mut r);
        let x = Mat::uniform(4, 8, 0.5, &mut r);
        let loss = |b: &Block, x: &Mat| -> f64 {
            b.forward(x, None).0.data.iter().map(|v| v * v).sum()
        };
        let (y, ctx) = block.forward(&x, None);
        let mut dy = y.clone();
        dy.scale_inplace(2.0);
        let dx = block.backward(&ctx, &dy);
        let h = 1e-5;
        let mut xm = x.clone();
        for i in 0..xm.data.len() {
            let orig = xm.data[i];
            xm.data[i] = orig + h;
            let lp = loss(&block, &xm);
            xm.data[i] = orig - h;
            let lm = loss(&block, &xm);
            xm.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (dx.data[i] - fd).abs() / fd.abs().max(1e-4) < 1e-4,
                "block dx[{i}]: analytic {} vs fd {fd}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8);
        }
    }
}
