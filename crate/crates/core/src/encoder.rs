//! Patchification, patch + positional embedding, a small pre-norm
//! transformer encoder with mean pooling, the two-layer projector and the
//! linear classifier. Class/distill tokens are omitted; the pooled output
//! goes through a final layer norm.

use rand::Rng;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::nn::{
    Block, BlockCtx, LayerNorm, LayerNormCtx, Linear, Mat, Param, BatchNorm1d, BatchNormCtx,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub patch_stride: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub pooling: Pooling,
    pub proj_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 16,
            patch_stride: 10,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            mlp_ratio: 4,
            pooling: Pooling::Mean,
            proj_dim: 64,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_stride == 0 || self.patch_stride > self.patch_size {
            return Err(Error::Config(format!(
                "patch_stride must lie in 1..=patch_size, got stride {} size {}",
                self.patch_stride, self.patch_size
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.mlp_ratio == 0 || self.proj_dim == 0 {
            return Err(Error::Config("mlp_ratio and proj_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Patch embeddings (positional terms already added) on a `(n_f, n_t)` grid.
#[derive(Clone, Debug)]
pub struct PatchSequence {
    /// `[N, d_model]`, patch j at row j = f * n_t + t.
    pub embeddings: Mat,
    pub grid: (usize, usize),
}

/// Pooled encoder output for one sample.
#[derive(Clone, Debug)]
pub struct Representation {
    pub z: Vec<f64>,
}

/// Flattened 16x16 windows of a spectrogram, row-major within each patch.
#[derive(Clone, Debug)]
pub struct RawPatches {
    /// `[N, patch_size^2]`
    pub patches: Mat,
    pub grid: (usize, usize),
}

/// Patch-grid dimensions produced by `patch_size`/`patch_stride` windows.
pub fn patch_grid(n_mels: usize, n_frames: usize, cfg: &EncoderConfig) -> Result<(usize, usize)> {
    if n_mels < cfg.patch_size || n_frames < cfg.patch_size {
        return Err(Error::Data(format!(
            "spectrogram {}x{} is smaller than one {}x{} patch",
            n_mels, n_frames, cfg.patch_size, cfg.patch_size
        )));
    }
    let n_f = (n_mels - cfg.patch_size) / cfg.patch_stride + 1;
    let n_t = (n_frames - cfg.patch_size) / cfg.patch_stride + 1;
    Ok((n_f, n_t))
}

/// Cut a spectrogram into overlapping patches. Patch (f, t) covers mel rows
/// `f*stride..f*stride+size` and frames `t*stride..t*stride+size`; its 256
/// values are flattened row-major.
pub fn patchify(spec: &Spectrogram, cfg: &EncoderConfig) -> Result<RawPatches> {
    let (n_f, n_t) = patch_grid(spec.n_mels, spec.n_frames, cfg)?;
    let ps = cfg.patch_size;
    let mut patches = Mat::zeros(n_f * n_t, ps * ps);
    for f in 0..n_f {
        for t in 0..n_t {
            let row = patches.row_mut(f * n_t + t);
            for dm in 0..ps {
                let mel = f * cfg.patch_stride + dm;
                for dt in 0..ps {
                    row[dm * ps + dt] = spec.at(mel, t * cfg.patch_stride + dt);
                }
            }
        }
    }
    Ok(RawPatches { patches, grid: (n_f, n_t) })
}

/// Projector h: affine -> batch norm -> ReLU -> affine.
pub struct Projector {
    pub fc1: Linear,
    pub bn: BatchNorm1d,
    pub fc2: Linear,
}

pub struct ProjectorCtx {
    pub x: Mat,
    pub bn: BatchNormCtx,
    pub bn_out: Mat,
    pub act: Mat,
    pub batch_size: usize,
}

impl Projector {
    pub fn new<R: Rng>(d_model: usize, proj_dim: usize, rng: &mut R) -> Self {
        Projector {
            fc1: Linear::new(d_model, d_model, rng),
            bn: BatchNorm1d::new(d_model),
            fc2: Linear::new(d_model, proj_dim, rng),
        }
    }

    /// Batch statistics; errors on batches of one.
    pub fn forward_train(&self, x: &Mat) -> Result<(Mat, ProjectorCtx)> {
        let pre = self.fc1.forward(x);
        let (bn_out, bn_ctx) = self.bn.forward_train(&pre)?;
        let mut act = bn_out.clone();
        act.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let y = self.fc2.forward(&act);
        Ok((y, ProjectorCtx { x: x.clone(), bn: bn_ctx, bn_out, act, batch_size: x.rows }))
    }

    /// Running statistics; deterministic.
    pub fn forward_eval(&self, x: &Mat) -> Mat {
        let pre = self.fc1.forward(x);
        let mut act = self.bn.forward_eval(&pre);
        act.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.fc2.forward(&act)
    }

    pub fn backward(&mut self, ctx: &ProjectorCtx, dy: &Mat) -> Mat {
        let mut dact = self.fc2.backward(&ctx.act, dy);
        for (d, pre) in dact.data.iter_mut().zip(&ctx.bn_out.data) {
            if *pre <= 0.0 {
                *d = 0.0;
            }
        }
        let dpre = self.bn.backward(&ctx.bn, &dact);
        self.fc1.backward(&ctx.x, &dpre)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.bn.visit(&format!("{prefix}.bn"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }
}

/// Everything trainable: patch embedding, positional table, encoder blocks,
/// final layer norm, projector and classifier head.
pub struct Model {
    pub cfg: EncoderConfig,
    pub grid: (usize, usize),
    pub patch_dim: usize,
    pub embed_w: Param,
    pub embed_b: Param,
    pub pos: Param,
    pub blocks: Vec<Block>,
    pub final_ln: LayerNorm,
    pub projector: Projector,
    pub classifier: Linear,
}

pub struct EncodeCtx {
    pub block_ctxs: Vec<BlockCtx>,
    pub final_ln: LayerNormCtx,
    pub n_patches: usize,
}

pub const N_CLASSES: usize = 4;

impl Model {
    /// Build a model for spectrograms of the given geometry. Weights use
    /// small-uniform init (+-1/sqrt(fan_in)).
    pub fn new<R: Rng>(
        cfg: &EncoderConfig,
        n_mels: usize,
        n_frames: usize,
        rng: &mut R,
    ) -> Result<Model> {
        cfg.validate()?;
        let grid = patch_grid(n_mels, n_frames, cfg)?;
        let n = grid.0 * grid.1;
        let patch_dim = cfg.patch_size * cfg.patch_size;
        let d = cfg.d_model;
        let bound_patch = 1.0 / (patch_dim as f64).sqrt();
        let bound_pos = 1.0 / (d as f64).sqrt();
        Ok(Model {
            cfg: cfg.clone(),
            grid,
            patch_dim,
            embed_w: Param::new(Mat::uniform(d, patch_dim, bound_patch, rng)),
            embed_b: Param::new(Mat::zeros(1, d)),
            pos: Param::new(Mat::uniform(n, d, bound_pos, rng)),
            blocks: (0..cfg.n_layers)
                .map(|_| Block::new(d, cfg.n_heads, cfg.mlp_ratio, rng))
                .collect(),
            final_ln: LayerNorm::new(d),
            projector: Projector::new(d, cfg.proj_dim, rng),
            classifier: Linear::new(d, N_CLASSES, rng),
        })
    }

    pub fn n_patches(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Shared affine map to d_model plus the learned positional embedding.
    pub fn embed(&self, raw: &RawPatches) -> Result<PatchSequence> {
        if raw.grid != self.grid {
            return Err(Error::Shape(format!(
                "embed: patch grid {:?} does not match model grid {:?}",
                raw.grid, self.grid
            )));
        }
        let mut e = raw.patches.matmul_nt(&self.embed_w.v);
        for r in 0..e.rows {
            let row = e.row_mut(r);
            let pos = self.pos.v.row(r);
            for c in 0..row.len() {
                row[c] += self.embed_b.v.data[c] + pos[c];
            }
        }
        Ok(PatchSequence { embeddings: e, grid: raw.grid })
    }

    /// Accumulate embedding gradients for one sample.
    pub fn embed_backward(&mut self, raw: &RawPatches, d_embed: &Mat) {
        self.embed_w.g.add_inplace(&d_embed.matmul_tn(&raw.patches));
        for r in 0..d_embed.rows {
            let row = d_embed.row(r);
            for (g, d) in self.embed_b.g.data.iter_mut().zip(row) {
                *g += d;
            }
            let pg = self.pos.g.row_mut(r);
            for (g, d) in pg.iter_mut().zip(row) {
                *g += d;
            }
        }
    }

    /// Encoder forward for one sample: pre-norm blocks, mean pooling, final
    /// layer norm. `dropout_rng` enables the configured dropout rate
    /// (training only); pass None for the deterministic path.
    pub fn encode(
        &self,
        seq: &PatchSequence,
        mut dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Representation, EncodeCtx)> {
        if seq.embeddings.rows != self.n_patches() || seq.embeddings.cols != self.cfg.d_model {
            return Err(Error::Shape(format!(
                "encode: sequence {}x{} does not match model ({} patches, d {})",
                seq.embeddings.rows,
                seq.embeddings.cols,
                self.n_patches(),
                self.cfg.d_model
            )));
        }
        let mut x = seq.embeddings.clone();
        let mut block_ctxs = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let drop = dropout_rng
                .as_mut()
                .filter(|_| self.cfg.dropout > 0.0)
                .map(|rng| (self.cfg.dropout, &mut **rng as &mut dyn rand::RngCore));
            let (y, ctx) = block.forward(&x, drop);
            if !y.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in block {i}")));
            }
            block_ctxs.push(ctx);
            x = y;
        }
        let n = x.rows as f64;
        let mut pooled = Mat::zeros(1, x.cols);
        for r in 0..x.rows {
            for (p, v) in pooled.data.iter_mut().zip(x.row(r)) {
                *p += v / n;
            }
        }
        let (z, ln_ctx) = self.final_ln.forward(&pooled);
        if !z.is_finite() {
            return Err(Error::Numeric("non-finite activation in final layer norm".into()));
        }
        Ok((
            Representation { z: z.data },
            EncodeCtx { block_ctxs, final_ln: ln_ctx, n_patches: x.rows },
        ))
    }

    /// Backward through pooling and the blocks; returns the gradient w.r.t.
    /// the embedded sequence.
    pub fn encode_backward(&mut self, ctx: &EncodeCtx, dz: &[f64]) -> Mat {
        let d = self.cfg.d_model;
        let dz_mat = Mat::from_vec(1, d, dz.to_vec());
        let dpooled = self.final_ln.backward(&ctx.final_ln, &dz_mat);
        let n = ctx.n_patches;
        let mut dx = Mat::zeros(n, d);
        for r in 0..n {
            let row = dx.row_mut(r);
            for (o, g) in row.iter_mut().zip(&dpooled.data) {
                *o = g / n as f64;
            }
        }
        for (block, bctx) in self.blocks.iter_mut().zip(&ctx.block_ctxs).rev() {
            dx = block.backward(bctx, &dx);
        }
        dx
    }

    /// Linear head over pooled representations: `[B, d] -> [B, 4]` logits.
    pub fn classify(&self, z: &Mat) -> Mat {
        self.classifier.forward(z)
    }

    /// Deterministic evaluation forward for one sample: embed, encode
    /// without dropout, classify.
    pub fn forward_eval(&self, raw: &RawPatches) -> Result<(Representation, [f64; N_CLASSES])> {
        let seq = self.embed(raw)?;
        let (rep, _) = self.encode(&seq, None)?;
        let logits = self.classifier.forward(&Mat::from_vec(1, rep.z.len(), rep.z.clone()));
        let mut out = [0.0; N_CLASSES];
        out.copy_from_slice(logits.row(0));
        Ok((rep, out))
    }

    /// Visit every trainable tensor in a stable order.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("embed.w", &mut self.embed_w);
        f("embed.b", &mut self.embed_b);
        f("pos", &mut self.pos);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit(&format!("blocks.{i}"), f);
        }
        self.final_ln.visit("final_ln", f);
        self.projector.visit("projector", f);
        self.classifier.visit("classifier", f);
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut Vec<f64>)) {
        f("projector.bn.running_mean", &mut self.projector.bn.running_mean);
        f("projector.bn.running_var", &mut self.projector.bn.running_var);
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |_, p| p.zero_grad());
    }

    /// Snapshot of parameter values in visitor order (for EMA shadows).
    pub fn param_snapshot(&mut self) -> Vec<Mat> {
        let mut out = Vec::new();
        self.for_each_param(&mut |_, p| out.push(p.v.clone()));
        out
    }

    pub fn load_param_snapshot(&mut self, values: &[Mat]) -> Result<()> {
        let mut i = 0;
        let mut err = None;
        self.for_each_param(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match values.get(i) {
                Some(v) if v.rows == p.v.rows && v.cols == p.v.cols => p.v = v.clone(),
                Some(v) => {
                    err = Some(Error::Shape(format!(
                        "param {name}: snapshot {}x{} vs model {}x{}",
                        v.rows, v.cols, p.v.rows, p.v.cols
                    )))
                }
                None => err = Some(Error::Shape("snapshot has too few tensors".into())),
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != values.len() {
            return Err(Error::Shape("snapshot has too many tensors".into()));
        }
        Ok(())
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, p| n += p.v.data.len());
        n
    }
}
