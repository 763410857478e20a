//! Training orchestration: Adam with cosine scheduling, parameter EMA,
//! SpecAugment / Patch-Mix wiring, deterministic multi-seed runs and
//! checkpoint-based evaluation.
//!
//! One training run is single-threaded over steps so that (config, seed,
//! dataset) fully determines every reported number; feature preparation,
//! evaluation and the per-seed runs fan out via `parallel::batch_map`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_patch_mix, draw_partners, make_mix_mask, sample_lambda, spec_augment, MixMode,
    MixOutcome,
};
use crate::checkpoint::{read_checkpoint, write_checkpoint, Payload};
use crate::config::Config;
use crate::dsp::{cycle_features, FbankExtractor, Spectrogram};
use crate::encoder::{patchify, Model, PatchSequence, RawPatches};
use crate::error::{Error, Result};
use crate::ingest::{extract_cycle, DatasetIndex, Split};
use crate::losses::{
    class_weights, mixed_ce_baseline_grad, patch_mix_contrastive_grad, total_loss,
    weighted_ce_grad, ClassWeights, LossConfig, LossKind,
};
use crate::metrics::{metrics_report, ConfusionCounts, MetricsReport, RunRecord};
use crate::nn::Mat;
use crate::parallel;

/// lr(step) = base * 0.5 * (1 + cos(pi * step / total)); no warmup.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    assert!(total_steps >= 1, "total_steps must be >= 1");
    assert!(step <= total_steps, "step {step} beyond total {total_steps}");
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}

/// shadow <- m * shadow + (1 - m) * live, per tensor.
pub fn ema_update(shadow: &mut [Mat], live: &[Mat], momentum: f64) -> Result<()> {
    if shadow.len() != live.len() {
        return Err(Error::Shape(format!(
            "EMA: {} shadow tensors vs {} live",
            shadow.len(),
            live.len()
        )));
    }
    for (s, l) in shadow.iter_mut().zip(live) {
        if s.rows != l.rows || s.cols != l.cols {
            return Err(Error::Shape(format!(
                "EMA: shadow {}x{} vs live {}x{}",
                s.rows, s.cols, l.rows, l.cols
            )));
        }
        for (sv, lv) in s.data.iter_mut().zip(&l.data) {
            *sv = momentum * *sv + (1.0 - momentum) * lv;
        }
    }
    Ok(())
}

/// Adam over the model's parameters in visitor order.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub step: u64,
}

impl Adam {
    pub fn new(model: &mut Model, beta1: f64, beta2: f64, eps: f64) -> Adam {
        let mut m = Vec::new();
        model.for_each_param(&mut |_, p| m.push(Mat::zeros(p.v.rows, p.v.cols)));
        let v = m.clone();
        Adam { beta1, beta2, eps, m, v, step: 0 }
    }

    pub fn step(&mut self, model: &mut Model, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.for_each_param(&mut |_, p| {
            let m = &mut ms[i];
            let v = &mut vs[i];
            for ((w, g), (mi, vi)) in p
                .v
                .data
                .iter_mut()
                .zip(&p.g.data)
                .zip(m.data.iter_mut().zip(v.data.iter_mut()))
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
            i += 1;
        });
    }
}

/// Pre-drawn inputs for one batch: augmented+patchified spectrograms plus
/// one mixing record per sample. Keeping the draws explicit makes the step
/// a pure function of (model, inputs), which the gradient checks rely on.
pub struct BatchInputs {
    pub raw: Vec<RawPatches>,
    pub labels: Vec<usize>,
    /// Empty when mixing is disabled.
    pub mixing: Vec<MixOutcome>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    pub mix_mode: MixMode,
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    /// Class weights for the CE term; only used when `mix_mode` is None.
    pub weights: Option<ClassWeights>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: f64,
    pub ce: f64,
    pub cl: f64,
}

/// Forward (and optionally backward) for one batch.
///
/// With `update` set, gradients are accumulated into the model (after
/// zeroing) and batch-norm running statistics are refreshed; otherwise the
/// model is untouched and only the loss value is returned.
#[allow(clippy::needless_range_loop)]
pub fn run_batch(
    model: &mut Model,
    inputs: &BatchInputs,
    opts: &StepOptions,
    update: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<LossTerms> {
    let b = inputs.raw.len();
    if b == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if inputs.labels.len() != b {
        return Err(Error::Shape(format!("{} labels for batch of {b}", inputs.labels.len())));
    }
    let d = model.cfg.d_model;
    let seqs: Vec<PatchSequence> =
        inputs.raw.iter().map(|r| model.embed(r)).collect::<Result<_>>()?;

    if update {
        model.zero_grad();
    }

    if opts.mix_mode == MixMode::None {
        let mut z = Mat::zeros(b, d);
        let mut ctxs = Vec::with_capacity(b);
        for (i, seq) in seqs.iter().enumerate() {
            let drop = dropout_rng.as_deref_mut().map(|r| r as &mut dyn rand::RngCore);
            let (rep, ctx) = model.encode(seq, drop)?;
            z.row_mut(i).copy_from_slice(&rep.z);
            ctxs.push(ctx);
        }
        let logits = model.classify(&z);
        let uniform = ClassWeights::uniform();
        let w = opts.weights.as_ref().unwrap_or(&uniform);
        let (ce, dlogits) = weighted_ce_grad(&logits, &inputs.labels, w)?;
        if update {
            let dz = model.classifier.backward(&z, &dlogits);
            for i in 0..b {
                let de = model.encode_backward(&ctxs[i], dz.row(i));
                model.embed_backward(&inputs.raw[i], &de);
            }
        }
        return Ok(LossTerms { total: ce, ce, cl: 0.0 });
    }

    if inputs.mixing.len() != b {
        return Err(Error::Shape("mixing draws do not cover the batch".into()));
    }
    let partners: Vec<usize> = inputs.mixing.iter().map(|m| m.partner).collect();
    let lams: Vec<f64> = inputs.mixing.iter().map(|m| m.lam).collect();
    if let Some(bad) = partners.iter().find(|m| **m >= b) {
        return Err(Error::Data(format!("partner index {bad} out of range for batch {b}")));
    }

    // clean branch: targets z_i
    let mut z = Mat::zeros(b, d);
    let mut clean_ctxs = Vec::with_capacity(b);
    for (i, seq) in seqs.iter().enumerate() {
        let drop = dropout_rng.as_deref_mut().map(|r| r as &mut dyn rand::RngCore);
        let (rep, ctx) = model.encode(seq, drop)?;
        z.row_mut(i).copy_from_slice(&rep.z);
        clean_ctxs.push(ctx);
    }

    // mixed branch: z~_i from patches swapped with the partner's
    let mixed: Vec<PatchSequence> = (0..b)
        .map(|i| apply_patch_mix(&seqs[i], &seqs[partners[i]], &inputs.mixing[i].mask))
        .collect::<Result<_>>()?;
    let mut zt = Mat::zeros(b, d);
    let mut mixed_ctxs = Vec::with_capacity(b);
    for (i, seq) in mixed.iter().enumerate() {
        let drop = dropout_rng.as_deref_mut().map(|r| r as &mut dyn rand::RngCore);
        let (rep, ctx) = model.encode(seq, drop)?;
        zt.row_mut(i).copy_from_slice(&rep.z);
        mixed_ctxs.push(ctx);
    }
    let logits = model.classify(&zt);

    let uniform = ClassWeights::uniform();
    let (ce, dlogits, cl, proj) = match opts.loss_kind {
        LossKind::Ce => {
            let (ce, dl) = weighted_ce_grad(&logits, &inputs.labels, &uniform)?;
            (ce, dl, 0.0, None)
        }
        LossKind::MixedCe => {
            let partner_labels: Vec<usize> =
                partners.iter().map(|m| inputs.labels[*m]).collect();
            let (ce, dl) =
                mixed_ce_baseline_grad(&logits, &inputs.labels, &partner_labels, &lams)?;
            (ce, dl, 0.0, None)
        }
        LossKind::PatchmixCl => {
            let (ce, dl) = weighted_ce_grad(&logits, &inputs.labels, &uniform)?;
            let (p, proj_ctx) = model.projector.forward_train(&zt)?;
            let (cl, dp, dz_cl) =
                patch_mix_contrastive_grad(&p, &z, &partners, &lams, &opts.loss)?;
            (ce, dl, cl, Some((proj_ctx, dp, dz_cl)))
        }
    };
    let alpha = opts.loss.alpha;
    let total = total_loss(ce, cl, alpha);

    if update {
        let mut dzt = model.classifier.backward(&zt, &dlogits);
        if let Some((proj_ctx, dp, dz_cl)) = &proj {
            if alpha > 0.0 {
                let mut dp_scaled = dp.clone();
                dp_scaled.scale_inplace(alpha);
                dzt.add_inplace(&model.projector.backward(proj_ctx, &dp_scaled));
            }
            model.projector.bn.update_running(&proj_ctx.bn, b);
            // gradient into the clean targets unless stop-gradient holds
            if alpha > 0.0 && !opts.loss.stopgrad_targets {
                let mut dz_scaled = dz_cl.clone();
                dz_scaled.scale_inplace(alpha);
                let mut d_embed: Vec<Mat> = (0..b)
                    .map(|_| Mat::zeros(model.n_patches(), d))
                    .collect();
                for i in 0..b {
                    let de_mixed = model.encode_backward(&mixed_ctxs[i], dzt.row(i));
                    for (j, take_other) in inputs.mixing[i].mask.replaced.iter().enumerate() {
                        let dst = if *take_other { partners[i] } else { i };
                        let row = d_embed[dst].row_mut(j);
                        for (o, v) in row.iter_mut().zip(de_mixed.row(j)) {
                            *o += v;
                        }
                    }
                }
                for j in 0..b {
                    let de_clean = model.encode_backward(&clean_ctxs[j], dz_scaled.row(j));
                    d_embed[j].add_inplace(&de_clean);
                }
                for i in 0..b {
                    model.embed_backward(&inputs.raw[i], &d_embed[i]);
                }
                return finite_or_err(total, ce, cl);
            }
        }
        // stop-gradient (or no CL) path: only the mixed branch flows back
        let mut d_embed: Vec<Mat> =
            (0..b).map(|_| Mat::zeros(model.n_patches(), d)).collect();
        for i in 0..b {
            let de_mixed = model.encode_backward(&mixed_ctxs[i], dzt.row(i));
            for (j, take_other) in inputs.mixing[i].mask.replaced.iter().enumerate() {
                let dst = if *take_other { partners[i] } else { i };
                let row = d_embed[dst].row_mut(j);
                for (o, v) in row.iter_mut().zip(de_mixed.row(j)) {
                    *o += v;
                }
            }
        }
        for i in 0..b {
            model.embed_backward(&inputs.raw[i], &d_embed[i]);
        }
    }
    finite_or_err(total, ce, cl)
}

fn finite_or_err(total: f64, ce: f64, cl: f64) -> Result<LossTerms> {
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss diverged: ce {ce:.4e}, cl {cl:.4e}")));
    }
    Ok(LossTerms { total, ce, cl })
}

/// Normalized spectrograms plus labels for both splits. The DSP runs once;
/// every epoch re-augments these cached features.
pub struct SplitFeatures {
    pub train: Vec<(Spectrogram, usize)>,
    pub test: Vec<(Spectrogram, usize)>,
    pub train_counts: [u64; 4],
    pub n_mels: usize,
    pub n_frames: usize,
}

/// Run the DSP front-end over every cycle of the dataset.
pub fn prepare_features(cfg: &Config, index: &DatasetIndex) -> Result<SplitFeatures> {
    let extractor = FbankExtractor::new(&cfg.dsp)?;
    let n_frames = extractor
        .frame_count(cfg.dsp.target_len())
        .ok_or_else(|| Error::Config("target duration shorter than one window".into()))?;
    // load each recording once
    let mut ids: Vec<&str> = index.items.iter().map(|it| it.meta.recording_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let sources: Vec<_> = ids
        .iter()
        .map(|id| {
            index
                .items
                .iter()
                .find(|it| it.meta.recording_id == **id)
                .map(|it| (id.to_string(), it.audio.clone()))
                .expect("id came from the index")
        })
        .collect();
    let loaded: Vec<Result<_>> =
        parallel::batch_map(&sources, |(id, src)| Ok((id.clone(), src.load()?)));
    let mut recordings = BTreeMap::new();
    for r in loaded {
        let (id, wave) = r?;
        recordings.insert(id, wave);
    }
    let specs: Vec<Result<Spectrogram>> = parallel::batch_map(&index.items, |it| {
        let wave = recordings
            .get(&it.meta.recording_id)
            .ok_or_else(|| Error::Data(format!("no audio for {}", it.meta.recording_id)))?;
        let cycle = extract_cycle(wave, &it.annotation)?;
        cycle_features(&cycle, &extractor)
    });
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (it, spec) in index.items.iter().zip(specs) {
        let spec = spec?;
        match it.meta.split {
            Split::Train => train.push((spec, it.label.class_id())),
            Split::Test => test.push((spec, it.label.class_id())),
        }
    }
    if train.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    Ok(SplitFeatures {
        train,
        test,
        train_counts: index.train_counts,
        n_mels: cfg.dsp.n_mels,
        n_frames,
    })
}

/// Evaluation-mode predictions over a feature set, reduced to confusion
/// counts. Parallel over samples; the reduction is exact integer addition.
pub fn evaluate_confusion(model: &Model, samples: &[(Spectrogram, usize)]) -> Result<ConfusionCounts> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let preds: Vec<Result<(usize, usize)>> = parallel::batch_map(samples, |(spec, label)| {
        let raw = patchify(spec, &model.cfg)?;
        let (_, logits) = model.forward_eval(&raw)?;
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok((pred, *label))
    });
    let mut conf = ConfusionCounts::default();
    for p in preds {
        let (pred, label) = p?;
        conf.record(label, pred)?;
    }
    Ok(conf)
}

/// Everything one seed produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub epoch_losses: Vec<f64>,
    /// (epoch, test score) at `train.eval_every` intervals.
    pub epoch_scores: Vec<(usize, f64)>,
    pub record: RunRecord,
    pub train_accuracy: f64,
}

/// On-disk per-run file written by the CLI and read by `report`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunFile {
    pub fingerprint: String,
    pub run: SeedRun,
}

pub struct TrainedModel {
    pub model: Model,
    pub shadow: Vec<Mat>,
    pub adam: Adam,
    pub config_text: String,
}

pub struct TrainOutcome {
    pub runs: Vec<SeedRun>,
    pub aggregate: crate::metrics::Aggregate,
    pub wall_clock_s: f64,
    pub fingerprint: String,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn epoch_seed(run_seed: u64, epoch: usize) -> u64 {
    splitmix64(run_seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Train one seed. Deterministic: all randomness derives from `seed`.
pub fn train_single(
    cfg: &Config,
    features: &SplitFeatures,
    seed: u64,
) -> Result<(SeedRun, TrainedModel)> {
    cfg.validate()?;
    let n_train = features.train.len();
    if n_train == 0 {
        return Err(Error::Data("train split is empty".into()));
    }
    let mix = cfg.mix_mode;
    let bs = cfg.train.batch_size;
    let batches_per_epoch = {
        let full = n_train / bs;
        let rem = n_train % bs;
        // batches of one cannot mix (and batch norm needs >= 2 rows)
        if rem >= 2 || (rem == 1 && mix == MixMode::None) {
            full + 1
        } else {
            full
        }
    };
    if batches_per_epoch == 0 {
        return Err(Error::Data(format!(
            "train split of {n_train} cycles is too small for mixing batches"
        )));
    }
    let total_steps = cfg.train.epochs * batches_per_epoch;

    let mut model_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(&cfg.encoder, features.n_mels, features.n_frames, &mut model_rng)?;
    let mut shadow = model.param_snapshot();
    let mut adam = Adam::new(
        &mut model,
        cfg.train.adam_beta1,
        cfg.train.adam_beta2,
        cfg.train.adam_eps,
    );
    let weights = if mix == MixMode::None {
        Some(class_weights(features.train_counts)?)
    } else {
        None
    };
    let opts = StepOptions { mix_mode: mix, loss_kind: cfg.loss_kind, loss: cfg.loss, weights };

    let mut epoch_losses = Vec::with_capacity(cfg.train.epochs);
    let mut epoch_scores = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.train.epochs {
        let eseed = epoch_seed(seed, epoch);
        let mut batch_rng = ChaCha8Rng::seed_from_u64(splitmix64(eseed));
        let mut order: Vec<usize> = (0..n_train).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut batch_rng);

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 && mix != MixMode::None {
                continue;
            }
            let b = chunk.len();
            let lr = cosine_lr(step, total_steps, cfg.train.lr);

            let mut raw = Vec::with_capacity(b);
            let mut labels = Vec::with_capacity(b);
            let mut mixing = Vec::with_capacity(b);
            let partners =
                if mix == MixMode::None { vec![] } else { draw_partners(b, &mut batch_rng) };
            for (pos, &gi) in chunk.iter().enumerate() {
                let (spec, label) = &features.train[gi];
                // each sample owns its stream: epoch seed xor sample index
                let mut srng = ChaCha8Rng::seed_from_u64(eseed ^ gi as u64);
                let augmented = spec_augment(spec, &cfg.specaugment, &mut srng)?;
                raw.push(patchify(&augmented, &cfg.encoder)?);
                labels.push(*label);
                if mix != MixMode::None {
                    let lam = sample_lambda(cfg.loss.beta, &mut srng)?;
                    let (mask, realized) = make_mix_mask(model.grid, lam, mix, &mut srng)?;
                    // the realized (post-rounding) ratio is what the loss sees
                    mixing.push(MixOutcome { partner: partners[pos], lam: realized, mask });
                }
            }
            let inputs = BatchInputs { raw, labels, mixing };
            let dropout_rng = if cfg.encoder.dropout > 0.0 {
                Some(ChaCha8Rng::seed_from_u64(splitmix64(eseed ^ 0xd50f)))
            } else {
                None
            };
            let mut drng = dropout_rng;
            let terms = run_batch(&mut model, &inputs, &opts, true, drng.as_mut())
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!(
                        "step {step} (lr {lr:.3e}): {msg}"
                    )),
                    other => other,
                })?;
            adam.step(&mut model, lr);
            ema_update(&mut shadow, &model.param_snapshot(), cfg.train.ema_momentum)?;
            epoch_loss += terms.total;
            n_batches += 1;
            step += 1;
        }
        epoch_losses.push(epoch_loss / n_batches.max(1) as f64);

        if cfg.train.eval_every > 0
            && (epoch + 1) % cfg.train.eval_every == 0
            && !features.test.is_empty()
        {
            let conf = eval_with_weights(&mut model, &shadow, cfg.train.use_ema, &features.test)?;
            if let Ok(report) = metrics_report(&conf) {
                epoch_scores.push((epoch + 1, report.score));
            }
        }
    }

    // final evaluation: EMA weights, no augmentation
    let eval_split = if features.test.is_empty() { &features.train } else { &features.test };
    let conf = eval_with_weights(&mut model, &shadow, cfg.train.use_ema, eval_split)?;
    let report = metrics_report(&conf)?;
    let train_conf = eval_with_weights(&mut model, &shadow, cfg.train.use_ema, &features.train)?;
    let record = RunRecord::new(&report, conf.total(), seed);
    let run = SeedRun {
        seed,
        epoch_losses,
        epoch_scores,
        record,
        train_accuracy: train_conf.accuracy(),
    };
    let trained =
        TrainedModel { model, shadow, adam, config_text: cfg.to_text() };
    Ok((run, trained))
}

/// Evaluate with the shadow (EMA) weights swapped in, restoring the live
/// parameters afterwards.
fn eval_with_weights(
    model: &mut Model,
    shadow: &[Mat],
    use_ema: bool,
    samples: &[(Spectrogram, usize)],
) -> Result<ConfusionCounts> {
    if !use_ema {
        return evaluate_confusion(model, samples);
    }
    let live = model.param_snapshot();
    model.load_param_snapshot(shadow)?;
    let result = evaluate_confusion(model, samples);
    model.load_param_snapshot(&live)?;
    result
}

/// Multi-seed training: independent runs per seed, aggregated mean/std.
pub fn run_multi_seed(cfg: &Config, index: &DatasetIndex) -> Result<TrainOutcome> {
    Ok(run_multi_seed_full(cfg, index)?.0)
}

pub fn run_multi_seed_full(
    cfg: &Config,
    index: &DatasetIndex,
) -> Result<(TrainOutcome, Vec<TrainedModel>)> {
    cfg.validate()?;
    let started = Instant::now();
    let features = prepare_features(cfg, index)?;
    let results: Vec<Result<(SeedRun, TrainedModel)>> =
        parallel::batch_map(&cfg.train.seeds, |seed| train_single(cfg, &features, *seed));
    let mut failed = Vec::new();
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for (seed, res) in cfg.train.seeds.iter().zip(results) {
        match res {
            Ok((run, model)) => {
                runs.push(run);
                models.push(model);
            }
            Err(e) => failed.push(format!("seed {seed}: {e}")),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Data(format!("failed runs: {}", failed.join("; "))));
    }
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record).collect();
    let aggregate = crate::metrics::aggregate(&records)?;
    Ok((
        TrainOutcome {
            runs,
            aggregate,
            wall_clock_s: started.elapsed().as_secs_f64(),
            fingerprint: cfg.fingerprint(),
        },
        models,
    ))
}

impl TrainedModel {
    /// Write model, EMA, optimizer state and the config into one file.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Payload)> = Vec::new();
        entries.push(("config".to_string(), Payload::Bytes(self.config_text.clone().into_bytes())));
        entries.push((
            "opt.step".to_string(),
            Payload::Tensor { rows: 1, cols: 1, data: vec![self.adam.step as f32] },
        ));
        let mut names = Vec::new();
        self.model.for_each_param(&mut |name, p| {
            names.push(name.to_string());
            entries.push((format!("model.{name}"), Payload::from_mat(&p.v)));
        });
        self.model.for_each_buffer(&mut |name, buf| {
            entries.push((
                format!("model.{name}"),
                Payload::Tensor {
                    rows: 1,
                    cols: buf.len() as u32,
                    data: buf.iter().map(|v| *v as f32).collect(),
                },
            ));
        });
        for (name, mat) in names.iter().zip(&self.shadow) {
            entries.push((format!("ema.{name}"), Payload::from_mat(mat)));
        }
        for (name, mat) in names.iter().zip(&self.adam.m) {
            entries.push((format!("opt.m.{name}"), Payload::from_mat(mat)));
        }
        for (name, mat) in names.iter().zip(&self.adam.v) {
            entries.push((format!("opt.v.{name}"), Payload::from_mat(mat)));
        }
        write_checkpoint(path, &entries)
    }
}

pub struct LoadedCheckpoint {
    pub config: Config,
    pub model: Model,
    pub shadow: Vec<Mat>,
}

pub fn load_checkpoint_model(path: &Path) -> Result<LoadedCheckpoint> {
    let entries = read_checkpoint(path)?;
    let map: BTreeMap<String, Payload> = entries.into_iter().collect();
    let config_text = match map.get("config") {
        Some(Payload::Bytes(b)) => String::from_utf8(b.clone())
            .map_err(|_| Error::Data("checkpoint config is not UTF-8".into()))?,
        _ => return Err(Error::Data("checkpoint is missing its config section".into())),
    };
    let config = Config::parse(&config_text)?;
    let extractor = FbankExtractor::new(&config.dsp)?;
    let n_frames = extractor
        .frame_count(config.dsp.target_len())
        .ok_or_else(|| Error::Config("target duration shorter than one window".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(&config.encoder, config.dsp.n_mels, n_frames, &mut rng)?;

    let mut err: Option<Error> = None;
    model.for_each_param(&mut |name, p| {
        if err.is_some() {
            return;
        }
        match map.get(&format!("model.{name}")) {
            Some(payload) => match payload.to_mat() {
                Ok(mat) if mat.rows == p.v.rows && mat.cols == p.v.cols => p.v = mat,
                Ok(mat) => {
                    err = Some(Error::Shape(format!(
                        "model.{name}: checkpoint {}x{} vs model {}x{}",
                        mat.rows, mat.cols, p.v.rows, p.v.cols
                    )))
                }
                Err(e) => err = Some(e),
            },
            None => err = Some(Error::Data(format!("checkpoint missing section model.{name}"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut buf_err: Option<Error> = None;
    model.for_each_buffer(&mut |name, buf| {
        if buf_err.is_some() {
            return;
        }
        match map.get(&format!("model.{name}")) {
            Some(Payload::Tensor { data, .. }) if data.len() == buf.len() => {
                for (b, v) in buf.iter_mut().zip(data) {
                    *b = *v as f64;
                }
            }
            _ => buf_err = Some(Error::Data(format!("checkpoint missing section model.{name}"))),
        }
    });
    if let Some(e) = buf_err {
        return Err(e);
    }
    let mut shadow = Vec::new();
    let mut sh_err: Option<Error> = None;
    model.for_each_param(&mut |name, p| {
        if sh_err.is_some() {
            return;
        }
        match map.get(&format!("ema.{name}")).map(|pl| pl.to_mat()) {
            Some(Ok(mat)) if mat.rows == p.v.rows && mat.cols == p.v.cols => shadow.push(mat),
            Some(Ok(_)) => sh_err = Some(Error::Shape(format!("ema.{name} has a wrong shape"))),
            Some(Err(e)) => sh_err = Some(e),
            None => sh_err = Some(Error::Data(format!("checkpoint missing section ema.{name}"))),
        }
    });
    if let Some(e) = sh_err {
        return Err(e);
    }
    Ok(LoadedCheckpoint { config, model, shadow })
}

/// Evaluate a saved checkpoint on one split of a dataset: EMA weights (when
/// the run used them), argmax over the 4 logits, Eq. 1 metrics.
pub fn evaluate_checkpoint(
    path: &Path,
    index: &DatasetIndex,
    split: Split,
) -> Result<(MetricsReport, ConfusionCounts)> {
    let mut loaded = load_checkpoint_model(path)?;
    let features = prepare_features(&loaded.config, index)?;
    let samples = match split {
        Split::Train => &features.train,
        Split::Test => &features.test,
    };
    let conf = eval_with_weights(
        &mut loaded.model,
        &loaded.shadow,
        loaded.config.train.use_ema,
        samples,
    )?;
    Ok((metrics_report(&conf)?, conf))
}
