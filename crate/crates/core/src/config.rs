//! Flat key-value run configuration: `key = value` lines, `#` comments.
//! Every key can also be set from the command line via `--set key=value`.

use crate::augment::{MixMode, SpecAugmentConfig};
use crate::dsp::DspConfig;
use crate::encoder::{EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind, NegMode};

/// Trainer settings. `lr`, `batch_size` and `epochs` default to the
/// from-scratch recipe (1e-3 / 128 / 200).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ema_momentum: f64,
    pub use_ema: bool,
    pub seeds: Vec<u64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Evaluate on the test split every k epochs (0 = only at the end).
    pub eval_every: usize,
    pub out_dir: String,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr: 1e-3,
            batch_size: 128,
            epochs: 200,
            ema_momentum: 0.5,
            use_ema: true,
            seeds: vec![0, 1, 2, 3, 4],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 0,
            out_dir: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSettings {
    pub patients: usize,
    pub cycles: usize,
    pub seed: u64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { patients: 10, cycles: 8, seed: 0 }
    }
}

/// The full run configuration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub dsp: DspConfig,
    pub specaugment: SpecAugmentConfig,
    pub mix_mode: MixMode,
    pub loss: LossConfig,
    pub loss_kind: LossKind,
    pub encoder: EncoderConfig,
    pub train: TrainSettings,
    pub synth: SynthSettings,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for key {key}"))),
    }
}

impl Config {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dsp.target_rate" => self.dsp.target_rate = parse_num(key, v)?,
            "dsp.target_duration_s" => self.dsp.target_duration_s = parse_num(key, v)?,
            "dsp.win_ms" => self.dsp.win_ms = parse_num(key, v)?,
            "dsp.hop_ms" => self.dsp.hop_ms = parse_num(key, v)?,
            "dsp.n_mels" => self.dsp.n_mels = parse_num(key, v)?,
            "dsp.norm_mean" => self.dsp.norm_mean = parse_num(key, v)?,
            "dsp.norm_std" => self.dsp.norm_std = parse_num(key, v)?,
            "dsp.norm_double_std" => self.dsp.norm_double_std = parse_bool(key, v)?,
            "dsp.fade_fraction" => self.dsp.fade_fraction = parse_num(key, v)?,
            "specaugment.time_mask_max" => self.specaugment.time_mask_max = parse_num(key, v)?,
            "specaugment.freq_mask_max" => self.specaugment.freq_mask_max = parse_num(key, v)?,
            "specaugment.n_time_masks" => self.specaugment.n_time_masks = parse_num(key, v)?,
            "specaugment.n_freq_masks" => self.specaugment.n_freq_masks = parse_num(key, v)?,
            "mix.mode" => self.mix_mode = MixMode::parse(v)?,
            "mix.beta" | "loss.beta" => self.loss.beta = parse_num(key, v)?,
            "loss.tau" => self.loss.tau = parse_num(key, v)?,
            "loss.alpha" => self.loss.alpha = parse_num(key, v)?,
            "loss.neg_mode" => self.loss.neg_mode = NegMode::parse(v)?,
            "loss.stopgrad_targets" => self.loss.stopgrad_targets = parse_bool(key, v)?,
            "loss.kind" => self.loss_kind = LossKind::parse(v)?,
            "encoder.patch_size" => self.encoder.patch_size = parse_num(key, v)?,
            "encoder.patch_stride" => self.encoder.patch_stride = parse_num(key, v)?,
            "encoder.d_model" => self.encoder.d_model = parse_num(key, v)?,
            "encoder.n_layers" => self.encoder.n_layers = parse_num(key, v)?,
            "encoder.n_heads" => self.encoder.n_heads = parse_num(key, v)?,
            "encoder.mlp_ratio" => self.encoder.mlp_ratio = parse_num(key, v)?,
            "encoder.proj_dim" => self.encoder.proj_dim = parse_num(key, v)?,
            "encoder.dropout" => self.encoder.dropout = parse_num(key, v)?,
            "encoder.pooling" => {
                self.encoder.pooling = match v {
                    "mean" => Pooling::Mean,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown pooling {other:?} (expected mean)"
                        )))
                    }
                }
            }
            "train.lr" => self.train.lr = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.ema_momentum" => self.train.ema_momentum = parse_num(key, v)?,
            "train.use_ema" => self.train.use_ema = parse_bool(key, v)?,
            "train.adam_beta1" => self.train.adam_beta1 = parse_num(key, v)?,
            "train.adam_beta2" => self.train.adam_beta2 = parse_num(key, v)?,
            "train.adam_eps" => self.train.adam_eps = parse_num(key, v)?,
            "train.eval_every" => self.train.eval_every = parse_num(key, v)?,
            "train.out_dir" => self.train.out_dir = v.to_string(),
            "train.seeds" => {
                let seeds: Result<Vec<u64>> =
                    v.split(',').map(|s| parse_num(key, s.trim())).collect();
                let seeds = seeds?;
                if seeds.is_empty() {
                    return Err(Error::Config("train.seeds must name at least one seed".into()));
                }
                self.train.seeds = seeds;
            }
            "synth.patients" => self.synth.patients = parse_num(key, v)?,
            "synth.cycles" => self.synth.cycles = parse_num(key, v)?,
            "synth.seed" => self.synth.seed = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a whole config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            cfg.set(key, value).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `--set key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, found {item:?}"))
            })?;
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        // the contrastive loss dots h(z~) against unprojected z
        if self.loss_kind == LossKind::PatchmixCl
            && self.mix_mode != MixMode::None
            && self.encoder.proj_dim != self.encoder.d_model
        {
            return Err(Error::Config(format!(
                "patchmix_cl compares projected vectors with z: encoder.proj_dim ({}) must equal encoder.d_model ({})",
                self.encoder.proj_dim, self.encoder.d_model
            )));
        }
        if self.train.lr <= 0.0 {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.train.lr)));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.train.ema_momentum) {
            return Err(Error::Config(format!(
                "train.ema_momentum must lie in [0, 1), got {}",
                self.train.ema_momentum
            )));
        }
        if self.train.seeds.is_empty() {
            return Err(Error::Config("train.seeds must name at least one seed".into()));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let seeds = self
            .train
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "dsp.target_rate = {}\n\
             dsp.target_duration_s = {}\n\
             dsp.win_ms = {}\n\
             dsp.hop_ms = {}\n\
             dsp.n_mels = {}\n\
             dsp.norm_mean = {}\n\
             dsp.norm_std = {}\n\
             dsp.norm_double_std = {}\n\
             dsp.fade_fraction = {}\n\
             specaugment.time_mask_max = {}\n\
             specaugment.freq_mask_max = {}\n\
             specaugment.n_time_masks = {}\n\
             specaugment.n_freq_masks = {}\n\
             mix.mode = {}\n\
             mix.beta = {}\n\
             loss.tau = {}\n\
             loss.alpha = {}\n\
             loss.neg_mode = {}\n\
             loss.stopgrad_targets = {}\n\
             loss.kind = {}\n\
             encoder.patch_size = {}\n\
             encoder.patch_stride = {}\n\
             encoder.d_model = {}\n\
             encoder.n_layers = {}\n\
             encoder.n_heads = {}\n\
             encoder.mlp_ratio = {}\n\
             encoder.proj_dim = {}\n\
             encoder.dropout = {}\n\
             encoder.pooling = mean\n\
             train.lr = {}\n\
             train.batch_size = {}\n\
             train.epochs = {}\n\
             train.ema_momentum = {}\n\
             train.use_ema = {}\n\
             train.adam_beta1 = {}\n\
             train.adam_beta2 = {}\n\
             train.adam_eps = {}\n\
             train.eval_every = {}\n\
             train.out_dir = {}\n\
             train.seeds = {}\n\
             synth.patients = {}\n\
             synth.cycles = {}\n\
             synth.seed = {}\n",
            self.dsp.target_rate,
            self.dsp.target_duration_s,
            self.dsp.win_ms,
            self.dsp.hop_ms,
            self.dsp.n_mels,
            self.dsp.norm_mean,
            self.dsp.norm_std,
            self.dsp.norm_double_std,
            self.dsp.fade_fraction,
            self.specaugment.time_mask_max,
            self.specaugment.freq_mask_max,
            self.specaugment.n_time_masks,
            self.specaugment.n_freq_masks,
            self.mix_mode.as_str(),
            self.loss.beta,
            self.loss.tau,
            self.loss.alpha,
            self.loss.neg_mode.as_str(),
            self.loss.stopgrad_targets,
            self.loss_kind.as_str(),
            self.encoder.patch_size,
            self.encoder.patch_stride,
            self.encoder.d_model,
            self.encoder.n_layers,
            self.encoder.n_heads,
            self.encoder.mlp_ratio,
            self.encoder.proj_dim,
            self.encoder.dropout,
            self.train.lr,
            self.train.batch_size,
            self.train.epochs,
            self.train.ema_momentum,
            self.train.use_ema,
            self.train.adam_beta1,
            self.train.adam_beta2,
            self.train.adam_eps,
            self.train.eval_every,
            self.train.out_dir,
            seeds,
            self.synth.patients,
            self.synth.cycles,
            self.synth.seed,
        )
    }

    /// FNV-1a hash of the canonical text, as 16 hex chars. Output paths do
    /// not change what a run computes, so they stay out of the hash.
    pub fn fingerprint(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for line in self.to_text().lines() {
            if line.starts_with("train.out_dir") {
                continue;
            }
            for byte in line.bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100_0000_01b3);
            }
            hash ^= b'\n' as u64;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}
