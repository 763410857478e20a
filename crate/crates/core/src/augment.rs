//! SpecAugment masking on spectrograms and Patch-Mix / T-Patch mixing on
//! patch-embedding sequences, with Beta-distributed mixing ratios.
//!
//! Everything here is pure given an explicit seeded generator; the trainer
//! hands each sample its own stream so results do not depend on scheduling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dsp::Spectrogram;
use crate::encoder::PatchSequence;
use crate::error::{Error, Result};

/// SpecAugment parameters: one time mask up to 160 frames and one frequency
/// mask up to 48 bins by default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecAugmentConfig {
    pub time_mask_max: usize,
    pub freq_mask_max: usize,
    pub n_time_masks: usize,
    pub n_freq_masks: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig { time_mask_max: 160, freq_mask_max: 48, n_time_masks: 1, n_freq_masks: 1 }
    }
}

/// How patches are replaced: individually at random, or whole time columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MixMode {
    None,
    #[default]
    Patch,
    TPatch,
}

impl MixMode {
    pub fn parse(s: &str) -> Result<MixMode> {
        match s {
            "none" => Ok(MixMode::None),
            "patch" => Ok(MixMode::Patch),
            "t_patch" => Ok(MixMode::TPatch),
            other => Err(Error::Config(format!(
                "unknown mix mode {other:?} (expected none|patch|t_patch)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MixMode::None => "none",
            MixMode::Patch => "patch",
            MixMode::TPatch => "t_patch",
        }
    }
}

/// Which patch positions take the partner's embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct MixMask {
    pub replaced: Vec<bool>,
    pub mode: MixMode,
    pub grid: (usize, usize),
}

impl MixMask {
    pub fn replaced_count(&self) -> usize {
        self.replaced.iter().filter(|r| **r).count()
    }
}

/// Per-sample record of one mixing event.
#[derive(Clone, Debug)]
pub struct MixOutcome {
    pub partner: usize,
    pub lam: f64,
    pub mask: MixMask,
}

/// Mask random spans of frames and mel bins with the spectrogram's own
/// pre-masking mean. Expects a normalized spectrogram.
pub fn spec_augment<R: Rng>(
    spec: &Spectrogram,
    cfg: &SpecAugmentConfig,
    rng: &mut R,
) -> Result<Spectrogram> {
    if !spec.normalized {
        return Err(Error::Data("spec_augment expects a normalized spectrogram".into()));
    }
    if cfg.time_mask_max > spec.n_frames || cfg.freq_mask_max > spec.n_mels {
        return Err(Error::Config(format!(
            "mask maxima ({}, {}) exceed spectrogram dims ({}, {})",
            cfg.time_mask_max, cfg.freq_mask_max, spec.n_mels, spec.n_frames
        )));
    }
    let fill = spec.mean();
    let mut out = spec.clone();
    for _ in 0..cfg.n_time_masks {
        let len = rng.gen_range(0..=cfg.time_mask_max);
        let start = rng.gen_range(0..=spec.n_frames - len);
        for m in 0..spec.n_mels {
            for t in start..start + len {
                *out.at_mut(m, t) = fill;
            }
        }
    }
    for _ in 0..cfg.n_freq_masks {
        let len = rng.gen_range(0..=cfg.freq_mask_max);
        let start = rng.gen_range(0..=spec.n_mels - len);
        for m in start..start + len {
            for t in 0..spec.n_frames {
                *out.at_mut(m, t) = fill;
            }
        }
    }
    Ok(out)
}

/// lambda ~ Beta(beta, beta), clamped to [0, 1].
pub fn sample_lambda<R: Rng>(beta: f64, rng: &mut R) -> Result<f64> {
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::Config(format!("Beta parameter must be positive, got {beta}")));
    }
    let dist = Beta::new(beta, beta)
        .map_err(|e| Error::Config(format!("Beta({beta}, {beta}): {e}")))?;
    Ok(dist.sample(rng).clamp(0.0, 1.0))
}

/// Build a replacement mask for a `(n_f, n_t)` patch grid. Returns the mask
/// together with the realized lambda after integer rounding; the loss must
/// use the realized value so coefficient and mask stay consistent.
pub fn make_mix_mask<R: Rng>(
    grid: (usize, usize),
    lam: f64,
    mode: MixMode,
    rng: &mut R,
) -> Result<(MixMask, f64)> {
    let (n_f, n_t) = grid;
    let n = n_f * n_t;
    if n == 0 {
        return Err(Error::Config("empty patch grid".into()));
    }
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::Config(format!("lambda {lam} outside [0, 1]")));
    }
    let mut replaced = vec![false; n];
    let realized = match mode {
        MixMode::None => 1.0,
        MixMode::Patch => {
            let k = (((1.0 - lam) * n as f64).round() as usize).min(n);
            for idx in rand::seq::index::sample(rng, n, k) {
                replaced[idx] = true;
            }
            1.0 - k as f64 / n as f64
        }
        MixMode::TPatch => {
            let k_t = (((1.0 - lam) * n_t as f64).round() as usize).min(n_t);
            for col in rand::seq::index::sample(rng, n_t, k_t) {
                for f in 0..n_f {
                    replaced[f * n_t + col] = true;
                }
            }
            1.0 - k_t as f64 / n_t as f64
        }
    };
    Ok((MixMask { replaced, mode, grid }, realized))
}

/// Positionwise replacement: output patch j comes from `other` where the
/// mask is set, otherwise from `own`. Positional terms are untouched since
/// both sequences carry the same positional embedding at each slot.
pub fn apply_patch_mix(
    own: &PatchSequence,
    other: &PatchSequence,
    mask: &MixMask,
) -> Result<PatchSequence> {
    if own.embeddings.rows != other.embeddings.rows
        || own.embeddings.cols != other.embeddings.cols
        || own.grid != other.grid
    {
        return Err(Error::Shape(format!(
            "patch mix: sequences disagree ({}x{} grid {:?} vs {}x{} grid {:?})",
            own.embeddings.rows,
            own.embeddings.cols,
            own.grid,
            other.embeddings.rows,
            other.embeddings.cols,
            other.grid
        )));
    }
    if mask.replaced.len() != own.embeddings.rows {
        return Err(Error::Shape(format!(
            "patch mix: mask length {} != patch count {}",
            mask.replaced.len(),
            own.embeddings.rows
        )));
    }
    let mut out = own.clone();
    for (j, take_other) in mask.replaced.iter().enumerate() {
        if *take_other {
            out.embeddings.row_mut(j).copy_from_slice(other.embeddings.row(j));
        }
    }
    Ok(out)
}

/// Uniformly random derangement of batch indices (no index maps to itself);
/// a batch of one maps to itself.
pub fn draw_partners<R: Rng>(batch_size: usize, rng: &mut R) -> Vec<usize> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    if batch_size == 1 {
        return vec![0];
    }
    let mut perm: Vec<usize> = (0..batch_size).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, p)| i != *p) {
            return perm;
        }
    }
}
