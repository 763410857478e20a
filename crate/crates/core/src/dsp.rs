//! DSP front-end: resampling, duration standardization, log-Mel filterbank
//! features and spectrogram normalization.
//!
//! The default configuration turns an 8 s cycle at 16 kHz into a 128 x 798
//! normalized log-Mel spectrogram.

use std::sync::Arc;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Mono waveform with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Self {
        Waveform { samples, rate }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

/// Log-Mel spectrogram, row-major `[n_mels, n_frames]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub normalized: bool,
}

impl Spectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, n_frames: usize) -> Self {
        assert_eq!(values.len(), n_mels * n_frames);
        Spectrogram { values, n_mels, n_frames, normalized: false }
    }

    #[inline]
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    #[inline]
    pub fn at_mut(&mut self, mel: usize, frame: usize) -> &mut f64 {
        &mut self.values[mel * self.n_frames + frame]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Front-end parameters.
///
/// `norm_double_std` selects division by `2 * norm_std` (the convention of
/// the AST feature pipeline) instead of plain `norm_std`.
#[derive(Clone, Debug, PartialEq)]
pub struct DspConfig {
    pub target_rate: u32,
    pub target_duration_s: f64,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub norm_double_std: bool,
    pub fade_fraction: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            target_rate: 16_000,
            target_duration_s: 8.0,
            win_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 128,
            norm_mean: -4.27,
            norm_std: 4.57,
            norm_double_std: true,
            fade_fraction: 0.1,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_ms <= self.hop_ms || self.hop_ms <= 0.0 {
            return Err(Error::Config(format!(
                "require win_ms > hop_ms > 0, got win {} hop {}",
                self.win_ms, self.hop_ms
            )));
        }
        if self.norm_std <= 0.0 {
            return Err(Error::Config(format!("norm_std must be positive, got {}", self.norm_std)));
        }
        if !(self.fade_fraction > 0.0 && self.fade_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "fade_fraction must lie in (0, 0.5], got {}",
                self.fade_fraction
            )));
        }
        if self.target_rate == 0 || self.n_mels == 0 || self.target_duration_s <= 0.0 {
            return Err(Error::Config("target_rate, n_mels, target_duration_s must be positive".into()));
        }
        Ok(())
    }

    pub fn win_len(&self) -> usize {
        (self.win_ms * self.target_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.target_rate as f64 / 1000.0).round() as usize
    }

    pub fn target_len(&self) -> usize {
        (self.target_duration_s * self.target_rate as f64).round() as usize
    }
}

const LOG_FLOOR: f64 = 1e-10;
const SINC_HALF_TAPS: usize = 32;

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if wave.samples.is_empty() {
        return Err(Error::Data("resample: empty waveform".into()));
    }
    if target_rate == 0 {
        return Err(Error::Config("resample: target rate must be positive".into()));
    }
    if wave.rate == target_rate {
        return Ok(wave.clone());
    }
    let ratio = target_rate as f64 / wave.rate as f64;
    let out_len = (wave.samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    // widen the kernel when downsampling so the lowpass keeps its lobes
    let half_width = SINC_HALF_TAPS as f64 / cutoff;
    let src = &wave.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let k_lo = (t - half_width).ceil() as isize;
        let k_hi = (t + half_width).floor() as isize;
        let mut acc = 0.0;
        for k in k_lo..=k_hi {
            if k < 0 || k as usize >= src.len() {
                continue;
            }
            let u = t - k as f64;
            let sinc = if u == 0.0 {
                1.0
            } else {
                let a = std::f64::consts::PI * cutoff * u;
                a.sin() / a
            };
            let window = 0.5 * (1.0 + (std::f64::consts::PI * u / half_width).cos());
            acc += src[k as usize] * cutoff * sinc * window;
        }
        out.push(acc);
    }
    Ok(Waveform::new(out, target_rate))
}

/// Force a cycle to exactly `target_duration_s`: truncate long cycles, loop
/// short ones with a linear crossfade at each junction.
pub fn standardize_duration(wave: &Waveform, cfg: &DspConfig) -> Result<Waveform> {
    if wave.samples.is_empty() {
        return Err(Error::Data("standardize_duration: empty waveform".into()));
    }
    if wave.rate != cfg.target_rate {
        return Err(Error::Data(format!(
            "standardize_duration: waveform rate {} != target rate {}",
            wave.rate, cfg.target_rate
        )));
    }
    let target = cfg.target_len();
    let cycle = &wave.samples;
    if cycle.len() >= target {
        return Ok(Waveform::new(cycle[..target].to_vec(), wave.rate));
    }
    let fade = (cfg.fade_fraction * cycle.len() as f64).round() as usize;
    let mut out = cycle.clone();
    while out.len() < target {
        if fade == 0 || out.len() < fade {
            out.extend_from_slice(cycle);
            continue;
        }
        // overlap-add: tail of `out` fades out while the head of the next
        // copy fades in
        let start = out.len() - fade;
        for i in 0..fade {
            let u = (i + 1) as f64 / (fade + 1) as f64;
            out[start + i] = out[start + i] * (1.0 - u) + cycle[i] * u;
        }
        out.extend_from_slice(&cycle[fade..]);
    }
    out.truncate(target);
    Ok(Waveform::new(out, wave.rate))
}

fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

/// Triangular filters in the Mel domain, evaluated at FFT bin frequencies.
/// Sparse representation: per filter, (first_bin, weights).
fn mel_filterbank(n_mels: usize, n_fft: usize, rate: u32) -> Vec<(usize, Vec<f64>)> {
    let n_bins = n_fft / 2 + 1;
    let bin_hz = rate as f64 / n_fft as f64;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(rate as f64 / 2.0);
    let delta = (mel_hi - mel_lo) / (n_mels + 1) as f64;
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let left = mel_lo + m as f64 * delta;
        let center = left + delta;
        let right = center + delta;
        let mut first = None;
        let mut weights = Vec::new();
        for bin in 0..n_bins {
            let mel = hz_to_mel(bin_hz * bin as f64);
            let w = if mel > left && mel < center {
                (mel - left) / (center - left)
            } else if mel >= center && mel < right {
                (right - mel) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                if first.is_none() {
                    first = Some(bin);
                }
                weights.push(w);
            } else if first.is_some() {
                break;
            }
        }
        filters.push((first.unwrap_or(0), weights));
    }
    filters
}

/// Reusable FFT plan plus filterbank for one configuration.
pub struct FbankExtractor {
    cfg: DspConfig,
    n_fft: usize,
    fft: Arc<dyn rustfft::Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<(usize, Vec<f64>)>,
}

impl FbankExtractor {
    pub fn new(cfg: &DspConfig) -> Result<Self> {
        cfg.validate()?;
        let win_len = cfg.win_len();
        let n_fft = win_len.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        // symmetric Hann window
        let window: Vec<f64> = (0..win_len)
            .map(|i| {
                0.5 - 0.5
                    * (2.0 * std::f64::consts::PI * i as f64 / (win_len - 1) as f64).cos()
            })
            .collect();
        let filters = mel_filterbank(cfg.n_mels, n_fft, cfg.target_rate);
        Ok(FbankExtractor { cfg: cfg.clone(), n_fft, fft, window, filters })
    }

    /// Number of frames produced for `n_samples` input samples.
    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        let win = self.cfg.win_len();
        if n_samples < win {
            return None;
        }
        Some((n_samples - win) / self.cfg.hop_len() + 1)
    }

    pub fn extract(&self, wave: &Waveform) -> Result<Spectrogram> {
        if wave.rate != self.cfg.target_rate {
            return Err(Error::Data(format!(
                "logmel_fbank: waveform rate {} != configured rate {}",
                wave.rate, self.cfg.target_rate
            )));
        }
        let win = self.cfg.win_len();
        let hop = self.cfg.hop_len();
        let n_frames = self.frame_count(wave.samples.len()).ok_or_else(|| {
            Error::Data(format!(
                "logmel_fbank: input of {} samples is shorter than one {}-sample window",
                wave.samples.len(),
                win
            ))
        })?;
        let n_mels = self.cfg.n_mels;
        let mut values = vec![0.0; n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for frame in 0..n_frames {
            let start = frame * hop;
            let slice = &wave.samples[start..start + win];
            let mean = slice.iter().sum::<f64>() / win as f64;
            for i in 0..self.n_fft {
                let v = if i < win { (slice[i] - mean) * self.window[i] } else { 0.0 };
                buf[i] = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (i, p) in power.iter_mut().enumerate() {
                *p = buf[i].norm_sqr();
            }
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let mut energy = 0.0;
                for (w, p) in weights.iter().zip(&power[*first..]) {
                    energy += w * p;
                }
                values[m * n_frames + frame] = energy.max(LOG_FLOOR).ln();
            }
        }
        Ok(Spectrogram::new(values, n_mels, n_frames))
    }
}

/// One-shot log-Mel extraction; build an [`FbankExtractor`] instead when
/// processing many cycles with one configuration.
pub fn logmel_fbank(wave: &Waveform, cfg: &DspConfig) -> Result<Spectrogram> {
    FbankExtractor::new(cfg)?.extract(wave)
}

/// (x - mean) / (2 * std), or / std when `norm_double_std` is off.
pub fn normalize(spec: &Spectrogram, cfg: &DspConfig) -> Result<Spectrogram> {
    if spec.normalized {
        return Err(Error::Data("normalize: spectrogram is already normalized".into()));
    }
    let denom = if cfg.norm_double_std { 2.0 * cfg.norm_std } else { cfg.norm_std };
    let values = spec.values.iter().map(|v| (v - cfg.norm_mean) / denom).collect();
    Ok(Spectrogram { values, n_mels: spec.n_mels, n_frames: spec.n_frames, normalized: true })
}

/// Inverse of [`normalize`]; mainly for round-trip checks.
pub fn denormalize(spec: &Spectrogram, cfg: &DspConfig) -> Result<Spectrogram> {
    if !spec.normalized {
        return Err(Error::Data("denormalize: spectrogram is not normalized".into()));
    }
    let denom = if cfg.norm_double_std { 2.0 * cfg.norm_std } else { cfg.norm_std };
    let values = spec.values.iter().map(|v| v * denom + cfg.norm_mean).collect();
    Ok(Spectrogram { values, n_mels: spec.n_mels, n_frames: spec.n_frames, normalized: false })
}

/// Full front-end: resample -> standardize duration -> log-Mel -> normalize.
pub fn cycle_features(wave: &Waveform, extractor: &FbankExtractor) -> Result<Spectrogram> {
    let wave = resample(wave, extractor.cfg.target_rate)?;
    let wave = standardize_duration(&wave, &extractor.cfg)?;
    let spec = extractor.extract(&wave)?;
    normalize(&spec, &extractor.cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate)
    }

    #[test]
    fn resample_is_identity_at_matching_rate() {
        let w = tone(440.0, 16_000, 1.0);
        let r = resample(&w, 16_000).unwrap();
        assert_eq!(r, w);
    }

    #[test]
    fn resample_doubles_length_for_doubled_rate() {
        let w = tone(100.0, 8_000, 1.0);
        let r = resample(&w, 16_000).unwrap();
        assert_eq!(r.samples.len(), 16_000);
        assert_eq!(r.rate, 16_000);
    }

    #[test]
    fn resample_rejects_empty_input() {
        let w = Waveform::new(vec![], 8_000);
        assert!(resample(&w, 16_000).is_err());
    }

    // FFT-peak oracle: the resampled 440 Hz tone keeps its spectral peak.
    #[test]
    fn resample_preserves_tone_frequency() {
        let w = tone(440.0, 44_100, 1.0);
        let r = resample(&w, 16_000).unwrap();
        let n_fft = 16_384;
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let mut buf: Vec<Complex<f64>> = r
            .samples
            .iter()
            .take(n_fft)
            .map(|v| Complex::new(*v, 0.0))
            .collect();
        buf.resize(n_fft, Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        let peak = (1..n_fft / 2)
            .max_by(|a, b| buf[*a].norm_sqr().partial_cmp(&buf[*b].norm_sqr()).unwrap())
            .unwrap();
        let bin_hz = 16_000.0 / n_fft as f64;
        let peak_hz = peak as f64 * bin_hz;
        assert!(
            (peak_hz - 440.0).abs() <= bin_hz,
            "peak at {peak_hz} Hz, expected 440 +- {bin_hz}"
        );
    }

    #[test]
    fn standardize_truncates_long_cycles() {
        let cfg = DspConfig::default();
        let w = tone(100.0, 16_000, 12.0);
        let out = standardize_duration(&w, &cfg).unwrap();
        assert_eq!(out.samples.len(), 128_000);
        assert_eq!(out.samples[..128_000], w.samples[..128_000]);
    }

    #[test]
    fn standardize_leaves_exact_duration_unchanged() {
        let cfg = DspConfig::default();
        let w = tone(100.0, 16_000, 8.0);
        let out = standardize_duration(&w, &cfg).unwrap();
        assert_eq!(out, w);
    }

    // crossfade of equal constants is the constant
    #[test]
    fn standardize_constant_cycle_stays_constant() {
        let cfg = DspConfig::default();
        let w = Waveform::new(vec![0.5; 3 * 16_000], 16_000);
        let out = standardize_duration(&w, &cfg).unwrap();
        assert_eq!(out.samples.len(), 128_000);
        for (i, v) in out.samples.iter().enumerate() {
            assert!((v - 0.5).abs() < 1e-12, "sample {i} = {v}");
        }
    }

    #[test]
    fn standardize_is_idempotent() {
        let cfg = DspConfig::default();
        let w = tone(250.0, 16_000, 3.3);
        let once = standardize_duration(&w, &cfg).unwrap();
        let twice = standardize_duration(&once, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn logmel_default_geometry_is_128_by_798() {
        let cfg = DspConfig::default();
        let w = tone(440.0, 16_000, 8.0);
        let spec = logmel_fbank(&w, &cfg).unwrap();
        assert_eq!(spec.n_mels, 128);
        assert_eq!(spec.n_frames, 798);
    }

    #[test]
    fn logmel_single_window_gives_one_frame() {
        let cfg = DspConfig::default();
        let w = Waveform::new(vec![0.1; 400], 16_000);
        let spec = logmel_fbank(&w, &cfg).unwrap();
        assert_eq!(spec.n_frames, 1);
    }

    #[test]
    fn logmel_rejects_input_shorter_than_window() {
        let cfg = DspConfig::default();
        let w = Waveform::new(vec![0.1; 399], 16_000);
        assert!(logmel_fbank(&w, &cfg).is_err());
    }

    #[test]
    fn logmel_silence_hits_the_log_floor() {
        let cfg = DspConfig::default();
        let w = Waveform::new(vec![0.0; 16_000], 16_000);
        let spec = logmel_fbank(&w, &cfg).unwrap();
        let expected = LOG_FLOOR.ln();
        for v in &spec.values {
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn logmel_is_monotone_under_gain() {
        let cfg = DspConfig::default();
        let w = tone(440.0, 16_000, 1.0);
        let spec = logmel_fbank(&w, &cfg).unwrap();
        let louder = Waveform::new(w.samples.iter().map(|v| v * 2.0).collect(), w.rate);
        let spec2 = logmel_fbank(&louder, &cfg).unwrap();
        for (a, b) in spec.values.iter().zip(&spec2.values) {
            assert!(b >= a);
        }
    }

    #[test]
    fn frame_count_law_holds() {
        let cfg = DspConfig::default();
        let ex = FbankExtractor::new(&cfg).unwrap();
        for n in [400usize, 401, 559, 560, 16_000, 128_000] {
            let expected = (n - 400) / 160 + 1;
            assert_eq!(ex.frame_count(n), Some(expected), "n = {n}");
        }
        assert_eq!(ex.frame_count(128_000), Some(798));
        assert_eq!(ex.frame_count(399), None);
    }

    #[test]
    fn normalize_maps_mean_to_zero() {
        let cfg = DspConfig::default();
        let spec = Spectrogram::new(vec![-4.27; 12], 3, 4);
        let out = normalize(&spec, &cfg).unwrap();
        assert!(out.normalized);
        assert!(out.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn normalize_known_value() {
        let cfg = DspConfig::default();
        let spec = Spectrogram::new(vec![4.87], 1, 1);
        let out = normalize(&spec, &cfg).unwrap();
        assert!((out.values[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_twice_is_an_error() {
        let cfg = DspConfig::default();
        let spec = Spectrogram::new(vec![0.0; 4], 2, 2);
        let once = normalize(&spec, &cfg).unwrap();
        assert!(normalize(&once, &cfg).is_err());
    }

    #[test]
    fn normalize_round_trips() {
        let cfg = DspConfig::default();
        let w = tone(440.0, 16_000, 1.0);
        let spec = logmel_fbank(&w, &cfg).unwrap();
        let back = denormalize(&normalize(&spec, &cfg).unwrap(), &cfg).unwrap();
        for (a, b) in spec.values.iter().zip(&back.values) {
            let rel = (a - b).abs() / a.abs().max(1e-12);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn plain_std_normalization_is_selectable() {
        let cfg = DspConfig { norm_double_std: false, ..DspConfig::default() };
        let spec = Spectrogram::new(vec![0.3], 1, 1);
        let out = normalize(&spec, &cfg).unwrap();
        assert!((out.values[0] - (0.3 + 4.27) / 4.57).abs() < 1e-12);
    }
}
