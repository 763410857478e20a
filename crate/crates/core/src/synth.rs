//! Synthetic ICBHI-style dataset generator. Classes are acoustically
//! encoded so a small model can separate them: normal is band-limited
//! noise, crackle adds an impulse train, wheeze adds a sustained tone,
//! both adds both. Deterministic for a given (n_patients, cycles, seed).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::ingest::{
    build_index, derive_label, format_annotations, write_wav, AudioSource, CycleAnnotation,
    DatasetIndex, Label, RecordingDecl, Split,
};

pub const SYNTH_RATE: u32 = 16_000;
const NOISE_AMP: f64 = 0.05;
const TONE_AMP: f64 = 0.4;
const IMPULSE_AMP: f64 = 0.8;

fn synth_cycle(label: Label, duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (duration_s * SYNTH_RATE as f64).round() as usize;
    let mut samples = vec![0.0; n];
    // band-limited noise base: white noise through a one-pole lowpass
    let mut state = 0.0;
    let alpha = 0.2;
    for s in samples.iter_mut() {
        let white: f64 = rng.gen_range(-1.0..1.0);
        state += alpha * (white - state);
        *s = NOISE_AMP * state;
    }
    let tonal = matches!(label, Label::Wheeze | Label::Both);
    let impulsive = matches!(label, Label::Crackle | Label::Both);
    if tonal {
        let freq = rng.gen_range(400.0..800.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for (i, s) in samples.iter_mut().enumerate() {
            *s += TONE_AMP
                * (std::f64::consts::TAU * freq * i as f64 / SYNTH_RATE as f64 + phase).sin();
        }
    }
    if impulsive {
        // sharp decaying clicks every 60..120 ms
        let mut t = rng.gen_range(0..SYNTH_RATE as usize / 10);
        while t < n {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for k in 0..32.min(n - t) {
                samples[t + k] += sign * IMPULSE_AMP * (-(k as f64) / 6.0).exp();
            }
            t += rng.gen_range(
                (0.06 * SYNTH_RATE as f64) as usize..(0.12 * SYNTH_RATE as f64) as usize,
            );
        }
    }
    samples
}

/// In-memory recordings plus the assembled, patient-disjoint index.
/// `synth_dataset(a, b, s)` is a pure function of its arguments.
pub fn synth_dataset(
    n_patients: usize,
    cycles_per_patient: usize,
    seed: u64,
) -> Result<DatasetIndex> {
    if n_patients < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 patients, got {n_patients}"
        )));
    }
    if cycles_per_patient == 0 {
        return Err(Error::Config("cycles_per_patient must be positive".into()));
    }
    let n_train_patients = (n_patients * 3).div_ceil(5).max(1).min(n_patients - 1);
    let mut recordings = Vec::with_capacity(n_patients);
    let mut split = BTreeMap::new();
    for p in 0..n_patients {
        let patient_id = 100 + p as u32;
        let recording_id = format!("{patient_id}_synth");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9e37_79b9));
        let mut samples = Vec::new();
        let mut annotations = Vec::with_capacity(cycles_per_patient);
        for c in 0..cycles_per_patient {
            let label = Label::from_class_id((p + c) % 4)?;
            let duration = rng.gen_range(1.5..4.0);
            let start_s = samples.len() as f64 / SYNTH_RATE as f64;
            samples.extend(synth_cycle(label, duration, &mut rng));
            let end_s = samples.len() as f64 / SYNTH_RATE as f64;
            let (crackle, wheeze) = match label {
                Label::Normal => (false, false),
                Label::Crackle => (true, false),
                Label::Wheeze => (false, true),
                Label::Both => (true, true),
            };
            debug_assert_eq!(derive_label(crackle, wheeze), label);
            annotations.push(CycleAnnotation { start_s, end_s, crackle, wheeze });
        }
        split.insert(
            recording_id.clone(),
            if p < n_train_patients { Split::Train } else { Split::Test },
        );
        recordings.push(RecordingDecl {
            recording_id,
            patient_id,
            audio: AudioSource::Memory(Arc::new(Waveform::new(samples, SYNTH_RATE))),
            annotations,
        });
    }
    build_index(recordings, &split)
}

/// Materialize a synthetic dataset as an ICBHI-format directory tree
/// (audio/*.wav, annotations/*.txt, split.csv).
pub fn synth_to_dir(
    root: &Path,
    n_patients: usize,
    cycles_per_patient: usize,
    seed: u64,
) -> Result<DatasetIndex> {
    let index = synth_dataset(n_patients, cycles_per_patient, seed)?;
    let audio_dir = root.join("audio");
    let ann_dir = root.join("annotations");
    std::fs::create_dir_all(&audio_dir)?;
    std::fs::create_dir_all(&ann_dir)?;
    let mut split_csv = String::from("recording_id,split\n");
    let mut per_recording: BTreeMap<String, (Vec<CycleAnnotation>, &AudioSource, Split)> =
        BTreeMap::new();
    for it in &index.items {
        let entry = per_recording
            .entry(it.meta.recording_id.clone())
            .or_insert_with(|| (Vec::new(), &it.audio, it.meta.split));
        entry.0.push(it.annotation);
    }
    for (id, (anns, audio, split)) in &per_recording {
        let wave = audio.load()?;
        write_wav(&audio_dir.join(format!("{id}.wav")), &wave)?;
        std::fs::write(ann_dir.join(format!("{id}.txt")), format_annotations(anns))?;
        split_csv.push_str(&format!("{},{}\n", id, split.as_str()));
    }
    std::fs::write(root.join("split.csv"), split_csv)?;
    Ok(index)
}
