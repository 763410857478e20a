//! Parallel vs sequential throughput for the batch-level hot paths: the
//! DSP front-end over a set of cycles and evaluation-mode model forwards.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use patchmix_core::config::Config;
use patchmix_core::dsp::{cycle_features, FbankExtractor, Spectrogram, Waveform};
use patchmix_core::encoder::{patchify, Model};
use patchmix_core::parallel::{batch_map, batch_map_seq};

fn bench_config() -> Config {
    let mut cfg = Config::default();
    cfg.apply_overrides(&[
        "dsp.target_duration_s=2".into(),
        "encoder.patch_size=16".into(),
        "encoder.patch_stride=16".into(),
        "encoder.d_model=32".into(),
        "encoder.n_layers=2".into(),
        "encoder.mlp_ratio=2".into(),
        "encoder.proj_dim=32".into(),
    ])
    .unwrap();
    cfg
}

fn make_waves(n: usize) -> Vec<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            use rand::Rng;
            let secs = 1.5 + (i % 5) as f64 * 0.4;
            let len = (16_000.0 * secs) as usize;
            let samples = (0..len).map(|_| rng.gen_range(-0.2..0.2)).collect();
            Waveform::new(samples, 16_000)
        })
        .collect()
}

fn bench_dsp_batch(c: &mut Criterion) {
    let cfg = bench_config();
    let extractor = FbankExtractor::new(&cfg.dsp).unwrap();
    let waves = make_waves(32);
    let mut group = c.benchmark_group("dsp_batch");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let specs: Vec<_> =
                batch_map(&waves, |w| cycle_features(w, &extractor).unwrap());
            black_box(specs)
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let specs: Vec<_> =
                batch_map_seq(&waves, |w| cycle_features(w, &extractor).unwrap());
            black_box(specs)
        })
    });
    group.finish();
}

fn bench_eval_batch(c: &mut Criterion) {
    let cfg = bench_config();
    let extractor = FbankExtractor::new(&cfg.dsp).unwrap();
    let waves = make_waves(32);
    let specs: Vec<Spectrogram> =
        waves.iter().map(|w| cycle_features(w, &extractor).unwrap()).collect();
    let n_frames = extractor.frame_count(cfg.dsp.target_len()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(&cfg.encoder, cfg.dsp.n_mels, n_frames, &mut rng).unwrap();
    let mut group = c.benchmark_group("eval_batch");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let preds: Vec<_> = batch_map(&specs, |s| {
                let raw = patchify(s, &model.cfg).unwrap();
                model.forward_eval(&raw).unwrap().1
            });
            black_box(preds)
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let preds: Vec<_> = batch_map_seq(&specs, |s| {
                let raw = patchify(s, &model.cfg).unwrap();
                model.forward_eval(&raw).unwrap().1
            });
            black_box(preds)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_dsp_batch, bench_eval_batch);
criterion_main!(benches);
