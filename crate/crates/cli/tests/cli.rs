//! End-to-end CLI checks: synth -> prepare -> features -> train -> eval ->
//! report on a small synthetic tree, plus exit-code mapping.

use std::path::Path;
use std::process::Command;

fn patchmix(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_patchmix"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("failed to launch patchmix")
}

const TINY: &[&str] = &[
    "--set", "dsp.target_duration_s=2",
    "--set", "specaugment.time_mask_max=40",
    "--set", "specaugment.freq_mask_max=24",
    "--set", "encoder.patch_size=16",
    "--set", "encoder.patch_stride=16",
    "--set", "encoder.d_model=16",
    "--set", "encoder.n_layers=1",
    "--set", "encoder.n_heads=2",
    "--set", "encoder.mlp_ratio=2",
    "--set", "encoder.proj_dim=16",
    "--set", "train.batch_size=16",
    "--set", "train.epochs=3",
    "--set", "train.eval_every=1",
];

#[test]
fn full_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();

    let out = patchmix(&["synth", "--root", "data", "--patients", "5", "--cycles", "4", "--seed", "9"], cwd);
    assert!(out.status.success(), "synth: {}", String::from_utf8_lossy(&out.stderr));
    assert!(cwd.join("data/split.csv").is_file());
    assert!(cwd.join("data/audio").is_dir());
    assert!(cwd.join("data/annotations").is_dir());

    let mut prepare_args = vec!["prepare", "--root", "data"];
    prepare_args.extend_from_slice(&TINY[..2 * 2]); // dsp keys only
    let out = patchmix(&prepare_args, cwd);
    assert!(out.status.success(), "prepare: {}", String::from_utf8_lossy(&out.stderr));
    let index = std::fs::read_to_string(cwd.join("data/prepared/index.csv")).unwrap();
    assert!(index.starts_with("recording_id,cycle_idx,start_s,end_s,label,split\n"));
    assert_eq!(index.lines().count(), 1 + 20);
    assert!(cwd.join("data/prepared/features").read_dir().unwrap().count() == 20);

    let out = patchmix(
        &["features", "--root", "data", "--out", "feats", "--set", "dsp.target_duration_s=2"],
        cwd,
    );
    assert!(out.status.success(), "features: {}", String::from_utf8_lossy(&out.stderr));
    // dumps carry the documented header
    let one = std::fs::read_dir(cwd.join("feats")).unwrap().next().unwrap().unwrap().path();
    let bytes = std::fs::read(&one).unwrap();
    assert_eq!(&bytes[..8], b"PMSPEC01");
    let n_mels = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n_frames = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    assert_eq!(n_mels, 128);
    assert_eq!(bytes.len(), 16 + (n_mels * n_frames * 4) as usize);

    let mut train_args = vec!["train", "--root", "data", "--seed", "0"];
    train_args.extend_from_slice(TINY);
    let out = patchmix(&train_args, cwd);
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("aggregate over 1 seeds"), "{stdout}");
    let runs: Vec<_> = std::fs::read_dir(cwd.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let ckpt = runs.iter().find(|p| p.extension().map(|e| e == "pmckpt").unwrap_or(false)).unwrap();

    let out = patchmix(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--root", "data", "--split", "test"], cwd);
    assert!(out.status.success(), "eval: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("score = "), "{stdout}");

    let out = patchmix(&["report", "--runs", "runs", "--plot", "scores.svg"], cwd);
    assert!(out.status.success(), "report: {}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(cwd.join("scores.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("polyline"));
}

#[test]
fn train_is_reproducible_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let out = patchmix(&["synth", "--root", "data", "--patients", "4", "--cycles", "3", "--seed", "1"], cwd);
    assert!(out.status.success());
    let run = |out_dir: &str| {
        let mut args = vec!["train", "--root", "data", "--seed", "7"];
        args.extend_from_slice(TINY);
        args.extend_from_slice(&["--set", "train.eval_every=0"]);
        let out_key = format!("train.out_dir={out_dir}");
        let mut args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        args.push("--set".into());
        args.push(out_key);
        let out = Command::new(env!("CARGO_BIN_EXE_patchmix"))
            .args(&args)
            .current_dir(cwd)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("runs_a");
    run("runs_b");
    let record = |d: &str| {
        let path = std::fs::read_dir(cwd.join(d))
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.to_str().unwrap().ends_with("seed7.json"))
            .unwrap();
        std::fs::read_to_string(path).unwrap()
    };
    assert_eq!(record("runs_a"), record("runs_b"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    // config error -> 2
    let out = patchmix(&["train", "--synthetic", "--set", "train.lr=-1"], cwd);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    // unknown key -> 2
    let out = patchmix(&["train", "--synthetic", "--set", "bogus.key=1"], cwd);
    assert_eq!(out.status.code(), Some(2));
    // missing data -> 3
    let out = patchmix(&["prepare", "--root", "nonexistent"], cwd);
    assert_eq!(out.status.code(), Some(3));
    // train without a source -> 2
    let out = patchmix(&["train"], cwd);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synthetic_training_needs_no_dataset_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let mut args = vec![
        "train",
        "--synthetic",
        "--seed",
        "0",
        "--set",
        "synth.patients=4",
        "--set",
        "synth.cycles=3",
    ];
    args.extend_from_slice(TINY);
    let out = patchmix(&args, cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cwd.join("runs").is_dir());
}
