//! `patchmix` — train and evaluate the Patch-Mix respiratory sound
//! classifier.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use patchmix_core::config::Config;
use patchmix_core::dsp::{cycle_features, FbankExtractor};
use patchmix_core::encoder::patchify;
use patchmix_core::error::{Error, Result};
use patchmix_core::ingest::{export_index, extract_cycle, load_dataset_dir, verify_index, Split};
use patchmix_core::metrics::RunRecord;
use patchmix_core::parallel;
use patchmix_core::specio::write_spectrogram;
use patchmix_core::synth::{synth_dataset, synth_to_dir};
use patchmix_core::trainer::{evaluate_checkpoint, run_multi_seed_full, RunFile};

#[derive(Parser)]
#[command(name = "patchmix", version, about = "Patch-Mix contrastive learning for respiratory sounds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the dataset index and feature cache for a dataset directory.
    Prepare {
        /// Dataset root (audio/, annotations/, split.csv).
        #[arg(long)]
        root: PathBuf,
        /// Output directory (defaults to <root>/prepared).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config overrides, e.g. --set dsp.target_duration_s=2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write normalized log-Mel spectrogram dumps for every cycle.
    Features {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a synthetic ICBHI-format dataset directory.
    Synth {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 10)]
        patients: usize,
        #[arg(long, default_value_t = 8)]
        cycles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train (multi-seed) and write run records plus checkpoints.
    Train {
        /// Key-value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Train on an in-memory synthetic dataset (synth.* config keys).
        #[arg(long)]
        synthetic: bool,
        /// Dataset root; required unless --synthetic.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Aggregate run records from a directory; optionally plot scores.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Write a score-vs-epoch SVG (needs train.eval_every > 0 runs).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::parse(&std::fs::read_to_string(p)?)?,
        None => Config::default(),
    };
    cfg.apply_overrides(overrides)?;
    Ok(cfg)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Prepare { root, out, set } => {
            let cfg = load_config(&None, &set)?;
            let index = load_dataset_dir(&root)?;
            verify_index(&index)?;
            let out = out.unwrap_or_else(|| root.join("prepared"));
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("index.csv"), export_index(&index))?;
            let feature_dir = out.join("features");
            write_feature_dumps(&cfg, &index, &feature_dir)?;
            for (rec, cycle) in &index.skipped_short {
                eprintln!("skipped sub-window cycle {cycle} of {rec}");
            }
            println!(
                "prepared {} cycles ({} train / {} test) into {}",
                index.items.len(),
                index.train_counts.iter().sum::<u64>(),
                index.test_counts.iter().sum::<u64>(),
                out.display()
            );
            Ok(())
        }
        Cmd::Features { root, out, set } => {
            let cfg = load_config(&None, &set)?;
            let index = load_dataset_dir(&root)?;
            std::fs::create_dir_all(&out)?;
            let n = write_feature_dumps(&cfg, &index, &out)?;
            println!("wrote {n} spectrograms to {}", out.display());
            Ok(())
        }
        Cmd::Synth { root, patients, cycles, seed } => {
            let index = synth_to_dir(&root, patients, cycles, seed)?;
            println!(
                "wrote {} recordings / {} cycles to {}",
                patients,
                index.items.len(),
                root.display()
            );
            Ok(())
        }
        Cmd::Train { config, seed, synthetic, root, set } => {
            let mut cfg = load_config(&config, &set)?;
            if let Some(s) = seed {
                cfg.train.seeds = vec![s];
            }
            let index = if synthetic {
                synth_dataset(cfg.synth.patients, cfg.synth.cycles, cfg.synth.seed)?
            } else {
                let root = root.ok_or_else(|| {
                    Error::Config("either --root or --synthetic is required".into())
                })?;
                load_dataset_dir(&root)?
            };
            verify_index(&index)?;
            let (outcome, mut models) = run_multi_seed_full(&cfg, &index)?;
            let out_dir = PathBuf::from(&cfg.train.out_dir);
            std::fs::create_dir_all(&out_dir)?;
            for (run, model) in outcome.runs.iter().zip(models.iter_mut()) {
                let stem = format!("{}-seed{}", outcome.fingerprint, run.seed);
                model.save(&out_dir.join(format!("{stem}.pmckpt")))?;
                let file = RunFile { fingerprint: outcome.fingerprint.clone(), run: run.clone() };
                std::fs::write(
                    out_dir.join(format!("{stem}.json")),
                    serde_json::to_string_pretty(&file)
                        .map_err(|e| Error::Data(e.to_string()))?,
                )?;
                println!("seed {}:", run.seed);
                print!("{}", run.record.to_kv());
            }
            std::fs::write(
                out_dir.join(format!("{}-aggregate.json", outcome.fingerprint)),
                serde_json::to_string_pretty(&outcome.aggregate)
                    .map_err(|e| Error::Data(e.to_string()))?,
            )?;
            println!("aggregate over {} seeds:", outcome.runs.len());
            print!("{}", outcome.aggregate.to_kv());
            println!("wall clock: {:.1}s", outcome.wall_clock_s);
            println!("run files in {}", out_dir.display());
            Ok(())
        }
        Cmd::Eval { ckpt, root, split } => {
            let split = Split::parse(&split)?;
            let index = load_dataset_dir(&root)?;
            verify_index(&index)?;
            let (report, conf) = evaluate_checkpoint(&ckpt, &index, split)?;
            let record = RunRecord::new(&report, conf.total(), 0);
            print!("{}", record.to_kv());
            println!("accuracy = {:.2}", conf.accuracy() * 100.0);
            Ok(())
        }
        Cmd::Report { runs, plot } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&runs)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension().map(|e| e == "json").unwrap_or(false)
                        && p.file_name()
                            .and_then(|n| n.to_str())
                            .map(|n| n.contains("-seed"))
                            .unwrap_or(false)
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Data(format!(
                    "{}: no run records (*-seed*.json)",
                    runs.display()
                )));
            }
            let mut records = Vec::new();
            let mut run_files = Vec::new();
            for path in &files {
                let file: RunFile = serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
                records.push(file.run.record);
                run_files.push(file);
            }
            let agg = patchmix_core::metrics::aggregate(&records)?;
            println!("aggregated {} runs from {}", records.len(), runs.display());
            print!("{}", agg.to_kv());
            if let Some(svg_path) = plot {
                let with_scores: Vec<&RunFile> =
                    run_files.iter().filter(|f| !f.run.epoch_scores.is_empty()).collect();
                if with_scores.is_empty() {
                    return Err(Error::Data(
                        "no per-epoch scores recorded; rerun training with train.eval_every > 0"
                            .into(),
                    ));
                }
                std::fs::write(&svg_path, score_plot_svg(&with_scores))?;
                println!("plot written to {}", svg_path.display());
            }
            Ok(())
        }
    }
}

fn write_feature_dumps(
    cfg: &Config,
    index: &patchmix_core::ingest::DatasetIndex,
    dir: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let extractor = FbankExtractor::new(&cfg.dsp)?;
    let outputs: Vec<Result<()>> = parallel::batch_map(&index.items, |item| {
        let wave = item.audio.load()?;
        let cycle = extract_cycle(&wave, &item.annotation)?;
        let spec = cycle_features(&cycle, &extractor)?;
        // geometry check: the patch grid must be non-empty for training
        patchify(&spec, &cfg.encoder)?;
        let name = format!("{}_{}.pmspec", item.meta.recording_id, item.cycle_idx);
        write_spectrogram(&dir.join(name), &spec)
    });
    let mut n = 0;
    for out in outputs {
        out?;
        n += 1;
    }
    Ok(n)
}

/// Minimal SVG: one score-vs-epoch polyline per seed.
fn score_plot_svg(runs: &[&RunFile]) -> String {
    let (w, h, margin) = (640.0, 400.0, 48.0);
    let max_epoch = runs
        .iter()
        .flat_map(|r| r.run.epoch_scores.iter().map(|(e, _)| *e))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let x = |epoch: f64| margin + (w - 2.0 * margin) * epoch / max_epoch;
    let y = |score: f64| h - margin - (h - 2.0 * margin) * score.clamp(0.0, 1.0);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{yb}\" x2=\"{xr}\" y2=\"{yb}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{yb}\" stroke=\"black\"/>\n\
         <text x=\"{xmid}\" y=\"{ylab}\" text-anchor=\"middle\" font-size=\"13\">epoch</text>\n\
         <text x=\"14\" y=\"{ymid}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 {ymid})\">score</text>\n",
        m = margin,
        yb = h - margin,
        xr = w - margin,
        xmid = w / 2.0,
        ylab = h - 10.0,
        ymid = h / 2.0,
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\" font-size=\"11\">{tick:.2}</text>\n",
            tx = margin - 6.0,
            ty = y(tick) + 4.0,
        ));
    }
    for (i, file) in runs.iter().enumerate() {
        let color = palette[i % palette.len()];
        let points: Vec<String> = file
            .run
            .epoch_scores
            .iter()
            .map(|(e, s)| format!("{:.1},{:.1}", x(*e as f64), y(*s)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{tx}\" y=\"{ty}\" font-size=\"11\" fill=\"{color}\">seed {}</text>\n",
            file.run.seed,
            tx = w - margin + 4.0,
            ty = margin + 14.0 * i as f64,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
