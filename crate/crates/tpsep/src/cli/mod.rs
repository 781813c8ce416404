//! Command-line entry point: synthesis, training, evaluation, separation
//! and per-stage inspection. Every command is deterministic given its
//! flags; all randomness flows from explicit seeds.

pub mod spectrogram;

use crate::audio::{build_dataset, read_wav, write_dataset, write_wav, DatasetParams, Waveform};
use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::model::{multistage_forward, node_waveform, waveform_node, ModelConfig};
use crate::train::{evaluate_checkpoint, train_run, Checkpoint, TrainConfig, TrainMode};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use spectrogram::write_spectrogram;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "tpsep", version, about = "Multi-stage triple-path source separation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (scenes + manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        num: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 8000)]
        sr: u32,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 2)]
        speakers: usize,
        #[arg(long = "snr-min", default_value_t = -6.0, allow_hyphen_values = true)]
        snr_min: f64,
        #[arg(long = "snr-max", default_value_t = 3.0, allow_hyphen_values = true)]
        snr_max: f64,
        #[arg(long = "t60-min", default_value_t = 0.1)]
        t60_min: f64,
        #[arg(long = "t60-max", default_value_t = 0.4)]
        t60_max: f64,
        /// Disable reverberation (noise-only mixtures, m == s).
        #[arg(long = "no-reverb")]
        no_reverb: bool,
    },
    /// Train a model; writes best/final checkpoints and the curve CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "model-config")]
        model_config: PathBuf,
        /// single (parameter-matched baseline) or multi (staged).
        #[arg(long)]
        mode: String,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset; writes a JSON metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Separate a mixture WAV into per-speaker estimates.
    Separate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode every stage of a mixture and render spectrograms.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments and runs; returns the process exit code. Errors are a
/// single line on stderr.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", e.render());
                return 0;
            }
            let rendered = e.render().to_string();
            let line = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("error: bad arguments");
            eprintln!("{}", line);
            return 1;
        }
    };
    crate::tune_allocator();
    match execute(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            1
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            num,
            seed,
            sr,
            duration,
            speakers,
            snr_min,
            snr_max,
            t60_min,
            t60_max,
            no_reverb,
        } => {
            if num == 0 {
                return Err(Error::Config("--num must be positive".into()));
            }
            if snr_max < snr_min {
                return Err(Error::Config("--snr-max must be >= --snr-min".into()));
            }
            if t60_max < t60_min || t60_min <= 0.0 {
                return Err(Error::Config("--t60-min/--t60-max must be positive and ordered".into()));
            }
            let scenes = build_dataset(&DatasetParams {
                num_scenes: num,
                num_speakers: speakers,
                duration,
                sample_rate: sr,
                snr_range: (snr_min, snr_max),
                t60_range: (t60_min, t60_max),
                reverb_enabled: !no_reverb,
                seed,
            })?;
            write_dataset(&scenes, &out)?;
            println!("wrote {} scenes to {}", num, out.display());
            Ok(())
        }
        Command::Train {
            data,
            model_config,
            mode,
            epochs,
            seed,
            out,
        } => {
            let model = ModelConfig::from_json_file(&model_config)?;
            let mode: TrainMode = mode.parse()?;
            let cfg = TrainConfig {
                epochs,
                seed,
                mode,
                log_progress: true,
                ..TrainConfig::desk_default(data, model)
            };
            let result = train_run(&cfg)?;
            std::fs::create_dir_all(&out)?;
            result.best.save(&out.join("best.ckpt"))?;
            result.fin.save(&out.join("final.ckpt"))?;
            result.curve.write_csv(&out.join("curve.csv"))?;
            println!("wrote checkpoints and curve to {}", out.display());
            Ok(())
        }
        Command::Eval { ckpt, data, report } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let metrics = evaluate_checkpoint(&checkpoint, &data)?;
            if let Some(parent) = report.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&report, serde_json::to_string_pretty(&metrics)?)?;
            println!(
                "evaluated {} items: SI-SNRi {:.2} dB, SDRi(plain) {:.2} dB",
                metrics.num_items, metrics.si_snri_mean, metrics.sdri_plain_mean
            );
            Ok(())
        }
        Command::Separate { ckpt, input, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let wave = read_input(&checkpoint, &input)?;
            let ests = crate::model::separate(&checkpoint.model, &wave)?;
            std::fs::create_dir_all(&out)?;
            for (k, est) in ests.iter().enumerate() {
                write_wav(est, &out.join(format!("est_{}.wav", k)))?;
            }
            println!("wrote {} estimates to {}", ests.len(), out.display());
            Ok(())
        }
        Command::Inspect { ckpt, input, out } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let wave = read_input(&checkpoint, &input)?;
            inspect(&checkpoint, &wave, &out)
        }
    }
}

fn read_input(ckpt: &Checkpoint, path: &Path) -> Result<Waveform> {
    let wave = read_wav(path)?;
    if ckpt.sample_rate != 0 && wave.sample_rate != ckpt.sample_rate {
        return Err(Error::Audio(format!(
            "sample-rate mismatch: input is {} Hz but the model was trained at {} Hz",
            wave.sample_rate, ckpt.sample_rate
        )));
    }
    Ok(wave)
}

/// Decodes every stage through the shared decoder and writes one WAV plus
/// one spectrogram per decoded signal, and the input spectrogram.
fn inspect(ckpt: &Checkpoint, wave: &Waveform, out: &Path) -> Result<()> {
    let cfg = &ckpt.model.cfg;
    let mut g = Graph::<f32>::new();
    let bound = ckpt.model.bind(&mut g, false);
    let input = waveform_node(&mut g, wave);
    let outputs = multistage_forward(&mut g, input, &bound, cfg, true)?;

    std::fs::create_dir_all(out)?;
    let mut artifacts: Vec<(String, Waveform)> = Vec::new();
    if let Some(zhat) = outputs.zhat {
        artifacts.push(("stage1_z".into(), node_waveform(&g, zhat, wave.sample_rate)));
    }
    if let Some(mhat) = &outputs.mhat {
        for (k, &id) in mhat.iter().enumerate() {
            artifacts.push((format!("stage2_m_{}", k), node_waveform(&g, id, wave.sample_rate)));
        }
    }
    for (k, &id) in outputs.shat.iter().enumerate() {
        artifacts.push((
            format!("stage{}_s_{}", cfg.stages, k),
            node_waveform(&g, id, wave.sample_rate),
        ));
    }
    for (name, w) in &artifacts {
        write_wav(w, &out.join(format!("{}.wav", name)))?;
        write_spectrogram(w, &out.join(format!("{}.pgm", name)))?;
    }
    write_spectrogram(wave, &out.join("input.pgm"))?;
    println!(
        "wrote {} stage signals and {} spectrograms to {}",
        artifacts.len(),
        artifacts.len() + 1,
        out.display()
    );
    Ok(())
}
