//! Deterministic end-to-end training and evaluation.

use super::checkpoint::Checkpoint;
use super::curve::{EpochRecord, LearningCurve};
use super::optim::{clip_global_norm, Adam};
use crate::audio::{load_scene, read_manifest, MixtureScene};
use crate::diff::{Graph, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::{multistage_forward, waveform_node, ModelConfig, MultiStageParams};
use crate::objective::{aggregate, best_perm_si_snr, eval_metrics, stage_weights, total_loss, MetricsReport, StageWeights};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// One sub-network with all repeats (parameter-matched baseline).
    Single,
    /// Staged sub-networks with per-stage losses.
    Multi,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(TrainMode::Single),
            "multi" => Ok(TrainMode::Multi),
            other => Err(Error::Config(format!("mode must be single or multi, got {:?}", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub data_dir: PathBuf,
    pub model: ModelConfig,
    /// Fraction of scenes held out for validation (taken from the end of
    /// the manifest). Zero validates on the training set.
    pub val_fraction: f64,
    pub log_progress: bool,
}

impl TrainConfig {
    pub fn desk_default(data_dir: PathBuf, model: ModelConfig) -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 2,
            learning_rate: 1e-3,
            grad_clip_norm: 5.0,
            seed: 0,
            mode: TrainMode::Multi,
            data_dir,
            model,
            val_fraction: 0.0,
            log_progress: false,
        }
    }

    /// The architecture actually trained: single mode folds every stage's
    /// repeats into one sub-network to match parameter count.
    pub fn effective_model(&self) -> ModelConfig {
        match self.mode {
            TrainMode::Multi => self.model.clone(),
            TrainMode::Single => self.model.single_stage_matched(),
        }
    }
}

#[derive(Debug)]
pub struct TrainResult {
    pub best: Checkpoint,
    pub fin: Checkpoint,
    pub curve: LearningCurve,
}

/// Forward + loss + backward for one scene; returns the total loss and
/// gradients in parameter traversal order.
fn step_example<T: Scalar>(
    model: &MultiStageParams<T>,
    scene: &MixtureScene,
    w: &StageWeights,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::<T>::new();
    let bound = model.bind(&mut g, true);
    let input = waveform_node(&mut g, &scene.y);
    let outputs = multistage_forward(&mut g, input, &bound, &model.cfg, true)?;
    let (loss_node, report) = total_loss(&mut g, &outputs, scene, w, model.cfg.stages)?;
    let grads_map = g.backward(loss_node)?;
    let mut grads = Vec::new();
    bound.for_each_named(&mut |_, &id| {
        grads.push(grads_map.grad_or_zeros(id, g.shape(id)));
    });
    Ok((report.total, grads))
}

/// Mean best-permutation SI-SNR of final-stage estimates over a scene set.
fn validation_si_snr<T: Scalar>(model: &MultiStageParams<T>, scenes: &[&MixtureScene]) -> Result<f64> {
    let mut acc = 0.0;
    for scene in scenes {
        let ests = crate::model::separate(model, &scene.y)?;
        acc += best_perm_si_snr(&ests, &scene.s)?;
    }
    Ok(acc / scenes.len().max(1) as f64)
}

/// Mean total loss of a model over scenes without updating anything.
pub fn static_loss<T: Scalar>(
    model: &MultiStageParams<T>,
    scenes: &[MixtureScene],
    w: &StageWeights,
) -> Result<f64> {
    let mut acc = 0.0;
    for scene in scenes {
        let mut g = Graph::<T>::new();
        let bound = model.bind(&mut g, false);
        let input = waveform_node(&mut g, &scene.y);
        let outputs = multistage_forward(&mut g, input, &bound, &model.cfg, true)?;
        let (_, report) = total_loss(&mut g, &outputs, scene, w, model.cfg.stages)?;
        acc += report.total;
    }
    Ok(acc / scenes.len().max(1) as f64)
}

fn shuffle_seed(seed: u64) -> u64 {
    seed ^ 0x5364_75fa_11e9_0b21
}

/// Joint end-to-end training. Deterministic for a fixed config.
pub fn train_run(cfg: &TrainConfig) -> Result<TrainResult> {
    train_run_from(cfg, None)
}

/// Training continued from a checkpoint; `None` starts fresh. Resuming a
/// saved run reproduces the uninterrupted run's losses exactly.
pub fn train_run_from(cfg: &TrainConfig, resume: Option<Checkpoint>) -> Result<TrainResult> {
    crate::tune_allocator();
    let effective = cfg.effective_model();
    effective.validate()?;
    let records = read_manifest(&cfg.data_dir)?;
    let mut scenes = Vec::with_capacity(records.len());
    for r in &records {
        scenes.push(load_scene(r, &cfg.data_dir)?);
    }
    for scene in &scenes {
        if scene.s.len() != effective.num_speakers {
            return Err(Error::Train(format!(
                "dataset has {} speakers but the model expects {}",
                scene.s.len(),
                effective.num_speakers
            )));
        }
    }

    let data_sample_rate = scenes[0].y.sample_rate;
    let n_val = ((scenes.len() as f64) * cfg.val_fraction).ceil() as usize;
    let n_val = n_val.min(scenes.len().saturating_sub(1));
    let split = scenes.len() - n_val;
    let train_scenes: Vec<&MixtureScene> = scenes[..split].iter().collect();
    let val_scenes: Vec<&MixtureScene> = if n_val == 0 {
        scenes.iter().collect()
    } else {
        scenes[split..].iter().collect()
    };

    let (mut model, mut adam, mut shuffle_rng, start_epoch) = match resume {
        Some(ck) => {
            if ck.model.cfg != effective {
                return Err(Error::Train(format!(
                    "checkpoint config {:?} does not match requested {:?}",
                    ck.model.cfg, effective
                )));
            }
            let adam = ck.opt.clone().unwrap_or_else(|| Adam::new(&ck.model, cfg.learning_rate));
            let rng = ck
                .shuffle_rng
                .clone()
                .unwrap_or_else(|| ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed)));
            (ck.model, adam, rng, ck.epoch)
        }
        None => {
            let model = MultiStageParams::<f32>::init(&effective, cfg.seed)?;
            let adam = Adam::new(&model, cfg.learning_rate);
            let rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed));
            (model, adam, rng, 0)
        }
    };

    let started = Instant::now();
    let mut curve = LearningCurve::default();
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in start_epoch..cfg.epochs {
        let w = stage_weights(epoch);
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut num_batches = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let mut grad_sum: Option<Vec<Tensor<f32>>> = None;
            let mut loss_sum = 0.0;
            for &scene_idx in batch {
                let (loss, grads) = step_example(&model, train_scenes[scene_idx], &w)
                    .map_err(|e| Error::Train(format!("epoch {} batch {}: {}", epoch, batch_idx, e)))?;
                if !loss.is_finite() {
                    return Err(Error::Train(format!(
                        "non-finite loss at epoch {} batch {} (scene {})",
                        epoch, batch_idx, scene_idx
                    )));
                }
                loss_sum += loss;
                grad_sum = Some(match grad_sum {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (av, &gv) in a.data_mut().iter_mut().zip(g.data()) {
                                *av += gv;
                            }
                        }
                        acc
                    }
                });
            }
            let mut grads = grad_sum.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f32;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            adam.step(&mut model, &grads);
            epoch_loss += loss_sum / batch.len() as f64;
            num_batches += 1;
        }

        let train_loss = epoch_loss / num_batches.max(1) as f64;
        let val = validation_si_snr(&model, &val_scenes)?;
        if cfg.log_progress {
            println!(
                "epoch {:4}  alpha {:.4}  train_loss {:+9.3}  val_si_snr {:+8.3} dB",
                epoch, w.alpha, train_loss, val
            );
        }
        curve.push(EpochRecord {
            epoch,
            alpha: w.alpha,
            beta: w.beta,
            train_loss,
            val_si_snr: val,
            wall_seconds: started.elapsed().as_secs_f64(),
        });

        if best.as_ref().map(|(b, _)| val > *b).unwrap_or(true) {
            best = Some((
                val,
                Checkpoint {
                    model: model.clone(),
                    opt: Some(adam.clone()),
                    epoch: epoch + 1,
                    shuffle_rng: Some(shuffle_rng.clone()),
                    sample_rate: data_sample_rate,
                },
            ));
        }
    }

    let fin = Checkpoint {
        model,
        opt: Some(adam),
        epoch: cfg.epochs,
        shuffle_rng: Some(shuffle_rng),
        sample_rate: data_sample_rate,
    };
    let best = best.map(|(_, ck)| ck).unwrap_or_else(|| fin.clone());
    Ok(TrainResult { best, fin, curve })
}

/// Runs the final-stage forward pass on every manifest item and aggregates
/// SI-SNRi / SDRi.
pub fn evaluate_model(model: &MultiStageParams<f32>, data_dir: &Path) -> Result<MetricsReport> {
    crate::tune_allocator();
    let records = read_manifest(data_dir)?;
    let mut per_item = Vec::with_capacity(records.len());
    for r in &records {
        let scene = load_scene(r, data_dir)?;
        if scene.s.len() != model.cfg.num_speakers {
            return Err(Error::Train(format!(
                "scene {} has {} speakers but the model expects {}",
                r.id,
                scene.s.len(),
                model.cfg.num_speakers
            )));
        }
        let ests = crate::model::separate(model, &scene.y)?;
        per_item.push(eval_metrics(&ests, &scene, &r.id)?);
    }
    Ok(aggregate(per_item))
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, data_dir: &Path) -> Result<MetricsReport> {
    evaluate_model(&ckpt.model, data_dir)
}
