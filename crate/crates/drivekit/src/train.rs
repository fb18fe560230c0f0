//! Imitation-learning trainer: L1 waypoint loss, AdamW with the step-decay
//! schedule, periodic closed-loop validation, best-checkpoint selection by
//! driving score.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PolicyAgent;
use crate::checkpoint::{self, ScheduleState};
use crate::control::ControllerConfig;
use crate::dataset::{
    frame_index, frame_to_sample, load_batch, AugmentConfig, DatasetError, DatasetManifest,
};
use crate::eval::{run_benchmark, select_best_checkpoint, BenchmarkTask, EvalConfig, PenaltyTable};
use crate::nn::{apply_bn_updates, is_trainable, Mode};
use crate::optim::{step_decay_lr_every, AdamWConfig, OptimizerState};
use crate::policy::PolicyNet;
use crate::render::Weather;
use crate::scalar::{Real, Scalar};
use crate::sim::SimConfig;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, TensorError};
use crate::waypoint::{WaypointPlan, NUM_WAYPOINTS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: u32, batch: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("validation produced no usable checkpoint")]
    NoCheckpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f32,
    /// Learning rate decays ×0.1 every this many epochs.
    pub lr_decay_epochs: u32,
    pub epochs: u32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub validate_every: u32,
    pub seed: u64,
    pub augment: bool,
    pub augment_cfg: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk_scale()
    }
}

impl TrainConfig {
    /// Desk-scale preset: small batches, short schedule.
    pub fn desk_scale() -> Self {
        TrainConfig {
            batch_size: 16,
            base_lr: 1e-4,
            lr_decay_epochs: 20,
            epochs: 40,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            validate_every: 5,
            seed: 0,
            augment: true,
            augment_cfg: AugmentConfig::default(),
        }
    }

    /// Full-scale reference preset.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            ..TrainConfig::desk_scale()
        }
    }

    pub fn adamw(&self, lr: f32) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
        }
    }
}

/// Eq-style L1 loss on plans: Σ_t ‖y_t − y_t^gt‖₁.
pub fn l1_loss(pred: &WaypointPlan, gt: &WaypointPlan) -> f64 {
    pred.flat()
        .iter()
        .zip(gt.flat().iter())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Differentiable version over a decoded waypoint node (shape [8]).
pub fn l1_loss_node<S: Scalar>(
    tape: &mut Tape<S>,
    pred: NodeId,
    gt: &WaypointPlan,
) -> Result<NodeId, TensorError> {
    let gt_node = tape.constant(Tensor::from_f64_slice(
        vec![2 * NUM_WAYPOINTS],
        &gt.flat(),
    ));
    let diff = tape.sub(pred, gt_node)?;
    let abs = tape.abs(diff);
    Ok(tape.sum_all(abs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub lr: f32,
    pub train_loss: f64,
    pub val_ds: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<u32>,
    pub best_ds: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_ds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                e.lr,
                e.train_loss,
                e.val_ds.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// Closed-loop validation setup used every `validate_every` epochs.
pub struct ValidationSetup {
    pub tasks: Vec<BenchmarkTask>,
    pub sim: SimConfig,
    pub eval: EvalConfig,
    pub penalties: PenaltyTable,
    pub controller: ControllerConfig,
    pub weather: Weather,
    pub workers: usize,
    pub seed: u64,
}

/// One optimizer step over a minibatch: per-sample forward/backward with
/// gradient accumulation (mean over the batch), batch-norm running-stat
/// updates in sample order, then AdamW.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    net: &mut PolicyNet,
    samples: &[(crate::perception::SensorBundle<Real>, crate::waypoint::GoalPoint, WaypointPlan)],
    optimizer: &mut OptimizerState,
    adamw: &AdamWConfig,
) -> Result<f64, TrainError> {
    let inv_b = 1.0 / samples.len() as f32;
    let mut grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut loss_sum = 0.0f64;

    for (bundle, goal, gt) in samples {
        let mut tape: Tape<Real> = Tape::new();
        let (fwd, bn_updates) = net.forward(&mut tape, bundle, *goal, Mode::Train, true)?;
        let loss = l1_loss_node(&mut tape, fwd.waypoints, gt)?;
        let loss_value = tape.data(loss)[0] as f64;
        loss_sum += loss_value;
        tape.backward(loss)?;
        for (name, value) in net.store.iter() {
            if !is_trainable(name) {
                continue;
            }
            let g = tape.grad_or_zeros(fwd.bound.node(name));
            debug_assert_eq!(g.len(), value.numel());
            let acc = grads
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; value.numel()]);
            for (a, gv) in acc.iter_mut().zip(g.iter()) {
                *a += gv * inv_b;
            }
        }
        apply_bn_updates(&mut net.store, &bn_updates);
    }

    let mut updates: Vec<(&str, &mut [f32], &[f32])> = net
        .store
        .iter_mut()
        .filter(|(name, _)| grads.contains_key(name.as_str()))
        .map(|(name, value)| {
            let g = grads[name.as_str()].as_slice();
            (name.as_str(), value.data.as_mut_slice(), g)
        })
        .collect();
    optimizer.step(adamw, &mut updates);

    Ok(loss_sum / samples.len() as f64)
}

/// Full training run over a recorded dataset.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &mut PolicyNet,
    dataset_root: &Path,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    validation: Option<&ValidationSetup>,
    out_dir: Option<&Path>,
    fingerprint: &str,
) -> Result<TrainReport, TrainError> {
    let index = frame_index(manifest);
    if index.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut optimizer = OptimizerState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5f1e);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa406);
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        best_ds: None,
        best_checkpoint: None,
    };
    let mut validated: Vec<(u32, f64, PathBuf)> = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = step_decay_lr_every(cfg.base_lr, epoch, cfg.lr_decay_epochs);
        let adamw = cfg.adamw(lr);
        let mut order: Vec<usize> = (0..index.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_no, picks) in order.chunks(cfg.batch_size).enumerate() {
            let frames = load_batch(
                dataset_root,
                manifest,
                &index,
                picks,
                if cfg.augment {
                    Some((&cfg.augment_cfg, &mut augment_rng))
                } else {
                    None
                },
            )?;
            let samples: Vec<_> = frames.iter().map(frame_to_sample).collect();
            let loss = train_step(net, &samples, &mut optimizer, &adamw)?;
            if !loss.is_finite() {
                return Err(TrainError::NanLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;

        let mut val_ds = None;
        let last_epoch = epoch + 1 == cfg.epochs;
        if (epoch + 1) % cfg.validate_every == 0 || last_epoch {
            if let Some(v) = validation {
                let (bench, _) = run_benchmark(
                    &v.tasks,
                    || PolicyAgent::new(net, v.controller.clone(), v.weather),
                    &v.sim,
                    &v.eval,
                    &v.penalties,
                    v.seed,
                    fingerprint,
                    v.workers,
                );
                val_ds = Some(bench.avg_ds);
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("epoch_{epoch:04}.dkpt"));
                    let schedule = ScheduleState {
                        epoch,
                        global_step: optimizer.step_count,
                        base_lr: cfg.base_lr,
                        lr,
                    };
                    checkpoint::save(&path, &net.store, &net.encoder, &schedule, fingerprint)?;
                    validated.push((epoch, bench.avg_ds, path));
                }
            }
        }

        report.epochs.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_ds,
        });
    }

    if !validated.is_empty() {
        let scores: Vec<f64> = validated.iter().map(|(_, ds, _)| *ds).collect();
        let best = select_best_checkpoint(&scores).map_err(|_| TrainError::NoCheckpoint)?;
        report.best_epoch = Some(validated[best].0);
        report.best_ds = Some(validated[best].1);
        report.best_checkpoint = Some(validated[best].2.clone());
        if let Some(dir) = out_dir {
            let best_path = dir.join("best.dkpt");
            std::fs::copy(&validated[best].2, &best_path)?;
            report.best_checkpoint = Some(best_path);
        }
    }

    if let Some(dir) = out_dir {
        std::fs::write(dir.join("train_log.csv"), report.to_csv())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_loss_examples() {
        let gt = WaypointPlan::new([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0], [0.0, 4.0]]);
        assert_eq!(l1_loss(&gt, &gt), 0.0);

        let mut off = gt;
        for p in off.points.iter_mut() {
            p[0] += 1.0;
        }
        assert!((l1_loss(&off, &gt) - 4.0).abs() < 1e-12);

        let mut one = gt;
        one.points[2][0] += 1.0;
        one.points[2][1] -= 2.0;
        assert!((l1_loss(&one, &gt) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn l1_loss_node_matches_value_and_gradient_signs() {
        let gt = WaypointPlan::new([[0.5, 1.0], [0.0, 2.0], [-0.5, 3.0], [0.0, 4.0]]);
        let pred = WaypointPlan::new([[1.0, 0.5], [0.0, 2.5], [0.0, 2.0], [0.0, 4.0]]);
        let mut tape: Tape<f64> = Tape::new();
        let pred_node = tape.leaf(
            Tensor::new(vec![8], pred.flat().to_vec()),
            true,
        );
        let loss = l1_loss_node(&mut tape, pred_node, &gt).unwrap();
        assert!((tape.data(loss)[0] - l1_loss(&pred, &gt)).abs() < 1e-12);
        tape.backward(loss).unwrap();
        let g = tape.grad(pred_node).unwrap();
        // gradient is the sign of (pred − gt), zero at exact ties
        let expect = [1.0, -1.0, 0.0, 1.0, 1.0, -1.0, 0.0, 0.0];
        assert_eq!(g, &expect);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(step_decay_lr_every(1e-4, 0, 20), 1e-4);
        assert!((step_decay_lr_every(1e-4, 20, 20) - 1e-5).abs() < 1e-12);
        assert!((step_decay_lr_every(1e-4, 40, 20) - 1e-6).abs() < 1e-13);
    }
}
