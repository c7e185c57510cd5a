//! The pre-training loop: mask, reconstruct, focal loss, Adam.
//!
//! The loop is fully deterministic under a fixed root seed. Every random
//! decision (epoch shuffle, per-step masks) is derived from the root seed
//! with a counter-based split, so a run resumed from an epoch checkpoint
//! reproduces the uninterrupted run step for step.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::loss::{focal_loss, LossConfig};
use crate::mask::{apply_mask, plan_mask, MaskConfig};
use crate::metrics::{score, Confusion, DEFAULT_TAU};
use crate::model::{backward_model, forward_model, ModelParams, ModelSchedule};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::points::read_points;
use crate::rng::{derive_seed, rng_for, Stream};
use crate::voxel::{voxelize, OccupancyTarget, SparseVoxelTensor};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Cap on scenes used per epoch; `None` uses every readable scene.
    pub scenes_per_epoch: Option<usize>,
    /// Fresh mask per optimizer step (the default); otherwise each scene
    /// keeps one fixed mask for the whole run.
    pub resample_mask_per_step: bool,
    /// Restrict the loss to the masked voxel set instead of the full grid.
    pub loss_masked_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            adam: AdamConfig::default(),
            scenes_per_epoch: None,
            resample_mask_per_step: true,
            loss_masked_only: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config(format!("epochs must be >= 1, got {}", self.epochs)));
        }
        if self.batch_size < 1 {
            return Err(Error::config(format!("batch_size must be >= 1, got {}", self.batch_size)));
        }
        self.adam.validate()
    }
}

/// Everything the loop needs besides the data directory.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub grid: GridConfig,
    pub schedule: ModelSchedule,
    pub mask: MaskConfig,
    pub loss: LossConfig,
    pub cfg: TrainConfig,
    pub sensor_origin: [f64; 3],
    /// Root seed for init, shuffling, and per-step masks.
    pub seed: u64,
}

/// One metrics CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub clamp_count: u64,
    /// IoU over the hidden region (everything outside the visible input:
    /// masked occupied voxels plus all free voxels).
    pub masked_iou: f64,
    pub visible_iou: f64,
    /// Mask seed of the step's first batch slot.
    pub seed: u64,
}

pub const METRICS_HEADER: &str = "epoch,step,loss,clamp_count,masked_iou,visible_iou,seed";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.9},{},{:.6},{:.6},{}",
            self.epoch, self.step, self.loss, self.clamp_count, self.masked_iou, self.visible_iou,
            self.seed
        )
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    /// Skipped-scene warnings, one message per unreadable file.
    pub warnings: Vec<String>,
}

/// A scene voxelized once up front.
struct PreparedScene {
    tensor: SparseVoxelTensor,
    target: OccupancyTarget,
}

/// Load every readable `.bin` scene under `data_dir` (sorted by file
/// name). Unreadable files become warnings; an empty result is an error.
fn load_scenes(
    data_dir: &Path,
    grid: &GridConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<PreparedScene>> {
    let mut paths: Vec<_> = std::fs::read_dir(data_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::data(format!("no .bin scene files in {}", data_dir.display())));
    }

    let mut scenes = Vec::new();
    for p in &paths {
        match read_points(p).and_then(|cloud| voxelize(&cloud, grid)) {
            Ok((tensor, target)) => scenes.push(PreparedScene { tensor, target }),
            Err(e) => warnings.push(format!("skipping {}: {e}", p.display())),
        }
    }
    if scenes.is_empty() {
        return Err(Error::data(format!(
            "all {} scene files in {} are unreadable",
            paths.len(),
            data_dir.display()
        )));
    }
    Ok(scenes)
}

/// Mask seed for a given (epoch, step, batch slot); collapses to the slot
/// index when masks are fixed per scene.
fn mask_seed(setup: &TrainSetup, epoch: usize, step_in_epoch: usize, scene_idx: usize) -> u64 {
    let counter = if setup.cfg.resample_mask_per_step {
        ((epoch as u64) << 40) ^ ((step_in_epoch as u64) << 20) ^ scene_idx as u64
    } else {
        scene_idx as u64
    };
    derive_seed(setup.seed, Stream::Mask, counter)
}

/// Run the loop, optionally resuming from a checkpoint. Epoch-end
/// checkpoints are handed to `on_epoch_end` (the CLI writes them to disk).
pub fn train(
    setup: &TrainSetup,
    data_dir: &Path,
    resume: Option<Checkpoint>,
    mut on_epoch_end: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutput> {
    setup.cfg.validate()?;
    setup.mask.validate()?;
    setup.loss.validate()?;
    setup.grid.validate()?;
    if setup.grid.dims != setup.schedule.grid_dims {
        return Err(Error::config(format!(
            "grid dims {:?} do not match model schedule {:?}",
            setup.grid.dims, setup.schedule.grid_dims
        )));
    }

    let mut warnings = Vec::new();
    let mut scenes = load_scenes(data_dir, &setup.grid, &mut warnings)?;
    if let Some(cap) = setup.cfg.scenes_per_epoch {
        if cap == 0 {
            return Err(Error::config("scenes_per_epoch must be >= 1".to_string()));
        }
        scenes.truncate(cap);
    }

    let (mut params, mut opt_state, start_epoch, mut global_step) = match resume {
        Some(ck) => {
            if ck.schedule != setup.schedule {
                return Err(Error::config(
                    "checkpoint schedule does not match the configured model".to_string(),
                ));
            }
            if ck.root_seed != setup.seed {
                return Err(Error::config(format!(
                    "checkpoint was trained with seed {}, run configured with {}",
                    ck.root_seed, setup.seed
                )));
            }
            (ck.params, ck.opt_state, ck.epoch as usize, ck.step)
        }
        None => {
            let mut rng = rng_for(setup.seed, Stream::Init, 0);
            let params = ModelParams::init(&setup.schedule, &mut rng);
            let opt = AdamState::new(&params);
            (params, opt, 0, 0)
        }
    };
    if start_epoch >= setup.cfg.epochs {
        return Err(Error::config(format!(
            "checkpoint already at epoch {start_epoch}, nothing to do for epochs = {}",
            setup.cfg.epochs
        )));
    }

    let mut metrics = Vec::new();
    for epoch in start_epoch..setup.cfg.epochs {
        // deterministic per-epoch shuffle of scene order
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut rng = rng_for(setup.seed, Stream::Shuffle, epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for (step_in_epoch, batch) in order.chunks(setup.cfg.batch_size).enumerate() {
            let mut grads = ModelParams::zeros_like(&setup.schedule);
            let mut loss_sum = 0.0;
            let mut clamp_count = 0u64;
            let mut masked_conf = Confusion::default();
            let mut visible_conf = Confusion::default();
            let mut row_seed = 0u64;

            for (slot, &scene_idx) in batch.iter().enumerate() {
                let scene = &scenes[scene_idx];
                let seed = mask_seed(setup, epoch, step_in_epoch, scene_idx);
                if slot == 0 {
                    row_seed = seed;
                }
                let mask_cfg = MaskConfig { seed, ..setup.mask.clone() };
                let plan = plan_mask(&scene.target, &setup.grid, setup.sensor_origin, &mask_cfg)?;
                let visible = apply_mask(&scene.tensor, &plan)?;

                let trace = forward_model(&visible, &params, &setup.schedule)?;
                let restrict = setup.cfg.loss_masked_only.then_some(plan.masked.as_slice());
                let lr = focal_loss(&trace.probs, &scene.target, &setup.loss, restrict)?;
                let step_grads = backward_model(&trace, &params, &setup.schedule, &lr.grad_logits)?;

                let inv_batch = 1.0 / batch.len() as f64;
                for (acc, g) in grads.tensors_mut().zip(step_grads.tensors()) {
                    for (a, &v) in acc.weights.iter_mut().zip(&g.weights) {
                        *a += v * inv_batch;
                    }
                    for (a, &v) in acc.bias.iter_mut().zip(&g.bias) {
                        *a += v * inv_batch;
                    }
                }
                loss_sum += lr.loss * inv_batch;
                clamp_count += lr.clamp_count as u64;

                let report = score(
                    &trace.probs,
                    &scene.target,
                    &plan,
                    &setup.grid,
                    setup.sensor_origin,
                    setup.mask.band_edges,
                    DEFAULT_TAU,
                );
                masked_conf = add_conf(masked_conf, report.hidden);
                visible_conf = add_conf(visible_conf, report.visible);
            }

            adam_step(&mut params, &grads, &mut opt_state, &setup.cfg.adam)?;
            global_step += 1;
            metrics.push(MetricsRow {
                epoch,
                step: global_step,
                loss: loss_sum,
                clamp_count,
                masked_iou: masked_conf.iou(),
                visible_iou: visible_conf.iou(),
                seed: row_seed,
            });
        }

        let ck = Checkpoint {
            schedule: setup.schedule.clone(),
            params: params.clone(),
            opt_state: opt_state.clone(),
            root_seed: setup.seed,
            epoch: (epoch + 1) as u32,
            step: global_step,
        };
        on_epoch_end(&ck)?;
        if epoch + 1 == setup.cfg.epochs {
            return Ok(TrainOutput { checkpoint: ck, metrics, warnings });
        }
    }
    unreachable!("loop returns on the final epoch");
}

fn add_conf(a: Confusion, b: Confusion) -> Confusion {
    Confusion { tp: a.tp + b.tp, fp: a.fp + b.fp, fn_: a.fn_ + b.fn_, tn: a.tn + b.tn }
}

/// Mean loss over the first/last `window` rows; used by the learning
/// acceptance check.
pub fn smoothed_loss_drop(rows: &[MetricsRow], window: usize) -> Option<(f64, f64)> {
    if rows.len() < window || window == 0 {
        return None;
    }
    let head: f64 = rows[..window].iter().map(|r| r.loss).sum::<f64>() / window as f64;
    let tail: f64 =
        rows[rows.len() - window..].iter().map(|r| r.loss).sum::<f64>() / window as f64;
    Some((head, tail))
}

/// Mean hidden-region IoU of `params` over the scenes in `data_dir`,
/// with masks drawn from the evaluation stream.
pub fn eval_masked_iou(
    setup: &TrainSetup,
    params: &ModelParams,
    data_dir: &Path,
) -> Result<(f64, f64, usize)> {
    let mut warnings = Vec::new();
    let scenes = load_scenes(data_dir, &setup.grid, &mut warnings)?;
    let mut masked = Confusion::default();
    let mut overall = Confusion::default();
    for (i, scene) in scenes.iter().enumerate() {
        let seed = derive_seed(setup.seed, Stream::Eval, i as u64);
        let mask_cfg = MaskConfig { seed, ..setup.mask.clone() };
        let plan = plan_mask(&scene.target, &setup.grid, setup.sensor_origin, &mask_cfg)?;
        let visible = apply_mask(&scene.tensor, &plan)?;
        let trace = forward_model(&visible, params, &setup.schedule)?;
        let report = score(
            &trace.probs,
            &scene.target,
            &plan,
            &setup.grid,
            setup.sensor_origin,
            setup.mask.band_edges,
            DEFAULT_TAU,
        );
        masked = add_conf(masked, report.hidden);
        overall = add_conf(overall, report.overall);
    }
    Ok((masked.iou(), overall.iou(), scenes.len()))
}
