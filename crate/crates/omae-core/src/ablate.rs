//! Ablation grids: masking ratio, pre-training epochs, data amount, and
//! range-aware vs uniform masking.
//!
//! Each cell trains from scratch with one knob changed, then evaluates
//! masked-voxel occupancy IoU on a held-out scene directory. Output is a
//! self-describing CSV, byte-identical across runs for fixed seeds. A
//! failing cell is recorded in its row and the harness keeps going.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::MaskMode;
use crate::train::{eval_masked_iou, train, TrainSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    MaskRatio,
    Epochs,
    DataAmount,
    MaskMode,
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::MaskRatio => "mask_ratio",
            AblationAxis::Epochs => "epochs",
            AblationAxis::DataAmount => "data_amount",
            AblationAxis::MaskMode => "mask_mode",
        }
    }
}

/// One grid point on an ablation axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisValue {
    Ratios([f64; 3]),
    Epochs(usize),
    /// Fraction of the training scenes used per epoch, in (0, 1].
    DataFraction(f64),
    Mode(MaskMode),
}

impl AxisValue {
    pub fn label(&self) -> String {
        match self {
            AxisValue::Ratios(r) => format!("{}/{}/{}", r[0], r[1], r[2]),
            AxisValue::Epochs(e) => e.to_string(),
            AxisValue::DataFraction(f) => format!("{f}"),
            AxisValue::Mode(MaskMode::RangeAware) => "range_aware".to_string(),
            AxisValue::Mode(MaskMode::Uniform) => "uniform".to_string(),
        }
    }

    fn matches_axis(&self, axis: AblationAxis) -> bool {
        matches!(
            (self, axis),
            (AxisValue::Ratios(_), AblationAxis::MaskRatio)
                | (AxisValue::Epochs(_), AblationAxis::Epochs)
                | (AxisValue::DataFraction(_), AblationAxis::DataAmount)
                | (AxisValue::Mode(_), AblationAxis::MaskMode)
        )
    }
}

/// The masking-ratio grid of the original study's ratio sweep.
pub const RATIO_GRID: [[f64; 3]; 8] = [
    [0.5, 0.5, 0.5],
    [0.7, 0.5, 0.3],
    [0.7, 0.7, 0.7],
    [0.9, 0.7, 0.5],
    [0.9, 0.7, 0.7],
    [0.9, 0.9, 0.9],
    [0.95, 0.95, 0.95],
    [0.98, 0.98, 0.98],
];

pub const EPOCHS_GRID: [usize; 3] = [2, 3, 4];

pub const DATA_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub values: Vec<AxisValue>,
    pub seeds: Vec<u64>,
}

impl AblationSpec {
    /// Preset grid for an axis.
    pub fn preset(axis: AblationAxis, seeds: Vec<u64>) -> Self {
        let values = match axis {
            AblationAxis::MaskRatio => RATIO_GRID.iter().map(|&r| AxisValue::Ratios(r)).collect(),
            AblationAxis::Epochs => EPOCHS_GRID.iter().map(|&e| AxisValue::Epochs(e)).collect(),
            AblationAxis::DataAmount => {
                DATA_GRID.iter().map(|&f| AxisValue::DataFraction(f)).collect()
            }
            AblationAxis::MaskMode => {
                vec![AxisValue::Mode(MaskMode::RangeAware), AxisValue::Mode(MaskMode::Uniform)]
            }
        };
        AblationSpec { axis, values, seeds }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::config(format!(
                "ablation needs >= 2 grid points, got {}",
                self.values.len()
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("ablation needs >= 1 seed".to_string()));
        }
        for v in &self.values {
            if !v.matches_axis(self.axis) {
                return Err(Error::config(format!(
                    "value {v:?} does not belong to axis {}",
                    self.axis.name()
                )));
            }
            if let AxisValue::DataFraction(f) = v {
                if !(*f > 0.0 && *f <= 1.0) {
                    return Err(Error::config(format!("data fraction must be in (0,1], got {f}")));
                }
            }
        }
        Ok(())
    }
}

fn apply_value(setup: &mut TrainSetup, value: &AxisValue, n_train_scenes: usize) {
    match value {
        AxisValue::Ratios(r) => setup.mask.ratios = *r,
        AxisValue::Epochs(e) => setup.cfg.epochs = *e,
        AxisValue::DataFraction(f) => {
            let n = ((n_train_scenes as f64 * f).round() as usize).max(1);
            setup.cfg.scenes_per_epoch = Some(n);
        }
        AxisValue::Mode(m) => setup.mask.mode = *m,
    }
}

fn count_scenes(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == "bin"))
                .count()
        })
        .unwrap_or(0)
}

/// Run the whole grid and return the CSV table. Cell failures land in the
/// `status` column; only successful cells enter the summary statistics.
pub fn run_ablation(
    spec: &AblationSpec,
    base: &TrainSetup,
    train_dir: &Path,
    eval_dir: &Path,
) -> Result<String> {
    spec.validate()?;
    let n_train = count_scenes(train_dir);

    let mut out = String::new();
    out.push_str(&format!("# ablation axis: {}\n", spec.axis.name()));
    out.push_str("# metric: masked-voxel occupancy IoU (reconstruction proxy, not detection mAP)\n");
    out.push_str("value,seed,masked_iou,overall_iou,final_loss,status\n");

    let mut summaries = Vec::new();
    for value in &spec.values {
        let mut ious = Vec::new();
        for &seed in &spec.seeds {
            let mut setup = base.clone();
            setup.seed = seed;
            apply_value(&mut setup, value, n_train);

            let cell = train(&setup, train_dir, None, |_| Ok(())).and_then(|r| {
                let (masked, overall, _) = eval_masked_iou(&setup, &r.checkpoint.params, eval_dir)?;
                let final_loss = r.metrics.last().map(|m| m.loss).unwrap_or(f64::NAN);
                Ok((masked, overall, final_loss))
            });
            match cell {
                Ok((masked, overall, loss)) => {
                    out.push_str(&format!(
                        "{},{seed},{masked:.6},{overall:.6},{loss:.9},ok\n",
                        value.label()
                    ));
                    ious.push(masked);
                }
                Err(e) => {
                    // commas in error text would break the CSV shape
                    let msg = e.to_string().replace(',', ";");
                    out.push_str(&format!("{},{seed},,,,error: {msg}\n", value.label()));
                }
            }
        }
        summaries.push((value.label(), ious));
    }

    for (label, ious) in summaries {
        if ious.is_empty() {
            out.push_str(&format!("{label},mean,,,,no successful runs\n"));
            continue;
        }
        let n = ious.len() as f64;
        let mean = ious.iter().sum::<f64>() / n;
        let var = ious.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        out.push_str(&format!("{label},mean,{mean:.6},,,summary over {} seeds\n", ious.len()));
        out.push_str(&format!("{label},sd,{:.6},,,summary over {} seeds\n", var.sqrt(), ious.len()));
    }
    Ok(out)
}
