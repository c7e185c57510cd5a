//! Flat `key = value` run configuration.
//!
//! One file configures the whole pipeline: scene synthesis, grid, masking,
//! loss, model widths, and the training loop. `#` starts a comment,
//! unknown keys are errors, and precedence is flags > file > defaults
//! (flag overrides are applied by the CLI after parsing). The resolved
//! configuration can be re-emitted in the same format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BandDistance, GridConfig};
use crate::loss::{LossConfig, LossMode};
use crate::mask::{MaskConfig, MaskMode};
use crate::scene::{Aabb, SceneSpec};
use crate::train::TrainConfig;

/// Merged view of every module's configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub grid: GridConfig,
    pub mask: MaskConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub enc_channels: [usize; 4],
    pub dec_channels: [usize; 2],
    pub positional: bool,
    /// Root seed; every stream (scene, mask, init, shuffle, eval) is split
    /// from it.
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec::default(),
            grid: GridConfig::desk_default(),
            mask: MaskConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            enc_channels: [16, 32, 64, 128],
            dec_channels: [32, 8],
            positional: true,
            seed: 0,
            deterministic: true,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_str(&text)
    }

    /// Parse over the defaults; later lines win.
    pub fn from_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut boxes_reset = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, &mut boxes_reset)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one key/value pair (also used for CLI flag overrides).
    pub fn apply(&mut self, key: &str, value: &str, boxes_reset: &mut bool) -> Result<()> {
        match key {
            // scene
            "sensor_origin" => self.scene.sensor_origin = parse_f64_array::<3>(key, value)?,
            "num_rays" => self.scene.num_rays = parse_num(key, value)?,
            "max_range" => self.scene.max_range = parse_num(key, value)?,
            "ground_z" => {
                self.scene.ground_z =
                    if value == "none" { None } else { Some(parse_num(key, value)?) }
            }
            "box" => {
                // the first `box` line replaces the default obstacles
                if !*boxes_reset {
                    self.scene.boxes.clear();
                    *boxes_reset = true;
                }
                let v = parse_f64_array::<6>(key, value)?;
                self.scene.boxes.push(Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]));
            }
            "dropout" => self.scene.dropout_per_band = parse_f64_array::<3>(key, value)?,
            "noise_sigma" => self.scene.noise_sigma = parse_num(key, value)?,
            // grid
            "grid_min" => self.grid.min_corner = parse_f64_array::<3>(key, value)?,
            "voxel_size" => {
                self.grid.voxel_size = if value.contains(',') {
                    parse_f64_array::<3>(key, value)?
                } else {
                    [parse_num::<f64>(key, value)?; 3]
                }
            }
            "grid_dims" => self.grid.dims = parse_usize_array::<3>(key, value)?,
            "band_distance" => {
                self.grid.band_distance = match value {
                    "xy" => BandDistance::Xy,
                    "xyz" => BandDistance::Xyz,
                    _ => return Err(Error::config(format!("{key} must be xy or xyz, got {value}"))),
                }
            }
            // masking
            "band_edges" => self.mask.band_edges = parse_f64_array::<2>(key, value)?,
            "ratios" => self.mask.ratios = parse_f64_array::<3>(key, value)?,
            "mask_mode" => {
                self.mask.mode = match value {
                    "range_aware" => MaskMode::RangeAware,
                    "uniform" => MaskMode::Uniform,
                    _ => {
                        return Err(Error::config(format!(
                            "{key} must be range_aware or uniform, got {value}"
                        )))
                    }
                }
            }
            // loss
            "loss_alpha" => self.loss.alpha = parse_num(key, value)?,
            "loss_gamma" => self.loss.gamma = parse_num(key, value)?,
            "loss_mode" => {
                self.loss.mode = match value {
                    "standard" => LossMode::Standard,
                    "paper_literal" => LossMode::PaperLiteral,
                    _ => {
                        return Err(Error::config(format!(
                            "{key} must be standard or paper_literal, got {value}"
                        )))
                    }
                }
            }
            "loss_masked_only" => self.train.loss_masked_only = parse_bool(key, value)?,
            // training
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "learning_rate" => self.train.adam.learning_rate = parse_num(key, value)?,
            "adam_beta1" => self.train.adam.beta1 = parse_num(key, value)?,
            "adam_beta2" => self.train.adam.beta2 = parse_num(key, value)?,
            "adam_eps" => self.train.adam.eps = parse_num(key, value)?,
            "scenes_per_epoch" => {
                self.train.scenes_per_epoch =
                    if value == "all" { None } else { Some(parse_num(key, value)?) }
            }
            "resample_mask_per_step" => {
                self.train.resample_mask_per_step = parse_bool(key, value)?
            }
            // model
            "enc_channels" => self.enc_channels = parse_usize_array::<4>(key, value)?,
            "dec_channels" => self.dec_channels = parse_usize_array::<2>(key, value)?,
            "positional" => self.positional = parse_bool(key, value)?,
            // global
            "seed" => self.seed = parse_num(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Validate every module's invariants up front, before any work starts.
    /// Returns the masking warning, if any.
    pub fn validate(&self) -> Result<Option<String>> {
        self.scene.validate()?;
        self.grid.validate()?;
        let warn = self.mask.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        Ok(warn)
    }

    /// Emit the fully resolved configuration in the same flat format the
    /// parser accepts.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let f3 = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        writeln!(s, "# resolved configuration").unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "deterministic = {}", self.deterministic).unwrap();
        writeln!(s, "sensor_origin = {}", f3(self.scene.sensor_origin)).unwrap();
        writeln!(s, "num_rays = {}", self.scene.num_rays).unwrap();
        writeln!(s, "max_range = {}", self.scene.max_range).unwrap();
        match self.scene.ground_z {
            Some(z) => writeln!(s, "ground_z = {z}").unwrap(),
            None => writeln!(s, "ground_z = none").unwrap(),
        }
        for b in &self.scene.boxes {
            writeln!(s, "box = {},{}", f3(b.min), f3(b.max)).unwrap();
        }
        writeln!(s, "dropout = {}", f3(self.scene.dropout_per_band)).unwrap();
        writeln!(s, "noise_sigma = {}", self.scene.noise_sigma).unwrap();
        writeln!(s, "grid_min = {}", f3(self.grid.min_corner)).unwrap();
        writeln!(s, "voxel_size = {}", f3(self.grid.voxel_size)).unwrap();
        writeln!(
            s,
            "grid_dims = {},{},{}",
            self.grid.dims[0], self.grid.dims[1], self.grid.dims[2]
        )
        .unwrap();
        writeln!(
            s,
            "band_distance = {}",
            match self.grid.band_distance {
                BandDistance::Xy => "xy",
                BandDistance::Xyz => "xyz",
            }
        )
        .unwrap();
        writeln!(s, "band_edges = {},{}", self.mask.band_edges[0], self.mask.band_edges[1]).unwrap();
        writeln!(s, "ratios = {}", f3(self.mask.ratios)).unwrap();
        writeln!(
            s,
            "mask_mode = {}",
            match self.mask.mode {
                MaskMode::RangeAware => "range_aware",
                MaskMode::Uniform => "uniform",
            }
        )
        .unwrap();
        writeln!(s, "loss_alpha = {}", self.loss.alpha).unwrap();
        writeln!(s, "loss_gamma = {}", self.loss.gamma).unwrap();
        writeln!(
            s,
            "loss_mode = {}",
            match self.loss.mode {
                LossMode::Standard => "standard",
                LossMode::PaperLiteral => "paper_literal",
            }
        )
        .unwrap();
        writeln!(s, "loss_masked_only = {}", self.train.loss_masked_only).unwrap();
        writeln!(s, "epochs = {}", self.train.epochs).unwrap();
        writeln!(s, "batch_size = {}", self.train.batch_size).unwrap();
        writeln!(s, "learning_rate = {}", self.train.adam.learning_rate).unwrap();
        writeln!(s, "adam_beta1 = {}", self.train.adam.beta1).unwrap();
        writeln!(s, "adam_beta2 = {}", self.train.adam.beta2).unwrap();
        match self.train.scenes_per_epoch {
            Some(n) => writeln!(s, "scenes_per_epoch = {n}").unwrap(),
            None => writeln!(s, "scenes_per_epoch = all").unwrap(),
        }
        writeln!(s, "adam_eps = {}", self.train.adam.eps).unwrap();
        writeln!(s, "resample_mask_per_step = {}", self.train.resample_mask_per_step).unwrap();
        writeln!(
            s,
            "enc_channels = {},{},{},{}",
            self.enc_channels[0], self.enc_channels[1], self.enc_channels[2], self.enc_channels[3]
        )
        .unwrap();
        writeln!(s, "dec_channels = {},{}", self.dec_channels[0], self.dec_channels[1]).unwrap();
        writeln!(s, "positional = {}", self.positional).unwrap();
        s
    }

    pub fn schedule(&self) -> Result<crate::model::ModelSchedule> {
        crate::model::ModelSchedule::new(
            self.grid.dims,
            4,
            self.positional,
            self.enc_channels,
            self.dec_channels,
        )
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true/false, got `{value}`"))),
    }
}

fn parse_f64_array<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse_num::<f64>(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected {N} comma-separated values")))
}

fn parse_usize_array<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_num::<usize>(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected {N} comma-separated values")))
}
