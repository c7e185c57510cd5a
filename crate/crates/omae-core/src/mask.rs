//! Range-aware random masking of occupied voxels.
//!
//! Occupied voxels are split into three range bands by their center's
//! distance to the sensor and each band is masked independently at its own
//! ratio. Near voxels (dense, redundant) are masked aggressively, far
//! voxels (sparse) gently. Masked voxels are dropped from the encoder
//! input entirely; the decoder reconstructs them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::rng::{rng_for, Stream};
use crate::scene::band_of;
use crate::voxel::{OccupancyTarget, SparseVoxelTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    RangeAware,
    /// One band for all occupied voxels, masked at ratio r1.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskConfig {
    pub band_edges: [f64; 2],
    /// (r1, r2, r3) for bands 0-30 m, 30-50 m, >50 m.
    pub ratios: [f64; 3],
    pub seed: u64,
    pub mode: MaskMode,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            band_edges: [30.0, 50.0],
            ratios: [0.9, 0.7, 0.5],
            seed: 0,
            mode: MaskMode::RangeAware,
        }
    }
}

impl MaskConfig {
    /// Validates ratios. Non-descending ratios in range-aware mode are
    /// legal (the ablation grid uses them) but reported back as a warning.
    pub fn validate(&self) -> Result<Option<String>> {
        for (i, &r) in self.ratios.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("ratios[{i}] must be in [0,1], got {r}")));
            }
        }
        if !(self.band_edges[0] > 0.0 && self.band_edges[1] > self.band_edges[0]) {
            return Err(Error::config(format!(
                "band_edges must be increasing positive, got {:?}",
                self.band_edges
            )));
        }
        if self.mode == MaskMode::RangeAware
            && !(self.ratios[0] >= self.ratios[1] && self.ratios[1] >= self.ratios[2])
        {
            return Ok(Some(format!(
                "range-aware ratios {:?} are not descending (r1 >= r2 >= r3)",
                self.ratios
            )));
        }
        Ok(None)
    }
}

/// Visible/masked split of the occupied set plus per-band bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    /// Sorted linear indices of occupied voxels kept visible.
    pub visible: Vec<usize>,
    /// Sorted linear indices of occupied voxels hidden from the encoder.
    pub masked: Vec<usize>,
    /// Occupied voxels per band (n_v1, n_v2, n_v3).
    pub band_counts: [usize; 3],
    pub masked_counts: [usize; 3],
}

impl MaskPlan {
    /// Number of unmasked occupied voxels.
    pub fn n_visible(&self) -> usize {
        self.visible.len()
    }
}

/// Masked count for a band: round-half-up of ratio * band size.
pub fn masked_count(ratio: f64, band_size: usize) -> usize {
    (ratio * band_size as f64 + 0.5).floor() as usize
}

/// Partition the occupied voxels into bands and mask each band at its
/// ratio, uniformly without replacement. Deterministic for a fixed config.
pub fn plan_mask(
    target: &OccupancyTarget,
    grid: &GridConfig,
    sensor_origin: [f64; 3],
    cfg: &MaskConfig,
) -> Result<MaskPlan> {
    cfg.validate()?;
    if target.n_total != grid.n_total() {
        return Err(Error::shape(format!(
            "occupancy target has {} voxels but grid has {}",
            target.n_total,
            grid.n_total()
        )));
    }

    let mut bands: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &li in &target.occupied {
        let coord = grid.coord_of(li)?;
        let band = match cfg.mode {
            MaskMode::Uniform => 0,
            MaskMode::RangeAware => {
                band_of(grid.range_of(coord, sensor_origin)?, cfg.band_edges)
            }
        };
        bands[band].push(li);
    }

    let band_counts = [bands[0].len(), bands[1].len(), bands[2].len()];
    let ratios = match cfg.mode {
        MaskMode::Uniform => [cfg.ratios[0]; 3],
        MaskMode::RangeAware => cfg.ratios,
    };

    let mut masked = Vec::new();
    let mut visible = Vec::new();
    let mut masked_counts = [0usize; 3];
    for b in 0..3 {
        let n = bands[b].len();
        let m = masked_count(ratios[b], n);
        masked_counts[b] = m;
        // Partial Fisher-Yates over the band, first m slots become masked.
        let mut rng = rng_for(cfg.seed, Stream::Mask, b as u64);
        let band = &mut bands[b];
        for i in 0..m {
            let j = rng.gen_range(i..n);
            band.swap(i, j);
        }
        masked.extend_from_slice(&band[..m]);
        visible.extend_from_slice(&band[m..]);
    }
    masked.sort_unstable();
    visible.sort_unstable();

    Ok(MaskPlan { visible, masked, band_counts, masked_counts })
}

/// Keep exactly the rows of the tensor whose linear index is visible in
/// the plan; feature values pass through untouched.
pub fn apply_mask(tensor: &SparseVoxelTensor, plan: &MaskPlan) -> Result<SparseVoxelTensor> {
    let row_of: std::collections::HashMap<usize, usize> = tensor
        .coords
        .iter()
        .enumerate()
        .map(|(row, &c)| (tensor.linear_index(c), row))
        .collect();

    let mut out = SparseVoxelTensor::empty(tensor.dims, tensor.channels);
    for &li in &plan.visible {
        let &row = row_of.get(&li).ok_or_else(|| {
            Error::shape(format!("plan visible index {li} not present in tensor"))
        })?;
        out.coords.push(tensor.coords[row]);
        out.features.extend_from_slice(tensor.feature(row));
    }
    Ok(out)
}
