//! Occupancy reconstruction metrics.
//!
//! Everything is computed from hard confusion counts at a probability
//! threshold: overall, per range band, and restricted to the masked
//! voxel set (the quantity pretraining actually optimizes for).

use crate::grid::GridConfig;
use crate::mask::MaskPlan;
use crate::nn::dense_conv::DenseTensor;
use crate::scene::band_of;
use crate::voxel::OccupancyTarget;

pub const DEFAULT_TAU: f64 = 0.5;

/// Raw confusion counts plus derived rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// TP / (TP + FP); 1.0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 { 1.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 }
    }

    /// TP / (TP + FN); 1.0 when nothing is actually positive.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 { 1.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 }
    }

    /// TP / (TP + FP + FN); 1.0 for the empty union.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 { 1.0 } else { self.tp as f64 / denom as f64 }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 { 1.0 } else { 2.0 * self.tp as f64 / denom as f64 }
    }
}

/// Confusion counts over a voxel subset, with the usual overall /
/// per-band / masked-only slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub tau: f64,
    pub overall: Confusion,
    pub per_band: [Confusion; 3],
    pub masked: Confusion,
    pub masked_per_band: [Confusion; 3],
    pub visible: Confusion,
    /// Everything the model could not see: masked occupied voxels plus
    /// all free voxels. Unlike `masked` (whose members are all occupied,
    /// so its IoU collapses to recall), this slice admits false positives
    /// and is the reconstruction metric reported by training and eval.
    pub hidden: Confusion,
}

/// Score dense occupancy probabilities against the target at threshold
/// `tau`. Band membership comes from the voxel center's distance to the
/// sensor (planar or 3D per the grid config). `plan` supplies the
/// masked / visible split; visible voxels are by construction occupied.
pub fn score(
    probs: &DenseTensor,
    target: &OccupancyTarget,
    plan: &MaskPlan,
    grid: &GridConfig,
    sensor_origin: [f64; 3],
    band_edges: [f64; 2],
    tau: f64,
) -> ScoreReport {
    let n = probs.values.len();
    debug_assert_eq!(n, target.n_total);

    let mut occupied = vec![false; n];
    for &i in &target.occupied {
        occupied[i] = true;
    }
    let mut masked_set = vec![false; n];
    for &i in &plan.masked {
        masked_set[i] = true;
    }
    let mut visible_set = vec![false; n];
    for &i in &plan.visible {
        visible_set[i] = true;
    }

    let mut report = ScoreReport {
        tau,
        overall: Confusion::default(),
        per_band: [Confusion::default(); 3],
        masked: Confusion::default(),
        masked_per_band: [Confusion::default(); 3],
        visible: Confusion::default(),
        hidden: Confusion::default(),
    };

    for i in 0..n {
        let predicted = probs.values[i] >= tau;
        let actual = occupied[i];
        let coord = grid.coord_of(i).expect("i < n_total");
        let band = band_of(grid.range_of(coord, sensor_origin).expect("coord in grid"), band_edges);
        report.overall.add(predicted, actual);
        report.per_band[band].add(predicted, actual);
        if masked_set[i] {
            report.masked.add(predicted, actual);
            report.masked_per_band[band].add(predicted, actual);
        }
        if visible_set[i] {
            report.visible.add(predicted, actual);
        } else {
            report.hidden.add(predicted, actual);
        }
    }
    report
}

/// Threshold in (0, 1) maximizing F1 over the masked set, swept over the
/// distinct predicted probabilities. Ties keep the lower threshold.
pub fn best_f1_threshold(probs: &DenseTensor, target: &OccupancyTarget, plan: &MaskPlan) -> (f64, f64) {
    let mut occupied = vec![false; probs.values.len()];
    for &i in &target.occupied {
        occupied[i] = true;
    }
    let entries: Vec<(f64, bool)> =
        plan.masked.iter().map(|&i| (probs.values[i], occupied[i])).collect();
    if entries.is_empty() {
        return (DEFAULT_TAU, 1.0);
    }
    let mut taus: Vec<f64> = entries.iter().map(|e| e.0).collect();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    taus.dedup();
    let mut best = (taus[0], -1.0);
    for &tau in &taus {
        let mut c = Confusion::default();
        for &(p, actual) in &entries {
            c.add(p >= tau, actual);
        }
        let f1 = c.f1();
        if f1 > best.1 {
            best = (tau, f1);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;
    use crate::mask::MaskPlan;

    fn tiny_grid() -> GridConfig {
        GridConfig {
            min_corner: [0.0, 0.0, 0.0],
            voxel_size: [1.0, 1.0, 1.0],
            dims: [4, 1, 1],
            band_distance: crate::grid::BandDistance::Xy,
        }
    }

    // Hand-counted oracle: 4 voxels, probs [0.9, 0.6, 0.2, 0.4],
    // occupied {0, 2}, masked {2}, visible {0}. At tau 0.5 the
    // predictions are [1, 1, 0, 0]: TP=1 (v0), FP=1 (v1), FN=1 (v2), TN=1.
    #[test]
    fn counting_oracle() {
        let grid = tiny_grid();
        let mut probs = DenseTensor::zeros([4, 1, 1], 1);
        probs.values = vec![0.9, 0.6, 0.2, 0.4];
        let target = OccupancyTarget { occupied: vec![0, 2], n_total: 4 };
        let plan = MaskPlan {
            visible: vec![0],
            masked: vec![2],
            band_counts: [2, 0, 0],
            masked_counts: [1, 0, 0],
        };
        let r = score(&probs, &target, &plan, &grid, [0.0, 0.0, 0.0], [30.0, 50.0], 0.5);
        assert_eq!(r.overall, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
        assert_eq!(r.overall.precision(), 0.5);
        assert_eq!(r.overall.recall(), 0.5);
        assert!((r.overall.iou() - 1.0 / 3.0).abs() < 1e-15);
        // masked voxel 2 has prob 0.2 -> missed entirely
        assert_eq!(r.masked, Confusion { tp: 0, fp: 0, fn_: 1, tn: 0 });
        assert_eq!(r.masked.iou(), 0.0);
        // visible voxel 0 predicted occupied
        assert_eq!(r.visible, Confusion { tp: 1, fp: 0, fn_: 0, tn: 0 });
        assert_eq!(r.visible.iou(), 1.0);
        // hidden = complement of visible = {1, 2, 3}: FP at v1, FN at v2, TN at v3
        assert_eq!(r.hidden, Confusion { tp: 0, fp: 1, fn_: 1, tn: 1 });
        assert_eq!(r.hidden.iou(), 0.0);
        // everything is in band 0 on a 4 m grid
        assert_eq!(r.per_band[0], r.overall);
        assert_eq!(r.per_band[1].total(), 0);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let grid = tiny_grid();
        let mut probs = DenseTensor::zeros([4, 1, 1], 1);
        probs.values = vec![0.99, 0.01, 0.98, 0.02];
        let target = OccupancyTarget { occupied: vec![0, 2], n_total: 4 };
        let plan = MaskPlan {
            visible: vec![0],
            masked: vec![2],
            band_counts: [2, 0, 0],
            masked_counts: [1, 0, 0],
        };
        let r = score(&probs, &target, &plan, &grid, [0.0, 0.0, 0.0], [30.0, 50.0], 0.5);
        assert_eq!(r.overall.iou(), 1.0);
        assert_eq!(r.masked.iou(), 1.0);
        assert_eq!(r.hidden.iou(), 1.0);
        assert_eq!(r.overall.precision(), 1.0);
        assert_eq!(r.overall.recall(), 1.0);
    }

    #[test]
    fn empty_slices_degenerate_to_one() {
        let c = Confusion::default();
        assert_eq!(c.precision(), 1.0);
        assert_eq!(c.recall(), 1.0);
        assert_eq!(c.iou(), 1.0);
    }

    #[test]
    fn band_assignment_uses_planar_distance() {
        // 1D grid along x with 10 m voxels: centers 5, 15, ..., 75.
        let grid = GridConfig {
            min_corner: [0.0, -5.0, 0.0],
            voxel_size: [10.0, 10.0, 10.0],
            dims: [8, 1, 1],
            band_distance: crate::grid::BandDistance::Xy,
        };
        let mut probs = DenseTensor::zeros([8, 1, 1], 1);
        probs.values = vec![0.9; 8];
        let target = OccupancyTarget { occupied: (0..8).collect(), n_total: 8 };
        let plan = MaskPlan { visible: vec![], masked: vec![], band_counts: [0; 3], masked_counts: [0; 3] };
        let r = score(&probs, &target, &plan, &grid, [0.0, 0.0, 0.0], [30.0, 50.0], 0.5);
        // centers 5,15,25 -> band 0; 35,45 -> band 1; 55,65,75 -> band 2
        assert_eq!(r.per_band[0].tp, 3);
        assert_eq!(r.per_band[1].tp, 2);
        assert_eq!(r.per_band[2].tp, 3);
    }

    #[test]
    fn best_f1_finds_separating_threshold() {
        let mut probs = DenseTensor::zeros([4, 1, 1], 1);
        probs.values = vec![0.9, 0.1, 0.8, 0.3];
        // masked: all four; occupied: 0 and 2 (the high-prob pair)
        let target = OccupancyTarget { occupied: vec![0, 2], n_total: 4 };
        let plan = MaskPlan {
            visible: vec![],
            masked: vec![0, 1, 2, 3],
            band_counts: [4, 0, 0],
            masked_counts: [4, 0, 0],
        };
        let (tau, f1) = best_f1_threshold(&probs, &target, &plan);
        assert_eq!(f1, 1.0);
        assert!(tau > 0.3 && tau <= 0.8, "tau {tau}");
    }
}
