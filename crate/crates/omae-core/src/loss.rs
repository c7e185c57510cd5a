//! Focal loss for binary occupancy classification.
//!
//! For each voxel, with p_t the predicted probability of the true class,
//! the per-voxel term is -alpha_t * (1 - p_t)^gamma * log(p_t), averaged
//! over all voxels (and over the batch by the caller). Occupied voxels
//! weigh alpha_t = alpha, free voxels alpha_t = 1 - alpha.
//!
//! Two modes share the same formula and differ only in what alpha they
//! accept: `Standard` requires alpha in (0,1) so both class weights stay
//! positive (the usual focal-loss convention, default alpha 0.25 with
//! gamma 2); `PaperLiteral` accepts any positive alpha, including values
//! above 1 that make the free-voxel weight negative.

use crate::error::{Error, Result};
use crate::nn::DenseTensor;
use crate::voxel::OccupancyTarget;

/// Probability clamp applied before the logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Standard,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.25, gamma: 2.0, mode: LossMode::Standard }
    }
}

impl LossConfig {
    /// The constants as printed in literal mode: alpha 2, gamma 0.25.
    pub fn paper_literal() -> Self {
        LossConfig { alpha: 2.0, gamma: 0.25, mode: LossMode::PaperLiteral }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("loss alpha must be positive, got {}", self.alpha)));
        }
        if self.mode == LossMode::Standard && self.alpha >= 1.0 {
            return Err(Error::config(format!(
                "standard loss mode requires alpha in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config(format!("loss gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    /// Gradient w.r.t. the pre-logistic logits, same shape as P.
    pub grad_logits: DenseTensor,
    /// Number of probabilities that hit the [eps, 1-eps] clamp.
    pub clamp_count: usize,
}

/// Focal loss of a single sample over the whole grid (or, when `restrict`
/// is given, over just those sorted linear voxel indices). Returns the
/// scalar loss and its analytic gradient w.r.t. logits.
pub fn focal_loss(
    probs: &DenseTensor,
    target: &OccupancyTarget,
    cfg: &LossConfig,
    restrict: Option<&[usize]>,
) -> Result<LossResult> {
    cfg.validate()?;
    if probs.channels != 1 {
        return Err(Error::shape(format!("probability tensor must have 1 channel, got {}", probs.channels)));
    }
    if probs.n_cells() != target.n_total {
        return Err(Error::shape(format!(
            "probability tensor has {} voxels, target has {}",
            probs.n_cells(),
            target.n_total
        )));
    }

    let mut occupied = vec![false; target.n_total];
    for &li in &target.occupied {
        if li >= target.n_total {
            return Err(Error::shape(format!("occupied index {li} out of range")));
        }
        occupied[li] = true;
    }

    let mut include: Box<dyn Fn(usize) -> bool> = Box::new(|_| true);
    let count = match restrict {
        Some(indices) => {
            let set: std::collections::HashSet<usize> = indices.iter().copied().collect();
            include = Box::new(move |i| set.contains(&i));
            indices.len()
        }
        None => target.n_total,
    };
    if count == 0 {
        return Err(Error::shape("loss over an empty voxel set".to_string()));
    }
    let norm = 1.0 / count as f64;

    let mut loss = 0.0;
    let mut clamp_count = 0usize;
    let mut grad = DenseTensor::zeros(probs.dims, 1);

    for i in 0..target.n_total {
        if !include(i) {
            continue;
        }
        let p = probs.values[i];
        let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
        if clamped {
            clamp_count += 1;
        }
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);

        let (alpha_t, p_t, sign) = if occupied[i] {
            (cfg.alpha, pc, 1.0)
        } else {
            (1.0 - cfg.alpha, 1.0 - pc, -1.0)
        };
        let one_minus = 1.0 - p_t;
        let pow = one_minus.powf(cfg.gamma);
        loss += -alpha_t * pow * p_t.ln();

        if !clamped {
            // d/dp_t of -alpha_t (1-p_t)^g ln(p_t), then chain through
            // dp_t/dp = sign and dp/dz = p(1-p)
            let d_pt = -alpha_t
                * (-cfg.gamma * safe_pow(one_minus, cfg.gamma - 1.0) * p_t.ln() + pow / p_t);
            grad.values[i] = norm * d_pt * sign * pc * (1.0 - pc);
        }
    }

    Ok(LossResult { loss: loss * norm, grad_logits: grad, clamp_count })
}

/// (1-p_t)^(g-1) with the 0^negative edge pinned to 0: it only arises
/// multiplied by log(p_t) -> 0 in the same limit.
fn safe_pow(base: f64, exp: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        base.powf(exp)
    }
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
