//! Adam optimizer over the model's parameter tensors.

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("adam eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First/second moment estimates, one slot per flat parameter array
/// (weights and bias of each tensor, encoder-first declaration order).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        for t in params.tensors() {
            m.push(vec![0.0; t.weights.len()]);
            m.push(vec![0.0; t.bias.len()]);
        }
        AdamState { step: 0, m: m.clone(), v: m }
    }
}

/// One Adam update. Rejects non-finite gradients before touching any
/// parameter, naming the offending tensor and its max |grad|.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;

    for (idx, g) in grads.tensors().enumerate() {
        let bad = g.weights.iter().chain(g.bias.iter()).any(|v| !v.is_finite());
        if bad {
            let max = g
                .weights
                .iter()
                .chain(g.bias.iter())
                .fold(0.0f64, |acc, &v| if v.is_finite() { acc.max(v.abs()) } else { f64::INFINITY });
            return Err(Error::numeric(format!(
                "non-finite gradient in {} (max |grad| = {max})",
                grads.tensor_name(idx)
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let mut slot = 0usize;
    let grad_arrays: Vec<&[f64]> = grads
        .tensors()
        .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
        .collect();
    for p in params.tensors_mut() {
        for arr in [&mut p.weights, &mut p.bias] {
            let g = grad_arrays[slot];
            let m = &mut state.m[slot];
            let v = &mut state.v[slot];
            for i in 0..arr.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                arr[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            slot += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSchedule;
    use crate::rng::{rng_for, Stream};

    fn tiny_setup() -> (crate::model::ModelSchedule, ModelParams) {
        let s = ModelSchedule::micro([8, 8, 8]).unwrap();
        let mut rng = rng_for(1, Stream::Init, 0);
        let p = ModelParams::init(&s, &mut rng);
        (s, p)
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let (s, mut p) = tiny_setup();
        let before = p.clone();
        let grads = ModelParams::zeros_like(&s);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    // Hand-computed 3-step update table for a single scalar parameter
    // with grads 1.0, -0.5, 0.25 (lr 0.1, betas 0.9/0.999, eps 1e-8).
    #[test]
    fn matches_hand_computed_sequence() {
        let cfg = AdamConfig { learning_rate: 0.1, ..AdamConfig::default() };
        let grads_seq = [1.0, -0.5, 0.25];
        let mut theta: f64 = 0.5;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        let mut expected = Vec::new();
        for (step, &g) in grads_seq.iter().enumerate() {
            let t = (step + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            expected.push(theta);
        }
        // after step 1 the update is -lr * g/|g| = -0.1 (up to eps)
        assert!((expected[0] - 0.4).abs() < 1e-6);

        // drive the real optimizer with a 1-parameter model stand-in:
        // reuse a full model but check one specific weight slot
        let (s, mut p) = tiny_setup();
        let mut state = AdamState::new(&p);
        let w0_before = p.encoder[0].weights[0];
        let mut hand = w0_before;
        let mut hm = 0.0f64;
        let mut hv = 0.0f64;
        for (step, &g) in grads_seq.iter().enumerate() {
            let mut grads = ModelParams::zeros_like(&s);
            grads.encoder[0].weights[0] = g;
            adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
            let t = (step + 1) as i32;
            hm = 0.9 * hm + 0.1 * g;
            hv = 0.999 * hv + 0.001 * g * g;
            let m_hat = hm / (1.0 - 0.9f64.powi(t));
            let v_hat = hv / (1.0 - 0.999f64.powi(t));
            hand -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p.encoder[0].weights[0] - hand).abs() < 1e-15, "step {t}");
        }
        assert_ne!(p.encoder[0].weights[0], w0_before);
    }

    #[test]
    fn nan_grad_aborts_step() {
        let (s, mut p) = tiny_setup();
        let before = p.clone();
        let mut grads = ModelParams::zeros_like(&s);
        grads.decoder[1].weights[3] = f64::NAN;
        let mut state = AdamState::new(&p);
        let err = adam_step(&mut p, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("decoder[2]") || err.to_string().contains("decoder[1]"));
        assert_eq!(p, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let (s, mut p) = tiny_setup();
            let mut state = AdamState::new(&p);
            for i in 0..5 {
                let mut grads = ModelParams::zeros_like(&s);
                for (j, t) in grads.tensors_mut().enumerate() {
                    for (k, w) in t.weights.iter_mut().enumerate() {
                        *w = ((i + j + k) as f64).sin();
                    }
                }
                adam_step(&mut p, &grads, &mut state, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
