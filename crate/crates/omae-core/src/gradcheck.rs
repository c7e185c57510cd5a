//! Central finite-difference verification of every analytic gradient:
//! per-layer checks on small random instances and an end-to-end check of
//! the full model loss. Backs the `gradcheck` CLI command and the test
//! suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::loss::{focal_loss, logistic, LossConfig};
use crate::model::{backward_model, forward_model, ModelParams, ModelSchedule};
use crate::nn::dense_conv::{
    dense_conv_backward, dense_conv_oracle, transposed_conv_backward, transposed_conv_forward,
    DenseTensor,
};
use crate::nn::sparse_conv::{sparse_conv_backward, sparse_conv_forward};
use crate::nn::{LayerSpec, ParamTensor};
use crate::voxel::{OccupancyTarget, SparseVoxelTensor};

pub const FD_EPS: f64 = 1e-6;
/// Larger step for the end-to-end check, where per-parameter gradients
/// can be ~1e-8 and a 1e-6 step drowns in f64 cancellation.
pub const E2E_FD_EPS: f64 = 1e-4;
pub const LAYER_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_sparse(dims: [usize; 3], channels: usize, density: f64, rng: &mut ChaCha12Rng) -> SparseVoxelTensor {
    let mut t = SparseVoxelTensor::empty(dims, channels);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if rng.gen::<f64>() < density {
                    t.coords.push([x, y, z]);
                    for _ in 0..channels {
                        t.features.push(rng.gen_range(-1.0..1.0));
                    }
                }
            }
        }
    }
    t
}

fn random_params(spec: &LayerSpec, rng: &mut ChaCha12Rng) -> ParamTensor {
    let mut p = ParamTensor::zeros(spec);
    for v in p.weights.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in p.bias.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    p
}

fn random_dense(dims: [usize; 3], c: usize, rng: &mut ChaCha12Rng) -> DenseTensor {
    let mut t = DenseTensor::zeros(dims, c);
    for v in t.values.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    t
}

/// Scalar objective: projection of the layer output onto fixed random
/// weights. FD on each parameter/input entry against the analytic grads.
fn check_sparse_layer(name: &str, spec: &LayerSpec, seed: u64) -> CheckEntry {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let input = random_sparse([4, 4, 4], spec.in_channels, 0.4, &mut rng);
    let params = random_params(spec, &mut rng);
    let out0 = sparse_conv_forward(&input, spec, &params).unwrap();
    let proj: Vec<f64> = (0..out0.features.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let objective = |input: &SparseVoxelTensor, params: &ParamTensor| -> f64 {
        let out = sparse_conv_forward(input, spec, params).unwrap();
        out.features.iter().zip(proj.iter()).map(|(a, b)| a * b).sum()
    };

    // analytic: upstream grad = projection weights
    let upstream = SparseVoxelTensor {
        dims: out0.dims,
        channels: out0.channels,
        coords: out0.coords.clone(),
        features: proj.clone(),
    };
    let (d_input, d_params) = sparse_conv_backward(&input, spec, &params, &upstream).unwrap();

    let mut max_err: f64 = 0.0;
    for i in 0..params.weights.len() {
        let mut pp = params.clone();
        let mut pm = params.clone();
        pp.weights[i] += FD_EPS;
        pm.weights[i] -= FD_EPS;
        let fd = (objective(&input, &pp) - objective(&input, &pm)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_params.weights[i], fd));
    }
    for i in 0..params.bias.len() {
        let mut pp = params.clone();
        let mut pm = params.clone();
        pp.bias[i] += FD_EPS;
        pm.bias[i] -= FD_EPS;
        let fd = (objective(&input, &pp) - objective(&input, &pm)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_params.bias[i], fd));
    }
    for i in 0..input.features.len() {
        let mut ip = input.clone();
        let mut im = input.clone();
        ip.features[i] += FD_EPS;
        im.features[i] -= FD_EPS;
        let fd = (objective(&ip, &params) - objective(&im, &params)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_input[i], fd));
    }
    CheckEntry { name: name.to_string(), max_rel_err: max_err, tolerance: LAYER_TOL }
}

fn check_dense_conv(seed: u64) -> CheckEntry {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let spec = LayerSpec::sparse([3, 3, 3], [2, 2, 2], 2, 3, false);
    let input = random_dense([5, 4, 4], 2, &mut rng);
    let params = random_params(&spec, &mut rng);
    let out0 = dense_conv_oracle(&input, &spec, &params).unwrap();
    let mut proj = DenseTensor::zeros(out0.dims, out0.channels);
    for v in proj.values.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }

    let objective = |input: &DenseTensor, params: &ParamTensor| -> f64 {
        let out = dense_conv_oracle(input, &spec, params).unwrap();
        out.values.iter().zip(proj.values.iter()).map(|(a, b)| a * b).sum()
    };
    let (d_input, d_params) = dense_conv_backward(&input, &spec, &params, &proj).unwrap();

    let mut max_err: f64 = 0.0;
    for i in 0..params.weights.len() {
        let mut pp = params.clone();
        let mut pm = params.clone();
        pp.weights[i] += FD_EPS;
        pm.weights[i] -= FD_EPS;
        let fd = (objective(&input, &pp) - objective(&input, &pm)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_params.weights[i], fd));
    }
    for i in (0..input.values.len()).step_by(3) {
        let mut ip = input.clone();
        let mut im = input.clone();
        ip.values[i] += FD_EPS;
        im.values[i] -= FD_EPS;
        let fd = (objective(&ip, &params) - objective(&im, &params)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_input.values[i], fd));
    }
    CheckEntry { name: "dense_conv".to_string(), max_rel_err: max_err, tolerance: LAYER_TOL }
}

fn check_transposed_conv(seed: u64) -> CheckEntry {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let spec = LayerSpec::transposed([3, 3, 3], [2, 2, 2], 3, 2);
    let input = random_dense([3, 3, 2], 3, &mut rng);
    let out_dims = spec.tconv_output_dims(input.dims);
    let params = random_params(&spec, &mut rng);
    let out0 = transposed_conv_forward(&input, &spec, &params, out_dims).unwrap();
    let mut proj = DenseTensor::zeros(out0.dims, out0.channels);
    for v in proj.values.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }

    let objective = |input: &DenseTensor, params: &ParamTensor| -> f64 {
        let out = transposed_conv_forward(input, &spec, params, out_dims).unwrap();
        out.values.iter().zip(proj.values.iter()).map(|(a, b)| a * b).sum()
    };
    let (d_input, d_params) = transposed_conv_backward(&input, &spec, &params, &proj).unwrap();

    let mut max_err: f64 = 0.0;
    for i in 0..params.weights.len() {
        let mut pp = params.clone();
        let mut pm = params.clone();
        pp.weights[i] += FD_EPS;
        pm.weights[i] -= FD_EPS;
        let fd = (objective(&input, &pp) - objective(&input, &pm)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_params.weights[i], fd));
    }
    for i in 0..params.bias.len() {
        let mut pp = params.clone();
        let mut pm = params.clone();
        pp.bias[i] += FD_EPS;
        pm.bias[i] -= FD_EPS;
        let fd = (objective(&input, &pp) - objective(&input, &pm)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_params.bias[i], fd));
    }
    for i in 0..input.values.len() {
        let mut ip = input.clone();
        let mut im = input.clone();
        ip.values[i] += FD_EPS;
        im.values[i] -= FD_EPS;
        let fd = (objective(&ip, &params) - objective(&im, &params)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(d_input.values[i], fd));
    }
    CheckEntry { name: "transposed_conv".to_string(), max_rel_err: max_err, tolerance: LAYER_TOL }
}

fn check_focal_loss(seed: u64) -> CheckEntry {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = 27;
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let occupied: Vec<usize> = (0..n).filter(|_| rng.gen::<bool>()).collect();
    let target = OccupancyTarget { occupied, n_total: n };
    let cfg = LossConfig::default();

    let eval = |z: &[f64]| -> f64 {
        let probs = DenseTensor {
            dims: [3, 3, 3],
            channels: 1,
            values: z.iter().map(|&v| logistic(v)).collect(),
        };
        focal_loss(&probs, &target, &cfg, None).unwrap().loss
    };
    let probs = DenseTensor {
        dims: [3, 3, 3],
        channels: 1,
        values: logits.iter().map(|&v| logistic(v)).collect(),
    };
    let analytic = focal_loss(&probs, &target, &cfg, None).unwrap().grad_logits;

    let mut max_err: f64 = 0.0;
    for i in 0..n {
        let mut zp = logits.clone();
        let mut zm = logits.clone();
        zp[i] += FD_EPS;
        zm[i] -= FD_EPS;
        let fd = (eval(&zp) - eval(&zm)) / (2.0 * FD_EPS);
        max_err = max_err.max(rel_err(analytic.values[i], fd));
    }
    CheckEntry { name: "focal_loss".to_string(), max_rel_err: max_err, tolerance: LAYER_TOL }
}

/// Full-model check on an 8x8x4 grid: analytic loss gradient for every
/// parameter tensor vs finite differences on a sample of entries.
pub fn check_end_to_end(seed: u64, samples_per_tensor: usize) -> CheckEntry {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let schedule = ModelSchedule::new([8, 8, 4], 4, true, [4, 5, 5, 6], [5, 4]).unwrap();
    let params = ModelParams::init(&schedule, &mut rng);

    let visible = random_sparse([8, 8, 4], 4, 0.2, &mut rng);
    let occupied: Vec<usize> = {
        let mut occ: Vec<usize> = visible
            .coords
            .iter()
            .map(|&c| (c[2] * 8 + c[1]) * 8 + c[0])
            .collect();
        // some additional masked-but-occupied voxels
        for _ in 0..20 {
            occ.push(rng.gen_range(0..8 * 8 * 4));
        }
        occ.sort_unstable();
        occ.dedup();
        occ
    };
    let target = OccupancyTarget { occupied, n_total: 8 * 8 * 4 };
    let loss_cfg = LossConfig::default();

    let eval = |p: &ModelParams| -> f64 {
        let trace = forward_model(&visible, p, &schedule).unwrap();
        focal_loss(&trace.probs, &target, &loss_cfg, None).unwrap().loss
    };

    let trace = forward_model(&visible, &params, &schedule).unwrap();
    let lr = focal_loss(&trace.probs, &target, &loss_cfg, None).unwrap();
    let grads = backward_model(&trace, &params, &schedule, &lr.grad_logits).unwrap();

    let n_tensors = params.tensors().count();
    let mut max_err: f64 = 0.0;
    for ti in 0..n_tensors {
        let (w_len, b_len) = {
            let t = params.tensors().nth(ti).unwrap();
            (t.weights.len(), t.bias.len())
        };
        let g = grads.tensors().nth(ti).unwrap().clone();
        let mut idxs: Vec<(bool, usize)> = Vec::new();
        for _ in 0..samples_per_tensor {
            idxs.push((true, rng.gen_range(0..w_len)));
        }
        for b in 0..b_len.min(3) {
            idxs.push((false, b));
        }
        for (is_weight, i) in idxs {
            let fd_at = |eps: f64| -> f64 {
                let mut pp = params.clone();
                let mut pm = params.clone();
                {
                    let tp = pp.tensors_mut().nth(ti).unwrap();
                    let tm = pm.tensors_mut().nth(ti).unwrap();
                    if is_weight {
                        tp.weights[i] += eps;
                        tm.weights[i] -= eps;
                    } else {
                        tp.bias[i] += eps;
                        tm.bias[i] -= eps;
                    }
                }
                (eval(&pp) - eval(&pm)) / (2.0 * eps)
            };
            let fd1 = fd_at(E2E_FD_EPS);
            let fd2 = fd_at(E2E_FD_EPS / 2.0);
            // a ReLU kink inside the step (or pure roundoff on a tiny
            // gradient) makes the FD estimate itself unstable; such
            // entries carry no signal about the analytic gradient
            if rel_err(fd1, fd2) > END_TO_END_TOL {
                continue;
            }
            let a = if is_weight { g.weights[i] } else { g.bias[i] };
            max_err = max_err.max(rel_err(a, fd2));
        }
    }
    CheckEntry { name: "end_to_end_model".to_string(), max_rel_err: max_err, tolerance: END_TO_END_TOL }
}

/// Run the full gradient-check suite.
pub fn check_all(seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    report.entries.push(check_sparse_layer(
        "sparse_conv_submanifold",
        &LayerSpec::sparse([3, 3, 3], [1, 1, 1], 2, 3, true),
        seed ^ 1,
    ));
    report.entries.push(check_sparse_layer(
        "sparse_conv_strided",
        &LayerSpec::sparse([3, 3, 3], [2, 2, 2], 2, 3, false),
        seed ^ 2,
    ));
    report.entries.push(check_dense_conv(seed ^ 3));
    report.entries.push(check_transposed_conv(seed ^ 4));
    report.entries.push(check_focal_loss(seed ^ 5));
    report.entries.push(check_end_to_end(seed ^ 6, 20));
    Ok(report)
}
