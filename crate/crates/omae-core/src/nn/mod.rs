//! Numeric kernels: layer specifications, parameter tensors, sparse and
//! dense 3D convolutions with analytic gradients, and the small glue ops
//! (ReLU, densify, positional feature augmentation).

pub mod dense_conv;
pub mod sparse_conv;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::voxel::SparseVoxelTensor;

pub use dense_conv::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    SparseConv,
    TransposedConv,
}

/// One convolutional layer of the schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filter: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_channels: usize,
    pub out_channels: usize,
    /// Output support equals input support; only meaningful for
    /// stride-(1,1,1) sparse convolutions.
    pub submanifold: bool,
}

impl LayerSpec {
    pub fn sparse(
        filter: [usize; 3],
        stride: [usize; 3],
        in_channels: usize,
        out_channels: usize,
        submanifold: bool,
    ) -> Self {
        let padding = [filter[0] / 2, filter[1] / 2, filter[2] / 2];
        LayerSpec { kind: LayerKind::SparseConv, filter, stride, padding, in_channels, out_channels, submanifold }
    }

    pub fn transposed(
        filter: [usize; 3],
        stride: [usize; 3],
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        let padding = [filter[0] / 2, filter[1] / 2, filter[2] / 2];
        LayerSpec { kind: LayerKind::TransposedConv, filter, stride, padding, in_channels, out_channels, submanifold: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 1 || self.out_channels < 1 {
            return Err(Error::config("channel counts must be >= 1".to_string()));
        }
        for &k in &self.filter {
            if k < 1 {
                return Err(Error::config("filter components must be >= 1".to_string()));
            }
        }
        for &s in &self.stride {
            if s < 1 {
                return Err(Error::config("stride components must be >= 1".to_string()));
            }
        }
        if self.submanifold {
            if self.kind != LayerKind::SparseConv {
                return Err(Error::config("only sparse convs can be submanifold".to_string()));
            }
            if self.stride != [1, 1, 1] {
                return Err(Error::config("submanifold layers require stride (1,1,1)".to_string()));
            }
            if self.filter.iter().any(|k| k % 2 == 0) {
                return Err(Error::config("submanifold layers require odd filter sizes".to_string()));
            }
        }
        Ok(())
    }

    /// Spatial output size of a (strided) convolution with this spec.
    pub fn conv_output_dims(&self, in_dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let padded = in_dims[a] + 2 * self.padding[a];
            if padded < self.filter[a] {
                return Err(Error::shape(format!(
                    "input dim {} too small for filter {} with padding {}",
                    in_dims[a], self.filter[a], self.padding[a]
                )));
            }
            out[a] = (padded - self.filter[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Spatial output size of a transposed convolution: the input size a
    /// forward conv with this spec would have reduced to `in_dims`. With
    /// the filter-3 / stride-2 / padding-1 ladder this is exactly
    /// `in * stride`.
    pub fn tconv_output_dims(&self, in_dims: [usize; 3]) -> [usize; 3] {
        [
            in_dims[0] * self.stride[0],
            in_dims[1] * self.stride[1],
            in_dims[2] * self.stride[2],
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.filter[0] * self.filter[1] * self.filter[2] * self.in_channels * self.out_channels
    }
}

/// Weights (k_x, k_y, k_z, C_in, C_out row-major) plus per-output-channel
/// bias for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(spec: &LayerSpec) -> Self {
        ParamTensor { weights: vec![0.0; spec.weight_len()], bias: vec![0.0; spec.out_channels] }
    }

    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn init(spec: &LayerSpec, rng: &mut ChaCha12Rng) -> Self {
        let k = spec.filter[0] * spec.filter[1] * spec.filter[2];
        let fan_in = (k * spec.in_channels) as f64;
        let fan_out = (k * spec.out_channels) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let weights = (0..spec.weight_len()).map(|_| rng.gen_range(-bound..bound)).collect();
        ParamTensor { weights, bias: vec![0.0; spec.out_channels] }
    }

    pub fn validate(&self, spec: &LayerSpec) -> Result<()> {
        if self.weights.len() != spec.weight_len() || self.bias.len() != spec.out_channels {
            return Err(Error::shape(format!(
                "param tensor shape mismatch: {} weights / {} bias vs spec {} / {}",
                self.weights.len(),
                self.bias.len(),
                spec.weight_len(),
                spec.out_channels
            )));
        }
        if self.weights.iter().chain(self.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite parameter value".to_string()));
        }
        Ok(())
    }

    /// Flat weight index for (kx, ky, kz, ci, co).
    #[inline]
    pub fn w_index(spec: &LayerSpec, k: [usize; 3], ci: usize, co: usize) -> usize {
        (((k[0] * spec.filter[1] + k[1]) * spec.filter[2] + k[2]) * spec.in_channels + ci)
            * spec.out_channels
            + co
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu_slice(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = relu(*v);
    }
}

/// Gradient of ReLU given the pre-activation values.
pub fn relu_backward(pre: &[f64], upstream: &mut [f64]) {
    for (g, &x) in upstream.iter_mut().zip(pre.iter()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Append 3 channels of normalized voxel-center coordinates, each in
/// (0, 1) over the tensor's grid. Raises the channel count by 3.
pub fn positional_augment(input: &SparseVoxelTensor) -> SparseVoxelTensor {
    let c_out = input.channels + 3;
    let mut features = Vec::with_capacity(input.len() * c_out);
    for (row, &coord) in input.coords.iter().enumerate() {
        features.extend_from_slice(input.feature(row));
        for a in 0..3 {
            features.push((coord[a] as f64 + 0.5) / input.dims[a] as f64);
        }
    }
    SparseVoxelTensor { dims: input.dims, channels: c_out, coords: input.coords.clone(), features }
}

/// Scatter a sparse tensor into a dense one, zeros elsewhere.
pub fn densify(input: &SparseVoxelTensor) -> DenseTensor {
    let mut out = DenseTensor::zeros(input.dims, input.channels);
    for (row, &coord) in input.coords.iter().enumerate() {
        let base = out.spatial_index(coord) * input.channels;
        out.values[base..base + input.channels].copy_from_slice(input.feature(row));
    }
    out
}

/// Gradient of densify: sample the dense upstream gradient at the sparse
/// support. Off-support cells are constant zero and contribute nothing.
pub fn densify_backward(input: &SparseVoxelTensor, upstream: &DenseTensor) -> Vec<f64> {
    let mut grad = Vec::with_capacity(input.len() * input.channels);
    for &coord in &input.coords {
        let base = upstream.spatial_index(coord) * input.channels;
        grad.extend_from_slice(&upstream.values[base..base + input.channels]);
    }
    grad
}
