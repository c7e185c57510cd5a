//! The occupancy autoencoder: a sparse convolutional encoder over the
//! visible voxels and a small dense transposed-convolution decoder that
//! predicts occupancy probabilities for every voxel of the grid.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::loss::logistic;
use crate::nn::dense_conv::{transposed_conv_backward, transposed_conv_forward, DenseTensor};
use crate::nn::sparse_conv::{sparse_conv_backward, sparse_conv_forward};
use crate::nn::{densify, densify_backward, positional_augment, relu_slice, LayerSpec, ParamTensor};
use crate::voxel::SparseVoxelTensor;

/// Layer schedule: four encoder stages (one submanifold, three stride-2)
/// and three stride-2 transposed-conv decoder stages ending in one
/// logit channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSchedule {
    pub grid_dims: [usize; 3],
    pub input_channels: usize,
    pub positional: bool,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl ModelSchedule {
    /// Desk-scale default: channels 16/32/64/128 down, 32/8/1 up.
    pub fn desk(grid_dims: [usize; 3]) -> Result<Self> {
        Self::new(grid_dims, 4, true, [16, 32, 64, 128], [32, 8])
    }

    /// Reduced-width variant for small grids and gradient checks.
    pub fn micro(grid_dims: [usize; 3]) -> Result<Self> {
        Self::new(grid_dims, 4, true, [6, 8, 8, 12], [8, 4])
    }

    pub fn new(
        grid_dims: [usize; 3],
        input_channels: usize,
        positional: bool,
        enc_channels: [usize; 4],
        dec_channels: [usize; 2],
    ) -> Result<Self> {
        // simulate the encoder's ceil-halving chain to find the latent size
        let mut latent = grid_dims;
        for _ in 0..3 {
            for l in latent.iter_mut() {
                *l = (*l).div_ceil(2);
            }
        }
        // per-axis upsampling factor must be a power of two <= 8 so three
        // stride-2-or-1 transposed convs can climb back to the grid
        let mut dec_strides = [[1usize; 3]; 3];
        for a in 0..3 {
            if grid_dims[a] == 0 || grid_dims[a] % latent[a] != 0 {
                return Err(Error::config(format!(
                    "grid dim {a} = {} cannot be reconstructed from latent {} by stride-2 layers",
                    grid_dims[a], latent[a]
                )));
            }
            let factor = grid_dims[a] / latent[a];
            if !factor.is_power_of_two() || factor > 8 {
                return Err(Error::config(format!(
                    "grid dim {a} = {} over latent {} needs upsampling factor {factor}, not a power of two <= 8",
                    grid_dims[a], latent[a]
                )));
            }
            for (layer, s) in dec_strides.iter_mut().enumerate() {
                if factor >> layer > 1 {
                    s[a] = 2;
                }
            }
        }
        let c0 = input_channels + if positional { 3 } else { 0 };
        let encoder = vec![
            LayerSpec::sparse([3, 3, 3], [1, 1, 1], c0, enc_channels[0], true),
            LayerSpec::sparse([3, 3, 3], [2, 2, 2], enc_channels[0], enc_channels[1], false),
            LayerSpec::sparse([3, 3, 3], [2, 2, 2], enc_channels[1], enc_channels[2], false),
            LayerSpec::sparse([3, 3, 3], [2, 2, 2], enc_channels[2], enc_channels[3], false),
        ];
        let decoder = vec![
            LayerSpec::transposed([3, 3, 3], dec_strides[0], enc_channels[3], dec_channels[0]),
            LayerSpec::transposed([3, 3, 3], dec_strides[1], dec_channels[0], dec_channels[1]),
            LayerSpec::transposed([3, 3, 3], dec_strides[2], dec_channels[1], 1),
        ];
        let s = ModelSchedule { grid_dims, input_channels, positional, encoder, decoder };
        s.shape_ladder()?; // fail at build time, not mid-training
        Ok(s)
    }

    /// Spatial sizes through the network; errors if the ladder does not
    /// land back on the grid dims.
    pub fn shape_ladder(&self) -> Result<Vec<[usize; 3]>> {
        let mut dims = self.grid_dims;
        let mut ladder = vec![dims];
        for spec in &self.encoder {
            dims = if spec.submanifold { dims } else { spec.conv_output_dims(dims)? };
            ladder.push(dims);
        }
        for spec in &self.decoder {
            dims = spec.tconv_output_dims(dims);
            ladder.push(dims);
        }
        if dims != self.grid_dims {
            return Err(Error::config(format!(
                "decoder ladder ends at {dims:?}, expected grid dims {:?}",
                self.grid_dims
            )));
        }
        Ok(ladder)
    }

    pub fn latent_dims(&self) -> [usize; 3] {
        let mut l = self.grid_dims;
        for _ in 0..3 {
            for d in l.iter_mut() {
                *d = (*d).div_ceil(2);
            }
        }
        l
    }

    pub fn all_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.encoder.iter().chain(self.decoder.iter())
    }
}

/// All layer weights, encoder then decoder. Doubles as the gradient
/// container (same shapes).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<ParamTensor>,
    pub decoder: Vec<ParamTensor>,
}

impl ModelParams {
    pub fn init(schedule: &ModelSchedule, rng: &mut ChaCha12Rng) -> Self {
        ModelParams {
            encoder: schedule.encoder.iter().map(|s| ParamTensor::init(s, rng)).collect(),
            decoder: schedule.decoder.iter().map(|s| ParamTensor::init(s, rng)).collect(),
        }
    }

    pub fn zeros_like(schedule: &ModelSchedule) -> Self {
        ModelParams {
            encoder: schedule.encoder.iter().map(ParamTensor::zeros).collect(),
            decoder: schedule.decoder.iter().map(ParamTensor::zeros).collect(),
        }
    }

    pub fn validate(&self, schedule: &ModelSchedule) -> Result<()> {
        if self.encoder.len() != schedule.encoder.len() || self.decoder.len() != schedule.decoder.len() {
            return Err(Error::shape("layer count mismatch with schedule".to_string()));
        }
        for (p, s) in self.encoder.iter().zip(&schedule.encoder) {
            p.validate(s)?;
        }
        for (p, s) in self.decoder.iter().zip(&schedule.decoder) {
            p.validate(s)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &ParamTensor> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// Human-readable name of the i-th tensor (encoder-first order).
    pub fn tensor_name(&self, idx: usize) -> String {
        if idx < self.encoder.len() {
            format!("encoder[{idx}]")
        } else {
            format!("decoder[{}]", idx - self.encoder.len())
        }
    }
}

/// Every intermediate needed for the backward pass.
pub struct ForwardTrace {
    /// Encoder input after (optional) positional augmentation.
    pub enc_input: SparseVoxelTensor,
    /// Pre-activation output of each encoder layer.
    pub enc_pre: Vec<SparseVoxelTensor>,
    /// Post-ReLU output of each encoder layer.
    pub enc_post: Vec<SparseVoxelTensor>,
    pub latent_dense: DenseTensor,
    /// Pre-activation decoder outputs; the last entry holds the logits.
    pub dec_pre: Vec<DenseTensor>,
    /// Post-ReLU decoder outputs (all but the final layer).
    pub dec_post: Vec<DenseTensor>,
    /// Occupancy probabilities, (W, H, D, 1), every value in (0, 1).
    pub probs: DenseTensor,
}

/// Run the autoencoder on the visible voxels. Works on an empty input
/// (decoder biases drive the output).
pub fn forward_model(
    visible: &SparseVoxelTensor,
    params: &ModelParams,
    schedule: &ModelSchedule,
) -> Result<ForwardTrace> {
    params.validate(schedule)?;
    if visible.dims != schedule.grid_dims {
        return Err(Error::shape(format!(
            "input dims {:?} do not match schedule grid {:?}",
            visible.dims, schedule.grid_dims
        )));
    }
    if visible.channels != schedule.input_channels {
        return Err(Error::shape(format!(
            "input has {} channels, schedule expects {}",
            visible.channels, schedule.input_channels
        )));
    }

    let enc_input = if schedule.positional { positional_augment(visible) } else { visible.clone() };

    let mut enc_pre = Vec::with_capacity(schedule.encoder.len());
    let mut enc_post = Vec::with_capacity(schedule.encoder.len());
    let mut cur = enc_input.clone();
    for (spec, p) in schedule.encoder.iter().zip(&params.encoder) {
        let pre = sparse_conv_forward(&cur, spec, p)?;
        let mut post = pre.clone();
        relu_slice(&mut post.features);
        enc_pre.push(pre);
        cur = post.clone();
        enc_post.push(post);
    }

    let latent_dense = densify(&cur);

    let mut dec_pre = Vec::with_capacity(schedule.decoder.len());
    let mut dec_post = Vec::new();
    let mut dcur = latent_dense.clone();
    let n_dec = schedule.decoder.len();
    for (i, (spec, p)) in schedule.decoder.iter().zip(&params.decoder).enumerate() {
        let out_dims = spec.tconv_output_dims(dcur.dims);
        let pre = transposed_conv_forward(&dcur, spec, p, out_dims)?;
        if i + 1 < n_dec {
            let mut post = pre.clone();
            relu_slice(&mut post.values);
            dcur = post.clone();
            dec_post.push(post);
        } else {
            dcur = pre.clone();
        }
        dec_pre.push(pre);
    }

    let logits = dec_pre.last().expect("decoder has layers");
    let mut probs = DenseTensor::zeros(logits.dims, 1);
    for (o, &z) in probs.values.iter_mut().zip(logits.values.iter()) {
        *o = logistic(z);
    }

    Ok(ForwardTrace { enc_input, enc_pre, enc_post, latent_dense, dec_pre, dec_post, probs })
}

/// Backpropagate a gradient w.r.t. the logits through the whole model.
/// Returns parameter gradients shaped like `ModelParams`.
pub fn backward_model(
    trace: &ForwardTrace,
    params: &ModelParams,
    schedule: &ModelSchedule,
    grad_logits: &DenseTensor,
) -> Result<ModelParams> {
    let mut grads = ModelParams::zeros_like(schedule);

    // decoder, last to first
    let mut upstream = grad_logits.clone();
    for i in (0..schedule.decoder.len()).rev() {
        let spec = &schedule.decoder[i];
        let input = if i == 0 { &trace.latent_dense } else { &trace.dec_post[i - 1] };
        let (mut d_input, d_params) =
            transposed_conv_backward(input, spec, &params.decoder[i], &upstream)?;
        grads.decoder[i] = d_params;
        if i > 0 {
            // chain through the ReLU between decoder layers
            let pre = &trace.dec_pre[i - 1];
            for (g, &x) in d_input.values.iter_mut().zip(pre.values.iter()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        upstream = d_input;
    }

    // densify adjoint: sample the dense gradient at the latent support
    let last_post = trace.enc_post.last().expect("encoder has layers");
    let mut sparse_grad = densify_backward(last_post, &upstream);

    // encoder, last to first
    for i in (0..schedule.encoder.len()).rev() {
        let spec = &schedule.encoder[i];
        let pre = &trace.enc_pre[i];
        for (g, &x) in sparse_grad.iter_mut().zip(pre.features.iter()) {
            if x <= 0.0 {
                *g = 0.0;
            }
        }
        let upstream_sparse = SparseVoxelTensor {
            dims: pre.dims,
            channels: pre.channels,
            coords: pre.coords.clone(),
            features: sparse_grad,
        };
        let input = if i == 0 { &trace.enc_input } else { &trace.enc_post[i - 1] };
        let (d_input, d_params) =
            sparse_conv_backward(input, spec, &params.encoder[i], &upstream_sparse)?;
        grads.encoder[i] = d_params;
        sparse_grad = d_input;
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stream};

    #[test]
    fn desk_shape_ladder() {
        let s = ModelSchedule::desk([64, 64, 16]).unwrap();
        let ladder = s.shape_ladder().unwrap();
        assert_eq!(
            ladder,
            vec![
                [64, 64, 16],
                [64, 64, 16],
                [32, 32, 8],
                [16, 16, 4],
                [8, 8, 2],
                [16, 16, 4],
                [32, 32, 8],
                [64, 64, 16],
            ]
        );
        assert_eq!(s.latent_dims(), [8, 8, 2]);
    }

    #[test]
    fn bad_grid_rejected_at_build() {
        assert!(ModelSchedule::desk([60, 64, 16]).is_err());
    }

    #[test]
    fn outputs_strictly_in_unit_interval() {
        let s = ModelSchedule::micro([16, 16, 8]).unwrap();
        let mut rng = rng_for(1, Stream::Init, 0);
        let params = ModelParams::init(&s, &mut rng);
        let mut input = SparseVoxelTensor::empty([16, 16, 8], 4);
        input.coords.push([3, 4, 2]);
        input.features.extend_from_slice(&[1.5, 2.0, 1.0, 0.5]);
        input.coords.push([10, 2, 5]);
        input.features.extend_from_slice(&[5.0, 1.0, 2.5, 0.9]);
        let trace = forward_model(&input, &params, &s).unwrap();
        assert_eq!(trace.probs.dims, [16, 16, 8]);
        assert_eq!(trace.probs.channels, 1);
        assert!(trace.probs.values.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn empty_input_is_well_defined() {
        let s = ModelSchedule::micro([16, 16, 8]).unwrap();
        let mut rng = rng_for(2, Stream::Init, 0);
        let params = ModelParams::init(&s, &mut rng);
        let input = SparseVoxelTensor::empty([16, 16, 8], 4);
        let trace = forward_model(&input, &params, &s).unwrap();
        assert!(trace.probs.values.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
