//! Dense tensors, the brute-force convolution oracle, and transposed
//! convolutions (the decoder path).
//!
//! The oracle is a literal six-nested-loop zero-padded convolution with no
//! performance ambitions; it exists to pin down what the sparse path must
//! compute. The transposed convolution is implemented as the exact adjoint
//! of that convolution, which makes the inner-product identity
//! `<conv(a), b> == <a, tconv(b)>` hold by construction.

use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, ParamTensor};

/// Dense (W, H, D, C) tensor, x-major then y, z, channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub dims: [usize; 3],
    pub channels: usize,
    pub values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(dims: [usize; 3], channels: usize) -> Self {
        DenseTensor { dims, channels, values: vec![0.0; dims[0] * dims[1] * dims[2] * channels] }
    }

    /// Spatial cell index (channel-free); matches the grid linear index.
    #[inline]
    pub fn spatial_index(&self, coord: [usize; 3]) -> usize {
        (coord[2] * self.dims[1] + coord[1]) * self.dims[0] + coord[0]
    }

    #[inline]
    pub fn index(&self, coord: [usize; 3], c: usize) -> usize {
        self.spatial_index(coord) * self.channels + c
    }

    pub fn at(&self, coord: [usize; 3], c: usize) -> f64 {
        self.values[self.index(coord, c)]
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

fn check_dense_input(input: &DenseTensor, spec: &LayerSpec) -> Result<()> {
    spec.validate()?;
    if input.channels != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            input.channels, spec.in_channels
        )));
    }
    Ok(())
}

/// Brute-force zero-padded strided convolution. Verification oracle for
/// the sparse path; also usable as a slow reference forward.
pub fn dense_conv_oracle(input: &DenseTensor, spec: &LayerSpec, params: &ParamTensor) -> Result<DenseTensor> {
    check_dense_input(input, spec)?;
    params.validate(spec)?;
    let out_dims = spec.conv_output_dims(input.dims)?;
    let mut out = DenseTensor::zeros(out_dims, spec.out_channels);

    for oz in 0..out_dims[2] {
        for oy in 0..out_dims[1] {
            for ox in 0..out_dims[0] {
                for co in 0..spec.out_channels {
                    let mut acc = params.bias[co];
                    for kx in 0..spec.filter[0] {
                        for ky in 0..spec.filter[1] {
                            for kz in 0..spec.filter[2] {
                                let ix = (ox * spec.stride[0] + kx) as isize - spec.padding[0] as isize;
                                let iy = (oy * spec.stride[1] + ky) as isize - spec.padding[1] as isize;
                                let iz = (oz * spec.stride[2] + kz) as isize - spec.padding[2] as isize;
                                if ix < 0 || iy < 0 || iz < 0 {
                                    continue;
                                }
                                let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
                                if ix >= input.dims[0] || iy >= input.dims[1] || iz >= input.dims[2] {
                                    continue;
                                }
                                for ci in 0..spec.in_channels {
                                    acc += params.weights
                                        [ParamTensor::w_index(spec, [kx, ky, kz], ci, co)]
                                        * input.at([ix, iy, iz], ci);
                                }
                            }
                        }
                    }
                    let idx = out.index([ox, oy, oz], co);
                    out.values[idx] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of the dense convolution w.r.t. input and parameters.
pub fn dense_conv_backward(
    input: &DenseTensor,
    spec: &LayerSpec,
    params: &ParamTensor,
    upstream: &DenseTensor,
) -> Result<(DenseTensor, ParamTensor)> {
    check_dense_input(input, spec)?;
    let out_dims = spec.conv_output_dims(input.dims)?;
    if upstream.dims != out_dims || upstream.channels != spec.out_channels {
        return Err(Error::shape("upstream gradient shape mismatch".to_string()));
    }
    let mut d_input = DenseTensor::zeros(input.dims, input.channels);
    let mut d_params = ParamTensor::zeros(spec);

    for oz in 0..out_dims[2] {
        for oy in 0..out_dims[1] {
            for ox in 0..out_dims[0] {
                for co in 0..spec.out_channels {
                    let g = upstream.at([ox, oy, oz], co);
                    d_params.bias[co] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for kx in 0..spec.filter[0] {
                        for ky in 0..spec.filter[1] {
                            for kz in 0..spec.filter[2] {
                                let ix = (ox * spec.stride[0] + kx) as isize - spec.padding[0] as isize;
                                let iy = (oy * spec.stride[1] + ky) as isize - spec.padding[1] as isize;
                                let iz = (oz * spec.stride[2] + kz) as isize - spec.padding[2] as isize;
                                if ix < 0 || iy < 0 || iz < 0 {
                                    continue;
                                }
                                let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
                                if ix >= input.dims[0] || iy >= input.dims[1] || iz >= input.dims[2] {
                                    continue;
                                }
                                for ci in 0..spec.in_channels {
                                    let wi = ParamTensor::w_index(spec, [kx, ky, kz], ci, co);
                                    d_params.weights[wi] += input.at([ix, iy, iz], ci) * g;
                                    let di = d_input.index([ix, iy, iz], ci);
                                    d_input.values[di] += params.weights[wi] * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((d_input, d_params))
}

fn check_tconv(input: &DenseTensor, spec: &LayerSpec, out_dims: [usize; 3]) -> Result<()> {
    spec.validate()?;
    if spec.kind != LayerKind::TransposedConv {
        return Err(Error::shape("layer is not a transposed convolution".to_string()));
    }
    if input.channels != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            input.channels, spec.in_channels
        )));
    }
    // out_dims must be an input size the matching forward conv maps back
    // to this layer's input dims
    let conv_like = LayerSpec { kind: LayerKind::SparseConv, submanifold: false, ..spec.clone() };
    let roundtrip = conv_like.conv_output_dims(out_dims)?;
    if roundtrip != input.dims {
        return Err(Error::shape(format!(
            "transposed conv output dims {out_dims:?} are inconsistent with input dims {:?}",
            input.dims
        )));
    }
    Ok(())
}

/// Transposed convolution: adjoint of `dense_conv_oracle` with the same
/// filter/stride/padding, plus its own bias. `out_dims` names the spatial
/// size being reconstructed (the ladder uses `in * stride`).
pub fn transposed_conv_forward(
    input: &DenseTensor,
    spec: &LayerSpec,
    params: &ParamTensor,
    out_dims: [usize; 3],
) -> Result<DenseTensor> {
    check_tconv(input, spec, out_dims)?;
    params.validate(spec)?;
    let mut out = DenseTensor::zeros(out_dims, spec.out_channels);
    for v in out.values.chunks_exact_mut(spec.out_channels) {
        v.copy_from_slice(&params.bias);
    }

    // scatter: each input cell contributes through every kernel tap
    for iz in 0..input.dims[2] {
        for iy in 0..input.dims[1] {
            for ix in 0..input.dims[0] {
                for kx in 0..spec.filter[0] {
                    for ky in 0..spec.filter[1] {
                        for kz in 0..spec.filter[2] {
                            let ox = (ix * spec.stride[0] + kx) as isize - spec.padding[0] as isize;
                            let oy = (iy * spec.stride[1] + ky) as isize - spec.padding[1] as isize;
                            let oz = (iz * spec.stride[2] + kz) as isize - spec.padding[2] as isize;
                            if ox < 0 || oy < 0 || oz < 0 {
                                continue;
                            }
                            let (ox, oy, oz) = (ox as usize, oy as usize, oz as usize);
                            if ox >= out_dims[0] || oy >= out_dims[1] || oz >= out_dims[2] {
                                continue;
                            }
                            for co in 0..spec.out_channels {
                                let mut acc = 0.0;
                                for ci in 0..spec.in_channels {
                                    acc += params.weights
                                        [ParamTensor::w_index(spec, [kx, ky, kz], ci, co)]
                                        * input.at([ix, iy, iz], ci);
                                }
                                let oi = out.index([ox, oy, oz], co);
                                out.values[oi] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of the transposed convolution.
pub fn transposed_conv_backward(
    input: &DenseTensor,
    spec: &LayerSpec,
    params: &ParamTensor,
    upstream: &DenseTensor,
) -> Result<(DenseTensor, ParamTensor)> {
    check_tconv(input, spec, upstream.dims)?;
    if upstream.channels != spec.out_channels {
        return Err(Error::shape("upstream gradient channel mismatch".to_string()));
    }
    let mut d_input = DenseTensor::zeros(input.dims, input.channels);
    let mut d_params = ParamTensor::zeros(spec);

    for (cell, g) in upstream.values.chunks_exact(spec.out_channels).enumerate() {
        let _ = cell;
        for co in 0..spec.out_channels {
            d_params.bias[co] += g[co];
        }
    }

    for iz in 0..input.dims[2] {
        for iy in 0..input.dims[1] {
            for ix in 0..input.dims[0] {
                for kx in 0..spec.filter[0] {
                    for ky in 0..spec.filter[1] {
                        for kz in 0..spec.filter[2] {
                            let ox = (ix * spec.stride[0] + kx) as isize - spec.padding[0] as isize;
                            let oy = (iy * spec.stride[1] + ky) as isize - spec.padding[1] as isize;
                            let oz = (iz * spec.stride[2] + kz) as isize - spec.padding[2] as isize;
                            if ox < 0 || oy < 0 || oz < 0 {
                                continue;
                            }
                            let (ox, oy, oz) = (ox as usize, oy as usize, oz as usize);
                            if ox >= upstream.dims[0] || oy >= upstream.dims[1] || oz >= upstream.dims[2] {
                                continue;
                            }
                            for co in 0..spec.out_channels {
                                let g = upstream.at([ox, oy, oz], co);
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..spec.in_channels {
                                    let wi = ParamTensor::w_index(spec, [kx, ky, kz], ci, co);
                                    d_params.weights[wi] += input.at([ix, iy, iz], ci) * g;
                                    let di = d_input.index([ix, iy, iz], ci);
                                    d_input.values[di] += params.weights[wi] * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((d_input, d_params))
}
