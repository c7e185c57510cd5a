//! Sparse 3D convolutions over coordinate-list tensors.
//!
//! Two flavors: submanifold (stride 1, output support equals input
//! support) and regular strided (output support is every downsampled site
//! reachable through the kernel from an input site). A rule book pairing
//! (output row, kernel offset, input row) is rebuilt per call from a
//! coordinate hash map and drives gather/multiply/scatter execution in a
//! fixed order, so accumulation is deterministic.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, ParamTensor};
use crate::voxel::SparseVoxelTensor;

/// (output row, flat kernel offset, input row) triples plus the output
/// support. Ordered by output row then kernel offset.
struct RuleBook {
    out_dims: [usize; 3],
    out_coords: Vec<[usize; 3]>,
    rules: Vec<(u32, u32, u32)>,
}

fn kernel_offsets(spec: &LayerSpec) -> Vec<[usize; 3]> {
    let mut offs = Vec::with_capacity(spec.filter[0] * spec.filter[1] * spec.filter[2]);
    for kx in 0..spec.filter[0] {
        for ky in 0..spec.filter[1] {
            for kz in 0..spec.filter[2] {
                offs.push([kx, ky, kz]);
            }
        }
    }
    offs
}

fn build_rule_book(input: &SparseVoxelTensor, spec: &LayerSpec) -> Result<RuleBook> {
    let row_of: HashMap<[usize; 3], u32> = input
        .coords
        .iter()
        .enumerate()
        .map(|(row, &c)| (c, row as u32))
        .collect();
    let offsets = kernel_offsets(spec);

    let (out_dims, out_coords) = if spec.submanifold {
        (input.dims, input.coords.clone())
    } else {
        let out_dims = spec.conv_output_dims(input.dims)?;
        // support: every output site covering at least one input site
        let mut support: Vec<[usize; 3]> = Vec::new();
        let mut seen: HashMap<[usize; 3], ()> = HashMap::new();
        for &c in &input.coords {
            for k in &offsets {
                let mut o = [0usize; 3];
                let mut ok = true;
                for a in 0..3 {
                    let num = c[a] as isize + spec.padding[a] as isize - k[a] as isize;
                    if num < 0 || num as usize % spec.stride[a] != 0 {
                        ok = false;
                        break;
                    }
                    let v = num as usize / spec.stride[a];
                    if v >= out_dims[a] {
                        ok = false;
                        break;
                    }
                    o[a] = v;
                }
                if ok && seen.insert(o, ()).is_none() {
                    support.push(o);
                }
            }
        }
        support.sort_unstable_by_key(|&c| (c[2], c[1], c[0]));
        (out_dims, support)
    };

    let mut rules = Vec::new();
    for (orow, &o) in out_coords.iter().enumerate() {
        for (kflat, k) in offsets.iter().enumerate() {
            let mut c = [0isize; 3];
            let mut ok = true;
            for a in 0..3 {
                c[a] = (o[a] * spec.stride[a] + k[a]) as isize - spec.padding[a] as isize;
                if c[a] < 0 || c[a] as usize >= input.dims[a] {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            if let Some(&irow) = row_of.get(&[c[0] as usize, c[1] as usize, c[2] as usize]) {
                rules.push((orow as u32, kflat as u32, irow));
            }
        }
    }
    Ok(RuleBook { out_dims, out_coords, rules })
}

fn check_input(input: &SparseVoxelTensor, spec: &LayerSpec) -> Result<()> {
    spec.validate()?;
    if spec.kind != LayerKind::SparseConv {
        return Err(Error::shape("layer is not a sparse convolution".to_string()));
    }
    input.validate()?;
    if input.channels != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, layer expects {}",
            input.channels, spec.in_channels
        )));
    }
    Ok(())
}

pub fn sparse_conv_forward(
    input: &SparseVoxelTensor,
    spec: &LayerSpec,
    params: &ParamTensor,
) -> Result<SparseVoxelTensor> {
    check_input(input, spec)?;
    params.validate(spec)?;
    let rb = build_rule_book(input, spec)?;

    let n_out = rb.out_coords.len();
    let co_n = spec.out_channels;
    let ci_n = spec.in_channels;
    let mut features = vec![0.0; n_out * co_n];
    for row in 0..n_out {
        features[row * co_n..(row + 1) * co_n].copy_from_slice(&params.bias);
    }

    let offsets = kernel_offsets(spec);
    for &(orow, kflat, irow) in &rb.rules {
        let k = offsets[kflat as usize];
        let inf = input.feature(irow as usize);
        let out = &mut features[orow as usize * co_n..(orow as usize + 1) * co_n];
        for ci in 0..ci_n {
            let x = inf[ci];
            if x == 0.0 {
                continue;
            }
            let wbase = ParamTensor::w_index(spec, k, ci, 0);
            for co in 0..co_n {
                out[co] += params.weights[wbase + co] * x;
            }
        }
    }

    Ok(SparseVoxelTensor { dims: rb.out_dims, channels: co_n, coords: rb.out_coords, features })
}

/// Backward pass: upstream gradient rows align with the forward output's
/// rows. Returns gradients for the input features and the parameters.
pub fn sparse_conv_backward(
    input: &SparseVoxelTensor,
    spec: &LayerSpec,
    params: &ParamTensor,
    upstream: &SparseVoxelTensor,
) -> Result<(Vec<f64>, ParamTensor)> {
    check_input(input, spec)?;
    let rb = build_rule_book(input, spec)?;
    if upstream.coords != rb.out_coords || upstream.channels != spec.out_channels {
        return Err(Error::shape("upstream gradient does not match forward output".to_string()));
    }

    let co_n = spec.out_channels;
    let ci_n = spec.in_channels;
    let mut d_input = vec![0.0; input.len() * ci_n];
    let mut d_params = ParamTensor::zeros(spec);

    for row in 0..upstream.len() {
        let g = upstream.feature(row);
        for co in 0..co_n {
            d_params.bias[co] += g[co];
        }
    }

    let offsets = kernel_offsets(spec);
    for &(orow, kflat, irow) in &rb.rules {
        let k = offsets[kflat as usize];
        let g = upstream.feature(orow as usize);
        let inf = input.feature(irow as usize);
        let din = &mut d_input[irow as usize * ci_n..(irow as usize + 1) * ci_n];
        for ci in 0..ci_n {
            let wbase = ParamTensor::w_index(spec, k, ci, 0);
            let mut acc = 0.0;
            for co in 0..co_n {
                d_params.weights[wbase + co] += inf[ci] * g[co];
                acc += params.weights[wbase + co] * g[co];
            }
            din[ci] += acc;
        }
    }

    Ok((d_input, d_params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::densify;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

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

    #[test]
    fn identity_kernel_submanifold() {
        let c = 3;
        let spec = LayerSpec::sparse([3, 3, 3], [1, 1, 1], c, c, true);
        let mut params = ParamTensor::zeros(&spec);
        // center tap = identity matrix
        for ch in 0..c {
            params.weights[ParamTensor::w_index(&spec, [1, 1, 1], ch, ch)] = 1.0;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let input = random_sparse([6, 6, 6], c, 0.2, &mut rng);
        let out = sparse_conv_forward(&input, &spec, &params).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn empty_input_empty_output() {
        let spec = LayerSpec::sparse([3, 3, 3], [2, 2, 2], 4, 8, false);
        let input = SparseVoxelTensor::empty([8, 8, 8], 4);
        let out = sparse_conv_forward(&input, &spec, &ParamTensor::zeros(&spec)).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.dims, [4, 4, 4]);
        assert_eq!(out.channels, 8);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let spec = LayerSpec::sparse([3, 3, 3], [1, 1, 1], 4, 8, true);
        let input = SparseVoxelTensor::empty([8, 8, 8], 3);
        assert!(sparse_conv_forward(&input, &spec, &ParamTensor::zeros(&spec)).is_err());
    }

    #[test]
    fn submanifold_preserves_support() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let spec = LayerSpec::sparse([3, 3, 3], [1, 1, 1], 2, 5, true);
        let params = random_params(&spec, &mut rng);
        let input = random_sparse([10, 10, 6], 2, 0.15, &mut rng);
        let out = sparse_conv_forward(&input, &spec, &params).unwrap();
        assert_eq!(out.coords, input.coords);
    }

    /// Densified sparse output vs brute-force dense oracle restricted to
    /// the sparse support, over strided and submanifold specs.
    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let specs = [
            LayerSpec::sparse([3, 3, 3], [1, 1, 1], 4, 6, true),
            LayerSpec::sparse([3, 3, 3], [2, 2, 2], 4, 6, false),
            LayerSpec::sparse([3, 3, 3], [1, 1, 1], 4, 6, false),
        ];
        for spec in &specs {
            for _ in 0..10 {
                let input = random_sparse([16, 16, 8], 4, 0.1, &mut rng);
                let params = random_params(spec, &mut rng);
                let sparse_out = sparse_conv_forward(&input, spec, &params).unwrap();
                let dense_out =
                    crate::nn::dense_conv::dense_conv_oracle(&densify(&input), spec, &params).unwrap();
                assert_eq!(sparse_out.dims, dense_out.dims);
                for (row, &coord) in sparse_out.coords.iter().enumerate() {
                    for co in 0..spec.out_channels {
                        let a = sparse_out.feature(row)[co];
                        let b = dense_out.at(coord, co);
                        assert!((a - b).abs() <= 1e-10, "coord {coord:?} ch {co}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn strided_support_complete() {
        // every dense-oracle output cell that differs from pure bias must
        // be in the sparse support
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let spec = LayerSpec::sparse([3, 3, 3], [2, 2, 2], 2, 1, false);
        let input = random_sparse([12, 12, 8], 2, 0.05, &mut rng);
        let params = random_params(&spec, &mut rng);
        let sparse_out = sparse_conv_forward(&input, &spec, &params).unwrap();
        let dense_out =
            crate::nn::dense_conv::dense_conv_oracle(&densify(&input), &spec, &params).unwrap();
        let support: std::collections::HashSet<[usize; 3]> =
            sparse_out.coords.iter().copied().collect();
        for z in 0..dense_out.dims[2] {
            for y in 0..dense_out.dims[1] {
                for x in 0..dense_out.dims[0] {
                    let v = dense_out.at([x, y, z], 0);
                    if (v - params.bias[0]).abs() > 1e-12 {
                        assert!(support.contains(&[x, y, z]), "missing support at {x},{y},{z}");
                    }
                }
            }
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let spec = LayerSpec::sparse([3, 3, 3], [1, 1, 1], 3, 2, true);
        let params = random_params(&spec, &mut rng);
        let a = random_sparse([6, 6, 4], 3, 0.3, &mut rng);
        let mut b = a.clone();
        for v in b.features.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut sum = a.clone();
        for (s, (&x, &y)) in sum.features.iter_mut().zip(a.features.iter().zip(b.features.iter())) {
            *s = x + y;
        }
        let fa = sparse_conv_forward(&a, &spec, &params).unwrap();
        let fb = sparse_conv_forward(&b, &spec, &params).unwrap();
        let fs = sparse_conv_forward(&sum, &spec, &params).unwrap();
        for i in 0..fs.features.len() {
            let co = i % spec.out_channels;
            let want = fa.features[i] + fb.features[i] - params.bias[co];
            assert!((fs.features[i] - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let spec = LayerSpec::sparse([3, 3, 3], [2, 2, 2], 2, 3, false);
        let input = random_sparse([8, 8, 4], 2, 0.2, &mut rng);
        let params = random_params(&spec, &mut rng);
        let mut upstream = sparse_conv_forward(&input, &spec, &params).unwrap();
        for v in upstream.features.iter_mut() {
            *v = 0.0;
        }
        let (din, dp) = sparse_conv_backward(&input, &spec, &params, &upstream).unwrap();
        assert!(din.iter().all(|&v| v == 0.0));
        assert!(dp.weights.iter().all(|&v| v == 0.0));
        assert!(dp.bias.iter().all(|&v| v == 0.0));
    }
}
