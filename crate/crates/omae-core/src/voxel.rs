//! Point cloud to sparse voxel tensor conversion plus the dense binary
//! occupancy ground truth.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::points::PointCloud;

/// Coordinate list + per-voxel feature rows. Rows are kept sorted by
/// linear index so every pass over the tensor is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor {
    pub dims: [usize; 3],
    pub channels: usize,
    pub coords: Vec<[usize; 3]>,
    /// Flat row-major features, `coords.len() * channels` values.
    pub features: Vec<f64>,
}

impl SparseVoxelTensor {
    pub fn empty(dims: [usize; 3], channels: usize) -> Self {
        SparseVoxelTensor { dims, channels, coords: Vec::new(), features: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feature(&self, row: usize) -> &[f64] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    pub fn linear_index(&self, coord: [usize; 3]) -> usize {
        (coord[2] * self.dims[1] + coord[1]) * self.dims[0] + coord[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.coords.len() * self.channels {
            return Err(Error::shape(format!(
                "feature length {} != rows {} * channels {}",
                self.features.len(),
                self.coords.len(),
                self.channels
            )));
        }
        let mut last = None;
        for &c in &self.coords {
            if c[0] >= self.dims[0] || c[1] >= self.dims[1] || c[2] >= self.dims[2] {
                return Err(Error::shape(format!("coord {c:?} out of dims {:?}", self.dims)));
            }
            let li = self.linear_index(c);
            if let Some(prev) = last {
                if li <= prev {
                    return Err(Error::shape("coords not strictly sorted/unique".to_string()));
                }
            }
            last = Some(li);
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite feature value".to_string()));
        }
        Ok(())
    }
}

/// Ground-truth occupancy: the set of voxels holding at least one point.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTarget {
    /// Sorted linear voxel indices of occupied cells.
    pub occupied: Vec<usize>,
    pub n_total: usize,
}

impl OccupancyTarget {
    pub fn n_occupied(&self) -> usize {
        self.occupied.len()
    }
}

/// Bin points into voxels; each occupied voxel's 4-channel feature is the
/// arithmetic mean of its points' (x, y, z, intensity). Points outside the
/// grid extents are dropped.
pub fn voxelize(cloud: &PointCloud, grid: &GridConfig) -> Result<(SparseVoxelTensor, OccupancyTarget)> {
    grid.validate()?;
    let mut acc: HashMap<usize, ([f64; 4], usize)> = HashMap::new();
    for p in &cloud.points {
        if let Some(coord) = grid.voxel_of([p.x as f64, p.y as f64, p.z as f64]) {
            let li = grid.linear_index(coord)?;
            let e = acc.entry(li).or_insert(([0.0; 4], 0));
            e.0[0] += p.x as f64;
            e.0[1] += p.y as f64;
            e.0[2] += p.z as f64;
            e.0[3] += p.intensity as f64;
            e.1 += 1;
        }
    }

    let mut indices: Vec<usize> = acc.keys().copied().collect();
    indices.sort_unstable();

    let mut coords = Vec::with_capacity(indices.len());
    let mut features = Vec::with_capacity(indices.len() * 4);
    for &li in &indices {
        let (sum, count) = acc[&li];
        coords.push(grid.coord_of(li)?);
        for v in sum {
            features.push(v / count as f64);
        }
    }

    let tensor = SparseVoxelTensor { dims: grid.dims, channels: 4, coords, features };
    let target = OccupancyTarget { occupied: indices, n_total: grid.n_total() };
    Ok((tensor, target))
}
