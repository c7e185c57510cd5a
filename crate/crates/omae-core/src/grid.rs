//! Voxel grid geometry: extents, voxel size, integer dimensions, and the
//! coordinate helpers the masking bands rely on.

use crate::error::{Error, Result};

/// How the banding distance of a voxel is measured from the sensor.
/// Bird's-eye (XY) distance is the default; 3D distance is available for
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandDistance {
    #[default]
    Xy,
    Xyz,
}

/// Regular 3D grid partitioning the scene extents.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub min_corner: [f64; 3],
    pub voxel_size: [f64; 3],
    pub dims: [usize; 3],
    pub band_distance: BandDistance,
}

impl GridConfig {
    pub fn new(min_corner: [f64; 3], voxel_size: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        let g = GridConfig { min_corner, voxel_size, dims, band_distance: BandDistance::Xy };
        g.validate()?;
        Ok(g)
    }

    /// Desk-scale default: 64x64x16 voxels of 0.5 m centered on the sensor
    /// in XY, ground just below z = 0.
    pub fn desk_default() -> Self {
        GridConfig {
            min_corner: [-16.0, -16.0, -2.0],
            voxel_size: [0.5, 0.5, 0.5],
            dims: [64, 64, 16],
            band_distance: BandDistance::Xy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.voxel_size.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("voxel_size[{i}] must be positive, got {v}")));
            }
        }
        for (i, &d) in self.dims.iter().enumerate() {
            if d < 1 {
                return Err(Error::config(format!("dims[{i}] must be >= 1, got {d}")));
            }
        }
        for (i, &c) in self.min_corner.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::config(format!("min_corner[{i}] must be finite, got {c}")));
            }
        }
        Ok(())
    }

    /// Total voxel count W*H*D.
    pub fn n_total(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn contains(&self, coord: [usize; 3]) -> bool {
        coord[0] < self.dims[0] && coord[1] < self.dims[1] && coord[2] < self.dims[2]
    }

    /// Voxel index of a point, or None if outside the extents.
    /// Half-open intervals: a point exactly on a max boundary is dropped.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut coord = [0usize; 3];
        for a in 0..3 {
            let rel = (p[a] - self.min_corner[a]) / self.voxel_size[a];
            if rel < 0.0 {
                return None;
            }
            let i = rel.floor() as usize;
            if i >= self.dims[a] {
                return None;
            }
            coord[a] = i;
        }
        Some(coord)
    }

    pub fn voxel_center(&self, coord: [usize; 3]) -> Result<[f64; 3]> {
        self.check_coord(coord)?;
        Ok([
            self.min_corner[0] + (coord[0] as f64 + 0.5) * self.voxel_size[0],
            self.min_corner[1] + (coord[1] as f64 + 0.5) * self.voxel_size[1],
            self.min_corner[2] + (coord[2] as f64 + 0.5) * self.voxel_size[2],
        ])
    }

    /// Linear index, x-major then y then z. Bijective on the grid.
    pub fn linear_index(&self, coord: [usize; 3]) -> Result<usize> {
        self.check_coord(coord)?;
        Ok((coord[2] * self.dims[1] + coord[1]) * self.dims[0] + coord[0])
    }

    pub fn coord_of(&self, linear: usize) -> Result<[usize; 3]> {
        if linear >= self.n_total() {
            return Err(Error::shape(format!(
                "linear index {linear} out of range for grid with {} voxels",
                self.n_total()
            )));
        }
        let x = linear % self.dims[0];
        let rest = linear / self.dims[0];
        let y = rest % self.dims[1];
        let z = rest / self.dims[1];
        Ok([x, y, z])
    }

    /// Banding distance from the sensor to a voxel's center.
    pub fn range_of(&self, coord: [usize; 3], sensor_origin: [f64; 3]) -> Result<f64> {
        let c = self.voxel_center(coord)?;
        let dx = c[0] - sensor_origin[0];
        let dy = c[1] - sensor_origin[1];
        Ok(match self.band_distance {
            BandDistance::Xy => (dx * dx + dy * dy).sqrt(),
            BandDistance::Xyz => {
                let dz = c[2] - sensor_origin[2];
                (dx * dx + dy * dy + dz * dz).sqrt()
            }
        })
    }

    fn check_coord(&self, coord: [usize; 3]) -> Result<()> {
        if !self.contains(coord) {
            return Err(Error::shape(format!(
                "coordinate {coord:?} out of grid dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_formula() {
        let g = GridConfig::new([0.0, 0.0, 0.0], [2.0, 2.0, 2.0], [4, 4, 4]).unwrap();
        assert_eq!(g.voxel_center([0, 0, 0]).unwrap(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn linear_index_bijective() {
        let g = GridConfig::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [4, 3, 2]).unwrap();
        let mut seen = vec![false; g.n_total()];
        for x in 0..4 {
            for y in 0..3 {
                for z in 0..2 {
                    let li = g.linear_index([x, y, z]).unwrap();
                    assert!(!seen[li]);
                    seen[li] = true;
                    assert_eq!(g.coord_of(li).unwrap(), [x, y, z]);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn range_is_xy_by_default() {
        // voxel centered at (30, 40, z): 3-4-5 triangle, range 50 for any z
        let g = GridConfig::new([29.5, 39.5, 0.0], [1.0, 1.0, 1.0], [1, 1, 8]).unwrap();
        for z in 0..8 {
            let r = g.range_of([0, 0, z], [0.0, 0.0, 0.0]).unwrap();
            assert!((r - 50.0).abs() < 1e-12, "z={z} r={r}");
        }
    }

    #[test]
    fn out_of_dims_is_error() {
        let g = GridConfig::new([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        assert!(g.voxel_center([2, 0, 0]).is_err());
    }

    #[test]
    fn max_boundary_dropped() {
        let g = GridConfig::new([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        assert_eq!(g.voxel_of([2.0, 0.0, 0.0]), None);
        assert_eq!(g.voxel_of([1.999, 0.5, 0.5]), Some([1, 0, 0]));
    }
}
