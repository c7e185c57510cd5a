//! Synthetic LiDAR scene generation.
//!
//! Rays go out on uniform azimuth rings crossed with a fixed elevation set
//! and hit axis-aligned boxes or a ground plane, first hit wins. Gaussian
//! range noise is applied along the ray, then per-band dropout thins far
//! returns. This reproduces the radial density falloff of real scans
//! without any external data.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::points::{Point, PointCloud};

pub const BAND_EDGES_DEFAULT: [f64; 2] = [30.0, 50.0];

/// Range band index (0, 1, 2) for a ground-plane distance.
pub fn band_of(range: f64, edges: [f64; 2]) -> usize {
    if range < edges[0] {
        0
    } else if range < edges[1] {
        1
    } else {
        2
    }
}

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    /// Slab intersection; returns the entry distance if the ray hits.
    fn hit(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-12 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
            } else {
                let t0 = (self.min[a] - origin[a]) / dir[a];
                let t1 = (self.max[a] - origin[a]) / dir[a];
                let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                t_near = t_near.max(lo);
                t_far = t_far.min(hi);
            }
        }
        if t_near <= t_far && t_far > 0.0 {
            Some(if t_near > 0.0 { t_near } else { t_far })
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub sensor_origin: [f64; 3],
    pub num_rays: usize,
    pub max_range: f64,
    pub ground_z: Option<f64>,
    pub boxes: Vec<Aabb>,
    /// Keep-or-drop probability of a return, per range band.
    pub dropout_per_band: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
    pub band_edges: [f64; 2],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            sensor_origin: [0.0, 0.0, 1.6],
            num_rays: 16_000,
            max_range: 120.0,
            ground_z: Some(0.0),
            boxes: vec![
                Aabb::new([6.0, -4.0, 0.0], [8.0, -2.0, 1.5]),
                Aabb::new([-10.0, 5.0, 0.0], [-7.5, 7.0, 2.0]),
                Aabb::new([3.0, 9.0, 0.0], [5.0, 11.0, 1.2]),
                Aabb::new([-4.0, -12.0, 0.0], [-2.0, -9.0, 2.5]),
            ],
            dropout_per_band: [0.05, 0.25, 0.5],
            noise_sigma: 0.02,
            seed: 0,
            band_edges: BAND_EDGES_DEFAULT,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) {
            return Err(Error::config(format!("max_range must be > 0, got {}", self.max_range)));
        }
        for (i, &p) in self.dropout_per_band.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!(
                    "dropout_per_band[{i}] must be in [0,1], got {p}"
                )));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.band_edges[0] > 0.0 && self.band_edges[1] > self.band_edges[0]) {
            return Err(Error::config(format!(
                "band_edges must be increasing positive, got {:?}",
                self.band_edges
            )));
        }
        for (i, c) in self.sensor_origin.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::config(format!("sensor_origin[{i}] must be finite")));
            }
        }
        Ok(())
    }
}

const NUM_ELEVATIONS: usize = 16;
const ELEV_MIN_DEG: f64 = -24.0;
const ELEV_MAX_DEG: f64 = -1.0;

/// Cast the spec's rays and return the surviving returns. Pure function of
/// the spec: the same spec always yields the same byte-identical cloud.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();

    if spec.num_rays == 0 {
        return Ok(PointCloud::default());
    }
    let rings = spec.num_rays.div_ceil(NUM_ELEVATIONS);

    let elevations: Vec<f64> = (0..NUM_ELEVATIONS)
        .map(|k| {
            let t = k as f64 / (NUM_ELEVATIONS - 1) as f64;
            (ELEV_MIN_DEG + t * (ELEV_MAX_DEG - ELEV_MIN_DEG)).to_radians()
        })
        .collect();

    for ray in 0..spec.num_rays {
        let elev = elevations[ray % NUM_ELEVATIONS];
        let ring = ray / NUM_ELEVATIONS;
        let azimuth = 2.0 * std::f64::consts::PI * ring as f64 / rings as f64;
        let dir = [
            elev.cos() * azimuth.cos(),
            elev.cos() * azimuth.sin(),
            elev.sin(),
        ];

        let mut t_hit = f64::INFINITY;
        for b in &spec.boxes {
            if let Some(t) = b.hit(spec.sensor_origin, dir) {
                if t < t_hit {
                    t_hit = t;
                }
            }
        }
        if let Some(gz) = spec.ground_z {
            if dir[2] < -1e-12 {
                let t = (gz - spec.sensor_origin[2]) / dir[2];
                if t > 0.0 && t < t_hit {
                    t_hit = t;
                }
            }
        }
        if !t_hit.is_finite() || t_hit > spec.max_range {
            continue;
        }

        // Range noise along the ray, then band dropout on the noisy return.
        let noise: f64 = if spec.noise_sigma > 0.0 {
            sample_gaussian(&mut rng) * spec.noise_sigma
        } else {
            0.0
        };
        let t = (t_hit + noise).max(0.0);
        let p = [
            spec.sensor_origin[0] + t * dir[0],
            spec.sensor_origin[1] + t * dir[1],
            spec.sensor_origin[2] + t * dir[2],
        ];
        let planar = ((p[0] - spec.sensor_origin[0]).powi(2)
            + (p[1] - spec.sensor_origin[1]).powi(2))
        .sqrt();
        let band = band_of(planar, spec.band_edges);
        let u: f64 = rng.gen();
        if u < spec.dropout_per_band[band] {
            continue;
        }

        let intensity = (1.0 / (1.0 + t / 10.0)).clamp(0.0, 1.0);
        points.push(Point::new(p[0] as f32, p[1] as f32, p[2] as f32, intensity as f32));
    }

    Ok(PointCloud::new(points))
}

/// Box-Muller, one sample per call (second half discarded to keep the
/// per-ray draw count fixed).
fn sample_gaussian(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-band point counts using planar distance from the sensor.
pub fn band_counts(cloud: &PointCloud, sensor_origin: [f64; 3], edges: [f64; 2]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for p in &cloud.points {
        let dx = p.x as f64 - sensor_origin[0];
        let dy = p.y as f64 - sensor_origin[1];
        counts[band_of((dx * dx + dy * dy).sqrt(), edges)] += 1;
    }
    counts
}
