//! Point cloud type and the binary point-file format.
//!
//! The on-disk format is contiguous little-endian float32 quadruples
//! `(x, y, z, intensity)`, 16 bytes per point, `.bin` extension. It matches
//! the layout used by common LiDAR datasets so real scans drop in.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const POINT_RECORD_BYTES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// A LiDAR scan: a flat sequence of points. May be empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Write a cloud as contiguous LE float32 quadruples.
pub fn write_points(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for p in &cloud.points {
        w.write_all(&p.x.to_le_bytes())?;
        w.write_all(&p.y.to_le_bytes())?;
        w.write_all(&p.z.to_le_bytes())?;
        w.write_all(&p.intensity.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a point file. Rejects files whose length is not a multiple of 16
/// bytes (reporting the offset where the partial record starts) and files
/// containing non-finite values.
pub fn read_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;

    let len = buf.len() as u64;
    if len % POINT_RECORD_BYTES != 0 {
        let offset = len - len % POINT_RECORD_BYTES;
        return Err(Error::Format {
            offset,
            msg: format!(
                "file length {len} is not a multiple of {POINT_RECORD_BYTES}; truncated record starts here"
            ),
        });
    }

    let mut points = Vec::with_capacity(buf.len() / 16);
    for (idx, rec) in buf.chunks_exact(16).enumerate() {
        let f = |o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]);
        let p = Point::new(f(0), f(4), f(8), f(12));
        if !p.is_finite() {
            return Err(Error::data(format!(
                "non-finite value in point record {idx} (byte offset {})",
                idx as u64 * POINT_RECORD_BYTES
            )));
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        write_points(&PointCloud::default(), &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
        assert!(read_points(&path).unwrap().is_empty());
    }

    #[test]
    fn single_point_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        let cloud = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        write_points(&cloud, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16);
        let mut expect = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
        assert_eq!(read_points(&path).unwrap(), cloud);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [0u8; 40]).unwrap();
        match read_points(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.bin");
        let mut bytes = Vec::new();
        for v in [f32::NAN, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_points(&path), Err(Error::Data(_))));
    }
}
