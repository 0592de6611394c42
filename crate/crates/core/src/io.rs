//! File formats: camera descriptors (JSON), voxel grids (VOXF), masks (PGM),
//! discriminator checkpoints (DISC), training logs and point clouds.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point3};
use serde::{Deserialize, Serialize};

use crate::barrier::{Dense, Discriminator};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::metrics::{write_point_cloud, ColoredVoxel};
use crate::projection::MaskImage;
use crate::solver::{write_log, LogEntry};
use crate::voxel::{Extent, GridGeometry, VoxelGrid};

const VOXF_MAGIC: &[u8; 4] = b"VOXF";
const DISC_MAGIC: &[u8; 4] = b"DISC";
const VERSION: u32 = 1;
const CAMERA_TOLERANCE: f64 = 1e-6;
const VALUE_SLACK: f64 = 1e-6;

fn format_err(kind: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.kind, self.path, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err(self.kind, self.path, "trailing bytes"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    #[serde(rename = "C")]
    c: [f64; 3],
}

pub fn camera_to_json(cam: &Camera) -> String {
    let r = cam.rotation();
    let file = CameraFile {
        width: cam.width(),
        height: cam.height(),
        fx: cam.fx(),
        fy: cam.fy(),
        cx: cam.cx(),
        cy: cam.cy(),
        r: std::array::from_fn(|k| r[(k / 3, k % 3)]),
        c: [cam.center().x, cam.center().y, cam.center().z],
    };
    serde_json::to_string_pretty(&file).expect("camera serializes")
}

pub fn camera_from_json(text: &str, path: &Path) -> Result<Camera> {
    let f: CameraFile = serde_json::from_str(text).map_err(|e| format_err("camera", path, e.to_string()))?;
    Camera::with_tolerance(
        Matrix3::from_row_slice(&f.r),
        Point3::from(f.c),
        f.fx,
        f.fy,
        f.cx,
        f.cy,
        f.width,
        f.height,
        CAMERA_TOLERANCE,
    )
    .map_err(|e| format_err("camera", path, e.to_string()))
}

pub fn write_camera(path: &Path, cam: &Camera) -> Result<()> {
    write_bytes(path, format!("{}\n", camera_to_json(cam)).as_bytes())
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    camera_from_json(&text, path)
}

pub fn encode_voxels(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 4 * grid.values().len());
    out.extend_from_slice(VOXF_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    out.extend_from_slice(&grid.extent().lo.to_le_bytes());
    out.extend_from_slice(&grid.extent().hi.to_le_bytes());
    for &v in grid.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_voxels(bytes: &[u8], path: &Path) -> Result<VoxelGrid> {
    let mut r = Reader {
        bytes,
        pos: 0,
        kind: "voxel",
        path,
    };
    if r.take(4)? != VOXF_MAGIC {
        return Err(format_err("voxel", path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err("voxel", path, format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let (lo, hi) = (r.f64()?, r.f64()?);
    let extent = Extent::new(lo, hi).map_err(|e| format_err("voxel", path, e.to_string()))?;
    let geometry = GridGeometry::new(n, extent).map_err(|e| format_err("voxel", path, e.to_string()))?;
    let count = geometry.voxel_count();
    if bytes.len() != 28 + 4 * count {
        return Err(format_err(
            "voxel",
            path,
            format!("expected {} bytes for n={n}, found {}", 28 + 4 * count, bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let v = r.f32()? as f64;
        if !(-VALUE_SLACK..=1.0 + VALUE_SLACK).contains(&v) {
            return Err(format_err("voxel", path, format!("value {v} at index {k} outside [0, 1]")));
        }
        values.push(v.clamp(0.0, 1.0));
    }
    r.finish()?;
    VoxelGrid::new(geometry, values)
}

pub fn write_voxels(path: &Path, grid: &VoxelGrid) -> Result<()> {
    write_bytes(path, &encode_voxels(grid))
}

pub fn read_voxels(path: &Path) -> Result<VoxelGrid> {
    decode_voxels(&read_bytes(path)?, path)
}

pub fn encode_pgm(mask: &MaskImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.values().iter().map(|&p| (p * 255.0).round() as u8));
    out
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<MaskImage> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos) != Some(b"P5") {
        return Err(format_err("pgm", path, "not a binary PGM (P5)"));
    }
    let mut field = |name: &str| -> Result<usize> {
        pgm_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err("pgm", path, format!("bad {name}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(format_err("pgm", path, format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height {
        return Err(format_err(
            "pgm",
            path,
            format!("expected {} pixels, found {}", width * height, raster.len()),
        ));
    }
    MaskImage::new(width, height, raster.iter().map(|&b| b as f64 / 255.0).collect())
        .map_err(|e| format_err("pgm", path, e.to_string()))
}

pub fn write_pgm(path: &Path, mask: &MaskImage) -> Result<()> {
    write_bytes(path, &encode_pgm(mask))
}

pub fn read_pgm(path: &Path) -> Result<MaskImage> {
    decode_pgm(&read_bytes(path)?, path)
}

pub fn encode_discriminator(d: &Discriminator) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DISC_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d.layers().len() as u32).to_le_bytes());
    for l in d.layers() {
        out.extend_from_slice(&(l.rows as u32).to_le_bytes());
        out.extend_from_slice(&(l.cols as u32).to_le_bytes());
        for &w in &l.weights {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in &l.biases {
            out.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    out
}

/// The grid resolution is recovered from the input width `(n/2)^3`.
pub fn decode_discriminator(bytes: &[u8], path: &Path) -> Result<Discriminator> {
    let mut r = Reader {
        bytes,
        pos: 0,
        kind: "discriminator",
        path,
    };
    if r.take(4)? != DISC_MAGIC {
        return Err(format_err("discriminator", path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err("discriminator", path, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let weights = (0..rows * cols).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
        let biases = (0..rows).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
        layers.push(Dense {
            rows,
            cols,
            weights,
            biases,
        });
    }
    r.finish()?;
    let input = layers.first().map(|l| l.cols).unwrap_or(0);
    let half = (input as f64).cbrt().round() as usize;
    if half == 0 || half.pow(3) != input {
        return Err(format_err("discriminator", path, format!("input width {input} is not a cube")));
    }
    Discriminator::from_layers(2 * half, layers, 0).map_err(|e| format_err("discriminator", path, e.to_string()))
}

pub fn write_discriminator(path: &Path, d: &Discriminator) -> Result<()> {
    write_bytes(path, &encode_discriminator(d))
}

pub fn read_discriminator(path: &Path) -> Result<Discriminator> {
    decode_discriminator(&read_bytes(path)?, path)
}

pub fn write_training_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_log(log, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_points(path: &Path, points: &[ColoredVoxel]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_point_cloud(points, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// All `.vox` files in a directory, in file-name order.
pub fn read_voxel_dir(dir: &Path) -> Result<Vec<VoxelGrid>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vox"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_voxels(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn sample_camera() -> Camera {
        Camera::look_at(Point3::new(1.7, -0.4, 0.9), Point3::origin(), Vector3::z(), 30.5, 40, 30).unwrap()
    }

    #[test]
    fn camera_round_trip_is_exact() {
        let cam = sample_camera();
        let back = camera_from_json(&camera_to_json(&cam), Path::new("c.json")).unwrap();
        assert_eq!(back.rotation(), cam.rotation());
        assert_eq!(back.center(), cam.center());
        assert_eq!((back.fx(), back.cx(), back.width()), (cam.fx(), cam.cx(), cam.width()));
    }

    #[test]
    fn camera_rejects_non_orthonormal_rotation() {
        let text = r#"{"width":4,"height":4,"fx":2,"fy":2,"cx":2,"cy":2,"R":[1,0,0,0,1,0,0,0,1.001],"C":[0,0,-2]}"#;
        let err = camera_from_json(text, Path::new("bad.json")).unwrap_err();
        assert!(err.to_string().contains("bad.json"));
        assert!(camera_from_json("{", Path::new("x")).is_err());
    }

    #[test]
    fn voxel_reader_rejects_malformed_input() {
        let geo = GridGeometry::new(2, Extent::default()).unwrap();
        let good = encode_voxels(&VoxelGrid::filled(geo, 0.25).unwrap());
        let p = Path::new("g.vox");
        assert!(decode_voxels(&good, p).is_ok());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_voxels(&bad, p).is_err());
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode_voxels(&bad, p).is_err());
        let mut bad = good.clone();
        bad[28..32].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(decode_voxels(&bad, p).is_err());
        let mut ok = good.clone();
        ok[28..32].copy_from_slice(&(-5e-7f32).to_le_bytes());
        assert_eq!(decode_voxels(&ok, p).unwrap().values()[0], 0.0);
        assert!(decode_voxels(&good[..good.len() - 1], p).is_err());
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let m = MaskImage::new(3, 2, vec![0.0, 1.0, 0.5, 0.2, 1.0, 0.0]).unwrap();
        let back = decode_pgm(&encode_pgm(&m), Path::new("m.pgm")).unwrap();
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let binary = MaskImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&binary), Path::new("m")).unwrap(), binary);
        assert!(decode_pgm(b"P2\n1 1\n255\n0", Path::new("m")).is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0", Path::new("m")).is_err());
        let commented = b"P5\n# note\n1 1\n255\n\xff";
        assert_eq!(decode_pgm(commented, Path::new("m")).unwrap().values(), &[1.0]);
    }

    #[test]
    fn discriminator_round_trip_at_f32() {
        let d = Discriminator::new(8, 3).unwrap();
        let back = decode_discriminator(&encode_discriminator(&d), Path::new("d")).unwrap();
        assert_eq!(back.grid_n(), 8);
        for (a, b) in d.layers().iter().zip(back.layers()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        let bytes = encode_discriminator(&back);
        assert_eq!(bytes, encode_discriminator(&decode_discriminator(&bytes, Path::new("d")).unwrap()));
        assert!(decode_discriminator(b"DISX", Path::new("d")).is_err());
    }

    proptest! {
        #[test]
        fn voxel_round_trip_is_lossless_at_f32(values in proptest::collection::vec(0.0f64..=1.0, 27)) {
            let geo = GridGeometry::new(3, Extent::new(-1.0, 2.0).unwrap()).unwrap();
            let g = VoxelGrid::new(geo, values.iter().map(|&v| v as f32 as f64).collect()).unwrap();
            let back = decode_voxels(&encode_voxels(&g), Path::new("p")).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
