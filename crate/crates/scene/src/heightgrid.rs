//! Altitude rasters with bilinear sampling, stored as little-endian f32
//! behind a 16-byte header (magic "HGT0", width, height, pad).

use std::fs;
use std::path::Path;

use crate::error::{Result, SceneError};

pub const HGT_MAGIC: &[u8; 4] = b"HGT0";

#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    pub width: usize,
    pub height: usize,
    /// Row-major altitudes; row 0 maps to the low-y edge.
    pub data: Vec<f32>,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl HeightGrid {
    pub fn new(width: usize, height: usize, x_range: [f64; 2], y_range: [f64; 2]) -> HeightGrid {
        HeightGrid {
            width,
            height,
            data: vec![0.0; width * height],
            x_range,
            y_range,
        }
    }

    pub fn at(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    /// Center coordinates of a cell.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        let x = self.x_range[0]
            + (col as f64 + 0.5) / self.width as f64 * (self.x_range[1] - self.x_range[0]);
        let y = self.y_range[0]
            + (row as f64 + 0.5) / self.height as f64 * (self.y_range[1] - self.y_range[0]);
        (x, y)
    }

    /// Bilinear sample with clamp-to-edge semantics.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x - self.x_range[0]) / (self.x_range[1] - self.x_range[0]) * self.width as f64
            - 0.5;
        let fy = (y - self.y_range[0]) / (self.y_range[1] - self.y_range[0]) * self.height as f64
            - 0.5;
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let v00 = self.at(x0, y0) as f64;
        let v10 = self.at(x1, y0) as f64;
        let v01 = self.at(x0, y1) as f64;
        let v11 = self.at(x1, y1) as f64;
        v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        buf.extend_from_slice(HGT_MAGIC);
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&[0u8; 4]);
        for &v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| SceneError::io(path.display(), e))
    }

    pub fn load(path: &Path, x_range: [f64; 2], y_range: [f64; 2]) -> Result<HeightGrid> {
        let buf = fs::read(path).map_err(|e| SceneError::io(path.display(), e))?;
        if buf.len() < 16 || &buf[..4] != HGT_MAGIC {
            return Err(SceneError::format(path.display(), "bad magic"));
        }
        let width = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let expect = 16 + 4 * width * height;
        if buf.len() != expect {
            return Err(SceneError::format(
                path.display(),
                format!("size {} does not match {}x{}", buf.len(), width, height),
            ));
        }
        let mut data = Vec::with_capacity(width * height);
        for i in 0..width * height {
            data.push(f32::from_le_bytes(
                buf[16 + 4 * i..20 + 4 * i].try_into().unwrap(),
            ));
        }
        Ok(HeightGrid {
            width,
            height,
            data,
            x_range,
            y_range,
        })
    }
}
