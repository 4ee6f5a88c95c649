//! Orthographic cameras: every pixel casts a parallel ray through its ground
//! anchor, so view changes are pure direction changes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoCamera {
    pub off_nadir_deg: f64,
    pub azimuth_deg: f64,
    pub width: usize,
    pub height: usize,
    /// [[x0, x1], [y0, y1]] ground footprint covered by the pixel grid.
    pub footprint: [[f64; 2]; 2],
    /// Ground plane the pixel anchors sit on.
    pub z_anchor: f64,
}

impl OrthoCamera {
    /// Travel direction from sky toward the scene.
    pub fn view_dir(&self) -> [f64; 3] {
        let t = self.off_nadir_deg.to_radians();
        let a = self.azimuth_deg.to_radians();
        [t.sin() * a.cos(), t.sin() * a.sin(), -t.cos()]
    }

    /// Ground anchor of pixel (col, row); row 0 maps to the low-y edge.
    pub fn pixel_anchor(&self, col: usize, row: usize) -> [f64; 3] {
        let [[x0, x1], [y0, y1]] = self.footprint;
        let x = x0 + (col as f64 + 0.5) / self.width as f64 * (x1 - x0);
        let y = y0 + (row as f64 + 0.5) / self.height as f64 * (y1 - y0);
        [x, y, self.z_anchor]
    }

    /// (anchor, direction) for a pixel; the anchor is a point on the ray,
    /// not its start.
    pub fn ray(&self, col: usize, row: usize) -> ([f64; 3], [f64; 3]) {
        (self.pixel_anchor(col, row), self.view_dir())
    }
}
