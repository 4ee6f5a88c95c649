//! Shared geometry: sun angles, scene bounds, and the normalization between
//! scene coordinates and the field's canonical cube.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunAngle {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
}

impl SunAngle {
    pub fn new(elevation_deg: f64, azimuth_deg: f64) -> SunAngle {
        SunAngle {
            elevation_deg,
            azimuth_deg,
        }
    }

    /// Unit vector pointing from the scene toward the sun.
    pub fn unit_vector(&self) -> [f64; 3] {
        let e = self.elevation_deg.to_radians();
        let a = self.azimuth_deg.to_radians();
        [e.cos() * a.cos(), e.cos() * a.sin(), e.sin()]
    }
}

/// Scene-space axis ranges. x and y span [-1, 1]; z covers the content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl SceneBounds {
    pub fn standard(z_lo: f64, z_hi: f64) -> SceneBounds {
        SceneBounds {
            x: [-1.0, 1.0],
            y: [-1.0, 1.0],
            z: [z_lo, z_hi],
        }
    }

    fn span(range: [f64; 2]) -> f64 {
        range[1] - range[0]
    }

    fn norm_axis(range: [f64; 2], v: f64) -> f64 {
        2.0 * (v - range[0]) / Self::span(range) - 1.0
    }

    fn denorm_axis(range: [f64; 2], n: f64) -> f64 {
        range[0] + (n + 1.0) * 0.5 * Self::span(range)
    }

    /// Scene point -> canonical [-1,1]^3 point.
    pub fn normalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            Self::norm_axis(self.x, p[0]),
            Self::norm_axis(self.y, p[1]),
            Self::norm_axis(self.z, p[2]),
        ]
    }

    pub fn denormalize_point(&self, n: [f64; 3]) -> [f64; 3] {
        [
            Self::denorm_axis(self.x, n[0]),
            Self::denorm_axis(self.y, n[1]),
            Self::denorm_axis(self.z, n[2]),
        ]
    }

    pub fn denormalize_z(&self, nz: f64) -> f64 {
        Self::denorm_axis(self.z, nz)
    }

    pub fn normalize_z(&self, z: f64) -> f64 {
        Self::norm_axis(self.z, z)
    }

    /// Scene direction -> unit direction in the canonical cube.
    pub fn normalize_dir(&self, d: [f64; 3]) -> [f64; 3] {
        let v = [
            2.0 * d[0] / Self::span(self.x),
            2.0 * d[1] / Self::span(self.y),
            2.0 * d[2] / Self::span(self.z),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sun_vector_is_unit_and_points_up() {
        let s = SunAngle::new(40.0, 210.0).unit_vector();
        let n = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(s[2] > 0.0);
    }

    #[test]
    fn normalization_roundtrip() {
        let b = SceneBounds::standard(-0.1, 0.55);
        let p = [0.3, -0.7, 0.2];
        let n = b.normalize_point(p);
        assert!(n.iter().all(|v| v.abs() <= 1.0));
        let back = b.denormalize_point(n);
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-12);
        }
    }
}
