//! Exact reference renders: analytic ray-heightfield intersection plus a
//! horizon walk toward the sun for hard shadows. This is the oracle the
//! learned field is measured against; it shares no code with the field's
//! volumetric compositing.

use crate::camera::OrthoCamera;
use crate::error::{Result, SceneError};
use crate::geom::SunAngle;
use crate::synth::SyntheticScene;

const MARCH_STEP: f64 = 0.004;
const BISECT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ExactRender {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f32; 3]>,
    /// True where the surface sees the sun.
    pub sun_visible: Vec<bool>,
    /// Ground-truth altitude of the surface hit, scene units.
    pub altitude: Vec<f32>,
}

impl ExactRender {
    pub fn pixel(&self, col: usize, row: usize) -> [f32; 3] {
        self.color[row * self.width + col]
    }
}

fn march_hit(scene: &SyntheticScene, anchor: [f64; 3], dir: [f64; 3]) -> ([f64; 3], f64) {
    // start above the highest surface and march down the ray
    let t_top = (scene.max_height() + 0.01 - anchor[2]) / dir[2];
    let speed = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt().max(dir[2].abs());
    let dt = MARCH_STEP / speed.max(1e-9);
    let at = |t: f64| {
        [
            anchor[0] + t * dir[0],
            anchor[1] + t * dir[1],
            anchor[2] + t * dir[2],
        ]
    };
    let below = |t: f64| {
        let p = at(t);
        p[2] <= scene.height(p[0], p[1])
    };
    let mut t = t_top;
    let t_floor = (scene.bounds.z[0] - anchor[2]) / dir[2];
    while !below(t) {
        if t > t_floor {
            // the terrain minimum bounds every ray from below; clamp there
            break;
        }
        t += dt;
    }
    // bisection between the last above point and the first below point
    let mut lo = t - dt;
    let mut hi = t;
    for _ in 0..60 {
        if hi - lo < BISECT_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = at(hi);
    (p, hi)
}

/// True when the path from `point` toward the sun is unobstructed.
pub fn sun_visible(scene: &SyntheticScene, point: [f64; 3], sun: [f64; 3]) -> bool {
    !scene.occluded_toward(point, sun)
}

/// Renders one view at one sun angle and day of year. Color is the surface
/// albedo times 1 in sun or the ambient sky factor in shadow.
pub fn render_exact(
    scene: &SyntheticScene,
    camera: &OrthoCamera,
    sun: &SunAngle,
    t_p: f64,
) -> Result<ExactRender> {
    if !(sun.elevation_deg > 0.0) {
        return Err(SceneError::invalid(format!(
            "sun elevation must be positive, got {}",
            sun.elevation_deg
        )));
    }
    let sun_vec = sun.unit_vector();
    let sky = scene.sky(sun.elevation_deg);
    let dir = camera.view_dir();
    let n = camera.width * camera.height;
    let mut color = vec![[0f32; 3]; n];
    let mut vis = vec![false; n];
    let mut altitude = vec![0f32; n];
    for row in 0..camera.height {
        for col in 0..camera.width {
            let (anchor, _) = camera.ray(col, row);
            let (hit, _) = march_hit(scene, anchor, dir);
            let lit = sun_visible(scene, hit, sun_vec);
            let albedo = scene.albedo(hit[0], hit[1], t_p);
            let shade: [f64; 3] = if lit { [1.0, 1.0, 1.0] } else { sky };
            let idx = row * camera.width + col;
            color[idx] = [
                (albedo[0] * shade[0]) as f32,
                (albedo[1] * shade[1]) as f32,
                (albedo[2] * shade[2]) as f32,
            ];
            vis[idx] = lit;
            altitude[idx] = hit[2] as f32;
        }
    }
    Ok(ExactRender {
        width: camera.width,
        height: camera.height,
        color,
        sun_visible: vis,
        altitude,
    })
}
