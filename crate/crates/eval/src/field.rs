//! Field-side measurement helpers: approximate and exact shadow masks and
//! rendered views packaged as images.

use ndarray::Array2;

use season_field_core::backprop::ShadingMode;
use season_field_core::params::ParamStore;
use season_field_core::radiance::{encode_time, ShadowParams};
use season_field_core::render::{self, SpatialCache};
use season_field_core::real::sigmoid;
use season_field_scene::camera::OrthoCamera;
use season_field_scene::dataset::ImageBuf;
use season_field_scene::geom::{SceneBounds, SunAngle};

use crate::error::Result;

pub fn to_image(width: usize, height: usize, pixels: &[[f32; 3]]) -> ImageBuf {
    ImageBuf {
        width,
        height,
        pixels: pixels.to_vec(),
    }
}

/// Renders one view under its metadata conditioning.
pub fn render_image(
    store: &ParamStore<f32>,
    camera: &OrthoCamera,
    bounds: &SceneBounds,
    sun: &SunAngle,
    day_fraction: f64,
    k: usize,
    shadow: &ShadowParams,
    shading: ShadingMode,
) -> Result<ImageBuf> {
    let time = encode_time(day_fraction)?;
    let r = render::render_view(store, camera, bounds, sun, &time, k, shadow, shading)?;
    Ok(to_image(r.width, r.height, &r.color))
}

/// The network's own shadow mask for a view (probability the surface sees
/// the sun, per pixel).
pub fn approx_shadow_mask(
    store: &ParamStore<f32>,
    cache: &SpatialCache,
    sun: &SunAngle,
    shadow: &ShadowParams,
) -> Result<Vec<f32>> {
    Ok(render::sun_pass(store, cache, sun, shadow)?.mask)
}

/// Exact mask: the learned visibility is replaced by the transmittance
/// integral along a fresh solar ray per contributing sample. Quadratic in
/// sample count, so contributions below `weight_floor` are skipped.
pub fn exact_shadow_mask(
    store: &ParamStore<f32>,
    cache: &SpatialCache,
    bounds: &SceneBounds,
    sun: &SunAngle,
    shadow: &ShadowParams,
    solar_samples: usize,
) -> Result<Vec<f32>> {
    let weight_floor = 1e-6f32;
    let sun_vec = sun.unit_vector();
    let sun_norm = bounds.normalize_dir(sun_vec);
    let unit = season_field_core::sampling::Aabb::unit();
    let n_pix = cache.width * cache.height;
    let k = cache.k;

    // gather contributing samples
    struct Sel {
        pix: usize,
        weight: f32,
    }
    let mut selected: Vec<Sel> = Vec::new();
    let mut solar_points: Vec<f32> = Vec::new();
    let mut deltas: Vec<f32> = Vec::new();
    for pix in 0..n_pix {
        for i in 0..k {
            let w = cache.p_surface[[pix, i]];
            if w <= weight_floor {
                continue;
            }
            let idx = pix * k + i;
            let p = [
                cache.points[[idx, 0]] as f64,
                cache.points[[idx, 1]] as f64,
                cache.points[[idx, 2]] as f64,
            ];
            let Some((t0, t1)) = unit.intersect_line(p, sun_norm) else {
                continue;
            };
            // march from the sample toward the sky
            let start = t0.max(0.0);
            let span = t1 - start;
            if span <= 0.0 {
                continue;
            }
            let step = span / solar_samples as f64;
            for s in 0..solar_samples {
                let t = start + (s as f64 + 0.5) * step;
                solar_points.push((p[0] + t * sun_norm[0]) as f32);
                solar_points.push((p[1] + t * sun_norm[1]) as f32);
                solar_points.push((p[2] + t * sun_norm[2]) as f32);
            }
            deltas.push(step as f32);
            selected.push(Sel { pix, weight: w });
        }
    }

    let mut sums = vec![0.0f32; n_pix];
    if !selected.is_empty() {
        let pts = Array2::from_shape_vec((selected.len() * solar_samples, 3), solar_points)
            .expect("solar point matrix");
        let density = render::density_in_chunks(store, &pts)?;
        for (si, sel) in selected.iter().enumerate() {
            let mut acc = 0.0f32;
            for s in 0..solar_samples {
                acc += density[si * solar_samples + s] * deltas[si];
            }
            let p_v = (-acc).exp();
            sums[sel.pix] += sel.weight * p_v;
        }
    }
    let kappa = shadow.kappa as f32;
    let mu = shadow.mu as f32;
    Ok(sums.iter().map(|&s| sigmoid(kappa * (mu + s))).collect())
}
