//! Seasonal alignment: grid search over the day of year with a closed-form
//! per-channel least-squares sky color. Both shading modes are affine in the
//! sky, so the inner solve is exact.

use season_field_core::backprop::ShadingMode;
use season_field_core::params::ParamStore;
use season_field_core::radiance::encode_time;
use season_field_core::render::{self, SpatialCache, SunPass};
use season_field_scene::dataset::ImageBuf;

use crate::error::Result;

pub const ALIGN_TIME_GRID: usize = 90;

pub struct Alignment {
    pub day_fraction: f64,
    pub sky: [f32; 3],
    pub mse: f64,
    pub aligned: ImageBuf,
}

/// Per-pixel decomposition color = base + sky_c * coef under fixed sun.
fn sky_affine(
    cache: &SpatialCache,
    sun: &SunPass,
    time_cols: &render::TimePass,
    shading: ShadingMode,
) -> (Vec<[f32; 3]>, Vec<[f32; 3]>) {
    let n_pix = cache.width * cache.height;
    let mut base = vec![[0.0f32; 3]; n_pix];
    let mut coef = vec![[0.0f32; 3]; n_pix];
    match shading {
        ShadingMode::ShadowMask => {
            for pix in 0..n_pix {
                let m = sun.mask[pix];
                for c in 0..3 {
                    base[pix][c] = time_cols.col_t[pix][c] * m;
                    coef[pix][c] = time_cols.col_t[pix][c] * (1.0 - m);
                }
            }
        }
        ShadingMode::PerPoint => {
            for pix in 0..n_pix {
                for c in 0..3 {
                    let mut b = 0.0f32;
                    let mut a = 0.0f32;
                    for i in 0..cache.k {
                        let idx = pix * cache.k + i;
                        let sv = sun.s_vis[idx];
                        let ps = cache.p_surface[[pix, i]];
                        let ct = time_cols.col_t_points[[idx, c]];
                        b += ps * sv * ct;
                        a += ps * (1.0 - sv) * ct;
                    }
                    base[pix][c] = b;
                    coef[pix][c] = a;
                }
            }
        }
    }
    (base, coef)
}

/// Finds the (time, sky) pair minimizing MSE against `target` over a uniform
/// time grid; the identity candidate is part of the grid, so the aligned
/// error never exceeds the direct one by more than grid resolution.
pub fn seasonal_align(
    store: &ParamStore<f32>,
    cache: &SpatialCache,
    sun: &SunPass,
    target: &ImageBuf,
    shading: ShadingMode,
) -> Result<Alignment> {
    let n_pix = cache.width * cache.height;
    assert_eq!(target.pixels.len(), n_pix);
    let mut best: Option<Alignment> = None;
    for ti in 0..ALIGN_TIME_GRID {
        let t = (ti as f64 + 0.5) / ALIGN_TIME_GRID as f64;
        let tp = render::time_pass(store, cache, &encode_time(t)?);
        let (base, coef) = sky_affine(cache, sun, &tp, shading);
        // closed-form least squares per channel, clamped to (0, 1]
        let mut sky = [0.0f32; 3];
        for c in 0..3 {
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for pix in 0..n_pix {
                let a = coef[pix][c] as f64;
                let b = target.pixels[pix][c] as f64 - base[pix][c] as f64;
                num += a * b;
                den += a * a;
            }
            let v = if den > 1e-12 { num / den } else { 1.0 };
            sky[c] = (v.clamp(1e-6, 1.0)) as f32;
        }
        let mut mse = 0.0f64;
        let mut aligned = ImageBuf::new(cache.width, cache.height);
        for pix in 0..n_pix {
            for c in 0..3 {
                let v = base[pix][c] + sky[c] * coef[pix][c];
                aligned.pixels[pix][c] = v;
                let d = v as f64 - target.pixels[pix][c] as f64;
                mse += d * d;
            }
        }
        mse /= (3 * n_pix) as f64;
        if best.as_ref().map_or(true, |b| mse < b.mse) {
            best = Some(Alignment {
                day_fraction: t,
                sky,
                mse,
                aligned,
            });
        }
    }
    Ok(best.expect("time grid is non-empty"))
}
