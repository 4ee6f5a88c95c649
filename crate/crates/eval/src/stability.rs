//! Seasonal stability protocol: render a grid of views, suns, and times,
//! take pairwise histogram distances at fixed time, and compare against the
//! distances between prototypical-season renders.

use rayon::prelude::*;

use season_field_core::backprop::ShadingMode;
use season_field_core::params::ParamStore;
use season_field_core::radiance::{encode_time, ShadowParams};
use season_field_core::render;
use season_field_scene::camera::OrthoCamera;
use season_field_scene::dataset::ImageBuf;
use season_field_scene::geom::{SceneBounds, SunAngle};
use season_field_scene::synth::{PROTOTYPE_BROWN, PROTOTYPE_GREEN, PROTOTYPE_SNOW};

use crate::error::Result;
use crate::metrics::emd_histogram;

#[derive(Debug, Clone)]
pub struct StabilityProtocol {
    pub views: Vec<(f64, f64)>,
    pub suns: Vec<SunAngle>,
    pub times: Vec<f64>,
    pub image_size: usize,
    pub samples_per_ray: usize,
}

impl Default for StabilityProtocol {
    fn default() -> Self {
        // 11 views x 5 suns x 12 times = 660 renders
        let mut views = vec![(0.0, 0.0)];
        for i in 0..5 {
            let az = 72.0 * i as f64;
            views.push((az, 12.0));
            views.push((az + 36.0, 25.0));
        }
        let suns = (0..5)
            .map(|i| SunAngle::new(35.0 + 7.5 * i as f64, 120.0 + 40.0 * i as f64))
            .collect();
        let times = (0..12).map(|i| (i as f64 + 0.5) / 12.0).collect();
        StabilityProtocol {
            views,
            suns,
            times,
            image_size: 64,
            samples_per_ray: 96,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Pairwise distances between renders differing only in view/sun.
    pub fixed_time_pairs: Vec<f64>,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
    pub baseline_min: f64,
    pub baseline_median: f64,
    pub baseline_max: f64,
    pub renders: usize,
    /// Set when fewer than two renders share a time (no pairs exist).
    pub degenerate: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

pub fn stability_sweep(
    store: &ParamStore<f32>,
    bounds: &SceneBounds,
    footprint: [[f64; 2]; 2],
    protocol: &StabilityProtocol,
    shadow: &ShadowParams,
    shading: ShadingMode,
) -> Result<StabilityReport> {
    let z_anchor = 0.5 * (bounds.z[0] + bounds.z[1]);
    // images[t][view * suns + sun]
    let mut per_time: Vec<Vec<ImageBuf>> = vec![Vec::new(); protocol.times.len()];
    let mut renders = 0usize;
    for &(az, off) in &protocol.views {
        let camera = OrthoCamera {
            off_nadir_deg: off,
            azimuth_deg: az,
            width: protocol.image_size,
            height: protocol.image_size,
            footprint,
            z_anchor,
        };
        let cache = render::spatial_forward(store, &camera, bounds, protocol.samples_per_ray)?;
        let sun_passes: Vec<_> = protocol
            .suns
            .iter()
            .map(|sun| render::sun_pass(store, &cache, sun, shadow))
            .collect::<season_field_core::Result<Vec<_>>>()?;
        for (ti, &t) in protocol.times.iter().enumerate() {
            let tp = render::time_pass(store, &cache, &encode_time(t)?);
            for sp in &sun_passes {
                let color = render::combine(&cache, sp, &tp, shading);
                per_time[ti].push(ImageBuf {
                    width: protocol.image_size,
                    height: protocol.image_size,
                    pixels: color,
                });
                renders += 1;
            }
        }
    }

    let mut pairs: Vec<f64> = Vec::new();
    for group in &per_time {
        let idx: Vec<(usize, usize)> = (0..group.len())
            .flat_map(|i| ((i + 1)..group.len()).map(move |j| (i, j)))
            .collect();
        let mut d: Vec<f64> = idx
            .par_iter()
            .map(|&(i, j)| emd_histogram(&group[i], &group[j]).unwrap())
            .collect();
        pairs.append(&mut d);
    }
    let degenerate = pairs.is_empty();

    // baseline: prototypical-season renders at the first view and sun
    let camera = OrthoCamera {
        off_nadir_deg: protocol.views[0].1,
        azimuth_deg: protocol.views[0].0,
        width: protocol.image_size,
        height: protocol.image_size,
        footprint,
        z_anchor,
    };
    let cache = render::spatial_forward(store, &camera, bounds, protocol.samples_per_ray)?;
    let sp = render::sun_pass(store, &cache, &protocol.suns[0], shadow)?;
    let protos: Vec<ImageBuf> = [PROTOTYPE_SNOW, PROTOTYPE_GREEN, PROTOTYPE_BROWN]
        .iter()
        .map(|&t| {
            let tp = render::time_pass(store, &cache, &encode_time(t)?);
            Ok(ImageBuf {
                width: protocol.image_size,
                height: protocol.image_size,
                pixels: render::combine(&cache, &sp, &tp, shading),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut baseline = vec![
        emd_histogram(&protos[0], &protos[1])?,
        emd_histogram(&protos[0], &protos[2])?,
        emd_histogram(&protos[1], &protos[2])?,
    ];
    baseline.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sorted = pairs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(StabilityReport {
        median: quantile(&sorted, 0.5),
        q95: quantile(&sorted, 0.95),
        max: sorted.last().copied().unwrap_or(f64::NAN),
        fixed_time_pairs: pairs,
        baseline_min: baseline[0],
        baseline_median: baseline[1],
        baseline_max: baseline[2],
        renders,
        degenerate,
    })
}

/// Combined tuning score: relative image quality minus relative height error
/// plus a stability bonus when the worst fixed-time distance beats the
/// baseline.
pub fn tune_score(ssim: f64, mae: f64, em_max: f64, ssim_b: f64, mae_b: f64, em_b: f64) -> f64 {
    ssim / ssim_b - mae / mae_b + if em_max < em_b { 1.0 } else { 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tune_score_examples() {
        assert_eq!(tune_score(0.6, 2.0, 5.0, 0.6, 2.0, 5.0), 0.0);
        assert_eq!(tune_score(1.2, 2.0, 4.0, 0.6, 2.0, 5.0), 2.0);
        assert!((tune_score(0.6, 1.0, 4.0, 0.6, 2.0, 5.0) - 1.5).abs() <= 1e-12);
    }

    #[test]
    fn quantiles_are_ordered() {
        let sorted: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let med = quantile(&sorted, 0.5);
        let q95 = quantile(&sorted, 0.95);
        assert!(med <= q95 && q95 <= sorted[99]);
    }
}
