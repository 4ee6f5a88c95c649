//! Full measurement run against a dataset: image quality on held-out views
//! (direct and seasonally aligned), height-map accuracy, and shadow scoring
//! against the exact mask. Results serialize as one CSV row per metric.

use std::fs;
use std::path::Path;

use season_field_core::backprop::ShadingMode;
use season_field_core::params::ParamStore;
use season_field_core::radiance::ShadowParams;
use season_field_core::render;
use season_field_scene::dataset::{ImageBuf, SceneDataset};
use season_field_scene::heightgrid::HeightGrid;

use crate::align::seasonal_align;
use crate::error::{EvalError, Result};
use crate::field::{approx_shadow_mask, exact_shadow_mask};
use crate::metrics::{
    emd_histogram, height_metrics, psnr, shadow_metrics, ssim, HeightMapMetrics, ShadowMetrics,
};

#[derive(Debug, Clone)]
pub struct ViewScores {
    pub view_id: usize,
    pub season_tag: Option<String>,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_aligned: f64,
    pub ssim_aligned: f64,
    pub aligned_day_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub views: Vec<ViewScores>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_psnr_aligned: f64,
    pub mean_ssim_aligned: f64,
    pub height: HeightMapMetrics,
    pub prior_height: HeightMapMetrics,
    pub shadows: ShadowMetrics,
    pub case: String,
}

pub struct EvalOptions {
    pub samples_per_ray: usize,
    pub shadow: ShadowParams,
    pub shading: ShadingMode,
    pub height_grid: usize,
    pub solar_samples: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            samples_per_ray: 96,
            shadow: ShadowParams::default(),
            shading: ShadingMode::ShadowMask,
            height_grid: 64,
            solar_samples: 96,
        }
    }
}

pub fn evaluate(
    store: &ParamStore<f32>,
    dataset: &SceneDataset,
    case: &str,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let bounds = dataset.meta.bounds;
    let footprint = dataset.meta.footprint;
    let mut views = Vec::new();
    let mut approx_all: Vec<f32> = Vec::new();
    let mut exact_all: Vec<f32> = Vec::new();

    for view in dataset.meta.test_views() {
        let camera = dataset.meta.camera_for(view);
        let target = &dataset.images[view.id];
        let cache = render::spatial_forward(store, &camera, &bounds, opts.samples_per_ray)?;
        let sun_pass = render::sun_pass(store, &cache, &view.sun, &opts.shadow)?;
        let time = season_field_core::radiance::encode_time(view.day_fraction)?;
        let tp = render::time_pass(store, &cache, &time);
        let direct = ImageBuf {
            width: cache.width,
            height: cache.height,
            pixels: render::combine(&cache, &sun_pass, &tp, opts.shading),
        };
        let aligned = seasonal_align(store, &cache, &sun_pass, target, opts.shading)?;

        views.push(ViewScores {
            view_id: view.id,
            season_tag: view.season_tag.clone(),
            psnr: psnr(&direct, target)?,
            ssim: ssim(&direct, target)?,
            psnr_aligned: psnr(&aligned.aligned, target)?,
            ssim_aligned: ssim(&aligned.aligned, target)?,
            aligned_day_fraction: aligned.day_fraction,
        });

        let approx = approx_shadow_mask(store, &cache, &view.sun, &opts.shadow)?;
        let exact = exact_shadow_mask(
            store,
            &cache,
            &bounds,
            &view.sun,
            &opts.shadow,
            opts.solar_samples,
        )?;
        approx_all.extend_from_slice(&approx);
        exact_all.extend_from_slice(&exact);
    }
    if views.is_empty() {
        return Err(EvalError::invalid("dataset has no test views"));
    }

    let pred = render::height_from_field(
        store,
        &bounds,
        footprint,
        opts.height_grid,
        opts.samples_per_ray,
    )?;
    let height = height_metrics(&pred, &dataset.truth, dataset.meta.z_meters_per_unit);
    let prior_cropped = crop_prior(&dataset.prior, footprint, opts.height_grid);
    let prior_height = height_metrics(&prior_cropped, &dataset.truth, dataset.meta.z_meters_per_unit);
    let shadows = shadow_metrics(&approx_all, &exact_all)?;

    let mean = |f: &dyn Fn(&ViewScores) -> f64| {
        views.iter().map(|v| f(v)).sum::<f64>() / views.len() as f64
    };
    Ok(EvalReport {
        mean_psnr: mean(&|v| v.psnr),
        mean_ssim: mean(&|v| v.ssim),
        mean_psnr_aligned: mean(&|v| v.psnr_aligned),
        mean_ssim_aligned: mean(&|v| v.ssim_aligned),
        views,
        height,
        prior_height,
        shadows,
        case: case.to_string(),
    })
}

/// Resamples the stored prior onto the evaluation footprint grid so prior
/// and field heights are scored identically.
pub fn crop_prior(prior: &HeightGrid, footprint: [[f64; 2]; 2], grid: usize) -> HeightGrid {
    let mut out = HeightGrid::new(grid, grid, footprint[0], footprint[1]);
    for row in 0..grid {
        for col in 0..grid {
            let (x, y) = out.cell_center(col, row);
            out.set(col, row, prior.sample(x, y) as f32);
        }
    }
    out
}

impl EvalReport {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("psnr_mean".to_string(), self.mean_psnr),
            ("ssim_mean".to_string(), self.mean_ssim),
            ("psnr_aligned_mean".to_string(), self.mean_psnr_aligned),
            ("ssim_aligned_mean".to_string(), self.mean_ssim_aligned),
            ("height_mae_m".to_string(), self.height.mae),
            ("height_rmse_m".to_string(), self.height.rmse),
            ("height_median_m".to_string(), self.height.median_error),
            ("height_pct_within_1m".to_string(), self.height.pct_within_1m),
            ("prior_mae_m".to_string(), self.prior_height.mae),
            ("prior_rmse_m".to_string(), self.prior_height.rmse),
            ("shadow_accuracy".to_string(), self.shadows.accuracy),
            ("shadow_sun_f1".to_string(), self.shadows.sun_f1),
            ("shadow_precision".to_string(), self.shadows.shadow_precision),
            ("shadow_recall".to_string(), self.shadows.shadow_recall),
        ];
        for v in &self.views {
            let tag = v
                .season_tag
                .clone()
                .unwrap_or_else(|| format!("view{}", v.view_id));
            rows.push((format!("psnr_{tag}"), v.psnr));
            rows.push((format!("ssim_{tag}"), v.ssim));
            rows.push((format!("psnr_aligned_{tag}"), v.psnr_aligned));
            rows.push((format!("ssim_aligned_{tag}"), v.ssim_aligned));
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("case,metric,value\n");
        for (metric, value) in self.rows() {
            text.push_str(&format!("{},{},{}\n", self.case, metric, value));
        }
        fs::write(path, text).map_err(|e| EvalError::io(path.display(), e))
    }
}

/// Horizontal strip of renders across the year for one view; the analog of
/// the per-season figure grids.
pub fn season_contact_sheet(
    store: &ParamStore<f32>,
    dataset: &SceneDataset,
    columns: usize,
    opts: &EvalOptions,
) -> Result<ImageBuf> {
    let view = dataset
        .meta
        .test_views()
        .first()
        .copied()
        .cloned()
        .ok_or_else(|| EvalError::invalid("dataset has no test views"))?;
    let camera = dataset.meta.camera_for(&view);
    let bounds = dataset.meta.bounds;
    let cache = render::spatial_forward(store, &camera, &bounds, opts.samples_per_ray)?;
    let sp = render::sun_pass(store, &cache, &view.sun, &opts.shadow)?;
    let w = camera.width;
    let h = camera.height;
    let mut sheet = ImageBuf::new(w * columns, h);
    for col_idx in 0..columns {
        let t = (col_idx as f64 + 0.5) / columns as f64;
        let tp = render::time_pass(store, &cache, &season_field_core::radiance::encode_time(t)?);
        let img = render::combine(&cache, &sp, &tp, opts.shading);
        for row in 0..h {
            for col in 0..w {
                sheet.set(col_idx * w + col, row, img[row * w + col]);
            }
        }
    }
    Ok(sheet)
}

/// Distance between two rendered frames; exposed for report tooling.
pub fn frame_distance(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    emd_histogram(a, b)
}
