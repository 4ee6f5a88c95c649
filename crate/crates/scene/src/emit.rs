//! Dataset emission: renders train/test views, writes the noisy prior and
//! clean truth rasters, and tags the held-out split (three season
//! prototypes plus one angle-diverse view).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ImageBuf, SceneDataset, SceneMeta, Split, ViewMeta};
use crate::error::{Result, SceneError};
use crate::exact::render_exact;
use crate::geom::SunAngle;
use crate::heightgrid::HeightGrid;
use crate::synth::{SyntheticScene, FOOTPRINT, PROTOTYPE_BROWN, PROTOTYPE_GREEN, PROTOTYPE_SNOW};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Gaussian noise on the prior raster, scene z units.
    pub height_sigma: f64,
    /// Spurious smooth bumps injected into the prior.
    pub blob_count: usize,
    pub blob_amplitude: f64,
    pub blob_radius: f64,
    /// Pixel noise added to training images.
    pub image_sigma: f64,
    /// Small solid-color patches stamped onto each training image.
    pub transients_per_image: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            height_sigma: 0.02,
            blob_count: 1,
            blob_amplitude: 0.18,
            blob_radius: 0.08,
            image_sigma: 0.01,
            transients_per_image: 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EmitOptions {
    pub n_views: usize,
    pub image_size: usize,
    pub raster_size: usize,
    pub noise: NoiseSpec,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            n_views: 24,
            image_size: 64,
            raster_size: 64,
            noise: NoiseSpec::default(),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn truth_raster(scene: &SyntheticScene, size: usize) -> HeightGrid {
    let mut g = HeightGrid::new(size, size, scene.bounds.x, scene.bounds.y);
    for row in 0..size {
        for col in 0..size {
            let (x, y) = g.cell_center(col, row);
            let h = scene.height(x, y) as f32;
            g.set(col, row, h);
        }
    }
    g
}

fn prior_raster(
    scene: &SyntheticScene,
    size: usize,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> HeightGrid {
    let mut g = truth_raster(scene, size);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..noise.blob_count)
        .map(|_| {
            (
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                noise.blob_amplitude,
                noise.blob_radius,
            )
        })
        .collect();
    for row in 0..size {
        for col in 0..size {
            let (x, y) = g.cell_center(col, row);
            let mut h = g.at(col, row) as f64;
            if noise.height_sigma > 0.0 {
                h += noise.height_sigma * gaussian(rng);
            }
            for &(bx, by, amp, r) in &blobs {
                let d2 = ((x - bx) * (x - bx) + (y - by) * (y - by)) / (r * r);
                h += amp * (-0.5 * d2).exp();
            }
            g.set(col, row, h as f32);
        }
    }
    g
}

struct ViewSpec {
    off_nadir: f64,
    azimuth: f64,
    sun: SunAngle,
    day_fraction: f64,
    split: Split,
    tag: Option<&'static str>,
}

fn plan_views(n_views: usize, rng: &mut ChaCha8Rng) -> Vec<ViewSpec> {
    let mut views = Vec::with_capacity(n_views);
    // three season prototypes plus one angle-diverse view are held out
    views.push(ViewSpec {
        off_nadir: 18.0,
        azimuth: 45.0,
        sun: SunAngle::new(35.0, 160.0),
        day_fraction: PROTOTYPE_SNOW,
        split: Split::Test,
        tag: Some("snow"),
    });
    views.push(ViewSpec {
        off_nadir: 12.0,
        azimuth: 200.0,
        sun: SunAngle::new(60.0, 140.0),
        day_fraction: PROTOTYPE_GREEN,
        split: Split::Test,
        tag: Some("green"),
    });
    views.push(ViewSpec {
        off_nadir: 22.0,
        azimuth: 310.0,
        sun: SunAngle::new(45.0, 200.0),
        day_fraction: PROTOTYPE_BROWN,
        split: Split::Test,
        tag: Some("brown"),
    });
    views.push(ViewSpec {
        off_nadir: 33.0,
        azimuth: 135.0,
        sun: SunAngle::new(50.0, 250.0),
        day_fraction: 0.35,
        split: Split::Test,
        tag: Some("angle"),
    });
    let n_train = n_views - 4;
    for i in 0..n_train {
        // stratified day fractions cover the whole year
        let t = (i as f64 + rng.gen_range(0.05..0.95)) / n_train as f64;
        views.push(ViewSpec {
            off_nadir: rng.gen_range(5.0..32.0),
            azimuth: rng.gen_range(0.0..360.0),
            sun: SunAngle::new(rng.gen_range(35.0..65.0), rng.gen_range(80.0..280.0)),
            day_fraction: t,
            split: Split::Train,
            tag: None,
        });
    }
    views
}

fn stamp_transients(img: &mut ImageBuf, count: usize, rng: &mut ChaCha8Rng) {
    for _ in 0..count {
        let cx = rng.gen_range(0..img.width) as i64;
        let cy = rng.gen_range(0..img.height) as i64;
        let r = rng.gen_range(1..3) as i64;
        let color = [
            rng.gen_range(0.0..1.0f32),
            rng.gen_range(0.0..1.0f32),
            rng.gen_range(0.0..1.0f32),
        ];
        for dy in -r..=r {
            for dx in -r..=r {
                let x = cx + dx;
                let y = cy + dy;
                if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height
                    && dx * dx + dy * dy <= r * r
                {
                    img.set(x as usize, y as usize, color);
                }
            }
        }
    }
}

/// Renders and writes a complete dataset; deterministic per rng state.
pub fn emit_dataset(
    scene: &SyntheticScene,
    opts: &EmitOptions,
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<SceneDataset> {
    if opts.n_views < 5 {
        return Err(SceneError::invalid(format!(
            "need at least 5 views (4 test + 1 train), got {}",
            opts.n_views
        )));
    }
    fs::create_dir_all(out_dir.join("images"))
        .map_err(|e| SceneError::io(out_dir.display(), e))?;

    let specs = plan_views(opts.n_views, rng);
    let mut views = Vec::with_capacity(specs.len());
    let mut images = Vec::with_capacity(specs.len());
    for (id, s) in specs.iter().enumerate() {
        let camera = crate::camera::OrthoCamera {
            off_nadir_deg: s.off_nadir,
            azimuth_deg: s.azimuth,
            width: opts.image_size,
            height: opts.image_size,
            footprint: FOOTPRINT,
            z_anchor: 0.5 * (scene.bounds.z[0] + scene.bounds.z[1]),
        };
        let render = render_exact(scene, &camera, &s.sun, s.day_fraction)?;
        let mut img = ImageBuf::new(opts.image_size, opts.image_size);
        for (i, c) in render.color.iter().enumerate() {
            img.pixels[i] = *c;
        }
        if s.split == Split::Train {
            if opts.noise.image_sigma > 0.0 {
                for p in &mut img.pixels {
                    for c in p.iter_mut() {
                        *c = (*c + (opts.noise.image_sigma * gaussian(rng)) as f32).clamp(0.0, 1.0);
                    }
                }
            }
            stamp_transients(&mut img, opts.noise.transients_per_image, rng);
        }
        let rel = format!("images/view_{id:03}.png");
        img.save_png(&out_dir.join(&rel))?;
        views.push(ViewMeta {
            id,
            image: rel,
            off_nadir_deg: s.off_nadir,
            azimuth_deg: s.azimuth,
            sun: s.sun,
            day_fraction: s.day_fraction,
            split: s.split,
            season_tag: s.tag.map(|t| t.to_string()),
        });
        images.push(img);
    }

    let truth = truth_raster(scene, opts.raster_size);
    let prior = prior_raster(scene, opts.raster_size, &opts.noise, rng);
    truth.save(&out_dir.join("height_truth.hgt"))?;
    prior.save(&out_dir.join("height_prior.hgt"))?;

    let meta = SceneMeta {
        bounds: scene.bounds,
        footprint: FOOTPRINT,
        image_size: [opts.image_size, opts.image_size],
        z_meters_per_unit: scene.z_meters_per_unit,
        seed: scene.seed,
        preset: scene.preset.name().to_string(),
        height_prior: "height_prior.hgt".into(),
        height_truth: "height_truth.hgt".into(),
        views,
    };
    SceneDataset::save_meta(out_dir, &meta)?;
    Ok(SceneDataset {
        root: out_dir.to_path_buf(),
        meta,
        images,
        prior,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ScenePreset;
    use rand::SeedableRng;

    fn scene() -> SyntheticScene {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        SyntheticScene::generate(ScenePreset::Field, 21, &mut rng)
    }

    #[test]
    fn split_reserves_exactly_four_test_views() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let opts = EmitOptions {
            n_views: 9,
            image_size: 16,
            raster_size: 16,
            noise: NoiseSpec::default(),
        };
        let ds = emit_dataset(&scene(), &opts, dir.path(), &mut rng).unwrap();
        assert_eq!(ds.meta.test_views().len(), 4);
        assert_eq!(ds.meta.train_views().len(), 5);
        let tags: Vec<_> = ds
            .meta
            .test_views()
            .iter()
            .filter_map(|v| v.season_tag.clone())
            .collect();
        assert!(tags.contains(&"snow".to_string()));
        assert!(tags.contains(&"green".to_string()));
        assert!(tags.contains(&"brown".to_string()));
        assert!(tags.contains(&"angle".to_string()));
    }

    #[test]
    fn zero_noise_prior_equals_truth() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let opts = EmitOptions {
            n_views: 6,
            image_size: 8,
            raster_size: 24,
            noise: NoiseSpec {
                height_sigma: 0.0,
                blob_count: 0,
                blob_amplitude: 0.0,
                blob_radius: 0.1,
                image_sigma: 0.0,
                transients_per_image: 0,
            },
        };
        let ds = emit_dataset(&scene(), &opts, dir.path(), &mut rng).unwrap();
        let mae: f64 = ds
            .prior
            .data
            .iter()
            .zip(ds.truth.data.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / ds.prior.data.len() as f64;
        assert_eq!(mae, 0.0);
    }

    #[test]
    fn unit_noise_prior_mae_matches_folded_normal_mean() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let opts = EmitOptions {
            n_views: 5,
            image_size: 8,
            raster_size: 96,
            noise: NoiseSpec {
                height_sigma: 1.0,
                blob_count: 0,
                blob_amplitude: 0.0,
                blob_radius: 0.1,
                image_sigma: 0.0,
                transients_per_image: 0,
            },
        };
        let ds = emit_dataset(&scene(), &opts, dir.path(), &mut rng).unwrap();
        let mae: f64 = ds
            .prior
            .data
            .iter()
            .zip(ds.truth.data.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / ds.prior.data.len() as f64;
        // E|N(0,1)| = sqrt(2/pi); 9216 samples put the estimate within ~2%
        assert!(
            (mae - 0.7978845608028654).abs() < 0.025,
            "prior MAE {mae} vs folded-normal mean"
        );
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let opts = EmitOptions {
            n_views: 6,
            image_size: 12,
            raster_size: 12,
            noise: NoiseSpec::default(),
        };
        let ds = emit_dataset(&scene(), &opts, dir.path(), &mut rng).unwrap();
        let loaded = SceneDataset::load(dir.path()).unwrap();
        assert_eq!(loaded.meta.views.len(), 6);
        assert_eq!(loaded.prior.data, ds.prior.data);
        assert_eq!(loaded.truth.data, ds.truth.data);
        // png is 8-bit; loaded pixels match the written ones after the same
        // quantization
        for (a, b) in loaded.images[0].pixels.iter().zip(ds.images[0].pixels.iter()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn rejects_too_few_views() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let opts = EmitOptions {
            n_views: 4,
            image_size: 8,
            raster_size: 8,
            noise: NoiseSpec::default(),
        };
        assert!(emit_dataset(&scene(), &opts, dir.path(), &mut rng).is_err());
    }
}
