//! On-disk dataset: `scene.json` metadata, 8-bit PNG views, and the two
//! altitude rasters (noisy prior, clean truth).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::OrthoCamera;
use crate::error::{Result, SceneError};
use crate::geom::{SceneBounds, SunAngle};
use crate::heightgrid::HeightGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMeta {
    pub id: usize,
    pub image: String,
    pub off_nadir_deg: f64,
    pub azimuth_deg: f64,
    pub sun: SunAngle,
    pub day_fraction: f64,
    pub split: Split,
    #[serde(default)]
    pub season_tag: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub bounds: SceneBounds,
    pub footprint: [[f64; 2]; 2],
    pub image_size: [usize; 2],
    pub z_meters_per_unit: f64,
    pub seed: u64,
    pub preset: String,
    pub height_prior: String,
    pub height_truth: String,
    pub views: Vec<ViewMeta>,
}

impl SceneMeta {
    pub fn camera_for(&self, view: &ViewMeta) -> OrthoCamera {
        OrthoCamera {
            off_nadir_deg: view.off_nadir_deg,
            azimuth_deg: view.azimuth_deg,
            width: self.image_size[0],
            height: self.image_size[1],
            footprint: self.footprint,
            z_anchor: 0.5 * (self.bounds.z[0] + self.bounds.z[1]),
        }
    }

    pub fn train_views(&self) -> Vec<&ViewMeta> {
        self.views.iter().filter(|v| v.split == Split::Train).collect()
    }

    pub fn test_views(&self) -> Vec<&ViewMeta> {
        self.views.iter().filter(|v| v.split == Split::Test).collect()
    }
}

/// Linear RGB image in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize) -> ImageBuf {
        ImageBuf {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> [f32; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: [f32; 3]) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for row in 0..self.height {
            for col in 0..self.width {
                let p = self.get(col, row);
                img.put_pixel(
                    col as u32,
                    row as u32,
                    image::Rgb([
                        (p[0].clamp(0.0, 1.0) * 255.0).round() as u8,
                        (p[1].clamp(0.0, 1.0) * 255.0).round() as u8,
                        (p[2].clamp(0.0, 1.0) * 255.0).round() as u8,
                    ]),
                );
            }
        }
        img.save(path)
            .map_err(|e| SceneError::format(path.display(), format!("png encode: {e}")))
    }

    pub fn load_png(path: &Path) -> Result<ImageBuf> {
        let img = image::open(path)
            .map_err(|e| SceneError::format(path.display(), format!("png decode: {e}")))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageBuf::new(w, h);
        for row in 0..h {
            for col in 0..w {
                let p = img.get_pixel(col as u32, row as u32);
                out.set(
                    col,
                    row,
                    [
                        p[0] as f32 / 255.0,
                        p[1] as f32 / 255.0,
                        p[2] as f32 / 255.0,
                    ],
                );
            }
        }
        Ok(out)
    }
}

/// Loaded dataset: metadata plus decoded images and rasters.
pub struct SceneDataset {
    pub root: PathBuf,
    pub meta: SceneMeta,
    /// Indexed like `meta.views`.
    pub images: Vec<ImageBuf>,
    pub prior: HeightGrid,
    pub truth: HeightGrid,
}

impl SceneDataset {
    pub fn load(root: &Path) -> Result<SceneDataset> {
        let meta_path = root.join("scene.json");
        let text =
            fs::read_to_string(&meta_path).map_err(|e| SceneError::io(meta_path.display(), e))?;
        let meta: SceneMeta = serde_json::from_str(&text)
            .map_err(|e| SceneError::format(meta_path.display(), e.to_string()))?;
        let mut images = Vec::with_capacity(meta.views.len());
        for v in &meta.views {
            images.push(ImageBuf::load_png(&root.join(&v.image))?);
        }
        let prior = HeightGrid::load(&root.join(&meta.height_prior), meta.bounds.x, meta.bounds.y)?;
        let truth = HeightGrid::load(&root.join(&meta.height_truth), meta.bounds.x, meta.bounds.y)?;
        Ok(SceneDataset {
            root: root.to_path_buf(),
            meta,
            images,
            prior,
            truth,
        })
    }

    pub fn save_meta(root: &Path, meta: &SceneMeta) -> Result<()> {
        let path = root.join("scene.json");
        let text = serde_json::to_string_pretty(meta)
            .map_err(|e| SceneError::format(path.display(), e.to_string()))?;
        fs::write(&path, text).map_err(|e| SceneError::io(path.display(), e))
    }
}
