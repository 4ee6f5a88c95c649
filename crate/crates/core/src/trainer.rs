//! Two-phase training loop: per-step image and solar ray batches, masked
//! gradients per ray type, merged density with the height prior early on,
//! and a one-cycle learning rate. Seeded runs are bit-reproducible.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use season_field_scene::dataset::{SceneDataset, ViewMeta};
use season_field_scene::geom::SceneBounds;
use season_field_scene::heightgrid::HeightGrid;

use crate::backprop::{
    image_pass, solar_pass, ImageRayBatch, PassSettings, ShadingMode, SolarRayBatch,
};
use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{CoreError, Result};
use crate::loss::LossThresholds;
use crate::net::{self, NetworkConfig};
use crate::optim::Adam;
use crate::params::{partition_freeze_sets, ParamStore};
use crate::radiance::{encode_time, ShadowParams, TimeCode};
use crate::real::Real;
use crate::sampling::{make_solar_rays, sample_ray, Aabb};
use crate::schedule::{OneCycleLr, PhaseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationCase {
    /// Full model.
    A,
    /// Per-point illumination compositing instead of the ray shadow mask.
    B,
    /// MSE color loss instead of the robust loss.
    C,
    /// No height prior (phase 1 disabled).
    D,
    /// Single season class.
    E,
}

impl AblationCase {
    pub fn parse(s: &str) -> Option<AblationCase> {
        match s {
            "A" | "a" => Some(AblationCase::A),
            "B" | "b" => Some(AblationCase::B),
            "C" | "c" => Some(AblationCase::C),
            "D" | "d" => Some(AblationCase::D),
            "E" | "e" => Some(AblationCase::E),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationCase::A => "A",
            AblationCase::B => "B",
            AblationCase::C => "C",
            AblationCase::D => "D",
            AblationCase::E => "E",
        }
    }

    pub fn shading(&self) -> ShadingMode {
        match self {
            AblationCase::B => ShadingMode::PerPoint,
            _ => ShadingMode::ShadowMask,
        }
    }

    pub fn robust_color(&self) -> bool {
        !matches!(self, AblationCase::C)
    }

    pub fn uses_prior(&self) -> bool {
        !matches!(self, AblationCase::D)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub steps: usize,
    pub image_rays_per_step: usize,
    pub solar_rays_per_step: usize,
    pub samples_per_ray: usize,
    pub max_lr: f64,
    pub warmup_fraction: f64,
    pub phase1_fraction: f64,
    pub a_min: f64,
    pub s_max: f64,
    pub lambda_sc: f64,
    pub lambda_ds: f64,
    pub shadow: ShadowParams,
    pub case: AblationCase,
    pub seed: u64,
    pub metrics_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 5000,
            image_rays_per_step: 512,
            solar_rays_per_step: 1024,
            samples_per_ray: 96,
            max_lr: 1.5e-4,
            warmup_fraction: 0.3,
            phase1_fraction: 0.2,
            a_min: 0.2,
            s_max: 0.5,
            lambda_sc: 0.03,
            lambda_ds: 1.0,
            shadow: ShadowParams::default(),
            case: AblationCase::A,
            seed: 0,
            metrics_every: 50,
            checkpoint_every: 1000,
        }
    }
}

impl TrainSettings {
    pub fn thresholds<F: Real>(&self) -> Result<LossThresholds<F>> {
        LossThresholds::new(
            F::c(self.a_min),
            F::c(self.s_max),
            F::c(self.lambda_sc),
            F::c(self.lambda_ds),
        )
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        net.validate()?;
        if self.steps == 0 || self.image_rays_per_step == 0 || self.solar_rays_per_step == 0 {
            return Err(CoreError::invalid("step and ray counts must be positive"));
        }
        if self.samples_per_ray < 2 {
            return Err(CoreError::invalid("need at least two samples per ray"));
        }
        if self.case == AblationCase::E && net.n_season_classes != 1 {
            return Err(CoreError::invalid(
                "case E fixes a single season class; set n_season_classes = 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub step: usize,
    pub gamma: f64,
    pub lr: f64,
    pub loss_image: f64,
    pub loss_solar: f64,
    pub loss_prior: f64,
    pub alpha: f64,
    pub c: f64,
}

pub struct TrainOutcome {
    pub store: ParamStore<f32>,
    pub meta: CheckpointMeta,
    pub history: Vec<StepMetrics>,
}

/// Precomputed per-view training data in normalized coordinates.
struct ViewBundle {
    camera: season_field_scene::camera::OrthoCamera,
    sun: [f64; 3],
    time: TimeCode,
    image_idx: usize,
}

fn prior_density_at<F: Real>(
    prior: &HeightGrid,
    bounds: &SceneBounds,
    p_norm: [f64; 3],
    delta: F,
) -> F {
    let scene_z = bounds.denormalize_z(p_norm[2]);
    let h = prior.sample(p_norm[0], p_norm[1]);
    if scene_z <= h {
        F::c(10.0) / delta
    } else {
        F::zero()
    }
}

pub struct BatchBuilder<'a> {
    dataset: &'a SceneDataset,
    bounds: SceneBounds,
    views: Vec<ViewBundle>,
    sun_elev_range: [f64; 2],
    k: usize,
}

impl<'a> BatchBuilder<'a> {
    fn new(dataset: &'a SceneDataset, k: usize) -> Result<BatchBuilder<'a>> {
        let bounds = dataset.meta.bounds;
        let train: Vec<&ViewMeta> = dataset.meta.train_views();
        if train.is_empty() {
            return Err(CoreError::invalid("dataset has no training views"));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let views = train
            .iter()
            .map(|v| {
                lo = lo.min(v.sun.elevation_deg);
                hi = hi.max(v.sun.elevation_deg);
                Ok(ViewBundle {
                    camera: dataset.meta.camera_for(v),
                    sun: v.sun.unit_vector(),
                    time: encode_time(v.day_fraction)?,
                    image_idx: v.id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchBuilder {
            dataset,
            bounds,
            views,
            sun_elev_range: [(lo - 5.0).max(10.0), (hi + 5.0).min(85.0)],
            k,
        })
    }

    pub fn image_batch(
        &self,
        n_rays: usize,
        with_prior: bool,
        rng: &mut ChaCha8Rng,
    ) -> ImageRayBatch<f32> {
        let view = &self.views[rng.gen_range(0..self.views.len())];
        let image = &self.dataset.images[view.image_idx];
        let k = self.k;
        let unit = Aabb::unit();
        let mut points = Array2::<f32>::zeros((n_rays * k, 3));
        let mut deltas = Array2::<f32>::zeros((n_rays, k));
        let mut gt = Array2::<f32>::zeros((n_rays, 3));
        let mut rho_h = with_prior.then(|| Array1::<f32>::zeros(n_rays * k));
        let mut r = 0;
        while r < n_rays {
            let px = rng.gen_range(0..image.width);
            let py = rng.gen_range(0..image.height);
            let (anchor, dir) = view.camera.ray(px, py);
            let o = self.bounds.normalize_point(anchor);
            let d = self.bounds.normalize_dir(dir);
            let Some(ray) = sample_ray(o, d, &unit, k, rng) else {
                continue;
            };
            for i in 0..k {
                let p = ray.positions[i];
                points[[r * k + i, 0]] = p[0] as f32;
                points[[r * k + i, 1]] = p[1] as f32;
                points[[r * k + i, 2]] = p[2] as f32;
                deltas[[r, i]] = ray.deltas[i] as f32;
                if let Some(rh) = rho_h.as_mut() {
                    rh[r * k + i] =
                        prior_density_at(&self.dataset.prior, &self.bounds, p, ray.deltas[i] as f32);
                }
            }
            let c = image.get(px, py);
            gt[[r, 0]] = c[0];
            gt[[r, 1]] = c[1];
            gt[[r, 2]] = c[2];
            r += 1;
        }
        ImageRayBatch {
            points,
            deltas,
            gt,
            rho_h,
            sun: view.sun,
            time: view.time,
        }
    }

    pub fn solar_batch(
        &self,
        n_rays: usize,
        with_prior: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<SolarRayBatch<f32>> {
        let elev: f64 = rng.gen_range(self.sun_elev_range[0]..self.sun_elev_range[1]);
        let az: f64 = rng.gen_range(0.0..360.0);
        let sun = season_field_scene::geom::SunAngle::new(elev, az).unit_vector();
        let sun_norm = self.bounds.normalize_dir(sun);
        let k = self.k;
        let rays = make_solar_rays(n_rays, sun_norm, &Aabb::unit(), k, rng)?;
        let mut points = Array2::<f32>::zeros((n_rays * k, 3));
        let mut deltas = Array2::<f32>::zeros((n_rays, k));
        let mut rho_h = with_prior.then(|| Array1::<f32>::zeros(n_rays * k));
        for (r, ray) in rays.iter().enumerate() {
            for i in 0..k {
                let p = ray.positions[i];
                points[[r * k + i, 0]] = p[0] as f32;
                points[[r * k + i, 1]] = p[1] as f32;
                points[[r * k + i, 2]] = p[2] as f32;
                deltas[[r, i]] = ray.deltas[i] as f32;
                if let Some(rh) = rho_h.as_mut() {
                    rh[r * k + i] =
                        prior_density_at(&self.dataset.prior, &self.bounds, p, ray.deltas[i] as f32);
                }
            }
        }
        Ok(SolarRayBatch {
            points,
            deltas,
            rho_h,
            sun,
        })
    }
}

/// One optimization step: both passes, masked gradient sum, Adam update,
/// batch-norm statistics fold.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    store: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    builder: &BatchBuilder<'_>,
    settings: &TrainSettings,
    gamma: f64,
    lr: f64,
    in_phase1: bool,
    rng: &mut ChaCha8Rng,
) -> Result<StepMetrics> {
    let with_prior = settings.case.uses_prior() && in_phase1;
    let image_batch = builder.image_batch(settings.image_rays_per_step, with_prior, rng);
    let solar_batch = builder.solar_batch(settings.solar_rays_per_step, with_prior, rng)?;

    let pass = PassSettings {
        gamma: gamma as f32,
        thresholds: settings.thresholds()?,
        shadow: settings.shadow,
        shading: settings.case.shading(),
        robust_color: settings.case.robust_color(),
    };
    let freeze = partition_freeze_sets();

    // the two passes are independent given read-only parameters; run them
    // on separate threads (each is internally sequential and deterministic)
    let (image_result, solar_result) = std::thread::scope(|scope| {
        let solar_handle = scope.spawn(|| solar_pass(&*store, &solar_batch, &pass));
        let image = image_pass(store, &image_batch, &pass);
        (image, solar_handle.join().expect("solar pass thread panicked"))
    });
    let image_result = image_result?;
    let solar_result = solar_result?;

    let mut grad = image_result.grad;
    store.mask_partitions(&mut grad, &freeze.image_ray_frozen);
    let mut solar_grad = solar_result.grad;
    store.mask_partitions(&mut solar_grad, &freeze.solar_ray_frozen);
    for (g, s) in grad.iter_mut().zip(solar_grad.iter()) {
        *g += s;
    }

    adam.step(store.data_mut(), &grad, lr as f32);
    net::apply_bn_updates(store, &image_result.bn_updates);

    let robust = store.robust_params();
    Ok(StepMetrics {
        step: 0,
        gamma,
        lr,
        loss_image: image_result.loss_image as f64,
        loss_solar: solar_result.loss as f64,
        loss_prior: image_result.loss_prior as f64,
        alpha: robust.alpha as f64,
        c: robust.c as f64,
    })
}

fn write_metrics_header(file: &mut fs::File) -> std::io::Result<()> {
    writeln!(file, "step,phase,gamma,lr,loss_image,loss_solar,loss_prior,alpha,c")
}

fn write_metrics_row(file: &mut fs::File, m: &StepMetrics, phase: usize) -> std::io::Result<()> {
    writeln!(
        file,
        "{},{},{:.6},{:.8e},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.step, phase, m.gamma, m.lr, m.loss_image, m.loss_solar, m.loss_prior, m.alpha, m.c
    )
}

/// Runs training from scratch or from a resume point. When `out_dir` is set
/// the run directory receives a config snapshot, periodic metrics CSV rows,
/// and checkpoints; a non-finite loss dumps an abort checkpoint and errors.
pub fn run_training(
    dataset: &SceneDataset,
    net_cfg: &NetworkConfig,
    settings: &TrainSettings,
    out_dir: Option<&Path>,
    resume: Option<(ParamStore<f32>, CheckpointMeta, Option<Adam<f32>>)>,
) -> Result<TrainOutcome> {
    settings.validate(net_cfg)?;
    let phase1 = if settings.case.uses_prior() {
        settings.phase1_fraction
    } else {
        0.0
    };
    let schedule = PhaseSchedule::new(settings.steps, phase1)?;
    let lr = OneCycleLr::new(settings.max_lr, settings.warmup_fraction)?;
    let builder = BatchBuilder::new(dataset, settings.samples_per_ray)?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (mut store, start_step, mut adam) = match resume {
        Some((store, meta, adam)) => {
            if meta.net != *net_cfg {
                return Err(CoreError::invalid(
                    "checkpoint network config does not match the requested one",
                ));
            }
            rng.set_word_pos(meta.rng_word_pos());
            let n = store.len();
            (
                store,
                meta.step as usize,
                adam.unwrap_or_else(|| Adam::new(n)),
            )
        }
        None => {
            let store: ParamStore<f32> = ParamStore::init(net_cfg, &mut rng);
            let n = store.len();
            (store, 0, Adam::new(n))
        }
    };

    let mut metrics_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
            let snapshot = serde_json::json!({
                "net": net_cfg,
                "steps": settings.steps,
                "image_rays_per_step": settings.image_rays_per_step,
                "solar_rays_per_step": settings.solar_rays_per_step,
                "samples_per_ray": settings.samples_per_ray,
                "max_lr": settings.max_lr,
                "warmup_fraction": settings.warmup_fraction,
                "phase1_fraction": settings.phase1_fraction,
                "a_min": settings.a_min,
                "s_max": settings.s_max,
                "lambda_sc": settings.lambda_sc,
                "lambda_ds": settings.lambda_ds,
                "kappa": settings.shadow.kappa,
                "mu": settings.shadow.mu,
                "case": settings.case.name(),
                "seed": settings.seed,
            });
            let cfg_path = dir.join("config.json");
            fs::write(&cfg_path, serde_json::to_string_pretty(&snapshot).unwrap())
                .map_err(|e| CoreError::io(cfg_path.display().to_string(), e))?;
            let path = dir.join("metrics.csv");
            let fresh = start_step == 0 || !path.exists();
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| CoreError::io(path.display().to_string(), e))?;
            if fresh {
                write_metrics_header(&mut f)
                    .map_err(|e| CoreError::io(path.display().to_string(), e))?;
            }
            Some(f)
        }
        None => None,
    };

    let make_meta = |step: usize, rng: &ChaCha8Rng| {
        let mut meta = CheckpointMeta {
            net: net_cfg.clone(),
            case: settings.case.name().to_string(),
            step: step as u64,
            seed: settings.seed,
            rng_word_pos_lo: 0,
            rng_word_pos_hi: 0,
        };
        meta.set_rng_word_pos(rng.get_word_pos());
        meta
    };

    let mut history = Vec::new();
    for step in start_step..settings.steps {
        let gamma = schedule.gamma(step);
        let step_lr = lr.lr(step, settings.steps);
        let in_p1 = schedule.in_phase1(step);
        let mut metrics = match train_step(
            &mut store,
            &mut adam,
            &builder,
            settings,
            gamma,
            step_lr,
            in_p1,
            &mut rng,
        ) {
            Ok(m) => m,
            Err(e) => {
                if let Some(dir) = out_dir {
                    let meta = make_meta(step, &rng);
                    let _ = checkpoint::save(&dir.join("abort.ckpt"), &meta, &store);
                }
                return Err(e);
            }
        };
        metrics.step = step;
        if step % settings.metrics_every == 0 || step + 1 == settings.steps {
            if let Some(f) = metrics_file.as_mut() {
                write_metrics_row(f, &metrics, if in_p1 { 1 } else { 2 })
                    .map_err(|e| CoreError::io("metrics.csv".to_string(), e))?;
            }
            history.push(metrics);
        }
        if let Some(dir) = out_dir {
            let next = step + 1;
            if next % settings.checkpoint_every == 0 && next < settings.steps {
                let meta = make_meta(next, &rng);
                checkpoint::save(&dir.join(format!("step_{next:06}.ckpt")), &meta, &store)?;
                checkpoint::save_optimizer(&dir.join(format!("step_{next:06}.opt")), &adam)?;
            }
        }
    }

    let meta = make_meta(settings.steps, &rng);
    if let Some(dir) = out_dir {
        checkpoint::save(&dir.join("final.ckpt"), &meta, &store)?;
        checkpoint::save_optimizer(&dir.join("final.opt"), &adam)?;
    }
    Ok(TrainOutcome {
        store,
        meta,
        history,
    })
}

/// Builds batches for external probes (gradient oracles, resume checks).
pub fn batch_builder<'a>(dataset: &'a SceneDataset, samples_per_ray: usize) -> Result<BatchBuilder<'a>> {
    BatchBuilder::new(dataset, samples_per_ray)
}

impl<'a> BatchBuilder<'a> {
    /// Loss of one freshly drawn step without updating anything.
    pub fn probe_losses(
        &self,
        store: &ParamStore<f32>,
        settings: &TrainSettings,
        gamma: f64,
        in_phase1: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, f64)> {
        let with_prior = settings.case.uses_prior() && in_phase1;
        let image_batch = self.image_batch(settings.image_rays_per_step, with_prior, rng);
        let solar_batch = self.solar_batch(settings.solar_rays_per_step, with_prior, rng)?;
        let pass = PassSettings {
            gamma: gamma as f32,
            thresholds: settings.thresholds()?,
            shadow: settings.shadow,
            shading: settings.case.shading(),
            robust_color: settings.case.robust_color(),
        };
        let img = image_pass(store, &image_batch, &pass)?;
        let sol = solar_pass(store, &solar_batch, &pass)?;
        Ok((img.loss_total as f64, sol.loss as f64))
    }
}

/// Loads a checkpoint pair (parameters + optional optimizer sidecar path).
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamStore<f32>)> {
    checkpoint::load(path)
}

pub fn checkpoint_sidecar(path: &Path) -> PathBuf {
    path.with_extension("opt")
}
