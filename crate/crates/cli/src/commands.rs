//! Subcommand implementations. Every command exits nonzero through a typed
//! error: 2 validation, 3 numeric failure, 4 i/o.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use season_field_core::checkpoint;
use season_field_core::trainer::{self, AblationCase};
use season_field_core::CoreError;
use season_field_eval::report::{evaluate, season_contact_sheet, EvalOptions};
use season_field_eval::stability::{stability_sweep, tune_score, StabilityProtocol};
use season_field_eval::EvalError;
use season_field_scene::dataset::SceneDataset;
use season_field_scene::emit::{emit_dataset, EmitOptions, NoiseSpec};
use season_field_scene::geom::SunAngle;
use season_field_scene::synth::{ScenePreset, SyntheticScene};
use season_field_scene::SceneError;

use crate::config::RunConfig;

pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::InvalidArgument(_) => 2,
                CoreError::NumericFailure(_) => 3,
                CoreError::Io { .. } | CoreError::CorruptCheckpoint(_) => 4,
            };
        }
        if let Some(scene) = cause.downcast_ref::<SceneError>() {
            return match scene {
                SceneError::InvalidArgument(_) => 2,
                SceneError::Io { .. } | SceneError::Format { .. } => 4,
            };
        }
        if let Some(eval) = cause.downcast_ref::<EvalError>() {
            return match eval {
                EvalError::InvalidArgument(_) => 2,
                EvalError::Io { .. } => 4,
                EvalError::Core(c) => match c {
                    CoreError::InvalidArgument(_) => 2,
                    CoreError::NumericFailure(_) => 3,
                    _ => 4,
                },
                EvalError::Scene(_) => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn parse_angle_pair(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| anyhow!("expected az,el but got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

#[derive(Args)]
pub struct GenSceneArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub views: usize,
    #[arg(long, default_value = "town")]
    pub preset: String,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 64)]
    pub raster_size: usize,
    /// Gaussian noise on the prior raster, scene z units.
    #[arg(long, default_value_t = 0.02)]
    pub height_noise: f64,
    #[arg(long, default_value_t = 1)]
    pub blobs: usize,
    #[arg(long, default_value_t = 0.18)]
    pub blob_amplitude: f64,
    #[arg(long, default_value_t = 0.08)]
    pub blob_radius: f64,
    #[arg(long, default_value_t = 0.01)]
    pub image_noise: f64,
    #[arg(long, default_value_t = 2)]
    pub transients: usize,
}

pub fn gen_scene(args: GenSceneArgs) -> Result<()> {
    if args.views < 8 {
        bail!(CoreError::invalid(format!(
            "gen-scene requires at least 8 views (4 are reserved for testing), got {}",
            args.views
        )));
    }
    let preset = ScenePreset::parse(&args.preset)
        .ok_or_else(|| anyhow!(CoreError::invalid(format!("unknown preset {:?}", args.preset))))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let scene = SyntheticScene::generate(preset, args.seed, &mut rng);
    let opts = EmitOptions {
        n_views: args.views,
        image_size: args.image_size,
        raster_size: args.raster_size,
        noise: NoiseSpec {
            height_sigma: args.height_noise,
            blob_count: args.blobs,
            blob_amplitude: args.blob_amplitude,
            blob_radius: args.blob_radius,
            image_sigma: args.image_noise,
            transients_per_image: args.transients,
        },
    };
    let ds = emit_dataset(&scene, &opts, &args.out, &mut rng).context("emitting dataset")?;
    println!(
        "wrote {} views ({} train / {} test) to {}",
        ds.meta.views.len(),
        ds.meta.train_views().len(),
        ds.meta.test_views().len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation case A..E; overrides the config file.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let case = args
        .case
        .as_deref()
        .map(|c| {
            AblationCase::parse(c)
                .ok_or_else(|| anyhow!(CoreError::invalid(format!("unknown case {c:?}"))))
        })
        .transpose()?;
    if case == Some(AblationCase::E) && args.config.is_none() {
        cfg.net.n_season_classes = 1;
    }
    let cfg = cfg.finalize(case)?;
    let dataset = SceneDataset::load(&args.data).context("loading dataset")?;
    let resume = args
        .resume
        .map(|path| -> Result<_> {
            let (meta, store) = checkpoint::load(&path)?;
            let sidecar = trainer::checkpoint_sidecar(&path);
            let adam = sidecar
                .exists()
                .then(|| checkpoint::load_optimizer(&sidecar, store.len()))
                .transpose()?;
            Ok((store, meta, adam))
        })
        .transpose()?;

    let started = std::time::Instant::now();
    let outcome = trainer::run_training(&dataset, &cfg.net, &cfg.train, Some(&args.out), resume)?;
    let last = outcome.history.last().map(|m| m.loss_image).unwrap_or(f64::NAN);
    println!(
        "trained case {} for {} steps in {:.1}s (final image loss {:.4}); checkpoints in {}",
        cfg.train.case.name(),
        outcome.meta.step,
        started.elapsed().as_secs_f64(),
        last,
        args.out.display()
    );
    Ok(())
}

fn load_model(path: &PathBuf) -> Result<(checkpoint::CheckpointMeta, season_field_core::params::ParamStore<f32>)> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn shading_for(meta: &checkpoint::CheckpointMeta) -> season_field_core::backprop::ShadingMode {
    match AblationCase::parse(&meta.case) {
        Some(case) => case.shading(),
        None => season_field_core::backprop::ShadingMode::ShadowMask,
    }
}

#[derive(Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// View angle as az,el (degrees; el = 90 is nadir).
    #[arg(long)]
    pub view: String,
    /// Sun angle as az,el (degrees).
    #[arg(long)]
    pub sun: String,
    #[arg(long)]
    pub day_frac: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 96)]
    pub samples: usize,
}

pub fn render(args: RenderArgs) -> Result<()> {
    let (meta, store) = load_model(&args.ckpt)?;
    let dataset = SceneDataset::load(&args.data)?;
    let (view_az, view_el) = parse_angle_pair(&args.view)?;
    let (sun_az, sun_el) = parse_angle_pair(&args.sun)?;
    if !(0.0..=90.0).contains(&view_el) {
        bail!(CoreError::invalid("view elevation must lie in [0, 90]"));
    }
    let camera = season_field_scene::camera::OrthoCamera {
        off_nadir_deg: 90.0 - view_el,
        azimuth_deg: view_az,
        width: dataset.meta.image_size[0],
        height: dataset.meta.image_size[1],
        footprint: dataset.meta.footprint,
        z_anchor: 0.5 * (dataset.meta.bounds.z[0] + dataset.meta.bounds.z[1]),
    };
    let image = season_field_eval::field::render_image(
        &store,
        &camera,
        &dataset.meta.bounds,
        &SunAngle::new(sun_el, sun_az),
        args.day_frac,
        args.samples,
        &season_field_core::radiance::ShadowParams::default(),
        shading_for(&meta),
    )?;
    image.save_png(&args.out)?;
    println!("rendered {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct RenderSeasonsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of renderings spread across the year.
    #[arg(long, default_value_t = 180)]
    pub count: usize,
    #[arg(long, default_value = "45,70")]
    pub view: String,
    #[arg(long, default_value = "135,50")]
    pub sun: String,
    #[arg(long, default_value_t = 96)]
    pub samples: usize,
}

pub fn render_seasons(args: RenderSeasonsArgs) -> Result<()> {
    use season_field_core::radiance::encode_time;
    use season_field_core::render;
    let (meta, store) = load_model(&args.ckpt)?;
    let dataset = SceneDataset::load(&args.data)?;
    let (view_az, view_el) = parse_angle_pair(&args.view)?;
    let (sun_az, sun_el) = parse_angle_pair(&args.sun)?;
    fs::create_dir_all(&args.out)?;
    let camera = season_field_scene::camera::OrthoCamera {
        off_nadir_deg: 90.0 - view_el,
        azimuth_deg: view_az,
        width: dataset.meta.image_size[0],
        height: dataset.meta.image_size[1],
        footprint: dataset.meta.footprint,
        z_anchor: 0.5 * (dataset.meta.bounds.z[0] + dataset.meta.bounds.z[1]),
    };
    let shading = shading_for(&meta);
    let shadow = season_field_core::radiance::ShadowParams::default();
    let cache = render::spatial_forward(&store, &camera, &dataset.meta.bounds, args.samples)?;
    let sp = render::sun_pass(&store, &cache, &SunAngle::new(sun_el, sun_az), &shadow)?;
    let mut sheet = season_field_scene::dataset::ImageBuf::new(camera.width * args.count.min(24), camera.height);
    for i in 0..args.count {
        let t = (i as f64 + 0.5) / args.count as f64;
        let tp = render::time_pass(&store, &cache, &encode_time(t)?);
        let color = render::combine(&cache, &sp, &tp, shading);
        let img = season_field_scene::dataset::ImageBuf {
            width: camera.width,
            height: camera.height,
            pixels: color,
        };
        img.save_png(&args.out.join(format!("season_{i:03}.png")))?;
        if i < 24 {
            for row in 0..camera.height {
                for col in 0..camera.width {
                    sheet.set(i * camera.width + col, row, img.get(col, row));
                }
            }
        }
    }
    sheet.save_png(&args.out.join("contact_sheet.png"))?;
    println!("rendered {} seasonal frames to {}", args.count, args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 96)]
    pub samples: usize,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (meta, store) = load_model(&args.ckpt)?;
    let dataset = SceneDataset::load(&args.data)?;
    fs::create_dir_all(&args.out)?;
    let opts = EvalOptions {
        samples_per_ray: args.samples,
        shading: shading_for(&meta),
        ..EvalOptions::default()
    };
    let report = evaluate(&store, &dataset, &meta.case, &opts)?;
    report.write_csv(&args.out.join("eval.csv"))?;
    let sheet = season_contact_sheet(&store, &dataset, 12, &opts)?;
    sheet.save_png(&args.out.join("season_grid.png"))?;
    println!(
        "case {}: psnr {:.2} dB (aligned {:.2}), ssim {:.3} (aligned {:.3}), height mae {:.2} m, shadow acc {:.3}",
        report.case,
        report.mean_psnr,
        report.mean_psnr_aligned,
        report.mean_ssim,
        report.mean_ssim_aligned,
        report.height.mae,
        report.shadows.accuracy
    );
    Ok(())
}

#[derive(Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 96)]
    pub samples: usize,
}

pub fn stability(args: StabilityArgs) -> Result<()> {
    let (meta, store) = load_model(&args.ckpt)?;
    let dataset = SceneDataset::load(&args.data)?;
    fs::create_dir_all(&args.out)?;
    let mut protocol = StabilityProtocol::default();
    protocol.image_size = dataset.meta.image_size[0];
    protocol.samples_per_ray = args.samples;
    let report = stability_sweep(
        &store,
        &dataset.meta.bounds,
        dataset.meta.footprint,
        &protocol,
        &season_field_core::radiance::ShadowParams::default(),
        shading_for(&meta),
    )?;
    let mut text = String::from("case,metric,value\n");
    for (k, v) in [
        ("stability_median", report.median),
        ("stability_q95", report.q95),
        ("stability_max", report.max),
        ("baseline_min", report.baseline_min),
        ("baseline_median", report.baseline_median),
        ("baseline_max", report.baseline_max),
        ("renders", report.renders as f64),
    ] {
        text.push_str(&format!("{},{},{}\n", meta.case, k, v));
    }
    fs::write(args.out.join("stability.csv"), text)?;
    println!(
        "case {}: {} renders; fixed-time EMD median {:.3} q95 {:.3} max {:.3}; baseline min {:.3}",
        meta.case, report.renders, report.median, report.q95, report.max, report.baseline_min
    );
    Ok(())
}

#[derive(Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    /// Steps per trial (shortened runs, the tuning shortcut).
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 9)]
    pub seed: u64,
    #[arg(long, default_value_t = 48)]
    pub samples: usize,
    /// Base configuration trials start from (network size, ray counts).
    #[arg(long)]
    pub base_config: Option<PathBuf>,
}

pub fn tune(args: TuneArgs) -> Result<()> {
    use rand::Rng;
    let dataset = SceneDataset::load(&args.data)?;
    fs::create_dir_all(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);

    let run_trial = |cfg: &RunConfig| -> Result<(f64, f64, f64)> {
        let outcome = trainer::run_training(&dataset, &cfg.net, &cfg.train, None, None)?;
        let opts = EvalOptions {
            samples_per_ray: args.samples,
            shading: cfg.train.case.shading(),
            solar_samples: 32,
            ..EvalOptions::default()
        };
        let report = evaluate(&outcome.store, &dataset, cfg.train.case.name(), &opts)?;
        let mut protocol = StabilityProtocol::default();
        protocol.image_size = dataset.meta.image_size[0];
        protocol.samples_per_ray = args.samples;
        protocol.views.truncate(4);
        protocol.suns.truncate(2);
        protocol.times = vec![0.125, 0.375, 0.625, 0.875];
        let stab = stability_sweep(
            &outcome.store,
            &dataset.meta.bounds,
            dataset.meta.footprint,
            &protocol,
            &cfg.train.shadow,
            cfg.train.case.shading(),
        )?;
        Ok((report.mean_ssim_aligned, report.height.mae, stab.max))
    };

    // baseline from the base configuration
    let mut base_cfg = match &args.base_config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    base_cfg.train.steps = args.steps;
    base_cfg.train.checkpoint_every = usize::MAX / 2;
    let base_cfg = base_cfg.finalize(None)?;
    let template = base_cfg.clone();
    let (ssim_b, mae_b, em_b) = run_trial(&base_cfg)?;
    println!("baseline: ssim {ssim_b:.3} mae {mae_b:.2} em_max {em_b:.3}");

    let mut log = String::from("trial,score,ssim,mae,em_max,max_lr,lambda_sc,lambda_ds,n,kappa,mu,s_max,a_min\n");
    let mut best: Option<(f64, String)> = None;
    for trial in 0..args.trials {
        let mut cfg = template.clone();
        cfg.train.max_lr = 10f64.powf(rng.gen_range(-4.9..-3.5));
        cfg.train.lambda_sc = rng.gen_range(0.005..0.5);
        cfg.train.lambda_ds = rng.gen_range(0.25..3.0);
        cfg.net.n_season_classes = rng.gen_range(2..=8);
        cfg.train.shadow = season_field_core::radiance::ShadowParams::new(
            rng.gen_range(10.0..50.0),
            rng.gen_range(-0.5..-0.05),
        )
        .map_err(|e| anyhow!("{e}"))?;
        cfg.train.s_max = rng.gen_range(0.3..0.8);
        cfg.train.a_min = rng.gen_range(0.05..0.3);
        cfg.train.seed = rng.gen_range(0..u64::MAX / 2);
        let cfg = cfg.finalize(None)?;
        let (ssim, mae, em) = run_trial(&cfg)?;
        let score = tune_score(ssim, mae, em, ssim_b, mae_b, em_b);
        let summary = format!(
            "{trial},{score:.4},{ssim:.4},{mae:.3},{em:.3},{:.3e},{:.4},{:.3},{},{:.2},{:.3},{:.3},{:.3}",
            cfg.train.max_lr,
            cfg.train.lambda_sc,
            cfg.train.lambda_ds,
            cfg.net.n_season_classes,
            cfg.train.shadow.kappa,
            cfg.train.shadow.mu,
            cfg.train.s_max,
            cfg.train.a_min
        );
        println!("trial {trial}: score {score:.4}");
        log.push_str(&summary);
        log.push('\n');
        if best.as_ref().map_or(true, |(s, _)| score > *s) {
            best = Some((score, summary));
        }
    }
    fs::write(args.out.join("tune.csv"), log)?;
    if let Some((score, summary)) = best {
        println!("best score {score:.4}: {summary}");
    }
    Ok(())
}
