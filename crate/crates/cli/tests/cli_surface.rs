//! Binary-level checks: exit codes, render determinism, run artifacts.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_season-field"))
}

fn tiny_cfg(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "steps = 40\nimage_rays_per_step = 32\nsolar_rays_per_step = 48\nsamples_per_ray = 16\n\
         trunk_width = 24\ntrunk_depth = 2\npe_levels_pos = 4\npe_levels_sun = 2\n\
         max_lr = 5e-4\nmetrics_every = 10\ncheckpoint_every = 20\nseed = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn cli_end_to_end_surface() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");

    // too few views fails validation with exit code 2
    let out = bin()
        .args(["gen-scene", "--views", "5", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["gen-scene", "--seed", "9", "--views", "9", "--image-size", "24", "--raster-size", "16", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // identical seeds produce byte-identical datasets
    let data2 = dir.path().join("data2");
    bin()
        .args(["gen-scene", "--seed", "9", "--views", "9", "--image-size", "24", "--raster-size", "16", "--out"])
        .arg(&data2)
        .output()
        .unwrap();
    assert_eq!(
        std::fs::read(data.join("scene.json")).unwrap(),
        std::fs::read(data2.join("scene.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(data.join("height_prior.hgt")).unwrap(),
        std::fs::read(data2.join("height_prior.hgt")).unwrap()
    );
    assert_eq!(
        std::fs::read(data.join("images/view_000.png")).unwrap(),
        std::fs::read(data2.join("images/view_000.png")).unwrap()
    );

    // case E with explicit conflicting classes is a config conflict
    let cfg = tiny_cfg(dir.path());
    let conflicted = dir.path().join("conflict.cfg");
    std::fs::write(&conflicted, "n_season_classes = 4\n").unwrap();
    let run = dir.path().join("run-e");
    let out = bin()
        .args(["train", "--case", "E", "--config"])
        .arg(&conflicted)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // train, then check run artifacts
    let run = dir.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    // header + steps 0,10,20,30,39
    assert_eq!(metrics.lines().count(), 6, "{metrics}");
    assert!(run.join("step_000020.ckpt").exists());
    assert!(run.join("final.ckpt").exists());
    assert!(run.join("config.json").exists());

    // render determinism: identical flags give identical bytes
    let png1 = dir.path().join("r1.png");
    let png2 = dir.path().join("r2.png");
    for png in [&png1, &png2] {
        let out = bin()
            .args(["render", "--view", "45,70", "--sun", "135,50", "--day-frac", "0.25", "--samples", "16"])
            .arg("--ckpt")
            .arg(run.join("final.ckpt"))
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(png)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&png1).unwrap(), std::fs::read(&png2).unwrap());

    // missing checkpoint is an i/o failure
    let out = bin()
        .args(["render", "--view", "0,90", "--sun", "90,45", "--day-frac", "0.5"])
        .arg("--ckpt")
        .arg(dir.path().join("missing.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("x.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn render_seasons_produces_the_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    bin()
        .args(["gen-scene", "--seed", "4", "--views", "8", "--image-size", "16", "--raster-size", "16", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    let cfg = tiny_cfg(dir.path());
    let run = dir.path().join("run");
    bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    let seasons = dir.path().join("seasons");
    let out = bin()
        .args(["render-seasons", "--samples", "8", "--ckpt"])
        .arg(run.join("final.ckpt"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&seasons)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frames = std::fs::read_dir(&seasons)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("season_")
        })
        .count();
    // the default grid spans the year in 180 frames
    assert_eq!(frames, 180);
    assert!(seasons.join("contact_sheet.png").exists());
}

#[test]
fn tune_single_trial_score_matches_a_direct_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    bin()
        .args(["gen-scene", "--seed", "6", "--views", "8", "--image-size", "16", "--raster-size", "16", "--out"])
        .arg(&data)
        .output()
        .unwrap();
    let base = dir.path().join("base.cfg");
    std::fs::write(
        &base,
        "image_rays_per_step = 24\nsolar_rays_per_step = 32\nsamples_per_ray = 12\n\
         trunk_width = 16\ntrunk_depth = 2\npe_levels_pos = 3\npe_levels_sun = 2\n",
    )
    .unwrap();
    let run_tune = |out: &Path| {
        let o = bin()
            .args(["tune", "--trials", "1", "--steps", "20", "--seed", "11", "--samples", "12", "--base-config"])
            .arg(&base)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("tune.csv")).unwrap()
    };
    // the tuning run is deterministic, so rerunning the single trial
    // reproduces the same score: the score is a direct eval of that config
    let a = run_tune(&dir.path().join("t1"));
    let b = run_tune(&dir.path().join("t2"));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 2, "{a}");
}
