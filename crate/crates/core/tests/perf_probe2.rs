//! Component-level timing probe (ignored by default).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use season_field_core::backprop::{image_pass, solar_pass, ImageRayBatch, PassSettings, ShadingMode, SolarRayBatch};
use season_field_core::loss::LossThresholds;
use season_field_core::net::{self, BnMode, NetworkConfig};
use season_field_core::params::ParamStore;
use season_field_core::radiance::{encode_time, ShadowParams};
use std::time::Instant;

#[test]
#[ignore]
fn time_components() {
    let net_cfg = NetworkConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store: ParamStore<f32> = ParamStore::init(&net_cfg, &mut rng);

    let k = 96;
    let ri = 512;
    let rs = 1024;
    let mk_points = |rng: &mut ChaCha8Rng, n: usize| {
        Array2::<f32>::from_shape_fn((n, 3), |_| rng.gen_range(-0.95..0.95))
    };
    let img = ImageRayBatch {
        points: mk_points(&mut rng, ri * k),
        deltas: Array2::from_elem((ri, k), 0.02f32),
        gt: Array2::from_shape_fn((ri, 3), |_| rng.gen_range(0.0..1.0f32)),
        rho_h: Some(Array1::from_shape_fn(ri * k, |_| if rng.gen_bool(0.5) { 500.0 } else { 0.0 })),
        sun: [0.3, 0.2, 0.93],
        time: encode_time(0.4).unwrap(),
    };
    let sol = SolarRayBatch {
        points: mk_points(&mut rng, rs * k),
        deltas: Array2::from_elem((rs, k), 0.02f32),
        rho_h: None,
        sun: [0.3, 0.2, 0.93],
    };
    let pass = PassSettings {
        gamma: 0.5f32,
        thresholds: LossThresholds::default(),
        shadow: ShadowParams::default(),
        shading: ShadingMode::ShadowMask,
        robust_color: true,
    };

    // forward only, image batch
    let t = Instant::now();
    for _ in 0..3 {
        let _ = net::forward_cached(&store, img.points.view(), img.sun, &img.time, BnMode::Train, true).unwrap();
    }
    println!("image forward_cached: {:.3}s", t.elapsed().as_secs_f64() / 3.0);

    let t = Instant::now();
    for _ in 0..3 {
        let _ = net::forward_cached(&store, sol.points.view(), sol.sun, &img.time, BnMode::Eval, false).unwrap();
    }
    println!("solar forward: {:.3}s", t.elapsed().as_secs_f64() / 3.0);

    let t = Instant::now();
    for _ in 0..3 {
        let _ = image_pass(&store, &img, &pass).unwrap();
    }
    println!("image_pass total: {:.3}s", t.elapsed().as_secs_f64() / 3.0);

    let t = Instant::now();
    for _ in 0..3 {
        let _ = solar_pass(&store, &sol, &pass).unwrap();
    }
    println!("solar_pass total: {:.3}s", t.elapsed().as_secs_f64() / 3.0);

    // raw gemm reference: one trunk layer on the solar batch
    let a = Array2::<f32>::from_elem((rs * k, 128), 0.1f32);
    let b = Array2::<f32>::from_elem((128, 128), 0.1f32);
    let t = Instant::now();
    for _ in 0..10 {
        let _ = season_field_core::linalg::matmul(a.view(), b.view());
    }
    println!("one 98k x 128 x 128 gemm: {:.4}s", t.elapsed().as_secs_f64() / 10.0);

    let mut buf = vec![0.5f32; rs * k * 128];
    let t = Instant::now();
    for _ in 0..10 {
        season_field_core::linalg::sin_inplace(&mut buf);
    }
    println!("one 12.6M sin pass: {:.4}s", t.elapsed().as_secs_f64() / 10.0);
}
