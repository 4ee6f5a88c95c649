//! Deterministic view rendering from a trained field, factored so sweeps can
//! reuse work: the spatial pass (geometry-dependent) runs once per view, the
//! sun pass per sun angle, and the time pass per day of year. Rays use
//! midpoint sampling, so identical inputs give identical pixels.

use ndarray::{s, Array1, Array2};

use season_field_scene::camera::OrthoCamera;
use season_field_scene::geom::{SceneBounds, SunAngle};
use season_field_scene::heightgrid::HeightGrid;

use crate::backprop::ShadingMode;
use crate::error::Result;
use crate::linalg;
use crate::net::{self, BnMode};
use crate::params::ParamStore;
use crate::radiance::{ShadowParams, TimeCode};
use crate::real::sigmoid;
use crate::sampling::Aabb;

/// Per-view geometry-dependent network state: surface weights and the
/// sun/time-independent head outputs.
pub struct SpatialCache {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// (pixels * k) x 3 normalized sample positions.
    pub points: Array2<f32>,
    /// pixels x k sample spacing (normalized units).
    pub deltas: Array2<f32>,
    pub features: Array2<f32>,
    pub density: Array1<f32>,
    pub p_surface: Array2<f32>,
    pub albedo_pre: Array2<f32>,
    pub season_adjust: Array2<f32>,
    /// Rows of pixels whose rays missed the volume (rendered black).
    pub missed: Vec<bool>,
}

pub struct SunPass {
    pub sun: [f64; 3],
    pub s_vis: Array1<f32>,
    /// Shadow mask per pixel.
    pub mask: Vec<f32>,
    pub sky: [f32; 3],
}

pub struct TimePass {
    pub time: TimeCode,
    /// Per-point season-adjusted albedo.
    pub col_t_points: Array2<f32>,
    /// Composited per pixel.
    pub col_t: Vec<[f32; 3]>,
}

pub struct ViewRender {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f32; 3]>,
    pub col_t: Vec<[f32; 3]>,
    pub mask: Vec<f32>,
    pub sky: [f32; 3],
}

/// Midpoint samples along every pixel ray of an orthographic view.
pub fn spatial_forward(
    store: &ParamStore<f32>,
    camera: &OrthoCamera,
    bounds: &SceneBounds,
    k: usize,
) -> Result<SpatialCache> {
    crate::alloc_tuning::ensure();
    let unit = Aabb::unit();
    let n_pix = camera.width * camera.height;
    let mut points = Array2::<f32>::zeros((n_pix * k, 3));
    let mut deltas = Array2::<f32>::zeros((n_pix, k));
    let mut missed = vec![false; n_pix];
    for row in 0..camera.height {
        for col in 0..camera.width {
            let pix = row * camera.width + col;
            let (anchor, dir) = camera.ray(col, row);
            let o = bounds.normalize_point(anchor);
            let d = bounds.normalize_dir(dir);
            match unit.intersect_line(o, d) {
                Some((t0, t1)) => {
                    let w = (t1 - t0) / k as f64;
                    for i in 0..k {
                        let t = t0 + (i as f64 + 0.5) * w;
                        points[[pix * k + i, 0]] = (o[0] + t * d[0]) as f32;
                        points[[pix * k + i, 1]] = (o[1] + t * d[1]) as f32;
                        points[[pix * k + i, 2]] = (o[2] + t * d[2]) as f32;
                        deltas[[pix, i]] = w as f32;
                    }
                }
                None => {
                    missed[pix] = true;
                    for i in 0..k {
                        deltas[[pix, i]] = 1.0;
                    }
                }
            }
        }
    }

    let pe = net::pe_batch(points.view(), store.cfg.pe_levels_pos);
    let (features, _, _) = net::trunk_forward(store, &pe, BnMode::Eval, false);
    let wd = view2(store, "density.w");
    let bd = store.tensor_slice("density.b")[0];
    let density_z = linalg::matmul(features.view(), wd).index_axis_move(ndarray::Axis(1), 0) + bd;
    let density = density_z.mapv(|z| crate::real::softplus(z) * net::DENSITY_SCALE as f32);

    let wa = view2(store, "albedo.w");
    let ba = Array1::from_vec(store.tensor_slice("albedo.b").to_vec());
    let mut albedo_pre = linalg::matmul(features.view(), wa);
    albedo_pre += &ba;
    let ws = view2(store, "season.w");
    let bs = Array1::from_vec(store.tensor_slice("season.b").to_vec());
    let mut season_adjust = linalg::matmul(features.view(), ws);
    season_adjust += &bs;

    let mut p_surface = Array2::<f32>::zeros((n_pix, k));
    for pix in 0..n_pix {
        if missed[pix] {
            continue;
        }
        let mut acc = 0.0f32;
        for i in 0..k {
            let rd = density[pix * k + i] * deltas[[pix, i]];
            let vis = (-acc).exp();
            p_surface[[pix, i]] = (1.0 - (-rd).exp()) * vis;
            acc += rd;
        }
    }

    Ok(SpatialCache {
        width: camera.width,
        height: camera.height,
        k,
        points,
        deltas,
        features,
        density,
        p_surface,
        albedo_pre,
        season_adjust,
        missed,
    })
}

fn view2<'a>(store: &'a ParamStore<f32>, name: &str) -> ndarray::ArrayView2<'a, f32> {
    let spec = store.layout().tensor(name).clone();
    ndarray::ArrayView2::from_shape((spec.rows, spec.cols), store.tensor_slice(name)).unwrap()
}

/// Evaluates the visibility branch and sky net for one sun angle over a
/// cached spatial pass.
pub fn sun_pass(
    store: &ParamStore<f32>,
    cache: &SpatialCache,
    sun: &SunAngle,
    shadow: &ShadowParams,
) -> Result<SunPass> {
    let sun_vec = sun.unit_vector();
    let sun_f: Vec<f32> = sun_vec.iter().map(|&v| v as f32).collect();
    let pe_sun = Array1::from_vec(crate::radiance::positional_encode(
        &sun_f,
        store.cfg.pe_levels_sun,
    ));

    let w1 = view2(store, "solar.w1");
    let (w1_feat, w1_sun) = w1.split_at(ndarray::Axis(0), store.cfg.trunk_width);
    let b1 = Array1::from_vec(store.tensor_slice("solar.b1").to_vec());
    let sun_part = pe_sun.dot(&w1_sun) + &b1;
    let mut z1 = linalg::matmul(cache.features.view(), w1_feat);
    z1 += &sun_part;
    linalg::sin_inplace(z1.as_slice_mut().unwrap());
    let w2 = view2(store, "solar.w2");
    let b2 = store.tensor_slice("solar.b2")[0];
    let s_vis = (linalg::matmul(z1.view(), w2).index_axis_move(ndarray::Axis(1), 0) + b2)
        .mapv(sigmoid);

    let wsky1 = view2(store, "sky.w1");
    let bsky1 = Array1::from_vec(store.tensor_slice("sky.b1").to_vec());
    let h1 = (pe_sun.dot(&wsky1) + &bsky1).mapv(|v| crate::real::Real::act_sin(v));
    let wsky2 = view2(store, "sky.w2");
    let bsky2 = Array1::from_vec(store.tensor_slice("sky.b2").to_vec());
    let sky_l = h1.dot(&wsky2) + &bsky2;
    let sky = [sigmoid(sky_l[0]), sigmoid(sky_l[1]), sigmoid(sky_l[2])];

    let n_pix = cache.width * cache.height;
    let kappa = shadow.kappa as f32;
    let mu = shadow.mu as f32;
    let mut mask = vec![0.0f32; n_pix];
    for pix in 0..n_pix {
        let mut acc = 0.0f32;
        for i in 0..cache.k {
            acc += cache.p_surface[[pix, i]] * s_vis[pix * cache.k + i];
        }
        mask[pix] = sigmoid(kappa * (mu + acc));
    }
    Ok(SunPass {
        sun: sun_vec,
        s_vis,
        mask,
        sky,
    })
}

/// Evaluates the seasonal blend for one day of year over a cached view.
pub fn time_pass(store: &ParamStore<f32>, cache: &SpatialCache, time: &TimeCode) -> TimePass {
    let probs = net::temporal_class(store, time);
    let n_classes = store.cfg.n_season_classes;
    let n = cache.points.nrows();
    let mut col_t_points = Array2::<f32>::zeros((n, 3));
    for i in 0..n {
        for c in 0..3 {
            let mut shift = 0.0f32;
            for kk in 0..n_classes {
                shift += cache.season_adjust[[i, c * n_classes + kk]] * probs[kk];
            }
            col_t_points[[i, c]] = sigmoid(cache.albedo_pre[[i, c]] + shift);
        }
    }
    let n_pix = cache.width * cache.height;
    let mut col_t = vec![[0.0f32; 3]; n_pix];
    for pix in 0..n_pix {
        for c in 0..3 {
            let mut acc = 0.0f32;
            for i in 0..cache.k {
                acc += cache.p_surface[[pix, i]] * col_t_points[[pix * cache.k + i, c]];
            }
            col_t[pix][c] = acc;
        }
    }
    TimePass {
        time: *time,
        col_t_points,
        col_t,
    }
}

/// Final color from cached sun and time passes.
pub fn combine(
    cache: &SpatialCache,
    sun: &SunPass,
    time: &TimePass,
    shading: ShadingMode,
) -> Vec<[f32; 3]> {
    let n_pix = cache.width * cache.height;
    let mut out = vec![[0.0f32; 3]; n_pix];
    match shading {
        ShadingMode::ShadowMask => {
            for pix in 0..n_pix {
                let m = sun.mask[pix];
                for c in 0..3 {
                    out[pix][c] = time.col_t[pix][c] * (m + (1.0 - m) * sun.sky[c]);
                }
            }
        }
        ShadingMode::PerPoint => {
            for pix in 0..n_pix {
                for c in 0..3 {
                    let mut acc = 0.0f32;
                    for i in 0..cache.k {
                        let sv = sun.s_vis[pix * cache.k + i];
                        acc += cache.p_surface[[pix, i]]
                            * (sv + (1.0 - sv) * sun.sky[c])
                            * time.col_t_points[[pix * cache.k + i, c]];
                    }
                    out[pix][c] = acc;
                }
            }
        }
    }
    out
}

/// Renders one view at one (sun, time) conditioning pair.
pub fn render_view(
    store: &ParamStore<f32>,
    camera: &OrthoCamera,
    bounds: &SceneBounds,
    sun: &SunAngle,
    time: &TimeCode,
    k: usize,
    shadow: &ShadowParams,
    shading: ShadingMode,
) -> Result<ViewRender> {
    let cache = spatial_forward(store, camera, bounds, k)?;
    let sp = sun_pass(store, &cache, sun, shadow)?;
    let tp = time_pass(store, &cache, time);
    let color = combine(&cache, &sp, &tp, shading);
    Ok(ViewRender {
        width: cache.width,
        height: cache.height,
        color,
        col_t: tp.col_t,
        mask: sp.mask,
        sky: sp.sky,
    })
}

/// Expected surface altitude per raster cell from nadir rays; cells whose
/// total surface weight stays below 0.1 fall back to the scene floor.
pub fn height_from_field(
    store: &ParamStore<f32>,
    bounds: &SceneBounds,
    footprint: [[f64; 2]; 2],
    grid: usize,
    k: usize,
) -> Result<HeightGrid> {
    let mut out = HeightGrid::new(grid, grid, footprint[0], footprint[1]);
    let n_pix = grid * grid;
    let mut points = Array2::<f32>::zeros((n_pix * k, 3));
    let w = 2.0 / k as f64; // normalized z span per stratum
    let mut z_norms = vec![0.0f32; k];
    for (i, z) in z_norms.iter_mut().enumerate() {
        *z = (-1.0 + (i as f64 + 0.5) * w) as f32;
    }
    for row in 0..grid {
        for col in 0..grid {
            let pix = row * grid + col;
            let (x, y) = out.cell_center(col, row);
            for i in 0..k {
                // nadir ray sampled top-down
                points[[pix * k + i, 0]] = x as f32;
                points[[pix * k + i, 1]] = y as f32;
                points[[pix * k + i, 2]] = -z_norms[i];
            }
        }
    }
    let density = density_in_chunks(store, &points)?;
    for pix in 0..n_pix {
        let h_norm = expected_altitude_norm(&density.as_slice().unwrap()[pix * k..(pix + 1) * k], w as f32, &z_norms);
        let h = bounds.denormalize_z(h_norm as f64);
        out.set(pix % grid, pix / grid, h as f32);
    }
    Ok(out)
}

/// Surface-weight-normalized expected altitude along a top-down column.
/// `z_norms[i]` is the normalized altitude of sample i counted from the top;
/// columns with total surface weight below 0.1 report the floor (-1).
pub fn expected_altitude_norm(densities: &[f32], delta: f32, z_norms: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    let mut wsum = 0.0f32;
    let mut zsum = 0.0f32;
    for (i, &rho) in densities.iter().enumerate() {
        let rd = rho * delta;
        let vis = (-acc).exp();
        let ps = (1.0 - (-rd).exp()) * vis;
        wsum += ps;
        zsum += ps * -z_norms[i];
        acc += rd;
    }
    if wsum >= 0.1 {
        zsum / wsum
    } else {
        -1.0
    }
}

/// Density over a large point set, evaluated in fixed-size chunks.
pub fn density_in_chunks(store: &ParamStore<f32>, points: &Array2<f32>) -> Result<Array1<f32>> {
    const CHUNK: usize = 1 << 16;
    let n = points.nrows();
    let mut out = Array1::<f32>::zeros(n);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let d = net::forward_density(store, points.slice(s![start..end, ..]))?;
        out.slice_mut(s![start..end]).assign(&d);
        start = end;
    }
    Ok(out)
}
