//! The learnable field: a sinusoidal MLP over positionally encoded space,
//! with per-point density / albedo / season-adjustment heads, a time-driven
//! class net, a sun-conditioned visibility branch, and a sky net.
//!
//! Conditioning is structural: time reaches only the class net, the sun
//! reaches only the visibility branch and the sky net, so density and albedo
//! are exactly invariant to both.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg;
use crate::params::{ParamStore, CLASS_HIDDEN};
use crate::radiance::TimeCode;
use crate::real::{sigmoid, softplus, Real};

/// Fixed positive scale on the softplus density head so opaque surfaces are
/// reachable at moderate pre-activation magnitudes.
pub const DENSITY_SCALE: f64 = 100.0;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub n_season_classes: usize,
    pub pe_levels_pos: usize,
    pub pe_levels_sun: usize,
    pub batch_norm: bool,
    pub omega0: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            trunk_width: 128,
            trunk_depth: 8,
            n_season_classes: 4,
            pe_levels_pos: 10,
            pe_levels_sun: 4,
            batch_norm: true,
            omega0: 30.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_width == 0
            || self.trunk_depth == 0
            || self.pe_levels_pos == 0
            || self.pe_levels_sun == 0
        {
            return Err(CoreError::invalid("network dimensions must be positive"));
        }
        if self.n_season_classes == 0 {
            return Err(CoreError::invalid("need at least one season class"));
        }
        if !(self.omega0 > 0.0) {
            return Err(CoreError::invalid("omega0 must be positive"));
        }
        Ok(())
    }

    pub fn pos_in(&self) -> usize {
        6 * self.pe_levels_pos
    }

    pub fn sun_in(&self) -> usize {
        6 * self.pe_levels_sun
    }
}

/// Per-point network outputs for one (sun, time) conditioning pair.
#[derive(Debug, Clone)]
pub struct FieldOutputs<F> {
    pub density: Array1<F>,
    pub albedo_pre: Array2<F>,
    /// n x (3 * n_classes), channel-major: entry [i, c * N + k].
    pub season_adjust: Array2<F>,
    pub solar_vis: Array1<F>,
    pub sky: [F; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnMode {
    /// Normalize by batch statistics (training path).
    Train,
    /// Normalize by stored running statistics.
    Eval,
}

pub struct TrunkCache<F> {
    /// Pre-normalization linear outputs per layer.
    pub pre_bn: Vec<Array2<F>>,
    /// Sine outputs of layers 0..depth-2 (inputs to the next layer).
    pub hidden: Vec<Array2<F>>,
    /// Statistics used for normalization per layer (batch or running).
    pub mean: Vec<Array1<F>>,
    pub var: Vec<Array1<F>>,
}

pub struct ClassCache<F> {
    pub enc: [F; 2],
    pub z1: Array1<F>,
    pub h1: Array1<F>,
    pub probs: Array1<F>,
}

pub struct SolarCache<F> {
    pub pe_sun: Array1<F>,
    pub z1: Array2<F>,
    pub h1: Array2<F>,
    pub logit: Array1<F>,
}

pub struct SkyCache<F> {
    pub z1: Array1<F>,
    pub h1: Array1<F>,
    pub logits: [F; 3],
}

pub struct ForwardCache<F> {
    pub pe_pos: Array2<F>,
    pub features: Array2<F>,
    pub trunk: Option<TrunkCache<F>>,
    pub density_z: Array1<F>,
    pub class: ClassCache<F>,
    pub solar: SolarCache<F>,
    pub sky: SkyCache<F>,
}

/// Fresh batch statistics to fold into the running estimates.
pub struct BnStatsUpdate<F> {
    pub layer: usize,
    pub mean: Array1<F>,
    pub var: Array1<F>,
}

fn view2<'a, F: Real>(store: &'a ParamStore<F>, name: &str) -> ArrayView2<'a, F> {
    let spec = store.layout().tensor(name).clone();
    ArrayView2::from_shape((spec.rows, spec.cols), store.tensor_slice(name)).unwrap()
}

fn row1<F: Real>(store: &ParamStore<F>, name: &str) -> Array1<F> {
    Array1::from_vec(store.tensor_slice(name).to_vec())
}

/// Positional encoding of a point batch assumed inside [-1,1]^d:
/// per component, (sin 2^k pi x, cos 2^k pi x) interleaved over levels.
pub fn pe_batch<F: Real>(points: ArrayView2<'_, F>, levels: usize) -> Array2<F> {
    let n = points.nrows();
    let d = points.ncols();
    let stride = 2 * levels;
    let mut args = Array2::<F>::zeros((n, d * levels));
    for (mut row, p) in args.rows_mut().into_iter().zip(points.rows()) {
        for j in 0..d {
            let mut freq = F::c(std::f64::consts::PI);
            for k in 0..levels {
                row[j * levels + k] = freq * p[j];
                freq = freq + freq;
            }
        }
    }
    let flat = args.as_slice().unwrap();
    let mut sins = vec![F::zero(); flat.len()];
    let mut coss = vec![F::zero(); flat.len()];
    F::act_sin_slice(flat, &mut sins);
    F::act_cos_slice(flat, &mut coss);
    let mut out = Array2::<F>::zeros((n, d * stride));
    let out_slice = out.as_slice_mut().unwrap();
    for i in 0..n {
        let src = i * d * levels;
        let dst = i * d * stride;
        for jk in 0..d * levels {
            out_slice[dst + 2 * jk] = sins[src + jk];
            out_slice[dst + 2 * jk + 1] = coss[src + jk];
        }
    }
    out
}

fn check_points<F: Real>(points: ArrayView2<'_, F>) -> Result<()> {
    if points.ncols() != 3 {
        return Err(CoreError::invalid("points must be n x 3"));
    }
    let lim = F::c(1.0 + 1e-9);
    for p in points.iter() {
        if !p.is_finite() || p.abs() > lim {
            return Err(CoreError::invalid(format!(
                "point component {} outside [-1,1]",
                p.f64c()
            )));
        }
    }
    Ok(())
}

/// Column means and biased variances, accumulated in f64 in one pass.
fn batch_stats<F: Real>(z: &Array2<F>) -> (Array1<F>, Array1<F>) {
    let (n, w) = z.dim();
    let mut sum = vec![0f64; w];
    let mut sumsq = vec![0f64; w];
    let zs = z.as_slice().unwrap();
    for row in zs.chunks_exact(w) {
        for (j, &v) in row.iter().enumerate() {
            let x = v.f64c();
            sum[j] += x;
            sumsq[j] += x * x;
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|&s| s / nf).collect();
    (
        Array1::from_iter(mean.iter().map(|&m| F::c(m))),
        Array1::from_iter(
            sumsq
                .iter()
                .zip(mean.iter())
                .map(|(&sq, &m)| F::c((sq / nf - m * m).max(0.0))),
        ),
    )
}

/// Runs the trunk over encoded positions. Returns final features plus the
/// activation cache and fresh batch statistics when requested.
pub fn trunk_forward<F: Real>(
    store: &ParamStore<F>,
    pe_pos: &Array2<F>,
    mode: BnMode,
    keep_cache: bool,
) -> (Array2<F>, Option<TrunkCache<F>>, Vec<BnStatsUpdate<F>>) {
    let cfg = &store.cfg;
    let width = cfg.trunk_width;
    let mut cache = keep_cache.then(|| TrunkCache {
        pre_bn: Vec::with_capacity(cfg.trunk_depth),
        hidden: Vec::with_capacity(cfg.trunk_depth.saturating_sub(1)),
        mean: Vec::with_capacity(cfg.trunk_depth),
        var: Vec::with_capacity(cfg.trunk_depth),
    });
    let mut updates = Vec::new();
    let mut x = pe_pos.clone();
    for l in 0..cfg.trunk_depth {
        let w = view2(store, &format!("trunk.w{l}"));
        let b = store.tensor_slice(&format!("trunk.b{l}"));
        let mut z = linalg::matmul(x.view(), w);
        {
            let zs = z.as_slice_mut().unwrap();
            if l == 0 {
                let omega = F::c(cfg.omega0);
                for row in zs.chunks_exact_mut(width) {
                    for (v, &bb) in row.iter_mut().zip(b) {
                        *v = (*v + bb) * omega;
                    }
                }
            } else {
                for row in zs.chunks_exact_mut(width) {
                    for (v, &bb) in row.iter_mut().zip(b) {
                        *v = *v + bb;
                    }
                }
            }
        }

        if cfg.batch_norm {
            let (mean, var) = match mode {
                BnMode::Train => {
                    let (mean, var) = batch_stats(&z);
                    updates.push(BnStatsUpdate {
                        layer: l,
                        mean: mean.clone(),
                        var: var.clone(),
                    });
                    (mean, var)
                }
                BnMode::Eval => (
                    row1(store, &format!("trunk.mean{l}")),
                    row1(store, &format!("trunk.var{l}")),
                ),
            };
            let gamma = store.tensor_slice(&format!("trunk.gamma{l}"));
            let beta = store.tensor_slice(&format!("trunk.beta{l}"));
            let eps = F::c(BN_EPS);
            let mut scale = vec![F::zero(); width];
            let mut shift = vec![F::zero(); width];
            for j in 0..width {
                let inv = F::one() / (var[j] + eps).sqrt();
                scale[j] = gamma[j] * inv;
                shift[j] = beta[j] - mean[j] * scale[j];
            }
            if let Some(c) = cache.as_mut() {
                c.pre_bn.push(z.clone());
                c.mean.push(mean);
                c.var.push(var);
            }
            let zs = z.as_slice_mut().unwrap();
            for row in zs.chunks_exact_mut(width) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v * scale[j] + shift[j];
                }
            }
        } else if let Some(c) = cache.as_mut() {
            c.pre_bn.push(z.clone());
            c.mean.push(Array1::zeros(width));
            c.var.push(Array1::ones(width));
        }

        linalg::sin_inplace(z.as_slice_mut().unwrap());
        if let Some(c) = cache.as_mut() {
            if l + 1 < cfg.trunk_depth {
                c.hidden.push(z.clone());
            }
        }
        x = z;
    }
    (x, cache, updates)
}

fn class_forward<F: Real>(store: &ParamStore<F>, time: &TimeCode) -> ClassCache<F> {
    let enc = [F::c(time.encoding[0]), F::c(time.encoding[1])];
    let w1 = view2(store, "class.w1");
    let b1 = row1(store, "class.b1");
    let mut z1 = Array1::<F>::zeros(CLASS_HIDDEN);
    for j in 0..CLASS_HIDDEN {
        z1[j] = enc[0] * w1[[0, j]] + enc[1] * w1[[1, j]] + b1[j];
    }
    let h1 = z1.mapv(|v| v.act_sin());
    let w2 = view2(store, "class.w2");
    let b2 = row1(store, "class.b2");
    let logits = h1.dot(&w2) + &b2;
    let probs = softmax(&logits);
    ClassCache { enc, z1, h1, probs }
}

fn sky_forward<F: Real>(store: &ParamStore<F>, pe_sun: &Array1<F>) -> SkyCache<F> {
    let w1 = view2(store, "sky.w1");
    let b1 = row1(store, "sky.b1");
    let z1 = pe_sun.dot(&w1) + &b1;
    let h1 = z1.mapv(|v| v.act_sin());
    let w2 = view2(store, "sky.w2");
    let b2 = row1(store, "sky.b2");
    let l = h1.dot(&w2) + &b2;
    SkyCache {
        z1,
        h1,
        logits: [l[0], l[1], l[2]],
    }
}

fn solar_forward<F: Real>(
    store: &ParamStore<F>,
    features: &Array2<F>,
    pe_sun: &Array1<F>,
) -> SolarCache<F> {
    let cfg = &store.cfg;
    let w1 = view2(store, "solar.w1");
    let (w1_feat, w1_sun) = w1.split_at(Axis(0), cfg.trunk_width);
    let b1 = row1(store, "solar.b1");
    let sun_part = pe_sun.dot(&w1_sun) + &b1;
    let mut z1 = linalg::matmul(features.view(), w1_feat);
    z1 += &sun_part;
    let mut h1 = z1.clone();
    linalg::sin_inplace(h1.as_slice_mut().unwrap());
    let w2 = view2(store, "solar.w2");
    let b2 = store.tensor_slice("solar.b2")[0];
    let logit = h1.dot(&w2).index_axis_move(Axis(1), 0) + b2;
    SolarCache {
        pe_sun: pe_sun.clone(),
        z1,
        h1,
        logit,
    }
}

pub fn softmax<F: Real>(logits: &Array1<F>) -> Array1<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps.mapv(|v| v / sum)
}

/// Softmax distribution over season classes for a time of year.
pub fn temporal_class<F: Real>(store: &ParamStore<F>, time: &TimeCode) -> Array1<F> {
    class_forward(store, time).probs
}

/// Full forward pass for a point batch under one (sun, time) pair.
///
/// `bn_mode` selects batch vs running statistics; fresh statistics are
/// returned (not applied) so the caller decides when running stats move.
pub fn forward_cached<F: Real>(
    store: &ParamStore<F>,
    points: ArrayView2<'_, F>,
    sun: [f64; 3],
    time: &TimeCode,
    bn_mode: BnMode,
    keep_trunk_cache: bool,
) -> Result<(FieldOutputs<F>, ForwardCache<F>, Vec<BnStatsUpdate<F>>)> {
    check_points(points)?;
    let cfg = &store.cfg;
    let pe_pos = pe_batch(points, cfg.pe_levels_pos);
    let (features, trunk, updates) = trunk_forward(store, &pe_pos, bn_mode, keep_trunk_cache);

    let wd = view2(store, "density.w");
    let bd = store.tensor_slice("density.b")[0];
    let density_z = linalg::matmul(features.view(), wd).index_axis_move(Axis(1), 0) + bd;
    let density = density_z.mapv(|z| softplus(z) * F::c(DENSITY_SCALE));

    let wa = view2(store, "albedo.w");
    let ba = row1(store, "albedo.b");
    let mut albedo_pre = linalg::matmul(features.view(), wa);
    albedo_pre += &ba;

    let ws = view2(store, "season.w");
    let bs = row1(store, "season.b");
    let mut season_adjust = linalg::matmul(features.view(), ws);
    season_adjust += &bs;

    let sun_f: Vec<F> = sun.iter().map(|&v| F::c(v)).collect();
    let pe_sun = Array1::from_vec(crate::radiance::positional_encode(&sun_f, cfg.pe_levels_sun));
    let solar = solar_forward(store, &features, &pe_sun);
    let solar_vis = solar.logit.mapv(sigmoid);
    let sky_cache = sky_forward(store, &pe_sun);
    let sky = [
        sigmoid(sky_cache.logits[0]),
        sigmoid(sky_cache.logits[1]),
        sigmoid(sky_cache.logits[2]),
    ];
    let class = class_forward(store, time);

    let outputs = FieldOutputs {
        density,
        albedo_pre,
        season_adjust,
        solar_vis,
        sky,
    };
    let cache = ForwardCache {
        pe_pos,
        features,
        trunk,
        density_z,
        class,
        solar,
        sky: sky_cache,
    };
    Ok((outputs, cache, updates))
}

/// Inference-mode forward (running statistics, no cache retained).
pub fn forward<F: Real>(
    store: &ParamStore<F>,
    points: ArrayView2<'_, F>,
    sun: [f64; 3],
    time: &TimeCode,
) -> Result<FieldOutputs<F>> {
    let (out, _, _) = forward_cached(store, points, sun, time, BnMode::Eval, false)?;
    Ok(out)
}

/// Density only (inference mode); used by exact-visibility evaluation where
/// albedo and conditioning heads are not needed.
pub fn forward_density<F: Real>(store: &ParamStore<F>, points: ArrayView2<'_, F>) -> Result<Array1<F>> {
    check_points(points)?;
    let pe_pos = pe_batch(points, store.cfg.pe_levels_pos);
    let (features, _, _) = trunk_forward(store, &pe_pos, BnMode::Eval, false);
    let wd = view2(store, "density.w");
    let bd = store.tensor_slice("density.b")[0];
    let z = linalg::matmul(features.view(), wd).index_axis_move(Axis(1), 0) + bd;
    Ok(z.mapv(|z| softplus(z) * F::c(DENSITY_SCALE)))
}

/// Folds fresh batch statistics into the stored running statistics.
pub fn apply_bn_updates<F: Real>(store: &mut ParamStore<F>, updates: &[BnStatsUpdate<F>]) {
    let momentum = F::c(BN_MOMENTUM);
    let keep = F::one() - momentum;
    for u in updates {
        let mean_name = format!("trunk.mean{}", u.layer);
        for (m, &b) in store.tensor_slice_mut(&mean_name).iter_mut().zip(u.mean.iter()) {
            *m = *m * keep + b * momentum;
        }
        let var_name = format!("trunk.var{}", u.layer);
        for (v, &b) in store.tensor_slice_mut(&var_name).iter_mut().zip(u.var.iter()) {
            *v = *v * keep + b * momentum;
        }
    }
}
