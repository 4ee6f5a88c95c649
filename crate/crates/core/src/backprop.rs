//! Reverse-mode gradients for the image-ray and solar-ray objectives.
//!
//! The backward passes are written against the concrete architecture. The
//! image pass differentiates everything reachable from the image loss
//! (including the path through the visibility branch into the trunk); the
//! solar pass only needs branch and sky gradients because every other
//! partition is frozen for that ray type. Freeze masking is applied to the
//! finished gradient vector, matching "compute full, then zero".

use ndarray::{Array1, Array2, Axis};

use crate::barron::{barron_f_grads, barron_partition, barron_partition_dalpha, squash_alpha, squash_c};
use crate::error::{CoreError, Result};
use crate::linalg;
use crate::loss::{loss_albedo, loss_albedo_grad, loss_sky, loss_sky_grad, LossThresholds};
use crate::net::{
    self, BnMode, BnStatsUpdate, ForwardCache, NetworkConfig, DENSITY_SCALE,
};
use crate::params::{ParamStore, Partition};
use crate::radiance::{ShadowParams, TimeCode};
use crate::real::{sigmoid, Real};

/// How per-point illumination reaches the rendered pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadingMode {
    /// Ray-level shadow mask applied to the composited color.
    ShadowMask,
    /// Per-point illumination composited before the surface sum.
    PerPoint,
}

/// A batch of image rays sharing one view (sun angle and day of year).
pub struct ImageRayBatch<F> {
    /// (rays * samples) x 3 normalized positions, ray-major.
    pub points: Array2<F>,
    /// rays x samples inter-sample distances.
    pub deltas: Array2<F>,
    /// rays x 3 target colors.
    pub gt: Array2<F>,
    /// Per-point prior density, present during phase 1.
    pub rho_h: Option<Array1<F>>,
    pub sun: [f64; 3],
    pub time: TimeCode,
}

impl<F: Real> ImageRayBatch<F> {
    pub fn rays(&self) -> usize {
        self.deltas.nrows()
    }

    pub fn samples_per_ray(&self) -> usize {
        self.deltas.ncols()
    }
}

/// A batch of solar rays sharing one sun angle.
pub struct SolarRayBatch<F> {
    pub points: Array2<F>,
    pub deltas: Array2<F>,
    /// Per-point prior density when phase 1 merges densities.
    pub rho_h: Option<Array1<F>>,
    pub sun: [f64; 3],
}

impl<F: Real> SolarRayBatch<F> {
    pub fn rays(&self) -> usize {
        self.deltas.nrows()
    }
}

/// Scalars shared by the passes.
#[derive(Debug, Clone, Copy)]
pub struct PassSettings<F> {
    pub gamma: F,
    pub thresholds: LossThresholds<F>,
    pub shadow: ShadowParams,
    pub shading: ShadingMode,
    /// Robust color model when true; plain MSE otherwise.
    pub robust_color: bool,
}

pub struct ImagePassResult<F> {
    pub loss_total: F,
    pub loss_image: F,
    pub loss_prior: F,
    pub grad: Vec<F>,
    pub bn_updates: Vec<BnStatsUpdate<F>>,
}

pub struct SolarPassResult<F> {
    pub loss: F,
    pub grad: Vec<F>,
}

struct GradSink<'a, F: Real> {
    grad: &'a mut [F],
    store: &'a ParamStore<F>,
}

impl<'a, F: Real> GradSink<'a, F> {
    fn add_matrix(&mut self, name: &str, m: &Array2<F>) {
        let range = self.store.layout().tensor(name).range();
        for (g, &v) in self.grad[range].iter_mut().zip(m.iter()) {
            *g = *g + v;
        }
    }

    fn add_vector(&mut self, name: &str, v: &Array1<F>) {
        let range = self.store.layout().tensor(name).range();
        for (g, &x) in self.grad[range].iter_mut().zip(v.iter()) {
            *g = *g + x;
        }
    }

    fn add_scalar(&mut self, name: &str, idx: usize, v: F) {
        let base = self.store.layout().tensor(name).range().start;
        self.grad[base + idx] = self.grad[base + idx] + v;
    }
}

fn weight_view<'a, F: Real>(store: &'a ParamStore<F>, name: &str) -> ndarray::ArrayView2<'a, F> {
    let spec = store.layout().tensor(name).clone();
    ndarray::ArrayView2::from_shape((spec.rows, spec.cols), store.tensor_slice(name)).unwrap()
}

/// Merged density and the transmittance profile pieces for one ray slice.
struct RayProfile<F> {
    p_surface: Vec<F>,
    /// exp(-rho_m * delta) per sample.
    trans: Vec<F>,
    /// visibility (exclusive prefix transmittance) per sample.
    p_visible: Vec<F>,
}

fn ray_profile<F: Real>(rho_m: &[F], deltas: &[F]) -> RayProfile<F> {
    let k = rho_m.len();
    let mut p_surface = Vec::with_capacity(k);
    let mut trans = Vec::with_capacity(k);
    let mut p_visible = Vec::with_capacity(k);
    let mut acc = F::zero();
    for i in 0..k {
        let vis = (-acc).exp();
        let t = (-rho_m[i] * deltas[i]).exp();
        p_visible.push(vis);
        trans.push(t);
        p_surface.push((F::one() - t) * vis);
        acc = acc + rho_m[i] * deltas[i];
    }
    RayProfile {
        p_surface,
        trans,
        p_visible,
    }
}

/// Backward through the transmittance profile: given dL/dp_surface for one
/// ray, accumulate dL/drho_merged.
fn profile_backward<F: Real>(
    profile: &RayProfile<F>,
    deltas: &[F],
    dp_surface: &[F],
    drho_m: &mut [F],
) {
    let k = deltas.len();
    let mut suffix = F::zero();
    for j in (0..k).rev() {
        // d p_j / d rho_j = delta_j * exp(-rho_j delta_j) * V_j
        let own = profile.trans[j] * profile.p_visible[j] * dp_surface[j];
        drho_m[j] = drho_m[j] + deltas[j] * (own - suffix);
        suffix = suffix + profile.p_surface[j] * dp_surface[j];
    }
}

/// Trunk backward from d features; writes weight gradients and nothing else.
/// Normalized activations are recomputed from the cached pre-norm values in
/// fused passes, so per-layer work stays allocation-free.
fn trunk_backward<F: Real>(
    store: &ParamStore<F>,
    cache: &ForwardCache<F>,
    mut dh: Array2<F>,
    sink: &mut GradSink<'_, F>,
) {
    let cfg = store.cfg.clone();
    let width = cfg.trunk_width;
    let trunk = cache.trunk.as_ref().expect("trunk cache required");
    let n = cache.pe_pos.nrows();
    for l in (0..cfg.trunk_depth).rev() {
        let z = &trunk.pre_bn[l];
        let zs = z.as_slice().unwrap();
        let omega = if l == 0 { F::c(cfg.omega0) } else { F::one() };

        if cfg.batch_norm {
            let mean = &trunk.mean[l];
            let var = &trunk.var[l];
            let gamma = store.tensor_slice(&format!("trunk.gamma{l}"));
            let beta = store.tensor_slice(&format!("trunk.beta{l}"));
            let mut inv_std = vec![F::zero(); width];
            for j in 0..width {
                inv_std[j] = F::one() / (var[j] + F::c(net::BN_EPS)).sqrt();
            }

            // pass 1: dh <- dh * cos(gamma * xhat + beta), accumulating the
            // affine parameter gradients
            let mut dgamma = vec![F::zero(); width];
            let mut dbeta = vec![F::zero(); width];
            {
                let dhs = dh.as_slice_mut().unwrap();
                for (drow, zrow) in dhs.chunks_exact_mut(width).zip(zs.chunks_exact(width)) {
                    for j in 0..width {
                        let xh = (zrow[j] - mean[j]) * inv_std[j];
                        let y = gamma[j] * xh + beta[j];
                        let dy = drow[j] * y.act_cos();
                        drow[j] = dy;
                        dgamma[j] = dgamma[j] + dy * xh;
                        dbeta[j] = dbeta[j] + dy;
                    }
                }
            }
            sink.add_vector(&format!("trunk.gamma{l}"), &Array1::from_vec(dgamma.clone()));
            sink.add_vector(&format!("trunk.beta{l}"), &Array1::from_vec(dbeta.clone()));

            // pass 2: dh <- omega * gamma * inv_std *
            //         (dy - mean(dy) - xhat * mean(dy * xhat))
            let nf = F::from_usize(n).unwrap();
            let mut mean_dy = dbeta;
            let mut mean_dy_xh = dgamma;
            let mut coef = vec![F::zero(); width];
            for j in 0..width {
                mean_dy[j] = mean_dy[j] / nf;
                mean_dy_xh[j] = mean_dy_xh[j] / nf;
                coef[j] = gamma[j] * inv_std[j] * omega;
            }
            {
                let dhs = dh.as_slice_mut().unwrap();
                for (drow, zrow) in dhs.chunks_exact_mut(width).zip(zs.chunks_exact(width)) {
                    for j in 0..width {
                        let xh = (zrow[j] - mean[j]) * inv_std[j];
                        drow[j] = coef[j] * (drow[j] - mean_dy[j] - xh * mean_dy_xh[j]);
                    }
                }
            }
        } else {
            let dhs = dh.as_slice_mut().unwrap();
            for (drow, zrow) in dhs.chunks_exact_mut(width).zip(zs.chunks_exact(width)) {
                for j in 0..width {
                    drow[j] = drow[j] * zrow[j].act_cos() * omega;
                }
            }
        }

        let input: &Array2<F> = if l == 0 {
            &cache.pe_pos
        } else {
            &trunk.hidden[l - 1]
        };
        let dw = linalg::matmul_tn(input.view(), dh.view());
        sink.add_matrix(&format!("trunk.w{l}"), &dw);
        sink.add_vector(&format!("trunk.b{l}"), &dh.sum_axis(Axis(0)));

        if l > 0 {
            let w = weight_view(store, &format!("trunk.w{l}"));
            dh = linalg::matmul(dh.view(), w.t());
        }
    }
}

/// Solar-visibility branch backward. `propagate_features` controls whether
/// the gradient flows back through the branch input into the trunk chain.
fn solar_branch_backward<F: Real>(
    store: &ParamStore<F>,
    cache: &ForwardCache<F>,
    dlogit: &Array1<F>,
    sink: &mut GradSink<'_, F>,
    propagate_features: bool,
) -> Option<Array2<F>> {
    let solar = &cache.solar;
    let dlogit2 = dlogit.view().insert_axis(Axis(1));
    let dw2 = linalg::matmul_tn(solar.h1.view(), dlogit2);
    sink.add_matrix("solar.w2", &dw2);
    sink.add_scalar("solar.b2", 0, dlogit.sum());

    let w2 = weight_view(store, "solar.w2");
    let mut dh1 = linalg::matmul(dlogit2, w2.t());
    let mut cos_z1 = Array2::zeros(solar.z1.dim());
    linalg::cos_into(solar.z1.as_slice().unwrap(), cos_z1.as_slice_mut().unwrap());
    dh1.zip_mut_with(&cos_z1, |d, &c| *d = *d * c);
    let dz1 = dh1;

    let width = store.cfg.trunk_width;
    let dw1_feat = linalg::matmul_tn(cache.features.view(), dz1.view());
    let col_sums = dz1.sum_axis(Axis(0));
    let dw1_sun: Array2<F> = {
        let mut m = Array2::zeros((solar.pe_sun.len(), col_sums.len()));
        for (j, &p) in solar.pe_sun.iter().enumerate() {
            for (h, &cs) in col_sums.iter().enumerate() {
                m[[j, h]] = p * cs;
            }
        }
        m
    };
    // solar.w1 is stored stacked: feature rows then sun rows
    {
        let spec = store.layout().tensor("solar.w1").clone();
        let range = spec.range();
        let cols = spec.cols;
        let g = &mut sink.grad[range];
        for (i, row) in dw1_feat.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                g[i * cols + j] = g[i * cols + j] + v;
            }
        }
        for (i, row) in dw1_sun.rows().into_iter().enumerate() {
            let base = (width + i) * cols;
            for (j, &v) in row.iter().enumerate() {
                g[base + j] = g[base + j] + v;
            }
        }
    }
    sink.add_vector("solar.b1", &col_sums);

    if propagate_features {
        let w1 = weight_view(store, "solar.w1");
        let (w1_feat, _) = w1.split_at(Axis(0), width);
        Some(linalg::matmul(dz1.view(), w1_feat.t()))
    } else {
        None
    }
}

fn sky_backward<F: Real>(
    store: &ParamStore<F>,
    cache: &ForwardCache<F>,
    dsky: [F; 3],
    sky: [F; 3],
    sink: &mut GradSink<'_, F>,
) {
    let sc = &cache.sky;
    let dl: Vec<F> = (0..3)
        .map(|c| dsky[c] * sky[c] * (F::one() - sky[c]))
        .collect();
    // w2: (hidden x 3)
    let mut dw2 = Array2::zeros((sc.h1.len(), 3));
    for (i, &h) in sc.h1.iter().enumerate() {
        for c in 0..3 {
            dw2[[i, c]] = h * dl[c];
        }
    }
    sink.add_matrix("sky.w2", &dw2);
    sink.add_vector("sky.b2", &Array1::from_vec(dl.clone()));

    let w2 = weight_view(store, "sky.w2");
    let mut dh1 = Array1::zeros(sc.h1.len());
    for i in 0..sc.h1.len() {
        let mut acc = F::zero();
        for c in 0..3 {
            acc = acc + w2[[i, c]] * dl[c];
        }
        dh1[i] = acc;
    }
    let dz1 = Array1::from_iter(
        dh1.iter()
            .zip(sc.z1.iter())
            .map(|(&d, &z)| d * z.act_cos()),
    );
    let mut dw1 = Array2::zeros((cache.solar.pe_sun.len(), dz1.len()));
    for (j, &p) in cache.solar.pe_sun.iter().enumerate() {
        for (h, &d) in dz1.iter().enumerate() {
            dw1[[j, h]] = p * d;
        }
    }
    sink.add_matrix("sky.w1", &dw1);
    sink.add_vector("sky.b1", &dz1);
}

fn class_backward<F: Real>(
    store: &ParamStore<F>,
    cache: &ForwardCache<F>,
    dprobs: &Array1<F>,
    sink: &mut GradSink<'_, F>,
) {
    let cc = &cache.class;
    let p = &cc.probs;
    let dot: F = dprobs.iter().zip(p.iter()).fold(F::zero(), |a, (&d, &q)| a + d * q);
    let dlogits = Array1::from_iter(p.iter().zip(dprobs.iter()).map(|(&q, &d)| q * (d - dot)));

    let mut dw2 = Array2::zeros((cc.h1.len(), dlogits.len()));
    for (i, &h) in cc.h1.iter().enumerate() {
        for (j, &d) in dlogits.iter().enumerate() {
            dw2[[i, j]] = h * d;
        }
    }
    sink.add_matrix("class.w2", &dw2);
    sink.add_vector("class.b2", &dlogits);

    let w2 = weight_view(store, "class.w2");
    let mut dh1 = Array1::zeros(cc.h1.len());
    for i in 0..cc.h1.len() {
        let mut acc = F::zero();
        for (j, &d) in dlogits.iter().enumerate() {
            acc = acc + w2[[i, j]] * d;
        }
        dh1[i] = acc;
    }
    let dz1 = Array1::from_iter(dh1.iter().zip(cc.z1.iter()).map(|(&d, &z)| d * z.act_cos()));
    let mut dw1 = Array2::zeros((2, dz1.len()));
    for (h, &d) in dz1.iter().enumerate() {
        dw1[[0, h]] = cc.enc[0] * d;
        dw1[[1, h]] = cc.enc[1] * d;
    }
    sink.add_matrix("class.w1", &dw1);
    sink.add_vector("class.b1", &dz1);
}

/// Image-ray pass: forward, loss, and gradients over all trainable state.
pub fn image_pass<F: Real>(
    store: &ParamStore<F>,
    batch: &ImageRayBatch<F>,
    settings: &PassSettings<F>,
) -> Result<ImagePassResult<F>> {
    let cfg: &NetworkConfig = &store.cfg;
    let n_rays = batch.rays();
    let k = batch.samples_per_ray();
    let n = n_rays * k;
    if batch.points.nrows() != n {
        return Err(CoreError::invalid("points do not match rays * samples"));
    }
    crate::alloc_tuning::ensure();
    let n_classes = cfg.n_season_classes;
    let (out, cache, bn_updates) = net::forward_cached(
        store,
        batch.points.view(),
        batch.sun,
        &batch.time,
        BnMode::Train,
        true,
    )?;
    let robust = store.robust_params();
    let (z_val, dz_val) = if settings.robust_color {
        (
            barron_partition(robust.alpha.f64c())?,
            barron_partition_dalpha(robust.alpha.f64c())?,
        )
    } else {
        (1.0, 0.0)
    };

    let gamma = settings.gamma;
    let one = F::one();
    let lambda_sc = settings.thresholds.lambda_sc;
    let lambda_ds = settings.thresholds.lambda_ds;
    let kappa = F::c(settings.shadow.kappa);
    let mu = F::c(settings.shadow.mu);
    let rf = F::from_usize(n_rays).unwrap();
    let cf = F::c(3.0);

    // merged density
    let rho = &out.density;
    let rho_m: Array1<F> = match (&batch.rho_h, gamma < one) {
        (Some(prior), true) => {
            Array1::from_iter(rho.iter().zip(prior.iter()).map(|(&r, &p)| gamma * r + (one - gamma) * p))
        }
        _ => rho.clone(),
    };

    // season-adjusted per-point colors
    let t_c = &cache.class.probs;
    let mut col_t_pts = Array2::<F>::zeros((n, 3));
    for i in 0..n {
        let adj = out.season_adjust.row(i);
        let alb = out.albedo_pre.row(i);
        for c in 0..3 {
            let mut shift = F::zero();
            for kk in 0..n_classes {
                shift = shift + adj[c * n_classes + kk] * t_c[kk];
            }
            col_t_pts[[i, c]] = sigmoid(alb[c] + shift);
        }
    }

    let sky = out.sky;
    let deltas_flat = batch.deltas.as_slice().unwrap();

    // per-ray compositing
    let mut profiles: Vec<RayProfile<F>> = Vec::with_capacity(n_rays);
    let mut col_t_ray = Array2::<F>::zeros((n_rays, 3));
    let mut col_sa = Array2::<F>::zeros((n_rays, 3));
    let mut masks: Vec<F> = vec![F::zero(); n_rays];
    for r in 0..n_rays {
        let s0 = r * k;
        let prof = ray_profile(&rho_m.as_slice().unwrap()[s0..s0 + k], &deltas_flat[s0..s0 + k]);
        for c in 0..3 {
            let mut acc = F::zero();
            for i in 0..k {
                acc = acc + prof.p_surface[i] * col_t_pts[[s0 + i, c]];
            }
            col_t_ray[[r, c]] = acc;
        }
        match settings.shading {
            ShadingMode::ShadowMask => {
                let mut msum = F::zero();
                for i in 0..k {
                    msum = msum + prof.p_surface[i] * out.solar_vis[s0 + i];
                }
                let m = sigmoid(kappa * (mu + msum));
                masks[r] = m;
                for c in 0..3 {
                    col_sa[[r, c]] = col_t_ray[[r, c]] * (m + (one - m) * sky[c]);
                }
            }
            ShadingMode::PerPoint => {
                for c in 0..3 {
                    let mut acc = F::zero();
                    for i in 0..k {
                        let sv = out.solar_vis[s0 + i];
                        acc = acc
                            + prof.p_surface[i] * (sv + (one - sv) * sky[c]) * col_t_pts[[s0 + i, c]];
                    }
                    col_sa[[r, c]] = acc;
                }
            }
        }
        profiles.push(prof);
    }

    // loss values
    let mut loss_color = F::zero();
    for r in 0..n_rays {
        for c in 0..3 {
            let x = batch.gt[[r, c]] - col_sa[[r, c]];
            loss_color = loss_color
                + if settings.robust_color {
                    crate::barron::barron_f(x, robust.alpha, robust.c) + (robust.c * F::c(z_val)).ln()
                } else {
                    x * x
                };
        }
    }
    loss_color = loss_color / (rf * cf);
    let mut loss_corr = F::zero();
    for r in 0..n_rays {
        let row = [col_t_ray[[r, 0]], col_t_ray[[r, 1]], col_t_ray[[r, 2]]];
        loss_corr = loss_corr + loss_albedo(&row, settings.thresholds.a_min);
    }
    loss_corr = loss_corr / rf + loss_sky(&sky, settings.thresholds.s_max);
    let loss_image = loss_color + lambda_sc * loss_corr;

    // prior approximation loss on raw density
    let mut loss_prior = F::zero();
    let mut want_prior = false;
    if let Some(prior) = &batch.rho_h {
        if lambda_ds > F::zero() && gamma < one {
            want_prior = true;
            for i in 0..n {
                let x = (-rho[i] * deltas_flat[i]).exp() - (-prior[i] * deltas_flat[i]).exp();
                loss_prior = loss_prior
                    + if settings.robust_color {
                        crate::barron::barron_f(x, robust.alpha, robust.c)
                            + (robust.c * F::c(z_val)).ln()
                    } else {
                        x * x
                    };
            }
            loss_prior = loss_prior / F::from_usize(n).unwrap();
        }
    }
    let loss_total = loss_image + if want_prior { lambda_ds * loss_prior } else { F::zero() };
    if !loss_total.is_finite() {
        return Err(CoreError::numeric(format!(
            "non-finite image-ray loss: color={} corr={} prior={}",
            loss_color.f64c(),
            loss_corr.f64c(),
            loss_prior.f64c()
        )));
    }

    // ---- backward ----
    let mut grad = vec![F::zero(); store.len()];
    let mut sink = GradSink {
        grad: &mut grad,
        store,
    };

    let mut d_col_sa = Array2::<F>::zeros((n_rays, 3));
    let mut d_alpha = F::zero();
    let mut d_c = F::zero();
    for r in 0..n_rays {
        for c in 0..3 {
            let x = batch.gt[[r, c]] - col_sa[[r, c]];
            if settings.robust_color {
                let (fx, fa, fc) = barron_f_grads(x, robust.alpha, robust.c);
                d_col_sa[[r, c]] = -fx / (rf * cf);
                d_alpha = d_alpha + fa / (rf * cf);
                d_c = d_c + fc / (rf * cf);
            } else {
                d_col_sa[[r, c]] = -F::c(2.0) * x / (rf * cf);
            }
        }
    }
    if settings.robust_color {
        // constant term ln(c Z(alpha)), once per ray mean
        d_alpha = d_alpha + F::c(dz_val / z_val);
        d_c = d_c + one / robust.c;
    }

    let mut d_col_t_ray = Array2::<F>::zeros((n_rays, 3));
    let mut d_sky = [F::zero(); 3];
    let mut d_svis: Array1<F> = Array1::zeros(n);
    let mut d_col_t_pts = Array2::<F>::zeros((n, 3));
    let mut d_rho_m: Vec<F> = vec![F::zero(); n];
    let mut d_rho: Vec<F> = vec![F::zero(); n];

    // albedo-floor correction on the composited color
    for r in 0..n_rays {
        let row = [col_t_ray[[r, 0]], col_t_ray[[r, 1]], col_t_ray[[r, 2]]];
        let g = loss_albedo_grad(&row, settings.thresholds.a_min);
        for c in 0..3 {
            d_col_t_ray[[r, c]] = lambda_sc * g[c] / rf;
        }
    }
    // sky ceiling
    {
        let g = loss_sky_grad(&sky, settings.thresholds.s_max);
        for c in 0..3 {
            d_sky[c] = lambda_sc * g[c];
        }
    }

    for r in 0..n_rays {
        let s0 = r * k;
        let prof = &profiles[r];
        let mut dp_surface = vec![F::zero(); k];
        match settings.shading {
            ShadingMode::ShadowMask => {
                let m = masks[r];
                let mut dm = F::zero();
                for c in 0..3 {
                    let d = d_col_sa[[r, c]];
                    dm = dm + d * col_t_ray[[r, c]] * (one - sky[c]);
                    d_col_t_ray[[r, c]] = d_col_t_ray[[r, c]] + d * (m + (one - m) * sky[c]);
                    d_sky[c] = d_sky[c] + d * col_t_ray[[r, c]] * (one - m);
                }
                let dmsum = dm * m * (one - m) * kappa;
                for i in 0..k {
                    d_svis[s0 + i] = d_svis[s0 + i] + dmsum * prof.p_surface[i];
                    dp_surface[i] = dp_surface[i] + dmsum * out.solar_vis[s0 + i];
                }
            }
            ShadingMode::PerPoint => {
                for c in 0..3 {
                    let d = d_col_sa[[r, c]];
                    for i in 0..k {
                        let sv = out.solar_vis[s0 + i];
                        let ct = col_t_pts[[s0 + i, c]];
                        let illum = sv + (one - sv) * sky[c];
                        dp_surface[i] = dp_surface[i] + d * illum * ct;
                        d_svis[s0 + i] =
                            d_svis[s0 + i] + d * prof.p_surface[i] * (one - sky[c]) * ct;
                        d_sky[c] = d_sky[c] + d * prof.p_surface[i] * (one - sv) * ct;
                        d_col_t_pts[[s0 + i, c]] =
                            d_col_t_pts[[s0 + i, c]] + d * prof.p_surface[i] * illum;
                    }
                }
            }
        }
        // composited season color
        for c in 0..3 {
            let d = d_col_t_ray[[r, c]];
            for i in 0..k {
                d_col_t_pts[[s0 + i, c]] = d_col_t_pts[[s0 + i, c]] + d * prof.p_surface[i];
                dp_surface[i] = dp_surface[i] + d * col_t_pts[[s0 + i, c]];
            }
        }
        profile_backward(prof, &deltas_flat[s0..s0 + k], &dp_surface, &mut d_rho_m[s0..s0 + k]);
    }

    // merged density chain and prior loss
    for i in 0..n {
        d_rho[i] = if batch.rho_h.is_some() && gamma < one {
            gamma * d_rho_m[i]
        } else {
            d_rho_m[i]
        };
    }
    if want_prior {
        let prior = batch.rho_h.as_ref().unwrap();
        let nf = F::from_usize(n).unwrap();
        for i in 0..n {
            let e_pred = (-rho[i] * deltas_flat[i]).exp();
            let x = e_pred - (-prior[i] * deltas_flat[i]).exp();
            if settings.robust_color {
                let (fx, fa, fc) = barron_f_grads(x, robust.alpha, robust.c);
                d_rho[i] = d_rho[i] + lambda_ds * fx * (-deltas_flat[i] * e_pred) / nf;
                d_alpha = d_alpha + lambda_ds * fa / nf;
                d_c = d_c + lambda_ds * fc / nf;
            } else {
                d_rho[i] =
                    d_rho[i] + lambda_ds * F::c(2.0) * x * (-deltas_flat[i] * e_pred) / nf;
            }
        }
        if settings.robust_color {
            d_alpha = d_alpha + lambda_ds * F::c(dz_val / z_val);
            d_c = d_c + lambda_ds / robust.c;
        }
    }

    // robust raw parameters
    if settings.robust_color {
        let (raw_a, raw_c) = store.robust_raw();
        let (_, da_draw) = squash_alpha(raw_a);
        let (_, dc_draw) = squash_c(raw_c);
        sink.add_scalar("robust.raw", 0, d_alpha * da_draw);
        sink.add_scalar("robust.raw", 1, d_c * dc_draw);
    }

    // season blend backward: col_t = sigmoid(albedo_pre + T_A T_C)
    let mut d_albedo = Array2::<F>::zeros((n, 3));
    let mut d_season = Array2::<F>::zeros((n, 3 * n_classes));
    let mut d_probs: Array1<F> = Array1::zeros(n_classes);
    for i in 0..n {
        for c in 0..3 {
            let ct = col_t_pts[[i, c]];
            let du = d_col_t_pts[[i, c]] * ct * (one - ct);
            d_albedo[[i, c]] = du;
            for kk in 0..n_classes {
                d_season[[i, c * n_classes + kk]] = du * t_c[kk];
                d_probs[kk] = d_probs[kk] + du * out.season_adjust[[i, c * n_classes + kk]];
            }
        }
    }
    class_backward(store, &cache, &d_probs, &mut sink);

    // density head backward: rho = softplus(z) * scale
    let d_density_z = Array1::from_iter(
        cache
            .density_z
            .iter()
            .zip(d_rho.iter())
            .map(|(&z, &dr)| dr * sigmoid(z) * F::c(DENSITY_SCALE)),
    );

    // heads into feature gradient
    let wd = weight_view(store, "density.w");
    let wa = weight_view(store, "albedo.w");
    let ws = weight_view(store, "season.w");
    let dz2 = d_density_z.view().insert_axis(Axis(1));
    sink.add_matrix("density.w", &linalg::matmul_tn(cache.features.view(), dz2));
    sink.add_scalar("density.b", 0, d_density_z.sum());
    sink.add_matrix("albedo.w", &linalg::matmul_tn(cache.features.view(), d_albedo.view()));
    sink.add_vector("albedo.b", &d_albedo.sum_axis(Axis(0)));
    sink.add_matrix("season.w", &linalg::matmul_tn(cache.features.view(), d_season.view()));
    sink.add_vector("season.b", &d_season.sum_axis(Axis(0)));

    let mut d_features = linalg::matmul(dz2, wd.t());
    d_features += &linalg::matmul(d_albedo.view(), wa.t());
    d_features += &linalg::matmul(d_season.view(), ws.t());

    // visibility branch: parameters masked later, but the chain through the
    // branch input still reaches the trunk
    let d_logit = Array1::from_iter(
        out.solar_vis
            .iter()
            .zip(d_svis.iter())
            .map(|(&s, &d)| d * s * (one - s)),
    );
    if let Some(df) = solar_branch_backward(store, &cache, &d_logit, &mut sink, true) {
        d_features += &df;
    }

    sky_backward(store, &cache, d_sky, sky, &mut sink);
    trunk_backward(store, &cache, d_features, &mut sink);

    Ok(ImagePassResult {
        loss_total,
        loss_image,
        loss_prior,
        grad,
        bn_updates,
    })
}

/// Forward-only image loss; same path as `image_pass` without gradients.
pub fn image_loss_only<F: Real>(
    store: &ParamStore<F>,
    batch: &ImageRayBatch<F>,
    settings: &PassSettings<F>,
) -> Result<F> {
    // reuse the full pass; the gradient work is wasted but this path only
    // serves oracle comparisons on small batches
    Ok(image_pass(store, batch, settings)?.loss_total)
}

/// Solar-ray pass: branch and sky gradients only; everything else is frozen
/// for this ray type.
pub fn solar_pass<F: Real>(
    store: &ParamStore<F>,
    batch: &SolarRayBatch<F>,
    settings: &PassSettings<F>,
) -> Result<SolarPassResult<F>> {
    let n_rays = batch.rays();
    let k = batch.deltas.ncols();
    let n = n_rays * k;
    if batch.points.nrows() != n {
        return Err(CoreError::invalid("points do not match rays * samples"));
    }
    crate::alloc_tuning::ensure();
    let time = crate::radiance::encode_time(0.0)?;
    let (out, cache, _) = net::forward_cached(
        store,
        batch.points.view(),
        batch.sun,
        &time,
        BnMode::Eval,
        false,
    )?;
    let one = F::one();
    let gamma = settings.gamma;

    let rho_m: Array1<F> = match (&batch.rho_h, gamma < one) {
        (Some(prior), true) => Array1::from_iter(
            out.density
                .iter()
                .zip(prior.iter())
                .map(|(&r, &p)| gamma * r + (one - gamma) * p),
        ),
        _ => out.density.clone(),
    };

    let deltas_flat = batch.deltas.as_slice().unwrap();
    // exact visibility along each solar ray (detached target)
    let mut p_vis = vec![F::zero(); n];
    for r in 0..n_rays {
        let s0 = r * k;
        let mut acc = F::zero();
        for i in 0..k {
            p_vis[s0 + i] = (-acc).exp();
            acc = acc + rho_m[s0 + i] * deltas_flat[s0 + i];
        }
    }

    let sky = out.sky;
    let nf = F::from_usize(n).unwrap();
    let mut mse = F::zero();
    for i in 0..n {
        let d = out.solar_vis[i] - p_vis[i];
        mse = mse + d * d;
    }
    mse = mse / nf;
    let loss = mse + loss_sky(&sky, settings.thresholds.s_max);
    if !loss.is_finite() {
        return Err(CoreError::numeric("non-finite solar-ray loss".to_string()));
    }

    let mut grad = vec![F::zero(); store.len()];
    let mut sink = GradSink {
        grad: &mut grad,
        store,
    };
    let d_logit = Array1::from_iter((0..n).map(|i| {
        let s = out.solar_vis[i];
        F::c(2.0) * (s - p_vis[i]) / nf * s * (one - s)
    }));
    solar_branch_backward(store, &cache, &d_logit, &mut sink, false);

    let g = loss_sky_grad(&sky, settings.thresholds.s_max);
    sky_backward(store, &cache, [g[0], g[1], g[2]], sky, &mut sink);

    Ok(SolarPassResult { loss, grad })
}

/// Spec-level gradient entry point: evaluates a loss probe and returns the
/// analytic gradient, optionally masked by a freeze set.
pub enum LossProbe<'a, F> {
    ImageRay(&'a ImageRayBatch<F>),
    SolarRay(&'a SolarRayBatch<F>),
}

pub fn gradients<F: Real>(
    store: &ParamStore<F>,
    probe: &LossProbe<'_, F>,
    settings: &PassSettings<F>,
    freeze: Option<&[Partition]>,
) -> Result<(F, Vec<F>)> {
    let (loss, mut grad) = match probe {
        LossProbe::ImageRay(batch) => {
            let r = image_pass(store, batch, settings)?;
            (r.loss_total, r.grad)
        }
        LossProbe::SolarRay(batch) => {
            let r = solar_pass(store, batch, settings)?;
            (r.loss, r.grad)
        }
    };
    if let Some(frozen) = freeze {
        store.mask_partitions(&mut grad, frozen);
    }
    Ok((loss, grad))
}
