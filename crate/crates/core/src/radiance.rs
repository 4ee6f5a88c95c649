//! Closed-form rendering math: transmittance compositing, seasonal albedo
//! adjustment, shadow masking, and the input encodings. No learned state;
//! every function here is pure.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{CoreError, Result};
use crate::real::{sigmoid, Real};

/// Ordered sample points along one ray, with inter-sample distances.
///
/// `deltas[i]` is the distance from `positions[i]` to `positions[i+1]`; the
/// last delta duplicates the previous one since the final gap is undefined.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub positions: Vec<[f64; 3]>,
    pub deltas: Vec<f64>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Per-sample existence / visibility / surface probabilities along a ray.
#[derive(Debug, Clone)]
pub struct TransmittanceProfile<F> {
    pub p_exist: Vec<F>,
    pub p_visible: Vec<F>,
    pub p_surface: Vec<F>,
}

impl<F: Real> TransmittanceProfile<F> {
    pub fn len(&self) -> usize {
        self.p_surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_surface.is_empty()
    }

    pub fn surface_sum(&self) -> F {
        self.p_surface.iter().fold(F::zero(), |a, &b| a + b)
    }
}

/// Day-of-year input mapped onto the unit circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeCode {
    pub day_fraction: f64,
    pub encoding: [f64; 2],
}

/// Shadow-mask transition shape: `kappa` sets rapidity, `mu` the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowParams {
    pub kappa: f64,
    pub mu: f64,
}

impl ShadowParams {
    pub fn new(kappa: f64, mu: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() || !mu.is_finite() {
            return Err(CoreError::invalid(format!(
                "shadow params require kappa > 0 and finite mu, got kappa={kappa}, mu={mu}"
            )));
        }
        Ok(ShadowParams { kappa, mu })
    }
}

impl Default for ShadowParams {
    fn default() -> Self {
        ShadowParams {
            kappa: 30.0,
            mu: -0.2,
        }
    }
}

/// Season mixing state: a probability vector over season classes plus the
/// per-point color adjustment matrix (one column per class).
#[derive(Debug, Clone)]
pub struct SeasonBlend<F> {
    class_probs: Array1<F>,
    adjustment: Array2<F>,
}

impl<F: Real> SeasonBlend<F> {
    pub fn new(class_probs: Array1<F>, adjustment: Array2<F>) -> Result<Self> {
        let n = class_probs.len();
        if n == 0 {
            return Err(CoreError::invalid("season blend needs at least one class"));
        }
        if adjustment.ncols() != n {
            return Err(CoreError::invalid(format!(
                "adjustment has {} columns but there are {} class probabilities",
                adjustment.ncols(),
                n
            )));
        }
        let mut sum = F::zero();
        for &p in class_probs.iter() {
            if p < F::zero() {
                return Err(CoreError::invalid("class probabilities must be >= 0"));
            }
            sum = sum + p;
        }
        if (sum - F::one()).abs() > F::c(1e-6) {
            return Err(CoreError::invalid(format!(
                "class probabilities sum to {}, expected 1",
                sum.f64c()
            )));
        }
        Ok(SeasonBlend {
            class_probs,
            adjustment,
        })
    }

    pub fn class_probs(&self) -> &Array1<F> {
        &self.class_probs
    }

    pub fn adjustment(&self) -> &Array2<F> {
        &self.adjustment
    }

    pub fn n_classes(&self) -> usize {
        self.class_probs.len()
    }
}

/// Maps a day fraction onto (cos 2*pi*t, sin 2*pi*t). Inputs outside [0,1)
/// wrap; the encoding is periodic anyway.
pub fn encode_time(day_fraction: f64) -> Result<TimeCode> {
    if !day_fraction.is_finite() {
        return Err(CoreError::invalid(format!(
            "day fraction must be finite, got {day_fraction}"
        )));
    }
    let t = day_fraction.rem_euclid(1.0);
    let angle = 2.0 * std::f64::consts::PI * t;
    Ok(TimeCode {
        day_fraction: t,
        encoding: [angle.cos(), angle.sin()],
    })
}

/// Sinusoidal positional encoding: (sin 2^k pi v_j, cos 2^k pi v_j) for
/// k = 0..levels, per component. Components outside [-1,1] are clamped with
/// a logged warning; non-finite components clamp to zero.
pub fn positional_encode<F: Real>(v: &[F], levels: usize) -> Vec<F> {
    assert!(levels > 0, "positional encoding needs at least one level");
    let mut out = Vec::with_capacity(v.len() * 2 * levels);
    for &raw in v {
        let x = if !raw.is_finite() {
            log::warn!("positional_encode: non-finite input component, using 0");
            F::zero()
        } else if raw < -F::one() || raw > F::one() {
            log::warn!(
                "positional_encode: input {} outside [-1,1], clamping",
                raw.f64c()
            );
            raw.max(-F::one()).min(F::one())
        } else {
            raw
        };
        let mut freq = F::c(std::f64::consts::PI);
        for _ in 0..levels {
            let arg = freq * x;
            out.push(arg.act_sin());
            out.push(arg.act_cos());
            freq = freq + freq;
        }
    }
    out
}

/// Existence / visibility / surface probabilities from densities and
/// inter-sample distances.
pub fn transmittance_profile<F: Real>(densities: &[F], deltas: &[F]) -> Result<TransmittanceProfile<F>> {
    if densities.len() != deltas.len() {
        return Err(CoreError::invalid(format!(
            "densities ({}) and deltas ({}) must have equal length",
            densities.len(),
            deltas.len()
        )));
    }
    let n = densities.len();
    let mut p_exist = Vec::with_capacity(n);
    let mut p_visible = Vec::with_capacity(n);
    let mut p_surface = Vec::with_capacity(n);
    let mut acc = F::zero();
    for i in 0..n {
        let rho = densities[i];
        let delta = deltas[i];
        if !(rho >= F::zero()) || !rho.is_finite() {
            return Err(CoreError::invalid(format!(
                "density[{i}] = {} must be finite and >= 0",
                rho.f64c()
            )));
        }
        if !(delta > F::zero()) || !delta.is_finite() {
            return Err(CoreError::invalid(format!(
                "delta[{i}] = {} must be finite and > 0",
                delta.f64c()
            )));
        }
        let vis = (-acc).exp();
        let exist = -(-rho * delta).exp_m1();
        p_exist.push(exist);
        p_visible.push(vis);
        p_surface.push(exist * vis);
        acc = acc + rho * delta;
    }
    Ok(TransmittanceProfile {
        p_exist,
        p_visible,
        p_surface,
    })
}

/// Surface-probability-weighted sum of per-sample values. An empty ray (or
/// all-zero profile) composites to zero; there is no background term.
pub fn composite<F: Real>(values: ArrayView2<'_, F>, profile: &TransmittanceProfile<F>) -> Result<Array1<F>> {
    if values.nrows() != profile.len() {
        return Err(CoreError::invalid(format!(
            "values rows ({}) must match profile length ({})",
            values.nrows(),
            profile.len()
        )));
    }
    let mut out = Array1::zeros(values.ncols());
    for (row, &w) in values.rows().into_iter().zip(profile.p_surface.iter()) {
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o = *o + v * w;
        }
    }
    Ok(out)
}

/// Season-adjusted albedo: sigmoid(a_star + adjustment * class_probs).
pub fn seasonal_albedo<F: Real>(a_star: &[F], blend: &SeasonBlend<F>) -> Result<Vec<F>> {
    if a_star.len() != blend.adjustment.nrows() {
        return Err(CoreError::invalid(format!(
            "a_star has {} channels but adjustment has {} rows",
            a_star.len(),
            blend.adjustment.nrows()
        )));
    }
    let shift = blend.adjustment.dot(&blend.class_probs);
    Ok(a_star
        .iter()
        .zip(shift.iter())
        .map(|(&a, &s)| sigmoid(a + s))
        .collect())
}

/// Probability the surface of this ray sees the sun:
/// sigmoid(kappa * (mu + sum p_surface * s_vis)).
pub fn shadow_mask<F: Real>(
    profile: &TransmittanceProfile<F>,
    s_vis: &[F],
    params: &ShadowParams,
) -> Result<F> {
    if s_vis.len() != profile.len() {
        return Err(CoreError::invalid(format!(
            "s_vis length ({}) must match profile length ({})",
            s_vis.len(),
            profile.len()
        )));
    }
    let mut acc = F::zero();
    for (&w, &v) in profile.p_surface.iter().zip(s_vis) {
        acc = acc + w * v;
    }
    Ok(sigmoid(F::c(params.kappa) * (F::c(params.mu) + acc)))
}

/// Shadow-and-season adjusted color: col_t * (mask + (1 - mask) * sky).
pub fn shade_shadow<F: Real>(col_t: &[F], mask: F, sky: &[F]) -> Vec<F> {
    col_t
        .iter()
        .zip(sky)
        .map(|(&c, &s)| c * (mask + (F::one() - mask) * s))
        .collect()
}

/// Per-point shading used by the ablation that composits illumination before
/// the surface sum: (s_vis + (1 - s_vis) * sky) * albedo.
pub fn snerf_point_color<F: Real>(albedo: &[F], s_vis: F, sky: &[F]) -> Vec<F> {
    albedo
        .iter()
        .zip(sky)
        .map(|(&a, &s)| (s_vis + (F::one() - s_vis) * s) * a)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn encode_time_axis_points() {
        let t0 = encode_time(0.0).unwrap();
        assert!((t0.encoding[0] - 1.0).abs() <= TOL);
        assert!(t0.encoding[1].abs() <= TOL);
        let tq = encode_time(0.25).unwrap();
        assert!(tq.encoding[0].abs() <= TOL);
        assert!((tq.encoding[1] - 1.0).abs() <= TOL);
    }

    #[test]
    fn encode_time_opposite_days_are_diameter_apart() {
        let a = encode_time(0.13).unwrap();
        let b = encode_time(0.63).unwrap();
        let d = ((a.encoding[0] - b.encoding[0]).powi(2) + (a.encoding[1] - b.encoding[1]).powi(2)).sqrt();
        assert!((d - 2.0).abs() <= TOL);
    }

    #[test]
    fn encode_time_rejects_non_finite() {
        assert!(encode_time(f64::NAN).is_err());
        assert!(encode_time(f64::INFINITY).is_err());
    }

    #[test]
    fn encode_time_distance_law_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(0.0..1.0);
            let d: f64 = rng.gen_range(-1.0..1.0);
            let a = encode_time(t).unwrap();
            let b = encode_time(t + d).unwrap();
            let dist = ((a.encoding[0] - b.encoding[0]).powi(2)
                + (a.encoding[1] - b.encoding[1]).powi(2))
            .sqrt();
            let expect = 2.0 * (std::f64::consts::PI * d).sin().abs();
            assert!(
                (dist - expect).abs() <= 1e-12,
                "t={t} d={d}: {dist} vs {expect}"
            );
        }
    }

    #[test]
    fn positional_encode_examples() {
        let e = positional_encode(&[0.0f64], 1);
        assert!((e[0]).abs() <= TOL && (e[1] - 1.0).abs() <= TOL);

        let e = positional_encode(&[0.5f64], 1);
        assert!((e[0] - 1.0).abs() <= TOL && e[1].abs() <= TOL);

        let e = positional_encode(&[0.0f64, 0.0], 2);
        let expect = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(e.len(), 8);
        for (got, want) in e.iter().zip(expect) {
            assert!((got - want).abs() <= TOL);
        }
    }

    #[test]
    fn positional_encode_clamps_out_of_range() {
        let inside = positional_encode(&[1.0f64], 3);
        let outside = positional_encode(&[1.7f64], 3);
        assert_eq!(inside, outside);
    }

    #[test]
    fn transmittance_examples() {
        let p = transmittance_profile(&[0.0f64], &[1.0]).unwrap();
        assert!(p.p_exist[0].abs() <= TOL);
        assert!((p.p_visible[0] - 1.0).abs() <= TOL);
        assert!(p.p_surface[0].abs() <= TOL);

        let ln2 = std::f64::consts::LN_2;
        let p = transmittance_profile(&[ln2], &[1.0]).unwrap();
        assert!((p.p_exist[0] - 0.5).abs() <= TOL);
        assert!((p.p_visible[0] - 1.0).abs() <= TOL);
        assert!((p.p_surface[0] - 0.5).abs() <= TOL);

        let p = transmittance_profile(&[ln2, ln2], &[1.0, 1.0]).unwrap();
        assert!((p.p_surface[0] - 0.5).abs() <= TOL);
        assert!((p.p_surface[1] - 0.25).abs() <= TOL);
    }

    #[test]
    fn transmittance_rejects_negative_density() {
        assert!(transmittance_profile(&[-0.1f64], &[1.0]).is_err());
        assert!(transmittance_profile(&[f64::NAN], &[1.0]).is_err());
        assert!(transmittance_profile(&[1.0f64], &[0.0]).is_err());
        assert!(transmittance_profile(&[1.0f64], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn composite_examples() {
        let profile: TransmittanceProfile<f64> = TransmittanceProfile {
            p_exist: vec![1.0, 0.0],
            p_visible: vec![1.0, 0.0],
            p_surface: vec![1.0, 0.0],
        };
        let vals = array![[0.3], [0.9]];
        let out = composite(vals.view(), &profile).unwrap();
        assert!((out[0] - 0.3).abs() <= TOL);

        let empty: TransmittanceProfile<f64> = TransmittanceProfile {
            p_exist: vec![0.0, 0.0],
            p_visible: vec![1.0, 1.0],
            p_surface: vec![0.0, 0.0],
        };
        let out = composite(array![[0.7], [0.2]].view(), &empty).unwrap();
        assert!(out[0].abs() <= TOL);

        let prof: TransmittanceProfile<f64> = TransmittanceProfile {
            p_exist: vec![0.5, 0.5],
            p_visible: vec![1.0, 0.5],
            p_surface: vec![0.5, 0.25],
        };
        let out = composite(array![[1.0], [1.0]].view(), &prof).unwrap();
        assert!((out[0] - 0.75).abs() <= TOL);
    }

    #[test]
    fn composite_rejects_mismatch() {
        let prof = TransmittanceProfile {
            p_exist: vec![0.0],
            p_visible: vec![1.0],
            p_surface: vec![0.0],
        };
        assert!(composite(array![[1.0], [2.0]].view(), &prof).is_err());
    }

    #[test]
    fn seasonal_albedo_examples() {
        // no adjustment
        let blend: SeasonBlend<f64> = SeasonBlend::new(array![0.5, 0.5], Array2::zeros((3, 2))).unwrap();
        let out = seasonal_albedo(&[0.2, -0.4, 1.3], &blend).unwrap();
        for (o, a) in out.iter().zip([0.2f64, -0.4, 1.3]) {
            assert!((o - 1.0 / (1.0 + (-a).exp())).abs() <= TOL);
        }

        // one-hot picks a single column
        let ta = array![[2.0, -1.0], [0.0, 3.0], [1.0, 0.5]];
        let hot = SeasonBlend::new(array![0.0, 1.0], ta.clone()).unwrap();
        let out = seasonal_albedo(&[0.0, 0.0, 0.0], &hot).unwrap();
        for (o, col) in out.iter().zip([-1.0f64, 3.0, 0.5]) {
            assert!((o - 1.0 / (1.0 + (-col).exp())).abs() <= TOL);
        }

        // 50/50 blend of two columns
        let ta = array![[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
        let blend: SeasonBlend<f64> = SeasonBlend::new(array![0.5, 0.5], ta).unwrap();
        let out = seasonal_albedo(&[0.0, 0.0, 0.0], &blend).unwrap();
        assert!((out[0] - 0.7310585786300049).abs() <= TOL);
        assert!((out[1] - 0.7310585786300049).abs() <= TOL);
        assert!((out[2] - 0.5).abs() <= TOL);
    }

    #[test]
    fn shadow_mask_examples() {
        let params = ShadowParams::default();
        // build profiles with the required weighted sums
        let full: TransmittanceProfile<f64> = TransmittanceProfile {
            p_exist: vec![1.0],
            p_visible: vec![1.0],
            p_surface: vec![1.0],
        };
        let m = shadow_mask(&full, &[1.0], &params).unwrap();
        // sigma(24)
        assert!((m - 0.9999999999622487).abs() <= TOL);

        let m = shadow_mask(&full, &[0.0], &params).unwrap();
        // sigma(-6)
        assert!((m - 0.0024726231566347743).abs() <= TOL);

        let m = shadow_mask(&full, &[0.2], &params).unwrap();
        assert!((m - 0.5).abs() <= TOL);
    }

    #[test]
    fn shade_shadow_examples() {
        let col = [0.8, 0.8, 0.8];
        let sky = [0.4, 0.4, 0.4];
        let lit = shade_shadow::<f64>(&col, 1.0, &sky);
        for (g, w) in lit.iter().zip(col) {
            assert!((g - w).abs() <= TOL);
        }
        let dark = shade_shadow::<f64>(&col, 0.0, &sky);
        for (g, w) in dark.iter().zip(col) {
            assert!((g - 0.4 * w).abs() <= TOL);
        }
        let half = shade_shadow::<f64>(&col, 0.5, &[0.5, 0.5, 0.5]);
        for g in half {
            assert!((g - 0.6).abs() <= TOL);
        }
    }

    #[test]
    fn snerf_point_color_examples() {
        let albedo = [0.3, 0.6, 0.9];
        let out = snerf_point_color::<f64>(&albedo, 1.0, &[0.1, 0.1, 0.1]);
        for (g, w) in out.iter().zip(albedo) {
            assert!((g - w).abs() <= TOL);
        }
        let out = snerf_point_color::<f64>(&albedo, 0.0, &[1.0, 1.0, 1.0]);
        for (g, w) in out.iter().zip(albedo) {
            assert!((g - w).abs() <= TOL);
        }
        let out = snerf_point_color::<f64>(&[1.0, 1.0, 1.0], 0.5, &[0.0, 0.0, 0.0]);
        for g in out {
            assert!((g - 0.5).abs() <= TOL);
        }
    }

    proptest! {
        #[test]
        fn transmittance_invariants(
            rho in proptest::collection::vec(0.0f64..5.0, 1..40),
            deltas in proptest::collection::vec(1e-3f64..0.5, 1..40),
        ) {
            let n = rho.len().min(deltas.len());
            let rho = &rho[..n];
            let deltas = &deltas[..n];
            let p = transmittance_profile(rho, deltas).unwrap();
            for i in 1..n {
                prop_assert!(p.p_visible[i] <= p.p_visible[i - 1] + 1e-15);
            }
            for i in 0..n {
                prop_assert!((p.p_surface[i] - p.p_exist[i] * p.p_visible[i]).abs() <= 1e-15);
            }
            let total: f64 = rho.iter().zip(deltas).map(|(r, d)| r * d).sum();
            let closed = 1.0 - (-total).exp();
            prop_assert!((p.surface_sum() - closed).abs() <= 1e-12);
            prop_assert!(p.surface_sum() <= 1.0 + 1e-6);
        }

        #[test]
        fn composite_is_linear_and_bounded(
            rho in proptest::collection::vec(0.0f64..5.0, 4..20),
            vals in proptest::collection::vec(-1.0f64..1.0, 4..20),
            scale in 0.1f64..3.0,
        ) {
            let n = rho.len().min(vals.len());
            let deltas = vec![0.1f64; n];
            let p = transmittance_profile(&rho[..n], &deltas).unwrap();
            let m = Array2::from_shape_vec((n, 1), vals[..n].to_vec()).unwrap();
            let base = composite(m.view(), &p).unwrap()[0];
            let scaled = composite((&m * scale).view(), &p).unwrap()[0];
            prop_assert!((scaled - scale * base).abs() <= 1e-9 * (1.0 + base.abs() * scale));
            let maxabs = vals[..n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(base.abs() <= maxabs + 1e-12);
        }

        #[test]
        fn shadow_mask_monotone_in_svis(
            weights in proptest::collection::vec(0.0f64..0.2, 2..10),
            svis in proptest::collection::vec(0.0f64..1.0, 2..10),
            bump_idx in 0usize..10,
        ) {
            let n = weights.len().min(svis.len());
            let prof = TransmittanceProfile {
                p_exist: weights[..n].to_vec(),
                p_visible: vec![1.0; n],
                p_surface: weights[..n].to_vec(),
            };
            let params = ShadowParams::default();
            let base = shadow_mask(&prof, &svis[..n], &params).unwrap();
            let mut bumped = svis[..n].to_vec();
            let i = bump_idx % n;
            bumped[i] = (bumped[i] + 0.3).min(1.0);
            let after = shadow_mask(&prof, &bumped, &params).unwrap();
            prop_assert!(after >= base - 1e-15);
        }

        #[test]
        fn shade_shadow_never_brightens(
            col in proptest::collection::vec(0.0f64..1.0, 3..4),
            sky in proptest::collection::vec(0.0f64..1.0, 3..4),
            mask in 0.0f64..1.0,
        ) {
            let out = shade_shadow(&col, mask, &sky);
            for (o, c) in out.iter().zip(&col) {
                prop_assert!(*o <= c + 1e-15);
            }
        }

        #[test]
        fn seasonal_albedo_strictly_inside_unit_interval(
            a in proptest::collection::vec(-20.0f64..20.0, 3..4),
            probs_raw in proptest::collection::vec(0.01f64..1.0, 4..5),
            adj in proptest::collection::vec(-10.0f64..10.0, 12..13),
        ) {
            let total: f64 = probs_raw.iter().sum();
            let probs: Vec<f64> = probs_raw.iter().map(|p| p / total).collect();
            let blend = SeasonBlend::new(
                Array1::from_vec(probs),
                Array2::from_shape_vec((3, 4), adj).unwrap(),
            )
            .unwrap();
            let out = seasonal_albedo(&a, &blend).unwrap();
            for o in out {
                prop_assert!(o > 0.0 && o < 1.0);
            }
        }
    }
}
