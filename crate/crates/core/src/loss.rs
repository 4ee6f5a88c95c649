//! Training objectives: the robust color term plus the albedo floor, sky
//! ceiling, solar-consistency, and prior-approximation penalties.

use crate::barron::{barron_loss, RobustLossParams};
use crate::error::{CoreError, Result};
use crate::real::Real;

/// Loss-shaping thresholds and weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossThresholds<F> {
    /// Minimum brightness some channel of the season-adjusted color should
    /// reach before the albedo penalty engages.
    pub a_min: F,
    /// Sky channels above this value are penalized.
    pub s_max: F,
    /// Weight on the albedo + sky correction terms inside the image-ray loss.
    pub lambda_sc: F,
    /// Weight on the prior-approximation term during phase 1.
    pub lambda_ds: F,
}

impl<F: Real> LossThresholds<F> {
    pub fn new(a_min: F, c_s_max: F, lambda_sc: F, lambda_ds: F) -> Result<Self> {
        if !(a_min > F::zero() && a_min <= F::one()) {
            return Err(CoreError::invalid("a_min must lie in (0,1]"));
        }
        if !(c_s_max > F::zero() && c_s_max <= F::one()) {
            return Err(CoreError::invalid("s_max must lie in (0,1]"));
        }
        if lambda_sc < F::zero() || lambda_ds < F::zero() {
            return Err(CoreError::invalid("loss weights must be >= 0"));
        }
        Ok(LossThresholds {
            a_min,
            s_max: c_s_max,
            lambda_sc,
            lambda_ds,
        })
    }
}

impl<F: Real> Default for LossThresholds<F> {
    fn default() -> Self {
        LossThresholds {
            a_min: F::c(0.2),
            s_max: F::c(0.5),
            lambda_sc: F::c(0.03),
            lambda_ds: F::c(1.0),
        }
    }
}

/// Color-residual error model: the robust negative log-likelihood, or plain
/// MSE for the ablation that strips it out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorErrorModel<F> {
    Robust(RobustLossParams<F>),
    Mse,
}

/// Penalty pushing at least one channel of the season-adjusted color above
/// `a_min`: mean over channels of (1 - min(col, a_min)/a_min)^2.
pub fn loss_albedo<F: Real>(col_t: &[F], a_min: F) -> F {
    let n = F::from_usize(col_t.len()).unwrap();
    let mut acc = F::zero();
    for &c in col_t {
        let term = F::one() - c.min(a_min) / a_min;
        acc = acc + term * term;
    }
    acc / n
}

/// d loss_albedo / d col per channel.
pub fn loss_albedo_grad<F: Real>(col_t: &[F], a_min: F) -> Vec<F> {
    let n = F::from_usize(col_t.len()).unwrap();
    col_t
        .iter()
        .map(|&c| {
            if c < a_min {
                -F::c(2.0) * (F::one() - c / a_min) / (a_min * n)
            } else {
                F::zero()
            }
        })
        .collect()
}

/// Penalty on bright sky channels: sum over channels of (sky/s_max - 1)^2
/// where sky exceeds s_max, zero otherwise.
pub fn loss_sky<F: Real>(sky: &[F], s_max: F) -> F {
    let mut acc = F::zero();
    for &s in sky {
        if s > s_max {
            let term = s / s_max - F::one();
            acc = acc + term * term;
        }
    }
    acc
}

/// d loss_sky / d sky per channel.
pub fn loss_sky_grad<F: Real>(sky: &[F], s_max: F) -> Vec<F> {
    sky.iter()
        .map(|&s| {
            if s > s_max {
                F::c(2.0) * (s / s_max - F::one()) / s_max
            } else {
                F::zero()
            }
        })
        .collect()
}

/// Mean color error over channels under the selected error model.
pub fn color_error<F: Real>(gt: &[F], rendered: &[F], model: &ColorErrorModel<F>) -> Result<F> {
    let n = F::from_usize(gt.len()).unwrap();
    let mut acc = F::zero();
    for (&g, &r) in gt.iter().zip(rendered) {
        let x = g - r;
        acc = acc
            + match model {
                ColorErrorModel::Robust(p) => barron_loss(x, p)?,
                ColorErrorModel::Mse => x * x,
            };
    }
    Ok(acc / n)
}

/// Total image-ray objective: color error on the shadow-and-season adjusted
/// render, plus weighted albedo and sky corrections.
pub fn loss_image_ray<F: Real>(
    gt_color: &[F],
    col_sa: &[F],
    col_t: &[F],
    sky: &[F],
    model: &ColorErrorModel<F>,
    thresholds: &LossThresholds<F>,
) -> Result<F> {
    let err = color_error(gt_color, col_sa, model)?;
    let correction = loss_albedo(col_t, thresholds.a_min) + loss_sky(sky, thresholds.s_max);
    Ok(err + thresholds.lambda_sc * correction)
}

/// Total solar-ray objective: sky penalty plus mean squared mismatch between
/// predicted visibility and the exact visibility along the ray. The exact
/// values act as a detached target.
pub fn loss_solar_ray<F: Real>(
    s_vis: &[F],
    p_visible_exact: &[F],
    sky: &[F],
    thresholds: &LossThresholds<F>,
) -> Result<F> {
    if s_vis.len() != p_visible_exact.len() {
        return Err(CoreError::invalid(format!(
            "s_vis length ({}) must match exact visibility length ({})",
            s_vis.len(),
            p_visible_exact.len()
        )));
    }
    let k = F::from_usize(s_vis.len()).unwrap();
    let mut acc = F::zero();
    for (&s, &p) in s_vis.iter().zip(p_visible_exact) {
        let d = s - p;
        acc = acc + d * d;
    }
    Ok(loss_sky(sky, thresholds.s_max) + acc / k)
}

/// Prior-approximation term comparing per-sample opacity against the
/// height-prior opacity through the robust loss.
pub fn loss_prior<F: Real>(
    rho: F,
    rho_h: F,
    delta: F,
    model: &ColorErrorModel<F>,
) -> Result<F> {
    if rho < F::zero() || rho_h < F::zero() {
        return Err(CoreError::invalid("densities must be >= 0"));
    }
    let x = (-rho * delta).exp() - (-rho_h * delta).exp();
    match model {
        ColorErrorModel::Robust(p) => barron_loss(x, p),
        ColorErrorModel::Mse => Ok(x * x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barron::barron_partition;

    const TOL: f64 = 1e-9;

    fn thresholds() -> LossThresholds<f64> {
        LossThresholds::default()
    }

    #[test]
    fn albedo_examples() {
        assert!(loss_albedo(&[0.5f64, 0.5, 0.5], 0.2).abs() <= TOL);
        assert!((loss_albedo(&[0.0f64, 0.0, 0.0], 0.2) - 1.0).abs() <= TOL);
        let v = loss_albedo(&[0.1f64, 0.0, 0.3], 0.2);
        assert!((v - (0.25 + 1.0) / 3.0).abs() <= TOL);
    }

    #[test]
    fn sky_examples() {
        assert!(loss_sky(&[0.5f64, 0.5, 0.5], 0.5).abs() <= TOL);
        assert!((loss_sky(&[1.0f64, 0.5, 0.5], 0.5) - 1.0).abs() <= TOL);
        assert!((loss_sky(&[0.75f64, 0.25, 0.5], 0.5) - 0.25).abs() <= TOL);
    }

    #[test]
    fn albedo_and_sky_grads_match_finite_differences() {
        let h = 1e-7;
        let col = [0.12f64, 0.5, 0.19];
        let g = loss_albedo_grad(&col, 0.2);
        for i in 0..3 {
            let mut hi = col;
            let mut lo = col;
            hi[i] += h;
            lo[i] -= h;
            let num = (loss_albedo(&hi, 0.2) - loss_albedo(&lo, 0.2)) / (2.0 * h);
            assert!((g[i] - num).abs() <= 1e-5, "{} vs {}", g[i], num);
        }
        let sky = [0.7f64, 0.4, 0.55];
        let g = loss_sky_grad(&sky, 0.5);
        for i in 0..3 {
            let mut hi = sky;
            let mut lo = sky;
            hi[i] += h;
            lo[i] -= h;
            let num = (loss_sky(&hi, 0.5) - loss_sky(&lo, 0.5)) / (2.0 * h);
            assert!((g[i] - num).abs() <= 1e-5);
        }
    }

    #[test]
    fn image_ray_perfect_prediction_leaves_constant() {
        let params = RobustLossParams::new(1.0f64, 0.5).unwrap();
        let color = [0.4, 0.5, 0.6];
        let sky = [0.3, 0.3, 0.3];
        let l = loss_image_ray(
            &color,
            &color,
            &[0.4, 0.5, 0.6],
            &sky,
            &ColorErrorModel::Robust(params),
            &thresholds(),
        )
        .unwrap();
        let z = barron_partition(1.0).unwrap();
        assert!((l - (0.5 * z).ln()).abs() <= TOL);
    }

    #[test]
    fn image_ray_components_are_additive() {
        let params = RobustLossParams::new(0.9f64, 0.3).unwrap();
        let model = ColorErrorModel::Robust(params);
        let th = thresholds();
        let gt = [0.8, 0.2, 0.1];
        let col_sa = [0.5, 0.25, 0.3];
        let col_t = [0.15, 0.1, 0.05];
        let sky = [0.8, 0.2, 0.6];
        let total = loss_image_ray(&gt, &col_sa, &col_t, &sky, &model, &th).unwrap();
        let parts = color_error(&gt, &col_sa, &model).unwrap()
            + th.lambda_sc * (loss_albedo(&col_t, th.a_min) + loss_sky(&sky, th.s_max));
        assert!((total - parts).abs() <= TOL);
    }

    #[test]
    fn solar_ray_examples() {
        let th = thresholds();
        let sky_ok = [0.2, 0.2, 0.2];
        let l = loss_solar_ray(&[0.7f64, 0.3], &[0.7, 0.3], &sky_ok, &th).unwrap();
        assert!(l.abs() <= TOL);

        let l = loss_solar_ray(&[1.0f64, 1.0], &[0.0, 0.0], &sky_ok, &th).unwrap();
        assert!((l - 1.0).abs() <= TOL);

        let l = loss_solar_ray(&[0.5f64, 0.5], &[1.0, 0.0], &sky_ok, &th).unwrap();
        assert!((l - 0.25).abs() <= TOL);

        assert!(loss_solar_ray(&[0.5f64], &[1.0, 0.0], &sky_ok, &th).is_err());
    }

    #[test]
    fn prior_examples() {
        let params = RobustLossParams::new(1.0f64, 0.5).unwrap();
        let model = ColorErrorModel::Robust(params);
        // equal densities leave only the constant
        let l = loss_prior(3.0, 3.0, 0.05, &model).unwrap();
        let z = barron_partition(1.0).unwrap();
        assert!((l - (0.5 * z).ln()).abs() <= TOL);

        // empty prediction against a saturated prior
        let delta = 0.05;
        let l = loss_prior(0.0, 10.0 / delta, delta, &model).unwrap();
        let expect = barron_loss(1.0 - (-10.0f64).exp(), &params).unwrap();
        assert!((l - expect).abs() <= TOL);

        // the residual is always within [-1, 1]
        for &(rho, rho_h) in &[(0.0f64, 1e6), (1e6, 0.0), (2.0, 5.0)] {
            let x = (-rho * 0.1f64).exp() - (-rho_h * 0.1f64).exp();
            assert!(x.abs() <= 1.0 + TOL);
        }
    }

    #[test]
    fn mse_model_drops_the_constant() {
        let l = color_error(&[0.5f64], &[0.1], &ColorErrorModel::Mse).unwrap();
        assert!((l - 0.16).abs() <= TOL);
    }
}
