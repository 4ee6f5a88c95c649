//! General robust loss with learnable shape `alpha` and scale `c`, plus the
//! partition function that turns it into a negative log-likelihood.
//!
//! The partition integral Z(alpha) is computed once by adaptive quadrature on
//! a knot grid over [0,2] (endpoints use the closed-form limits pi*sqrt(2)
//! and sqrt(2*pi)) and evaluated through a monotone cubic interpolant so the
//! loss stays differentiable in alpha.

use std::sync::OnceLock;

use crate::error::{CoreError, Result};
use crate::real::{sigmoid, Real};

/// Limit of Z as alpha -> 0 (Cauchy): integral of (x^2/2 + 1)^-1.
pub const Z_AT_ZERO: f64 = 4.442882938158366;
/// Limit of Z as alpha -> 2 (Gaussian): sqrt(2*pi).
pub const Z_AT_TWO: f64 = 2.5066282746310002;

/// Within this distance of the alpha endpoints the closed-form limit value
/// is returned directly; the true slope log-diverges there and quadrature
/// adds nothing at that scale.
const SNAP: f64 = 1e-8;

const KNOTS: usize = 2049;

/// Lower margin keeping the squashed parameters strictly inside their open
/// ranges even when the raw value saturates in f32.
const ALPHA_MARGIN: f64 = 1e-4;
const C_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLossParams<F> {
    pub alpha: F,
    pub c: F,
}

impl<F: Real> RobustLossParams<F> {
    pub fn new(alpha: F, c: F) -> Result<Self> {
        let a = alpha.f64c();
        let cc = c.f64c();
        if !(a > 0.0 && a < 2.0) {
            return Err(CoreError::invalid(format!("alpha must lie in (0,2), got {a}")));
        }
        if !(cc > 0.0 && cc < 1.0) {
            return Err(CoreError::invalid(format!("c must lie in (0,1), got {cc}")));
        }
        Ok(RobustLossParams { alpha, c })
    }

    /// Maps unconstrained raw parameters onto their legal open ranges.
    pub fn from_raw(alpha_raw: F, c_raw: F) -> Self {
        RobustLossParams {
            alpha: squash_alpha(alpha_raw).0,
            c: squash_c(c_raw).0,
        }
    }
}

/// alpha(raw) in (margin, 2 - margin) and its derivative d alpha / d raw.
pub fn squash_alpha<F: Real>(raw: F) -> (F, F) {
    let s = sigmoid(raw);
    let margin = F::c(ALPHA_MARGIN);
    let span = F::c(2.0) - margin - margin;
    (margin + span * s, span * s * (F::one() - s))
}

/// c(raw) in (margin, 1 - margin) and its derivative d c / d raw.
pub fn squash_c<F: Real>(raw: F) -> (F, F) {
    let s = sigmoid(raw);
    let margin = F::c(C_MARGIN);
    let span = F::one() - margin - margin;
    (margin + span * s, span * s * (F::one() - s))
}

/// The unnormalized robust penalty f(x, alpha, c) for alpha in (0,2).
pub fn barron_f<F: Real>(x: F, alpha: F, c: F) -> F {
    let b = F::c(2.0) - alpha;
    let s = (x / c) * (x / c);
    let u = s / b + F::one();
    (b / alpha) * (u.powf(alpha / F::c(2.0)) - F::one())
}

/// Partial derivatives (df/dx, df/dalpha, df/dc).
pub fn barron_f_grads<F: Real>(x: F, alpha: F, c: F) -> (F, F, F) {
    let one = F::one();
    let two = F::c(2.0);
    let b = two - alpha;
    let s = (x / c) * (x / c);
    let u = s / b + one;
    let u_pow = u.powf(alpha / two);
    let u_pow_m1 = u.powf(alpha / two - one);

    let dx = u_pow_m1 * x / (c * c);
    let dc = -s * u_pow_m1 / c;
    let dalpha = -two * (u_pow - one) / (alpha * alpha)
        + (b / alpha) * u_pow * (u.ln() / two + alpha * s / (two * b * b * u));
    (dx, dalpha, dc)
}

struct ZCache {
    values: Vec<f64>,
    derivs: Vec<f64>,
    step: f64,
}

static Z_CACHE: OnceLock<std::result::Result<ZCache, String>> = OnceLock::new();

fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> std::result::Result<f64, String> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a) < 1e-300 {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(format!("quadrature failed to converge on [{a}, {b}]"));
    }
    let l = adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1)?;
    let r = adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1)?;
    Ok(l + r)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> std::result::Result<f64, String> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// Radius where f(x, alpha, 1) reaches `level`.
fn radius_at(alpha: f64, level: f64) -> f64 {
    let b = 2.0 - alpha;
    (b * ((level * alpha / b + 1.0).powf(2.0 / alpha) - 1.0)).sqrt()
}

/// Direct quadrature of the partition integral for one alpha in (0,2).
///
/// The head integrates [0, r3] directly (f <= ~3 there). The tail switches
/// to x = r3 * e^t, which stays well conditioned even for tiny alpha where
/// the integrand decays Cauchy-like over many decades.
fn z_quadrature(alpha: f64) -> std::result::Result<f64, String> {
    let g = move |x: f64| (-barron_f(x, alpha, 1.0)).exp();
    let split = radius_at(alpha, 3.0).clamp(1.0, 50.0);
    let head = simpson(&g, 0.0, split, 1e-9)?;
    // integrate out to f ~ 60 (integrand ~1e-26); beyond that is negligible
    let t_max = (radius_at(alpha, 60.0).max(split * std::f64::consts::E) / split).ln();
    let tail_integrand = move |t: f64| {
        let x = split * t.exp();
        g(x) * x
    };
    let tail = simpson(&tail_integrand, 0.0, t_max, 1e-9)?;
    Ok(2.0 * (head + tail))
}

fn build_cache() -> std::result::Result<ZCache, String> {
    let step = 2.0 / (KNOTS - 1) as f64;
    let mut values = Vec::with_capacity(KNOTS);
    values.push(Z_AT_ZERO);
    for k in 1..KNOTS - 1 {
        values.push(z_quadrature(k as f64 * step)?);
    }
    values.push(Z_AT_TWO);

    // Fritsch-Carlson monotone derivative estimates
    let n = values.len();
    let mut secants = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        secants.push((values[k + 1] - values[k]) / step);
    }
    let mut derivs = vec![0.0; n];
    derivs[0] = secants[0];
    derivs[n - 1] = secants[n - 2];
    for k in 1..n - 1 {
        let s0 = secants[k - 1];
        let s1 = secants[k];
        derivs[k] = if s0 * s1 <= 0.0 {
            0.0
        } else {
            2.0 * s0 * s1 / (s0 + s1)
        };
    }
    Ok(ZCache {
        values,
        derivs,
        step,
    })
}

fn cache() -> Result<&'static ZCache> {
    match Z_CACHE.get_or_init(build_cache) {
        Ok(c) => Ok(c),
        Err(e) => Err(CoreError::numeric(e.clone())),
    }
}

fn hermite(cache: &ZCache, alpha: f64) -> (f64, f64) {
    let n = cache.values.len();
    let pos = (alpha / cache.step).floor() as usize;
    let k = pos.min(n - 2);
    let h = cache.step;
    let t = (alpha - k as f64 * h) / h;
    let (y0, y1) = (cache.values[k], cache.values[k + 1]);
    let (m0, m1) = (cache.derivs[k] * h, cache.derivs[k + 1] * h);
    let t2 = t * t;
    let t3 = t2 * t;
    let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * m0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * m1;
    let dvalue = ((6.0 * t2 - 6.0 * t) * y0
        + (3.0 * t2 - 4.0 * t + 1.0) * m0
        + (-6.0 * t2 + 6.0 * t) * y1
        + (3.0 * t2 - 2.0 * t) * m1)
        / h;
    (value, dvalue)
}

/// Partition value Z(alpha) from the cached grid.
pub fn barron_partition(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(CoreError::invalid(format!("alpha must lie in (0,2), got {alpha}")));
    }
    if alpha <= SNAP {
        return Ok(Z_AT_ZERO);
    }
    if alpha >= 2.0 - SNAP {
        return Ok(Z_AT_TWO);
    }
    Ok(hermite(cache()?, alpha).0)
}

/// d Z / d alpha through the interpolant.
pub fn barron_partition_dalpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(CoreError::invalid(format!("alpha must lie in (0,2), got {alpha}")));
    }
    let a = alpha.clamp(SNAP, 2.0 - SNAP);
    Ok(hermite(cache()?, a).1)
}

/// Negative log-likelihood form: f(x, alpha, c) + ln(c * Z(alpha)).
pub fn barron_loss<F: Real>(x: F, params: &RobustLossParams<F>) -> Result<F> {
    let z = barron_partition(params.alpha.f64c())?;
    Ok(barron_f(x, params.alpha, params.c) + (params.c * F::c(z)).ln())
}

/// Loss partials (dL/dx, dL/dalpha, dL/dc).
pub fn barron_loss_grads<F: Real>(x: F, params: &RobustLossParams<F>) -> Result<(F, F, F)> {
    let alpha = params.alpha.f64c();
    let z = barron_partition(alpha)?;
    let dz = barron_partition_dalpha(alpha)?;
    let (dx, dalpha_f, dc_f) = barron_f_grads(x, params.alpha, params.c);
    let dalpha = dalpha_f + F::c(dz / z);
    let dc = dc_f + F::one() / params.c;
    Ok((dx, dalpha, dc))
}
