//! Scalar abstraction over f32 (training paths) and f64 (test/oracle paths).

use crate::fastmath;

/// Float scalar usable throughout the field math. The f64 implementation
/// routes trig through the standard library so oracle paths stay at full
/// precision; the f32 implementation uses a vectorizable polynomial.
pub trait Real: ndarray::NdFloat + num_traits::FromPrimitive + Default {
    fn c(x: f64) -> Self;
    fn f64c(self) -> f64;

    fn act_sin(self) -> Self;
    fn act_cos(self) -> Self;

    /// Batched sin of `z` into `out`; slices must have equal length.
    fn act_sin_slice(z: &[Self], out: &mut [Self]);
    /// In-place batched sine.
    fn act_sin_inplace(buf: &mut [Self]);
    /// Batched cos of `z` into `out`; slices must have equal length.
    fn act_cos_slice(z: &[Self], out: &mut [Self]);
}

impl Real for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64c(self) -> f64 {
        self
    }

    #[inline]
    fn act_sin(self) -> Self {
        self.sin()
    }

    #[inline]
    fn act_cos(self) -> Self {
        self.cos()
    }

    fn act_sin_slice(z: &[Self], out: &mut [Self]) {
        for (o, &x) in out.iter_mut().zip(z) {
            *o = x.sin();
        }
    }

    fn act_sin_inplace(buf: &mut [Self]) {
        for v in buf.iter_mut() {
            *v = v.sin();
        }
    }

    fn act_cos_slice(z: &[Self], out: &mut [Self]) {
        for (o, &x) in out.iter_mut().zip(z) {
            *o = x.cos();
        }
    }
}

impl Real for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64c(self) -> f64 {
        self as f64
    }

    #[inline]
    fn act_sin(self) -> Self {
        fastmath::sin_f32(self)
    }

    #[inline]
    fn act_cos(self) -> Self {
        fastmath::cos_f32(self)
    }

    fn act_sin_slice(z: &[Self], out: &mut [Self]) {
        fastmath::sin_slice_f32(z, out);
    }

    fn act_sin_inplace(buf: &mut [Self]) {
        fastmath::sin_inplace_f32(buf);
    }

    fn act_cos_slice(z: &[Self], out: &mut [Self]) {
        fastmath::cos_slice_f32(z, out);
    }
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable softplus ln(1 + e^x).
#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    let zero = F::zero();
    let m = if x > zero { x } else { zero };
    m + (-(x.abs())).exp().ln_1p()
}
