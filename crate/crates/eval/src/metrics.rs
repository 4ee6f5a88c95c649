//! Image and raster quality metrics: PSNR, windowed SSIM, histogram earth
//! mover's distance, height-map accuracy, and shadow confusion scores.

use season_field_scene::dataset::ImageBuf;
use season_field_scene::heightgrid::HeightGrid;

use crate::error::{EvalError, Result};

/// Identical images report this cap instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::invalid("psnr needs equal image dimensions"));
    }
    let mut acc = 0.0f64;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            acc += d * d;
        }
    }
    let mse = acc / (3.0 * a.pixels.len() as f64);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; 11] {
    let sigma = 1.5f64;
    let mut k = [0.0; 11];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = (-x * x / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 = 0.01,
/// K2 = 0.03, unit dynamic range) on the channel-mean grayscale images.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::invalid("ssim needs equal image dimensions"));
    }
    if a.width < 11 || a.height < 11 {
        return Err(EvalError::invalid("ssim needs at least 11x11 images"));
    }
    let w = a.width;
    let h = a.height;
    let gray = |img: &ImageBuf| -> Vec<f64> {
        img.pixels
            .iter()
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
            .collect()
    };
    let ga = gray(a);
    let gb = gray(b);
    let kernel = gaussian_kernel();

    // separable pass: horizontal then vertical, over the five moment images
    let fields: [&dyn Fn(usize) -> f64; 5] = [
        &|i| ga[i],
        &|i| gb[i],
        &|i| ga[i] * ga[i],
        &|i| gb[i] * gb[i],
        &|i| ga[i] * gb[i],
    ];
    let mut blurred: Vec<Vec<f64>> = Vec::with_capacity(5);
    for f in fields {
        let mut horiz = vec![0.0; w * h];
        for row in 0..h {
            for col in 5..w - 5 {
                let mut acc = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * f(row * w + col + t - 5);
                }
                horiz[row * w + col] = acc;
            }
        }
        let mut full = vec![0.0; w * h];
        for row in 5..h - 5 {
            for col in 5..w - 5 {
                let mut acc = 0.0;
                for (t, &kv) in kernel.iter().enumerate() {
                    acc += kv * horiz[(row + t - 5) * w + col];
                }
                full[row * w + col] = acc;
            }
        }
        blurred.push(full);
    }

    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut acc = 0.0;
    let mut count = 0usize;
    for row in 5..h - 5 {
        for col in 5..w - 5 {
            let i = row * w + col;
            let mu_a = blurred[0][i];
            let mu_b = blurred[1][i];
            let var_a = blurred[2][i] - mu_a * mu_a;
            let var_b = blurred[3][i] - mu_b * mu_b;
            let cov = blurred[4][i] - mu_a * mu_b;
            let v = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            acc += v;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Position-free histogram distance: per channel, 256-bin intensity
/// histograms on [0,255]; the distance is the L1 difference of the CDFs in
/// bin-width units, averaged over channels.
pub fn emd_histogram(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::invalid("emd needs equal image dimensions"));
    }
    let n = a.pixels.len() as f64;
    let mut total = 0.0;
    for c in 0..3 {
        let mut ha = [0.0f64; 256];
        let mut hb = [0.0f64; 256];
        for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
            ha[quantize(pa[c])] += 1.0;
            hb[quantize(pb[c])] += 1.0;
        }
        let mut cum = 0.0;
        let mut dist = 0.0;
        for i in 0..256 {
            cum += (ha[i] - hb[i]) / n;
            dist += cum.abs();
        }
        total += dist;
    }
    Ok(total / 3.0)
}

fn quantize(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightMapMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub median_error: f64,
    pub pct_within_1m: f64,
}

/// Accuracy of `pred` against ground truth sampled at the same cell centers,
/// reported in meters.
pub fn height_metrics(pred: &HeightGrid, truth: &HeightGrid, meters_per_unit: f64) -> HeightMapMetrics {
    let mut abs_errors = Vec::with_capacity(pred.width * pred.height);
    let mut sq_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut within = 0usize;
    for row in 0..pred.height {
        for col in 0..pred.width {
            let (x, y) = pred.cell_center(col, row);
            let err = (pred.at(col, row) as f64 - truth.sample(x, y)) * meters_per_unit;
            let a = err.abs();
            abs_sum += a;
            sq_sum += err * err;
            if a <= 1.0 {
                within += 1;
            }
            abs_errors.push(a);
        }
    }
    let n = abs_errors.len() as f64;
    abs_errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if abs_errors.len() % 2 == 1 {
        abs_errors[abs_errors.len() / 2]
    } else {
        0.5 * (abs_errors[abs_errors.len() / 2 - 1] + abs_errors[abs_errors.len() / 2])
    };
    HeightMapMetrics {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
        median_error: median,
        pct_within_1m: within as f64 / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowMetrics {
    pub accuracy: f64,
    pub sun_f1: f64,
    pub shadow_precision: f64,
    pub shadow_recall: f64,
}

/// Confusion scores of a predicted mask against a reference mask, both
/// binarized at 0.5 ("positive" = sun visible).
pub fn shadow_metrics(predicted: &[f32], reference: &[f32]) -> Result<ShadowMetrics> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(EvalError::invalid("shadow masks must have equal nonzero length"));
    }
    let mut tp = 0f64; // sun predicted, sun true
    let mut tn = 0f64;
    let mut fp = 0f64;
    let mut fn_ = 0f64;
    for (&p, &r) in predicted.iter().zip(reference) {
        let ps = p >= 0.5;
        let rs = r >= 0.5;
        match (ps, rs) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let total = tp + tn + fp + fn_;
    let sun_precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 1.0 };
    let sun_recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 1.0 };
    let sun_f1 = if sun_precision + sun_recall > 0.0 {
        2.0 * sun_precision * sun_recall / (sun_precision + sun_recall)
    } else {
        0.0
    };
    // shadow class: predicted negative vs true negative
    let shadow_precision = if tn + fn_ > 0.0 { tn / (tn + fn_) } else { 1.0 };
    let shadow_recall = if tn + fp > 0.0 { tn / (tn + fp) } else { 1.0 };
    Ok(ShadowMetrics {
        accuracy: (tp + tn) / total,
        sun_f1,
        shadow_precision,
        shadow_recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> ImageBuf {
        let mut out = ImageBuf::new(w, h);
        for row in 0..h {
            for col in 0..w {
                out.set(col, row, f(col, row));
            }
        }
        out
    }

    #[test]
    fn psnr_examples() {
        let a = img(16, 16, |c, r| [(c as f32) / 32.0, (r as f32) / 32.0, 0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);

        // 2^-4 is exactly representable, so the MSE is exactly 2^-8
        let b = img(16, 16, |c, r| {
            let p = a.get(c, r);
            [p[0] + 0.0625, p[1] + 0.0625, p[2] + 0.0625]
        });
        let v = psnr(&a, &b).unwrap();
        assert!((v - 24.082399653118496).abs() <= 1e-9, "{v}");

        let c = img(16, 16, |_, _| [0.5, 0.5, 0.5]);
        let d = img(16, 16, |_, _| [0.0, 0.0, 0.0]);
        let v = psnr(&c, &d).unwrap();
        assert!((v - 6.020599913279624).abs() <= 1e-9, "{v}");
    }

    #[test]
    fn ssim_examples() {
        let a = img(32, 32, |c, r| {
            let v = ((c * 7 + r * 3) % 13) as f32 / 13.0;
            [v, v * 0.8, v * 0.5 + 0.2]
        });
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);

        let inv = img(32, 32, |c, r| {
            let p = a.get(c, r);
            [1.0 - p[0], 1.0 - p[1], 1.0 - p[2]]
        });
        let v = ssim(&a, &inv).unwrap();
        assert!(v < 0.5, "inverted image ssim {v}");

        let c1 = img(16, 16, |_, _| [0.3, 0.3, 0.3]);
        let c2 = img(16, 16, |_, _| [0.3, 0.3, 0.3]);
        assert!((ssim(&c1, &c2).unwrap() - 1.0).abs() <= 1e-12);

        assert!(ssim(&img(8, 8, |_, _| [0.0; 3]), &img(8, 8, |_, _| [0.0; 3])).is_err());
    }

    #[test]
    fn emd_examples() {
        let a = img(32, 32, |c, r| {
            let v = ((c + r) % 100) as f32 / 255.0;
            [v, v, v]
        });
        assert_eq!(emd_histogram(&a, &a).unwrap(), 0.0);

        // shift by 16 intensity levels without clipping
        let b = img(32, 32, |c, r| {
            let p = a.get(c, r);
            [p[0] + 16.0 / 255.0, p[1] + 16.0 / 255.0, p[2] + 16.0 / 255.0]
        });
        let v = emd_histogram(&a, &b).unwrap();
        assert!((v - 16.0).abs() <= 1e-9, "{v}");
    }

    #[test]
    fn emd_is_symmetric_and_triangular() {
        let mk = |seed: u32| {
            img(16, 16, |c, r| {
                let h = (c as u32 * 31 + r as u32 * 17 + seed * 97) % 255;
                [h as f32 / 255.0, ((h * 3) % 255) as f32 / 255.0, ((h * 7) % 255) as f32 / 255.0]
            })
        };
        let (a, b, c) = (mk(1), mk(2), mk(3));
        let ab = emd_histogram(&a, &b).unwrap();
        let ba = emd_histogram(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        let bc = emd_histogram(&b, &c).unwrap();
        let ac = emd_histogram(&a, &c).unwrap();
        assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn height_metrics_match_naive_recomputation() {
        let mut pred = HeightGrid::new(9, 7, [-1.0, 1.0], [-1.0, 1.0]);
        let mut truth = HeightGrid::new(9, 7, [-1.0, 1.0], [-1.0, 1.0]);
        for row in 0..7 {
            for col in 0..9 {
                pred.set(col, row, (col as f32 * 0.01) - (row as f32 * 0.02));
                truth.set(col, row, (col as f32 * 0.012) - (row as f32 * 0.017));
            }
        }
        let m = height_metrics(&pred, &truth, 100.0);
        // independent naive loop, bit-for-bit
        let mut abs = Vec::new();
        let mut sq = 0.0f64;
        let mut s = 0.0f64;
        let mut within = 0usize;
        for row in 0..7 {
            for col in 0..9 {
                let (x, y) = pred.cell_center(col, row);
                let e = (pred.at(col, row) as f64 - truth.sample(x, y)) * 100.0;
                s += e.abs();
                sq += e * e;
                if e.abs() <= 1.0 {
                    within += 1;
                }
                abs.push(e.abs());
            }
        }
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(m.mae.to_bits(), (s / 63.0).to_bits());
        assert_eq!(m.rmse.to_bits(), ((sq / 63.0).sqrt()).to_bits());
        assert_eq!(m.median_error.to_bits(), abs[31].to_bits());
        assert_eq!(m.pct_within_1m.to_bits(), (within as f64 / 63.0).to_bits());
        assert!(m.mae <= m.rmse);
    }

    #[test]
    fn shadow_metrics_match_brute_confusion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pred: Vec<f32> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
        let refm: Vec<f32> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = shadow_metrics(&pred, &refm).unwrap();
        let (mut tp, mut tn, mut fp, mut fnn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..500 {
            match (pred[i] >= 0.5, refm[i] >= 0.5) {
                (true, true) => tp += 1.0,
                (false, false) => tn += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
            }
        }
        assert!((m.accuracy - (tp + tn) / 500.0).abs() <= 1e-12);
        let p = tp / (tp + fp);
        let r = tp / (tp + fnn);
        assert!((m.sun_f1 - 2.0 * p * r / (p + r)).abs() <= 1e-12);
        assert!((m.shadow_precision - tn / (tn + fnn)).abs() <= 1e-12);
        assert!((m.shadow_recall - tn / (tn + fp)).abs() <= 1e-12);
    }
}
