use crate::error::Result;
use crate::numerics::Tensor;

/// Mean squared error over unit-range images.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.sub(b)?.norm_sq() / a.numel() as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at 99 dB
/// when the error underflows (keeps CSV cells finite).
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(if e < 1e-10 {
        99.0
    } else {
        10.0 * (1.0 / e).log10()
    })
}

/// Largest absolute pixel difference.
pub fn linf(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.sub(b)?.max_abs())
}

const SSIM_C1: f64 = 1e-4; // (K1·L)² with K1 = 0.01, L = 1
const SSIM_C2: f64 = 9e-4; // (K2·L)² with K2 = 0.03, L = 1
const SSIM_WINDOW: usize = 8;

/// Structural similarity for unit-range grayscale images. On images up to
/// 8×8 the image is the window (a single global term); larger images use an
/// 8×8 sliding window with stride 1, mean-pooled. Population (1/N) moments.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = match a.shape() {
        [h, w] => (*h, *w),
        _ => (1, a.numel()),
    };
    let wh = SSIM_WINDOW.min(h);
    let ww = SSIM_WINDOW.min(w);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(h - wh) {
        for x0 in 0..=(w - ww) {
            total += ssim_window(a.data(), b.data(), w, y0, x0, wh, ww);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn ssim_window(
    a: &[f64],
    b: &[f64],
    stride: usize,
    y0: usize,
    x0: usize,
    wh: usize,
    ww: usize,
) -> f64 {
    let n = (wh * ww) as f64;
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    for y in y0..y0 + wh {
        for x in x0..x0 + ww {
            mu_a += a[y * stride + x];
            mu_b += b[y * stride + x];
        }
    }
    mu_a /= n;
    mu_b /= n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for y in y0..y0 + wh {
        for x in x0..x0 + ww {
            let da = a[y * stride + x] - mu_a;
            let db = b[y * stride + x] - mu_b;
            var_a += da * da;
            var_b += db * db;
            cov += da * db;
        }
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}
