use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// A purification transform applied to immunized images before editing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Purification {
    None,
    Gaussian { sigma: f64 },
    CropResize { crop_frac: f64 },
    Quantize { levels: usize },
}

impl Purification {
    pub fn label(&self) -> String {
        match self {
            Purification::None => "none".to_string(),
            Purification::Gaussian { sigma } => format!("gaussian{sigma}"),
            Purification::CropResize { crop_frac } => format!("crop{crop_frac}"),
            Purification::Quantize { levels } => format!("quant{levels}"),
        }
    }

    pub fn apply(&self, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Purification::None => Ok(x.clone()),
            Purification::Gaussian { sigma } => purify_gaussian(x, *sigma, rng),
            Purification::CropResize { crop_frac } => purify_crop_resize(x, *crop_frac),
            Purification::Quantize { levels } => purify_quantize(x, *levels),
        }
    }
}

/// Adds seeded Gaussian noise of the given standard deviation, clamped back
/// to unit range. σ = 0 returns the input exactly.
pub fn purify_gaussian(x: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if sigma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let noisy = Tensor::from_fn(x.shape(), |i| x.data()[i] + sigma * rng.next_gaussian());
    Ok(noisy.clamp(0.0, 1.0))
}

/// Crops `crop_frac` of the image (half per side, in continuous pixel-center
/// coordinates) and resizes back to the original extent with corner-aligned
/// bilinear interpolation. `crop_frac = 0` reproduces the input.
pub fn purify_crop_resize(x: &Tensor, crop_frac: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&crop_frac) {
        return Err(Error::InvalidConfig(format!(
            "crop_frac must be in [0, 1), got {crop_frac}"
        )));
    }
    let (h, w) = match x.shape() {
        [h, w] => (*h, *w),
        other => {
            return Err(Error::InvalidShape(format!(
                "crop-resize expects a 2-d image, got {other:?}"
            )))
        }
    };
    let src = x.data();
    let sample = |fy: f64, fx: f64| -> f64 {
        let y0 = fy.floor().clamp(0.0, (h - 1) as f64) as usize;
        let x0 = fx.floor().clamp(0.0, (w - 1) as f64) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let dy = (fy - y0 as f64).clamp(0.0, 1.0);
        let dx = (fx - x0 as f64).clamp(0.0, 1.0);
        let top = src[y0 * w + x0] * (1.0 - dx) + src[y0 * w + x1] * dx;
        let bot = src[y1 * w + x0] * (1.0 - dx) + src[y1 * w + x1] * dx;
        top * (1.0 - dy) + bot * dy
    };
    let margin_y = (h - 1) as f64 * crop_frac / 2.0;
    let margin_x = (w - 1) as f64 * crop_frac / 2.0;
    let span_y = (h - 1) as f64 * (1.0 - crop_frac);
    let span_x = (w - 1) as f64 * (1.0 - crop_frac);
    let out = Tensor::from_fn(&[h, w], |i| {
        let y = i / w;
        let xcol = i % w;
        let fy = margin_y + span_y * y as f64 / (h - 1).max(1) as f64;
        let fx = margin_x + span_x * xcol as f64 / (w - 1).max(1) as f64;
        sample(fy, fx)
    });
    Ok(out.clamp(0.0, 1.0))
}

/// Uniform quantization to `levels` gray levels; idempotent, and exact on
/// inputs already aligned to the level lattice.
pub fn purify_quantize(x: &Tensor, levels: usize) -> Result<Tensor> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!(
            "levels must be >= 2, got {levels}"
        )));
    }
    let q = (levels - 1) as f64;
    Ok(x.map(|v| (v.clamp(0.0, 1.0) * q).round() / q))
}
