use crate::numerics::{Rng, Tensor};

use super::condition::Condition;

/// Number of shape classes the generator produces.
pub const CLASS_COUNT: usize = 2;

/// Pixel range the generator stays inside. The margin below 0 and above 1
/// leaves room for perturbation budgets up to ~0.08 without clipping.
const BG_LO: f64 = 0.10;
const BG_HI: f64 = 0.14;
const FG_LO: f64 = 0.82;
const FG_HI: f64 = 0.88;

/// Procedurally generated grayscale shapes: class 0 is a centered disk,
/// class 1 a centered horizontal bar, both with seeded jitter in position,
/// extent, and intensity. Classes alternate.
pub fn generate_dataset(count: usize, size: usize, rng: &mut Rng) -> Vec<(Tensor, Condition)> {
    (0..count)
        .map(|i| {
            let class = i % CLASS_COUNT;
            let img = generate_image(class, size, rng);
            (img, Condition::class(class))
        })
        .collect()
}

/// One image of the requested class. Besides the shape's own jitter, every
/// image carries a low-frequency background ramp so the within-class manifold
/// has smooth directions that editing preserves.
pub fn generate_image(class: usize, size: usize, rng: &mut Rng) -> Tensor {
    assert!(size >= 4, "images smaller than 4x4 have no interior");
    assert!(class < CLASS_COUNT, "unknown toy class {class}");
    let bg = rng.next_range(BG_LO, BG_HI);
    let fg = rng.next_range(FG_LO, FG_HI);
    let mid = (size - 1) as f64 / 2.0;
    let jitter = size as f64 / 40.0;
    let cx = mid + rng.next_range(-jitter, jitter);
    let cy = mid + rng.next_range(-jitter, jitter);
    let ramp_x = rng.next_range(-0.05, 0.05);
    let ramp_y = rng.next_range(-0.05, 0.05);
    let span = (size - 1) as f64;
    let ramp = move |idx: usize| {
        let y = (idx / size) as f64 / span - 0.5;
        let x = (idx % size) as f64 / span - 0.5;
        ramp_x * x + ramp_y * y
    };
    match class {
        0 => {
            let radius = rng.next_range(0.30, 0.33) * size as f64;
            let soft = 0.125 * size as f64;
            Tensor::from_fn(&[size, size], |idx| {
                let y = (idx / size) as f64;
                let x = (idx % size) as f64;
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let cover = ((radius - d) / soft + 0.5).clamp(0.0, 1.0);
                bg + (fg - bg) * cover + ramp(idx)
            })
        }
        _ => {
            let half_th = rng.next_range(0.12, 0.14) * size as f64;
            let soft = 0.1 * size as f64;
            Tensor::from_fn(&[size, size], |idx| {
                let y = (idx / size) as f64;
                let cover = ((half_th - (y - cy).abs()) / soft + 0.5).clamp(0.0, 1.0);
                bg + (fg - bg) * cover + ramp(idx)
            })
        }
    }
}

/// Mean image of one class over a freshly generated population; used as a
/// crude class prototype by the editing tests.
pub fn class_centroid(class: usize, size: usize, samples: usize, rng: &mut Rng) -> Tensor {
    let mut acc = Tensor::zeros(&[size, size]);
    for _ in 0..samples {
        acc = acc.add(&generate_image(class, size, rng)).unwrap();
    }
    acc.scale(1.0 / samples as f64)
}
