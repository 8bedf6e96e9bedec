use crate::error::{Error, Result};
use crate::numerics::Tensor;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a, 64-bit.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Counter-based deterministic generator.
///
/// Output `i` of a stream is a pure function of `(key, i)`, so identical seeds
/// produce identical streams on every platform, and [`Rng::split`] derives
/// statistically independent child streams without consuming from the parent.
/// Benchmark cells key their streams by `(image_id, method)` so results do not
/// depend on scheduling order.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    counter: u64,
    cached_gaussian: Option<f64>,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng {
            key: mix(seed ^ GOLDEN),
            counter: 0,
            cached_gaussian: None,
        }
    }

    /// Child stream derived from this stream's key and an integer label.
    /// Does not advance the parent.
    pub fn split_u64(&self, label: u64) -> Rng {
        Rng {
            key: mix(self.key
                ^ mix(label
                    .wrapping_mul(GOLDEN)
                    .wrapping_add(0xd1b5_4a32_d192_ed03))),
            counter: 0,
            cached_gaussian: None,
        }
    }

    /// Child stream derived from a string label.
    pub fn split(&self, label: &str) -> Rng {
        self.split_u64(hash_str(label))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self
            .key
            .wrapping_add(self.counter.wrapping_add(1).wrapping_mul(GOLDEN)));
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]` (safe for logarithms).
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        (self.next_f64() * n as f64) as usize % n
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; the pair's second value is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.cached_gaussian.take() {
            return v;
        }
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher-Yates shuffle of indices `0..n`.
    pub fn shuffled_indices(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

/// Tensor of i.i.d. standard normal entries, deterministic given the stream.
pub fn sample_gaussian(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    if shape.is_empty() {
        return Err(Error::InvalidShape(
            "sample_gaussian: empty shape".to_string(),
        ));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "sample_gaussian: zero extent in shape {shape:?}"
        )));
    }
    Ok(Tensor::from_fn(shape, |_| rng.next_gaussian()))
}
