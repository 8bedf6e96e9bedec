use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Serializable schedule description; `build()` expands the tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub t_total: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t_total: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.t_total, self.beta_start, self.beta_end)
    }
}

/// β/α/ᾱ tables defining the diffusion process, indexed by timestep `0..T`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linearly spaced β between `beta_start` and `beta_end` (inclusive), with
/// α_t = 1 − β_t and ᾱ_t the running product of α.
pub fn build_schedule(t_total: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_total < 2 {
        return Err(Error::InvalidSchedule(format!(
            "T must be at least 2, got {t_total}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let mut beta = Vec::with_capacity(t_total);
    let mut alpha = Vec::with_capacity(t_total);
    let mut alpha_bar = Vec::with_capacity(t_total);
    let mut prod = 1.0;
    for t in 0..t_total {
        let frac = t as f64 / (t_total - 1) as f64;
        let b = beta_start + (beta_end - beta_start) * frac;
        let a = 1.0 - b;
        prod *= a;
        beta.push(b);
        alpha.push(a);
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        config: ScheduleConfig {
            t_total,
            beta_start,
            beta_end,
        },
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn t_total(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.t_total() {
            return Err(Error::TimestepOutOfRange {
                t,
                t_total: self.t_total(),
            });
        }
        Ok(())
    }
}

/// The diffusing map: `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check_timestep(t)?;
    x0.check_same_shape(eps)?;
    let ab = s.alpha_bar(t);
    x0.scale(ab.sqrt()).add_scaled(eps, (1.0 - ab).sqrt())
}

/// `λ(t) = √(1/ᾱ_{t+1} − 1) − √(1/ᾱ_t − 1)`; defined for `t < T−1`.
pub fn lambda_coeff(t: usize, s: &NoiseSchedule) -> Result<f64> {
    if t + 1 >= s.t_total() {
        return Err(Error::TimestepOutOfRange {
            t: t + 1,
            t_total: s.t_total(),
        });
    }
    let next = s.alpha_bar(t + 1);
    let cur = s.alpha_bar(t);
    Ok((1.0 / next - 1.0).sqrt() - (1.0 / cur - 1.0).sqrt())
}

/// Strictly increasing timesteps `τ_0..τ_S` selecting the DDIM trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepGrid {
    taus: Vec<usize>,
}

impl TimestepGrid {
    /// Uniform "leading" spacing `τ_k = k·⌊T/S⌋` with the final gridpoint
    /// clamped to `T−1` so every τ indexes a defined ᾱ.
    pub fn leading(t_total: usize, steps: usize) -> Result<TimestepGrid> {
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be >= 1".to_string()));
        }
        let stride = t_total / steps;
        if stride == 0 {
            return Err(Error::InvalidGrid(format!(
                "steps {steps} too large for T={t_total}"
            )));
        }
        let taus: Vec<usize> = (0..=steps).map(|k| (k * stride).min(t_total - 1)).collect();
        TimestepGrid::from_taus(taus, t_total)
    }

    pub fn from_taus(taus: Vec<usize>, t_total: usize) -> Result<TimestepGrid> {
        if taus.len() < 2 {
            return Err(Error::InvalidGrid(
                "grid needs at least 2 points".to_string(),
            ));
        }
        if !taus.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidGrid(format!(
                "taus not strictly increasing: {taus:?}"
            )));
        }
        if *taus.last().unwrap() > t_total - 1 {
            return Err(Error::InvalidGrid(format!(
                "last tau {} exceeds T-1={}",
                taus.last().unwrap(),
                t_total - 1
            )));
        }
        Ok(TimestepGrid { taus })
    }

    /// Number of DDIM steps `S` (one less than the number of gridpoints).
    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    pub fn tau(&self, k: usize) -> usize {
        self.taus[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NoiseSchedule {
        build_schedule(4, 0.1, 0.4).unwrap()
    }

    #[test]
    fn hand_computed_tables() {
        let s = toy();
        let expect_alpha = [0.9, 0.8, 0.7, 0.6];
        let expect_abar = [0.9, 0.72, 0.504, 0.3024];
        for t in 0..4 {
            assert!((s.alpha(t) - expect_alpha[t]).abs() < 1e-12);
            assert!((s.alpha_bar(t) - expect_abar[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        for t in 1..s.t_total() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn default_schedule_matches_brute_force_product() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        // Independent product loop over the defining betas.
        let mut prod = 1.0;
        for t in 0..1000 {
            let b = 1e-4 + (0.02 - 1e-4) * t as f64 / 999.0;
            prod *= 1.0 - b;
        }
        assert!(
            (s.alpha_bar(999) - prod).abs() < 1e-12,
            "{} vs {}",
            s.alpha_bar(999),
            prod
        );
    }

    #[test]
    fn bounds_validated() {
        assert!(build_schedule(1, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 0.0, 0.2).is_err());
        assert!(build_schedule(10, 0.3, 0.2).is_err());
        assert!(build_schedule(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn forward_noise_hand_value() {
        let s = toy();
        let x0 = Tensor::full(&[1], 1.0);
        let eps = Tensor::zeros(&[1]);
        let out = forward_noise(&x0, 1, &eps, &s).unwrap();
        assert!((out.data()[0] - 0.84853).abs() < 1e-4);
    }

    #[test]
    fn forward_noise_branches() {
        let s = toy();
        let x0 = Tensor::from_vec(&[2], vec![0.25, 0.5]).unwrap();
        let eps = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let zero = Tensor::zeros(&[2]);
        let a = forward_noise(&x0, 2, &zero, &s).unwrap();
        let expect = 0.504_f64.sqrt();
        assert!((a.data()[0] - 0.25 * expect).abs() < 1e-12);
        let b = forward_noise(&zero, 2, &eps, &s).unwrap();
        assert!((b.data()[1] + (1.0 - 0.504_f64).sqrt()).abs() < 1e-12);
        let bad = Tensor::zeros(&[3]);
        assert!(forward_noise(&x0, 2, &bad, &s).is_err());
    }

    #[test]
    fn lambda_hand_value_and_positivity() {
        let s = toy();
        let l0 = lambda_coeff(0, &s).unwrap();
        assert!((l0 - 0.29028).abs() < 1e-4);
        for t in 0..3 {
            assert!(lambda_coeff(t, &s).unwrap() > 0.0);
        }
        assert!(lambda_coeff(3, &s).is_err());
    }

    #[test]
    fn leading_grid_clamps_endpoint() {
        let g = TimestepGrid::leading(1000, 10).unwrap();
        assert_eq!(g.steps(), 10);
        assert_eq!(g.tau(0), 0);
        assert_eq!(g.tau(9), 900);
        assert_eq!(g.tau(10), 999);
        let g2 = TimestepGrid::leading(4, 3).unwrap();
        assert_eq!(g2.taus(), &[0, 1, 2, 3]);
    }

    #[test]
    fn grid_validation() {
        assert!(TimestepGrid::from_taus(vec![0, 0, 2], 10).is_err());
        assert!(TimestepGrid::from_taus(vec![0, 10], 10).is_err());
        assert!(TimestepGrid::from_taus(vec![3], 10).is_err());
        assert!(TimestepGrid::leading(10, 0).is_err());
    }

    #[test]
    fn schedule_config_json_fields() {
        let cfg = ScheduleConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json, r#"{"T":1000,"beta_start":0.0001,"beta_end":0.02}"#);
        let back: ScheduleConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
