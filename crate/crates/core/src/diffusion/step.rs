use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::schedule::NoiseSchedule;

/// Affine coefficients of one deterministic DDIM transition
/// `x_to = scale·x_from + eps_coef·ε`, valid for either direction.
///
/// `scale = √(ᾱ_to/ᾱ_from)` and
/// `eps_coef = √ᾱ_to·(√(1/ᾱ_to − 1) − √(1/ᾱ_from − 1))`; for a unit inversion
/// step this reduces to `√ᾱ_{t+1}·λ(t)`, and for a descending step it equals
/// `√(1−ᾱ_to) − scale·√(1−ᾱ_from)`.
pub fn step_coeffs(s: &NoiseSchedule, t_from: usize, t_to: usize) -> Result<(f64, f64)> {
    s.check_timestep(t_from)?;
    s.check_timestep(t_to)?;
    let ab_from = s.alpha_bar(t_from);
    let ab_to = s.alpha_bar(t_to);
    let scale = (ab_to / ab_from).sqrt();
    let eps_coef = ab_to.sqrt() * ((1.0 / ab_to - 1.0).sqrt() - (1.0 / ab_from - 1.0).sqrt());
    Ok((scale, eps_coef))
}

/// One deterministic DDIM sampling step (descending the grid):
/// `√ᾱ_to·((x_t − √(1−ᾱ_from)·ε)/√ᾱ_from) + √(1−ᾱ_to)·ε`.
pub fn ddim_sample_step(
    x_t: &Tensor,
    t_from: usize,
    t_to: usize,
    eps_pred: &Tensor,
    s: &NoiseSchedule,
) -> Result<Tensor> {
    if t_to >= t_from {
        return Err(Error::TimestepOrder {
            from: t_from,
            to: t_to,
            direction: "sampling",
            requirement: "to < from",
        });
    }
    x_t.check_same_shape(eps_pred)?;
    s.check_timestep(t_from)?;
    s.check_timestep(t_to)?;
    let ab_from = s.alpha_bar(t_from);
    let ab_to = s.alpha_bar(t_to);
    let pred_x0 = x_t
        .add_scaled(eps_pred, -(1.0 - ab_from).sqrt())?
        .scale(1.0 / ab_from.sqrt());
    pred_x0
        .scale(ab_to.sqrt())
        .add_scaled(eps_pred, (1.0 - ab_to).sqrt())
}

/// One DDIM inversion step (ascending the grid), returning the next latent and
/// the noising contribution Δ separately: `x_to = scale·x_t + Δ` with
/// `Δ = eps_coef·ε`.
pub fn ddim_invert_step(
    x_t: &Tensor,
    t_from: usize,
    t_to: usize,
    eps_pred: &Tensor,
    s: &NoiseSchedule,
) -> Result<(Tensor, Tensor)> {
    if t_to <= t_from {
        return Err(Error::TimestepOrder {
            from: t_from,
            to: t_to,
            direction: "inversion",
            requirement: "to > from",
        });
    }
    x_t.check_same_shape(eps_pred)?;
    let (scale, eps_coef) = step_coeffs(s, t_from, t_to)?;
    let delta = eps_pred.scale(eps_coef);
    let next = x_t.scale(scale).add(&delta)?;
    Ok((next, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{build_schedule, lambda_coeff};
    use crate::numerics::{sample_gaussian, Rng};

    fn toy() -> NoiseSchedule {
        build_schedule(4, 0.1, 0.4).unwrap()
    }

    #[test]
    fn sample_step_hand_value() {
        let s = toy();
        let x = Tensor::full(&[1], 1.0);
        let eps = Tensor::full(&[1], 0.5);
        let out = ddim_sample_step(&x, 1, 0, &eps, &s).unwrap();
        assert!((out.data()[0] - 0.98034).abs() < 1e-3, "{}", out.data()[0]);
    }

    #[test]
    fn sample_step_zero_eps_is_pure_rescale() {
        let s = toy();
        let x = Tensor::from_vec(&[2], vec![0.4, -0.2]).unwrap();
        let eps = Tensor::zeros(&[2]);
        let out = ddim_sample_step(&x, 2, 0, &eps, &s).unwrap();
        let ratio = (s.alpha_bar(0) / s.alpha_bar(2)).sqrt();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - ratio * v).abs() < 1e-12);
        }
    }

    #[test]
    fn invert_step_hand_value() {
        let s = toy();
        let x = Tensor::full(&[1], 1.0);
        let eps = Tensor::full(&[1], 1.0);
        let (next, delta) = ddim_invert_step(&x, 0, 1, &eps, &s).unwrap();
        assert!(
            (next.data()[0] - 1.14073).abs() < 1e-3,
            "{}",
            next.data()[0]
        );
        // Unit step: Δ must equal √ᾱ_{t+1}·λ(t)·ε.
        let expect = s.alpha_bar(1).sqrt() * lambda_coeff(0, &s).unwrap();
        assert!((delta.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn invert_step_zero_eps() {
        let s = toy();
        let x = Tensor::from_vec(&[2], vec![0.3, 0.7]).unwrap();
        let eps = Tensor::zeros(&[2]);
        let (next, delta) = ddim_invert_step(&x, 0, 2, &eps, &s).unwrap();
        let ratio = (s.alpha_bar(2) / s.alpha_bar(0)).sqrt();
        assert_eq!(delta.data(), &[0.0, 0.0]);
        for (n, v) in next.data().iter().zip(x.data()) {
            assert!((n - ratio * v).abs() < 1e-15);
        }
    }

    #[test]
    fn order_is_enforced() {
        let s = toy();
        let x = Tensor::zeros(&[1]);
        assert!(ddim_sample_step(&x, 1, 1, &x, &s).is_err());
        assert!(ddim_sample_step(&x, 0, 1, &x, &s).is_err());
        assert!(ddim_invert_step(&x, 1, 1, &x, &s).is_err());
        assert!(ddim_invert_step(&x, 1, 0, &x, &s).is_err());
    }

    #[test]
    fn invert_then_sample_with_shared_eps_is_identity() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let mut rng = Rng::seed(11);
        for &(lo, hi) in &[(0usize, 100usize), (100, 999), (5, 6)] {
            let x = sample_gaussian(&mut rng, &[4, 4]).unwrap();
            let eps = sample_gaussian(&mut rng, &[4, 4]).unwrap();
            let (up, _) = ddim_invert_step(&x, lo, hi, &eps, &s).unwrap();
            let back = ddim_sample_step(&up, hi, lo, &eps, &s).unwrap();
            let rel = crate::numerics::max_rel_err(&back, &x).unwrap();
            assert!(rel < 1e-10, "roundtrip rel err {rel} for {lo}->{hi}");
        }
    }
}
