use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::config::{AttackConfig, Objective};
use super::objectives::{evaluate_objective, objective_grad, AttackContext, ObjectiveState};

/// A finished immunization run. `loss_curve[i]` is the objective value at the
/// start of iteration `i` (so `loss_curve[0]` is the clean-image value); the
/// random control carries zeros.
pub struct AttackResult {
    pub delta: Tensor,
    pub loss_curve: Vec<f64>,
    pub immunized: Tensor,
}

/// Snapshot handed to the per-iteration observer.
pub struct IterObservation<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub delta: &'a Tensor,
    pub perturbed: &'a Tensor,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects δ onto the ε-ball, then pulls `x0 + δ` back into pixel range.
/// The order matters: the pixel clamp runs last so the result is always a
/// valid image.
fn project(x0: &Tensor, delta: &Tensor, epsilon: f64) -> Result<Tensor> {
    let clipped = delta.clamp(-epsilon, epsilon);
    let valid = x0.add(&clipped)?.clamp(0.0, 1.0);
    valid.sub(x0)
}

/// Sign-gradient ascent of the configured objective with projection to the
/// ε-ball and the unit pixel range each iteration; δ starts at zero.
pub fn pgd_maximize(x0: &Tensor, cfg: &AttackConfig, ctx: &AttackContext) -> Result<AttackResult> {
    pgd_maximize_observed(x0, cfg, ctx, |_| {})
}

/// [`pgd_maximize`] with a per-iteration observer (post-projection state).
pub fn pgd_maximize_observed(
    x0: &Tensor,
    cfg: &AttackConfig,
    ctx: &AttackContext,
    mut observer: impl FnMut(&IterObservation),
) -> Result<AttackResult> {
    cfg.validate()?;
    if cfg.objective == Objective::Random {
        return Err(Error::InvalidConfig(
            "the random control does not run PGD; use random_noise_control".to_string(),
        ));
    }
    if cfg.traj_steps != ctx.grid.steps() {
        return Err(Error::InvalidConfig(format!(
            "config traj_steps {} disagrees with grid steps {}",
            cfg.traj_steps,
            ctx.grid.steps()
        )));
    }
    ensure_unit_range(x0)?;

    let state = ObjectiveState::prepare(cfg.objective, x0, ctx)?;
    let root_rng = Rng::seed(cfg.seed);
    let alpha = cfg.step();
    // The sds baseline descends its direction; everything else ascends.
    let direction = if cfg.objective == Objective::Sds {
        -1.0
    } else {
        1.0
    };

    let mut delta = Tensor::zeros(x0.shape());
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let perturbed = x0.add(&delta)?;
        let mut iter_rng = root_rng.split_u64(iteration as u64);
        let (loss, grad) = objective_grad(cfg.objective, &perturbed, ctx, &state, &mut iter_rng)?;
        if !grad.is_finite() || !loss.is_finite() {
            return Err(Error::NonFiniteGradient { iteration });
        }
        loss_curve.push(loss);
        let step = grad.map(|g| direction * alpha * sign(g));
        delta = project(x0, &delta.add(&step)?, cfg.epsilon)?;
        let now = x0.add(&delta)?;
        observer(&IterObservation {
            iteration,
            loss,
            delta: &delta,
            perturbed: &now,
        });
    }

    let immunized = x0.add(&delta)?.clamp(0.0, 1.0);
    Ok(AttackResult {
        delta,
        loss_curve,
        immunized,
    })
}

/// Seeded ±ε perturbation (sign flipped toward the interior at the pixel-range
/// boundary), projected exactly like a PGD iterate. The efficacy control.
pub fn random_noise_control(
    x0: &Tensor,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackResult> {
    cfg.validate()?;
    ensure_unit_range(x0)?;
    let eps = cfg.epsilon;
    let raw = Tensor::from_fn(x0.shape(), |i| {
        let mut s = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        let x = x0.data()[i];
        if x + s * eps > 1.0 || x + s * eps < 0.0 {
            s = -s;
        }
        s * eps
    });
    let delta = project(x0, &raw, eps)?;
    let immunized = x0.add(&delta)?.clamp(0.0, 1.0);
    Ok(AttackResult {
        delta,
        loss_curve: vec![0.0; cfg.iterations],
        immunized,
    })
}

/// Runs the configured method: PGD for gradient objectives, the seeded
/// control for `random`.
pub fn run_attack(x0: &Tensor, cfg: &AttackConfig, ctx: &AttackContext) -> Result<AttackResult> {
    if cfg.objective == Objective::Random {
        random_noise_control(x0, cfg, &mut Rng::seed(cfg.seed))
    } else {
        pgd_maximize(x0, cfg, ctx)
    }
}

/// Final objective value of an attack result (forward evaluation at the
/// immunized image, seeded past the last iteration's draws).
pub fn final_objective(
    result: &AttackResult,
    cfg: &AttackConfig,
    ctx: &AttackContext,
) -> Result<f64> {
    if cfg.objective == Objective::Random {
        return Ok(0.0);
    }
    let state = ObjectiveState::prepare(cfg.objective, &result.immunized, ctx)?;
    let mut rng = Rng::seed(cfg.seed).split_u64(cfg.iterations as u64);
    evaluate_objective(cfg.objective, &result.immunized, ctx, &state, &mut rng)
}

fn ensure_unit_range(x0: &Tensor) -> Result<()> {
    if x0.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidConfig(
            "attack input must lie in [0, 1]".to_string(),
        ));
    }
    Ok(())
}
