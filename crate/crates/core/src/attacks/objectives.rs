use crate::diffusion::{forward_noise, NoiseSchedule, TimestepGrid};
use crate::error::{Error, Result};
use crate::models::{Codec, Condition, Denoiser};
use crate::numerics::{sample_gaussian, Rng, Tensor};
use crate::trajgrad::{trajectory_grad, AuxSource, GradMode, Pipeline, PlanKind};

use super::config::Objective;

/// Everything an objective evaluation needs besides the image.
pub struct AttackContext<'a> {
    pub codec: &'a dyn Codec,
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub grid: &'a TimestepGrid,
    pub cond: Condition,
    pub grad_mode: GradMode,
}

/// Per-attack state prepared once from the clean image (detached references).
pub struct ObjectiveState {
    /// `E(x_orig)` for the encoder objective.
    pub reference_latent: Option<Tensor>,
}

impl ObjectiveState {
    pub fn prepare(objective: Objective, x0: &Tensor, ctx: &AttackContext) -> Result<Self> {
        let reference_latent = match objective {
            Objective::Encoder => Some(ctx.codec.encode(x0)?),
            _ => None,
        };
        Ok(ObjectiveState { reference_latent })
    }
}

/// Loss and cotangent seed for the inversion-displacement objective:
/// `‖h_S − E(x)‖²` with the subtrahend detached.
pub fn dia_pt_seed(terminal: &Tensor, detached_latent: &Tensor) -> Result<(f64, Tensor)> {
    let resid = terminal.sub(detached_latent)?;
    Ok((resid.norm_sq(), resid.scale(2.0)))
}

/// Loss and cotangent seed for the reconstruction objective:
/// `‖decode(roundtrip) − x‖²` with the subtrahend detached.
pub fn dia_r_seed(terminal: &Tensor, detached_input: &Tensor) -> Result<(f64, Tensor)> {
    let resid = terminal.sub(detached_input)?;
    Ok((resid.norm_sq(), resid.scale(2.0)))
}

/// Loss and cotangent seed for the model-trajectory objective:
/// `‖h_S − √ᾱ_{τS}·E(x)‖²` with the subtrahend detached.
pub fn dia_mt_seed(
    terminal: &Tensor,
    detached_latent: &Tensor,
    sqrt_alpha_bar_top: f64,
) -> Result<(f64, Tensor)> {
    let resid = terminal.sub(&detached_latent.scale(sqrt_alpha_bar_top))?;
    Ok((resid.norm_sq(), resid.scale(2.0)))
}

/// Deterministic core of the single-step diffusion objective at a fixed
/// `(t, ε)` draw: returns the loss `‖ε − ε_θ(z_t, c, t)‖²` and its gradient
/// with respect to the image.
pub fn adv_dm_loss_at(
    x: &Tensor,
    ctx: &AttackContext,
    t: usize,
    eps: &Tensor,
) -> Result<(f64, Tensor)> {
    let z = ctx.codec.encode(x)?;
    let z_t = forward_noise(&z, t, eps, ctx.schedule)?;
    let pred = ctx.denoiser.predict(&z_t, t, &ctx.cond)?;
    let resid = pred.sub(eps)?;
    let loss = resid.norm_sq();
    // d/dz_t ‖ε − ε_θ‖² = J^T·2(ε_θ − ε); z_t depends on E(x) via √ᾱ_t.
    let through = ctx.denoiser.vjp(&z_t, t, &ctx.cond, &resid.scale(2.0))?;
    let grad = ctx
        .codec
        .encode_vjp(x, &through.scale(ctx.schedule.alpha_bar(t).sqrt()))?;
    Ok((loss, grad))
}

/// The codec-only update direction at a fixed `(t, ε)` draw: the diffusion
/// residual `ε_θ − ε` pulled back through the encoder alone (the denoiser
/// Jacobian is treated as the identity). Applied with descent sign.
/// Returns `(diffusion loss, direction)`.
pub fn sds_direction_at(
    x: &Tensor,
    ctx: &AttackContext,
    t: usize,
    eps: &Tensor,
) -> Result<(f64, Tensor)> {
    let z = ctx.codec.encode(x)?;
    let z_t = forward_noise(&z, t, eps, ctx.schedule)?;
    let pred = ctx.denoiser.predict(&z_t, t, &ctx.cond)?;
    let resid = pred.sub(eps)?;
    let loss = resid.norm_sq();
    let direction = ctx.codec.encode_vjp(x, &resid)?;
    Ok((loss, direction))
}

/// Encoder-space objective `‖E(x) − reference‖²` with a detached reference;
/// returns the loss and its image gradient.
pub fn encoder_loss(
    x: &Tensor,
    reference_latent: &Tensor,
    codec: &dyn Codec,
) -> Result<(f64, Tensor)> {
    let z = codec.encode(x)?;
    let resid = z.sub(reference_latent)?;
    let loss = resid.norm_sq();
    let grad = codec.encode_vjp(x, &resid.scale(2.0))?;
    Ok((loss, grad))
}

fn dia_pipeline<'a>(objective: Objective, ctx: &'a AttackContext) -> Pipeline<'a> {
    let (kind, aux) = match objective {
        Objective::DiaR => (PlanKind::RoundTrip, AuxSource::Input),
        _ => (PlanKind::Inversion, AuxSource::Latent0),
    };
    Pipeline::new(
        ctx.codec,
        ctx.denoiser,
        ctx.schedule,
        ctx.grid,
        ctx.cond,
        kind,
        aux,
    )
}

fn draw_t_eps(
    ctx: &AttackContext,
    latent_shape: &[usize],
    rng: &mut Rng,
) -> Result<(usize, Tensor)> {
    // Uniform over the grid's timesteps.
    let t = ctx.grid.tau(rng.next_below(ctx.grid.taus().len()));
    let eps = sample_gaussian(rng, latent_shape)?;
    Ok((t, eps))
}

/// Objective value and its gradient with respect to the image. For `sds` the
/// "gradient" is the update direction (the engine applies it with descent
/// sign); `random` has no objective and is rejected here.
pub fn objective_grad(
    objective: Objective,
    x: &Tensor,
    ctx: &AttackContext,
    state: &ObjectiveState,
    rng: &mut Rng,
) -> Result<(f64, Tensor)> {
    match objective {
        Objective::DiaPt => {
            let pipeline = dia_pipeline(objective, ctx);
            let report = trajectory_grad(&pipeline, dia_pt_seed, x, ctx.grad_mode)?;
            Ok((report.loss, report.grad))
        }
        Objective::DiaR => {
            let pipeline = dia_pipeline(objective, ctx);
            let report = trajectory_grad(&pipeline, dia_r_seed, x, ctx.grad_mode)?;
            Ok((report.loss, report.grad))
        }
        Objective::DiaMt => {
            let pipeline = dia_pipeline(objective, ctx);
            let top = ctx
                .schedule
                .alpha_bar(ctx.grid.tau(ctx.grid.steps()))
                .sqrt();
            let report = trajectory_grad(
                &pipeline,
                |terminal, aux| dia_mt_seed(terminal, aux, top),
                x,
                ctx.grad_mode,
            )?;
            Ok((report.loss, report.grad))
        }
        Objective::AdvDm => {
            let latent = ctx.codec.encode(x)?;
            let (t, eps) = draw_t_eps(ctx, latent.shape(), rng)?;
            adv_dm_loss_at(x, ctx, t, &eps)
        }
        Objective::Sds => {
            let latent = ctx.codec.encode(x)?;
            let (t, eps) = draw_t_eps(ctx, latent.shape(), rng)?;
            sds_direction_at(x, ctx, t, &eps)
        }
        Objective::Encoder => {
            let reference = state.reference_latent.as_ref().ok_or_else(|| {
                Error::PlanError("encoder objective needs a prepared reference latent".to_string())
            })?;
            encoder_loss(x, reference, ctx.codec)
        }
        Objective::Random => Err(Error::InvalidConfig(
            "the random control has no objective gradient".to_string(),
        )),
    }
}

/// Forward-only objective value (no gradient); used for final-loss reporting
/// and the purification checks. Stochastic objectives consume the stream the
/// same way as `objective_grad`.
pub fn evaluate_objective(
    objective: Objective,
    x: &Tensor,
    ctx: &AttackContext,
    state: &ObjectiveState,
    rng: &mut Rng,
) -> Result<f64> {
    match objective {
        Objective::DiaPt => {
            let pipeline = dia_pipeline(objective, ctx);
            let trace = pipeline.forward_trace(x)?;
            Ok(dia_pt_seed(&trace.terminal, &trace.stage_inputs[1])?.0)
        }
        Objective::DiaR => {
            let pipeline = dia_pipeline(objective, ctx);
            let trace = pipeline.forward_trace(x)?;
            Ok(dia_r_seed(&trace.terminal, &trace.stage_inputs[0])?.0)
        }
        Objective::DiaMt => {
            let pipeline = dia_pipeline(objective, ctx);
            let trace = pipeline.forward_trace(x)?;
            let top = ctx
                .schedule
                .alpha_bar(ctx.grid.tau(ctx.grid.steps()))
                .sqrt();
            Ok(dia_mt_seed(&trace.terminal, &trace.stage_inputs[1], top)?.0)
        }
        Objective::AdvDm | Objective::Sds => {
            let latent = ctx.codec.encode(x)?;
            let (t, eps) = draw_t_eps(ctx, latent.shape(), rng)?;
            let z_t = forward_noise(&latent, t, &eps, ctx.schedule)?;
            let pred = ctx.denoiser.predict(&z_t, t, &ctx.cond)?;
            Ok(pred.sub(&eps)?.norm_sq())
        }
        Objective::Encoder => {
            let reference = state.reference_latent.as_ref().ok_or_else(|| {
                Error::PlanError("encoder objective needs a prepared reference latent".to_string())
            })?;
            Ok(ctx.codec.encode(x)?.sub(reference)?.norm_sq())
        }
        Objective::Random => Ok(0.0),
    }
}
