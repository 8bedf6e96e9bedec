use std::io::Write;

use crate::error::{Error, Result};
use crate::models::{Condition, Denoiser};
use crate::numerics::{dft1, Tensor};

use super::schedule::{NoiseSchedule, TimestepGrid};
use super::step::{ddim_sample_step, step_coeffs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Inversion,
    Sampling,
}

/// Ordered latents `h_0..h_S` along a timestep grid with per-step Δ terms.
///
/// `states[k]` is the latent at gridpoint `τ_k` regardless of direction;
/// for an inversion trajectory `states[k+1] = scale_k·states[k] + deltas[k]`
/// exactly as produced.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Tensor>,
    pub deltas: Vec<Tensor>,
    pub direction: Direction,
    taus: Vec<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    /// Latent at the highest-noise gridpoint τ_S.
    pub fn terminal(&self) -> &Tensor {
        self.states.last().expect("trajectory has states")
    }

    /// Latent at the lowest-noise gridpoint τ_0.
    pub fn initial(&self) -> &Tensor {
        &self.states[0]
    }

    /// Dumps states then deltas as consecutive DFT1 blobs (debugging aid).
    pub fn dump_dft1<W: Write>(&self, w: &mut W) -> Result<()> {
        dft1::write_tensor_seq(w, &self.states)?;
        dft1::write_tensor_seq(w, &self.deltas)
    }
}

fn query_eps(denoiser: &dyn Denoiser, z: &Tensor, t: usize, cond: &Condition) -> Result<Tensor> {
    let eps = denoiser.predict(z, t, cond)?;
    if eps.shape() != z.shape() {
        return Err(Error::ShapeMismatch {
            expected: z.shape().to_vec(),
            got: eps.shape().to_vec(),
        });
    }
    eps.ensure_finite("denoiser prediction")?;
    Ok(eps)
}

/// Iterates DDIM inversion steps up the grid, querying the denoiser at each
/// source gridpoint, and records every state and Δ term.
pub fn rollout_invert(
    z0: &Tensor,
    grid: &TimestepGrid,
    denoiser: &dyn Denoiser,
    cond: &Condition,
    s: &NoiseSchedule,
) -> Result<Trajectory> {
    let steps = grid.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut deltas = Vec::with_capacity(steps);
    states.push(z0.clone());
    for k in 0..steps {
        let current = &states[k];
        let eps = query_eps(denoiser, current, grid.tau(k), cond)?;
        let (scale, eps_coef) = step_coeffs(s, grid.tau(k), grid.tau(k + 1))?;
        let delta = eps.scale(eps_coef);
        let next = current.scale(scale).add(&delta)?;
        next.ensure_finite("inversion state")?;
        states.push(next);
        deltas.push(delta);
    }
    Ok(Trajectory {
        states,
        deltas,
        direction: Direction::Inversion,
        taus: grid.taus().to_vec(),
    })
}

/// Mirror of [`rollout_invert`]: descends the grid from the terminal latent.
pub fn rollout_sample(
    z_terminal: &Tensor,
    grid: &TimestepGrid,
    denoiser: &dyn Denoiser,
    cond: &Condition,
    s: &NoiseSchedule,
) -> Result<Trajectory> {
    let steps = grid.steps();
    let mut rev_states = Vec::with_capacity(steps + 1);
    let mut rev_deltas = Vec::with_capacity(steps);
    rev_states.push(z_terminal.clone());
    for i in 0..steps {
        let k = steps - i; // from τ_k down to τ_{k−1}
        let current = rev_states.last().unwrap();
        let eps = query_eps(denoiser, current, grid.tau(k), cond)?;
        let next = ddim_sample_step(current, grid.tau(k), grid.tau(k - 1), &eps, s)?;
        next.ensure_finite("sampling state")?;
        // Record the step's noise contribution in the same affine form.
        let (_, eps_coef) = step_coeffs(s, grid.tau(k), grid.tau(k - 1))?;
        rev_deltas.push(eps.scale(eps_coef));
        rev_states.push(next);
    }
    rev_states.reverse();
    rev_deltas.reverse();
    Ok(Trajectory {
        states: rev_states,
        deltas: rev_deltas,
        direction: Direction::Sampling,
        taus: grid.taus().to_vec(),
    })
}

/// Splits an inversion trajectory's terminal state into the decayed start
/// (`bias`), the accumulated model trajectory (`mt`), and the full
/// displacement (`pt`):
///
/// - `bias = √(ᾱ_{τS}/ᾱ_{τ0})·h_0`
/// - `mt   = Σ_k √(ᾱ_{τS}/ᾱ_{τ_{k+1}})·Δ_k`
/// - `pt   = h_S − h_0`
///
/// with the identities `bias + mt = h_S` and `h_0 + pt = h_S`.
pub fn decompose_trajectory(
    traj: &Trajectory,
    s: &NoiseSchedule,
) -> Result<(Tensor, Tensor, Tensor)> {
    if traj.direction != Direction::Inversion {
        return Err(Error::PlanError(
            "decompose_trajectory requires an inversion-direction trajectory".to_string(),
        ));
    }
    let steps = traj.steps();
    let ab_top = s.alpha_bar(traj.taus[steps]);
    let bias = traj.states[0].scale((ab_top / s.alpha_bar(traj.taus[0])).sqrt());
    let mut mt = Tensor::zeros(traj.states[0].shape());
    for k in 0..steps {
        let w = (ab_top / s.alpha_bar(traj.taus[k + 1])).sqrt();
        mt = mt.add_scaled(&traj.deltas[k], w)?;
    }
    let pt = traj.terminal().sub(&traj.states[0])?;
    Ok((bias, mt, pt))
}
