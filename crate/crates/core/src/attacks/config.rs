use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which loss the perturbation maximizes (or, for `sds`, descends).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Norm of the inversion displacement from the encoded input.
    DiaPt,
    /// Invert-then-reconstruct residual against the input image.
    DiaR,
    /// Terminal-state residual against the decayed encoded input.
    DiaMt,
    /// Single-step diffusion loss at a resampled timestep.
    AdvDm,
    /// Codec-only pullback of the diffusion residual, applied with descent.
    Sds,
    /// Push the encoded latent away from the original image's latent.
    Encoder,
    /// Seeded ±ε noise; the efficacy control.
    Random,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::DiaPt,
        Objective::DiaR,
        Objective::DiaMt,
        Objective::AdvDm,
        Objective::Sds,
        Objective::Encoder,
        Objective::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Objective::DiaPt => "dia_pt",
            Objective::DiaR => "dia_r",
            Objective::DiaMt => "dia_mt",
            Objective::AdvDm => "adv_dm",
            Objective::Sds => "sds",
            Objective::Encoder => "encoder",
            Objective::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Objective> {
        Objective::ALL
            .iter()
            .copied()
            .find(|o| o.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Objective::ALL.iter().map(|o| o.name()).collect();
                Error::InvalidConfig(format!(
                    "unknown objective {s:?}; valid: {}",
                    valid.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Perturbation budget and optimization knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub objective: Objective,
    /// L∞ budget in image units.
    pub epsilon: f64,
    /// PGD step α; defaults to ε/10 when absent.
    #[serde(default)]
    pub step_size: Option<f64>,
    pub iterations: usize,
    /// Trajectory length S for the trajectory objectives.
    pub traj_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(objective: Objective) -> Self {
        AttackConfig {
            objective,
            epsilon: 0.05,
            step_size: None,
            iterations: 20,
            traj_steps: 10,
            seed: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        let step = self.step();
        if !(step > 0.0 && step <= self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "step size must satisfy 0 < step <= epsilon, got {step} (epsilon {})",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".to_string()));
        }
        if self.traj_steps == 0 {
            return Err(Error::InvalidConfig("traj_steps must be >= 1".to_string()));
        }
        Ok(())
    }
}
