use serde::{Deserialize, Serialize};

use crate::diffusion::{rollout_invert, rollout_sample, TimestepGrid};
use crate::error::{Error, Result};
use crate::models::{Condition, GuidedDenoiser, TrainedModel};
use crate::numerics::Tensor;

/// One editing instruction: invert under the source condition, resample under
/// the target condition at the given guidance scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditTask {
    pub source_cond: Condition,
    pub target_cond: Condition,
    pub steps: usize,
    pub guidance: f64,
}

impl EditTask {
    pub fn reconstruction(cond: Condition, steps: usize) -> Self {
        EditTask {
            source_cond: cond,
            target_cond: cond,
            steps,
            guidance: 1.0,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "{}->{}@s{}w{}",
            self.source_cond, self.target_cond, self.steps, self.guidance
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("edit steps must be >= 1".to_string()));
        }
        if self.guidance != 0.0 && self.target_cond.is_none() {
            return Err(Error::InvalidConfig(
                "guided editing needs a target condition".to_string(),
            ));
        }
        Ok(())
    }
}

/// Deterministic invert-then-resample editing:
/// `decode(sample(invert(encode(x), source), target))`, clamped to unit range.
pub fn edit_ddim(x: &Tensor, task: &EditTask, model: &TrainedModel) -> Result<Tensor> {
    task.validate()?;
    let codec = model.codec.as_codec();
    let grid = TimestepGrid::leading(model.schedule.t_total(), task.steps)?;
    let latent = codec.encode(x)?;
    let up = rollout_invert(
        &latent,
        &grid,
        &model.denoiser,
        &task.source_cond,
        &model.schedule,
    )?;
    let guided = GuidedDenoiser {
        inner: &model.denoiser,
        cond: task.target_cond,
        guidance: task.guidance,
    };
    let down = rollout_sample(
        up.terminal(),
        &grid,
        &guided,
        &Condition::none(),
        &model.schedule,
    )?;
    Ok(codec.decode(down.initial())?.clamp(0.0, 1.0))
}
