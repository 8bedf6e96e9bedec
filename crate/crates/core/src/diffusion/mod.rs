//! Noise schedules, the forward diffusing map, deterministic DDIM steps,
//! full trajectory rollouts, and the terminal-state decompositions.

mod schedule;
mod step;
mod trajectory;

pub use schedule::{
    build_schedule, forward_noise, lambda_coeff, NoiseSchedule, ScheduleConfig, TimestepGrid,
};
pub use step::{ddim_invert_step, ddim_sample_step, step_coeffs};
pub use trajectory::{decompose_trajectory, rollout_invert, rollout_sample, Direction, Trajectory};
