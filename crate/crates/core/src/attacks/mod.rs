//! The PGD engine and the immunization objectives: trajectory attacks
//! (dia_pt, dia_r, dia_mt), single-step baselines (adv_dm, sds, encoder),
//! and a random-noise control.

mod config;
mod objectives;
mod pgd;

pub use config::{AttackConfig, Objective};
pub use objectives::{
    adv_dm_loss_at, dia_mt_seed, dia_pt_seed, dia_r_seed, encoder_loss, evaluate_objective,
    objective_grad, sds_direction_at, AttackContext, ObjectiveState,
};
pub use pgd::{
    final_objective, pgd_maximize, pgd_maximize_observed, random_noise_control, run_attack,
    AttackResult, IterObservation,
};
