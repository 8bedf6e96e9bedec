//! Browser demo over the core toolkit: train a tiny diffusion stack in the
//! page, immunize a toy image against invert-and-resample editing, and compare
//! natural vs disrupted edits side by side. Compiled to WebAssembly with
//! wasm-bindgen; the same API works on the host for tests.

use wasm_bindgen::prelude::*;

use dia_core::attacks::{run_attack, AttackConfig, AttackContext, Objective};
use dia_core::diffusion::{build_schedule, TimestepGrid};
use dia_core::harness::{edit_ddim, mse, purify_gaussian, EditTask};
use dia_core::models::{dataset, train_denoiser, CodecKind, Condition, TrainConfig, TrainedModel};
use dia_core::numerics::{Rng, Tensor};
use dia_core::trajgrad::GradMode;

const SIZE: usize = 8;

fn err_js(e: dia_core::Error) -> String {
    e.to_string()
}

fn to_bytes(t: &Tensor) -> Vec<u8> {
    t.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

struct LastAttack {
    index: usize,
    immunized: Tensor,
    delta: Tensor,
    epsilon: f64,
    loss_curve: Vec<f64>,
}

/// One interactive session: a trained stack plus a gallery of toy images.
#[wasm_bindgen]
pub struct Demo {
    model: TrainedModel,
    images: Vec<(Tensor, Condition)>,
    last: Option<LastAttack>,
}

#[wasm_bindgen]
impl Demo {
    /// Trains the stack from scratch (seeded, a few seconds in the browser).
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u64,
        train_count: usize,
        epochs: usize,
        gallery: usize,
    ) -> Result<Demo, String> {
        let schedule = build_schedule(1000, 1e-4, 0.02).map_err(err_js)?;
        let root = Rng::seed(seed);
        let train_data =
            dataset::generate_dataset(train_count.max(8), SIZE, &mut root.split("data"));
        let cfg = TrainConfig::new(epochs.max(1), dataset::CLASS_COUNT);
        let (denoiser, _) = train_denoiser(&train_data, &schedule, &cfg, &mut root.split("train"))
            .map_err(err_js)?;
        let model = TrainedModel {
            schedule,
            codec: CodecKind::Identity,
            denoiser,
            image_shape: vec![SIZE, SIZE],
            class_count: dataset::CLASS_COUNT,
        };
        let images = dataset::generate_dataset(gallery.max(2), SIZE, &mut root.split("gallery"));
        Ok(Demo {
            model,
            images,
            last: None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn image_size(&self) -> usize {
        SIZE
    }

    pub fn image_class(&self, index: usize) -> Result<usize, String> {
        self.checked(index).map(|(_, c)| c.class_id.unwrap_or(0))
    }

    /// Grayscale bytes of a gallery image.
    pub fn source_pixels(&self, index: usize) -> Result<Vec<u8>, String> {
        self.checked(index).map(|(x, _)| to_bytes(x))
    }

    /// Runs the selected immunization and returns the immunized pixels.
    /// The perturbation, its budget, and the loss curve stay readable until
    /// the next call.
    pub fn immunize(
        &mut self,
        index: usize,
        objective: &str,
        epsilon: f64,
        iterations: usize,
        traj_steps: usize,
    ) -> Result<Vec<u8>, String> {
        let objective = Objective::parse(objective).map_err(err_js)?;
        let (image, cond) = self.checked(index)?;
        let image = image.clone();
        let cond = *cond;
        let mut cfg = AttackConfig::new(objective);
        cfg.epsilon = epsilon;
        cfg.iterations = iterations.max(1);
        cfg.traj_steps = traj_steps.max(1);
        cfg.seed = index as u64;
        cfg.validate().map_err(err_js)?;
        let grid =
            TimestepGrid::leading(self.model.schedule.t_total(), cfg.traj_steps).map_err(err_js)?;
        let ctx = AttackContext {
            codec: self.model.codec.as_codec(),
            denoiser: &self.model.denoiser,
            schedule: &self.model.schedule,
            grid: &grid,
            cond,
            grad_mode: GradMode::Decomposed,
        };
        let result = run_attack(&image, &cfg, &ctx).map_err(err_js)?;
        let pixels = to_bytes(&result.immunized);
        self.last = Some(LastAttack {
            index,
            immunized: result.immunized,
            delta: result.delta,
            epsilon,
            loss_curve: result.loss_curve,
        });
        Ok(pixels)
    }

    /// |δ|/ε rendered as grayscale bytes (white = full budget).
    pub fn delta_heatmap(&self) -> Result<Vec<u8>, String> {
        let last = self
            .last
            .as_ref()
            .ok_or_else(|| "immunize first".to_string())?;
        let eps = last.epsilon.max(1e-9);
        Ok(last
            .delta
            .data()
            .iter()
            .map(|&v| ((v.abs() / eps) * 255.0).round() as u8)
            .collect())
    }

    pub fn loss_curve(&self) -> Vec<f64> {
        self.last
            .as_ref()
            .map(|l| l.loss_curve.clone())
            .unwrap_or_default()
    }

    /// Edits both the clean image and the current immunized one (optionally
    /// purified with Gaussian noise first) and reports the disruption.
    pub fn edit_pair(
        &self,
        target_class: i32,
        steps: usize,
        guidance: f64,
        purify_sigma: f64,
    ) -> Result<EditOutcome, String> {
        let last = self
            .last
            .as_ref()
            .ok_or_else(|| "immunize first".to_string())?;
        let (image, cond) = self.checked(last.index)?;
        let target = if target_class < 0 {
            *cond
        } else {
            Condition::class(target_class as usize)
        };
        let task = EditTask {
            source_cond: *cond,
            target_cond: target,
            steps: steps.max(1),
            guidance,
        };
        let natural = edit_ddim(image, &task, &self.model).map_err(err_js)?;
        let input = if purify_sigma > 0.0 {
            purify_gaussian(&last.immunized, purify_sigma, &mut Rng::seed(42)).map_err(err_js)?
        } else {
            last.immunized.clone()
        };
        let attacked = edit_ddim(&input, &task, &self.model).map_err(err_js)?;
        let disruption = mse(&attacked, &natural).map_err(err_js)?;
        Ok(EditOutcome {
            natural: to_bytes(&natural),
            attacked: to_bytes(&attacked),
            disruption,
        })
    }

    fn checked(&self, index: usize) -> Result<&(Tensor, Condition), String> {
        self.images
            .get(index)
            .ok_or_else(|| format!("image index {index} out of range"))
    }
}

/// Natural and disrupted edit outputs plus their mean squared difference.
#[wasm_bindgen]
pub struct EditOutcome {
    natural: Vec<u8>,
    attacked: Vec<u8>,
    disruption: f64,
}

#[wasm_bindgen]
impl EditOutcome {
    #[wasm_bindgen(getter)]
    pub fn natural(&self) -> Vec<u8> {
        self.natural.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn attacked(&self) -> Vec<u8> {
        self.attacked.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn disruption(&self) -> f64 {
        self.disruption
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_session_runs_on_host() {
        let mut demo = Demo::new(5, 8, 3, 4).unwrap();
        assert_eq!(demo.image_count(), 4);
        let src = demo.source_pixels(0).unwrap();
        assert_eq!(src.len(), 64);

        let imm = demo.immunize(0, "dia_r", 0.05, 3, 4).unwrap();
        assert_eq!(imm.len(), 64);
        assert_eq!(demo.loss_curve().len(), 3);
        let heat = demo.delta_heatmap().unwrap();
        assert_eq!(heat.len(), 64);

        let outcome = demo.edit_pair(1, 4, 1.0, 0.0).unwrap();
        assert_eq!(outcome.natural().len(), 64);
        assert_eq!(outcome.attacked().len(), 64);
        assert!(outcome.disruption() >= 0.0);
    }

    #[test]
    fn unknown_objective_is_reported() {
        let mut demo = Demo::new(5, 8, 2, 2).unwrap();
        assert!(demo.immunize(0, "bogus", 0.05, 2, 4).is_err());
    }

    #[test]
    fn pixel_conversion_is_clamped() {
        let t = Tensor::from_vec(&[2], vec![-0.5, 1.5]).unwrap();
        assert_eq!(to_bytes(&t), vec![0, 255]);
    }
}
