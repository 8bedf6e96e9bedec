use crate::diffusion::{step_coeffs, NoiseSchedule, TimestepGrid};
use crate::error::{Error, Result};
use crate::models::{Activations, Codec, Condition, Denoiser};
use crate::numerics::{mem, Tensor};

/// How the backward walk treats intermediate activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Store only stage-boundary latents; recompute activations per stage.
    Decomposed,
    /// Keep every stage's activations alive, like a full autodiff tape.
    Naive,
}

/// Which stages a pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// encode → S inversion steps.
    Inversion,
    /// encode → S inversion steps → S sampling steps → decode.
    RoundTrip,
}

/// Which stored tensor objectives receive as their detached reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxSource {
    /// The pipeline input (the perturbed image itself).
    Input,
    /// The encoded latent, i.e. the first inversion stage's input.
    Latent0,
}

/// One pipeline stage. Step stages query the denoiser at their source
/// gridpoint's timestep and apply the affine DDIM transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encode,
    /// Inversion step from gridpoint `k` to `k+1`.
    Invert {
        k: usize,
    },
    /// Sampling step from gridpoint `k+1` to `k`.
    Sample {
        k: usize,
    },
    Decode,
}

impl Stage {
    fn label(&self) -> String {
        match self {
            Stage::Encode => "encode".to_string(),
            Stage::Invert { k } => format!("invert[{k}]"),
            Stage::Sample { k } => format!("sample[{k}]"),
            Stage::Decode => "decode".to_string(),
        }
    }
}

enum StageActs {
    Codec,
    Step(Activations),
}

/// A differentiable stage plan over a codec, denoiser, schedule and grid.
pub struct Pipeline<'a> {
    pub codec: &'a dyn Codec,
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub grid: &'a TimestepGrid,
    pub cond: Condition,
    pub aux: AuxSource,
    plan: Vec<Stage>,
    kind: PlanKind,
}

/// Stored forward pass: the input of every stage plus the terminal output.
pub struct Trace {
    pub stage_inputs: Vec<Tensor>,
    pub terminal: Tensor,
}

/// Gradient of a trajectory loss with respect to the pipeline input, plus the
/// loss value and the backward walk's live-allocation high-water mark
/// (excluding the stored stage-boundary latents in decomposed mode).
pub struct GradReport {
    pub grad: Tensor,
    pub loss: f64,
    pub peak_live_tensors: usize,
    pub peak_live_scalars: usize,
}

fn build_plan(kind: PlanKind, steps: usize) -> Vec<Stage> {
    let mut plan = vec![Stage::Encode];
    for k in 0..steps {
        plan.push(Stage::Invert { k });
    }
    if kind == PlanKind::RoundTrip {
        for k in (0..steps).rev() {
            plan.push(Stage::Sample { k });
        }
        plan.push(Stage::Decode);
    }
    plan
}

impl<'a> Pipeline<'a> {
    pub fn new(
        codec: &'a dyn Codec,
        denoiser: &'a dyn Denoiser,
        schedule: &'a NoiseSchedule,
        grid: &'a TimestepGrid,
        cond: Condition,
        kind: PlanKind,
        aux: AuxSource,
    ) -> Self {
        Pipeline {
            codec,
            denoiser,
            schedule,
            grid,
            cond,
            aux,
            plan: build_plan(kind, grid.steps()),
            kind,
        }
    }

    pub fn kind(&self) -> PlanKind {
        self.kind
    }

    pub fn stages(&self) -> &[Stage] {
        &self.plan
    }

    fn step_spans(&self, stage: Stage) -> (usize, usize) {
        match stage {
            Stage::Invert { k } => (self.grid.tau(k), self.grid.tau(k + 1)),
            Stage::Sample { k } => (self.grid.tau(k + 1), self.grid.tau(k)),
            _ => unreachable!("step_spans on codec stage"),
        }
    }

    /// Runs one stage forward.
    pub fn forward_stage(&self, idx: usize, input: &Tensor) -> Result<Tensor> {
        match self.plan[idx] {
            Stage::Encode => self.codec.encode(input),
            Stage::Decode => self.codec.decode(input),
            step => {
                let (from, to) = self.step_spans(step);
                let eps = self.denoiser.predict(input, from, &self.cond)?;
                let (scale, coef) = step_coeffs(self.schedule, from, to)?;
                input.scale(scale).add_scaled(&eps, coef)
            }
        }
    }

    fn forward_stage_acts(&self, idx: usize, input: &Tensor) -> Result<(Tensor, StageActs)> {
        match self.plan[idx] {
            Stage::Encode => Ok((self.codec.encode(input)?, StageActs::Codec)),
            Stage::Decode => Ok((self.codec.decode(input)?, StageActs::Codec)),
            step => {
                let (from, to) = self.step_spans(step);
                let (eps, acts) = self.denoiser.forward_acts(input, from, &self.cond)?;
                let (scale, coef) = step_coeffs(self.schedule, from, to)?;
                let out = input.scale(scale).add_scaled(&eps, coef)?;
                Ok((out, StageActs::Step(acts)))
            }
        }
    }

    /// Pulls a cotangent back through one stage, recomputing activations from
    /// the stored stage input.
    pub fn vjp_stage(&self, idx: usize, stored_input: &Tensor, cot: &Tensor) -> Result<Tensor> {
        match self.plan[idx] {
            Stage::Encode => self.codec.encode_vjp(stored_input, cot),
            Stage::Decode => self.codec.decode_vjp(stored_input, cot),
            step => {
                let (from, to) = self.step_spans(step);
                let (scale, coef) = step_coeffs(self.schedule, from, to)?;
                let through_eps = self.denoiser.vjp(stored_input, from, &self.cond, cot)?;
                cot.scale(scale).add_scaled(&through_eps, coef)
            }
        }
    }

    fn vjp_stage_from_acts(
        &self,
        idx: usize,
        stored_input: &Tensor,
        acts: &StageActs,
        cot: &Tensor,
    ) -> Result<Tensor> {
        match (&self.plan[idx], acts) {
            (Stage::Encode, _) => self.codec.encode_vjp(stored_input, cot),
            (Stage::Decode, _) => self.codec.decode_vjp(stored_input, cot),
            (step, StageActs::Step(a)) => {
                let (from, to) = self.step_spans(*step);
                let (scale, coef) = step_coeffs(self.schedule, from, to)?;
                let through_eps = self.denoiser.vjp_from_acts(a, cot)?;
                cot.scale(scale).add_scaled(&through_eps, coef)
            }
            _ => Err(Error::PlanError("activation kind mismatch".to_string())),
        }
    }

    /// Forward pass storing only stage-boundary latents.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        let mut stage_inputs = Vec::with_capacity(self.plan.len());
        let mut current = x.clone();
        for idx in 0..self.plan.len() {
            let next = self.forward_stage(idx, &current)?;
            next.ensure_finite(&self.plan[idx].label())?;
            stage_inputs.push(current);
            current = next;
        }
        Ok(Trace {
            stage_inputs,
            terminal: current,
        })
    }

    /// Plain forward evaluation (terminal only).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut current = x.clone();
        for idx in 0..self.plan.len() {
            current = self.forward_stage(idx, &current)?;
        }
        current.ensure_finite("pipeline terminal")?;
        Ok(current)
    }

    fn aux_of(&self, trace: &Trace) -> Tensor {
        match self.aux {
            AuxSource::Input => trace.stage_inputs[0].clone(),
            // Plans start with an encode stage, so the encoded latent is the
            // second stored input.
            AuxSource::Latent0 => trace.stage_inputs[1].clone(),
        }
    }
}

/// Computes the gradient of `loss(terminal, aux)` with respect to `x` by the
/// per-stage cotangent walk. The `aux` tensor is handed to the loss as a
/// detached reference: no gradient flows through it.
pub fn trajectory_grad(
    pipeline: &Pipeline,
    loss: impl FnOnce(&Tensor, &Tensor) -> Result<(f64, Tensor)>,
    x: &Tensor,
    mode: GradMode,
) -> Result<GradReport> {
    match mode {
        GradMode::Decomposed => {
            let trace = pipeline.forward_trace(x)?;
            let aux = pipeline.aux_of(&trace);
            // Everything allocated before this mark (the stored latents, the
            // forward pass, the model) is excluded from the reported peak.
            let mark = mem::mark();
            let (loss_value, seed) = loss(&trace.terminal, &aux)?;
            seed.check_same_shape(&trace.terminal)?;
            let mut cot = seed;
            for idx in (0..trace.stage_inputs.len()).rev() {
                cot = pipeline.vjp_stage(idx, &trace.stage_inputs[idx], &cot)?;
                if !cot.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("running cotangent after {}", pipeline.plan[idx].label()),
                    });
                }
            }
            let (pt, ps) = mem::peak_since(mark);
            finish_report(cot, loss_value, pt, ps, x)
        }
        GradMode::Naive => {
            let mark = mem::mark();
            let mut stage_inputs = Vec::with_capacity(pipeline.plan.len());
            let mut acts = Vec::with_capacity(pipeline.plan.len());
            let mut current = x.clone();
            for idx in 0..pipeline.plan.len() {
                let (next, a) = pipeline.forward_stage_acts(idx, &current)?;
                next.ensure_finite(&pipeline.plan[idx].label())?;
                stage_inputs.push(current);
                acts.push(a);
                current = next;
            }
            let trace = Trace {
                stage_inputs,
                terminal: current,
            };
            let aux = pipeline.aux_of(&trace);
            let (loss_value, seed) = loss(&trace.terminal, &aux)?;
            seed.check_same_shape(&trace.terminal)?;
            let mut cot = seed;
            for idx in (0..trace.stage_inputs.len()).rev() {
                cot = pipeline.vjp_stage_from_acts(
                    idx,
                    &trace.stage_inputs[idx],
                    &acts[idx],
                    &cot,
                )?;
                if !cot.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("running cotangent after {}", pipeline.plan[idx].label()),
                    });
                }
            }
            let (pt, ps) = mem::peak_since(mark);
            finish_report(cot, loss_value, pt, ps, x)
        }
    }
}

fn finish_report(
    grad: Tensor,
    loss: f64,
    peak_tensors: usize,
    peak_scalars: usize,
    x: &Tensor,
) -> Result<GradReport> {
    if grad.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape().to_vec(),
            got: grad.shape().to_vec(),
        });
    }
    if peak_scalars == 0 {
        return Err(Error::Instrumentation(
            "allocation gauge recorded no activity during the backward walk".to_string(),
        ));
    }
    Ok(GradReport {
        grad,
        loss,
        peak_live_tensors: peak_tensors,
        peak_live_scalars: peak_scalars,
    })
}

/// Peak live allocations of the gradient walk at two trajectory lengths.
#[derive(Debug, Clone, Copy)]
pub struct MemoryProbe {
    pub s5_tensors: usize,
    pub s5_scalars: usize,
    pub s50_tensors: usize,
    pub s50_scalars: usize,
}

impl MemoryProbe {
    /// Growth of the scalar high-water mark from S=5 to S=50.
    pub fn scalar_ratio(&self) -> f64 {
        self.s50_scalars as f64 / self.s5_scalars.max(1) as f64
    }
}

/// Runs the gradient of `‖terminal‖²` at S=5 and S=50 over fresh grids and
/// reports both peaks.
pub fn memory_probe(
    codec: &dyn Codec,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cond: Condition,
    kind: PlanKind,
    x: &Tensor,
    mode: GradMode,
) -> Result<MemoryProbe> {
    let mut peaks = [(0usize, 0usize); 2];
    for (slot, steps) in [5usize, 50].iter().enumerate() {
        let grid = TimestepGrid::leading(schedule.t_total(), *steps)?;
        let pipeline = Pipeline::new(
            codec,
            denoiser,
            schedule,
            &grid,
            cond,
            kind,
            AuxSource::Input,
        );
        let report = trajectory_grad(
            &pipeline,
            |terminal, _aux| Ok((terminal.norm_sq(), terminal.scale(2.0))),
            x,
            mode,
        )?;
        peaks[slot] = (report.peak_live_tensors, report.peak_live_scalars);
    }
    Ok(MemoryProbe {
        s5_tensors: peaks[0].0,
        s5_scalars: peaks[0].1,
        s50_tensors: peaks[1].0,
        s50_scalars: peaks[1].1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_schedule;
    use crate::models::{IdentityCodec, LinearDenoiser, MlpConfig, MlpDenoiser, ZeroDenoiser};
    use crate::numerics::{finite_difference_grad, max_rel_err, sample_gaussian, Rng, FD_STEP};

    fn setup() -> (NoiseSchedule, TimestepGrid) {
        let s = build_schedule(200, 1e-3, 0.03).unwrap();
        let g = TimestepGrid::leading(200, 6).unwrap();
        (s, g)
    }

    fn small_mlp(n: usize, seed: u64) -> MlpDenoiser {
        let mut cfg = MlpConfig::new(n, 2);
        cfg.hidden = 24;
        let mut mlp = MlpDenoiser::init(cfg, &mut Rng::seed(seed));
        let mut rng = Rng::seed(seed + 1);
        mlp.w3 = Tensor::from_fn(&[n, 24], |_| rng.next_range(-0.3, 0.3));
        mlp.b3 = Tensor::from_fn(&[n], |_| rng.next_range(-0.05, 0.05));
        mlp
    }

    #[test]
    fn closed_form_linear_pipeline_gradient() {
        // Zero denoiser, identity codec, inversion-only plan, loss
        // ‖h_S − h_0‖² with h_0 detached: h_S = c·x, so grad = 2c(c−1)·x.
        let (s, g) = setup();
        let x = sample_gaussian(&mut Rng::seed(3), &[4]).unwrap();
        let pipeline = Pipeline::new(
            &IdentityCodec,
            &ZeroDenoiser,
            &s,
            &g,
            Condition::none(),
            PlanKind::Inversion,
            AuxSource::Latent0,
        );
        let report = trajectory_grad(
            &pipeline,
            |terminal, aux| {
                let resid = terminal.sub(aux)?;
                Ok((resid.norm_sq(), resid.scale(2.0)))
            },
            &x,
            GradMode::Decomposed,
        )
        .unwrap();
        let c = (s.alpha_bar(g.tau(g.steps())) / s.alpha_bar(g.tau(0))).sqrt();
        let expect = x.scale(2.0 * c * (c - 1.0));
        let rel = max_rel_err(&report.grad, &expect).unwrap();
        assert!(rel < 1e-10, "closed-form rel err {rel}");
        let expect_loss = (c - 1.0) * (c - 1.0) * x.norm_sq();
        assert!((report.loss - expect_loss).abs() <= 1e-10 * expect_loss.abs());
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let (s, g) = setup();
        let den = small_mlp(4, 0);
        let x = sample_gaussian(&mut Rng::seed(5), &[4]).unwrap();
        let pipeline = Pipeline::new(
            &IdentityCodec,
            &den,
            &s,
            &g,
            Condition::class(0),
            PlanKind::RoundTrip,
            AuxSource::Input,
        );
        let report = trajectory_grad(
            &pipeline,
            |terminal, _| Ok((1.0, Tensor::zeros(terminal.shape()))),
            &x,
            GradMode::Decomposed,
        )
        .unwrap();
        assert_eq!(report.grad.max_abs(), 0.0);
    }

    #[test]
    fn matches_finite_differences_roundtrip_mlp() {
        let (s, g) = setup();
        let den = small_mlp(4, 2);
        let x = sample_gaussian(&mut Rng::seed(8), &[4]).unwrap().scale(0.3);
        let pipeline = Pipeline::new(
            &IdentityCodec,
            &den,
            &s,
            &g,
            Condition::class(1),
            PlanKind::RoundTrip,
            AuxSource::Input,
        );
        let loss = |terminal: &Tensor, aux: &Tensor| {
            let resid = terminal.sub(aux)?;
            Ok((resid.norm_sq(), resid.scale(2.0)))
        };
        let report = trajectory_grad(&pipeline, loss, &x, GradMode::Decomposed).unwrap();
        // Frozen-aux oracle: the detached reference is fixed at the base point.
        let frozen_aux = x.clone();
        let fd = finite_difference_grad(
            |p| {
                let out = pipeline.forward(p)?;
                Ok(out.sub(&frozen_aux)?.norm_sq())
            },
            &x,
            FD_STEP,
        )
        .unwrap();
        let rel = max_rel_err(&report.grad, &fd).unwrap();
        assert!(rel < 1e-5, "fd rel err {rel}");
    }

    #[test]
    fn naive_and_decomposed_agree() {
        let (s, g) = setup();
        let den = small_mlp(4, 4);
        let x = sample_gaussian(&mut Rng::seed(9), &[4]).unwrap().scale(0.4);
        let pipeline = Pipeline::new(
            &IdentityCodec,
            &den,
            &s,
            &g,
            Condition::class(0),
            PlanKind::Inversion,
            AuxSource::Latent0,
        );
        let loss = |terminal: &Tensor, aux: &Tensor| {
            let resid = terminal.sub(aux)?;
            Ok((resid.norm_sq(), resid.scale(2.0)))
        };
        let a = trajectory_grad(&pipeline, loss, &x, GradMode::Decomposed).unwrap();
        let b = trajectory_grad(&pipeline, loss, &x, GradMode::Naive).unwrap();
        assert_eq!(a.grad.data(), b.grad.data(), "modes disagree");
        assert_eq!(a.loss, b.loss);
    }

    /// Splitting the plan at any stage and composing the partial cotangent
    /// walks reproduces the full gradient.
    #[test]
    fn chain_rule_associativity_under_splits() {
        let (s, g) = setup();
        let den = small_mlp(3, 6);
        let x = sample_gaussian(&mut Rng::seed(11), &[3])
            .unwrap()
            .scale(0.3);
        let pipeline = Pipeline::new(
            &IdentityCodec,
            &den,
            &s,
            &g,
            Condition::class(1),
            PlanKind::RoundTrip,
            AuxSource::Input,
        );
        let trace = pipeline.forward_trace(&x).unwrap();
        let seed = trace.terminal.scale(2.0);
        // Reference: one continuous walk.
        let mut full = seed.clone();
        for idx in (0..trace.stage_inputs.len()).rev() {
            full = pipeline
                .vjp_stage(idx, &trace.stage_inputs[idx], &full)
                .unwrap();
        }
        for split in 1..trace.stage_inputs.len() {
            let mut upper = seed.clone();
            for idx in (split..trace.stage_inputs.len()).rev() {
                upper = pipeline
                    .vjp_stage(idx, &trace.stage_inputs[idx], &upper)
                    .unwrap();
            }
            let mut lower = upper;
            for idx in (0..split).rev() {
                lower = pipeline
                    .vjp_stage(idx, &trace.stage_inputs[idx], &lower)
                    .unwrap();
            }
            let rel = max_rel_err(&lower, &full).unwrap();
            assert!(rel < 1e-10, "split at {split}: rel err {rel}");
        }
    }

    #[test]
    fn decomposed_peak_is_step_count_independent() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let den = small_mlp(16, 1);
        let x = sample_gaussian(&mut Rng::seed(2), &[16])
            .unwrap()
            .scale(0.2);
        let probe = memory_probe(
            &IdentityCodec,
            &den,
            &s,
            Condition::class(0),
            PlanKind::Inversion,
            &x,
            GradMode::Decomposed,
        )
        .unwrap();
        let ratio = probe.scalar_ratio();
        assert!(ratio <= 1.5, "decomposed ratio {ratio} ({probe:?})");
    }

    #[test]
    fn naive_peak_grows_with_step_count() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let den = small_mlp(16, 1);
        let x = sample_gaussian(&mut Rng::seed(2), &[16])
            .unwrap()
            .scale(0.2);
        let probe = memory_probe(
            &IdentityCodec,
            &den,
            &s,
            Condition::class(0),
            PlanKind::Inversion,
            &x,
            GradMode::Naive,
        )
        .unwrap();
        let ratio = probe.scalar_ratio();
        assert!(ratio >= 5.0, "naive ratio {ratio} ({probe:?})");
    }

    #[test]
    fn zero_denoiser_peak_ratio_is_one() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let x = sample_gaussian(&mut Rng::seed(4), &[8]).unwrap();
        let probe = memory_probe(
            &IdentityCodec,
            &ZeroDenoiser,
            &s,
            Condition::none(),
            PlanKind::Inversion,
            &x,
            GradMode::Decomposed,
        )
        .unwrap();
        let ratio = probe.scalar_ratio();
        assert!((ratio - 1.0).abs() <= 0.1, "zero-denoiser ratio {ratio}");
    }

    #[test]
    fn linear_denoiser_inversion_grad_matches_fd() {
        let (s, g) = setup();
        let mut rng = Rng::seed(14);
        let w = sample_gaussian(&mut rng, &[4, 4]).unwrap().scale(0.3);
        let den = LinearDenoiser::shared(w, None).unwrap();
        let x = sample_gaussian(&mut rng, &[4]).unwrap();
        let pipeline = Pipeline::new(
            &IdentityCodec,
            &den,
            &s,
            &g,
            Condition::none(),
            PlanKind::Inversion,
            AuxSource::Latent0,
        );
        let loss = |terminal: &Tensor, aux: &Tensor| {
            let resid = terminal.sub(aux)?;
            Ok((resid.norm_sq(), resid.scale(2.0)))
        };
        let report = trajectory_grad(&pipeline, loss, &x, GradMode::Decomposed).unwrap();
        let frozen = x.clone();
        let fd = finite_difference_grad(
            |p| {
                let out = pipeline.forward(p)?;
                Ok(out.sub(&frozen)?.norm_sq())
            },
            &x,
            FD_STEP,
        )
        .unwrap();
        let rel = max_rel_err(&report.grad, &fd).unwrap();
        assert!(rel < 1e-6, "linear inversion fd rel err {rel}");
    }
}
