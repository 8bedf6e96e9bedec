//! Deterministic self-check suite: identity, decomposition, gradient, memory,
//! and format checks with one pass/fail line each. Output is byte-identical
//! across runs for a fixed seed.

use std::collections::BTreeMap;

use dia_core::attacks::{pgd_maximize, AttackConfig, AttackContext, Objective};
use dia_core::diffusion::{
    build_schedule, ddim_invert_step, ddim_sample_step, decompose_trajectory, lambda_coeff,
    rollout_invert, rollout_sample, TimestepGrid,
};
use dia_core::harness::{self, pgm};
use dia_core::models::{
    dataset, Condition, DecodeOp, DenoiserStepOp, EncodeOp, IdentityCodec, LinearCodec,
    LinearDenoiser, MlpDenoiser, ZeroDenoiser,
};
use dia_core::numerics::{
    dft1, finite_difference_grad, max_rel_err, sample_gaussian, vjp_selftest, Rng, ScaleOp, Tensor,
    FD_STEP,
};
use dia_core::trajgrad::{memory_probe, trajectory_grad, AuxSource, GradMode, Pipeline, PlanKind};

struct Check {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn check(name: &'static str, result: dia_core::Result<(bool, String)>) -> Check {
    match result {
        Ok((ok, detail)) => Check { name, ok, detail },
        Err(e) => Check {
            name,
            ok: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Runs every check; returns true when all pass. Prints one line per check.
pub fn run(seed: u64) -> bool {
    let checks = vec![
        check("schedule-product", schedule_product()),
        check("lambda-coefficient", lambda_value()),
        check("shared-eps-inverse", shared_eps_inverse(seed)),
        check("zero-denoiser-roundtrip", zero_roundtrip(seed)),
        check("decomposition-identities", decomposition(seed)),
        check("vjp-selftests", vjp_suite(seed)),
        check("trajectory-grad-vs-fd", trajgrad_fd(seed)),
        check("memory-contract", memory_contract(seed)),
        check("pgd-invariants", pgd_invariants(seed)),
        check("metric-hand-values", metric_values()),
        check("tensor-format-roundtrip", format_roundtrip(seed)),
    ];
    let mut all_ok = true;
    for c in &checks {
        let status = if c.ok { "PASS" } else { "FAIL" };
        println!("{:<26} {status}  {}", c.name, c.detail);
        all_ok &= c.ok;
    }
    let passed = checks.iter().filter(|c| c.ok).count();
    println!("selftest: {passed}/{} checks passed", checks.len());
    all_ok
}

/// Tiny trained network over random latents of the given width; a few epochs
/// are enough to make every layer's pullback nontrivial.
fn micro_mlp(dim: usize, rng: &mut Rng) -> dia_core::Result<MlpDenoiser> {
    let s = build_schedule(1000, 1e-4, 0.02)?;
    let latents: Vec<(Tensor, Condition)> = (0..6)
        .map(|i| {
            let z = sample_gaussian(rng, &[dim]).expect("latent");
            (z.scale(0.3), Condition::class(i % 2))
        })
        .collect();
    let mut cfg = dia_core::models::TrainConfig::new(8, 2);
    cfg.hidden = 24;
    let (mlp, _) = dia_core::models::train_denoiser(&latents, &s, &cfg, rng)?;
    Ok(mlp)
}

fn schedule_product() -> dia_core::Result<(bool, String)> {
    let s = build_schedule(1000, 1e-4, 0.02)?;
    let mut prod = 1.0;
    for t in 0..1000 {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t as f64 / 999.0);
    }
    let err = (s.alpha_bar(999) - prod).abs();
    Ok((err < 1e-12, format!("abar tail err {err:.2e}")))
}

fn lambda_value() -> dia_core::Result<(bool, String)> {
    let s = build_schedule(4, 0.1, 0.4)?;
    let l0 = lambda_coeff(0, &s)?;
    let err = (l0 - 0.29028).abs();
    Ok((err < 1e-4, format!("lambda(0) {l0:.6}")))
}

fn shared_eps_inverse(seed: u64) -> dia_core::Result<(bool, String)> {
    let s = build_schedule(1000, 1e-4, 0.02)?;
    let mut rng = Rng::seed(seed).split("inverse");
    let mut worst = 0.0f64;
    for &(lo, hi) in &[(0usize, 100usize), (100, 999), (37, 41)] {
        let x = sample_gaussian(&mut rng, &[4, 4])?;
        let eps = sample_gaussian(&mut rng, &[4, 4])?;
        let (up, _) = ddim_invert_step(&x, lo, hi, &eps, &s)?;
        let back = ddim_sample_step(&up, hi, lo, &eps, &s)?;
        worst = worst.max(max_rel_err(&back, &x)?);
    }
    Ok((worst < 1e-10, format!("max rel err {worst:.2e}")))
}

fn zero_roundtrip(seed: u64) -> dia_core::Result<(bool, String)> {
    let s = build_schedule(1000, 1e-4, 0.02)?;
    let g = TimestepGrid::leading(1000, 10)?;
    let x = sample_gaussian(&mut Rng::seed(seed).split("zero"), &[8, 8])?;
    let up = rollout_invert(&x, &g, &ZeroDenoiser, &Condition::none(), &s)?;
    let down = rollout_sample(up.terminal(), &g, &ZeroDenoiser, &Condition::none(), &s)?;
    let err = max_rel_err(down.initial(), &x)?;
    Ok((err < 1e-12, format!("roundtrip rel err {err:.2e}")))
}

fn decomposition(seed: u64) -> dia_core::Result<(bool, String)> {
    let s = build_schedule(1000, 1e-4, 0.02)?;
    let g = TimestepGrid::leading(1000, 10)?;
    let mut rng = Rng::seed(seed).split("decomp");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = sample_gaussian(&mut rng, &[6, 6])?.scale(0.4);
        let den = LinearDenoiser::shared(w, None)?;
        let z0 = sample_gaussian(&mut rng, &[6])?;
        let traj = rollout_invert(&z0, &g, &den, &Condition::none(), &s)?;
        let (bias, mt, pt) = decompose_trajectory(&traj, &s)?;
        let h_s = traj.terminal();
        let scale = h_s.norm_sq().sqrt().max(1e-12);
        let e1 = bias.add(&mt)?.sub(h_s)?.norm_sq().sqrt() / scale;
        let e2 = traj.initial().add(&pt)?.sub(h_s)?.norm_sq().sqrt() / scale;
        worst = worst.max(e1).max(e2);
    }
    Ok((worst < 1e-10, format!("max identity err {worst:.2e}")))
}

fn vjp_suite(seed: u64) -> dia_core::Result<(bool, String)> {
    let mut rng = Rng::seed(seed).split("vjp");
    let mut worst = 0.0f64;

    let x = sample_gaussian(&mut rng, &[6])?;
    worst = worst.max(vjp_selftest(&ScaleOp(0.5), &x, &mut rng)?);

    let w = sample_gaussian(&mut rng, &[6, 6])?;
    let lin = LinearDenoiser::shared(w, None)?;
    worst = worst.max(vjp_selftest(
        &DenoiserStepOp {
            denoiser: &lin,
            t: 3,
            cond: Condition::none(),
        },
        &x,
        &mut rng,
    )?);

    // A briefly trained micro network gives the vjp nontrivial weights.
    let mlp = micro_mlp(6, &mut rng)?;
    worst = worst.max(vjp_selftest(
        &DenoiserStepOp {
            denoiser: &mlp,
            t: 11,
            cond: Condition::class(1),
        },
        &x,
        &mut rng,
    )?);

    let codec = LinearCodec::new(
        vec![2, 3],
        sample_gaussian(&mut rng, &[4, 6])?.scale(0.5),
        sample_gaussian(&mut rng, &[4])?.scale(0.1),
        sample_gaussian(&mut rng, &[6, 4])?.scale(0.5),
        sample_gaussian(&mut rng, &[6])?.scale(0.1),
    )?;
    let img = sample_gaussian(&mut rng, &[2, 3])?;
    worst = worst.max(vjp_selftest(&EncodeOp(&codec), &img, &mut rng)?);
    let z = dia_core::models::Codec::encode(&codec, &img)?;
    worst = worst.max(vjp_selftest(&DecodeOp(&codec), &z, &mut rng)?);

    Ok((worst < 1e-5, format!("max vjp err {worst:.2e}")))
}

fn trajgrad_fd(seed: u64) -> dia_core::Result<(bool, String)> {
    let s = build_schedule(100, 1e-3, 0.05)?;
    let g = TimestepGrid::leading(100, 4)?;
    let mut rng = Rng::seed(seed).split("fd");
    let w = sample_gaussian(&mut rng, &[4, 4])?.scale(0.3);
    let den = LinearDenoiser::shared(w, None)?;
    let x = sample_gaussian(&mut rng, &[4])?;
    let pipeline = Pipeline::new(
        &IdentityCodec,
        &den,
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
    )?;
    let frozen = x.clone();
    let fd = finite_difference_grad(
        |p| Ok(pipeline.forward(p)?.sub(&frozen)?.norm_sq()),
        &x,
        FD_STEP,
    )?;
    let err = max_rel_err(&report.grad, &fd)?;
    Ok((err < 1e-6, format!("rel err {err:.2e}")))
}

fn memory_contract(seed: u64) -> dia_core::Result<(bool, String)> {
    let s = build_schedule(1000, 1e-4, 0.02)?;
    let mut rng = Rng::seed(seed).split("mem");
    let mlp = micro_mlp(16, &mut rng)?;
    let x = sample_gaussian(&mut rng, &[16])?.scale(0.2);
    let decomposed = memory_probe(
        &IdentityCodec,
        &mlp,
        &s,
        Condition::class(0),
        PlanKind::Inversion,
        &x,
        GradMode::Decomposed,
    )?;
    let naive = memory_probe(
        &IdentityCodec,
        &mlp,
        &s,
        Condition::class(0),
        PlanKind::Inversion,
        &x,
        GradMode::Naive,
    )?;
    let ok = decomposed.scalar_ratio() <= 1.5 && naive.scalar_ratio() >= 5.0;
    Ok((
        ok,
        format!(
            "decomposed x{:.2}, naive x{:.2}",
            decomposed.scalar_ratio(),
            naive.scalar_ratio()
        ),
    ))
}

fn pgd_invariants(seed: u64) -> dia_core::Result<(bool, String)> {
    let s = build_schedule(100, 1e-3, 0.05)?;
    let g = TimestepGrid::leading(100, 4)?;
    let ctx = AttackContext {
        codec: &IdentityCodec,
        denoiser: &ZeroDenoiser,
        schedule: &s,
        grid: &g,
        cond: Condition::none(),
        grad_mode: GradMode::Decomposed,
    };
    let x0 = dataset::generate_image(0, 8, &mut Rng::seed(seed).split("pgd"));
    let mut cfg = AttackConfig::new(Objective::DiaPt);
    cfg.traj_steps = 4;
    cfg.iterations = 8;
    cfg.seed = seed;
    let a = pgd_maximize(&x0, &cfg, &ctx)?;
    let b = pgd_maximize(&x0, &cfg, &ctx)?;
    let ball_ok = a.delta.max_abs() <= cfg.epsilon + 1e-12;
    let range_ok = a.immunized.data().iter().all(|&v| (0.0..=1.0).contains(&v));
    let det_ok = a.delta == b.delta && a.loss_curve == b.loss_curve;
    Ok((
        ball_ok && range_ok && det_ok,
        format!("linf {:.4}, deterministic {det_ok}", a.delta.max_abs()),
    ))
}

fn metric_values() -> dia_core::Result<(bool, String)> {
    let a = Tensor::full(&[8, 8], 0.5);
    let b = Tensor::full(&[8, 8], 0.6);
    let p = harness::psnr(&a, &b)?;
    let s = harness::ssim(&a, &b)?;
    let m = harness::mse(&a, &b)?;
    let ok = (p - 20.0).abs() < 1e-9
        && (s - 0.6001 / 0.6101).abs() < 1e-12
        && (m - 0.01).abs() < 1e-15
        && harness::psnr(&a, &a)? == 99.0;
    Ok((ok, format!("psnr {p:.3}, ssim {s:.5}")))
}

fn format_roundtrip(seed: u64) -> dia_core::Result<(bool, String)> {
    let mut rng = Rng::seed(seed).split("fmt");
    let t = sample_gaussian(&mut rng, &[3, 5])?;
    let bytes = dft1::to_bytes(&t);
    let back = dft1::read_tensor(&mut bytes.as_slice())?;
    let dft_ok = back == t;

    let img = Tensor::from_fn(&[4, 4], |i| ((i * 37) % 256) as f64 / 255.0);
    let pgm_bytes = pgm::encode_pgm(&img)?;
    let img_back = pgm::decode_pgm(&pgm_bytes)?;
    let pgm_ok = img_back == img;
    // Sorted map ensures the detail line is deterministic.
    let mut status = BTreeMap::new();
    status.insert("dft1", dft_ok);
    status.insert("pgm", pgm_ok);
    let detail: Vec<String> = status.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    Ok((dft_ok && pgm_ok, detail.join(" ")))
}
