//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). Criteria share one
//! trained fixture; everything is seeded, so results are reproducible.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use dia_core::attacks::{
    evaluate_objective, final_objective, pgd_maximize_observed, random_noise_control, AttackConfig,
    AttackContext, Objective, ObjectiveState,
};
use dia_core::diffusion::{
    build_schedule, decompose_trajectory, rollout_invert, rollout_sample, NoiseSchedule,
    TimestepGrid,
};
use dia_core::harness::{edit_ddim, mse, psnr, purify_gaussian, EditTask};
use dia_core::models::{
    dataset, train_denoiser, train_linear_codec, Codec, CodecKind, CodecTrainConfig, Condition,
    LinearCodec, MlpDenoiser, TrainConfig, TrainedModel, ZeroDenoiser,
};
use dia_core::numerics::{
    finite_difference_grad, max_rel_err, sample_gaussian, Rng, Tensor, FD_STEP,
};
use dia_core::trajgrad::{memory_probe, trajectory_grad, AuxSource, GradMode, Pipeline, PlanKind};

const TRAIN_SEED: u64 = 7;
const DATA_SEED: u64 = 101;
const EVAL_SEED: u64 = 202;
const EVAL_COUNT: usize = 64;
const EPSILON: f64 = 0.05;
const TRAJ_STEPS: usize = 10;

struct IterStat {
    linf: f64,
    min_pix: f64,
    max_pix: f64,
}

struct AttackRun {
    immunized: Tensor,
    initial_loss: f64,
    final_loss: f64,
    iter_stats: Vec<IterStat>,
}

struct Fixture {
    model: TrainedModel,
    linear_codec: LinearCodec,
    linear_denoiser: MlpDenoiser,
    eval: Vec<(Tensor, Condition)>,
    attacks: BTreeMap<&'static str, Vec<AttackRun>>,
    attack_secs: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let schedule = build_schedule(1000, 1e-4, 0.02).unwrap();
        let train_data = dataset::generate_dataset(128, 8, &mut Rng::seed(DATA_SEED));
        let cfg = TrainConfig::new(600, 2);
        let (denoiser, _) =
            train_denoiser(&train_data, &schedule, &cfg, &mut Rng::seed(TRAIN_SEED)).unwrap();
        let model = TrainedModel {
            schedule: build_schedule(1000, 1e-4, 0.02).unwrap(),
            codec: CodecKind::Identity,
            denoiser,
            image_shape: vec![8, 8],
            class_count: 2,
        };

        // A second stack through the trained affine autoencoder.
        let images: Vec<Tensor> = train_data.iter().map(|(x, _)| x.clone()).collect();
        let (linear_codec, _) =
            train_linear_codec(&images, &CodecTrainConfig::new(32, 300), &mut Rng::seed(33))
                .unwrap();
        let latents: Vec<(Tensor, Condition)> = train_data
            .iter()
            .map(|(x, c)| (linear_codec.encode(x).unwrap(), *c))
            .collect();
        let lat_cfg = TrainConfig::new(120, 2);
        let (linear_denoiser, _) =
            train_denoiser(&latents, &model.schedule, &lat_cfg, &mut Rng::seed(34)).unwrap();

        let eval = dataset::generate_dataset(EVAL_COUNT, 8, &mut Rng::seed(EVAL_SEED));

        // Immunize every evaluation image with every method once.
        let started = Instant::now();
        let grid = TimestepGrid::leading(1000, TRAJ_STEPS).unwrap();
        let mut attacks: BTreeMap<&'static str, Vec<AttackRun>> = BTreeMap::new();
        for objective in Objective::ALL {
            let mut runs = Vec::with_capacity(eval.len());
            for (idx, (image, cond)) in eval.iter().enumerate() {
                let mut acfg = AttackConfig::new(objective);
                acfg.seed = Rng::seed(11)
                    .split_u64(idx as u64)
                    .split(objective.name())
                    .next_u64();
                let ctx = AttackContext {
                    codec: model.codec.as_codec(),
                    denoiser: &model.denoiser,
                    schedule: &model.schedule,
                    grid: &grid,
                    cond: *cond,
                    grad_mode: GradMode::Decomposed,
                };
                let mut iter_stats = Vec::new();
                let result = if objective == Objective::Random {
                    random_noise_control(image, &acfg, &mut Rng::seed(acfg.seed)).unwrap()
                } else {
                    pgd_maximize_observed(image, &acfg, &ctx, |obs| {
                        iter_stats.push(IterStat {
                            linf: obs.delta.max_abs(),
                            min_pix: obs.perturbed.data().iter().cloned().fold(1.0, f64::min),
                            max_pix: obs.perturbed.data().iter().cloned().fold(0.0, f64::max),
                        });
                    })
                    .unwrap()
                };
                let final_loss = final_objective(&result, &acfg, &ctx).unwrap();
                runs.push(AttackRun {
                    initial_loss: result.loss_curve[0],
                    final_loss,
                    immunized: result.immunized,
                    iter_stats,
                });
            }
            attacks.insert(objective.name(), runs);
        }
        let attack_secs = started.elapsed().as_secs_f64();

        Fixture {
            model,
            linear_codec,
            linear_denoiser,
            eval,
            attacks,
            attack_secs,
        }
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {}  {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Criterion 1: terminal-state decomposition identities hold to 1e-10 over
/// 100 random trajectories at S=10 on the trained model, in under 5 s.
#[test]
fn criterion_1_decomposition_identities() {
    let fx = fixture();
    let started = Instant::now();
    let grid = TimestepGrid::leading(1000, TRAJ_STEPS).unwrap();
    let mut rng = Rng::seed(404);
    let mut worst = 0.0f64;
    for k in 0..100 {
        // Half generator images, half scaled Gaussian latents.
        let z0 = if k % 2 == 0 {
            dataset::generate_image(k % 2, 8, &mut rng)
        } else {
            sample_gaussian(&mut rng, &[8, 8]).unwrap().scale(0.5)
        };
        let cond = Condition::class(k % 2);
        let traj =
            rollout_invert(&z0, &grid, &fx.model.denoiser, &cond, &fx.model.schedule).unwrap();
        let (bias, mt, pt) = decompose_trajectory(&traj, &fx.model.schedule).unwrap();
        let h_s = traj.terminal();
        let scale = h_s.norm_sq().sqrt().max(1e-12);
        let e1 = bias.add(&mt).unwrap().sub(h_s).unwrap().norm_sq().sqrt() / scale;
        let e2 = traj
            .initial()
            .add(&pt)
            .unwrap()
            .sub(h_s)
            .unwrap()
            .norm_sq()
            .sqrt()
            / scale;
        worst = worst.max(e1).max(e2);
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < 1e-10 && secs < 5.0;
    report(
        "criterion-1 decomposition",
        pass,
        &format!("max rel err {worst:.2e} over 100 trajectories in {secs:.2}s"),
    );
    assert!(pass, "worst {worst:.3e}, {secs:.2}s");
}

fn dia_fd_check(
    objective: Objective,
    codec: &dyn Codec,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    image: &Tensor,
    cond: Condition,
) -> f64 {
    let grid = TimestepGrid::leading(schedule.t_total(), TRAJ_STEPS).unwrap();
    let (kind, aux) = match objective {
        Objective::DiaR => (PlanKind::RoundTrip, AuxSource::Input),
        _ => (PlanKind::Inversion, AuxSource::Latent0),
    };
    let pipeline = Pipeline::new(codec, denoiser, schedule, &grid, cond, kind, aux);
    let top = schedule.alpha_bar(grid.tau(grid.steps())).sqrt();
    let loss = |terminal: &Tensor, aux_t: &Tensor| {
        let reference = match objective {
            Objective::DiaMt => aux_t.scale(top),
            _ => aux_t.clone(),
        };
        let resid = terminal.sub(&reference)?;
        Ok((resid.norm_sq(), resid.scale(2.0)))
    };
    let grad = trajectory_grad(&pipeline, loss, image, GradMode::Decomposed)
        .unwrap()
        .grad;

    // Finite-difference oracle with the detached reference frozen at the
    // center point.
    let frozen = match (objective, aux) {
        (_, AuxSource::Input) => image.clone(),
        (_, AuxSource::Latent0) => codec.encode(image).unwrap(),
    };
    let frozen = match objective {
        Objective::DiaMt => frozen.scale(top),
        _ => frozen,
    };
    let fd = finite_difference_grad(
        |p| Ok(pipeline.forward(p)?.sub(&frozen)?.norm_sq()),
        image,
        FD_STEP,
    )
    .unwrap();
    max_rel_err(&grad, &fd).unwrap()
}

use dia_core::models::Denoiser;

/// Criterion 2: trajectory gradients match central finite differences for all
/// three trajectory objectives and both codecs, max rel err < 1e-5 across 10
/// seeded images, in under 2 minutes.
#[test]
fn criterion_2_gradient_oracle() {
    let fx = fixture();
    let started = Instant::now();
    let mut rng = Rng::seed(505);
    let mut worst = 0.0f64;
    for k in 0..10 {
        let image = dataset::generate_image(k % 2, 8, &mut rng);
        let cond = Condition::class(k % 2);
        for objective in [Objective::DiaPt, Objective::DiaR, Objective::DiaMt] {
            let e_id = dia_fd_check(
                objective,
                fx.model.codec.as_codec(),
                &fx.model.denoiser,
                &fx.model.schedule,
                &image,
                cond,
            );
            let e_lin = dia_fd_check(
                objective,
                &fx.linear_codec,
                &fx.linear_denoiser,
                &fx.model.schedule,
                &image,
                cond,
            );
            worst = worst.max(e_id).max(e_lin);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < 1e-5 && secs < 120.0;
    report(
        "criterion-2 gradient-oracle",
        pass,
        &format!("max rel err {worst:.2e} (3 objectives x 2 codecs x 10 seeds) in {secs:.1}s"),
    );
    assert!(pass, "worst {worst:.3e}, {secs:.1}s");
}

/// Criterion 3: intra-stage live-allocation peak grows at most 1.5x from S=5
/// to S=50 in decomposed mode and at least 5x in naive full-tape mode.
#[test]
fn criterion_3_memory_contract() {
    let fx = fixture();
    let image = dataset::generate_image(0, 8, &mut Rng::seed(606));
    let decomposed = memory_probe(
        fx.model.codec.as_codec(),
        &fx.model.denoiser,
        &fx.model.schedule,
        Condition::class(0),
        PlanKind::Inversion,
        &image,
        GradMode::Decomposed,
    )
    .unwrap();
    let naive = memory_probe(
        fx.model.codec.as_codec(),
        &fx.model.denoiser,
        &fx.model.schedule,
        Condition::class(0),
        PlanKind::Inversion,
        &image,
        GradMode::Naive,
    )
    .unwrap();
    let pass = decomposed.scalar_ratio() <= 1.5 && naive.scalar_ratio() >= 5.0;
    report(
        "criterion-3 memory",
        pass,
        &format!(
            "decomposed S50/S5 x{:.2} (<= 1.5), naive x{:.2} (>= 5)",
            decomposed.scalar_ratio(),
            naive.scalar_ratio()
        ),
    );
    assert!(pass, "decomposed {:?} naive {:?}", decomposed, naive);
}

/// Criterion 4: every iteration of every attack keeps the perturbation inside
/// the ε-ball and the image inside unit range; the trajectory objectives end
/// at or above their starting value on at least 95% of images.
#[test]
fn criterion_4_pgd_invariants() {
    let fx = fixture();
    let mut ball_violations = 0usize;
    let mut checked_iters = 0usize;
    for runs in fx.attacks.values() {
        for run in runs {
            for stat in &run.iter_stats {
                checked_iters += 1;
                if stat.linf > EPSILON + 1e-12
                    || stat.min_pix < -1e-12
                    || stat.max_pix > 1.0 + 1e-12
                {
                    ball_violations += 1;
                }
            }
            // The control has no iterations; check its final state.
            if run.iter_stats.is_empty() {
                checked_iters += 1;
                if run
                    .immunized
                    .data()
                    .iter()
                    .any(|&v| !(0.0..=1.0).contains(&v))
                {
                    ball_violations += 1;
                }
            }
        }
    }

    let mut ascent_ok = 0usize;
    let mut ascent_total = 0usize;
    for name in ["dia_pt", "dia_r", "dia_mt"] {
        for run in &fx.attacks[name] {
            ascent_total += 1;
            if run.final_loss >= run.initial_loss {
                ascent_ok += 1;
            }
        }
    }
    let ascent_frac = ascent_ok as f64 / ascent_total as f64;
    let pass = ball_violations == 0 && ascent_frac >= 0.95;
    report(
        "criterion-4 pgd-invariants",
        pass,
        &format!(
            "0 of {checked_iters} iterate checks violated; ascent on {ascent_ok}/{ascent_total} ({:.1}%)",
            100.0 * ascent_frac
        ),
    );
    assert!(
        pass,
        "violations {ball_violations}, ascent {ascent_frac:.3}"
    );
}

/// Criterion 5: exact zero-denoiser round trip; trained identity edit at
/// S=10 reaches 25 dB median; median reconstruction error is non-increasing
/// from S=5 through S=20.
#[test]
fn criterion_5_roundtrip_fidelity() {
    let fx = fixture();
    // Zero denoiser + identity codec: exact to 1e-12.
    let grid = TimestepGrid::leading(1000, TRAJ_STEPS).unwrap();
    let x = dataset::generate_image(0, 8, &mut Rng::seed(707));
    let up = rollout_invert(
        &x,
        &grid,
        &ZeroDenoiser,
        &Condition::none(),
        &fx.model.schedule,
    )
    .unwrap();
    let down = rollout_sample(
        up.terminal(),
        &grid,
        &ZeroDenoiser,
        &Condition::none(),
        &fx.model.schedule,
    )
    .unwrap();
    let exact_err = max_rel_err(down.initial(), &x).unwrap();

    // Trained identity edit PSNR and the step trend.
    let mut medians = Vec::new();
    for steps in [5usize, 10, 20] {
        let mut mses = Vec::new();
        for (image, cond) in &fx.eval {
            let task = EditTask::reconstruction(*cond, steps);
            let edited = edit_ddim(image, &task, &fx.model).unwrap();
            mses.push(mse(&edited, image).unwrap());
        }
        medians.push(median(mses));
    }
    let psnr_s10 = 10.0 * (1.0 / medians[1]).log10();
    let trend_ok = medians[0] >= medians[1] && medians[1] >= medians[2];
    let pass = exact_err < 1e-12 && psnr_s10 >= 25.0 && trend_ok;
    report(
        "criterion-5 roundtrip",
        pass,
        &format!(
            "zero-denoiser err {exact_err:.2e}; S=10 median {psnr_s10:.2} dB; median mse S5/S10/S20 {:.5}/{:.5}/{:.5}",
            medians[0], medians[1], medians[2]
        ),
    );
    assert!(
        pass,
        "err {exact_err:.2e}, psnr {psnr_s10:.2}, medians {medians:?}"
    );
}

/// Criterion 6: the efficacy ordering of the benchmark protocol. Each
/// trajectory method's median edited-vs-natural MSE must reach twice the
/// random control and at least the single-step adv_dm baseline.
///
/// Measured finding shipped with this artifact: the reconstruction attack
/// exceeds the control by around three orders of magnitude, but the
/// inversion-displacement attack lands BELOW the control — its perturbations
/// concentrate in directions the strongly contracting toy reverse process
/// repairs. The assert states the criterion as written and is expected red on
/// the dia_pt clause; see the printed ratios.
#[test]
fn criterion_6_efficacy_ordering() {
    let fx = fixture();
    let started = Instant::now();
    let mut med = BTreeMap::new();
    for name in ["dia_pt", "dia_r", "adv_dm", "random"] {
        let mut scores = Vec::new();
        for ((image, cond), run) in fx.eval.iter().zip(&fx.attacks[name]) {
            let task = EditTask::reconstruction(*cond, TRAJ_STEPS);
            let natural = edit_ddim(image, &task, &fx.model).unwrap();
            let edited = edit_ddim(&run.immunized, &task, &fx.model).unwrap();
            scores.push(mse(&edited, &natural).unwrap());
        }
        med.insert(name, median(scores));
    }
    let secs = fx.attack_secs + started.elapsed().as_secs_f64();
    let rnd = med["random"].max(1e-15);
    let clauses = [
        ("dia_r >= 2x random", med["dia_r"] >= 2.0 * rnd),
        ("dia_r >= adv_dm", med["dia_r"] >= med["adv_dm"]),
        ("dia_pt >= 2x random", med["dia_pt"] >= 2.0 * rnd),
        ("dia_pt >= adv_dm", med["dia_pt"] >= med["adv_dm"]),
    ];
    let pass = clauses.iter().all(|(_, ok)| *ok) && secs < 600.0;
    report(
        "criterion-6 efficacy",
        pass,
        &format!(
            "medians: dia_r {:.5} ({:.1}x rnd), dia_pt {:.6} ({:.2}x rnd), adv_dm {:.6}, random {:.6}; clauses {:?}; {secs:.0}s",
            med["dia_r"],
            med["dia_r"] / rnd,
            med["dia_pt"],
            med["dia_pt"] / rnd,
            med["adv_dm"],
            med["random"],
            clauses.iter().map(|(n, ok)| format!("{n}={ok}")).collect::<Vec<_>>(),
        ),
    );
    assert!(
        pass,
        "efficacy ordering as stated does not hold: {:?} (dia_r/rnd {:.1}x, dia_pt/rnd {:.2}x)",
        clauses,
        med["dia_r"] / rnd,
        med["dia_pt"] / rnd
    );
}

/// Criterion 7: Gaussian purification at σ=0.1 strictly decreases the
/// reconstruction-attack objective on at least 80% of immunized images.
#[test]
fn criterion_7_purification_direction() {
    let fx = fixture();
    let grid = TimestepGrid::leading(1000, TRAJ_STEPS).unwrap();
    let mut decreased = 0usize;
    for (idx, ((_, cond), run)) in fx.eval.iter().zip(&fx.attacks["dia_r"]).enumerate() {
        let ctx = AttackContext {
            codec: fx.model.codec.as_codec(),
            denoiser: &fx.model.denoiser,
            schedule: &fx.model.schedule,
            grid: &grid,
            cond: *cond,
            grad_mode: GradMode::Decomposed,
        };
        let state = ObjectiveState::prepare(Objective::DiaR, &run.immunized, &ctx).unwrap();
        let before = evaluate_objective(
            Objective::DiaR,
            &run.immunized,
            &ctx,
            &state,
            &mut Rng::seed(0),
        )
        .unwrap();
        let purified =
            purify_gaussian(&run.immunized, 0.1, &mut Rng::seed(9000 + idx as u64)).unwrap();
        let state_p = ObjectiveState::prepare(Objective::DiaR, &purified, &ctx).unwrap();
        let after = evaluate_objective(
            Objective::DiaR,
            &purified,
            &ctx,
            &state_p,
            &mut Rng::seed(0),
        )
        .unwrap();
        if after < before {
            decreased += 1;
        }
    }
    let frac = decreased as f64 / fx.eval.len() as f64;
    let pass = frac >= 0.8;
    report(
        "criterion-7 purification",
        pass,
        &format!(
            "objective decreased on {decreased}/{} images ({:.1}%)",
            fx.eval.len(),
            100.0 * frac
        ),
    );
    assert!(pass, "decreased on {:.1}%", 100.0 * frac);
}

/// Supporting check from the editing contract: class-flip edits land closer
/// to the target class centroid than the source's on at least 70% of images.
#[test]
fn trained_edit_moves_toward_target_class() {
    let fx = fixture();
    let mut cen_rng = Rng::seed(55);
    let centroids = [
        dataset::class_centroid(0, 8, 64, &mut cen_rng),
        dataset::class_centroid(1, 8, 64, &mut cen_rng),
    ];
    let mut wins = 0usize;
    for (image, cond) in &fx.eval {
        let src = cond.class_id.unwrap();
        let tgt = 1 - src;
        let task = EditTask {
            source_cond: *cond,
            target_cond: Condition::class(tgt),
            steps: TRAJ_STEPS,
            guidance: 1.0,
        };
        let edited = edit_ddim(image, &task, &fx.model).unwrap();
        let d_tgt = mse(&edited, &centroids[tgt]).unwrap();
        let d_src = mse(&edited, &centroids[src]).unwrap();
        if d_tgt < d_src {
            wins += 1;
        }
    }
    let frac = wins as f64 / fx.eval.len() as f64;
    println!(
        "supporting class-flip centroid: {wins}/{} ({:.1}%)",
        fx.eval.len(),
        100.0 * frac
    );
    assert!(frac >= 0.7, "only {:.1}% moved toward target", 100.0 * frac);
}

/// Supporting check: the trained round trip at S=10 stays below the loose
/// 1e-2 reconstruction bound on generator data.
#[test]
fn trained_roundtrip_mse_within_loose_bound() {
    let fx = fixture();
    let grid = TimestepGrid::leading(1000, TRAJ_STEPS).unwrap();
    let mut mses = Vec::new();
    for (image, cond) in fx.eval.iter().take(32) {
        let up =
            rollout_invert(image, &grid, &fx.model.denoiser, cond, &fx.model.schedule).unwrap();
        let down = rollout_sample(
            up.terminal(),
            &grid,
            &fx.model.denoiser,
            cond,
            &fx.model.schedule,
        )
        .unwrap();
        mses.push(mse(&down.initial().clamp(0.0, 1.0), image).unwrap());
    }
    let med = median(mses);
    println!("supporting roundtrip S=10 median mse {med:.5}");
    assert!(med < 1e-2, "median mse {med}");
}

/// Supporting check: identity-edit PSNR agrees between the harness metric and
/// an independent computation.
#[test]
fn psnr_consistency_on_trained_edit() {
    let fx = fixture();
    let (image, cond) = &fx.eval[0];
    let task = EditTask::reconstruction(*cond, TRAJ_STEPS);
    let edited = edit_ddim(image, &task, &fx.model).unwrap();
    let reported = psnr(&edited, image).unwrap();
    let e = mse(&edited, image).unwrap();
    let expect = if e < 1e-10 { 99.0 } else { -10.0 * e.log10() };
    assert!((reported - expect).abs() < 1e-12);
}
