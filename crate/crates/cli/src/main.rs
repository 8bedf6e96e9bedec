mod manifest;
mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dia_core::attacks::{final_objective, run_attack, AttackConfig, AttackContext, Objective};
use dia_core::diffusion::{ScheduleConfig, TimestepGrid};
use dia_core::harness::{
    edit_ddim, pgm, psnr, run_benchmark, train_bench_model, BenchConfig, EditTask,
};
use dia_core::models::{
    dataset, train_denoiser, train_linear_codec, CodecKind, CodecTrainConfig, Condition,
    TrainConfig, TrainedModel,
};
use dia_core::numerics::{dft1, Rng};
use dia_core::trajgrad::GradMode;

use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(
    name = "dia-forge",
    version,
    about = "Toy diffusion stacks: train, immunize, edit, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser (and optionally a linear codec) on the toy dataset.
    Train(TrainArgs),
    /// Compute an adversarial perturbation that disrupts editing.
    Immunize(ImmunizeArgs),
    /// Invert an image and resample it under a target class.
    Edit(EditArgs),
    /// Run the full attack/purify/edit benchmark from a JSON config.
    Bench(BenchArgs),
    /// Run the deterministic identity/decomposition/gradient suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Master seed; dataset, init and optimizer streams derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 600)]
    epochs: usize,
    /// Output model bundle (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, value_enum, default_value_t = CodecFlag::Identity)]
    codec: CodecFlag,
    /// Latent width for the linear codec (defaults to half the pixel count).
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    t_total: usize,
    #[arg(long, default_value_t = 1e-4)]
    beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_end: f64,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CodecFlag {
    Identity,
    Linear,
}

#[derive(Args)]
struct ImmunizeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input image (PGM, P5 8-bit).
    #[arg(long)]
    image: PathBuf,
    /// Immunized image output (PGM).
    #[arg(long)]
    out: PathBuf,
    /// Raw perturbation output (DFT1); defaults to `<out>.delta.dft1`.
    #[arg(long)]
    delta: Option<PathBuf>,
    /// Loss-curve output (JSON); defaults to `<out>.curve.json`.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value = "dia_pt")]
    objective: String,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// PGD step size; defaults to eps/10.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    traj_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Conditioning class for the attack (unconditional when absent).
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, value_enum, default_value_t = GradModeFlag::Decomposed)]
    grad_mode: GradModeFlag,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GradModeFlag {
    Decomposed,
    Naive,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Source class used during inversion (unconditional when absent).
    #[arg(long)]
    source_class: Option<usize>,
    /// Target class used during resampling (unconditional when absent).
    #[arg(long)]
    target_class: Option<usize>,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark description (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Report output (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; DIA_FORGE_THREADS overrides.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes mapped to exit codes: usage/config errors exit 2,
/// runtime failures exit 1.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<dia_core::Error> for CliError {
    fn from(e: dia_core::Error) -> Self {
        match &e {
            dia_core::Error::InvalidConfig(_)
            | dia_core::Error::InvalidSchedule(_)
            | dia_core::Error::InvalidGrid(_) => CliError::Usage(e.to_string()),
            dia_core::Error::Json(je) => {
                CliError::Usage(format!("{e} (line {}, column {})", je.line(), je.column()))
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn usage_io(context: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Usage(format!("{context} {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help/--version.
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Immunize(args) => cmd_immunize(args),
        Command::Edit(args) => cmd_edit(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Selftest(args) => {
            return if selftest::run(args.seed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn flags_hash_bytes(parts: &[String]) -> Vec<u8> {
    parts.join("\x1f").into_bytes()
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let schedule = ScheduleConfig {
        t_total: args.t_total,
        beta_start: args.beta_start,
        beta_end: args.beta_end,
    }
    .build()?;
    let root = Rng::seed(args.seed);
    let data = dataset::generate_dataset(args.count, args.size, &mut root.split("data"));

    let codec = match args.codec {
        CodecFlag::Identity => CodecKind::Identity,
        CodecFlag::Linear => {
            let images: Vec<_> = data.iter().map(|(x, _)| x.clone()).collect();
            let latent_dim = args.latent_dim.unwrap_or(args.size * args.size / 2);
            let (codec, codec_mse) = train_linear_codec(
                &images,
                &CodecTrainConfig::new(latent_dim, 300),
                &mut root.split("codec"),
            )?;
            println!("codec: latent {latent_dim}, train mse {codec_mse:.6e}");
            CodecKind::Linear(codec)
        }
    };

    let latents: dia_core::Result<Vec<_>> = data
        .iter()
        .map(|(x, c)| Ok((codec.as_codec().encode(x)?, *c)))
        .collect();
    let mut train_cfg = TrainConfig::new(args.epochs, dataset::CLASS_COUNT);
    train_cfg.hidden = args.hidden;
    let (denoiser, report) = train_denoiser(
        &latents?,
        &schedule,
        &train_cfg,
        &mut root.split("denoiser"),
    )?;
    println!(
        "held-out loss: initial {:.4}, final {:.4}",
        report.initial_heldout_loss, report.final_heldout_loss
    );

    let model = TrainedModel {
        schedule,
        codec,
        denoiser,
        image_shape: vec![args.size, args.size],
        class_count: dataset::CLASS_COUNT,
    };
    let mut mani = ManifestBuilder::new(
        "train",
        &flags_hash_bytes(&[
            args.seed.to_string(),
            args.epochs.to_string(),
            args.count.to_string(),
            args.size.to_string(),
            args.hidden.to_string(),
        ]),
        args.seed,
    );
    model.save(&args.out)?;
    mani.record_output(&args.out);
    mani.write(&args.out)
        .map_err(|e| usage_io("writing manifest next to", &args.out, e))?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "model file not found: {}",
            path.display()
        )));
    }
    Ok(TrainedModel::load(path)?)
}

fn load_image(path: &Path) -> Result<dia_core::numerics::Tensor, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "image file not found: {}",
            path.display()
        )));
    }
    Ok(pgm::read_pgm_file(path)?)
}

fn cmd_immunize(args: ImmunizeArgs) -> Result<(), CliError> {
    let objective = Objective::parse(&args.objective)?;
    let model = load_model(&args.model)?;
    let image = load_image(&args.image)?;

    let mut cfg = AttackConfig::new(objective);
    cfg.epsilon = args.eps;
    cfg.step_size = args.step;
    cfg.iterations = args.iters;
    cfg.traj_steps = args.traj_steps;
    cfg.seed = args.seed;
    cfg.validate()?;

    let grid = TimestepGrid::leading(model.schedule.t_total(), cfg.traj_steps)?;
    let cond = match args.class {
        Some(id) if id >= model.class_count => {
            return Err(CliError::Usage(format!(
                "class {id} out of range (model has {} classes)",
                model.class_count
            )))
        }
        Some(id) => Condition::class(id),
        None => Condition::none(),
    };
    let ctx = AttackContext {
        codec: model.codec.as_codec(),
        denoiser: &model.denoiser,
        schedule: &model.schedule,
        grid: &grid,
        cond,
        grad_mode: match args.grad_mode {
            GradModeFlag::Decomposed => GradMode::Decomposed,
            GradModeFlag::Naive => GradMode::Naive,
        },
    };
    let result = run_attack(&image, &cfg, &ctx)?;
    let loss_final = final_objective(&result, &cfg, &ctx)?;

    let delta_path = args
        .delta
        .unwrap_or_else(|| with_suffix(&args.out, ".delta.dft1"));
    let curve_path = args
        .curve
        .unwrap_or_else(|| with_suffix(&args.out, ".curve.json"));

    let mut mani = ManifestBuilder::new(
        "immunize",
        &flags_hash_bytes(&[
            args.objective.clone(),
            args.eps.to_string(),
            args.iters.to_string(),
            args.traj_steps.to_string(),
            args.seed.to_string(),
        ]),
        args.seed,
    );
    pgm::write_pgm_file(&args.out, &result.immunized)?;
    mani.record_output(&args.out);
    dft1::write_tensor_file(&delta_path, &result.delta)?;
    mani.record_output(&delta_path);
    let curve_json = serde_json::json!({
        "objective": objective.name(),
        "loss_curve": result.loss_curve,
        "final_loss": loss_final,
    });
    std::fs::write(
        &curve_path,
        serde_json::to_string_pretty(&curve_json).expect("curve json"),
    )
    .map_err(|e| usage_io("writing", &curve_path, e))?;
    mani.record_output(&curve_path);

    // Re-check the budget on the file actually written.
    let reloaded = dft1::read_tensor_file(&delta_path)?;
    let linf = reloaded.max_abs();
    if linf > cfg.epsilon + 1e-12 {
        return Err(CliError::Runtime(format!(
            "reloaded delta exceeds budget: linf {linf} > {}",
            cfg.epsilon
        )));
    }
    println!(
        "immunized with {}: final objective {:.6}, delta linf {:.6} (within {})",
        objective.name(),
        loss_final,
        linf,
        cfg.epsilon
    );
    mani.write(&args.out)
        .map_err(|e| usage_io("writing manifest next to", &args.out, e))?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(suffix);
    PathBuf::from(os)
}

fn cmd_edit(args: EditArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let image = load_image(&args.image)?;
    let to_cond = |c: Option<usize>| match c {
        Some(id) => Condition::class(id),
        None => Condition::none(),
    };
    let task = EditTask {
        source_cond: to_cond(args.source_class),
        target_cond: to_cond(args.target_class),
        steps: args.steps,
        guidance: args.guidance,
    };
    let edited = edit_ddim(&image, &task, &model)?;
    let fidelity = psnr(&edited, &image)?;
    let mut mani = ManifestBuilder::new(
        "edit",
        &flags_hash_bytes(&[task.label(), args.steps.to_string()]),
        0,
    );
    pgm::write_pgm_file(&args.out, &edited)?;
    mani.record_output(&args.out);
    mani.write(&args.out)
        .map_err(|e| usage_io("writing manifest next to", &args.out, e))?;
    println!("edit {}: psnr vs input {:.4} dB", task.label(), fidelity);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if !args.config.exists() {
        return Err(CliError::Usage(format!(
            "config file not found: {}",
            args.config.display()
        )));
    }
    let config_bytes =
        std::fs::read(&args.config).map_err(|e| usage_io("reading", &args.config, e))?;
    let config: BenchConfig = serde_json::from_slice(&config_bytes).map_err(|e| {
        CliError::Usage(format!(
            "bad config: {e} (line {}, column {})",
            e.line(),
            e.column()
        ))
    })?;
    config.validate()?;

    let jobs = match std::env::var("DIA_FORGE_THREADS") {
        Ok(v) => v.parse::<usize>().map_err(|_| {
            CliError::Usage(format!("DIA_FORGE_THREADS must be an integer, got {v:?}"))
        })?,
        Err(_) => args.jobs,
    };

    let mut mani = ManifestBuilder::new("bench", &config_bytes, config.dataset.seed);
    let model = train_bench_model(&config)?;
    let csv = run_benchmark(&config, &model, jobs)?;
    std::fs::write(&args.out, &csv).map_err(|e| usage_io("writing", &args.out, e))?;
    mani.record_output(&args.out);
    mani.write(&args.out)
        .map_err(|e| usage_io("writing manifest next to", &args.out, e))?;
    let rows = csv.lines().count().saturating_sub(1);
    println!("benchmark complete: {rows} rows -> {}", args.out.display());
    Ok(())
}
