use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{final_objective, run_attack, AttackConfig, AttackContext};
use crate::diffusion::{ScheduleConfig, TimestepGrid};
use crate::error::{Error, Result};
use crate::harness::edit::{edit_ddim, EditTask};
use crate::harness::metrics::{linf, mse, psnr, ssim};
use crate::harness::purify::Purification;
use crate::models::{
    dataset, train_denoiser, train_linear_codec, CodecKind, CodecTrainConfig, Condition,
    TrainConfig, TrainedModel,
};
use crate::numerics::{Rng, Tensor};
use crate::trajgrad::GradMode;

/// Dataset block of the benchmark config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
}

/// Training block (denoiser epochs and the run's model seed).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BenchTrainConfig {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for BenchTrainConfig {
    fn default() -> Self {
        BenchTrainConfig {
            epochs: 600,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecChoice {
    #[default]
    Identity,
    Linear,
}

/// One edit entry of the benchmark config.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchEdit {
    /// Invert and resample under the image's own class.
    Reconstruct { steps: usize, guidance: f64 },
    /// Resample under the other class (two-class datasets).
    ClassFlip { steps: usize, guidance: f64 },
}

impl BenchEdit {
    fn task_for(&self, cond: Condition) -> Result<EditTask> {
        match *self {
            BenchEdit::Reconstruct { steps, guidance } => Ok(EditTask {
                source_cond: cond,
                target_cond: cond,
                steps,
                guidance,
            }),
            BenchEdit::ClassFlip { steps, guidance } => {
                let src = cond.class_id.ok_or_else(|| {
                    Error::InvalidConfig("class_flip edit needs class-labelled images".to_string())
                })?;
                Ok(EditTask {
                    source_cond: cond,
                    target_cond: Condition::class(1 - src),
                    steps,
                    guidance,
                })
            }
        }
    }

    fn label(&self) -> String {
        match self {
            BenchEdit::Reconstruct { steps, guidance } => format!("recon@s{steps}w{guidance}"),
            BenchEdit::ClassFlip { steps, guidance } => format!("flip@s{steps}w{guidance}"),
        }
    }
}

/// Full benchmark description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub train: BenchTrainConfig,
    #[serde(default)]
    pub codec: CodecChoice,
    pub attacks: Vec<AttackConfig>,
    pub edits: Vec<BenchEdit>,
    pub purifications: Vec<Purification>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.count == 0 || self.dataset.size < 4 {
            return Err(Error::InvalidConfig(
                "dataset needs count >= 1 and size >= 4".to_string(),
            ));
        }
        if self.attacks.is_empty() || self.edits.is_empty() || self.purifications.is_empty() {
            return Err(Error::InvalidConfig(
                "attacks, edits and purifications must be non-empty".to_string(),
            ));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        Ok(())
    }
}

/// One evaluated cell of the report.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub image_id: String,
    pub method: String,
    pub edit: String,
    pub purify: String,
    pub psnr_src: f64,
    pub mse_src: f64,
    pub ssim_src: f64,
    pub linf_delta: f64,
    pub mse_vs_natural: f64,
    pub loss_final: f64,
}

pub const CSV_HEADER: &str =
    "image_id,method,edit,purify,psnr_src,mse_src,ssim_src,linf_delta,mse_vs_natural,loss_final";

impl BenchRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.8},{:.6},{:.8},{:.8},{:.8}",
            self.image_id,
            self.method,
            self.edit,
            self.purify,
            self.psnr_src,
            self.mse_src,
            self.ssim_src,
            self.linf_delta,
            self.mse_vs_natural,
            self.loss_final
        )
    }
}

/// Trains the configured stack (codec first when linear, then the denoiser on
/// encoded latents).
pub fn train_bench_model(config: &BenchConfig) -> Result<TrainedModel> {
    let schedule = config.schedule.build()?;
    let data = dataset::generate_dataset(
        config.dataset.count.max(32),
        config.dataset.size,
        &mut Rng::seed(config.dataset.seed ^ 0x7261_696e),
    );
    let rng = Rng::seed(config.train.seed);
    let codec = match config.codec {
        CodecChoice::Identity => CodecKind::Identity,
        CodecChoice::Linear => {
            let images: Vec<Tensor> = data.iter().map(|(x, _)| x.clone()).collect();
            let latent_dim = (config.dataset.size * config.dataset.size) / 2;
            let (codec, _) = train_linear_codec(
                &images,
                &CodecTrainConfig::new(latent_dim, 300),
                &mut rng.split("codec"),
            )?;
            CodecKind::Linear(codec)
        }
    };
    let latents: Result<Vec<(Tensor, Condition)>> = data
        .iter()
        .map(|(x, c)| Ok((codec.as_codec().encode(x)?, *c)))
        .collect();
    let train_cfg = TrainConfig::new(config.train.epochs, dataset::CLASS_COUNT);
    let (denoiser, _) =
        train_denoiser(&latents?, &schedule, &train_cfg, &mut rng.split("denoiser"))?;
    Ok(TrainedModel {
        schedule,
        codec,
        denoiser,
        image_shape: vec![config.dataset.size, config.dataset.size],
        class_count: dataset::CLASS_COUNT,
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Runs the full protocol: per image, per attack, per purification, per edit —
/// attack, purify, edit, score against the image's natural edit. Emits one CSV
/// row per cell plus per-(method, edit, purify) median aggregate rows.
///
/// Cells own split RNG streams keyed by image and method, so the report is
/// byte-identical regardless of worker count.
pub fn run_benchmark(config: &BenchConfig, model: &TrainedModel, jobs: usize) -> Result<String> {
    config.validate()?;
    let images = dataset::generate_dataset(
        config.dataset.count,
        config.dataset.size,
        &mut Rng::seed(config.dataset.seed),
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;

    let per_image: Result<Vec<Vec<BenchRecord>>> = pool.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(idx, (image, cond))| bench_one_image(config, model, idx, image, *cond))
            .collect()
    });

    let mut records: Vec<BenchRecord> = per_image?.into_iter().flatten().collect();

    // Aggregate rows: median over images per (method, edit, purify), in the
    // config's declaration order.
    let mut aggregates = Vec::new();
    for attack in &config.attacks {
        for edit in &config.edits {
            for purify in &config.purifications {
                let cell: Vec<&BenchRecord> = records
                    .iter()
                    .filter(|r| {
                        r.method == attack.objective.name()
                            && r.edit == edit.label()
                            && r.purify == purify.label()
                    })
                    .collect();
                aggregates.push(BenchRecord {
                    image_id: "median".to_string(),
                    method: attack.objective.name().to_string(),
                    edit: edit.label(),
                    purify: purify.label(),
                    psnr_src: median(cell.iter().map(|r| r.psnr_src).collect()),
                    mse_src: median(cell.iter().map(|r| r.mse_src).collect()),
                    ssim_src: median(cell.iter().map(|r| r.ssim_src).collect()),
                    linf_delta: median(cell.iter().map(|r| r.linf_delta).collect()),
                    mse_vs_natural: median(cell.iter().map(|r| r.mse_vs_natural).collect()),
                    loss_final: median(cell.iter().map(|r| r.loss_final).collect()),
                });
            }
        }
    }
    records.extend(aggregates);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    Ok(csv)
}

fn bench_one_image(
    config: &BenchConfig,
    model: &TrainedModel,
    idx: usize,
    image: &Tensor,
    cond: Condition,
) -> Result<Vec<BenchRecord>> {
    let image_id = format!("img{idx:03}");
    let codec = model.codec.as_codec();

    // Natural-edit baselines, one per edit task, shared by every method.
    let mut naturals = Vec::with_capacity(config.edits.len());
    for edit in &config.edits {
        let task = edit.task_for(cond)?;
        naturals.push(edit_ddim(image, &task, model)?);
    }

    let mut rows = Vec::new();
    for attack in &config.attacks {
        // Per-cell stream keyed by (image, method).
        let cell_rng = Rng::seed(attack.seed)
            .split_u64(idx as u64)
            .split(attack.objective.name());
        let mut cfg = attack.clone();
        cfg.seed = cell_rng.clone().next_u64();

        let grid = TimestepGrid::leading(model.schedule.t_total(), cfg.traj_steps)?;
        let ctx = AttackContext {
            codec,
            denoiser: &model.denoiser,
            schedule: &model.schedule,
            grid: &grid,
            cond,
            grad_mode: GradMode::Decomposed,
        };
        let result = run_attack(image, &cfg, &ctx)?;
        let loss_final = final_objective(&result, &cfg, &ctx)?;

        for (purify, purify_cfg) in config.purifications.iter().enumerate() {
            let mut purify_rng = cell_rng.split_u64(1000 + purify as u64);
            let purified = purify_cfg.apply(&result.immunized, &mut purify_rng)?;
            for (edit, natural) in config.edits.iter().zip(naturals.iter()) {
                let task = edit.task_for(cond)?;
                let edited = edit_ddim(&purified, &task, model)?;
                rows.push(BenchRecord {
                    image_id: image_id.clone(),
                    method: cfg.objective.name().to_string(),
                    edit: edit.label(),
                    purify: purify_cfg.label(),
                    psnr_src: psnr(&edited, image)?,
                    mse_src: mse(&edited, image)?,
                    ssim_src: ssim(&edited, image)?,
                    linf_delta: linf(&result.immunized, image)?,
                    mse_vs_natural: mse(&edited, natural)?,
                    loss_final,
                });
            }
        }
    }
    Ok(rows)
}
