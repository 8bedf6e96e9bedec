//! Editing pipeline, purification transforms, image-quality metrics, PGM I/O,
//! and the benchmark runner comparing natural and immunized edits.

mod bench;
mod edit;
mod metrics;
pub mod pgm;
mod purify;

pub use bench::{
    run_benchmark, train_bench_model, BenchConfig, BenchEdit, BenchRecord, BenchTrainConfig,
    CodecChoice, DatasetConfig, GridConfig, CSV_HEADER,
};
pub use edit::{edit_ddim, EditTask};
pub use metrics::{linf, mse, psnr, ssim};
pub use purify::{purify_crop_resize, purify_gaussian, purify_quantize, Purification};
