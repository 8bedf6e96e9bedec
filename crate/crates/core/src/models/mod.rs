//! Pluggable denoisers, latent codecs, conditioning, the toy dataset
//! generator, and the training loops.

mod codec;
mod condition;
pub mod dataset;
mod denoiser;
mod io;
mod mlp;
mod train;

pub use codec::{Codec, DecodeOp, EncodeOp, IdentityCodec, LinearCodec};
pub use condition::Condition;
pub use denoiser::{
    cfg_predict, predict_eps, Activations, Denoiser, DenoiserStepOp, GuidedDenoiser,
    LinearDenoiser, ZeroDenoiser,
};
pub use io::{CodecKind, TrainedModel};
pub use mlp::{sinusoidal_embedding, MlpConfig, MlpDenoiser};
pub use train::{train_denoiser, train_linear_codec, CodecTrainConfig, TrainConfig, TrainReport};
