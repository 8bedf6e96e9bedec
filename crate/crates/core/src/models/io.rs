use std::collections::BTreeMap;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::numerics::{dft1, Tensor};

use super::codec::{Codec, IdentityCodec, LinearCodec};
use super::mlp::{MlpConfig, MlpDenoiser};

/// Which codec a trained stack uses.
pub enum CodecKind {
    Identity,
    Linear(LinearCodec),
}

impl CodecKind {
    pub fn as_codec(&self) -> &dyn Codec {
        match self {
            CodecKind::Identity => &IdentityCodec,
            CodecKind::Linear(c) => c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CodecKind::Identity => "identity",
            CodecKind::Linear(_) => "linear",
        }
    }
}

/// Everything the editing and attack pipelines need, loadable from one file.
pub struct TrainedModel {
    pub schedule: NoiseSchedule,
    pub codec: CodecKind,
    pub denoiser: MlpDenoiser,
    pub image_shape: Vec<usize>,
    pub class_count: usize,
}

/// On-disk layout: a JSON document whose `tensors` map holds base64-encoded
/// DFT1 blobs, so weights round-trip bit-exactly and the file layout is
/// deterministic (sorted tensor names, struct-ordered fields).
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    schedule: ScheduleConfig,
    class_count: usize,
    image_shape: Vec<usize>,
    codec: CodecSpec,
    denoiser: MlpConfig,
    tensors: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CodecSpec {
    Identity,
    Linear { latent_dim: usize },
}

const FORMAT: &str = "dia-model-v1";

fn encode_tensor(t: &Tensor) -> String {
    base64::engine::general_purpose::STANDARD.encode(dft1::to_bytes(t))
}

fn decode_tensor(s: &str) -> Result<Tensor> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| Error::Format(format!("bad base64 tensor: {e}")))?;
    dft1::read_tensor(&mut bytes.as_slice())
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = BTreeMap::new();
        let d = &self.denoiser;
        tensors.insert("mlp.w1".to_string(), encode_tensor(&d.w1));
        tensors.insert("mlp.b1".to_string(), encode_tensor(&d.b1));
        tensors.insert("mlp.w2".to_string(), encode_tensor(&d.w2));
        tensors.insert("mlp.b2".to_string(), encode_tensor(&d.b2));
        tensors.insert("mlp.w3".to_string(), encode_tensor(&d.w3));
        tensors.insert("mlp.b3".to_string(), encode_tensor(&d.b3));
        tensors.insert("mlp.class_emb".to_string(), encode_tensor(&d.class_emb));
        let codec = match &self.codec {
            CodecKind::Identity => CodecSpec::Identity,
            CodecKind::Linear(c) => {
                tensors.insert("codec.w_enc".to_string(), encode_tensor(&c.w_enc));
                tensors.insert("codec.b_enc".to_string(), encode_tensor(&c.b_enc));
                tensors.insert("codec.w_dec".to_string(), encode_tensor(&c.w_dec));
                tensors.insert("codec.b_dec".to_string(), encode_tensor(&c.b_dec));
                CodecSpec::Linear {
                    latent_dim: c.latent_dim(),
                }
            }
        };
        let file = ModelFile {
            format: FORMAT.to_string(),
            schedule: self.schedule.config(),
            class_count: self.class_count,
            image_shape: self.image_shape.clone(),
            codec,
            denoiser: *d.config(),
            tensors,
        };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != FORMAT {
            return Err(Error::Format(format!(
                "unsupported model format {:?}",
                file.format
            )));
        }
        let get = |name: &str| -> Result<Tensor> {
            decode_tensor(
                file.tensors
                    .get(name)
                    .ok_or_else(|| Error::Format(format!("model file missing tensor {name}")))?,
            )
        };
        let denoiser = MlpDenoiser {
            config: file.denoiser,
            w1: get("mlp.w1")?,
            b1: get("mlp.b1")?,
            w2: get("mlp.w2")?,
            b2: get("mlp.b2")?,
            w3: get("mlp.w3")?,
            b3: get("mlp.b3")?,
            class_emb: get("mlp.class_emb")?,
        };
        let codec = match file.codec {
            CodecSpec::Identity => CodecKind::Identity,
            CodecSpec::Linear { .. } => CodecKind::Linear(LinearCodec::new(
                file.image_shape.clone(),
                get("codec.w_enc")?,
                get("codec.b_enc")?,
                get("codec.w_dec")?,
                get("codec.b_dec")?,
            )?),
        };
        Ok(TrainedModel {
            schedule: file.schedule.build()?,
            codec,
            denoiser,
            image_shape: file.image_shape,
            class_count: file.class_count,
        })
    }
}
