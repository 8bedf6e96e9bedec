use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::condition::Condition;
use super::denoiser::{Activations, Denoiser};

/// Architecture hyperparameters for [`MlpDenoiser`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpConfig {
    pub latent_numel: usize,
    pub hidden: usize,
    pub t_emb_dim: usize,
    pub class_emb_dim: usize,
    pub class_count: usize,
}

impl MlpConfig {
    pub fn new(latent_numel: usize, class_count: usize) -> Self {
        MlpConfig {
            latent_numel,
            hidden: 128,
            t_emb_dim: 16,
            class_emb_dim: 8,
            class_count,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.latent_numel + self.t_emb_dim + self.class_emb_dim
    }
}

/// Two-hidden-layer tanh network predicting ε from
/// `[flatten(z) | sinusoidal t-embedding | class embedding]`.
///
/// Forward, the latent-input pullback, and the parameter gradients are all
/// written out per layer so the differentiable-operator contract stays
/// auditable.
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    pub(crate) config: MlpConfig,
    pub(crate) w1: Tensor,
    pub(crate) b1: Tensor,
    pub(crate) w2: Tensor,
    pub(crate) b2: Tensor,
    pub(crate) w3: Tensor,
    pub(crate) b3: Tensor,
    pub(crate) class_emb: Tensor,
}

/// Parameter gradients in the same layout as the weights.
pub(crate) struct MlpGrads {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
    pub class_emb: Tensor,
}

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| rng.next_range(-bound, bound))
}

impl MlpDenoiser {
    /// Fresh network; the output layer starts at zero so an untrained model
    /// predicts ε = 0.
    pub fn init(config: MlpConfig, rng: &mut Rng) -> Self {
        let d_in = config.input_dim();
        let h = config.hidden;
        MlpDenoiser {
            w1: xavier(rng, h, d_in),
            b1: Tensor::zeros(&[h]),
            w2: xavier(rng, h, h),
            b2: Tensor::zeros(&[h]),
            w3: Tensor::zeros(&[config.latent_numel, h]),
            b3: Tensor::zeros(&[config.latent_numel]),
            class_emb: xavier(rng, config.class_count.max(1), config.class_emb_dim),
            config,
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub(crate) fn params(&self) -> [&Tensor; 7] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w3,
            &self.b3,
            &self.class_emb,
        ]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.class_emb,
        ]
    }

    fn t_embedding(&self, t: usize) -> Tensor {
        sinusoidal_embedding(t, self.config.t_emb_dim)
    }

    fn class_embedding(&self, cond: &Condition) -> Result<Tensor> {
        match cond.class_id {
            None => Ok(Tensor::zeros(&[self.config.class_emb_dim])),
            Some(id) => {
                if id >= self.config.class_count {
                    return Err(Error::UnknownClass {
                        id,
                        count: self.config.class_count,
                    });
                }
                let d = self.config.class_emb_dim;
                let row = &self.class_emb.data()[id * d..(id + 1) * d];
                Tensor::from_vec(&[d], row.to_vec())
            }
        }
    }

    fn assemble_input(&self, z: &Tensor, t: usize, cond: &Condition) -> Result<Tensor> {
        if z.numel() != self.config.latent_numel {
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.latent_numel],
                got: z.shape().to_vec(),
            });
        }
        let temb = self.t_embedding(t);
        let cemb = self.class_embedding(cond)?;
        let mut data = Vec::with_capacity(self.config.input_dim());
        data.extend_from_slice(z.data());
        data.extend_from_slice(temb.data());
        data.extend_from_slice(cemb.data());
        Tensor::from_vec(&[self.config.input_dim()], data)
    }

    /// Forward pass returning `(a1, a2, out)`.
    fn forward_layers(&self, u: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let a1 = self.w1.matvec(u)?.add(&self.b1)?.map(f64::tanh);
        let a2 = self.w2.matvec(&a1)?.add(&self.b2)?.map(f64::tanh);
        let out = self.w3.matvec(&a2)?.add(&self.b3)?;
        Ok((a1, a2, out))
    }

    /// Loss `‖target − ε̂‖²` plus gradients for every parameter (used by the
    /// training loop and its finite-difference check).
    pub(crate) fn loss_and_param_grads(
        &self,
        z: &Tensor,
        t: usize,
        cond: &Condition,
        target: &Tensor,
    ) -> Result<(f64, MlpGrads)> {
        let u = self.assemble_input(z, t, cond)?;
        let (a1, a2, out) = self.forward_layers(&u)?;
        let resid = out.sub(&target.reshaped(&[self.config.latent_numel])?)?;
        let loss = resid.norm_sq();
        let g_out = resid.scale(2.0);

        let (g_w3, g_b3, g_a2) = affine_backward(&self.w3, &a2, &g_out)?;
        let g_z2 = tanh_backward(&a2, &g_a2)?;
        let (g_w2, g_b2, g_a1) = affine_backward(&self.w2, &a1, &g_z2)?;
        let g_z1 = tanh_backward(&a1, &g_a1)?;
        let (g_w1, g_b1, g_u) = affine_backward(&self.w1, &u, &g_z1)?;

        // Embedding-table gradient: only the looked-up row receives signal.
        let mut g_emb = vec![0.0; self.class_emb.numel()];
        if let Some(id) = cond.class_id {
            let d = self.config.class_emb_dim;
            let base = self.config.latent_numel + self.config.t_emb_dim;
            for j in 0..d {
                g_emb[id * d + j] = g_u.data()[base + j];
            }
        }

        Ok((
            loss,
            MlpGrads {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
                w3: g_w3,
                b3: g_b3,
                class_emb: Tensor::from_vec(self.class_emb.shape(), g_emb)?,
            },
        ))
    }
}

/// Backward through `y = W·x + b`: returns `(dW, db, dx)` given `dy`.
fn affine_backward(w: &Tensor, x: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let rows = dy.numel();
    let cols = x.numel();
    let mut dw = vec![0.0; rows * cols];
    for i in 0..rows {
        let gi = dy.data()[i];
        for j in 0..cols {
            dw[i * cols + j] = gi * x.data()[j];
        }
    }
    let dx = w.matvec_t(dy)?;
    Ok((Tensor::from_vec(&[rows, cols], dw)?, dy.clone(), dx))
}

/// Backward through `a = tanh(z)` given post-activations `a`: `dz = da·(1−a²)`.
fn tanh_backward(a: &Tensor, da: &Tensor) -> Result<Tensor> {
    da.zip(a, |g, v| g * (1.0 - v * v))
}

/// Sinusoidal timestep features: interleaved sin/cos over log-spaced
/// frequencies from 1 down to 1e-4.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Tensor {
    assert!(
        dim >= 2 && dim % 2 == 0,
        "embedding dim must be even and >= 2"
    );
    let half = dim / 2;
    let t = t as f64;
    Tensor::from_fn(&[dim], |i| {
        let k = i / 2;
        let omega = (-(10_000.0_f64).ln() * k as f64 / (half - 1).max(1) as f64).exp();
        if i % 2 == 0 {
            (t * omega).sin()
        } else {
            (t * omega).cos()
        }
    })
}

impl Denoiser for MlpDenoiser {
    fn predict(&self, z: &Tensor, t: usize, cond: &Condition) -> Result<Tensor> {
        let u = self.assemble_input(z, t, cond)?;
        let (_, _, out) = self.forward_layers(&u)?;
        out.reshaped(z.shape())
    }

    fn forward_acts(
        &self,
        z: &Tensor,
        t: usize,
        cond: &Condition,
    ) -> Result<(Tensor, Activations)> {
        let u = self.assemble_input(z, t, cond)?;
        let (a1, a2, out) = self.forward_layers(&u)?;
        let acts = Activations {
            input_shape: z.shape().to_vec(),
            stash: vec![a1, a2],
        };
        Ok((out.reshaped(z.shape())?, acts))
    }

    fn vjp_from_acts(&self, acts: &Activations, cotangent: &Tensor) -> Result<Tensor> {
        let a1 = &acts.stash[0];
        let a2 = &acts.stash[1];
        let g_out = cotangent.reshaped(&[self.config.latent_numel])?;
        let g_a2 = self.w3.matvec_t(&g_out)?;
        let g_z2 = tanh_backward(a2, &g_a2)?;
        let g_a1 = self.w2.matvec_t(&g_z2)?;
        let g_z1 = tanh_backward(a1, &g_a1)?;
        let g_u = self.w1.matvec_t(&g_z1)?;
        // Only the latent slice of the input depends on z.
        let g_z = g_u.data()[..self.config.latent_numel].to_vec();
        Tensor::from_vec(&acts.input_shape, g_z)
    }
}
