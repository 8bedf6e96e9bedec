use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{DiffOp, Tensor};

use super::condition::Condition;

/// Intermediate activations a denoiser needs to pull a cotangent back through
/// one prediction. Decomposed-mode gradients recompute these per step and drop
/// them; naive mode keeps one per trajectory step alive.
#[derive(Debug, Clone)]
pub struct Activations {
    pub(crate) input_shape: Vec<usize>,
    pub(crate) stash: Vec<Tensor>,
}

/// A pluggable noise predictor `ε_θ(z_t, c, t)` that is differentiable with
/// respect to its latent input.
pub trait Denoiser {
    /// Prediction with the same shape as `z`.
    fn predict(&self, z: &Tensor, t: usize, cond: &Condition) -> Result<Tensor>;

    /// Forward pass that also returns the activations `vjp_from_acts` needs.
    fn forward_acts(&self, z: &Tensor, t: usize, cond: &Condition)
        -> Result<(Tensor, Activations)>;

    /// Cotangent pullback through one prediction, given stored activations.
    fn vjp_from_acts(&self, acts: &Activations, cotangent: &Tensor) -> Result<Tensor>;

    /// Cotangent pullback that recomputes activations locally.
    fn vjp(&self, z: &Tensor, t: usize, cond: &Condition, cotangent: &Tensor) -> Result<Tensor> {
        let (_, acts) = self.forward_acts(z, t, cond)?;
        self.vjp_from_acts(&acts, cotangent)
    }
}

/// Evaluates a denoiser (checks finiteness of the prediction).
pub fn predict_eps(
    denoiser: &dyn Denoiser,
    z_t: &Tensor,
    t: usize,
    cond: &Condition,
) -> Result<Tensor> {
    let eps = denoiser.predict(z_t, t, cond)?;
    eps.ensure_finite("predict_eps")?;
    Ok(eps)
}

/// Classifier-free guidance blend `ε_u + w·(ε_c − ε_u)`.
///
/// `w = 0` returns the unconditional prediction; `w = 1` the conditional one.
pub fn cfg_predict(
    denoiser: &dyn Denoiser,
    z_t: &Tensor,
    t: usize,
    cond: &Condition,
    w: f64,
) -> Result<Tensor> {
    if w < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "guidance scale must be >= 0, got {w}"
        )));
    }
    if w == 0.0 {
        return denoiser.predict(z_t, t, &Condition::none());
    }
    if cond.is_none() {
        return Err(Error::InvalidConfig(
            "guidance with w != 0 requires a condition".to_string(),
        ));
    }
    let eps_c = denoiser.predict(z_t, t, cond)?;
    if w == 1.0 {
        return Ok(eps_c);
    }
    let eps_u = denoiser.predict(z_t, t, &Condition::none())?;
    eps_u.add_scaled(&eps_c.sub(&eps_u)?, w)
}

/// Predicts zero noise everywhere; the analytically trivial trajectory.
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, z: &Tensor, _t: usize, _cond: &Condition) -> Result<Tensor> {
        Ok(Tensor::zeros(z.shape()))
    }

    fn forward_acts(
        &self,
        z: &Tensor,
        t: usize,
        cond: &Condition,
    ) -> Result<(Tensor, Activations)> {
        let out = self.predict(z, t, cond)?;
        Ok((
            out,
            Activations {
                input_shape: z.shape().to_vec(),
                stash: Vec::new(),
            },
        ))
    }

    fn vjp_from_acts(&self, acts: &Activations, _cotangent: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(&acts.input_shape))
    }
}

/// Closed-form linear predictor `ε(x, t) = W_t·flatten(x) + b`, with either a
/// shared matrix or one matrix per timestep. Serves as the oracle against
/// which trajectory math is validated.
pub struct LinearDenoiser {
    weights: LinearWeights,
    bias: Option<Tensor>,
    dim: usize,
}

enum LinearWeights {
    Shared(Tensor),
    PerTimestep(BTreeMap<usize, Tensor>),
}

impl LinearDenoiser {
    pub fn shared(w: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let dim = square_dim(&w)?;
        check_bias(&bias, dim)?;
        Ok(LinearDenoiser {
            weights: LinearWeights::Shared(w),
            bias,
            dim,
        })
    }

    pub fn per_timestep(mats: BTreeMap<usize, Tensor>, bias: Option<Tensor>) -> Result<Self> {
        let mut dim = None;
        for w in mats.values() {
            let d = square_dim(w)?;
            if *dim.get_or_insert(d) != d {
                return Err(Error::InvalidShape(
                    "per-timestep matrices disagree on dim".into(),
                ));
            }
        }
        let dim = dim.ok_or_else(|| Error::InvalidConfig("no matrices given".to_string()))?;
        check_bias(&bias, dim)?;
        Ok(LinearDenoiser {
            weights: LinearWeights::PerTimestep(mats),
            bias,
            dim,
        })
    }

    fn matrix_at(&self, t: usize) -> Result<&Tensor> {
        match &self.weights {
            LinearWeights::Shared(w) => Ok(w),
            LinearWeights::PerTimestep(m) => m.get(&t).ok_or_else(|| {
                Error::InvalidConfig(format!("linear denoiser has no matrix for timestep {t}"))
            }),
        }
    }

    fn check_input(&self, z: &Tensor) -> Result<()> {
        if z.numel() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim],
                got: z.shape().to_vec(),
            });
        }
        Ok(())
    }
}

fn square_dim(w: &Tensor) -> Result<usize> {
    match w.shape() {
        [r, c] if r == c => Ok(*r),
        other => Err(Error::InvalidShape(format!(
            "linear denoiser needs a square matrix, got {other:?}"
        ))),
    }
}

fn check_bias(bias: &Option<Tensor>, dim: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != dim {
            return Err(Error::ShapeMismatch {
                expected: vec![dim],
                got: b.shape().to_vec(),
            });
        }
    }
    Ok(())
}

impl Denoiser for LinearDenoiser {
    fn predict(&self, z: &Tensor, t: usize, _cond: &Condition) -> Result<Tensor> {
        self.check_input(z)?;
        let flat = z.reshaped(&[self.dim])?;
        let mut out = self.matrix_at(t)?.matvec(&flat)?;
        if let Some(b) = &self.bias {
            out = out.add(&b.reshaped(&[self.dim])?)?;
        }
        out.reshaped(z.shape())
    }

    fn forward_acts(
        &self,
        z: &Tensor,
        t: usize,
        cond: &Condition,
    ) -> Result<(Tensor, Activations)> {
        let out = self.predict(z, t, cond)?;
        // The pullback only needs the timestep's matrix; stash records t as a
        // one-element tensor so acts are self-contained.
        let t_tag = Tensor::from_vec(&[1], vec![t as f64])?;
        Ok((
            out,
            Activations {
                input_shape: z.shape().to_vec(),
                stash: vec![t_tag],
            },
        ))
    }

    fn vjp_from_acts(&self, acts: &Activations, cotangent: &Tensor) -> Result<Tensor> {
        let t = acts.stash[0].data()[0] as usize;
        let flat = cotangent.reshaped(&[self.dim])?;
        self.matrix_at(t)?
            .matvec_t(&flat)?
            .reshaped(&acts.input_shape)
    }
}

/// One denoiser query at fixed `(t, cond)`, viewed as a differentiable
/// operator for the self-test oracle.
pub struct DenoiserStepOp<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub t: usize,
    pub cond: Condition,
}

impl DiffOp for DenoiserStepOp<'_> {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.denoiser.predict(x, self.t, &self.cond)
    }
    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.denoiser.vjp(x, self.t, &self.cond, cotangent)
    }
}

/// Blends conditional and unconditional predictions at a fixed guidance scale,
/// presenting the result as a plain denoiser. The blend is linear in the two
/// branch predictions, so its pullback is the same blend of branch pullbacks.
pub struct GuidedDenoiser<'a> {
    pub inner: &'a dyn Denoiser,
    pub cond: Condition,
    pub guidance: f64,
}

impl GuidedDenoiser<'_> {
    /// `w = 1` (or 0) collapses to a single branch; only true extrapolation
    /// needs both.
    fn needs_both_branches(&self) -> bool {
        self.guidance != 0.0 && self.guidance != 1.0
    }

    fn single_branch_cond(&self) -> Condition {
        if self.guidance == 0.0 {
            Condition::none()
        } else {
            self.cond
        }
    }
}

impl Denoiser for GuidedDenoiser<'_> {
    fn predict(&self, z: &Tensor, t: usize, _cond: &Condition) -> Result<Tensor> {
        cfg_predict(self.inner, z, t, &self.cond, self.guidance)
    }

    fn forward_acts(
        &self,
        z: &Tensor,
        t: usize,
        _cond: &Condition,
    ) -> Result<(Tensor, Activations)> {
        if !self.needs_both_branches() {
            return self.inner.forward_acts(z, t, &self.single_branch_cond());
        }
        if self.cond.is_none() {
            return Err(Error::InvalidConfig(
                "guidance with w != 0 requires a condition".to_string(),
            ));
        }
        let (eps_c, acts_c) = self.inner.forward_acts(z, t, &self.cond)?;
        let (eps_u, acts_u) = self.inner.forward_acts(z, t, &Condition::none())?;
        let out = eps_u.add_scaled(&eps_c.sub(&eps_u)?, self.guidance)?;
        // Both branches' stashes, conditional first.
        let c_len = Tensor::from_vec(&[1], vec![acts_c.stash.len() as f64])?;
        let mut stash = vec![c_len];
        stash.extend(acts_c.stash);
        stash.extend(acts_u.stash);
        Ok((
            out,
            Activations {
                input_shape: z.shape().to_vec(),
                stash,
            },
        ))
    }

    fn vjp_from_acts(&self, acts: &Activations, cotangent: &Tensor) -> Result<Tensor> {
        if !self.needs_both_branches() {
            return self.inner.vjp_from_acts(acts, cotangent);
        }
        let c_len = acts.stash[0].data()[0] as usize;
        let acts_c = Activations {
            input_shape: acts.input_shape.clone(),
            stash: acts.stash[1..1 + c_len].to_vec(),
        };
        let acts_u = Activations {
            input_shape: acts.input_shape.clone(),
            stash: acts.stash[1 + c_len..].to_vec(),
        };
        let g_c = self.inner.vjp_from_acts(&acts_c, cotangent)?;
        let g_u = self.inner.vjp_from_acts(&acts_u, cotangent)?;
        // d/dz [ε_u + w(ε_c − ε_u)] = (1−w)·J_u + w·J_c.
        g_u.scale(1.0 - self.guidance)
            .add_scaled(&g_c, self.guidance)
    }
}
