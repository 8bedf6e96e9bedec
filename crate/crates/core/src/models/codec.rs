use crate::error::{Error, Result};
use crate::numerics::{DiffOp, Tensor};

/// Latent codec: both directions are differentiable operators.
pub trait Codec {
    fn encode(&self, image: &Tensor) -> Result<Tensor>;
    fn decode(&self, latent: &Tensor) -> Result<Tensor>;
    fn encode_vjp(&self, image: &Tensor, cotangent: &Tensor) -> Result<Tensor>;
    fn decode_vjp(&self, latent: &Tensor, cotangent: &Tensor) -> Result<Tensor>;
}

/// Pixel-space diffusion: both directions are the identity.
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn encode(&self, image: &Tensor) -> Result<Tensor> {
        Ok(image.clone())
    }
    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        Ok(latent.clone())
    }
    fn encode_vjp(&self, _image: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        Ok(cotangent.clone())
    }
    fn decode_vjp(&self, _latent: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        Ok(cotangent.clone())
    }
}

/// Single affine layer pair trained as an autoencoder:
/// `encode(x) = W_e·flatten(x) + b_e`, `decode(z) = reshape(W_d·z + b_d)`.
#[derive(Debug, Clone)]
pub struct LinearCodec {
    pub(crate) image_shape: Vec<usize>,
    pub(crate) w_enc: Tensor,
    pub(crate) b_enc: Tensor,
    pub(crate) w_dec: Tensor,
    pub(crate) b_dec: Tensor,
}

impl LinearCodec {
    pub fn new(
        image_shape: Vec<usize>,
        w_enc: Tensor,
        b_enc: Tensor,
        w_dec: Tensor,
        b_dec: Tensor,
    ) -> Result<Self> {
        let n: usize = image_shape.iter().product();
        let k = b_enc.numel();
        if w_enc.shape() != [k, n] || w_dec.shape() != [n, k] || b_dec.numel() != n {
            return Err(Error::InvalidShape(format!(
                "linear codec shapes inconsistent: image numel {n}, latent {k}, w_enc {:?}, w_dec {:?}",
                w_enc.shape(),
                w_dec.shape()
            )));
        }
        Ok(LinearCodec {
            image_shape,
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        })
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn latent_dim(&self) -> usize {
        self.b_enc.numel()
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.shape() != self.image_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.image_shape.clone(),
                got: image.shape().to_vec(),
            });
        }
        Ok(())
    }
}

impl Codec for LinearCodec {
    fn encode(&self, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let flat = image.reshaped(&[image.numel()])?;
        self.w_enc.matvec(&flat)?.add(&self.b_enc)
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        if latent.numel() != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.latent_dim()],
                got: latent.shape().to_vec(),
            });
        }
        let flat = latent.reshaped(&[self.latent_dim()])?;
        self.w_dec
            .matvec(&flat)?
            .add(&self.b_dec)?
            .reshaped(&self.image_shape)
    }

    fn encode_vjp(&self, _image: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        let flat = cotangent.reshaped(&[self.latent_dim()])?;
        self.w_enc.matvec_t(&flat)?.reshaped(&self.image_shape)
    }

    fn decode_vjp(&self, _latent: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        let n: usize = self.image_shape.iter().product();
        let flat = cotangent.reshaped(&[n])?;
        self.w_dec.matvec_t(&flat)
    }
}

/// The encode direction as a standalone differentiable operator.
pub struct EncodeOp<'a>(pub &'a dyn Codec);

impl DiffOp for EncodeOp<'_> {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.0.encode(x)
    }
    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.0.encode_vjp(x, cotangent)
    }
}

/// The decode direction as a standalone differentiable operator.
pub struct DecodeOp<'a>(pub &'a dyn Codec);

impl DiffOp for DecodeOp<'_> {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.0.decode(x)
    }
    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.0.decode_vjp(x, cotangent)
    }
}
