use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, Rng, Tensor};

/// Central-difference step used by the gradient oracles.
pub const FD_STEP: f64 = 1e-5;

/// A differentiable operator: a forward map plus its cotangent pullback.
///
/// `vjp(x, g)` must return `J(x)^T g` where `J` is the Jacobian of `forward`
/// at `x`; the output has the shape of `x` and the map is linear in `g`.
pub trait DiffOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn vjp(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor>;
}

/// Central-difference gradient of a scalar function:
/// entry `i` is `(f(x + h·e_i) − f(x − h·e_i)) / (2h)`.
pub fn finite_difference_grad(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    assert!(h > 0.0, "finite_difference_grad: h must be positive");
    let mut grad = vec![0.0; x.numel()];
    for i in 0..x.numel() {
        let fp = f(&x.with_nudged(i, h))?;
        let fm = f(&x.with_nudged(i, -h))?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_difference_grad: f at perturbed index {i}"),
            });
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Tensor::from_vec(x.shape(), grad)
}

/// Largest entrywise difference between `a` and `b`, relative to the largest
/// magnitude present in either tensor. Well-conditioned for gradient
/// comparisons where individual entries may pass through zero.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let scale = a.max_abs().max(b.max_abs()).max(1e-12);
    let mut worst = 0.0_f64;
    for (&va, &vb) in a.data().iter().zip(b.data().iter()) {
        worst = worst.max((va - vb).abs() / scale);
    }
    Ok(worst)
}

/// Checks an operator's `vjp` against a finite-difference Jacobian-transpose
/// product for a random Gaussian cotangent; returns the max relative error.
pub fn vjp_selftest(op: &dyn DiffOp, x: &Tensor, rng: &mut Rng) -> Result<f64> {
    let y = op.forward(x)?;
    let g = sample_gaussian(rng, y.shape())?;
    let analytic = op.vjp(x, &g)?;
    if analytic.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape().to_vec(),
            got: analytic.shape().to_vec(),
        });
    }
    // d/dx_i <forward(x), g> is exactly (J^T g)_i.
    let fd = finite_difference_grad(
        |p| {
            let out = op.forward(p)?;
            out.check_same_shape(&g)?;
            out.dot(&g)
        },
        x,
        FD_STEP,
    )?;
    max_rel_err(&analytic, &fd)
}

/// Identity operator.
pub struct IdentityOp;

impl DiffOp for IdentityOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
    fn vjp(&self, _x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        Ok(cotangent.clone())
    }
}

/// Scaling operator `y = c·x`.
pub struct ScaleOp(pub f64);

impl DiffOp for ScaleOp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.scale(self.0))
    }
    fn vjp(&self, _x: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        Ok(cotangent.scale(self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_sum_is_ones() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 0.0, 5.0, -0.7]).unwrap();
        let g = finite_difference_grad(|t| Ok(t.sum()), &x, 1e-5).unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9, "entry {v}");
        }
    }

    #[test]
    fn fd_gradient_of_square_at_three() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let g = finite_difference_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_reports_non_finite_index() {
        let x = Tensor::from_vec(&[2], vec![0.5, 1.0]).unwrap();
        let err = finite_difference_grad(
            |t| {
                let v = t.data()[1];
                Ok(if v > 1.0 { f64::NAN } else { v })
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn selftest_identity_is_exact() {
        let x = Tensor::from_vec(&[4], vec![0.1, -0.2, 0.3, 0.9]).unwrap();
        let err = vjp_selftest(&IdentityOp, &x, &mut Rng::seed(0)).unwrap();
        assert!(err < 1e-9, "identity selftest err {err}");
    }

    #[test]
    fn selftest_scale_half() {
        let x = Tensor::from_vec(&[5], vec![0.5, 1.5, -2.0, 0.0, 3.0]).unwrap();
        let err = vjp_selftest(&ScaleOp(0.5), &x, &mut Rng::seed(1)).unwrap();
        assert!(err < 1e-8, "scale selftest err {err}");
    }
}
