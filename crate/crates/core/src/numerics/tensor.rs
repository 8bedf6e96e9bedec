use crate::error::{Error, Result};
use crate::numerics::mem;

/// Dense n-dimensional array of 64-bit floats, row-major.
///
/// Tensors are immutable values once returned from an operation; every public
/// constructor rejects non-finite entries so downstream code can assume
/// finiteness. Allocation is reported to the thread-local [`mem`] gauge.
#[derive(Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel = checked_numel(shape)?;
        if data.len() != numel {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        let t = Self::new_unchecked(shape.to_vec(), data);
        t.ensure_finite("from_vec")?;
        Ok(t)
    }

    /// All-zeros tensor. Panics on a zero-extent shape (programming error).
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = checked_numel(shape).expect("zeros: invalid shape");
        Self::new_unchecked(shape.to_vec(), vec![0.0; numel])
    }

    /// Constant-filled tensor.
    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "full: non-finite fill value");
        let numel = checked_numel(shape).expect("full: invalid shape");
        Self::new_unchecked(shape.to_vec(), vec![value; numel])
    }

    /// Builds a tensor by calling `f` with each flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel = checked_numel(shape).expect("from_fn: invalid shape");
        let data: Vec<f64> = (0..numel).map(&mut f).collect();
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "from_fn produced non-finite"
        );
        Self::new_unchecked(shape.to_vec(), data)
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        mem::on_alloc(data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Returns the single element of a one-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "scalar() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Same data viewed under a different shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let numel = checked_numel(shape)?;
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: shape.to_vec(),
            });
        }
        Ok(Tensor::new_unchecked(shape.to_vec(), self.data.clone()))
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new_unchecked(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Elementwise combine; shapes must match.
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::new_unchecked(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &Tensor, c: f64) -> Result<Tensor> {
        self.zip(other, |a, b| a + c * b)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of squared entries (the squared L2 norm).
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Largest absolute entry (the L-infinity norm).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    /// Returns a copy with entry `i` shifted by `dv` (used by finite differences).
    pub fn with_nudged(&self, i: usize, dv: f64) -> Tensor {
        let mut data = self.data.clone();
        data[i] += dv;
        Tensor::new_unchecked(self.shape.clone(), data)
    }

    /// Matrix-vector product: `self` has shape `[r, c]`, `x` has `c` elements.
    /// The result is a flat `[r]` tensor.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let (r, c) = self.matrix_dims()?;
        if x.numel() != c {
            return Err(Error::ShapeMismatch {
                expected: vec![c],
                got: x.shape.clone(),
            });
        }
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            out[i] = row.iter().zip(x.data.iter()).map(|(&w, &v)| w * v).sum();
        }
        Ok(Tensor::new_unchecked(vec![r], out))
    }

    /// Transposed matrix-vector product: `self^T · y` for `self` of shape `[r, c]`.
    pub fn matvec_t(&self, y: &Tensor) -> Result<Tensor> {
        let (r, c) = self.matrix_dims()?;
        if y.numel() != r {
            return Err(Error::ShapeMismatch {
                expected: vec![r],
                got: y.shape.clone(),
            });
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            let yi = y.data[i];
            let row = &self.data[i * c..(i + 1) * c];
            for (o, &w) in out.iter_mut().zip(row.iter()) {
                *o += w * yi;
            }
        }
        Ok(Tensor::new_unchecked(vec![c], out))
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::InvalidShape(format!(
                "matrix op on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty shape".to_string()));
    }
    let mut numel = 1usize;
    for &e in shape {
        if e == 0 {
            return Err(Error::InvalidShape(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        numel = numel.checked_mul(e).ok_or_else(|| {
            Error::InvalidShape(format!("shape {shape:?} overflows element count"))
        })?;
    }
    Ok(numel)
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor::new_unchecked(self.shape.clone(), self.data.clone())
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        mem::on_free(self.data.len());
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
