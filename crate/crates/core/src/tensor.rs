//! Dense row-major n-axis arrays of real or complex 64-bit values.
//!
//! Complex tensors keep their values interleaved (`re0, im0, re1, im1, ...`)
//! so that extracting either component is a plain copy.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    Real64,
    Complex128,
}

impl DType {
    /// Stored `f64` slots per logical element.
    pub fn width(self) -> usize {
        match self {
            DType::Real64 => 1,
            DType::Complex128 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::Real64,
            data: vec![0.0; numel_of(shape)],
        }
    }

    pub fn complex_zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::Complex128,
            data: vec![0.0; 2 * numel_of(shape)],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            dtype: other.dtype,
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            dtype: DType::Real64,
            data: vec![value; numel_of(shape)],
        }
    }

    /// Rank-0 real tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            dtype: DType::Real64,
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: DType::Real64,
            data,
        })
    }

    pub fn from_complex(shape: &[usize], values: &[Complex64]) -> Result<Self> {
        if numel_of(shape) != values.len() {
            return Err(Error::invalid(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel_of(shape),
                values.len()
            )));
        }
        let mut data = Vec::with_capacity(2 * values.len());
        for v in values {
            data.push(v.re);
            data.push(v.im);
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: DType::Complex128,
            data,
        })
    }

    /// Builds a complex tensor from separate real and imaginary parts.
    pub fn complex_from_parts(re: &Tensor, im: &Tensor) -> Result<Self> {
        if re.shape != im.shape || re.is_complex() || im.is_complex() {
            return Err(Error::invalid(format!(
                "complex parts must be real tensors of equal shape, got {:?} and {:?}",
                re.shape, im.shape
            )));
        }
        let mut data = Vec::with_capacity(2 * re.data.len());
        for (a, b) in re.data.iter().zip(&im.data) {
            data.push(*a);
            data.push(*b);
        }
        Ok(Tensor {
            shape: re.shape.clone(),
            dtype: DType::Complex128,
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn is_complex(&self) -> bool {
        self.dtype == DType::Complex128
    }

    /// Number of logical elements.
    pub fn numel(&self) -> usize {
        numel_of(&self.shape)
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Raw storage; interleaved for complex tensors.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Real part (or the values themselves for a real tensor).
    pub fn re(&self) -> Tensor {
        match self.dtype {
            DType::Real64 => self.clone(),
            DType::Complex128 => Tensor {
                shape: self.shape.clone(),
                dtype: DType::Real64,
                data: self.data.iter().step_by(2).copied().collect(),
            },
        }
    }

    /// Imaginary part (zeros for a real tensor).
    pub fn im(&self) -> Tensor {
        match self.dtype {
            DType::Real64 => Tensor::zeros(&self.shape),
            DType::Complex128 => Tensor {
                shape: self.shape.clone(),
                dtype: DType::Real64,
                data: self.data.iter().skip(1).step_by(2).copied().collect(),
            },
        }
    }

    pub fn to_complex(&self) -> Tensor {
        match self.dtype {
            DType::Complex128 => self.clone(),
            DType::Real64 => {
                let mut data = Vec::with_capacity(2 * self.data.len());
                for v in &self.data {
                    data.push(*v);
                    data.push(0.0);
                }
                Tensor {
                    shape: self.shape.clone(),
                    dtype: DType::Complex128,
                    data,
                }
            }
        }
    }

    pub fn complex_values(&self) -> Vec<Complex64> {
        match self.dtype {
            DType::Real64 => self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            DType::Complex128 => self.data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
        }
    }

    /// Value of a single-element real tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.numel() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute difference between stored components.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_parts_round_trip_exactly() {
        let re = Tensor::from_vec(&[2, 2], vec![0.1, -2.5, 1e-300, 7.0]).unwrap();
        let im = Tensor::from_vec(&[2, 2], vec![3.3, 0.0, -1e300, 1.0 / 3.0]).unwrap();
        let c = Tensor::complex_from_parts(&re, &im).unwrap();
        assert_eq!(c.numel(), 4);
        assert_eq!(c.data().len(), 8);
        assert_eq!(c.re(), re);
        assert_eq!(c.im(), im);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[], vec![1.0]).is_ok());
    }
}
