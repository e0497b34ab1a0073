//! Dense row-major tensor, the carrier for hidden weights, activations and
//! gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[T]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// First non-finite element, reported as an error.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| if v.abs() > acc { v.abs() } else { acc })
    }
}

/// Which operand of a product is read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    N,
    T,
}

/// 2-D product `op(a) @ op(b)` with a fixed reduction order.
pub fn matmul<T: Real>(a: &Tensor<T>, ta: Trans, b: &Tensor<T>, tb: Trans) -> Result<Tensor<T>> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::InvalidArgument("matmul expects 2-D operands"));
    }
    let (ar, ac) = (a.shape[0], a.shape[1]);
    let (br, bc) = (b.shape[0], b.shape[1]);
    let (m, k, rsa, csa) = match ta {
        Trans::N => (ar, ac, ac as isize, 1),
        Trans::T => (ac, ar, 1, ac as isize),
    };
    let (kb, n, rsb, csb) = match tb {
        Trans::N => (br, bc, bc as isize, 1),
        Trans::T => (bc, br, 1, bc as isize),
    };
    if k != kb {
        return Err(Error::ShapeMismatch {
            expected: vec![m, k],
            actual: vec![kb, n],
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    // SAFETY: strides were derived from the operand shapes checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            T::zero(),
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn matmul_matches_naive_for_all_transpose_modes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| 1.0 - i as f64 * 0.25).collect();
        let want = naive(&a, &b, m, k, n);

        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        let cases = [
            (Tensor::from_vec(&[m, k], a.clone()).unwrap(), Trans::N, Tensor::from_vec(&[k, n], b.clone()).unwrap(), Trans::N),
            (Tensor::from_vec(&[k, m], at.clone()).unwrap(), Trans::T, Tensor::from_vec(&[k, n], b.clone()).unwrap(), Trans::N),
            (Tensor::from_vec(&[m, k], a.clone()).unwrap(), Trans::N, Tensor::from_vec(&[n, k], bt.clone()).unwrap(), Trans::T),
            (Tensor::from_vec(&[k, m], at).unwrap(), Trans::T, Tensor::from_vec(&[n, k], bt).unwrap(), Trans::T),
        ];
        for (x, tx, y, ty) in cases {
            let got = matmul(&x, tx, &y, ty).unwrap();
            assert_eq!(got.shape(), &[m, n]);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_dimension_mismatch_is_an_error() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matches!(
            matmul(&a, Trans::N, &b, Trans::N),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn from_vec_enforces_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 4]).unwrap();
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn check_finite_reports_first_bad_index() {
        let t = Tensor::<f32>::vector(&[1.0, f32::NAN, f32::INFINITY]);
        assert_eq!(t.check_finite(), Err(Error::NonFinite { index: 1 }));
    }
}
