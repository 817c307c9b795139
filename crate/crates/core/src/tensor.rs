//! Dense row-major tensors over a selectable float width.
//!
//! `Tensor<f64>` is the default everywhere; `Tensor<f32>` is available for
//! faster training behind the `precision` config switch. All verification
//! suites run in 64-bit.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Float widths the engine can run at.
pub trait Scalar:
    Float + FromPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// Lossless-enough literal conversion; panics only on NaN literals,
    /// which would be a programming error.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("literal must be representable")
    }

    fn to64(self) -> f64 {
        self.to_f64().expect("float widens to f64")
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

/// Dense tensor: a shape plus row-major elements.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 1-D tensor from values.
    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows×cols and row-major values.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The single element of a rank-0 or one-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Rows of a 2-D tensor (rank-1 counts as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{r} tensor"),
        }
    }

    /// Columns of a 2-D tensor (rank-1 is its length).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{r} tensor"),
        }
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at2(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Gathered copy of the given rows of a 2-D tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<S>> {
        let c = self.cols();
        let r = self.rows();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Contract(format!(
                    "row index {i} out of range for {r} rows"
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_vec(vec![indices.len(), c], data)
    }

    /// Stacks 2-D tensors with equal column counts on the row axis.
    pub fn vstack(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let cols = parts
            .first()
            .ok_or_else(|| Error::contract("vstack of zero tensors"))?
            .cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    lhs: vec![rows, cols],
                    rhs: p.shape.clone(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// Maximum absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().to64())
            .fold(0.0, f64::max)
    }

    /// Converts element width; exact when widening.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.to64())).collect(),
        }
    }
}

impl Tensor<f64> {
    pub fn from_f64s(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::from_vec(shape, data.to_vec())
    }
}

/// Walks the flat offsets of every lane along `axis`, calling `f` with the
/// starting offset and stride of each lane. A lane is the run of elements
/// obtained by varying only the `axis` index.
pub(crate) fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    assert!(axis < rank, "axis {axis} out of range for rank {rank}");
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let lane_stride = strides[axis];
    let lanes: usize = shape
        .iter()
        .enumerate()
        .filter(|&(d, _)| d != axis)
        .map(|(_, &e)| e)
        .product();
    let mut idx = vec![0usize; rank];
    for _ in 0..lanes {
        let offset: usize = idx
            .iter()
            .zip(&strides)
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, (&i, &s))| i * s)
            .sum();
        f(offset, lane_stride);
        // odometer over the non-axis dimensions
        for d in (0..rank).rev() {
            if d == axis {
                continue;
            }
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn gather_rows_copies_in_order() {
        let t = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = t.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
        assert!(t.gather_rows(&[3]).is_err());
    }

    #[test]
    fn lane_walk_covers_both_axes() {
        // shape [2,3]: axis 1 lanes are rows, axis 0 lanes are columns
        let mut rows = Vec::new();
        for_each_lane(&[2, 3], 1, |off, stride| rows.push((off, stride)));
        assert_eq!(rows, vec![(0, 1), (3, 1)]);
        let mut cols = Vec::new();
        for_each_lane(&[2, 3], 0, |off, stride| cols.push((off, stride)));
        assert_eq!(cols, vec![(0, 3), (1, 3), (2, 3)]);
    }

    #[test]
    fn cast_roundtrip_is_exact_for_f32() {
        let t = Tensor::<f32>::vector(vec![1.5, -2.25, 0.1]);
        let back: Tensor<f32> = t.cast::<f64>().cast::<f32>();
        assert_eq!(t, back);
    }
}
