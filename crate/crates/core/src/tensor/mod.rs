//! Dense row-major tensors.
//!
//! Storage is a flat `Vec` with the last axis fastest. There are no strided
//! views: `slice`, `transpose` and `concat` copy. Image-like tensors use the
//! `h × w × c` layout throughout the crate.

mod text;

pub use text::{parse_text, write_text};

use crate::error::{Error, Result};
use crate::flops;
use crate::scalar::{self, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating the shape, the element count and finiteness.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(
                "tensor",
                format!("every dimension must be >= 1, got {shape:?}"),
            ));
        }
        if numel(&shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {shape:?} needs {} elements, got {}",
                    numel(&shape),
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for op outputs; shape validity is the caller's
    /// responsibility and finiteness is asserted in debug builds.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite tensor output (shape {shape:?})"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "bad shape {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    /// Fills a tensor from a function of the flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        Self::from_parts(shape.to_vec(), (0..numel(shape)).map(f).collect())
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| {
            if i / n == i % n {
                T::one()
            } else {
                T::zero()
            }
        })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for optimizers and finite-difference perturbation.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.rank(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "index {index:?} out of bounds for {:?}", self.shape);
            acc * n + i
        })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid(
                "dims2",
                format!("expected rank 2, got {:?}", self.shape),
            )),
        }
    }

    /// `(h, w, c)` of an image-like rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::invalid(
                "dims3",
                format!("expected h×w×c, got {:?}", self.shape),
            )),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(scalar::sigmoid)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(T::zero()))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.axpy(T::one(), other)
    }

    /// `self += alpha · x`.
    pub fn axpy(&mut self, alpha: T, x: &Self) -> Result<()> {
        self.same_shape(x, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of_usize(self.numel())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// Matrix product of `m × k` and `k × n`; records `m·k·n` MACs.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        flops::record((m * k * n) as u64);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b = &other.data[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || numel(shape) != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || numel(shape) != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data))
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::Axis {
                op,
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        self.check_axis(axis, "softmax")?;
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut out = self.data.clone();
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + j;
                let max = (0..len)
                    .map(|i| self.data[idx(i)])
                    .fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for i in 0..len {
                    let e = (self.data[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[idx(i)] /= total;
                }
            }
        }
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Concatenates tensors whose shapes agree everywhere except `axis`.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        first.check_axis(axis, "concat")?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
        }
        let (outer, _, inner) = split_axis(&first.shape, axis);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self::from_parts(shape, out))
    }

    /// Copies the half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Self> {
        self.check_axis(axis, "slice")?;
        if start >= end || end > self.shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} invalid for axis of length {}", self.shape[axis]),
            ));
        }
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&self.data[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        Ok(Self::from_parts(shape, out))
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }
}

/// Backward of `softmax` along `axis` given its output `y` and upstream grad `g`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    y.same_shape(g, "softmax_backward")?;
    y.check_axis(axis, "softmax_backward")?;
    let (outer, len, inner) = split_axis(&y.shape, axis);
    let mut out = vec![T::zero(); y.numel()];
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| (o * len + i) * inner + j;
            let dot: T = (0..len).map(|i| y.data[idx(i)] * g.data[idx(i)]).sum();
            for i in 0..len {
                out[idx(i)] = y.data[idx(i)] * (g.data[idx(i)] - dot);
            }
        }
    }
    Ok(Tensor::from_parts(y.shape.clone(), out))
}

/// Backward of `sigmoid` given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_with(g, "sigmoid_backward", |s, g| g * s * (T::one() - s))
}

/// Backward of `relu` given its input `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_with(g, "relu_backward", |x, g| if x > T::zero() { g } else { T::zero() })
}
