//! Dense `[batch, channels, vertices]` tensors, a reverse-mode tape and Adam.
//!
//! Every network layer in this crate is composed from the primitives on
//! [`Graph`]. Values are immutable once recorded; gradients are produced by a
//! single reverse sweep in [`Graph::backward`].

mod adam;
mod gradcheck;
mod graph;

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_inputs, CoordinateSelection, GradCheckReport};
pub use graph::{Gradients, Graph, Var};

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        len: usize,
        expected: usize,
    },
    #[error("backward requires a scalar [1,1,1] root, got {0}")]
    NonScalarRoot(Shape),
    #[error("{op}: index {index} out of range for {len} vertices")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Floating point element type usable in tensors.
///
/// Implemented for `f32` (training storage) and `f64` (gradient checks).
pub trait Real:
    Float + FromPrimitive + Default + Sum + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = a · b (+ c if accumulate)` on strided row/column views.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`; strides are `(row, col)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        c_strides: (usize, usize),
        accumulate: bool,
    );

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (usize, usize)) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * strides.0 + (cols - 1) * strides.1;
        assert!(last < len, "gemm operand too short: {last} >= {len}");
    }
}

macro_rules! impl_real {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Real for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
                c_strides: (usize, usize),
                accumulate: bool,
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: extents of all three operands were checked above and
                // `c` does not alias `a` or `b` (distinct borrows).
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, "f32", matrixmultiply::sgemm);
impl_real!(f64, "f64", matrixmultiply::dgemm);

/// `[n, c, v]` extents of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub v: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, v: usize) -> Self {
        Self { n, c, v }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.v
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.n, self.c, self.v]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.n, self.c, self.v)
    }
}

/// Row-major rank-3 array indexed as `[n, c, v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected: shape.len(),
            });
        }
        if shape.is_empty() {
            return Err(TensorError::Invalid(format!("empty shape {shape}")));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(n: usize, c: usize, v: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Shape::new(n, c, v), data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for v in 0..shape.v {
                    data.push(f(n, c, v));
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, v: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && v < self.shape.v);
        (n * self.shape.c + c) * self.shape.v + v
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, v: usize) -> T {
        self.data[self.offset(n, c, v)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, v: usize, value: T) {
        let i = self.offset(n, c, v);
        self.data[i] = value;
    }

    /// Contiguous `[v]` row for channel `c` of sample `n`.
    #[inline]
    pub fn row(&self, n: usize, c: usize) -> &[T] {
        let start = self.offset(n, c, 0);
        &self.data[start..start + self.shape.v]
    }

    /// Contiguous `[c, v]` block for sample `n`.
    #[inline]
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.v;
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|x| U::of(x.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Reorders the vertex axis: output column `i` is input column `perm[i]`.
    pub fn gather_vertices(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.shape.v {
            return Err(TensorError::Invalid(format!(
                "permutation of length {} for {} vertices",
                perm.len(),
                self.shape.v
            )));
        }
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.shape.v) {
            for &p in perm {
                if p >= self.shape.v {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather_vertices",
                        index: p,
                        len: self.shape.v,
                    });
                }
                out.push(row[p]);
            }
        }
        Ok(Self {
            shape: self.shape,
            data: out,
        })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        let mut n = 0;
        for p in parts {
            if p.shape.c != first.shape.c || p.shape.v != first.shape.v {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape,
                    rhs: p.shape,
                });
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Self::new(Shape::new(n, first.shape.c, first.shape.v), data)
    }

    /// Batch element `n` as a `[1, c, v]` tensor.
    pub fn select(&self, n: usize) -> Self {
        Self {
            shape: Shape::new(1, self.shape.c, self.shape.v),
            data: self.sample(n).to_vec(),
        }
    }
}
