//! Dense rank-4 tensors and a small reverse-mode differentiation tape.
//!
//! Everything is laid out row-major as `(batch, channels, height, width)`.
//! Only the operations the segmentation network needs are provided.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{
    Activation, BatchNormState, BnMode, Graph, Reduction, Var, BCE_CLAMP, BN_EPS, BN_MOMENTUM,
};

/// Floating point element type of a tensor.
///
/// Training and inference run on `f32`; the finite-difference harness
/// instantiates the same code with `f64`.
pub trait Element: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` on strided row/column matrices.
    ///
    /// # Safety
    /// The pointers must cover every element addressed by the dimensions
    /// and strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Element for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Extents `(n, c, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one `(h, w)` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

/// Dense rank-4 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "buffer of {} values cannot back a {shape} tensor",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, cs, hs, ws] = self.shape.0;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    /// Value of a `1x1x1x1` tensor.
    pub fn item(&self) -> Result<T> {
        if self.shape != Shape::scalar() {
            return Err(Error::shape(format!(
                "item() needs a scalar tensor, got {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One batch item as a `1 x c x h x w` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor<T> {
        let per = self.shape.numel() / self.shape.n().max(1);
        Tensor {
            shape: Shape::new(1, self.shape.c(), self.shape.h(), self.shape.w()),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenates `1 x c x h x w` items along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.shape.0;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            let [_, tc, th, tw] = t.shape.0;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::shape(format!(
                    "cannot stack {} with {}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let n = data.len() / (c * h * w).max(1);
        Ok(Tensor {
            shape: Shape::new(n, c, h, w),
            data,
        })
    }
}
