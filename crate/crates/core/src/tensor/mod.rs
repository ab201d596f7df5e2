//! Dense-array core with reverse-mode differentiation.
//!
//! Covers exactly the operations the detector needs: conv2d, batchnorm,
//! relu/sigmoid, average pooling, fully-connected, 2-D FFT plus the complex
//! spectrum ops feeding frequency attention, and a BCE-with-logits loss.
//! Scalar precision is generic: `f32` for training throughput, `f64` for
//! gradient verification.

pub mod adam;
pub mod fft;
pub mod kernels;
pub mod params;
pub mod tape;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use fft::ComplexTensor;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, TensorId};

use crate::error::{Error, Result};

/// Scalar type usable by every kernel in the crate. Implemented for `f32`
/// (training) and `f64` (gradient verification, oracles).
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssignOps
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(src: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(src: &[u8]) -> Self {
        f32::from_le_bytes(src[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(src: &[u8]) -> Self {
        f64::from_le_bytes(src[..8].try_into().unwrap())
    }
}

/// Storage precision of a scalar buffer, as recorded in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Host-side dense tensor: contiguous row-major scalars plus shape.
///
/// Gradients are carried here only for plain (non-parameter) tensors that a
/// caller explicitly marks `requires_grad`; named parameters live in
/// [`ParamStore`] instead.
#[derive(Clone, Debug)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", n, data.len()));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); n], requires_grad: false, grad: None }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n], requires_grad: false, grad: None }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Cast every element through `f64` into another precision.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Dimensions of a `[B, C, H, W]` activation tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims4 {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn of(shape: &[usize], context: &'static str) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::shape(context, "[B,C,H,W]", shape));
        }
        Ok(Dims4 { b: shape[0], c: shape[1], h: shape[2], w: shape[3] })
    }

    pub fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub fn to_vec(&self) -> Vec<usize> {
        vec![self.b, self.c, self.h, self.w]
    }
}

pub(crate) fn assert_all_finite<S: Scalar>(data: &[S], context: &str) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "non-finite value produced by {context}"
    );
}
