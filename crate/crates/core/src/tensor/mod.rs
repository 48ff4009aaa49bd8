//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional array of floats. Operations on
//! tensors live in [`ops`]; when an op runs under a [`Tape`] and any input
//! requires a gradient, the op records a backward rule so that
//! [`Tape::backward`] can later fill every parameter's gradient buffer.
//!
//! Element type is generic: `f64` is the default for verification work,
//! `f32` is available when training speed matters.

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod ops;
mod tape;

pub use tape::Tape;

/// Element-type tag carried by checkpoints and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element type a [`Tensor`] can hold.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn from_f64(v: f64) -> Self {
        v
    }
}

struct Inner<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
}

/// Immutable dense tensor. Cloning is cheap (shared storage).
///
/// Gradients accumulate additively into an interior buffer during
/// [`Tape::backward`]; leaves created with [`Tensor::param`] keep theirs
/// until the parameter is replaced by the optimizer.
pub struct Tensor<T> {
    inner: Rc<Inner<T>>,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from row-major data, checking that the shape covers it.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} covers {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::new(data, shape.to_vec(), false))
    }

    /// A gradient-carrying leaf (model parameter).
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} covers {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self::new(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(vec![T::zero(); numel], shape.to_vec(), false)
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(vec![T::one(); numel], shape.to_vec(), false)
    }

    pub fn scalar(v: T) -> Self {
        Self::new(vec![v], vec![1], false)
    }

    pub(crate) fn new(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "tensor holds non-finite values"
        );
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Accumulated gradient. For a gradient-carrying tensor that backward
    /// never reached this is all zeros; for a non-gradient tensor it is `None`.
    pub fn grad(&self) -> Option<Vec<T>> {
        let g = self.inner.grad.borrow();
        match (&*g, self.inner.requires_grad) {
            (Some(buf), _) => Some(buf.clone()),
            (None, true) => Some(vec![T::zero(); self.numel()]),
            (None, false) => None,
        }
    }

    /// Raw gradient buffer, if any accumulation happened.
    pub fn grad_raw(&self) -> Option<Ref<'_, Vec<T>>> {
        let g = self.inner.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |o| o.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Mutable gradient buffer, created zero-filled on first use.
    pub(crate) fn grad_mut(&self) -> RefMut<'_, Vec<T>> {
        let mut g = self.inner.grad.borrow_mut();
        if g.is_none() {
            *g = Some(vec![T::zero(); self.numel()]);
        }
        RefMut::map(g, |o| o.as_mut().unwrap())
    }

    /// Detaches and returns the accumulated gradient, leaving `None`.
    pub(crate) fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow_mut().take()
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut g = self.grad_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
    }

    /// Reinterprets the same storage under a new shape of equal volume.
    ///
    /// Not gradient-tracked; inside a differentiable path use
    /// [`ops::reshape`] instead.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Self::new(
            self.inner.data.clone(),
            shape.to_vec(),
            self.inner.requires_grad,
        ))
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("data", &self.inner.data)
            .finish()
    }
}
