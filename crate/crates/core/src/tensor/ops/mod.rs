//! Differentiable tensor primitives.
//!
//! Every op takes an optional [`Tape`]; with a tape present and at least one
//! gradient-requiring input, the op records a backward rule. With no tape
//! (evaluation) it is a plain computation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

mod conv;
mod linear;
mod loss;
mod norm;
mod spatial;
mod wht;

pub use conv::conv2d_same;
pub use linear::linear;
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm2d, dropout, BnState};
pub use spatial::{crop2d, max_pool2, max_pool2_with_policy, pad2d, OddPolicy};
pub use wht::{iwht2d, mul_sum_channels, wht2d};

/// Train/eval switch for batch norm and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Element-wise binary operation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

pub(crate) fn tracking<T: Scalar>(tape: Option<&Tape<T>>, inputs: &[&Tensor<T>]) -> bool {
    tape.is_some() && inputs.iter().any(|t| t.requires_grad())
}

/// Standard matrix product of `a: M×K` and `b: K×P`.
pub fn matmul<T: Scalar>(
    tape: Option<&Tape<T>>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        s => return Err(Error::Dim(format!("matmul lhs must be 2-d, got {s:?}"))),
    };
    let (k2, p) = match b.shape() {
        [k2, p] => (*k2, *p),
        s => return Err(Error::Dim(format!("matmul rhs must be 2-d, got {s:?}"))),
    };
    if k != k2 {
        return Err(Error::Dim(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }

    let out = Tensor::new(
        matmul_raw(a.data(), b.data(), m, k, p),
        vec![m, p],
        tracking(tape, &[a, b]),
    );

    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.unwrap().record(&out, move |g| {
            // da = g . b^T
            if a.requires_grad() {
                let mut da = a.grad_mut();
                for i in 0..m {
                    for kk in 0..k {
                        let mut s = T::zero();
                        for pp in 0..p {
                            s += g[i * p + pp] * b.data()[kk * p + pp];
                        }
                        da[i * k + kk] += s;
                    }
                }
            }
            // db = a^T . g
            if b.requires_grad() {
                let mut db = b.grad_mut();
                for i in 0..m {
                    for kk in 0..k {
                        let aik = a.data()[i * k + kk];
                        for pp in 0..p {
                            db[kk * p + pp] += aik * g[i * p + pp];
                        }
                    }
                }
            }
        });
    }
    Ok(out)
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, p: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * p];
    for i in 0..m {
        let crow = &mut c[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * p..(kk + 1) * p];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * *bv;
            }
        }
    }
    c
}

/// Point-wise add/sub/mul of two same-shape tensors.
pub fn elementwise<T: Scalar>(
    tape: Option<&Tape<T>>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: BinaryOp,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "elementwise {:?} on mismatched shapes {:?} and {:?}",
            op,
            a.shape(),
            b.shape()
        )));
    }
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
        })
        .collect();
    let out = Tensor::new(data, a.shape().to_vec(), tracking(tape, &[a, b]));

    if out.requires_grad() {
        let (a, b) = (a.clone(), b.clone());
        tape.unwrap().record(&out, move |g| {
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    if a.requires_grad() {
                        a.accumulate_grad(g);
                    }
                    if b.requires_grad() {
                        let mut db = b.grad_mut();
                        for (d, &gi) in db.iter_mut().zip(g) {
                            match op {
                                BinaryOp::Add => *d += gi,
                                _ => *d -= gi,
                            }
                        }
                    }
                }
                BinaryOp::Mul => {
                    // da = g . b, db = g . a; accumulate one side at a time so
                    // a == b (squaring) stays borrow-safe.
                    if a.requires_grad() {
                        let mut da = a.grad_mut();
                        for i in 0..g.len() {
                            da[i] += g[i] * b.data()[i];
                        }
                    }
                    if b.requires_grad() {
                        let mut db = b.grad_mut();
                        for i in 0..g.len() {
                            db[i] += g[i] * a.data()[i];
                        }
                    }
                }
            }
        });
    }
    Ok(out)
}

/// max(x, 0) point-wise.
pub fn relu<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    let out = Tensor::new(data, x.shape().to_vec(), tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut dx = x.grad_mut();
            for (i, &gi) in g.iter().enumerate() {
                if x.data()[i] > T::zero() {
                    dx[i] += gi;
                }
            }
        });
    }
    out
}

/// Sum of all elements, as a scalar tensor.
pub fn sum_all<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>) -> Tensor<T> {
    let s: T = x.data().iter().copied().sum();
    let out = Tensor::new(vec![s], vec![1], tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let gi = g[0];
            let mut dx = x.grad_mut();
            for d in dx.iter_mut() {
                *d += gi;
            }
        });
    }
    out
}

/// Multiplication by a constant.
pub fn scale<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>, c: T) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| v * c).collect();
    let out = Tensor::new(data, x.shape().to_vec(), tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut dx = x.grad_mut();
            for (d, &gi) in dx.iter_mut().zip(g) {
                *d += gi * c;
            }
        });
    }
    out
}

/// Shape change over the same row-major storage, gradient-tracked.
pub fn reshape<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    shape: &[usize],
) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() {
        return Err(Error::Dim(format!(
            "cannot reshape {:?} into {:?}",
            x.shape(),
            shape
        )));
    }
    let out = Tensor::new(x.data().to_vec(), shape.to_vec(), tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            x.accumulate_grad(g);
        });
    }
    Ok(out)
}

/// Collapses all but the leading (batch) dimension.
pub fn flatten<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let b = *x
        .shape()
        .first()
        .ok_or_else(|| Error::Dim("flatten on 0-d tensor".into()))?;
    let rest = x.numel() / b;
    reshape(tape, x, &[b, rest])
}
