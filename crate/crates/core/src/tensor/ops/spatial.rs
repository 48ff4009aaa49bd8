//! Spatial ops over the trailing two (height, width) dimensions.

use crate::error::{Error, Result};
use crate::tensor::ops::tracking;
use crate::tensor::{Scalar, Tape, Tensor};

fn split_hw(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Dim(format!(
            "need at least 2 trailing spatial dims, got {shape:?}"
        )));
    }
    let w = shape[shape.len() - 1];
    let h = shape[shape.len() - 2];
    let lead: usize = shape[..shape.len() - 2].iter().product();
    Ok((lead, h, w))
}

/// Appends zero rows/columns at the bottom/right to reach `th x tw`.
pub fn pad2d<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    th: usize,
    tw: usize,
) -> Result<Tensor<T>> {
    let (lead, h, w) = split_hw(x.shape())?;
    if th < h || tw < w {
        return Err(Error::Dim(format!(
            "pad2d target {th}x{tw} smaller than input {h}x{w}"
        )));
    }
    let mut out_shape = x.shape().to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = th;
    out_shape[n - 1] = tw;

    let mut data = vec![T::zero(); lead * th * tw];
    for l in 0..lead {
        let src = &x.data()[l * h * w..(l + 1) * h * w];
        let dst = &mut data[l * th * tw..(l + 1) * th * tw];
        for i in 0..h {
            dst[i * tw..i * tw + w].copy_from_slice(&src[i * w..(i + 1) * w]);
        }
    }
    let out = Tensor::new(data, out_shape, tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut dx = x.grad_mut();
            for l in 0..lead {
                let gsl = &g[l * th * tw..(l + 1) * th * tw];
                let dsl = &mut dx[l * h * w..(l + 1) * h * w];
                for i in 0..h {
                    for j in 0..w {
                        dsl[i * w + j] += gsl[i * tw + j];
                    }
                }
            }
        });
    }
    Ok(out)
}

/// Keeps the top-left `th x tw` block.
pub fn crop2d<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    th: usize,
    tw: usize,
) -> Result<Tensor<T>> {
    let (lead, h, w) = split_hw(x.shape())?;
    if th > h || tw > w {
        return Err(Error::Dim(format!(
            "crop2d target {th}x{tw} larger than input {h}x{w}"
        )));
    }
    let mut out_shape = x.shape().to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = th;
    out_shape[n - 1] = tw;

    let mut data = vec![T::zero(); lead * th * tw];
    for l in 0..lead {
        let src = &x.data()[l * h * w..(l + 1) * h * w];
        let dst = &mut data[l * th * tw..(l + 1) * th * tw];
        for i in 0..th {
            dst[i * tw..(i + 1) * tw].copy_from_slice(&src[i * w..i * w + tw]);
        }
    }
    let out = Tensor::new(data, out_shape, tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut dx = x.grad_mut();
            for l in 0..lead {
                let gsl = &g[l * th * tw..(l + 1) * th * tw];
                let dsl = &mut dx[l * h * w..(l + 1) * h * w];
                for i in 0..th {
                    for j in 0..tw {
                        dsl[i * w + j] += gsl[i * tw + j];
                    }
                }
            }
        });
    }
    Ok(out)
}

/// What a 2x2 max-pool does when a spatial size is odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddPolicy {
    /// Refuse the input (the architectures this library targets keep sizes even).
    Reject,
    /// Extend the border by replicating the last row/column, then pool.
    Replicate,
}

/// 2x2 max-pooling with stride 2 over `B x C x H x W`; rejects odd sizes.
pub fn max_pool2<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
    max_pool2_with_policy(tape, x, OddPolicy::Reject)
}

/// 2x2 max-pooling with an explicit odd-size policy.
///
/// Gradient routes to the window maximum; on ties the first element in
/// row-major window order wins.
pub fn max_pool2_with_policy<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    policy: OddPolicy,
) -> Result<Tensor<T>> {
    let (lead, h, w) = split_hw(x.shape())?;
    if (h % 2 != 0 || w % 2 != 0) && policy == OddPolicy::Reject {
        return Err(Error::Dim(format!(
            "max_pool2 needs even spatial sizes, got {h}x{w}"
        )));
    }
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out_shape = x.shape().to_vec();
    let n = out_shape.len();
    out_shape[n - 2] = oh;
    out_shape[n - 1] = ow;

    let mut data = vec![T::zero(); lead * oh * ow];
    // Flat source index of each window maximum, for the backward route.
    let mut argmax = vec![0usize; lead * oh * ow];
    for l in 0..lead {
        let src = &x.data()[l * h * w..(l + 1) * h * w];
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for di in 0..2 {
                    for dj in 0..2 {
                        // Replicate policy clamps out-of-range taps to the border.
                        let si = (2 * oi + di).min(h - 1);
                        let sj = (2 * oj + dj).min(w - 1);
                        let v = src[si * w + sj];
                        if v > best {
                            best = v;
                            best_idx = si * w + sj;
                        }
                    }
                }
                let o = oi * ow + oj;
                data[l * oh * ow + o] = best;
                argmax[l * oh * ow + o] = l * h * w + best_idx;
            }
        }
    }
    let out = Tensor::new(data, out_shape, tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut dx = x.grad_mut();
            for (gi, &src_idx) in g.iter().zip(&argmax) {
                dx[src_idx] += *gi;
            }
        });
    }
    Ok(out)
}
