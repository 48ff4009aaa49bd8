//! Transform-domain ops: batched 2-d WHT/IWHT and the per-channel
//! multiply-accumulate that realizes dyadic convolution between them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ops::tracking;
use crate::tensor::{Scalar, Tape, Tensor};
use crate::transforms;

fn square_pow2_dims(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Arg(format!(
            "2-d transform needs trailing H x W dims, got {shape:?}"
        )));
    }
    let w = shape[shape.len() - 1];
    let h = shape[shape.len() - 2];
    if h != w {
        return Err(Error::Arg(format!("transform block must be square, got {h}x{w}")));
    }
    if !h.is_power_of_two() {
        return Err(Error::Arg(format!(
            "transform order must be a power of two, got {h}"
        )));
    }
    let lead: usize = shape[..shape.len() - 2].iter().product();
    Ok((lead, h))
}

fn transform_slices<T: Scalar>(data: &mut [T], n: usize, inverse: bool) {
    data.par_chunks_mut(n * n).for_each(|slice| {
        if inverse {
            transforms::iwht2d_in_place(slice, n).expect("checked dims");
        } else {
            transforms::wht2d_in_place(slice, n).expect("checked dims");
        }
    });
}

/// Unnormalized 2-d WHT of each trailing `N x N` slice.
///
/// The transform is linear and symmetric, so its backward is itself.
pub fn wht2d<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = square_pow2_dims(x.shape())?;
    let mut data = x.data().to_vec();
    transform_slices(&mut data, n, false);
    let out = Tensor::new(data, x.shape().to_vec(), tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut gd = g.to_vec();
            transform_slices(&mut gd, n, false);
            x.accumulate_grad(&gd);
        });
    }
    Ok(out)
}

/// Inverse 2-d WHT (`1/N^2` scaled) of each trailing `N x N` slice.
pub fn iwht2d<T: Scalar>(tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = square_pow2_dims(x.shape())?;
    let mut data = x.data().to_vec();
    transform_slices(&mut data, n, true);
    let out = Tensor::new(data, x.shape().to_vec(), tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut gd = g.to_vec();
            transform_slices(&mut gd, n, true);
            x.accumulate_grad(&gd);
        });
    }
    Ok(out)
}

/// Per-position product summed over the channel axis:
/// `out[b, o, s] = sum_c x[b, c, s] * k[o, c, s]`
/// for `x: B x C x (S...)` against `k: O x C x (S...)`.
pub fn mul_sum_channels<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    k: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.shape().len() < 3 || k.shape().len() < 3 {
        return Err(Error::Dim(format!(
            "mul_sum_channels needs B x C x S... and O x C x S..., got {:?} and {:?}",
            x.shape(),
            k.shape()
        )));
    }
    let b = x.shape()[0];
    let c = x.shape()[1];
    let o = k.shape()[0];
    if k.shape()[1] != c || x.shape()[2..] != k.shape()[2..] {
        return Err(Error::Dim(format!(
            "mul_sum_channels mismatch: {:?} vs {:?}",
            x.shape(),
            k.shape()
        )));
    }
    let s: usize = x.shape()[2..].iter().product();

    let xd = x.data();
    let kd = k.data();
    let mut data = vec![T::zero(); b * o * s];
    data.par_chunks_mut(o * s).enumerate().for_each(|(bi, ob)| {
        for oi in 0..o {
            let out_sl = &mut ob[oi * s..(oi + 1) * s];
            for ci in 0..c {
                let xs = &xd[(bi * c + ci) * s..(bi * c + ci + 1) * s];
                let ks = &kd[(oi * c + ci) * s..(oi * c + ci + 1) * s];
                for ((ov, &xv), &kv) in out_sl.iter_mut().zip(xs).zip(ks) {
                    *ov += xv * kv;
                }
            }
        }
    });

    let mut out_shape = vec![b, o];
    out_shape.extend_from_slice(&x.shape()[2..]);
    let out = Tensor::new(data, out_shape, tracking(tape, &[x, k]));
    if out.requires_grad() {
        let (x, k) = (x.clone(), k.clone());
        tape.unwrap().record(&out, move |g| {
            let xd = x.data();
            let kd = k.data();
            if x.requires_grad() {
                let mut dx = x.grad_mut();
                dx.par_chunks_mut(c * s).enumerate().for_each(|(bi, dxb)| {
                    for ci in 0..c {
                        let dsl = &mut dxb[ci * s..(ci + 1) * s];
                        for oi in 0..o {
                            let gs = &g[(bi * o + oi) * s..(bi * o + oi + 1) * s];
                            let ks = &kd[(oi * c + ci) * s..(oi * c + ci + 1) * s];
                            for ((dv, &gv), &kv) in dsl.iter_mut().zip(gs).zip(ks) {
                                *dv += gv * kv;
                            }
                        }
                    }
                });
            }
            if k.requires_grad() {
                let mut dk = k.grad_mut();
                dk.par_chunks_mut(c * s).enumerate().for_each(|(oi, dko)| {
                    for ci in 0..c {
                        let dsl = &mut dko[ci * s..(ci + 1) * s];
                        for bi in 0..b {
                            let gs = &g[(bi * o + oi) * s..(bi * o + oi + 1) * s];
                            let xs = &xd[(bi * c + ci) * s..(bi * c + ci + 1) * s];
                            for ((dv, &gv), &xv) in dsl.iter_mut().zip(gs).zip(xs) {
                                *dv += gv * xv;
                            }
                        }
                    }
                });
            }
        });
    }
    Ok(out)
}
