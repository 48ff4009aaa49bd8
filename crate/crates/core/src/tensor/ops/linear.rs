use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ops::tracking;
use crate::tensor::{Scalar, Tape, Tensor};

/// Fully connected transform `y = x W^T + b` for `x: B x IN`, `w: OUT x IN`,
/// `b: OUT`.
pub fn linear<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (bs, n_in) = match x.shape() {
        [bs, n_in] => (*bs, *n_in),
        s => return Err(Error::Dim(format!("linear input must be B x IN, got {s:?}"))),
    };
    let (n_out, wi) = match w.shape() {
        [o, i] => (*o, *i),
        s => return Err(Error::Dim(format!("weights must be OUT x IN, got {s:?}"))),
    };
    if wi != n_in || b.shape() != [n_out] {
        return Err(Error::Dim(format!(
            "linear shapes disagree: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }

    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let mut data = vec![T::zero(); bs * n_out];
    data.par_chunks_mut(n_out).enumerate().for_each(|(bi, row)| {
        let xrow = &xd[bi * n_in..(bi + 1) * n_in];
        for (oi, out) in row.iter_mut().enumerate() {
            let wrow = &wd[oi * n_in..(oi + 1) * n_in];
            let mut s = bd[oi];
            for (xv, wv) in xrow.iter().zip(wrow) {
                s += *xv * *wv;
            }
            *out = s;
        }
    });

    let out = Tensor::new(data, vec![bs, n_out], tracking(tape, &[x, w, b]));
    if out.requires_grad() {
        let (x, w, b) = (x.clone(), w.clone(), b.clone());
        tape.unwrap().record(&out, move |g| {
            let xd = x.data();
            let wd = w.data();
            if w.requires_grad() {
                let mut dw = w.grad_mut();
                dw.par_chunks_mut(n_in).enumerate().for_each(|(oi, dwr)| {
                    for bi in 0..bs {
                        let gv = g[bi * n_out + oi];
                        let xrow = &xd[bi * n_in..(bi + 1) * n_in];
                        for (d, xv) in dwr.iter_mut().zip(xrow) {
                            *d += gv * *xv;
                        }
                    }
                });
            }
            if b.requires_grad() {
                let mut db = b.grad_mut();
                for bi in 0..bs {
                    for oi in 0..n_out {
                        db[oi] += g[bi * n_out + oi];
                    }
                }
            }
            if x.requires_grad() {
                let mut dx = x.grad_mut();
                dx.par_chunks_mut(n_in).enumerate().for_each(|(bi, dxr)| {
                    for oi in 0..n_out {
                        let gv = g[bi * n_out + oi];
                        let wrow = &wd[oi * n_in..(oi + 1) * n_in];
                        for (d, wv) in dxr.iter_mut().zip(wrow) {
                            *d += gv * *wv;
                        }
                    }
                });
            }
        });
    }
    Ok(out)
}
