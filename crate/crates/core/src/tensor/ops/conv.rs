//! Direct "same"-size 2-d cross-correlation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ops::tracking;
use crate::tensor::{Scalar, Tape, Tensor};

/// Cross-correlates `x: B x C x H x W` with kernels `k: O x C x F x F`,
/// zero-padded so the output keeps the input's spatial size, summing over
/// input channels. No bias.
pub fn conv2d_same<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    k: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::Dim(format!("conv input must be B x C x H x W, got {s:?}"))),
    };
    let (o, ck, f) = match k.shape() {
        [o, ck, f, f2] if f == f2 => (*o, *ck, *f),
        s => return Err(Error::Dim(format!("kernels must be O x C x F x F, got {s:?}"))),
    };
    if c != ck {
        return Err(Error::Dim(format!(
            "conv channel mismatch: input has {c}, kernels expect {ck}"
        )));
    }
    if f > h || f > w {
        return Err(Error::Arg(format!(
            "kernel {f}x{f} larger than input {h}x{w}"
        )));
    }
    let pad = (f - 1) / 2;

    let xd = x.data();
    let kd = k.data();
    let mut data = vec![T::zero(); b * o * h * w];
    data.par_chunks_mut(o * h * w)
        .enumerate()
        .for_each(|(bi, planes)| {
            for oi in 0..o {
                let out_plane = &mut planes[oi * h * w..(oi + 1) * h * w];
                for ci in 0..c {
                    let x_plane = &xd[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    let k_tile = &kd[(oi * c + ci) * f * f..(oi * c + ci + 1) * f * f];
                    accumulate_corr(out_plane, x_plane, k_tile, h, w, f, pad);
                }
            }
        });

    let out = Tensor::new(data, vec![b, o, h, w], tracking(tape, &[x, k]));
    if out.requires_grad() {
        let (x, k) = (x.clone(), k.clone());
        tape.unwrap().record(&out, move |g| {
            let xd = x.data();
            let kd = k.data();
            if k.requires_grad() {
                let mut dk = k.grad_mut();
                dk.par_chunks_mut(c * f * f).enumerate().for_each(|(oi, dko)| {
                    for ci in 0..c {
                        for u in 0..f {
                            for v in 0..f {
                                let mut s = T::zero();
                                for bi in 0..b {
                                    let gp = &g[(bi * o + oi) * h * w..(bi * o + oi + 1) * h * w];
                                    let xp = &xd[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                                    s += corr_tap(gp, xp, h, w, u, v, pad);
                                }
                                dko[ci * f * f + u * f + v] += s;
                            }
                        }
                    }
                });
            }
            if x.requires_grad() {
                let mut dx = x.grad_mut();
                dx.par_chunks_mut(c * h * w).enumerate().for_each(|(bi, dxb)| {
                    for ci in 0..c {
                        let dxp = &mut dxb[ci * h * w..(ci + 1) * h * w];
                        for oi in 0..o {
                            let gp = &g[(bi * o + oi) * h * w..(bi * o + oi + 1) * h * w];
                            let k_tile = &kd[(oi * c + ci) * f * f..(oi * c + ci + 1) * f * f];
                            accumulate_corr_transposed(dxp, gp, k_tile, h, w, f, pad);
                        }
                    }
                });
            }
        });
    }
    Ok(out)
}

// out[i, j] += sum_{u, v} x[i + u - pad, j + v - pad] * k[u, v]
fn accumulate_corr<T: Scalar>(
    out: &mut [T],
    x: &[T],
    k: &[T],
    h: usize,
    w: usize,
    f: usize,
    pad: usize,
) {
    for u in 0..f {
        for v in 0..f {
            let kv = k[u * f + v];
            // j + v - pad in [0, w)
            let jlo = pad.saturating_sub(v);
            let jhi = (w + pad - v).min(w);
            for i in 0..h {
                let si = i + u;
                if si < pad || si - pad >= h {
                    continue;
                }
                let xrow = &x[(si - pad) * w + jlo + v - pad..];
                let orow = &mut out[i * w + jlo..i * w + jhi];
                for (o, xv) in orow.iter_mut().zip(xrow) {
                    *o += kv * *xv;
                }
            }
        }
    }
}

// dx[y, z] += sum_{u, v} g[y - u + pad, z - v + pad] * k[u, v]
fn accumulate_corr_transposed<T: Scalar>(
    dx: &mut [T],
    g: &[T],
    k: &[T],
    h: usize,
    w: usize,
    f: usize,
    pad: usize,
) {
    for u in 0..f {
        for v in 0..f {
            let kv = k[u * f + v];
            // z - v + pad in [0, w)
            let zlo = v.saturating_sub(pad);
            let zhi = (w + v).saturating_sub(pad).min(w);
            for y in 0..h {
                let gi = y + pad;
                if gi < u || gi - u >= h {
                    continue;
                }
                let grow = &g[(gi - u) * w + zlo + pad - v..];
                let drow = &mut dx[y * w + zlo..y * w + zhi];
                for (d, gv) in drow.iter_mut().zip(grow) {
                    *d += kv * *gv;
                }
            }
        }
    }
}

// sum_{i, j} g[i, j] * x[i + u - pad, j + v - pad]
fn corr_tap<T: Scalar>(g: &[T], x: &[T], h: usize, w: usize, u: usize, v: usize, pad: usize) -> T {
    let mut s = T::zero();
    let jlo = pad.saturating_sub(v);
    let jhi = (w + pad - v).min(w);
    for i in 0..h {
        let si = i + u;
        if si < pad || si - pad >= h {
            continue;
        }
        let xrow = &x[(si - pad) * w + jlo + v - pad..];
        let grow = &g[i * w + jlo..i * w + jhi];
        for (gv, xv) in grow.iter().zip(xrow) {
            s += *gv * *xv;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_kernel_scales_input() {
        let x = Tensor::from_vec((0..16).map(|i| i as f64).collect(), &[1, 1, 4, 4]).unwrap();
        let k = Tensor::from_vec(vec![2.5], &[1, 1, 1, 1]).unwrap();
        let y = conv2d_same(None, &x, &k).unwrap();
        let want: Vec<f64> = x.data().iter().map(|v| v * 2.5).collect();
        assert_eq!(y.data(), &want[..]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let k = Tensor::<f64>::zeros(&[3, 1, 3, 3]);
        assert!(matches!(
            conv2d_same(None, &x, &k),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn oversize_kernel_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d_same(None, &x, &k), Err(Error::Arg(_))));
    }
}
