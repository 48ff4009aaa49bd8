use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::ops::{tracking, Mode};
use crate::tensor::{Scalar, Tape, Tensor};

/// Running statistics and constants for one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from(0.1).unwrap(),
            eps: T::from(1e-5).unwrap(),
        }
    }
}

/// Per-channel normalization of `x: B x C x H x W` over the batch and spatial
/// axes, with learned affine `gamma`, `beta`.
///
/// Train mode normalizes with batch statistics and folds them into the
/// running buffers; eval mode uses the running buffers. Variance is the
/// biased estimate throughout.
pub fn batch_norm2d<T: Scalar>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BnState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = match x.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::Dim(format!("batch_norm2d input must be B x C x H x W, got {s:?}"))),
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Dim(format!(
            "affine shapes {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    if mode == Mode::Train && b < 2 {
        return Err(Error::Config(format!(
            "batch_norm2d training needs a batch of at least 2, got {b}"
        )));
    }
    let n = b * h * w;
    let n_t = T::from(n).unwrap();
    let plane = h * w;

    // Per-channel mean/var used for this pass.
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            for ci in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    let sl = &x.data()[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                    s += sl.iter().copied().sum::<T>();
                }
                let m = s / n_t;
                let mut v = T::zero();
                for bi in 0..b {
                    let sl = &x.data()[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                    for &xv in sl {
                        let d = xv - m;
                        v += d * d;
                    }
                }
                mean[ci] = m;
                var[ci] = v / n_t;
                let mom = state.momentum;
                state.running_mean[ci] = (T::one() - mom) * state.running_mean[ci] + mom * m;
                state.running_var[ci] = (T::one() - mom) * state.running_var[ci] + mom * var[ci];
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
    let mut data = vec![T::zero(); x.numel()];
    let mut x_hat = vec![T::zero(); x.numel()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let g = gamma.data()[ci];
            let be = beta.data()[ci];
            for i in 0..plane {
                let xh = (x.data()[base + i] - mean[ci]) * inv_std[ci];
                x_hat[base + i] = xh;
                data[base + i] = g * xh + be;
            }
        }
    }

    let out = Tensor::new(data, x.shape().to_vec(), tracking(tape, &[x, gamma, beta]));
    if out.requires_grad() {
        let (x, gamma, beta) = (x.clone(), gamma.clone(), beta.clone());
        tape.unwrap().record(&out, move |gout| {
            if gamma.requires_grad() {
                let mut dg = gamma.grad_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let mut s = T::zero();
                        for i in 0..plane {
                            s += gout[base + i] * x_hat[base + i];
                        }
                        dg[ci] += s;
                    }
                }
            }
            if beta.requires_grad() {
                let mut db = beta.grad_mut();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        db[ci] += gout[base..base + plane].iter().copied().sum::<T>();
                    }
                }
            }
            if x.requires_grad() {
                let mut dx = x.grad_mut();
                match mode {
                    Mode::Train => {
                        // dx = gamma * inv_std * (g - mean(g) - x_hat * mean(g * x_hat))
                        for ci in 0..c {
                            let mut sum_g = T::zero();
                            let mut sum_gx = T::zero();
                            for bi in 0..b {
                                let base = (bi * c + ci) * plane;
                                for i in 0..plane {
                                    sum_g += gout[base + i];
                                    sum_gx += gout[base + i] * x_hat[base + i];
                                }
                            }
                            let mg = sum_g / n_t;
                            let mgx = sum_gx / n_t;
                            let scale = gamma.data()[ci] * inv_std[ci];
                            for bi in 0..b {
                                let base = (bi * c + ci) * plane;
                                for i in 0..plane {
                                    dx[base + i] += scale
                                        * (gout[base + i] - mg - x_hat[base + i] * mgx);
                                }
                            }
                        }
                    }
                    Mode::Eval => {
                        // Statistics are constants here.
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * plane;
                                let scale = gamma.data()[ci] * inv_std[ci];
                                for i in 0..plane {
                                    dx[base + i] += scale * gout[base + i];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    Ok(out)
}

/// Train-mode dropout with inverted scaling: zero with probability `p`,
/// scale survivors by `1/(1-p)`. Eval mode and `p == 0` are the identity.
pub fn dropout<T: Scalar, R: Rng>(
    tape: Option<&Tape<T>>,
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let keep_scale = T::from(1.0 / (1.0 - p)).unwrap();
    let mask: Vec<bool> = (0..x.numel()).map(|_| rng.random::<f64>() >= p).collect();
    let data: Vec<T> = x
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v * keep_scale } else { T::zero() })
        .collect();
    let out = Tensor::new(data, x.shape().to_vec(), tracking(tape, &[x]));
    if out.requires_grad() {
        let x = x.clone();
        tape.unwrap().record(&out, move |g| {
            let mut dx = x.grad_mut();
            for (i, &keep) in mask.iter().enumerate() {
                if keep {
                    dx[i] += g[i] * keep_scale;
                }
            }
        });
    }
    Ok(out)
}
