//! Trainable feature-extraction blocks.
//!
//! [`HadamardLayer`] replaces spatial convolution: input channels and
//! kernels are zero-padded to the plan's power-of-two order, both are
//! transformed with the 2-d WHT, multiplied element-wise, summed over
//! input channels, inverse-transformed, and cropped back to the input's
//! spatial size. [`ConvLayer`] is the reference it is compared against;
//! both carry exactly `out_features * in_channels * F^2` learnable values
//! (no bias), so accuracy differences reflect the method, not capacity.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::ops::{
    batch_norm2d, conv2d_same, crop2d, iwht2d, linear, mul_sum_channels, pad2d, wht2d, BnState,
    Mode,
};
use crate::tensor::{Scalar, Tape, Tensor};
use crate::transforms::HadamardPlan;

/// Draws i.i.d. standard-normal parameter values (zero mean, unit variance).
pub fn param_init<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64(v)
        })
        .collect();
    Tensor::param(data, shape).expect("shape covers data by construction")
}

/// Normal init scaled by `sqrt(2 / fan_in)`; available as an alternative,
/// not the default.
pub fn param_init_scaled<T: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let scale = (2.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64(v * scale)
        })
        .collect();
    Tensor::param(data, shape).expect("shape covers data by construction")
}

/// Feature extraction in the Walsh-Hadamard domain.
///
/// Kernels live in the spatial domain at `F x F` and are padded and
/// transformed on every forward pass, keeping the parameter count equal
/// to the convolution layer's.
pub struct HadamardLayer<T> {
    pub kernels: Tensor<T>,
    pub plan: HadamardPlan,
    pub out_features: usize,
    pub in_channels: usize,
    pub kernel_size: usize,
}

impl<T: Scalar> HadamardLayer<T> {
    pub fn new<R: Rng>(
        out_features: usize,
        in_channels: usize,
        kernel_size: usize,
        input_hw: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let kernels = param_init(
            &[out_features, in_channels, kernel_size, kernel_size],
            rng,
        );
        HadamardLayer {
            kernels,
            plan: HadamardPlan::new(input_hw.0, input_hw.1, kernel_size),
            out_features,
            in_channels,
            kernel_size,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernels.numel()
    }

    /// `B x C x H x W -> B x O x H x W` via pad, WHT, element-wise product
    /// summed over input channels, inverse WHT, crop to the input size.
    pub fn forward(&self, tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = match x.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => {
                return Err(Error::Dim(format!(
                    "hadamard layer input must be B x C x H x W, got {s:?}"
                )))
            }
        };
        if c != self.in_channels {
            return Err(Error::Dim(format!(
                "hadamard layer expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if h > self.plan.padded || w > self.plan.padded {
            return Err(Error::Dim(format!(
                "input {h}x{w} exceeds the layer's padded order {}",
                self.plan.padded
            )));
        }
        let n = self.plan.padded;

        // Input channels are transformed once and reused across all output
        // features; kernels are re-transformed because they change every step.
        let xw = wht2d(tape, &pad2d(tape, x, n, n)?)?;
        let kw = wht2d(tape, &pad2d(tape, &self.kernels, n, n)?)?;
        let prod = mul_sum_channels(tape, &xw, &kw)?;
        let spatial = iwht2d(tape, &prod)?;
        crop2d(tape, &spatial, h, w)
    }
}

/// Plain "same"-size cross-correlation layer, bias disabled so its
/// parameter count matches [`HadamardLayer`].
pub struct ConvLayer<T> {
    pub kernels: Tensor<T>,
    pub out_features: usize,
    pub in_channels: usize,
    pub kernel_size: usize,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new<R: Rng>(
        out_features: usize,
        in_channels: usize,
        kernel_size: usize,
        rng: &mut R,
    ) -> Self {
        let kernels = param_init(
            &[out_features, in_channels, kernel_size, kernel_size],
            rng,
        );
        ConvLayer {
            kernels,
            out_features,
            in_channels,
            kernel_size,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernels.numel()
    }

    pub fn forward(&self, tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_same(tape, x, &self.kernels)
    }
}

/// Fully connected head: `y = x W^T + b`.
pub struct DenseLayer<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new<R: Rng>(out_features: usize, in_features: usize, rng: &mut R) -> Self {
        DenseLayer {
            weights: param_init(&[out_features, in_features], rng),
            bias: param_init(&[out_features], rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel() + self.bias.numel()
    }

    pub fn forward(&self, tape: Option<&Tape<T>>, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(tape, x, &self.weights, &self.bias)
    }
}

/// Batch-norm block owning its affine parameters and running statistics.
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: BnState<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(vec![T::one(); channels], &[channels]).unwrap(),
            beta: Tensor::param(vec![T::zero(); channels], &[channels]).unwrap(),
            state: BnState::new(channels),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }

    pub fn forward(
        &mut self,
        tape: Option<&Tape<T>>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        batch_norm2d(tape, x, &self.gamma, &self.beta, &mut self.state, mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::matmul_raw;
    use crate::transforms::{
        dyadic_conv_bruteforce, hadamard_matrix, spatial_conv_bruteforce, ConvOutput,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn delta_kernel(o: usize, c: usize, f: usize) -> Tensor<f64> {
        let mut k = vec![0.0; o * c * f * f];
        for oi in 0..o {
            for ci in 0..c {
                k[(oi * c + ci) * f * f] = 1.0;
            }
        }
        Tensor::param(k, &[o, c, f, f]).unwrap()
    }

    #[test]
    fn hadamard_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = HadamardLayer::<f64>::new(1, 1, 3, (4, 4), &mut rng);
        layer.kernels = delta_kernel(1, 1, 3);
        let x =
            Tensor::from_vec((0..16).map(|i| i as f64 - 7.5).collect(), &[1, 1, 4, 4]).unwrap();
        let y = layer.forward(None, &x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn hadamard_matches_dyadic_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = HadamardLayer::<f64>::new(1, 1, 3, (4, 4), &mut rng);
        let x_vals: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let x = Tensor::from_vec(x_vals.clone(), &[1, 1, 4, 4]).unwrap();
        let y = layer.forward(None, &x).unwrap();

        // pad the 3x3 kernel to the 4x4 plan and run the direct XOR sum
        let n = 4;
        let mut k_pad = vec![0.0f64; n * n];
        for u in 0..3 {
            for v in 0..3 {
                k_pad[u * n + v] = layer.kernels.data()[u * 3 + v];
            }
        }
        let want = dyadic_conv_bruteforce(&x_vals, &k_pad, n).unwrap();
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn hadamard_two_delta_channels_sum_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = HadamardLayer::<f64>::new(1, 2, 3, (4, 4), &mut rng);
        layer.kernels = delta_kernel(1, 2, 3);
        let x1: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x2: Vec<f64> = (0..16).map(|i| (i * i) as f64 * 0.1).collect();
        let mut both = x1.clone();
        both.extend_from_slice(&x2);
        let x = Tensor::from_vec(both, &[1, 2, 4, 4]).unwrap();
        let y = layer.forward(None, &x).unwrap();
        for i in 0..16 {
            assert!((y.data()[i] - (x1[i] + x2[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn hadamard_fast_path_matches_naive_matrix_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = HadamardLayer::<f64>::new(2, 2, 3, (4, 4), &mut rng);
        let x_vals: Vec<f64> = (0..2 * 2 * 16)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let x = Tensor::from_vec(x_vals.clone(), &[2, 2, 4, 4]).unwrap();
        let fast = layer.forward(None, &x).unwrap();

        let n = 4;
        let h: Vec<f64> = hadamard_matrix(n).unwrap().to_dense();
        let wht_naive = |m: &[f64]| -> Vec<f64> {
            // H M H^T through two dense products
            let hm = matmul_raw(&h, m, n, n, n);
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += hm[i * n + k] * h[j * n + k];
                    }
                    out[i * n + j] = s;
                }
            }
            out
        };
        let pad4 = |src: &[f64], side: usize| -> Vec<f64> {
            let mut out = vec![0.0; n * n];
            for u in 0..side {
                for v in 0..side {
                    out[u * n + v] = src[u * side + v];
                }
            }
            out
        };

        for b in 0..2 {
            for o in 0..2 {
                let mut acc = vec![0.0f64; n * n];
                for c in 0..2 {
                    let xw = wht_naive(&pad4(&x_vals[(b * 2 + c) * 16..(b * 2 + c + 1) * 16], 4));
                    let kw = wht_naive(&pad4(
                        &layer.kernels.data()[(o * 2 + c) * 9..(o * 2 + c + 1) * 9],
                        3,
                    ));
                    for i in 0..n * n {
                        acc[i] += xw[i] * kw[i];
                    }
                }
                let mut inv = wht_naive(&acc);
                for v in inv.iter_mut() {
                    *v /= (n * n) as f64;
                }
                let got = &fast.data()[(b * 2 + o) * 16..(b * 2 + o + 1) * 16];
                for i in 0..n * n {
                    assert!((got[i] - inv[i]).abs() < 1e-9, "b={b} o={o} i={i}");
                }
            }
        }
    }

    #[test]
    fn layers_are_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let had = HadamardLayer::<f64>::new(2, 1, 3, (4, 4), &mut rng);
        let conv = ConvLayer::<f64>::new(2, 1, 3, &mut rng);
        let x1: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
        let x2: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
        let (a, b) = (2.5f64, -1.25f64);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let t1 = Tensor::from_vec(x1, &[1, 1, 4, 4]).unwrap();
        let t2 = Tensor::from_vec(x2, &[1, 1, 4, 4]).unwrap();
        let tm = Tensor::from_vec(mix, &[1, 1, 4, 4]).unwrap();

        let check = |y1: Tensor<f64>, y2: Tensor<f64>, ym: Tensor<f64>| {
            for i in 0..ym.numel() {
                let want = a * y1.data()[i] + b * y2.data()[i];
                assert!((ym.data()[i] - want).abs() < 1e-9);
            }
        };
        check(
            had.forward(None, &t1).unwrap(),
            had.forward(None, &t2).unwrap(),
            had.forward(None, &tm).unwrap(),
        );
        check(
            conv.forward(None, &t1).unwrap(),
            conv.forward(None, &t2).unwrap(),
            conv.forward(None, &tm).unwrap(),
        );
    }

    #[test]
    fn conv_one_by_one_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = ConvLayer::<f64>::new(1, 1, 1, &mut rng);
        layer.kernels = Tensor::param(vec![3.0], &[1, 1, 1, 1]).unwrap();
        let x = Tensor::from_vec((0..16).map(|i| i as f64).collect(), &[1, 1, 4, 4]).unwrap();
        let y = layer.forward(None, &x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b * 3.0);
        }
    }

    #[test]
    fn conv_matches_flipped_bruteforce_same() {
        // cross-correlation with k == true convolution with k reversed
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = ConvLayer::<f64>::new(1, 1, 3, &mut rng);
        let x_vals: Vec<f64> = (0..25).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let x = Tensor::from_vec(x_vals.clone(), &[1, 1, 5, 5]).unwrap();
        let y = layer.forward(None, &x).unwrap();

        let mut rev = layer.kernels.data().to_vec();
        rev.reverse();
        let (want, _) =
            spatial_conv_bruteforce(&x_vals, (5, 5), &rev, 3, ConvOutput::Same).unwrap();
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut layer = DenseLayer::<f64>::new(3, 3, &mut rng);
        layer.weights =
            Tensor::param(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]).unwrap();
        layer.bias = Tensor::param(vec![0.0; 3], &[3]).unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[1, 3]).unwrap();
        let y = layer.forward(None, &x).unwrap();
        assert_eq!(y.data(), x.data());

        layer.bias = Tensor::param(vec![5.0, 6.0, 7.0], &[3]).unwrap();
        let zero = Tensor::zeros(&[2, 3]);
        let y = layer.forward(None, &zero).unwrap();
        assert_eq!(&y.data()[..3], layer.bias.data());
        assert_eq!(&y.data()[3..], layer.bias.data());
    }

    #[test]
    fn parameter_parity_between_methods() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (o, c, f) in [(32, 1, 3), (32, 3, 5), (64, 32, 7)] {
            let had = HadamardLayer::<f64>::new(o, c, f, (32, 32), &mut rng);
            let conv = ConvLayer::<f64>::new(o, c, f, &mut rng);
            assert_eq!(had.param_count(), o * c * f * f);
            assert_eq!(conv.param_count(), o * c * f * f);
        }
    }

    #[test]
    fn init_is_standard_normal_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t: Tensor<f64> = param_init(&[1_000_000], &mut rng);
        let mean: f64 = t.data().iter().sum::<f64>() / 1e6;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");

        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let t2: Tensor<f64> = param_init(&[1_000_000], &mut rng2);
        assert_eq!(t.data(), t2.data());
    }
}
