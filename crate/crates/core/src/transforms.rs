//! Walsh-Hadamard transforms and brute-force convolution oracles.
//!
//! The fast path is the in-place butterfly ([`fwht_1d`]), which uses only
//! additions and subtractions. The naive matrix form ([`HadamardMatrix`])
//! exists to cross-check it and to serve the tests as an independent route.
//! Coefficients come out in natural (Hadamard) order, the order produced by
//! the block recursion from the order-2 matrix.
//!
//! Forward transforms are unnormalized; the inverse carries the whole
//! `1/N^2` factor for the 2-d case.

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Tally of arithmetic performed by an instrumented kernel.
///
/// Counters are per call; callers own them, nothing is global.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    pub multiplications: u64,
    pub additions: u64,
}

impl OpCounter {
    pub fn merge(&mut self, other: OpCounter) {
        self.multiplications += other.multiplications;
        self.additions += other.additions;
    }
}

trait Count {
    fn adds(&mut self, n: u64);
    fn mults(&mut self, n: u64);
}

struct NoCount;

impl Count for NoCount {
    #[inline(always)]
    fn adds(&mut self, _: u64) {}
    #[inline(always)]
    fn mults(&mut self, _: u64) {}
}

impl Count for OpCounter {
    #[inline(always)]
    fn adds(&mut self, n: u64) {
        self.additions += n;
    }
    #[inline(always)]
    fn mults(&mut self, n: u64) {
        self.multiplications += n;
    }
}

fn check_pow2_len(len: usize) -> Result<()> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::Arg(format!(
            "transform length must be a power of two, got {len}"
        )));
    }
    Ok(())
}

#[inline]
fn fwht_core<T: Scalar, C: Count>(v: &mut [T], counter: &mut C) {
    let n = v.len();
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                let a = v[j];
                let b = v[j + half];
                v[j] = a + b;
                v[j + half] = a - b;
            }
        }
        counter.adds(n as u64);
        half *= 2;
    }
}

/// In-place fast Walsh-Hadamard transform (unnormalized, natural order).
///
/// `N log2 N` additions/subtractions, zero multiplications; equals the
/// naive `H(N) . v` product exactly.
pub fn fwht_1d<T: Scalar>(v: &mut [T]) -> Result<()> {
    check_pow2_len(v.len())?;
    fwht_core(v, &mut NoCount);
    Ok(())
}

/// [`fwht_1d`] with an instrumented arithmetic counter.
pub fn fwht_1d_counted<T: Scalar>(v: &mut [T], counter: &mut OpCounter) -> Result<()> {
    check_pow2_len(v.len())?;
    fwht_core(v, counter);
    Ok(())
}

#[inline]
fn wht2d_core<T: Scalar, C: Count>(m: &mut [T], n: usize, counter: &mut C) {
    for r in 0..n {
        fwht_core(&mut m[r * n..(r + 1) * n], counter);
    }
    let mut col = vec![T::zero(); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = m[r * n + c];
        }
        fwht_core(&mut col, counter);
        for r in 0..n {
            m[r * n + c] = col[r];
        }
    }
}

fn check_square(len: usize, n: usize) -> Result<()> {
    check_pow2_len(n)?;
    if len != n * n {
        return Err(Error::Arg(format!(
            "expected an {n}x{n} matrix ({} elements), got {len}",
            n * n
        )));
    }
    Ok(())
}

/// In-place 2-d WHT of a row-major `n x n` matrix: rows then columns,
/// equal to `H X H^T` exactly.
pub fn wht2d_in_place<T: Scalar>(m: &mut [T], n: usize) -> Result<()> {
    check_square(m.len(), n)?;
    wht2d_core(m, n, &mut NoCount);
    Ok(())
}

/// In-place inverse 2-d WHT: `(1/n^2) H Y H^T`.
pub fn iwht2d_in_place<T: Scalar>(m: &mut [T], n: usize) -> Result<()> {
    check_square(m.len(), n)?;
    iwht2d_core(m, n, &mut NoCount);
    Ok(())
}

#[inline]
fn iwht2d_core<T: Scalar, C: Count>(m: &mut [T], n: usize, counter: &mut C) {
    wht2d_core(m, n, counter);
    let scale = T::one() / T::from(n * n).unwrap();
    for v in m.iter_mut() {
        *v *= scale;
    }
    counter.mults((n * n) as u64);
}

/// Counted variants of the 2-d transforms, for cost instrumentation.
pub fn wht2d_counted<T: Scalar>(m: &mut [T], n: usize, counter: &mut OpCounter) -> Result<()> {
    check_square(m.len(), n)?;
    wht2d_core(m, n, counter);
    Ok(())
}

pub fn iwht2d_counted<T: Scalar>(m: &mut [T], n: usize, counter: &mut OpCounter) -> Result<()> {
    check_square(m.len(), n)?;
    iwht2d_core(m, n, counter);
    Ok(())
}

/// Dense Hadamard matrix in natural order, entries all +1/-1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HadamardMatrix {
    n: usize,
    entries: Vec<i8>,
}

impl HadamardMatrix {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn entry(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.n + col]
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    /// The matrix as a dense float buffer (row-major).
    pub fn to_dense<T: Scalar>(&self) -> Vec<T> {
        self.entries
            .iter()
            .map(|&e| if e > 0 { T::one() } else { -T::one() })
            .collect()
    }

    /// Naive `H . v` product; the oracle for the butterfly.
    pub fn apply<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.n {
            return Err(Error::Arg(format!(
                "vector length {} does not match order {}",
                v.len(),
                self.n
            )));
        }
        let mut out = vec![T::zero(); self.n];
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = T::zero();
            for (c, &x) in v.iter().enumerate() {
                if self.entry(r, c) > 0 {
                    s += x;
                } else {
                    s -= x;
                }
            }
            *o = s;
        }
        Ok(out)
    }
}

/// Builds `H(N)` by the doubling recursion `H(2N) = [[H, H], [H, -H]]`
/// from the order-2 base.
pub fn hadamard_matrix(n: usize) -> Result<HadamardMatrix> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Arg(format!(
            "Hadamard order must be a power of two >= 2, got {n}"
        )));
    }
    let mut cur: Vec<i8> = vec![1, 1, 1, -1];
    let mut size = 2;
    while size < n {
        let next_size = size * 2;
        let mut next = vec![0i8; next_size * next_size];
        for i in 0..size {
            for j in 0..size {
                let v = cur[i * size + j];
                next[i * next_size + j] = v;
                next[i * next_size + (j + size)] = v;
                next[(i + size) * next_size + j] = v;
                next[(i + size) * next_size + (j + size)] = -v;
            }
        }
        cur = next;
        size = next_size;
    }
    Ok(HadamardMatrix { n, entries: cur })
}

/// Padding plan for one transform-domain layer: the padded order is the
/// smallest power of two covering the image sides and the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HadamardPlan {
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padded: usize,
}

impl HadamardPlan {
    pub fn new(height: usize, width: usize, kernel: usize) -> Self {
        let padded = height.max(width).max(kernel).next_power_of_two();
        HadamardPlan {
            height,
            width,
            kernel,
            padded,
        }
    }

    /// Scaling applied by one inverse 2-d transform at this order.
    pub fn inverse_scale<T: Scalar>(&self) -> T {
        T::one() / T::from(self.padded * self.padded).unwrap()
    }
}

/// Direct double-sum dyadic (XOR-shift) convolution of two `n x n` blocks:
/// `out[k,l] = sum_{m,p} x[m,p] h[k^m, l^p]`.
///
/// This is the independent oracle for the transform-domain path.
pub fn dyadic_conv_bruteforce<T: Scalar>(x: &[T], h: &[T], n: usize) -> Result<Vec<T>> {
    check_square(x.len(), n)?;
    if h.len() != x.len() {
        return Err(Error::Arg(format!(
            "size mismatch: image {} vs kernel {}",
            x.len(),
            h.len()
        )));
    }
    let mut out = vec![T::zero(); n * n];
    for k in 0..n {
        for l in 0..n {
            let mut s = T::zero();
            for m in 0..n {
                for p in 0..n {
                    s += x[m * n + p] * h[(k ^ m) * n + (l ^ p)];
                }
            }
            out[k * n + l] = s;
        }
    }
    Ok(out)
}

/// Output sizing for [`spatial_conv_bruteforce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvOutput {
    /// Every shift with any overlap: `(H+F-1) x (W+F-1)`.
    Full,
    /// Input-sized, kernel centered, out-of-range taps read as zero.
    Same,
}

/// Direct flipped-kernel (true) convolution of `x: h x w` with `k: f x f`,
/// out-of-range terms treated as zero.
pub fn spatial_conv_bruteforce<T: Scalar>(
    x: &[T],
    (h, w): (usize, usize),
    kernel: &[T],
    f: usize,
    output: ConvOutput,
) -> Result<(Vec<T>, (usize, usize))> {
    if x.len() != h * w {
        return Err(Error::Arg(format!(
            "image buffer {} does not match {h}x{w}",
            x.len()
        )));
    }
    if kernel.len() != f * f {
        return Err(Error::Arg(format!(
            "kernel buffer {} does not match {f}x{f}",
            kernel.len()
        )));
    }
    if f > h || f > w {
        return Err(Error::Arg(format!(
            "kernel {f}x{f} larger than image {h}x{w}"
        )));
    }
    let (oh, ow, off) = match output {
        ConvOutput::Full => (h + f - 1, w + f - 1, 0usize),
        ConvOutput::Same => (h, w, (f - 1) / 2),
    };
    let mut out = vec![T::zero(); oh * ow];
    for k in 0..oh {
        for l in 0..ow {
            let (kk, ll) = (k + off, l + off);
            let mut s = T::zero();
            for m in 0..h {
                for p in 0..w {
                    if kk >= m && kk - m < f && ll >= p && ll - p < f {
                        s += x[m * w + p] * kernel[(kk - m) * f + (ll - p)];
                    }
                }
            }
            out[k * ow + l] = s;
        }
    }
    Ok((out, (oh, ow)))
}

/// Point-wise product with an instrumented multiplication count.
pub fn elementwise_mul_counted<T: Scalar>(a: &[T], b: &[T], counter: &mut OpCounter) -> Vec<T> {
    debug_assert_eq!(a.len(), b.len());
    counter.mults(a.len() as u64);
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h2_matches_definition() {
        let h = hadamard_matrix(2).unwrap();
        assert_eq!(h.entries(), &[1, 1, 1, -1]);
    }

    #[test]
    fn h4_top_row_ones_and_orthogonal() {
        let h = hadamard_matrix(4).unwrap();
        assert!((0..4).all(|j| h.entry(0, j) == 1));
        // H(4) . H(4) = 4 I, using integer arithmetic
        for i in 0..4 {
            for j in 0..4 {
                let dot: i32 = (0..4)
                    .map(|k| h.entry(i, k) as i32 * h.entry(k, j) as i32)
                    .sum();
                assert_eq!(dot, if i == j { 4 } else { 0 });
            }
        }
    }

    #[test]
    fn h8_columns_equal_fwht_of_basis() {
        let h = hadamard_matrix(8).unwrap();
        for c in 0..8 {
            let mut e = vec![0.0f64; 8];
            e[c] = 1.0;
            fwht_1d(&mut e).unwrap();
            for r in 0..8 {
                assert_eq!(e[r], h.entry(r, c) as f64);
            }
        }
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert!(hadamard_matrix(3).is_err());
        assert!(hadamard_matrix(0).is_err());
        let mut v = vec![0.0f64; 3];
        assert!(fwht_1d(&mut v).is_err());
        let mut m = vec![0.0f64; 9];
        assert!(wht2d_in_place(&mut m, 3).is_err());
    }

    #[test]
    fn fwht_delta_and_ones() {
        let mut delta = vec![1.0f64, 0.0, 0.0, 0.0];
        fwht_1d(&mut delta).unwrap();
        assert_eq!(delta, vec![1.0; 4]);

        let mut ones = vec![1.0f64; 4];
        fwht_1d(&mut ones).unwrap();
        assert_eq!(ones, vec![4.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fwht_matches_matrix_product() {
        let h = hadamard_matrix(16).unwrap();
        let v: Vec<f64> = (0..16).map(|i| ((i * 31 + 7) % 17) as f64 - 8.0).collect();
        let want = h.apply(&v).unwrap();
        let mut got = v.clone();
        fwht_1d(&mut got).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn fwht_cost_is_n_log_n_additions() {
        for n in [2usize, 4, 8, 16, 32] {
            let mut v = vec![1.0f64; n];
            let mut c = OpCounter::default();
            fwht_1d_counted(&mut v, &mut c).unwrap();
            assert_eq!(c.additions, (n * n.ilog2() as usize) as u64);
            assert_eq!(c.multiplications, 0);
        }
    }

    #[test]
    fn wht2d_delta_and_ones() {
        let mut delta = vec![0.0f64; 16];
        delta[0] = 1.0;
        wht2d_in_place(&mut delta, 4).unwrap();
        assert_eq!(delta, vec![1.0; 16]);

        let mut ones = vec![1.0f64; 16];
        wht2d_in_place(&mut ones, 4).unwrap();
        let mut want = vec![0.0; 16];
        want[0] = 16.0;
        assert_eq!(ones, want);
    }

    #[test]
    fn wht2d_matches_h_x_ht() {
        let n = 8;
        let h = hadamard_matrix(n).unwrap();
        let hd: Vec<f64> = h.to_dense();
        let x: Vec<f64> = (0..n * n).map(|i| ((i * 13 + 5) % 23) as f64 - 11.0).collect();
        // naive H . X . H^T through two matrix products
        let hx = crate::tensor::ops::matmul_raw(&hd, &x, n, n, n);
        // (H X) H^T: entry (i,j) = sum_k HX[i,k] H[j,k]
        let mut want = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += hx[i * n + k] * hd[j * n + k];
                }
                want[i * n + j] = s;
            }
        }
        let mut got = x.clone();
        wht2d_in_place(&mut got, n).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn iwht_inverts_wht_exactly_for_identity() {
        let n = 4;
        let mut m = vec![0.0f64; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        let orig = m.clone();
        wht2d_in_place(&mut m, n).unwrap();
        iwht2d_in_place(&mut m, n).unwrap();
        assert_eq!(m, orig);
    }

    #[test]
    fn iwht_of_zeros_is_zeros() {
        let mut m = vec![0.0f64; 16];
        iwht2d_in_place(&mut m, 4).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dyadic_delta_kernel_is_identity() {
        let n = 4;
        let x: Vec<f64> = (0..n * n).map(|i| i as f64 * 0.5 - 3.0).collect();
        let mut h = vec![0.0f64; n * n];
        h[0] = 1.0;
        let out = dyadic_conv_bruteforce(&x, &h, n).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn dyadic_impulse_produces_xor_shift() {
        let n = 4;
        let (m0, p0) = (1usize, 2usize);
        let mut x = vec![0.0f64; n * n];
        x[m0 * n + p0] = 1.0;
        let h: Vec<f64> = (0..n * n).map(|i| (i + 1) as f64).collect();
        let out = dyadic_conv_bruteforce(&x, &h, n).unwrap();
        for k in 0..n {
            for l in 0..n {
                assert_eq!(out[k * n + l], h[(k ^ m0) * n + (l ^ p0)]);
            }
        }
    }

    #[test]
    fn dyadic_theorem_on_random_pair() {
        let n = 4;
        let x: Vec<f64> = (0..16).map(|i| ((i * 29 + 3) % 19) as f64 - 9.0).collect();
        let h: Vec<f64> = (0..16).map(|i| ((i * 17 + 11) % 13) as f64 - 6.0).collect();
        let want = dyadic_conv_bruteforce(&x, &h, n).unwrap();
        let mut xw = x.clone();
        let mut hw = h.clone();
        wht2d_in_place(&mut xw, n).unwrap();
        wht2d_in_place(&mut hw, n).unwrap();
        let mut prod: Vec<f64> = xw.iter().zip(&hw).map(|(a, b)| a * b).collect();
        iwht2d_in_place(&mut prod, n).unwrap();
        for (a, b) in prod.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn spatial_conv_one_by_one_scales() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let (out, dims) =
            spatial_conv_bruteforce(&x, (4, 5), &[2.0], 1, ConvOutput::Same).unwrap();
        assert_eq!(dims, (4, 5));
        let want: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        assert_eq!(out, want);
    }

    #[test]
    fn spatial_conv_impulse_places_kernel() {
        let mut x = vec![0.0f64; 25];
        x[2 * 5 + 1] = 1.0; // impulse at (2, 1)
        let k: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let (out, (oh, ow)) =
            spatial_conv_bruteforce(&x, (5, 5), &k, 3, ConvOutput::Full).unwrap();
        assert_eq!((oh, ow), (7, 7));
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(out[(2 + u) * ow + (1 + v)], k[u * 3 + v]);
            }
        }
    }

    #[test]
    fn spatial_conv_rejects_oversize_kernel() {
        let x = vec![0.0f64; 4];
        assert!(spatial_conv_bruteforce(&x, (2, 2), &[0.0; 9], 3, ConvOutput::Full).is_err());
    }

    #[test]
    fn spatial_conv_matches_independent_loop() {
        // second, separately written quadruple loop over the full output
        let x: Vec<f64> = (0..25).map(|i| ((i * 7 + 2) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..9).map(|i| ((i * 5 + 1) % 7) as f64 - 3.0).collect();
        let (got, (oh, ow)) =
            spatial_conv_bruteforce(&x, (5, 5), &k, 3, ConvOutput::Full).unwrap();
        let mut want = vec![0.0f64; oh * ow];
        for m in 0..5usize {
            for p in 0..5usize {
                for u in 0..3usize {
                    for v in 0..3usize {
                        want[(m + u) * ow + (p + v)] += x[m * 5 + p] * k[u * 3 + v];
                    }
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn plan_picks_covering_power_of_two() {
        let plan = HadamardPlan::new(28, 28, 3);
        assert_eq!(plan.padded, 32);
        let plan = HadamardPlan::new(4, 4, 4);
        assert_eq!(plan.padded, 4);
        let plan = HadamardPlan::new(3, 7, 5);
        assert_eq!(plan.padded, 8);
    }
}
