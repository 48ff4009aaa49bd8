//! Analytical arithmetic cost and energy model.
//!
//! Two cost views exist side by side and are never silently mixed:
//!
//! * the closed-form operation counts below, which model the *naive*
//!   matrix-form transforms (three dense 2-d transforms plus one
//!   element-wise product for the Hadamard method);
//! * [`measured_counts`], which tallies the *implemented* fast butterfly
//!   path with per-call instrumented counters.
//!
//! Energies are expressed in units of one addition: a multiplication
//! costs `alpha` additions, with `alpha = E_m / E_a` per FP precision.

use crate::error::{Error, Result};
use crate::transforms::{self, OpCounter};

/// Arithmetic energy constants at a floating-point precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Energy of one multiplication, pJ.
    pub e_m: f64,
    /// Energy of one addition, pJ.
    pub e_a: f64,
    /// Multiplication-to-addition energy ratio used in the ratio formulas.
    pub alpha: f64,
    pub precision: FpPrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpPrecision {
    Fp16,
    Fp32,
}

impl CostModel {
    /// 16-bit floating point: 1.1 pJ multiply, 0.45 pJ add.
    pub fn fp16() -> Self {
        CostModel {
            e_m: 1.1,
            e_a: 0.45,
            alpha: 2.44,
            precision: FpPrecision::Fp16,
        }
    }

    /// 32-bit floating point: 4.5 pJ multiply, 1.0 pJ add.
    pub fn fp32() -> Self {
        CostModel {
            e_m: 4.5,
            e_a: 1.0,
            alpha: 4.5,
            precision: FpPrecision::Fp32,
        }
    }
}

/// Which method a count belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMethod {
    Conv,
    Fft,
    Hadamard,
}

/// Multiplication/addition counts for one single-channel feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCounts {
    pub multiplications: u64,
    pub additions: u64,
    pub method: CountMethod,
}

impl OpCounts {
    /// Total energy in units of one addition.
    pub fn energy(&self, alpha: f64) -> f64 {
        self.multiplications as f64 * alpha + self.additions as f64
    }
}

/// Direct convolution of an `N x N` image with an `F x F` kernel:
/// `N^2 F^2` multiplications, `N^2 (F^2 - 1)` additions.
pub fn conv_counts(n: u64, f: u64) -> Result<OpCounts> {
    if f < 1 || f > n {
        return Err(Error::Arg(format!(
            "kernel size {f} must satisfy 1 <= F <= N = {n}"
        )));
    }
    Ok(OpCounts {
        multiplications: n * n * f * f,
        additions: n * n * (f * f - 1),
        method: CountMethod::Conv,
    })
}

/// FFT-domain convolution: `3 N^2 log2(N^2) + 4 N^2` multiplications,
/// `3 N^2 (N^2 - 1) + 2 N^2` additions.
pub fn fft_counts(n: u64) -> Result<OpCounts> {
    if n < 2 {
        return Err(Error::Arg(format!("image size {n} must be at least 2")));
    }
    let n2 = n * n;
    let log_n2 = 2 * n.ilog2() as u64;
    Ok(OpCounts {
        multiplications: 3 * n2 * log_n2 + 4 * n2,
        additions: 3 * n2 * (n2 - 1) + 2 * n2,
        method: CountMethod::Fft,
    })
}

/// Hadamard-domain convolution with naive matrix transforms: `N^2`
/// multiplications (the element-wise product), `3 N^2 (N^2 - 1)` additions
/// (three dense 2-d transforms).
pub fn hadamard_counts(n: u64) -> Result<OpCounts> {
    if n < 2 {
        return Err(Error::Arg(format!("image size {n} must be at least 2")));
    }
    let n2 = n * n;
    Ok(OpCounts {
        multiplications: n2,
        additions: 3 * n2 * (n2 - 1),
        method: CountMethod::Hadamard,
    })
}

fn ratio_single_raw(n: f64, f: f64, alpha: f64) -> f64 {
    (f * f * alpha + (f * f - 1.0)) / (alpha + 3.0 * (n * n - 1.0))
}

/// Convolution-to-Hadamard energy ratio for a single-channel image:
/// `(F^2 a + (F^2 - 1)) / (a + 3 (N^2 - 1))`. Above 1 the Hadamard method
/// saves energy.
pub fn ratio_single_channel(n: u64, f: u64, alpha: f64) -> Result<f64> {
    if f > n {
        return Err(Error::Arg(format!("kernel {f} larger than image {n}")));
    }
    if alpha <= 0.0 {
        return Err(Error::Arg(format!("alpha must be positive, got {alpha}")));
    }
    Ok(ratio_single_raw(n as f64, f as f64, alpha))
}

fn ratio_multi_raw(n: f64, f: f64, alpha: f64, c_in: f64) -> f64 {
    let log_n = n.log2();
    let l2 = log_n * log_n;
    f * f * (alpha + 1.0) * c_in / (c_in * (alpha + 1.0 + 2.0 * l2) + l2)
}

/// Energy-saving ratio with `C_in` input channels:
/// `F^2 (a+1) C / (C (a + 1 + 2 (log2 N)^2) + (log2 N)^2)`.
///
/// The denominator grouping keeps the trailing `(log2 N)^2` outside the
/// per-channel factor; the alternative reading that folds it inside would
/// simply add one more `(log2 N)^2` per channel.
pub fn ratio_multi_channel(n: u64, f: u64, alpha: f64, c_in: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Arg(format!("image size {n} must be at least 2")));
    }
    if c_in < 1 {
        return Err(Error::Arg("channel count must be at least 1".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::Arg(format!("alpha must be positive, got {alpha}")));
    }
    Ok(ratio_multi_raw(n as f64, f as f64, alpha, c_in as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Single,
    Multi,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Single => "single",
            SweepMode::Multi => "multi",
        }
    }
}

/// One evaluated sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: SweepMode,
    pub n: u64,
    pub f: u64,
    pub alpha: f64,
    pub c_in: Option<u64>,
    pub ratio: f64,
    /// Break-even threshold the curves are judged against.
    pub baseline: f64,
}

/// Cartesian evaluation of the ratio formulas over the given parameter sets.
/// In single mode `c_ins` is unused; in multi mode it must be non-empty.
pub fn sweep(
    mode: SweepMode,
    ns: &[u64],
    fs: &[u64],
    alphas: &[f64],
    c_ins: &[u64],
) -> Result<Vec<SweepRow>> {
    if ns.is_empty() || fs.is_empty() || alphas.is_empty() {
        return Err(Error::Usage("sweep ranges must be non-empty".into()));
    }
    if mode == SweepMode::Multi && c_ins.is_empty() {
        return Err(Error::Usage("multi-channel sweep needs c_in values".into()));
    }
    let mut rows = Vec::new();
    for &n in ns {
        for &f in fs {
            for &alpha in alphas {
                match mode {
                    SweepMode::Single => rows.push(SweepRow {
                        mode,
                        n,
                        f,
                        alpha,
                        c_in: None,
                        ratio: ratio_single_raw(n as f64, f as f64, alpha),
                        baseline: 1.0,
                    }),
                    SweepMode::Multi => {
                        for &c in c_ins {
                            rows.push(SweepRow {
                                mode,
                                n,
                                f,
                                alpha,
                                c_in: Some(c),
                                ratio: ratio_multi_raw(n as f64, f as f64, alpha, c as f64),
                                baseline: 1.0,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Renders sweep rows as CSV: `mode,N,F,alpha,c_in,ratio,baseline`
/// (`c_in` empty in single mode).
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mode,N,F,alpha,c_in,ratio,baseline\n");
    for r in rows {
        let c_in = r.c_in.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode.name(),
            r.n,
            r.f,
            r.alpha,
            c_in,
            r.ratio,
            r.baseline
        ));
    }
    out
}

/// Layer shape measured by [`measured_counts`].
#[derive(Debug, Clone, Copy)]
pub struct MeasuredConfig {
    /// Padded transform order.
    pub n: usize,
    pub c_in: usize,
    /// Also fold the (un-cropped) output into a scalar, counting its adds.
    pub sum_output: bool,
}

/// Runs the implemented fast path (butterfly transforms, element-wise
/// product, channel sum, inverse transform) under instrumented counters
/// and reports the actual tallies.
///
/// These differ from [`hadamard_counts`] by design: the closed form prices
/// naive matrix transforms, the fast path costs `N log N` per 1-d pass and
/// pays `N^2` extra multiplications for the inverse scaling.
pub fn measured_counts(cfg: &MeasuredConfig) -> Result<OpCounts> {
    let n = cfg.n;
    let mut counter = OpCounter::default();
    let mut acc = vec![0.0f64; n * n];
    let mut kernel_t = vec![0.0f64; n * n];
    for c in 0..cfg.c_in {
        let mut x: Vec<f64> = (0..n * n).map(|i| ((i + c) % 7) as f64 * 0.5 + 1.0).collect();
        transforms::wht2d_counted(&mut x, n, &mut counter)?;
        for (i, v) in kernel_t.iter_mut().enumerate() {
            *v = ((i * 3 + c) % 5) as f64 - 2.0;
        }
        transforms::wht2d_counted(&mut kernel_t, n, &mut counter)?;
        let prod = transforms::elementwise_mul_counted(&x, &kernel_t, &mut counter);
        if c == 0 {
            acc.copy_from_slice(&prod);
        } else {
            for (a, p) in acc.iter_mut().zip(&prod) {
                *a += *p;
            }
            counter.additions += (n * n) as u64;
        }
    }
    transforms::iwht2d_counted(&mut acc, n, &mut counter)?;
    if cfg.sum_output {
        let mut s = 0.0;
        for v in &acc {
            s += v;
        }
        counter.additions += (n * n - 1) as u64;
        std::hint::black_box(s);
    }
    Ok(OpCounts {
        multiplications: counter.multiplications,
        additions: counter.additions,
        method: CountMethod::Hadamard,
    })
}
