use crate::error::{Error, Result};
use crate::tensor::ops::tracking;
use crate::tensor::{Scalar, Tape, Tensor};

/// Mean cross-entropy of `logits: B x K` against integer class labels,
/// stabilized by per-row max subtraction. Backward is `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(
    tape: Option<&Tape<T>>,
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    let (b, k) = match logits.shape() {
        [b, k] => (*b, *k),
        s => return Err(Error::Dim(format!("logits must be B x K, got {s:?}"))),
    };
    if labels.len() != b {
        return Err(Error::Data(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }

    let ld = logits.data();
    let mut softmax = vec![T::zero(); b * k];
    let mut total = T::zero();
    for bi in 0..b {
        let row = &ld[bi * k..(bi + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            softmax[bi * k + j] = e;
            denom += e;
        }
        for v in &mut softmax[bi * k..(bi + 1) * k] {
            *v /= denom;
        }
        // -log p[label], computed from the stabilized pieces
        total += denom.ln() - (row[labels[bi]] - max);
    }
    let loss = total / T::from(b).unwrap();

    let out = Tensor::new(vec![loss], vec![1], tracking(tape, &[logits]));
    if out.requires_grad() {
        let logits = logits.clone();
        let labels = labels.to_vec();
        tape.unwrap().record(&out, move |g| {
            let gv = g[0];
            let inv_b = T::one() / T::from(b).unwrap();
            let mut dl = logits.grad_mut();
            for bi in 0..b {
                for j in 0..k {
                    let indicator = if labels[bi] == j { T::one() } else { T::zero() };
                    dl[bi * k + j] += gv * (softmax[bi * k + j] - indicator) * inv_b;
                }
            }
        });
    }
    Ok(out)
}
