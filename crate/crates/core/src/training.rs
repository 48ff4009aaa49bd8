//! Optimization loop: Adam with decoupled weight decay, plateau learning-rate
//! decay, per-epoch metrics, and parameter checkpoints.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{batches, batches_sequential, DatasetHandle, Split};
use crate::error::{Error, Result};
use crate::models::{to_config_string, Hyperparams, Network};
use crate::tensor::ops::{softmax_cross_entropy, Mode};
use crate::tensor::{Scalar, Tape, Tensor};

/// Adam with bias correction; weight decay is applied decoupled from the
/// moment estimates (`p -= lr * wd * p`), so its strength does not depend
/// on gradient scale.
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    wd: f64,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
    cursor: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, wd: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            wd,
            step: 0,
            moments: Vec::new(),
            cursor: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Starts a new step; parameters are then fed in a stable order via
    /// [`Adam::update_param`].
    pub fn begin_step(&mut self) {
        self.step += 1;
        self.cursor = 0;
    }

    /// Applies one Adam update to a parameter, consuming its gradient.
    pub fn update_param(&mut self, name: &str, param: &mut Tensor<T>) -> Result<()> {
        let grad = param.grad().ok_or_else(|| {
            Error::Usage(format!("parameter {name} does not carry gradients"))
        })?;
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient {bad} in {name} at step {}",
                self.step
            )));
        }
        let idx = self.cursor;
        self.cursor += 1;
        if self.moments.len() == idx {
            self.moments
                .push((vec![T::zero(); grad.len()], vec![T::zero(); grad.len()]));
        }
        let (m, v) = self.moments.get_mut(idx).ok_or_else(|| {
            Error::Usage(format!("optimizer state misaligned at {name}"))
        })?;
        if m.len() != grad.len() {
            return Err(Error::Dim(format!(
                "optimizer state for {name} has {} values, gradient has {}",
                m.len(),
                grad.len()
            )));
        }

        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let wd = T::from_f64(self.wd);

        let mut data = param.data().to_vec();
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            data[i] = data[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * data[i]);
        }
        *param = Tensor::param(data, param.shape())?;
        Ok(())
    }

    /// One optimization step over every parameter of the network.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        self.begin_step();
        net.visit_params(&mut |name, p| self.update_param(name, p))
    }
}

/// Divides the learning rate by 10 when the train loss has not improved by
/// a relative threshold for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    lr: f64,
    best: f64,
    stall: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: usize, threshold: f64) -> Self {
        PlateauScheduler {
            factor: 0.1,
            patience,
            threshold,
            lr: initial_lr,
            best: f64::INFINITY,
            stall: 0,
        }
    }

    /// Defaults used by the training loop: patience 3, relative threshold 1e-3.
    pub fn default_for(initial_lr: f64) -> Self {
        Self::new(initial_lr, 3, 1e-3)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feeds one epoch's train loss; returns the learning rate to use next.
    pub fn step(&mut self, epoch_train_loss: f64) -> f64 {
        if epoch_train_loss < self.best * (1.0 - self.threshold) {
            self.best = epoch_train_loss;
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall >= self.patience {
                self.lr *= self.factor;
                self.stall = 0;
            }
        }
        self.lr
    }
}

/// One epoch's metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<EpochMetrics>,
    pub final_test_acc: Option<f64>,
    pub best_test_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub wall_secs: f64,
    pub seed: u64,
    pub precision: &'static str,
    /// Echo of the resolved configuration.
    pub config: String,
    /// Set when training aborted on a non-finite loss.
    pub diverged_at: Option<usize>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc,lr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.test_acc, r.lr
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("precision: {}\nseed: {}\n", self.precision, self.seed));
        match (self.final_test_acc, self.best_test_acc, self.best_epoch) {
            (Some(f), Some(b), Some(e)) => {
                s.push_str(&format!(
                    "final test accuracy: {:.4}\nbest test accuracy: {:.4} (epoch {})\n",
                    f, b, e
                ));
            }
            _ => s.push_str("no epochs ran\n"),
        }
        if let Some(e) = self.diverged_at {
            s.push_str(&format!("training diverged during epoch {e}\n"));
        }
        s.push_str(&format!("wall seconds: {:.1}\n", self.wall_secs));
        s
    }
}

/// Named parameter tensors with shapes; the checkpointable state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot<T> {
    pub entries: Vec<(String, Vec<usize>, Vec<T>)>,
}

/// Copies every parameter out of the network.
pub fn snapshot_params<T: Scalar>(net: &mut Network<T>) -> ParamSnapshot<T> {
    let mut entries = Vec::new();
    net.visit_params(&mut |name, p| {
        entries.push((name.to_string(), p.shape().to_vec(), p.data().to_vec()));
        Ok(())
    })
    .expect("snapshot cannot fail");
    ParamSnapshot { entries }
}

/// Writes a snapshot back into the network, matching by order and name.
pub fn restore_params<T: Scalar>(net: &mut Network<T>, snap: &ParamSnapshot<T>) -> Result<()> {
    let mut idx = 0usize;
    net.visit_params(&mut |name, p| {
        let (sname, shape, data) = snap.entries.get(idx).ok_or_else(|| {
            Error::Format(format!("checkpoint ends before parameter {name}"))
        })?;
        if sname != name || shape != p.shape() {
            return Err(Error::Format(format!(
                "checkpoint entry {idx} is {sname} {shape:?}, model wants {name} {:?}",
                p.shape()
            )));
        }
        *p = Tensor::param(data.clone(), shape)?;
        idx += 1;
        Ok(())
    })?;
    if idx != snap.entries.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} extra parameter(s)",
            snap.entries.len() - idx
        )));
    }
    Ok(())
}

const CKPT_MAGIC: &[u8; 8] = b"HCNNCKPT";
const CKPT_VERSION: u32 = 1;

/// Serializes a snapshot into the self-describing binary container.
pub fn save_checkpoint<T: Scalar>(path: &Path, snap: &ParamSnapshot<T>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.push(match T::DTYPE {
        crate::tensor::Dtype::F32 => 1,
        crate::tensor::Dtype::F64 => 2,
    });
    out.extend_from_slice(&(snap.entries.len() as u32).to_le_bytes());
    for (name, shape, data) in &snap.entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            v.write_le(&mut out);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`] with the same dtype.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ParamSnapshot<T>> {
    let buf = std::fs::read(path)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        let sl = buf.get(*at..*at + n).ok_or_else(|| {
            Error::Format(format!("{}: truncated at offset {at}", path.display()))
        })?;
        *at += n;
        Ok(sl)
    };
    if take(&mut at, 8)? != CKPT_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let dtype = take(&mut at, 1)?[0];
    let want = match T::DTYPE {
        crate::tensor::Dtype::F32 => 1,
        crate::tensor::Dtype::F64 => 2,
    };
    if dtype != want {
        return Err(Error::Format(format!(
            "{}: checkpoint dtype tag {dtype} does not match requested {}",
            path.display(),
            T::DTYPE.name()
        )));
    }
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let width = T::DTYPE.byte_width();
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
            .map_err(|_| Error::Format(format!("{}: bad name bytes", path.display())))?;
        let ndim = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut at, numel * width)?;
        let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        entries.push((name, shape, data));
    }
    if at != buf.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            buf.len() - at
        )));
    }
    Ok(ParamSnapshot { entries })
}

/// Classification accuracy (argmax over logits) of the model on a split.
pub fn evaluate<T: Scalar>(
    net: &mut Network<T>,
    ds: &DatasetHandle<T>,
    split: Split,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode never samples
    let mut correct = 0usize;
    let total = ds.split_len(split);
    if total == 0 {
        return Err(Error::Usage("evaluate on an empty split".into()));
    }
    for (images, labels) in batches_sequential(ds, split, 256)? {
        let logits = net.forward(None, &images, Mode::Eval, &mut rng)?;
        correct += count_correct(&logits, &labels);
    }
    Ok(correct as f64 / total as f64)
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &label)| {
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}

/// Runs the full training protocol: seeded shuffles, Adam with decoupled
/// weight decay, plateau decay on the epoch train loss, test accuracy
/// measured every epoch in eval mode (never fed back into training), and
/// a snapshot of the best-test-accuracy parameters.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    ds: &DatasetHandle<T>,
    hp: &Hyperparams,
) -> Result<(TrainReport, ParamSnapshot<T>)> {
    let start = Instant::now();
    let config = to_config_string(&net.spec, hp);
    let mut report = TrainReport {
        rows: Vec::new(),
        final_test_acc: None,
        best_test_acc: None,
        best_epoch: None,
        wall_secs: 0.0,
        seed: hp.seed,
        precision: T::DTYPE.name(),
        config,
        diverged_at: None,
    };
    let mut best_snapshot = snapshot_params(net);
    let mut adam = Adam::new(hp.ilr, hp.wd);
    let mut sched = PlateauScheduler::default_for(hp.ilr);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);

    'epochs: for epoch in 1..=hp.epochs {
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        let mut correct = 0usize;
        for (images, labels) in batches(ds, Split::Train, hp.batch_size, &mut rng)? {
            let tape = Tape::new();
            let logits = net.forward(Some(&tape), &images, Mode::Train, &mut rng)?;
            let loss = softmax_cross_entropy(Some(&tape), &logits, &labels)?;
            let loss_val = loss.item()?.to_f64();
            if !loss_val.is_finite() {
                report.diverged_at = Some(epoch);
                break 'epochs;
            }
            tape.backward(&loss)?;
            adam.step(net)?;

            let b = labels.len();
            loss_sum += loss_val * b as f64;
            seen += b;
            correct += count_correct(&logits, &labels);
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let train_acc = correct as f64 / seen.max(1) as f64;
        let test_acc = evaluate(net, ds, Split::Test)?;
        let lr_next = sched.step(train_loss);
        report.rows.push(EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_acc,
            lr: adam.lr(),
        });
        adam.set_lr(lr_next);

        if report.best_test_acc.is_none_or(|b| test_acc > b) {
            report.best_test_acc = Some(test_acc);
            report.best_epoch = Some(epoch);
            best_snapshot = snapshot_params(net);
        }
        report.final_test_acc = Some(test_acc);
    }
    report.wall_secs = start.elapsed().as_secs_f64();
    Ok((report, best_snapshot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::DatasetHandle;
    use crate::models::{build_model, DatasetKind, Method, ModelSpec, Network};
    use crate::tensor::ops::{scale, sum_all};
    use rand::Rng;

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut adam = Adam::<f64>::new(0.1, 0.0);
        let mut p = Tensor::param(vec![1.0, -2.0], &[2]).unwrap();
        p.accumulate_grad(&[0.0, 0.0]);
        adam.begin_step();
        adam.update_param("p", &mut p).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_constant_gradient_approaches_sign_step() {
        let mut adam = Adam::<f64>::new(0.01, 0.0);
        let mut p = Tensor::param(vec![0.0], &[1]).unwrap();
        let mut prev = 0.0f64;
        let mut last_step = 0.0f64;
        for _ in 0..300 {
            p.accumulate_grad(&[2.5]);
            adam.begin_step();
            adam.update_param("p", &mut p).unwrap();
            last_step = prev - p.data()[0];
            prev = p.data()[0];
        }
        // |m_hat / sqrt(v_hat)| -> 1, so the step approaches lr
        assert!((last_step - 0.01).abs() < 1e-4, "step {last_step}");
    }

    #[test]
    fn adam_matches_independent_scalar_reference() {
        let (lr, b1, b2, eps) = (0.1f64, 0.9, 0.999, 1e-8);
        let grads = [0.5f64, -1.0, 0.25];
        // reference trace computed step by step
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 1.0f64);
        let mut want = Vec::new();
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
            want.push(theta);
        }

        let mut adam = Adam::<f64>::new(lr, 0.0);
        let mut p = Tensor::param(vec![1.0], &[1]).unwrap();
        for (t, &g) in grads.iter().enumerate() {
            p.accumulate_grad(&[g]);
            adam.begin_step();
            adam.update_param("p", &mut p).unwrap();
            assert!(
                (p.data()[0] - want[t]).abs() < 1e-15,
                "step {t}: {} vs {}",
                p.data()[0],
                want[t]
            );
        }
    }

    #[test]
    fn adam_rejects_nan_gradient_naming_parameter() {
        let mut adam = Adam::<f64>::new(0.1, 0.0);
        let mut p = Tensor::param(vec![1.0], &[1]).unwrap();
        // a NaN gradient must abort with diagnostics, not poison the params
        let mut g = p.grad_mut();
        g[0] = f64::NAN;
        drop(g);
        adam.begin_step();
        let err = adam.update_param("3.dense.weights", &mut p).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)));
        assert!(err.to_string().contains("3.dense.weights"), "{err}");
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut adam = Adam::<f64>::new(0.1, 0.5);
        let mut p = Tensor::param(vec![2.0], &[1]).unwrap();
        p.accumulate_grad(&[0.0]);
        adam.begin_step();
        adam.update_param("p", &mut p).unwrap();
        // pure decoupled decay: p -= lr * wd * p
        assert!((p.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn scheduler_constant_under_improvement() {
        let mut s = PlateauScheduler::new(1e-3, 2, 1e-3);
        for loss in [1.0, 0.9, 0.8, 0.7] {
            assert_eq!(s.step(loss), 1e-3);
        }
    }

    #[test]
    fn scheduler_decays_once_on_flat_loss() {
        let mut s = PlateauScheduler::new(1e-2, 3, 1e-3);
        let mut decays = 0;
        let mut prev = s.lr();
        for _ in 0..4 {
            let lr = s.step(0.5);
            if lr < prev {
                decays += 1;
            }
            prev = lr;
        }
        assert_eq!(decays, 1);
        assert!((s.lr() - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn scheduler_traces_spec_example() {
        // losses [1.0, 0.99, 0.99, 0.99], patience 2, threshold 1e-3:
        // the cut happens after the fourth epoch
        let mut s = PlateauScheduler::new(1.0, 2, 1e-3);
        assert_eq!(s.step(1.0), 1.0);
        assert_eq!(s.step(0.99), 1.0);
        assert_eq!(s.step(0.99), 1.0);
        assert!((s.step(0.99) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn scheduler_never_increases() {
        let mut s = PlateauScheduler::new(1e-2, 1, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut prev = s.lr();
        for _ in 0..50 {
            let lr = s.step(rng.random::<f64>());
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn synthetic_dataset(
        n_train: usize,
        n_test: usize,
        c: usize,
        side: usize,
        seed: u64,
    ) -> DatasetHandle<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_train + n_test;
        let data: Vec<f64> = (0..n * c * side * side)
            .map(|_| rng.random::<f64>())
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10u8)).collect();
        let images = Tensor::from_vec(data, &[n, c, side, side]).unwrap();
        DatasetHandle::from_parts("synthetic", images, labels, n_train, n_test).unwrap()
    }

    #[test]
    fn zero_epochs_echoes_config_only() {
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Convolution, 3);
        let mut hp = crate::models::default_hyperparams(&spec);
        hp.epochs = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        let ds = synthetic_dataset(8, 4, 1, 28, 0);
        let (report, _) = train(&mut net, &ds, &hp).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.final_test_acc.is_none());
        assert!(report.config.contains("dataset = mnist"));
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Hadamard, 3);
        let mut hp = crate::models::default_hyperparams(&spec);
        hp.epochs = 2;
        hp.batch_size = 8;
        let ds = synthetic_dataset(24, 8, 1, 28, 5);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
            let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
            let (report, _) = train(&mut net, &ds, &hp).unwrap();
            report.to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_batch_overfit_drives_loss_down() {
        // gradient-path liveness for both extraction methods
        for method in [Method::Hadamard, Method::Convolution] {
            let spec = ModelSpec::new(DatasetKind::Mnist, 1, method, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
            let ds = synthetic_dataset(8, 2, 1, 28, 2);
            let (images, labels) = ds.gather(&(0..8).collect::<Vec<_>>());
            let mut adam = Adam::new(3e-3, 0.0);
            let mut last = f64::INFINITY;
            for _ in 0..200 {
                let tape = Tape::new();
                let logits = net
                    .forward(Some(&tape), &images, Mode::Train, &mut rng)
                    .unwrap();
                let loss = softmax_cross_entropy(Some(&tape), &logits, &labels).unwrap();
                last = loss.item().unwrap();
                tape.backward(&loss).unwrap();
                adam.step(&mut net).unwrap();
                if last < 0.05 {
                    break;
                }
            }
            assert!(last < 0.05, "{method:?} single-batch loss stuck at {last}");
        }
    }

    /// Class-separable images: a fixed prototype per class plus noise.
    fn separable_dataset(n_train: usize, n_test: usize, side: usize, seed: u64) -> DatasetHandle<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let protos: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..side * side).map(|_| rng.random::<f64>()).collect())
            .collect();
        let n = n_train + n_test;
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let mut data = Vec::with_capacity(n * side * side);
        for &l in &labels {
            for &p in &protos[l as usize] {
                data.push((p * 0.8 + rng.random::<f64>() * 0.2).clamp(0.0, 1.0));
            }
        }
        let images = Tensor::from_vec(data, &[n, 1, side, side]).unwrap();
        DatasetHandle::from_parts("separable", images, labels, n_train, n_test).unwrap()
    }

    #[test]
    fn micro_dataset_overfits_above_ninety_percent() {
        // 100 samples, single extraction layer: the net learns them fast
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Convolution, 3);
        let mut hp = crate::models::default_hyperparams(&spec);
        hp.epochs = 50;
        hp.batch_size = 10;
        hp.ilr = 1e-3;
        let ds = separable_dataset(100, 10, 28, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        let (report, _) = train(&mut net, &ds, &hp).unwrap();
        let best = report
            .rows
            .iter()
            .map(|r| r.train_acc)
            .fold(0.0f64, f64::max);
        assert!(best > 0.9, "train accuracy reached only {best}");
    }

    #[test]
    fn evaluate_constant_and_perfect_models() {
        let ds = synthetic_dataset(0, 100, 1, 28, 7);
        // logits that always pick class 0 give chance-level accuracy on
        // balanced-ish labels; a label-echo oracle gives 100%
        let count0 = ds.labels[..].iter().filter(|&&l| l == 0).count();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Convolution, 3);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        // zero all parameters: logits become the (zero) bias, argmax = class 0
        let mut zeroed = snapshot_params(&mut net);
        for (_, _, data) in &mut zeroed.entries {
            data.iter_mut().for_each(|v| *v = 0.0);
        }
        restore_params(&mut net, &zeroed).unwrap();
        let acc = evaluate(&mut net, &ds, Split::Test).unwrap();
        assert!((acc - count0 as f64 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_perfect_oracle_and_chance_level() {
        // a dense layer that reads one indicator pixel per class scores 100%
        let n_test = 50;
        let side = 28;
        let mut data = vec![0.0f64; n_test * side * side];
        let labels: Vec<u8> = (0..n_test).map(|i| (i % 10) as u8).collect();
        for (i, &l) in labels.iter().enumerate() {
            data[i * side * side + l as usize] = 1.0;
        }
        let images = Tensor::from_vec(data, &[n_test, 1, side, side]).unwrap();
        let ds = DatasetHandle::from_parts("oracle", images, labels, 0, n_test).unwrap();

        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Convolution, 3);
        let mut w = vec![0.0f64; 10 * side * side];
        for class in 0..10 {
            w[class * side * side + class] = 1.0;
        }
        let mut net = Network::<f64> {
            blocks: vec![
                crate::models::Block::Flatten,
                crate::models::Block::Dense(crate::layers::DenseLayer {
                    weights: Tensor::param(w, &[10, side * side]).unwrap(),
                    bias: Tensor::param(vec![0.0; 10], &[10]).unwrap(),
                }),
            ],
            spec,
        };
        assert_eq!(evaluate(&mut net, &ds, Split::Test).unwrap(), 1.0);

        // an untrained random-init model sits at chance level
        let ds = synthetic_dataset(0, 2000, 1, 28, 21);
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Hadamard, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        let acc = evaluate(&mut net, &ds, Split::Test).unwrap();
        assert!((acc - 0.1).abs() < 0.03, "chance-level accuracy was {acc}");
    }

    #[test]
    fn csv_has_the_declared_columns() {
        let ds = synthetic_dataset(8, 4, 1, 28, 17);
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Convolution, 3);
        let mut hp = crate::models::default_hyperparams(&spec);
        hp.epochs = 1;
        hp.batch_size = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        let (report, _) = train(&mut net, &ds, &hp).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("epoch,train_loss,train_acc,test_acc,lr\n"));
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,"));
    }

    #[test]
    fn evaluate_is_idempotent() {
        let ds = synthetic_dataset(4, 40, 1, 28, 9);
        let spec = ModelSpec::new(DatasetKind::Mnist, 1, Method::Hadamard, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        let a = evaluate(&mut net, &ds, Split::Test).unwrap();
        let b = evaluate(&mut net, &ds, Split::Test).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let spec = ModelSpec::new(DatasetKind::Cifar10, 1, Method::Hadamard, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = build_model::<f64, _>(&spec, &mut rng).unwrap();
        let snap = snapshot_params(&mut net);
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("model.ckpt");
        save_checkpoint(&path, &snap).unwrap();
        let loaded: ParamSnapshot<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(snap, loaded);

        // wrong dtype is refused
        assert!(load_checkpoint::<f32>(&path).is_err());
    }

    #[test]
    fn gradient_liveness_through_scale_chain() {
        // two chained ops through the tape drive a parameter with Adam
        let mut adam = Adam::<f64>::new(0.05, 0.0);
        let mut p = Tensor::param(vec![4.0], &[1]).unwrap();
        for _ in 0..50 {
            let tape = Tape::new();
            let doubled = scale(Some(&tape), &p, 2.0);
            let loss = sum_all(Some(&tape), &doubled);
            tape.backward(&loss).unwrap();
            adam.begin_step();
            adam.update_param("p", &mut p).unwrap();
        }
        assert!(p.data()[0] < 4.0);
    }
}
