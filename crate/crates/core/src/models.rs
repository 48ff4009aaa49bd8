//! Declarative model specs and the network builder.
//!
//! The four experiment families are MNIST/CIFAR-10 at depth 1 or 3, each
//! with either feature-extraction method. MNIST blocks are
//! `extract -> ReLU -> maxpool`; CIFAR blocks add batch norm and dropout
//! (`extract -> BN -> ReLU -> maxpool -> dropout`), and the three-layer
//! CIFAR net ends in two fully connected layers.

use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, ConvLayer, DenseLayer, HadamardLayer};
use crate::tensor::ops::{self, Mode, OddPolicy};
use crate::tensor::{Scalar, Tape, Tensor};

/// Hidden width of the optional second fully connected layer.
pub const SECOND_FC_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetKind::Mnist => 1,
            DatasetKind::Cifar10 => 3,
        }
    }

    pub fn side(self) -> usize {
        match self {
            DatasetKind::Mnist => 28,
            DatasetKind::Cifar10 => 32,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hadamard,
    Convolution,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hadamard => "hadamard",
            Method::Convolution => "convolution",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hadamard" => Ok(Method::Hadamard),
            "convolution" | "conv" => Ok(Method::Convolution),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Where batch norm sits relative to the extraction op (CIFAR only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnPosition {
    PreBlock,
    PostBlock,
}

impl BnPosition {
    pub fn name(self) -> &'static str {
        match self {
            BnPosition::PreBlock => "pre_block",
            BnPosition::PostBlock => "post_block",
        }
    }
}

impl FromStr for BnPosition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_block" => Ok(BnPosition::PreBlock),
            "post_block" => Ok(BnPosition::PostBlock),
            other => Err(Error::Config(format!("unknown bn_position '{other}'"))),
        }
    }
}

/// Description of one experiment network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dataset: DatasetKind,
    pub depth: usize,
    pub method: Method,
    pub kernel_size: usize,
    pub features_per_layer: Vec<usize>,
    pub bn_position: BnPosition,
    /// One entry per extraction block, plus a trailing entry for the first
    /// fully connected layer when `second_fc`. Empty means no dropout.
    pub dropout_p: Vec<f64>,
    pub second_fc: bool,
}

impl ModelSpec {
    /// The experiment defaults for a dataset/depth/method/kernel choice.
    pub fn new(dataset: DatasetKind, depth: usize, method: Method, kernel_size: usize) -> Self {
        let features_per_layer = match (dataset, depth) {
            (DatasetKind::Cifar10, 3) => vec![32, 64, 128],
            _ => vec![32; depth],
        };
        let dropout_p = match (dataset, depth, method) {
            (DatasetKind::Mnist, _, _) => Vec::new(),
            (DatasetKind::Cifar10, 1, Method::Hadamard) => vec![0.2],
            (DatasetKind::Cifar10, 1, Method::Convolution) => vec![0.3],
            (DatasetKind::Cifar10, _, _) => vec![0.2; depth + 1],
        };
        ModelSpec {
            dataset,
            depth,
            method,
            kernel_size,
            features_per_layer,
            bn_position: BnPosition::PostBlock,
            dropout_p,
            second_fc: dataset == DatasetKind::Cifar10 && depth == 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth != 1 && self.depth != 3 {
            return Err(Error::Config(format!(
                "depth must be 1 or 3, got {}",
                self.depth
            )));
        }
        if ![3, 5, 7].contains(&self.kernel_size) {
            return Err(Error::Config(format!(
                "kernel size must be 3, 5 or 7, got {}",
                self.kernel_size
            )));
        }
        if self.features_per_layer.len() != self.depth {
            return Err(Error::Config(format!(
                "{} feature counts for depth {}",
                self.features_per_layer.len(),
                self.depth
            )));
        }
        if self.features_per_layer.contains(&0) {
            return Err(Error::Config("feature counts must be positive".into()));
        }
        let want_dropout = self.depth + usize::from(self.second_fc);
        if !self.dropout_p.is_empty() && self.dropout_p.len() != want_dropout {
            return Err(Error::Config(format!(
                "dropout_p needs 0 or {want_dropout} entries, got {}",
                self.dropout_p.len()
            )));
        }
        if self.dropout_p.iter().any(|&p| !(0.0..1.0).contains(&p)) {
            return Err(Error::Config(
                "dropout probabilities must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn dropout_at(&self, idx: usize) -> f64 {
        self.dropout_p.get(idx).copied().unwrap_or(0.0)
    }
}

/// Training knobs: batch size, initial learning rate, weight decay,
/// epoch budget, seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub ilr: f64,
    pub wd: f64,
    pub epochs: usize,
    pub seed: u64,
}

/// The tuned settings for each experiment row; values not fixed by the
/// experiments (MNIST batch size and all epoch budgets) use our defaults.
pub fn default_hyperparams(spec: &ModelSpec) -> Hyperparams {
    let (ilr, batch_size, epochs) = match (spec.dataset, spec.depth, spec.method) {
        (DatasetKind::Mnist, _, _) => (1e-4, 64, 20),
        (DatasetKind::Cifar10, 3, Method::Hadamard) => (2e-3, 20, 60),
        (DatasetKind::Cifar10, _, _) => (1e-3, 20, 60),
    };
    Hyperparams {
        batch_size,
        ilr,
        wd: 1e-4,
        epochs,
        seed: 0,
    }
}

/// One stage of a built network.
pub enum Block<T: Scalar> {
    Hadamard(HadamardLayer<T>),
    Conv(ConvLayer<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu,
    MaxPool,
    Dropout(f64),
    Flatten,
    Dense(DenseLayer<T>),
}

impl<T: Scalar> Block<T> {
    fn label(&self) -> &'static str {
        match self {
            Block::Hadamard(_) => "hadamard",
            Block::Conv(_) => "conv",
            Block::BatchNorm(_) => "bn",
            Block::Relu => "relu",
            Block::MaxPool => "maxpool",
            Block::Dropout(_) => "dropout",
            Block::Flatten => "flatten",
            Block::Dense(_) => "dense",
        }
    }
}

/// An ordered block list built from a [`ModelSpec`].
pub struct Network<T: Scalar> {
    pub blocks: Vec<Block<T>>,
    pub spec: ModelSpec,
}

/// Instantiates the network for a spec, drawing parameters from `rng`.
pub fn build_model<T: Scalar, R: Rng>(spec: &ModelSpec, rng: &mut R) -> Result<Network<T>> {
    spec.validate()?;
    let mut blocks: Vec<Block<T>> = Vec::new();
    let mut channels = spec.dataset.channels();
    let mut side = spec.dataset.side();
    let with_bn = spec.dataset == DatasetKind::Cifar10;

    for (li, &features) in spec.features_per_layer.iter().enumerate() {
        if with_bn && spec.bn_position == BnPosition::PreBlock {
            blocks.push(Block::BatchNorm(BatchNorm2d::new(channels)));
        }
        match spec.method {
            Method::Hadamard => blocks.push(Block::Hadamard(HadamardLayer::new(
                features,
                channels,
                spec.kernel_size,
                (side, side),
                rng,
            ))),
            Method::Convolution => blocks.push(Block::Conv(ConvLayer::new(
                features,
                channels,
                spec.kernel_size,
                rng,
            ))),
        }
        if with_bn && spec.bn_position == BnPosition::PostBlock {
            blocks.push(Block::BatchNorm(BatchNorm2d::new(features)));
        }
        blocks.push(Block::Relu);
        blocks.push(Block::MaxPool);
        side = side.div_ceil(2);
        let p = spec.dropout_at(li);
        if p > 0.0 {
            blocks.push(Block::Dropout(p));
        }
        channels = features;
    }

    blocks.push(Block::Flatten);
    let flat = channels * side * side;
    if spec.second_fc {
        blocks.push(Block::Dense(DenseLayer::new(SECOND_FC_HIDDEN, flat, rng)));
        blocks.push(Block::Relu);
        let p = spec.dropout_at(spec.depth);
        if p > 0.0 {
            blocks.push(Block::Dropout(p));
        }
        blocks.push(Block::Dense(DenseLayer::new(10, SECOND_FC_HIDDEN, rng)));
    } else {
        blocks.push(Block::Dense(DenseLayer::new(10, flat, rng)));
    }

    Ok(Network {
        blocks,
        spec: spec.clone(),
    })
}

impl<T: Scalar> Network<T> {
    /// Runs the block list in order. `rng` feeds dropout in train mode only.
    pub fn forward<R: Rng>(
        &mut self,
        tape: Option<&Tape<T>>,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for block in &mut self.blocks {
            cur = match block {
                Block::Hadamard(l) => l.forward(tape, &cur)?,
                Block::Conv(l) => l.forward(tape, &cur)?,
                Block::BatchNorm(l) => l.forward(tape, &cur, mode)?,
                Block::Relu => ops::relu(tape, &cur),
                // Replication handles the odd 7x7 stage of the deep MNIST net;
                // even sizes are untouched by the policy.
                Block::MaxPool => ops::max_pool2_with_policy(tape, &cur, OddPolicy::Replicate)?,
                Block::Dropout(p) => ops::dropout(tape, &cur, *p, mode, rng)?,
                Block::Flatten => ops::flatten(tape, &cur)?,
                Block::Dense(l) => l.forward(tape, &cur)?,
            };
        }
        Ok(cur)
    }

    /// Visits every learnable tensor in a stable order.
    pub fn visit_params(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor<T>) -> Result<()>,
    ) -> Result<()> {
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let label = block.label();
            match block {
                Block::Hadamard(l) => f(&format!("{i}.{label}.kernels"), &mut l.kernels)?,
                Block::Conv(l) => f(&format!("{i}.{label}.kernels"), &mut l.kernels)?,
                Block::BatchNorm(l) => {
                    f(&format!("{i}.{label}.gamma"), &mut l.gamma)?;
                    f(&format!("{i}.{label}.beta"), &mut l.beta)?;
                }
                Block::Dense(l) => {
                    f(&format!("{i}.{label}.weights"), &mut l.weights)?;
                    f(&format!("{i}.{label}.bias"), &mut l.bias)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Total learnable values.
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Hadamard(l) => l.param_count(),
                Block::Conv(l) => l.param_count(),
                Block::BatchNorm(l) => l.param_count(),
                Block::Dense(l) => l.param_count(),
                _ => 0,
            })
            .sum()
    }
}

// ---- flat key-value configuration files ------------------------------

/// Renders a spec + hyperparameters as the flat key-value config format.
pub fn to_config_string(spec: &ModelSpec, hp: &Hyperparams) -> String {
    let join = |v: &[f64]| {
        v.iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let feats = spec
        .features_per_layer
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "dataset = {}\n\
         depth = {}\n\
         method = {}\n\
         kernel_size = {}\n\
         features_per_layer = {}\n\
         bn_position = {}\n\
         dropout_p = {}\n\
         second_fc = {}\n\
         batch_size = {}\n\
         ilr = {}\n\
         wd = {}\n\
         epochs = {}\n\
         seed = {}\n",
        spec.dataset.name(),
        spec.depth,
        spec.method.name(),
        spec.kernel_size,
        feats,
        spec.bn_position.name(),
        join(&spec.dropout_p),
        spec.second_fc,
        hp.batch_size,
        hp.ilr,
        hp.wd,
        hp.epochs,
        hp.seed,
    )
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_str(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                ln + 1
            ))
        })?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(entries)
}

/// Resolves configuration entries into a spec and hyperparameters.
///
/// `dataset`, `depth`, `method` and `kernel_size` select the experiment
/// defaults; any other key overrides its field. Later entries win, so a
/// caller can append command-line overrides after file entries.
pub fn resolve_config(entries: &[(String, String)]) -> Result<(ModelSpec, Hyperparams)> {
    let find = |key: &str| {
        entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };
    let required =
        |key: &str| find(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")));

    let dataset: DatasetKind = required("dataset")?.parse()?;
    let method: Method = required("method")?.parse()?;
    let depth: usize = parse_num(required("depth")?, "depth")?;
    let kernel_size: usize = parse_num(required("kernel_size")?, "kernel_size")?;

    let mut spec = ModelSpec::new(dataset, depth, method, kernel_size);
    let mut hp = default_hyperparams(&spec);

    for (k, v) in entries {
        match k.as_str() {
            "dataset" | "depth" | "method" | "kernel_size" => {}
            "features_per_layer" => {
                spec.features_per_layer = v
                    .split(',')
                    .map(|s| parse_num(s.trim(), "features_per_layer"))
                    .collect::<Result<_>>()?
            }
            "bn_position" => spec.bn_position = v.parse()?,
            "dropout_p" => {
                spec.dropout_p = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| parse_float(s.trim(), "dropout_p"))
                        .collect::<Result<_>>()?
                }
            }
            "second_fc" => spec.second_fc = parse_bool(v, "second_fc")?,
            "batch_size" => hp.batch_size = parse_num(v, "batch_size")?,
            "ilr" => hp.ilr = parse_float(v, "ilr")?,
            "wd" => hp.wd = parse_float(v, "wd")?,
            "epochs" => hp.epochs = parse_num(v, "epochs")?,
            "seed" => hp.seed = parse_num(v, "seed")?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
    }
    if hp.ilr <= 0.0 {
        return Err(Error::Config(format!(
            "ilr must be positive, got {}",
            hp.ilr
        )));
    }
    if hp.wd < 0.0 {
        return Err(Error::Config(format!(
            "wd must be non-negative, got {}",
            hp.wd
        )));
    }
    if hp.batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be at least 2 (batch norm), got {}",
            hp.batch_size
        )));
    }
    spec.validate()?;
    Ok((spec, hp))
}

fn parse_num<N: FromStr>(s: &str, key: &str) -> Result<N> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad value '{s}' for {key}")))
}

fn parse_float(s: &str, key: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad value '{s}' for {key}")))
}

fn parse_bool(s: &str, key: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("bad value '{other}' for {key}"))),
    }
}
