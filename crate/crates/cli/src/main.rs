//! Command-line driver: fetch data, train/evaluate the experiment
//! configurations, run the verification suites, emit energy sweeps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hcnn_core::datasets::{self, DatasetHandle};
use hcnn_core::energy::{self, SweepMode};
use hcnn_core::models::{
    build_model, parse_config_str, resolve_config, to_config_string, DatasetKind, Hyperparams,
    ModelSpec,
};
use hcnn_core::tensor::Scalar;
use hcnn_core::training::{evaluate, load_checkpoint, restore_params, save_checkpoint, train};
use hcnn_core::verify::{run_all, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "hcnn",
    about = "CNN feature extraction in the Walsh-Hadamard transform domain",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download and unpack MNIST / CIFAR-10 into the data directory.
    Fetch {
        #[arg(long, value_enum, default_value = "all")]
        dataset: FetchTarget,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Override the download base URL (also honored via HCNN_DATA_MIRROR).
        #[arg(long)]
        mirror: Option<String>,
    },
    /// Train one configuration and write report, summary and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the verification suites (transforms, theorem, gradients, parity).
    Verify {
        /// Transform orders, comma-separated powers of two.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Random cases per size.
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Seeds per gradient check.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Self-test hook: flip one WHT coefficient sign so the theorem
        /// suite must fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Evaluate the arithmetic energy model over parameter sweeps.
    Energy {
        #[arg(long, value_enum)]
        mode: EnergyMode,
        /// Image sizes: comma list or `lo:hi` (powers of two, inclusive).
        #[arg(long, default_value = "4:128")]
        images: String,
        /// Kernel sizes, comma-separated.
        #[arg(long, default_value = "3,5,7", value_delimiter = ',')]
        kernels: Vec<u64>,
        /// Multiplication-to-addition energy ratios.
        #[arg(long, default_value = "2.44,4.5", value_delimiter = ',')]
        alpha: Vec<f64>,
        /// Input channel counts (multi mode): comma list or `lo:hi`.
        #[arg(long, default_value = "2:5")]
        cin: String,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FetchTarget {
    Mnist,
    Cifar10,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnergyMode {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

/// Model/hyperparameter flags; every flag mirrors a config-file key and
/// overrides it when both are given.
#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value config file supplying any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    /// Output features per extraction layer, comma-separated.
    #[arg(long)]
    features_per_layer: Option<String>,
    #[arg(long)]
    bn_position: Option<String>,
    /// Dropout probabilities, comma-separated (empty for none).
    #[arg(long)]
    dropout_p: Option<String>,
    #[arg(long)]
    second_fc: Option<bool>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    ilr: Option<f64>,
    /// Weight decay.
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    /// File entries first, command-line overrides after (later wins).
    fn resolve(&self) -> anyhow::Result<(ModelSpec, Hyperparams)> {
        let mut entries = Vec::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            entries.extend(parse_config_str(&text)?);
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                entries.push((k.to_string(), v));
            }
        };
        push("dataset", self.dataset.clone());
        push("method", self.method.clone());
        push("depth", self.depth.map(|v| v.to_string()));
        push("kernel_size", self.kernel_size.map(|v| v.to_string()));
        push("features_per_layer", self.features_per_layer.clone());
        push("bn_position", self.bn_position.clone());
        push("dropout_p", self.dropout_p.clone());
        push("second_fc", self.second_fc.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("ilr", self.ilr.map(|v| v.to_string()));
        push("wd", self.wd.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        Ok(resolve_config(&entries)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Output directory; defaults to runs/<dataset>-<method>-d<depth>-k<F>-s<seed>.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Download the dataset first if it is missing.
    #[arg(long)]
    fetch: bool,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Fetch {
            dataset,
            data_dir,
            mirror,
        } => {
            let targets: &[DatasetKind] = match dataset {
                FetchTarget::Mnist => &[DatasetKind::Mnist],
                FetchTarget::Cifar10 => &[DatasetKind::Cifar10],
                FetchTarget::All => &[DatasetKind::Mnist, DatasetKind::Cifar10],
            };
            for t in targets {
                datasets::fetch(*t, &data_dir, mirror.as_deref())
                    .with_context(|| format!("fetching {}", t.name()))?;
                println!("{} ready under {}", t.name(), data_dir.display());
            }
            Ok(0)
        }
        Command::Train(args) => match args.precision {
            Precision::F32 => cmd_train::<f32>(&args),
            Precision::F64 => cmd_train::<f64>(&args),
        },
        Command::Eval(args) => match args.precision {
            Precision::F32 => cmd_eval::<f32>(&args),
            Precision::F64 => cmd_eval::<f64>(&args),
        },
        Command::Verify {
            sizes,
            cases,
            seeds,
            inject_fault,
        } => {
            let mut opts = VerifyOptions::default();
            if let Some(sizes) = sizes {
                if sizes.is_empty() {
                    bail!("--sizes must not be empty");
                }
                opts.sizes = sizes;
            }
            opts.cases = cases;
            opts.seeds = seeds;
            opts.inject_wht_fault = inject_fault;
            let mut failed = false;
            for suite in run_all(&opts) {
                println!(
                    "{:<20} {}  {}",
                    suite.name,
                    if suite.passed { "PASS" } else { "FAIL" },
                    suite.detail
                );
                failed |= !suite.passed;
            }
            Ok(if failed { 1 } else { 0 })
        }
        Command::Energy {
            mode,
            images,
            kernels,
            alpha,
            cin,
            out,
        } => {
            let ns = parse_pow2_range(&images).context("--images")?;
            let cins = parse_linear_range(&cin).context("--cin")?;
            if kernels.is_empty() || alpha.is_empty() {
                bail!("--kernels and --alpha must not be empty");
            }
            let mode = match mode {
                EnergyMode::Single => SweepMode::Single,
                EnergyMode::Multi => SweepMode::Multi,
            };
            let rows = energy::sweep(mode, &ns, &kernels, &alpha, &cins)?;
            let csv = energy::sweep_csv(&rows);
            match out {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent)?;
                    }
                    std::fs::write(&path, csv)?;
                    println!("wrote {} rows to {}", rows.len(), path.display());
                }
                None => print!("{csv}"),
            }
            Ok(0)
        }
    }
}

fn load_dataset<T: Scalar>(
    kind: DatasetKind,
    data_dir: &Path,
    fetch_first: bool,
) -> anyhow::Result<DatasetHandle<T>> {
    if fetch_first {
        datasets::fetch(kind, data_dir, None)?;
    }
    match kind {
        DatasetKind::Mnist => datasets::load_mnist(data_dir),
        DatasetKind::Cifar10 => datasets::load_cifar10(data_dir),
    }
    .with_context(|| {
        format!(
            "loading {} from {} (hint: `hcnn fetch --dataset {} --data-dir {}`)",
            kind.name(),
            data_dir.display(),
            kind.name(),
            data_dir.display()
        )
    })
}

fn cmd_train<T: Scalar>(args: &TrainArgs) -> anyhow::Result<i32> {
    let (spec, hp) = args.config.resolve()?;
    if hp.epochs == 0 {
        print!("{}", to_config_string(&spec, &hp));
        return Ok(0);
    }
    let ds: DatasetHandle<T> = load_dataset(spec.dataset, &args.data_dir, args.fetch)?;

    let out_dir = args.out_dir.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!(
            "{}-{}-d{}-k{}-s{}",
            spec.dataset.name(),
            spec.method.name(),
            spec.depth,
            spec.kernel_size,
            hp.seed
        ))
    });
    std::fs::create_dir_all(&out_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut net = build_model::<T, _>(&spec, &mut rng)?;
    let (report, best) = train(&mut net, &ds, &hp)?;

    std::fs::write(out_dir.join("report.csv"), report.to_csv())?;
    std::fs::write(
        out_dir.join("summary.txt"),
        format!("{}\n{}", report.summary(), report.config),
    )?;
    std::fs::write(out_dir.join("config.conf"), &report.config)?;
    save_checkpoint(&out_dir.join("model.ckpt"), &best)?;

    print!("{}", report.summary());
    println!("artifacts in {}", out_dir.display());
    Ok(if report.diverged_at.is_some() { 1 } else { 0 })
}

fn cmd_eval<T: Scalar>(args: &EvalArgs) -> anyhow::Result<i32> {
    let (spec, hp) = args.config.resolve()?;
    let split = match args.split.as_str() {
        "test" => datasets::Split::Test,
        "train" => datasets::Split::Train,
        other => bail!("unknown split '{other}' (use test or train)"),
    };
    let ds: DatasetHandle<T> = load_dataset(spec.dataset, &args.data_dir, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut net = build_model::<T, _>(&spec, &mut rng)?;
    let snapshot = load_checkpoint::<T>(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    restore_params(&mut net, &snapshot)?;
    let acc = evaluate(&mut net, &ds, split)?;
    println!("{} {:?} accuracy: {:.4}", spec.dataset.name(), split, acc);
    Ok(0)
}

/// `lo:hi` expands to the powers of two in `[lo, hi]`; a comma list is
/// taken as-is.
fn parse_pow2_range(s: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((lo, hi)) = s.split_once(':') {
        let lo: u64 = lo.trim().parse().context("range start")?;
        let hi: u64 = hi.trim().parse().context("range end")?;
        if lo < 2 || hi < lo {
            bail!("range {s} is empty or starts below 2");
        }
        let mut v = Vec::new();
        let mut n = lo.next_power_of_two();
        while n <= hi {
            v.push(n);
            n *= 2;
        }
        if v.is_empty() {
            bail!("no powers of two in {s}");
        }
        Ok(v)
    } else {
        let v: Vec<u64> = s
            .split(',')
            .map(|p| p.trim().parse().context("list entry"))
            .collect::<anyhow::Result<_>>()?;
        if v.is_empty() {
            bail!("empty list");
        }
        Ok(v)
    }
}

/// `lo:hi` expands to consecutive integers in `[lo, hi]`.
fn parse_linear_range(s: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((lo, hi)) = s.split_once(':') {
        let lo: u64 = lo.trim().parse().context("range start")?;
        let hi: u64 = hi.trim().parse().context("range end")?;
        if hi < lo {
            bail!("range {s} is empty");
        }
        Ok((lo..=hi).collect())
    } else {
        let v: Vec<u64> = s
            .split(',')
            .map(|p| p.trim().parse().context("list entry"))
            .collect::<anyhow::Result<_>>()?;
        if v.is_empty() {
            bail!("empty list");
        }
        Ok(v)
    }
}
