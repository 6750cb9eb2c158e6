//! Command-line flags, config files and the resolved run manifest.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;

use bare::data::BlobSpec;
use bare::noise::MNIST_FLIPS;
use bare::selection::{Selector, DEFAULT_KAPPA};

use crate::error::{CliError, CliResult};

/// Trials per configuration when `--trials` is not given.
pub const DEFAULT_TRIALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    Symmetric,
    ClassConditional,
    Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    Bare,
    SmallLoss,
    Spl,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Kappa,
    BatchSize,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonitorKind {
    ValAcc,
    TrainLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Parser)]
#[command(
    name = "bare",
    about = "Train classifiers on noisy labels with batch-statistics sample selection",
    args_override_self = true
)]
pub struct Args {
    /// Flat `key = value` file; keys are long flag names. Flags on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetKind,
    /// Directory with the four uncompressed MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    pub mnist_dir: PathBuf,

    #[arg(long, value_enum, default_value = "none")]
    pub noise: NoiseKind,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub matrix_file: Option<PathBuf>,
    /// Class-conditional flips as `from:to` pairs, e.g. `7:1,2:7`. Defaults to the MNIST pairs.
    #[arg(long)]
    pub flips: Option<String>,

    #[arg(long, value_enum, default_value = "bare")]
    pub selector: SelectorKind,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,

    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    /// Epochs without improvement in the monitored metric before the learning rate is cut.
    #[arg(long, default_value_t = 5)]
    pub plateau_patience: usize,
    #[arg(long, default_value_t = 0.5)]
    pub plateau_factor: f64,
    /// Learning-rate floor (default: lr / 100).
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// Metric watched by the plateau scheduler.
    #[arg(long, value_enum, default_value = "train-loss")]
    pub monitor: MonitorKind,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "256")]
    pub hidden: String,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,

    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Independent trials / sweep cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub quiet: bool,

    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Validation samples drawn from the hold-out (default: 1000 for MNIST, the whole hold-out for blobs).
    #[arg(long)]
    pub validation_count: Option<usize>,

    #[arg(long, default_value_t = 10)]
    pub blob_classes: usize,
    #[arg(long, default_value_t = 800)]
    pub blob_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub blob_test_per_class: usize,
    #[arg(long, default_value_t = 512)]
    pub blob_dim: usize,
    #[arg(long, default_value_t = 6.0)]
    pub blob_separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub blob_std: f64,

    #[arg(long, value_enum)]
    pub sweep: Option<SweepAxis>,
    /// Comma-separated sweep values.
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Mnist {
        dir: PathBuf,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
        std: f64,
    },
}

impl DatasetSpec {
    /// Generator settings for the training pool and test set of a blob dataset.
    pub fn blob_specs(&self, seed: u64) -> Option<(BlobSpec, BlobSpec)> {
        match *self {
            DatasetSpec::Blobs {
                classes,
                per_class,
                test_per_class,
                dim,
                separation,
                std,
            } => {
                let pool = BlobSpec {
                    num_classes: classes,
                    per_class,
                    dim,
                    separation,
                    std,
                    seed: bare::seed::derive(seed, bare::seed::Stream::Data),
                };
                let test = BlobSpec {
                    per_class: test_per_class,
                    seed: pool.seed.wrapping_add(1),
                    ..pool
                };
                Some((pool, test))
            }
            DatasetSpec::Mnist { .. } => None,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::Mnist { .. } => 10,
            DatasetSpec::Blobs { classes, .. } => *classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    None,
    Symmetric {
        eta: f64,
    },
    ClassConditional {
        eta: f64,
        flips: Vec<(usize, usize)>,
    },
    Matrix {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectorSpec {
    pub kind: SelectorKind,
    pub kappa: Option<f64>,
    pub keep_fraction: Option<f64>,
    pub lambda: Option<f64>,
}

impl SelectorSpec {
    pub fn selector(&self) -> Selector {
        match self.kind {
            SelectorKind::Bare => Selector::Bare {
                kappa: self.kappa.unwrap_or(DEFAULT_KAPPA),
            },
            SelectorKind::SmallLoss => Selector::SmallLoss {
                keep_fraction: self.keep_fraction.expect("validated"),
            },
            SelectorKind::Spl => Selector::Spl {
                lambda: self.lambda.expect("validated"),
            },
            SelectorKind::None => Selector::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_min_lr: f64,
    pub monitor: MonitorKind,
    pub hidden: Vec<usize>,
    pub precision: Precision,
    pub selector: SelectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub validation_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Fully resolved settings of a run; written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub train: TrainSpec,
    pub split: SplitSettings,
    pub trials: usize,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub quiet: bool,
    pub sweep: Option<SweepSpec>,
}

/// Turns a `key = value` file into long flags placed before the real arguments.
pub fn config_file_args(text: &str) -> CliResult<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected key = value", n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!(
                "config line {}: invalid key {key:?}",
                n + 1
            )));
        }
        let value = value.trim();
        if key == "quiet" {
            match value {
                "true" => out.push(OsString::from("--quiet")),
                "false" => {}
                _ => {
                    return Err(CliError::Usage(format!(
                        "config line {}: quiet must be true or false",
                        n + 1
                    )))
                }
            }
            continue;
        }
        out.push(OsString::from(format!("--{key}")));
        out.push(OsString::from(value));
    }
    Ok(out)
}

/// Parses `argv` (program name first), expanding `--config` if present.
pub fn parse_config<I, S>(argv: I) -> CliResult<RunManifest>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let first = Args::try_parse_from(&argv)?;
    let args = match &first.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let mut merged = vec![argv.first().cloned().unwrap_or_else(|| "bare".into())];
            merged.extend(config_file_args(&text)?);
            merged.extend(argv.iter().skip(1).cloned());
            Args::try_parse_from(merged)?
        }
        None => first,
    };
    resolve(args)
}

fn parse_list<T: std::str::FromStr>(flag: &str, raw: &str) -> CliResult<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("--{flag}: cannot parse {s:?}")))
        })
        .collect()
}

fn parse_flips(raw: &str) -> CliResult<Vec<(usize, usize)>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| {
                CliError::Usage(format!("--flips: expected from:to, got {pair:?}"))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("--flips: bad class in {pair:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn check_eta(eta: f64, upper_exclusive: bool) -> CliResult<()> {
    let ok = if upper_exclusive {
        (0.0..0.5).contains(&eta)
    } else {
        (0.0..=1.0).contains(&eta)
    };
    if ok {
        Ok(())
    } else if upper_exclusive {
        Err(CliError::Range(format!(
            "--eta {eta} must lie in [0, 0.5) for class-conditional noise"
        )))
    } else {
        Err(CliError::Range(format!("--eta {eta} must lie in [0, 1]")))
    }
}

fn resolve(args: Args) -> CliResult<RunManifest> {
    let usage = |m: &str| Err(CliError::Usage(m.to_string()));

    // selector parameters
    match args.selector {
        SelectorKind::Bare => {}
        _ if args.kappa.is_some() => return usage("--kappa only applies to --selector bare"),
        _ => {}
    }
    if args.selector != SelectorKind::SmallLoss && args.keep_fraction.is_some() {
        return usage("--keep-fraction only applies to --selector small-loss");
    }
    if args.selector != SelectorKind::Spl && args.lambda.is_some() {
        return usage("--lambda only applies to --selector spl");
    }
    if args.selector == SelectorKind::SmallLoss {
        match args.keep_fraction {
            None => return usage("--selector small-loss requires --keep-fraction"),
            Some(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(CliError::Range(format!(
                    "--keep-fraction {f} must lie in (0, 1]"
                )))
            }
            _ => {}
        }
    }
    if args.selector == SelectorKind::Spl {
        match args.lambda {
            None => return usage("--selector spl requires --lambda"),
            Some(l) if !(l > 0.0 && l.is_finite()) => {
                return Err(CliError::Range(format!("--lambda {l} must be positive")))
            }
            _ => {}
        }
    }
    if let Some(k) = args.kappa {
        if !k.is_finite() {
            return Err(CliError::Range(format!("--kappa {k} must be finite")));
        }
    }

    // noise parameters
    let noise = match args.noise {
        NoiseKind::None => {
            if args.eta.is_some() || args.matrix_file.is_some() || args.flips.is_some() {
                return usage("--noise none takes no --eta, --matrix-file or --flips");
            }
            NoiseSpec::None
        }
        NoiseKind::Symmetric => {
            let Some(eta) = args.eta else {
                return usage("--noise symmetric requires --eta");
            };
            if args.matrix_file.is_some() || args.flips.is_some() {
                return usage("--noise symmetric takes no --matrix-file or --flips");
            }
            check_eta(eta, false)?;
            NoiseSpec::Symmetric { eta }
        }
        NoiseKind::ClassConditional => {
            let Some(eta) = args.eta else {
                return usage("--noise class-conditional requires --eta");
            };
            if args.matrix_file.is_some() {
                return usage("--noise class-conditional takes no --matrix-file");
            }
            check_eta(eta, true)?;
            let flips = match &args.flips {
                Some(raw) => parse_flips(raw)?,
                None => MNIST_FLIPS.to_vec(),
            };
            NoiseSpec::ClassConditional { eta, flips }
        }
        NoiseKind::Matrix => {
            let Some(path) = args.matrix_file.clone() else {
                return usage("--noise matrix requires --matrix-file");
            };
            if args.eta.is_some() || args.flips.is_some() {
                return usage("--noise matrix takes no --eta or --flips");
            }
            NoiseSpec::Matrix { path }
        }
    };

    if args.epochs < 1 {
        return Err(CliError::Range("--epochs must be at least 1".into()));
    }
    if args.batch_size < 2 {
        return Err(CliError::Range("--batch-size must be at least 2".into()));
    }
    if !(args.lr > 0.0 && args.lr.is_finite()) {
        return Err(CliError::Range(format!(
            "--lr {} must be positive",
            args.lr
        )));
    }
    if args.trials < 1 {
        return Err(CliError::Range("--trials must be at least 1".into()));
    }
    if args.jobs < 1 {
        return Err(CliError::Range("--jobs must be at least 1".into()));
    }
    if !(args.train_fraction > 0.0 && args.train_fraction < 1.0) {
        return Err(CliError::Range(format!(
            "--train-fraction {} must lie in (0, 1)",
            args.train_fraction
        )));
    }
    let hidden: Vec<usize> = parse_list("hidden", &args.hidden)?;
    if hidden.contains(&0) {
        return Err(CliError::Range("--hidden widths must be positive".into()));
    }

    let dataset = match args.dataset {
        DatasetKind::Mnist => DatasetSpec::Mnist {
            dir: args.mnist_dir.clone(),
        },
        DatasetKind::Blobs => {
            if args.blob_classes < 2 || args.blob_dim < args.blob_classes {
                return Err(CliError::Range(
                    "--blob-classes must be >= 2 and --blob-dim >= --blob-classes".into(),
                ));
            }
            if !(args.blob_separation > 0.0) || !(args.blob_std >= 0.0) {
                return Err(CliError::Range(
                    "--blob-separation must be positive, --blob-std >= 0".into(),
                ));
            }
            DatasetSpec::Blobs {
                classes: args.blob_classes,
                per_class: args.blob_per_class,
                test_per_class: args.blob_test_per_class,
                dim: args.blob_dim,
                separation: args.blob_separation,
                std: args.blob_std,
            }
        }
    };
    if let NoiseSpec::ClassConditional { flips, .. } = &noise {
        let k = dataset.num_classes();
        if flips.iter().any(|&(a, b)| a >= k || b >= k) {
            return Err(CliError::Range(format!(
                "--flips classes must be below {k}"
            )));
        }
    }
    let validation_count = match (&dataset, args.validation_count) {
        (_, Some(v)) => Some(v),
        (DatasetSpec::Mnist { .. }, None) => Some(1000),
        (DatasetSpec::Blobs { .. }, None) => None,
    };

    let sweep = match (args.sweep, &args.values) {
        (None, None) => None,
        (None, Some(_)) => return usage("--values requires --sweep"),
        (Some(_), None) => return usage("--sweep requires --values"),
        (Some(axis), Some(raw)) => {
            let values: Vec<f64> = parse_list("values", raw)?;
            if values.is_empty() {
                return usage("--values must list at least one value");
            }
            match axis {
                SweepAxis::Kappa => {
                    if args.selector != SelectorKind::Bare {
                        return usage("a kappa sweep needs --selector bare");
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(CliError::Range("kappa values must be finite".into()));
                    }
                }
                SweepAxis::BatchSize => {
                    if values.iter().any(|&v| v.fract() != 0.0 || v < 2.0) {
                        return Err(CliError::Range("batch sizes must be integers >= 2".into()));
                    }
                }
                SweepAxis::Eta => match &noise {
                    NoiseSpec::Symmetric { .. } => {
                        for &v in &values {
                            check_eta(v, false)?;
                        }
                    }
                    NoiseSpec::ClassConditional { .. } => {
                        for &v in &values {
                            check_eta(v, true)?;
                        }
                    }
                    _ => return usage("an eta sweep needs symmetric or class-conditional noise"),
                },
            }
            Some(SweepSpec { axis, values })
        }
    };

    let plateau = bare::optim::PlateauConfig {
        patience: args.plateau_patience,
        factor: args.plateau_factor,
        min_lr: args.min_lr.unwrap_or(args.lr / 100.0),
    };
    if !(plateau.factor > 0.0 && plateau.factor < 1.0) {
        return Err(CliError::Range(format!(
            "--plateau-factor {} must lie in (0, 1)",
            plateau.factor
        )));
    }
    if !(plateau.min_lr >= 0.0 && plateau.min_lr <= args.lr) {
        return Err(CliError::Range(format!(
            "--min-lr {} must lie in [0, lr]",
            plateau.min_lr
        )));
    }
    let adam = bare::optim::AdamConfig {
        lr: args.lr,
        ..Default::default()
    };
    let selector = SelectorSpec {
        kind: args.selector,
        kappa: match args.selector {
            SelectorKind::Bare => Some(args.kappa.unwrap_or(DEFAULT_KAPPA)),
            _ => None,
        },
        keep_fraction: args.keep_fraction,
        lambda: args.lambda,
    };
    Ok(RunManifest {
        dataset,
        noise,
        train: TrainSpec {
            epochs: args.epochs,
            batch_size: args.batch_size,
            lr: args.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            plateau_patience: plateau.patience,
            plateau_factor: plateau.factor,
            plateau_min_lr: plateau.min_lr,
            monitor: args.monitor,
            hidden,
            precision: args.precision,
            selector,
        },
        split: SplitSettings {
            train_fraction: args.train_fraction,
            validation_count,
        },
        trials: args.trials,
        seed: args.seed,
        trial_seeds: (0..args.trials as u64)
            .map(|i| args.seed.wrapping_add(i))
            .collect(),
        out: args.out,
        jobs: args.jobs,
        quiet: args.quiet,
        sweep,
    })
}

impl RunManifest {
    /// Checks that every referenced input exists.
    pub fn check_inputs(&self) -> CliResult<()> {
        let need = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Io {
                    path: p.display().to_string(),
                    message: "not found".into(),
                })
            }
        };
        if let DatasetSpec::Mnist { dir } = &self.dataset {
            for f in [
                bare::data::MNIST_TRAIN_IMAGES,
                bare::data::MNIST_TRAIN_LABELS,
                bare::data::MNIST_TEST_IMAGES,
                bare::data::MNIST_TEST_LABELS,
            ] {
                need(&dir.join(f))?;
            }
        }
        if let NoiseSpec::Matrix { path } = &self.noise {
            need(path)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
