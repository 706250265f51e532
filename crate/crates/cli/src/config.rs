//! Experiment settings: an optional TOML file, overridden field by field by
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use vafnet::data::{
    load_csv, synth_classification, synth_regression, CsvSchema, Dataset, SynthClassification, SynthRegression,
    TaskKind,
};
use vafnet::eval::{linspace, Selection};
use vafnet::optim::OptimizerConfig;
use vafnet::train::{Batching, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE};
use vafnet::{ActivationKind, Architecture, VafInit};

/// The file format. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub cv: CvSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// A CSV path or `synth:<kind>`.
    pub source: Option<String>,
    pub task: Option<TaskKind>,
    pub target: Option<Vec<i64>>,
    pub header: Option<bool>,
    pub samples: Option<usize>,
    pub noise: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architectures: Option<Vec<String>>,
    pub hidden_activation: Option<String>,
    pub g: Option<String>,
    pub shared: Option<bool>,
    pub init: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub optimizer: Option<String>,
    pub lr: Option<Vec<f64>>,
    /// `lo:hi:n`, evenly spaced.
    pub lr_grid: Option<String>,
    /// 0 means full batch.
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    pub folds: Option<usize>,
    pub select: Option<Selection>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("bad config {}", path.display()))
    }
}

/// Flags shared by `train` and `kfold`. Each one beats the file.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct ExperimentFlags {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV file, or `synth:<kind>` with kind one of linear, sin, abs,
    /// two-gaussians, xor-clusters.
    #[arg(long)]
    pub dataset: Option<String>,
    /// regression or classification.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Target column(s); negative counts from the end.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub target: Option<Vec<i64>>,
    /// The CSV has a header line.
    #[arg(long)]
    pub header: bool,
    /// Rows of a synthetic dataset.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Noise std of a synthetic regression set.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Architecture names such as net_10 or vnet3_50_25 (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub model: Option<Vec<String>>,
    /// Fixed activation of plain hidden layers.
    #[arg(long)]
    pub hidden_activation: Option<String>,
    /// Activation inside VAF units.
    #[arg(long)]
    pub g: Option<String>,
    /// One VAF parameter set per neuron instead of per layer.
    #[arg(long)]
    pub per_neuron: bool,
    /// VAF initialization: random or an activation name (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<String>>,
    /// auto, sgd, adam, rmsprop or rprop.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Learning rate(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lr: Option<Vec<f64>>,
    /// Evenly spaced learning rates, `lo:hi:n`.
    #[arg(long)]
    pub lr_grid: Option<String>,
    /// Mini-batch size; 0 for full batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Pick the best grid point per fold on the test or validation part.
    #[arg(long, value_parser = parse_selection)]
    pub select: Option<Selection>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for cross-validation.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    match s {
        "regression" => Ok(TaskKind::Regression),
        "classification" => Ok(TaskKind::Classification),
        _ => Err(format!("expected regression or classification, got `{s}`")),
    }
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    match s {
        "test" => Ok(Selection::Test),
        "validation" => Ok(Selection::Validation),
        _ => Err(format!("expected test or validation, got `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Csv { path: PathBuf, schema: CsvSchema },
    Regression { kind: SynthRegression, samples: usize, noise: f64 },
    Classification { kind: SynthClassification, samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerChoice {
    Auto,
    Named(String),
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub source: Source,
    pub label: String,
    pub models: Vec<Architecture>,
    pub hidden_activation: ActivationKind,
    pub g: ActivationKind,
    pub shared: bool,
    pub inits: Vec<VafInit>,
    pub optimizer: OptimizerChoice,
    pub lrs: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub folds: usize,
    pub select: Selection,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
}

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_SAMPLES: usize = 500;
pub const DEFAULT_NOISE: f64 = 0.05;

impl Experiment {
    pub fn resolve(flags: &ExperimentFlags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let source_text = flags
            .dataset
            .clone()
            .or(file.dataset.source.clone())
            .context("no dataset given (use --dataset or [dataset] source)")?;
        let samples = flags.samples.or(file.dataset.samples).unwrap_or(DEFAULT_SAMPLES);
        let (source, label) = if let Some(kind) = source_text.strip_prefix("synth:") {
            let source = match kind {
                "linear" | "sin" | "abs" => Source::Regression {
                    kind: match kind {
                        "linear" => SynthRegression::Linear,
                        "sin" => SynthRegression::Sin,
                        _ => SynthRegression::Abs,
                    },
                    samples,
                    noise: flags.noise.or(file.dataset.noise).unwrap_or(DEFAULT_NOISE),
                },
                "two-gaussians" => Source::Classification {
                    kind: SynthClassification::TwoGaussians,
                    samples,
                },
                "xor-clusters" => Source::Classification {
                    kind: SynthClassification::XorClusters,
                    samples,
                },
                other => bail!("unknown synthetic dataset `{other}`"),
            };
            (source, kind.to_string())
        } else {
            let path = PathBuf::from(&source_text);
            let task = flags.task.or(file.dataset.task).unwrap_or(TaskKind::Classification);
            let targets = flags.target.clone().or(file.dataset.target.clone()).unwrap_or_else(|| vec![-1]);
            let header = flags.header || file.dataset.header.unwrap_or(false);
            let schema = match task {
                TaskKind::Classification => {
                    if targets.len() != 1 {
                        bail!("classification takes exactly one target column");
                    }
                    CsvSchema::classification(targets[0])
                }
                TaskKind::Regression => CsvSchema::regression(targets),
            }
            .with_header(header);
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| source_text.clone());
            (Source::Csv { path, schema }, label)
        };

        let models = flags
            .model
            .clone()
            .or(file.model.architectures.clone())
            .unwrap_or_else(|| vec!["net_10".into()])
            .iter()
            .map(|m| m.parse::<Architecture>())
            .collect::<Result<Vec<_>, _>>()?;
        if models.is_empty() {
            bail!("no architecture given");
        }
        let activation = |flag: &Option<String>, file: &Option<String>| -> Result<ActivationKind> {
            Ok(flag.clone().or(file.clone()).unwrap_or_else(|| "relu".into()).parse()?)
        };
        let inits = flags
            .init
            .clone()
            .or(file.model.init.clone())
            .unwrap_or_else(|| vec!["random".into()])
            .iter()
            .map(|s| s.parse::<VafInit>())
            .collect::<Result<Vec<_>, _>>()?;
        if inits.is_empty() {
            bail!("no VAF initialization given");
        }

        let optimizer = match flags
            .optimizer
            .clone()
            .or(file.training.optimizer.clone())
            .unwrap_or_else(|| "auto".into())
            .to_ascii_lowercase()
            .as_str()
        {
            "auto" => OptimizerChoice::Auto,
            name => {
                OptimizerConfig::defaults(name)?;
                OptimizerChoice::Named(name.to_string())
            }
        };
        let lr_grid = flags.lr_grid.clone().or(file.training.lr_grid.clone());
        let lrs = match (flags.lr.clone(), lr_grid) {
            (Some(lrs), _) => lrs,
            (None, Some(grid)) => parse_lr_grid(&grid)?,
            (None, None) => match file.training.lr.clone() {
                Some(lrs) => lrs,
                None => {
                    let name = match &optimizer {
                        OptimizerChoice::Named(n) => n.as_str(),
                        OptimizerChoice::Auto => "rmsprop",
                    };
                    vec![OptimizerConfig::default_lr(name).unwrap_or(0.001)]
                }
            },
        };
        if lrs.is_empty() || lrs.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            bail!("learning rates must be positive");
        }

        let exp = Self {
            source,
            label,
            models,
            hidden_activation: activation(&flags.hidden_activation, &file.model.hidden_activation)?,
            g: activation(&flags.g, &file.model.g)?,
            shared: !flags.per_neuron && file.model.shared.unwrap_or(true),
            inits,
            optimizer,
            lrs,
            batch_size: flags.batch_size.or(file.training.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
            epochs: flags.epochs.or(file.training.epochs).unwrap_or(DEFAULT_MAX_EPOCHS),
            patience: flags.patience.or(file.training.patience).unwrap_or(DEFAULT_PATIENCE),
            folds: flags.folds.or(file.cv.folds).unwrap_or(DEFAULT_FOLDS),
            select: flags.select.or(file.cv.select).unwrap_or_default(),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            jobs: flags.jobs.or(file.jobs).unwrap_or(1).max(1),
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        };
        if exp.epochs == 0 || exp.patience == 0 {
            bail!("epochs and patience must be at least 1");
        }
        Ok(exp)
    }

    pub fn load_dataset(&self) -> Result<Dataset<f64>> {
        Ok(match &self.source {
            Source::Csv { path, schema } => load_csv(path, schema)?,
            Source::Regression { kind, samples, noise } => synth_regression(*kind, *samples, *noise, self.seed)?,
            Source::Classification { kind, samples } => synth_classification(*kind, *samples, self.seed)?,
        })
    }

    /// Training settings for a run with `n_train` training rows.
    pub fn train_config(&self, n_train: usize, lr: f64) -> Result<TrainConfig> {
        let mut cfg = match &self.optimizer {
            OptimizerChoice::Auto => TrainConfig::auto(n_train, lr),
            OptimizerChoice::Named(name) => {
                let opt = OptimizerConfig::defaults(name)?.with_lr(lr);
                let batching = if matches!(opt, OptimizerConfig::Rprop { .. }) || self.batch_size == 0 {
                    Batching::Full
                } else {
                    Batching::MiniBatch {
                        size: self.batch_size,
                        shuffle: true,
                    }
                };
                TrainConfig::new(opt, batching)
            }
        };
        if let Batching::MiniBatch { size, .. } = &mut cfg.batching {
            if self.batch_size > 0 {
                *size = self.batch_size;
            }
        }
        cfg.max_epochs = self.epochs;
        cfg.patience = self.patience;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

pub fn parse_lr_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        bail!("learning-rate grid must look like lo:hi:n, got `{text}`");
    };
    let (lo, hi): (f64, f64) = (lo.parse()?, hi.parse()?);
    let n: usize = n.parse()?;
    if n == 0 || lo <= 0.0 || hi < lo {
        bail!("learning-rate grid needs 0 < lo <= hi and n >= 1");
    }
    Ok(linspace(lo, hi, n))
}
