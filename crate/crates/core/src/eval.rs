//! K-fold cross-validation over a hyperparameter grid, and the metrics it
//! reports.
//!
//! For every fold the held-out part is the test set and the remainder is
//! split 75/25 into training and validation sets. Every grid point is
//! trained with [`crate::train::train`] (validation drives early stopping)
//! and scored on the test set; the best score per fold is kept. By default
//! the best point is also *chosen* on the test set. [`Selection::Validation`]
//! chooses on the validation set instead.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::data::{fold_indices, split_indices, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Architecture, Network, VafInit};
use crate::optim::OptimizerConfig;
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig};

pub const INNER_TRAIN_FRACTION: f64 = 0.75;

/// Root mean squared error over every entry.
pub fn metric_rmse<T: Scalar>(y: &Matrix<T>, t: &Matrix<T>) -> Result<f64> {
    if y.shape() != t.shape() {
        return Err(Error::Shape {
            op: "rmse",
            left: y.shape(),
            right: t.shape(),
        });
    }
    let n = y.as_slice().len() as f64;
    let sq: f64 = y
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(&a, &b)| {
            let d = (a - b).to_f64_lossy();
            d * d
        })
        .sum();
    Ok((sq / n).sqrt())
}

/// Fraction of rows whose argmax agrees; ties resolve to the lowest index.
pub fn metric_accuracy<T: Scalar>(y: &Matrix<T>, t: &Matrix<T>) -> Result<f64> {
    if y.shape() != t.shape() {
        return Err(Error::Shape {
            op: "accuracy",
            left: y.shape(),
            right: t.shape(),
        });
    }
    let hits = (0..y.rows()).filter(|&i| y.argmax_row(i) == t.argmax_row(i)).count();
    Ok(hits as f64 / y.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rmse,
    Accuracy,
}

impl MetricKind {
    pub fn for_dataset<T: Scalar>(ds: &Dataset<T>) -> Self {
        if ds.task().is_classification() {
            MetricKind::Accuracy
        } else {
            MetricKind::Rmse
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Rmse => a < b,
            MetricKind::Accuracy => a > b,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Rmse => "rmse",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// Scores predictions of a model trained on `ds`'s scale against `ds`.
    /// Regression predictions are mapped back to raw target units first.
    pub fn score<T: Scalar>(self, net: &Network<T>, ds: &Dataset<T>) -> Result<f64> {
        let y = net.predict(ds.features())?;
        match self {
            MetricKind::Accuracy => metric_accuracy(&y, ds.targets()),
            MetricKind::Rmse => metric_rmse(&ds.denormalize_targets(&y), &ds.denormalize_targets(ds.targets())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Num(f64),
    Text(String),
}

impl HyperValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            HyperValue::Num(v) => Some(*v),
            HyperValue::Text(s) => s.parse().ok(),
        }
    }
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Num(v) => write!(f, "{v}"),
            HyperValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for HyperValue {
    fn from(v: f64) -> Self {
        HyperValue::Num(v)
    }
}

impl From<&str> for HyperValue {
    fn from(s: &str) -> Self {
        HyperValue::Text(s.to_string())
    }
}

/// One assignment of a value to every grid axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint(pub Vec<(String, HyperValue)>);

impl HyperPoint {
    pub fn get(&self, axis: &str) -> Option<&HyperValue> {
        self.0.iter().find(|(n, _)| n == axis).map(|(_, v)| v)
    }
}

impl fmt::Display for HyperPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, value)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={value}")?;
        }
        Ok(())
    }
}

/// Named axes whose cartesian product is searched.
///
/// Recognized axes: `model` (architecture name), `lr`, `init` (`random` or
/// an activation name), `g` (VAF hidden activation) and `optimizer`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    axes: Vec<(String, Vec<HyperValue>)>,
}

pub const KNOWN_AXES: [&str; 5] = ["model", "lr", "init", "g", "optimizer"];

impl HyperGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn axis(mut self, name: &str, values: Vec<HyperValue>) -> Result<Self> {
        if !KNOWN_AXES.contains(&name) {
            return Err(Error::input(format!("unknown grid axis `{name}` (known: {})", KNOWN_AXES.join(", "))));
        }
        if values.is_empty() {
            return Err(Error::input(format!("grid axis `{name}` has no values")));
        }
        if self.axes.iter().any(|(n, _)| n == name) {
            return Err(Error::input(format!("grid axis `{name}` given twice")));
        }
        self.axes.push((name.to_string(), values));
        Ok(self)
    }

    pub fn axes(&self) -> &[(String, Vec<HyperValue>)] {
        &self.axes
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product; the first axis varies slowest. A grid without
    /// axes has a single empty point.
    pub fn points(&self) -> Vec<HyperPoint> {
        let mut points = vec![Vec::new()];
        for (name, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p: Vec<(String, HyperValue)>| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((name.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points.into_iter().map(HyperPoint).collect()
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Test,
    Validation,
}

/// Everything about a run that the grid does not vary.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSetup {
    pub train: TrainConfig,
    pub model: Architecture,
    pub hidden_activation: ActivationKind,
    pub vaf_g: ActivationKind,
    pub shared: bool,
    pub vaf_init: VafInit,
    pub selection: Selection,
    pub jobs: usize,
}

impl CvSetup {
    pub fn new(train: TrainConfig, model: Architecture) -> Self {
        Self {
            train,
            model,
            hidden_activation: ActivationKind::Relu,
            vaf_g: ActivationKind::Relu,
            shared: true,
            vaf_init: VafInit::Random,
            selection: Selection::Test,
            jobs: 1,
        }
    }
}

/// A grid point resolved against a [`CvSetup`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: Architecture,
    pub init: VafInit,
    pub g: ActivationKind,
    pub train: TrainConfig,
}

impl CvSetup {
    pub fn resolve(&self, point: &HyperPoint) -> Result<RunSpec> {
        let mut spec = RunSpec {
            model: self.model.clone(),
            init: self.vaf_init,
            g: self.vaf_g,
            train: self.train.clone(),
        };
        let text = |v: &HyperValue| v.to_string();
        for (axis, value) in &point.0 {
            match axis.as_str() {
                "model" => spec.model = text(value).parse()?,
                "init" => spec.init = text(value).parse()?,
                "g" => spec.g = text(value).parse()?,
                "optimizer" => spec.train.optimizer = OptimizerConfig::defaults(&text(value))?,
                "lr" => {}
                other => return Err(Error::input(format!("unknown grid axis `{other}`"))),
            }
        }
        // Applied last so it reaches an optimizer chosen on another axis.
        if let Some(v) = point.get("lr") {
            let lr = v
                .as_f64()
                .filter(|l| *l > 0.0)
                .ok_or_else(|| Error::input(format!("bad learning rate `{v}`")))?;
            spec.train.optimizer = spec.train.optimizer.with_lr(lr);
        }
        spec.train.validate()?;
        Ok(spec)
    }
}

impl RunSpec {
    pub fn build_network<T: Scalar>(&self, setup: &CvSetup, input: usize, output: usize, seed: u64) -> Result<Network<T>> {
        let specs = self
            .model
            .layer_specs(input, output, setup.hidden_activation, self.g, setup.shared);
        Network::build(&specs, self.init, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub params: HyperPoint,
    pub test_metric: f64,
    pub val_metric: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    /// Test-set metric of the selected grid point.
    pub best_metric: f64,
    pub best_params: HyperPoint,
    pub scores: Vec<PointScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub k: usize,
    pub metric: MetricKind,
    pub selection: Selection,
    /// Architecture used when the grid has no `model` axis.
    pub default_model: String,
    pub axes: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Sample standard deviation (n - 1) of the per-fold best metrics.
    pub std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CvReport {
    pub fn fold_metrics(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.best_metric).collect()
    }

    /// Recomputes `(mean, std)` from the fold entries.
    pub fn aggregate(&self) -> (f64, f64) {
        mean_std(&self.fold_metrics())
    }

    /// Most frequently selected architecture; ties go to the one selected
    /// first.
    pub fn best_model(&self) -> String {
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (i, f) in self.folds.iter().enumerate() {
            let name = f
                .best_params
                .get("model")
                .map(|v| v.to_string())
                .unwrap_or_else(|| self.default_model.clone());
            counts.entry(name).or_insert((0, i)).0 += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(name, _)| name)
            .unwrap_or_else(|| self.default_model.clone())
    }

    /// `mean ± std (best model)`.
    pub fn summary_cell(&self) -> String {
        format!("{:.4} ± {:.4} ({})", self.mean, self.std, self.best_model())
    }

    /// One row per fold, `fold,<metric>,<axes...>`, then `mean` and `std`
    /// rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("fold,{}", self.metric.name());
        for a in &self.axes {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for f in &self.folds {
            out.push_str(&format!("{},{}", f.fold + 1, f.best_metric));
            for a in &self.axes {
                out.push(',');
                if let Some(v) = f.best_params.get(a) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out.push_str(&format!("mean,{}\nstd,{}\n", self.mean, self.std));
        out
    }

    /// Every (fold, grid point) run.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("fold,point");
        for a in &self.axes {
            out.push(',');
            out.push_str(a);
        }
        out.push_str(",test_metric,val_metric,best_epoch,epochs\n");
        for f in &self.folds {
            for (p, s) in f.scores.iter().enumerate() {
                out.push_str(&format!("{},{}", f.fold + 1, p + 1));
                for a in &self.axes {
                    out.push(',');
                    if let Some(v) = s.params.get(a) {
                        out.push_str(&v.to_string());
                    }
                }
                out.push_str(&format!(",{},{},{},{}\n", s.test_metric, s.val_metric, s.best_epoch, s.epochs));
            }
        }
        out
    }
}

/// Text table with one row per dataset and one `mean ± std (model)` column
/// per labelled report.
pub fn format_table(columns: &[(&str, &CvReport)]) -> String {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Dataset".to_string(), "Metric".to_string()];
    header.extend(columns.iter().map(|(label, _)| label.to_string()));
    rows.push(header);
    if let Some((_, first)) = columns.first() {
        let mut row = vec![first.dataset.clone(), first.metric.name().to_string()];
        row.extend(columns.iter().map(|(_, r)| r.summary_cell()));
        rows.push(row);
        let mut folds = vec!["".to_string(), "folds".to_string()];
        folds.extend(columns.iter().map(|(_, r)| format!("K={}", r.k)));
        rows.push(folds);
    }
    let n_cols = rows[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (n_cols - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Paired per-fold differences `a - b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub diffs: Vec<f64>,
    pub mean_diff: f64,
    /// Folds where `a` is numerically larger.
    pub a_greater: usize,
    pub b_greater: usize,
    pub ties: usize,
}

pub fn compare(a: &CvReport, b: &CvReport) -> Result<Comparison> {
    if a.k != b.k || a.folds.len() != b.folds.len() {
        return Err(Error::input(format!("reports have different fold counts ({} vs {})", a.k, b.k)));
    }
    if a.dataset != b.dataset {
        return Err(Error::input(format!("reports are on different datasets ({} vs {})", a.dataset, b.dataset)));
    }
    if a.metric != b.metric {
        return Err(Error::input("reports use different metrics"));
    }
    let diffs: Vec<f64> = a.folds.iter().zip(&b.folds).map(|(x, y)| x.best_metric - y.best_metric).collect();
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(Comparison {
        a_greater: diffs.iter().filter(|&&d| d > 0.0).count(),
        b_greater: diffs.iter().filter(|&&d| d < 0.0).count(),
        ties: diffs.iter().filter(|&&d| d == 0.0).count(),
        diffs,
        mean_diff,
    })
}

/// Deterministic child seed for a `(fold, point)` run.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a mixed input.
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct FoldData<T> {
    train: Dataset<T>,
    val: Dataset<T>,
    test: Dataset<T>,
}

fn prepare_fold<T: Scalar>(ds: &Dataset<T>, folds: &[Vec<usize>], i: usize, seed: u64) -> Result<FoldData<T>> {
    let stratify = ds.task().is_classification();
    let rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    let remainder = ds.subset(&rest)?;
    let inner = split_indices(
        &remainder,
        &[INNER_TRAIN_FRACTION, 1.0 - INNER_TRAIN_FRACTION],
        derive_seed(seed, i as u64, u64::MAX),
        stratify,
    )?;
    let train_raw = remainder.subset(&inner[0])?;
    if let (Some(classes), Some(labels)) = (ds.classes(), train_raw.labels()) {
        for (c, name) in classes.iter().enumerate() {
            if !labels.contains(&c) {
                return Err(Error::Stratification {
                    fold: i + 1,
                    class: name.clone(),
                });
            }
        }
    }
    let stats = train_raw.fit_normalization();
    Ok(FoldData {
        train: train_raw.normalize_with(&stats)?,
        val: remainder.subset(&inner[1])?.normalize_with(&stats)?,
        test: ds.subset(&folds[i])?.normalize_with(&stats)?,
    })
}

/// Runs K-fold cross-validation of `setup` over `grid`.
///
/// Features (and regression targets) are z-scored per fold with statistics
/// of that fold's training part. Regression RMSE is reported in raw target
/// units. Results do not depend on `setup.jobs`.
pub fn kfold<T: Scalar>(ds: &Dataset<T>, name: &str, setup: &CvSetup, grid: &HyperGrid, k: usize, seed: u64) -> Result<CvReport> {
    let points = grid.points();
    let runs: Vec<RunSpec> = points.iter().map(|p| setup.resolve(p)).collect::<Result<_>>()?;
    let folds = fold_indices(ds, k, seed, ds.task().is_classification())?;
    let fold_data: Vec<FoldData<T>> = (0..k).map(|i| prepare_fold(ds, &folds, i, seed)).collect::<Result<_>>()?;
    let metric = MetricKind::for_dataset(ds);

    let jobs: Vec<(usize, usize)> = (0..k).flat_map(|f| (0..runs.len()).map(move |p| (f, p))).collect();
    let run_one = |&(f, p): &(usize, usize)| -> Result<PointScore> {
        let data = &fold_data[f];
        let run = &runs[p];
        let run_seed = derive_seed(seed, f as u64, p as u64);
        let net: Network<T> = run.build_network(setup, ds.n_features(), ds.n_outputs(), run_seed)?;
        let mut cfg = run.train.clone();
        cfg.seed = run_seed;
        let (best, trace) = train(&net, &data.train, &data.val, &cfg)?;
        Ok(PointScore {
            params: points[p].clone(),
            test_metric: metric.score(&best, &data.test)?,
            val_metric: metric.score(&best, &data.val)?,
            best_epoch: trace.best_epoch,
            epochs: trace.epochs(),
        })
    };
    let scores: Vec<PointScore> = if setup.jobs <= 1 {
        jobs.iter().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(setup.jobs)
            .build()
            .map_err(|e| Error::input(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    };

    let mut results = Vec::with_capacity(k);
    for (f, chunk) in scores.chunks(runs.len()).enumerate() {
        let pick = |s: &PointScore| match setup.selection {
            Selection::Test => s.test_metric,
            Selection::Validation => s.val_metric,
        };
        let mut best = 0;
        for (p, s) in chunk.iter().enumerate().skip(1) {
            if metric.better(pick(s), pick(&chunk[best])) {
                best = p;
            }
        }
        results.push(FoldResult {
            fold: f,
            test_size: folds[f].len(),
            best_metric: chunk[best].test_metric,
            best_params: chunk[best].params.clone(),
            scores: chunk.to_vec(),
        });
    }
    let (mean, std) = mean_std(&results.iter().map(|r| r.best_metric).collect::<Vec<_>>());
    Ok(CvReport {
        dataset: name.to_string(),
        k,
        metric,
        selection: setup.selection,
        default_model: setup.model.to_string(),
        axes: grid.axis_names().iter().map(|s| s.to_string()).collect(),
        folds: results,
        mean,
        std,
    })
}
