//! Datasets: CSV ingestion, z-score normalization, seeded splits and
//! synthetic generators.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    /// Targets are one-hot rows over `classes`.
    Classification { classes: Vec<String> },
}

impl Task {
    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ColumnStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> ColumnStats<T> {
    pub fn fit(m: &Matrix<T>) -> Self {
        let n = T::from_usize(m.rows()).unwrap();
        let mut mean = vec![T::zero(); m.cols()];
        for i in 0..m.rows() {
            for (acc, &v) in mean.iter_mut().zip(m.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![T::zero(); m.cols()];
        for i in 0..m.rows() {
            for ((acc, &v), &mu) in var.iter_mut().zip(m.row(i)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Self { mean, std }
    }

    /// `(v - mean) / std`; constant columns map to 0.
    pub fn apply(&self, m: &Matrix<T>) -> Matrix<T> {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = if self.std[j] > T::zero() {
                    (*v - self.mean[j]) / self.std[j]
                } else {
                    T::zero()
                };
            }
        }
        out
    }

    pub fn invert(&self, m: &Matrix<T>) -> Matrix<T> {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Normalization<T> {
    pub features: ColumnStats<T>,
    /// Only regression targets are normalized.
    pub targets: Option<ColumnStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    x: Matrix<T>,
    t: Matrix<T>,
    task: Task,
    normalization: Option<Normalization<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, t: Matrix<T>, task: Task) -> Result<Self> {
        if x.rows() != t.rows() {
            return Err(Error::Shape {
                op: "dataset",
                left: x.shape(),
                right: t.shape(),
            });
        }
        if let Task::Classification { classes } = &task {
            if classes.len() != t.cols() {
                return Err(Error::input(format!(
                    "{} classes but targets have {} columns",
                    classes.len(),
                    t.cols()
                )));
            }
            for i in 0..t.rows() {
                let row = t.row(i);
                let ones = row.iter().filter(|&&v| v == T::one()).count();
                let zeros = row.iter().filter(|&&v| v == T::zero()).count();
                if ones != 1 || ones + zeros != row.len() {
                    return Err(Error::input(format!("target row {i} is not one-hot")));
                }
            }
        }
        Ok(Self {
            x,
            t,
            task,
            normalization: None,
        })
    }

    /// Classification dataset from integer labels.
    pub fn from_labels(x: Matrix<T>, labels: &[usize], classes: Vec<String>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::input(format!("label {bad} out of range for {} classes", classes.len())));
        }
        let t = one_hot(labels, classes.len())?;
        Self::new(x, t, Task::Classification { classes })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn targets(&self) -> &Matrix<T> {
        &self.t
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn normalization(&self) -> Option<&Normalization<T>> {
        self.normalization.as_ref()
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.t.cols()
    }

    /// Class index of each row; `None` for regression.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.task
            .is_classification()
            .then(|| (0..self.len()).map(|i| self.t.argmax_row(i)).collect())
    }

    pub fn classes(&self) -> Option<&[String]> {
        match &self.task {
            Task::Classification { classes } => Some(classes),
            Task::Regression => None,
        }
    }

    /// Rows in the given order. Normalization metadata is kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::input("empty subset"));
        }
        Ok(Self {
            x: self.x.select_rows(indices)?,
            t: self.t.select_rows(indices)?,
            task: self.task.clone(),
            normalization: self.normalization.clone(),
        })
    }

    /// Statistics of this dataset: features always, targets for regression.
    pub fn fit_normalization(&self) -> Normalization<T> {
        Normalization {
            features: ColumnStats::fit(&self.x),
            targets: (!self.task.is_classification()).then(|| ColumnStats::fit(&self.t)),
        }
    }

    /// Z-scores every feature column (and regression targets) with this
    /// dataset's own statistics.
    pub fn normalize(&self) -> Result<Self> {
        let stats = self.fit_normalization();
        self.normalize_with(&stats)
    }

    /// Applies statistics fitted elsewhere, e.g. on a training partition.
    pub fn normalize_with(&self, stats: &Normalization<T>) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(Error::input("dataset is already normalized"));
        }
        if stats.features.mean.len() != self.n_features() {
            return Err(Error::input("normalization statistics do not match the feature count"));
        }
        let t = match &stats.targets {
            Some(ts) => ts.apply(&self.t),
            None => self.t.clone(),
        };
        Ok(Self {
            x: stats.features.apply(&self.x),
            t,
            task: self.task.clone(),
            normalization: Some(stats.clone()),
        })
    }

    /// Undoes [`Dataset::normalize`]. A no-op on raw data.
    pub fn denormalize(&self) -> Self {
        match &self.normalization {
            None => self.clone(),
            Some(stats) => Self {
                x: stats.features.invert(&self.x),
                t: self.denormalize_targets(&self.t),
                task: self.task.clone(),
                normalization: None,
            },
        }
    }

    /// Maps targets or predictions back to the raw target scale.
    pub fn denormalize_targets(&self, y: &Matrix<T>) -> Matrix<T> {
        match self.normalization.as_ref().and_then(|n| n.targets.as_ref()) {
            Some(ts) => ts.invert(y),
            None => y.clone(),
        }
    }

    /// Seeded partition by `fractions` (which must sum to 1). With
    /// `stratify`, every class is divided in the same proportions. Indices
    /// keep their original order inside each part.
    pub fn split(&self, fractions: &[f64], seed: u64, stratify: bool) -> Result<Vec<Self>> {
        let parts = split_indices(self, fractions, seed, stratify)?;
        parts.iter().map(|idx| self.subset(idx)).collect()
    }
}

/// Index form of [`Dataset::split`].
pub fn split_indices<T: Scalar>(ds: &Dataset<T>, fractions: &[f64], seed: u64, stratify: bool) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(Error::input("split fractions must lie in [0, 1]"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("split fractions sum to {total}, not 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(ds, stratify, &mut rng);
    let mut parts = vec![Vec::new(); fractions.len()];
    for group in groups {
        let sizes = apportion(group.len(), fractions);
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&group[start..start + size]);
            start += size;
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::input(format!(
            "{} rows are too few for a split into {} parts",
            ds.len(),
            fractions.len()
        )));
    }
    Ok(parts)
}

/// Seeded K-fold partition: disjoint, covering, sizes within one of each
/// other. Stratified folds also keep every class within one sample of its
/// share per fold.
pub fn fold_indices<T: Scalar>(ds: &Dataset<T>, k: usize, seed: u64, stratify: bool) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::input("K-fold needs K >= 2"));
    }
    if ds.len() < k {
        return Err(Error::input(format!("{} rows cannot fill {k} folds", ds.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = shuffled_groups(ds, stratify, &mut rng);
    let mut folds = vec![Vec::new(); k];
    // Dealing the concatenated groups round-robin balances both the fold
    // sizes and each class's count per fold.
    for (pos, idx) in groups.into_iter().flatten().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// One shuffled index list per class (or a single list).
fn shuffled_groups<T: Scalar>(ds: &Dataset<T>, stratify: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups = match (stratify, ds.labels()) {
        (true, Some(labels)) => {
            let n_classes = ds.n_outputs();
            let mut g = vec![Vec::new(); n_classes];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        _ => vec![(0..ds.len()).collect::<Vec<_>>()],
    };
    for g in &mut groups {
        g.shuffle(rng);
    }
    groups
}

/// Largest-remainder apportionment of `n` items.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut left = n.saturating_sub(sizes.iter().sum());
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

pub fn one_hot<T: Scalar>(labels: &[usize], n_classes: usize) -> Result<Matrix<T>> {
    if labels.is_empty() || n_classes == 0 {
        return Err(Error::input("one-hot encoding needs labels and classes"));
    }
    let mut t = Matrix::zeros(labels.len(), n_classes);
    for (i, &l) in labels.iter().enumerate() {
        t.set(i, l, T::one());
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// How to read a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Target column indices; negative values count from the end (-1 is
    /// the last column). Classification takes exactly one.
    pub targets: Vec<i64>,
    pub task: TaskKind,
    #[serde(default)]
    pub header: bool,
    /// Fixes the class order; labels outside it are errors.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn classification(target: i64) -> Self {
        Self {
            targets: vec![target],
            task: TaskKind::Classification,
            header: false,
            classes: None,
        }
    }

    pub fn regression(targets: Vec<i64>) -> Self {
        Self {
            targets,
            task: TaskKind::Regression,
            header: false,
            classes: None,
        }
    }

    pub fn with_header(mut self, header: bool) -> Self {
        self.header = header;
        self
    }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, schema)
}

/// [`load_csv`] on in-memory text.
pub fn parse_csv<T: Scalar>(text: &str, schema: &CsvSchema) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut width: Option<usize> = None;
    let mut target_cols: Vec<usize> = Vec::new();
    let mut features: Vec<T> = Vec::new();
    let mut raw_targets: Vec<(u64, String)> = Vec::new();
    let mut numeric_targets: Vec<T> = Vec::new();
    let mut rows = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => {
                width = Some(record.len());
                target_cols = resolve_targets(&schema.targets, record.len(), schema.task).map_err(|msg| Error::Parse { line, msg })?;
            }
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {w} fields, found {}", record.len()),
                });
            }
            Some(_) => {}
        }
        for (j, field) in record.iter().enumerate() {
            if target_cols.contains(&j) {
                continue;
            }
            features.push(parse_number(field).ok_or_else(|| Error::Parse {
                line,
                msg: format!("non-numeric feature `{field}` in column {j}"),
            })?);
        }
        for &j in &target_cols {
            let field = &record[j];
            match schema.task {
                TaskKind::Classification => raw_targets.push((line, field.to_string())),
                TaskKind::Regression => numeric_targets.push(parse_number(field).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("non-numeric target `{field}` in column {j}"),
                })?),
            }
        }
        rows += 1;
    }

    let width = width.ok_or_else(|| Error::input("CSV contains no data rows"))?;
    let n_features = width - target_cols.len();
    if n_features == 0 {
        return Err(Error::input("CSV has no feature columns"));
    }
    let x = Matrix::new(rows, n_features, features)?;
    match schema.task {
        TaskKind::Regression => {
            let t = Matrix::new(rows, target_cols.len(), numeric_targets)?;
            Dataset::new(x, t, Task::Regression)
        }
        TaskKind::Classification => {
            let classes = match &schema.classes {
                Some(c) => c.clone(),
                None => sorted_labels(raw_targets.iter().map(|(_, l)| l.as_str())),
            };
            let labels = raw_targets
                .iter()
                .map(|(line, l)| {
                    classes.iter().position(|c| c == l).ok_or_else(|| Error::Parse {
                        line: *line,
                        msg: format!("unknown class label `{l}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Dataset::from_labels(x, &labels, classes)
        }
    }
}

fn resolve_targets(targets: &[i64], width: usize, task: TaskKind) -> std::result::Result<Vec<usize>, String> {
    if targets.is_empty() {
        return Err("no target column given".into());
    }
    if task == TaskKind::Classification && targets.len() != 1 {
        return Err("classification takes exactly one target column".into());
    }
    let mut out = Vec::new();
    for &t in targets {
        let idx = if t < 0 { width as i64 + t } else { t };
        if idx < 0 || idx >= width as i64 {
            return Err(format!("target column {t} out of range for {width} columns"));
        }
        if out.contains(&(idx as usize)) {
            return Err(format!("target column {t} given twice"));
        }
        out.push(idx as usize);
    }
    Ok(out)
}

fn parse_number<T: Scalar>(s: &str) -> Option<T> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(T::lit)
}

/// Unique labels, numerically ordered when they are all numbers.
fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let unique: BTreeSet<&str> = labels.collect();
    let mut out: Vec<String> = unique.into_iter().map(str::to_string).collect();
    if out.iter().all(|l| l.parse::<f64>().is_ok()) {
        out.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    out
}

/// One-dimensional regression problems on an even grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthRegression {
    /// `t = 2x + 1` on `[-1, 1]`.
    Linear,
    /// `t = sin(x)` on `[-pi, pi]`.
    Sin,
    /// `t = |x|` on `[-2, 2]`.
    Abs,
}

impl SynthRegression {
    pub fn domain(self) -> (f64, f64) {
        match self {
            Self::Linear => (-1.0, 1.0),
            Self::Sin => (-PI, PI),
            Self::Abs => (-2.0, 2.0),
        }
    }

    pub fn target(self, x: f64) -> f64 {
        match self {
            Self::Linear => 2.0 * x + 1.0,
            Self::Sin => x.sin(),
            Self::Abs => x.abs(),
        }
    }
}

/// `n` grid points over the kind's domain with Gaussian target noise.
pub fn synth_regression<T: Scalar>(kind: SynthRegression, n: usize, noise_std: f64, seed: u64) -> Result<Dataset<T>> {
    if n < 4 {
        return Err(Error::input("synthetic sets need at least 4 samples"));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::input(format!("noise std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = kind.domain();
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let ts: Vec<T> = xs
        .iter()
        .map(|&x| {
            let e = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            T::lit(kind.target(x) + e)
        })
        .collect();
    let x = Matrix::new(n, 1, xs.into_iter().map(T::lit).collect())?;
    Dataset::new(x, Matrix::new(n, 1, ts)?, Task::Regression)
}

/// Two-class problems in the plane. Classes alternate by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthClassification {
    /// Unit-variance blobs at `(-5, 0)` and `(5, 0)`: ten standard
    /// deviations apart.
    TwoGaussians,
    /// Blobs with std 0.5 at the four corners `(+-2, +-2)`; the class is
    /// the XOR of the coordinate signs.
    XorClusters,
}

pub fn synth_classification<T: Scalar>(kind: SynthClassification, n: usize, seed: u64) -> Result<Dataset<T>> {
    if n < 4 {
        return Err(Error::input("synthetic sets need at least 4 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let (cx, cy, sd) = match kind {
            SynthClassification::TwoGaussians => (if class == 0 { -5.0 } else { 5.0 }, 0.0, 1.0),
            SynthClassification::XorClusters => {
                let flip = (i / 2) % 2 == 1;
                let sx: f64 = if flip { -2.0 } else { 2.0 };
                let sy = if class == 0 { sx } else { -sx };
                (sx, sy, 0.5)
            }
        };
        let blob = Normal::new(0.0, sd).unwrap();
        xs.push(T::lit(cx + blob.sample(&mut rng)));
        xs.push(T::lit(cy + blob.sample(&mut rng)));
        labels.push(class);
    }
    Dataset::from_labels(Matrix::new(n, 2, xs)?, &labels, vec!["0".into(), "1".into()])
}
