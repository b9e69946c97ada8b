use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, matmul_nt, matvec, Matrix};
use crate::model::Head;

/// Noise scale of the synthetic regression problem.
pub const LINREG_NOISE: f64 = 0.1;
/// Offset of the blob centres along their own coordinate.
pub const BLOB_SEPARATION: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn head(self) -> Head {
        match self {
            Task::Regression => Head::Gaussian,
            Task::Classification => Head::Categorical,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            _ => Err(Error::Config(format!(
                "unknown task '{s}' (expected regression or classification)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    LinregGaussian,
    BlobsClassification,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "linreg_gaussian" | "linreg" => Ok(SyntheticKind::LinregGaussian),
            "blobs_classification" | "blobs" => Ok(SyntheticKind::BlobsClassification),
            _ => Err(Error::Config(format!(
                "unknown synthetic kind '{s}' (expected linreg_gaussian or blobs_classification)"
            ))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::LinregGaussian => "linreg_gaussian",
            SyntheticKind::BlobsClassification => "blobs_classification",
        })
    }
}

/// Mean and standard deviation removed from a regression target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Column-major-by-sample dataset: `x` is `d_in × n`, `y` is `d_out × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub task: Task,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub dropped_rows: usize,
    pub target_stats: Option<TargetStats>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.y.rows()
    }

    /// Columns `idx` of `x` and `y`.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Matrix) {
        (gather_cols(&self.x, idx), gather_cols(&self.y, idx))
    }
}

pub(crate) fn gather_cols(a: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), idx.len());
    for r in 0..a.rows() {
        let src = a.row(r);
        for (dst, &j) in out.row_mut(r).iter_mut().zip(idx) {
            *dst = src[j];
        }
    }
    out
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headed CSV. Non-target columns whose values mostly parse as
/// numbers become features; the rest are ignored. Rows with an unparseable
/// feature (or regression target) are dropped and counted.
pub fn load_csv_dataset(path: &Path, target: &str, task: Task) -> Result<Dataset> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Data(format!("target column '{target}' not found in {}", path.display())))?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        rows.push(record.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>());
    }

    // a column is a feature if at least half of its cells are numeric
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_col)
        .filter(|&c| {
            let numeric = rows
                .iter()
                .filter(|r| r.get(c).and_then(|s| parse_cell(s)).is_some())
                .count();
            !rows.is_empty() && 2 * numeric >= rows.len()
        })
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    for row in &rows {
        let feats: Option<Vec<f64>> = feature_cols
            .iter()
            .map(|&c| row.get(c).and_then(|s| parse_cell(s)))
            .collect();
        let label = row.get(target_col).filter(|s| !s.is_empty());
        let label_ok = match task {
            Task::Regression => label.and_then(|s| parse_cell(s)).is_some(),
            Task::Classification => label.is_some(),
        };
        match (feats, label_ok) {
            (Some(f), true) => {
                features.push(f);
                labels.push(label.unwrap().clone());
            }
            _ => dropped += 1,
        }
    }
    let n = features.len();
    if n == 0 {
        return Err(Error::Data(format!("no usable rows in {}", path.display())));
    }
    let d = feature_cols.len();
    if d == 0 {
        return Err(Error::Data(format!("no numeric feature columns in {}", path.display())));
    }

    let mut x = Matrix::zeros(d, n);
    for (j, f) in features.iter().enumerate() {
        for (i, v) in f.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let (y, class_names) = match task {
        Task::Regression => {
            let vals: Vec<f64> = labels.iter().map(|s| parse_cell(s).unwrap()).collect();
            (Matrix::from_vec(1, n, vals)?, Vec::new())
        }
        Task::Classification => {
            let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            let mut y = Matrix::zeros(classes.len(), n);
            for (j, l) in labels.iter().enumerate() {
                let k = classes.binary_search(l).expect("label collected above");
                y[(k, j)] = 1.0;
            }
            (y, classes)
        }
    };
    Ok(Dataset {
        x,
        y,
        task,
        feature_names: feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        class_names,
        dropped_rows: dropped,
        target_stats: None,
    })
}

/// Population mean and standard deviation of a slice.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn zscore_row(row: &mut [f64]) -> TargetStats {
    let (mean, std) = moments(row);
    if std > 0.0 {
        row.iter_mut().for_each(|v| *v = (*v - mean) / std);
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
    }
    TargetStats { mean, std }
}

/// Z-scores every feature (population std; constant features become 0) and,
/// for regression, the target, keeping its statistics for inversion.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    if ds.len() < 2 {
        return Err(Error::Data("standardization needs at least two rows".into()));
    }
    let mut out = ds.clone();
    for r in 0..out.x.rows() {
        zscore_row(out.x.row_mut(r));
    }
    if ds.task == Task::Regression {
        let stats = zscore_row(out.y.row_mut(0));
        // keep the composition with any earlier transform invertible
        out.target_stats = Some(match ds.target_stats {
            Some(prev) => TargetStats {
                mean: prev.inverse(stats.mean),
                std: prev.std * stats.std,
            },
            None => stats,
        });
    }
    Ok(out)
}

/// Deterministic synthetic data.
///
/// `LinregGaussian`: `x ~ N(0, I_d)`, `y = wᵀx + noise·ε` with `w ~ N(0, I_d)`.
/// `BlobsClassification`: three classes, class `k` centred at
/// `±BLOB_SEPARATION` on coordinate `k / 2 mod d` with unit-variance spread.
pub fn make_synthetic(kind: SyntheticKind, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with_noise(kind, n, d, seed, LINREG_NOISE)
}

pub fn make_synthetic_with_noise(kind: SyntheticKind, n: usize, d: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Config("synthetic data needs n >= 1 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let feature_names = (0..d).map(|i| format!("x{i}")).collect();
    match kind {
        SyntheticKind::LinregGaussian => {
            let w: Vec<f64> = (0..d).map(|_| normal()).collect();
            let x = Matrix::from_vec(d, n, (0..d * n).map(|_| normal()).collect())?;
            let mut y = Matrix::zeros(1, n);
            for j in 0..n {
                let clean: f64 = (0..d).map(|i| w[i] * x[(i, j)]).sum();
                y[(0, j)] = clean + noise * normal();
            }
            Ok(Dataset {
                x,
                y,
                task: Task::Regression,
                feature_names,
                class_names: Vec::new(),
                dropped_rows: 0,
                target_stats: None,
            })
        }
        SyntheticKind::BlobsClassification => {
            let k = 3;
            let mut x = Matrix::zeros(d, n);
            let mut y = Matrix::zeros(k, n);
            for j in 0..n {
                let class = j % k;
                for i in 0..d {
                    x[(i, j)] = normal();
                }
                let sign = if class % 2 == 0 { 1.0 } else { -1.0 };
                x[((class / 2) % d, j)] += sign * BLOB_SEPARATION;
                y[(class, j)] = 1.0;
            }
            Ok(Dataset {
                x,
                y,
                task: Task::Classification,
                feature_names,
                class_names: (0..k).map(|c| format!("class{c}")).collect(),
                dropped_rows: 0,
                target_stats: None,
            })
        }
    }
}

/// Smallest achievable training loss `½·mean((y − Wᵀx̃)²)` of an affine
/// model, from the normal equations.
pub fn least_squares_optimum(ds: &Dataset) -> Result<f64> {
    if ds.task != Task::Regression {
        return Err(Error::Config("least-squares optimum needs a regression dataset".into()));
    }
    let n = ds.len();
    let d = ds.input_dim();
    let mut xt = Matrix::filled(d + 1, n, 1.0);
    for i in 0..d {
        xt.row_mut(i).copy_from_slice(ds.x.row(i));
    }
    let gram = matmul_nt(&xt, &xt)?;
    let rhs = matmul_nt(&xt, &ds.y)?;
    let w = cholesky_solve(&gram, &rhs)?;
    let mut total = 0.0;
    for o in 0..ds.output_dim() {
        let wo: Vec<f64> = (0..=d).map(|i| w[(i, o)]).collect();
        let fit = matvec(&xt.transpose(), &wo)?;
        total += fit.iter().zip(ds.y.row(o)).map(|(f, y)| (f - y).powi(2)).sum::<f64>();
    }
    Ok(0.5 * total / n as f64)
}
