//! Labelled datasets: synthetic generators, CSV input/output and feature screening.
//!
//! Generators draw from `ChaCha8Rng::seed_from_u64(seed)`. Within one dataset
//! the stream is consumed labels first, then features row by row.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classifier::encode_labels;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

pub const DEFAULT_LABEL_COLUMN: &str = "class";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Option<String>,
    pub seed: Option<u64>,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// `n × p`, one observation per row.
    pub x: DMatrix<f64>,
    pub y: Vec<String>,
    pub feature_names: Vec<String>,
    pub label_column: String,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(x: DMatrix<f64>, y: Vec<String>, feature_names: Vec<String>, provenance: Provenance) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: feature_names.len(),
            });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::Parse {
                row: row + 1,
                column: feature_names[col].clone(),
                message: "non-finite value".into(),
            });
        }
        Ok(LabeledDataset {
            x,
            y,
            feature_names,
            label_column: DEFAULT_LABEL_COLUMN.into(),
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn classes(&self) -> Vec<String> {
        encode_labels(&self.y).0
    }

    /// Keeps the listed feature columns, in the given order.
    pub fn select_features(&self, cols: &[usize]) -> Result<LabeledDataset> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(Error::InvalidInput(format!("feature index {c} out of range")));
        }
        let x = DMatrix::from_fn(self.n(), cols.len(), |i, j| self.x[(i, cols[j])]);
        let mut ds = LabeledDataset::new(
            x,
            self.y.clone(),
            cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            self.provenance.clone(),
        )?;
        ds.provenance.p = cols.len();
        ds.label_column = self.label_column.clone();
        Ok(ds)
    }
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn provenance(generator: &str, seed: u64, n: usize, p: usize, config: serde_json::Value) -> Provenance {
    Provenance {
        generator: Some(generator.into()),
        seed: Some(seed),
        n,
        p,
        config,
        source: None,
    }
}

/// Triangular template centred at 11, 1-based index `j`.
fn triangle(j: i64) -> f64 {
    (6.0 - (j - 11).abs() as f64).max(0.0)
}

/// The three waveform templates over `j = 1..=21`.
pub fn waveform_templates() -> [[f64; 21]; 3] {
    let mut w = [[0.0; 21]; 3];
    for j in 1..=21i64 {
        let idx = (j - 1) as usize;
        w[0][idx] = triangle(j);
        w[1][idx] = triangle(j - 4);
        w[2][idx] = triangle(j + 4);
    }
    w
}

/// One waveform row for class `1..=3` with convex weight `u` and noise `eps`.
pub fn waveform_row(class: usize, u: f64, eps: &[f64; 21]) -> [f64; 21] {
    let w = waveform_templates();
    let (a, b) = match class {
        1 => (0, 1),
        2 => (1, 2),
        _ => (2, 0),
    };
    let mut row = [0.0; 21];
    for j in 0..21 {
        row[j] = u * w[a][j] + (1.0 - u) * w[b][j] + eps[j];
    }
    row
}

/// Three equiprobable classes of noisy convex combinations of two triangular
/// templates, 21 features.
pub fn gen_waveform(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("waveform needs n >= 3, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(1..=3)).collect();
    let mut x = DMatrix::zeros(n, 21);
    for (i, &class) in classes.iter().enumerate() {
        let u: f64 = rng.random();
        let mut eps = [0.0; 21];
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        for (j, v) in waveform_row(class, u, &eps).into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    LabeledDataset::new(
        x,
        classes.iter().map(|c| c.to_string()).collect(),
        default_names(21),
        provenance("waveform", seed, n, 21, serde_json::json!({})),
    )
}

pub const SCENARIO5_WEIGHTS: [f64; 4] = [0.3, 0.2, 0.3, 0.2];
pub const SCENARIO5_MEANS: [[f64; 2]; 4] = [[-2.0, -2.0], [-2.0, 2.0], [2.0, -2.0], [2.0, 2.0]];
/// Loadings of `x3..x6` on `(x1, x2)`; `x7..x10` carry no signal.
const SCENARIO5_LOADINGS: [[f64; 2]; 8] = [
    [0.5, 0.0],
    [0.0, 1.0],
    [2.0, 0.0],
    [0.0, 3.0],
    [0.0, 0.0],
    [0.0, 0.0],
    [0.0, 0.0],
    [0.0, 0.0],
];
const SCENARIO5_NOISE_SD: [f64; 8] = [
    1.0,
    1.0,
    std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
    1.0,
    1.0,
    1.0,
    1.0,
];

/// Full 10-feature row given the two informative coordinates and the noise on the other eight.
pub fn scenario5_row(head: [f64; 2], eps: &[f64; 8]) -> [f64; 10] {
    let mut row = [0.0; 10];
    row[0] = head[0];
    row[1] = head[1];
    for j in 0..8 {
        row[j + 2] = SCENARIO5_LOADINGS[j][0] * head[0] + SCENARIO5_LOADINGS[j][1] * head[1] + eps[j];
    }
    row
}

/// Four spherical clusters in `(x1, x2)`, four features linear in them, four
/// pure-noise features. Labels are the generating cluster `1..=4`.
pub fn gen_scenario5(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n < 8 {
        return Err(Error::InvalidInput(format!("scenario needs n >= 8, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            SCENARIO5_WEIGHTS
                .iter()
                .position(|w| {
                    acc += w;
                    u < acc
                })
                .unwrap_or(3)
        })
        .collect();
    let mut x = DMatrix::zeros(n, 10);
    for (i, &k) in classes.iter().enumerate() {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let head = [SCENARIO5_MEANS[k][0] + z1, SCENARIO5_MEANS[k][1] + z2];
        let mut eps = [0.0; 8];
        for (e, sd) in eps.iter_mut().zip(SCENARIO5_NOISE_SD) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = sd * z;
        }
        for (j, v) in scenario5_row(head, &eps).into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    LabeledDataset::new(
        x,
        classes.iter().map(|k| (k + 1).to_string()).collect(),
        default_names(10),
        provenance("scenario5", seed, n, 10, serde_json::json!({})),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanVarConfig {
    /// Mean of class B along `x1`.
    pub mu_shift: f64,
    /// Variance of class B along `x2`.
    pub var_ratio: f64,
    pub noise_dims: usize,
}

impl Default for MeanVarConfig {
    fn default() -> Self {
        MeanVarConfig {
            mu_shift: 2.0,
            var_ratio: 6.25,
            noise_dims: 8,
        }
    }
}

/// Two classes of `n/2` rows each. Class A is standard normal in `(x1, x2)`;
/// class B is shifted along `x1` and inflated along `x2`. Standard normal
/// noise columns follow.
pub fn gen_mean_vs_variance(n: usize, seed: u64, cfg: &MeanVarConfig) -> Result<LabeledDataset> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidInput(format!("n must be even and positive, got {n}")));
    }
    if !(cfg.var_ratio > 0.0) || !cfg.mu_shift.is_finite() {
        return Err(Error::InvalidInput("var_ratio must be positive and mu_shift finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 2 + cfg.noise_dims;
    let sd = cfg.var_ratio.sqrt();
    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let b = i >= n / 2;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = match (j, b) {
                (0, true) => cfg.mu_shift + z,
                (1, true) => sd * z,
                _ => z,
            };
        }
        y.push(if b { "B" } else { "A" }.to_string());
    }
    LabeledDataset::new(
        x,
        y,
        default_names(p),
        provenance("meanvar", seed, n, p, serde_json::to_value(cfg)?),
    )
}

/// Parses CSV text with a header row. Every column except `label_column`
/// must be numeric.
pub fn parse_csv(text: &str, label_column: &str) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers.iter().position(|h| h == label_column).ok_or_else(|| {
        Error::InvalidInput(format!("label column '{label_column}' not found in header {headers:?}"))
    })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::InvalidInput("no feature columns".into()));
    }
    let mut values = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let record = record.map_err(|e| csv_error(e, line))?;
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                y.push(cell.trim().to_string());
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: headers[i].clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: headers[i].clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            values.push(v);
        }
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no data rows".into()));
    }
    let n = y.len();
    let p = feature_names.len();
    let x = DMatrix::from_row_slice(n, p, &values);
    let mut ds = LabeledDataset::new(
        x,
        y,
        feature_names,
        Provenance {
            n,
            p,
            ..Provenance::default()
        },
    )?;
    ds.label_column = label_column.to_string();
    Ok(ds)
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("ragged row: expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    Error::Parse {
        row: line,
        column: String::new(),
        message,
    }
}

pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    let mut ds = parse_csv(&text, label_column)?;
    ds.provenance.source = Some(path.display().to_string());
    Ok(ds)
}

/// 17 significant digits, enough to read back the identical `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv_string(ds: &LabeledDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = ds.feature_names.clone();
    header.push(ds.label_column.clone());
    w.write_record(&header).map_err(|e| csv_error(e, 1))?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = (0..ds.p()).map(|j| format_value(ds.x[(i, j)])).collect();
        rec.push(ds.y[i].clone());
        w.write_record(&rec).map_err(|e| csv_error(e, i + 2))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `path` and a `<path>.provenance.json` sidecar.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(ds)?)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&ds.provenance)?)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    s.into()
}

/// Two-sided Welch t-test p-value per feature for a two-class labelling.
/// A feature constant within both classes gets p = 1.
pub fn welch_p_values(x: &DMatrix<f64>, y: &[String]) -> Result<Vec<f64>> {
    let (classes, idx) = encode_labels(y);
    if classes.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "a two-class labelling is required, found {} classes",
            classes.len()
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let n1 = idx.iter().filter(|&&k| k == 0).count();
    let n2 = idx.len() - n1;
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidInput("each class needs at least 2 observations".into()));
    }
    let stats = |col: usize, k: usize, nk: usize| {
        let vals: Vec<f64> = (0..x.nrows()).filter(|&i| idx[i] == k).map(|i| x[(i, col)]).collect();
        let mean = vals.iter().sum::<f64>() / nk as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nk - 1) as f64;
        (mean, var)
    };
    (0..x.ncols())
        .map(|j| {
            let (m1, v1) = stats(j, 0, n1);
            let (m2, v2) = stats(j, 1, n2);
            let (a, b) = (v1 / n1 as f64, v2 / n2 as f64);
            if a + b == 0.0 {
                return Ok(1.0);
            }
            let t = (m1 - m2) / (a + b).sqrt();
            let df = (a + b).powi(2) / (a * a / (n1 - 1) as f64 + b * b / (n2 - 1) as f64);
            let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
            Ok((2.0 * dist.sf(t.abs())).min(1.0))
        })
        .collect()
}

/// Benjamini–Hochberg step-up: indices of rejected nulls, ascending.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Vec<usize> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = (1..=m).rev().find(|&k| p_values[order[k - 1]] <= k as f64 * q / m as f64);
    let mut picked: Vec<usize> = match cutoff {
        Some(k) => order[..k].to_vec(),
        None => Vec::new(),
    };
    picked.sort_unstable();
    picked
}

/// Features differing between two classes at false discovery rate `q`.
pub fn bh_filter(x: &DMatrix<f64>, y: &[String], q: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!("FDR level must lie in (0, 1), got {q}")));
    }
    Ok(benjamini_hochberg(&welch_p_values(x, y)?, q))
}

#[derive(Debug, Clone)]
pub struct DiagonalCovariance {
    pub sigma: SymMatrix,
    /// Columns with zero variance.
    pub constant_columns: Vec<usize>,
}

/// Per-feature variances (`1/n`) on the diagonal, correlations dropped.
pub fn diag_sigma(x: &DMatrix<f64>) -> Result<DiagonalCovariance> {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(Error::InvalidInput("empty data matrix".into()));
    }
    let vars: Vec<f64> = x
        .column_iter()
        .map(|c| {
            let m = c.sum() / n as f64;
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    Ok(DiagonalCovariance {
        constant_columns: (0..vars.len()).filter(|&j| vars[j] == 0.0).collect(),
        sigma: SymMatrix::from_diagonal(&vars),
    })
}
