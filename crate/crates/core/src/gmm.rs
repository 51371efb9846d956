//! EM estimation of Gaussian mixtures under the twelve parsimonious covariance
//! parametrizations `Σ_g = λ_g D_g A_g D_gᵀ`.
//!
//! BIC convention: `bic = 2·loglik − n_params·ln(n)`, larger is better.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Components whose responsibility mass falls below this are considered empty.
const EMPTY_COMPONENT_MASS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum CovarianceModel {
    E,
    V,
    EII,
    VII,
    EEI,
    VEI,
    EVI,
    VVI,
    EEE,
    EEV,
    VEV,
    VVV,
}

impl CovarianceModel {
    pub const ALL: [CovarianceModel; 12] = [
        Self::E,
        Self::V,
        Self::EII,
        Self::VII,
        Self::EEI,
        Self::VEI,
        Self::EVI,
        Self::VVI,
        Self::EEE,
        Self::EEV,
        Self::VEV,
        Self::VVV,
    ];

    pub const MULTIVARIATE: [CovarianceModel; 10] = [
        Self::EII,
        Self::VII,
        Self::EEI,
        Self::VEI,
        Self::EVI,
        Self::VVI,
        Self::EEE,
        Self::EEV,
        Self::VEV,
        Self::VVV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::E => "E",
            Self::V => "V",
            Self::EII => "EII",
            Self::VII => "VII",
            Self::EEI => "EEI",
            Self::VEI => "VEI",
            Self::EVI => "EVI",
            Self::VVI => "VVI",
            Self::EEE => "EEE",
            Self::EEV => "EEV",
            Self::VEV => "VEV",
            Self::VVV => "VVV",
        }
    }

    pub fn is_univariate(self) -> bool {
        matches!(self, Self::E | Self::V)
    }

    pub fn legal_for(self, p: usize) -> bool {
        if self.is_univariate() {
            p == 1
        } else {
            p >= 2
        }
    }

    pub fn check_dim(self, p: usize) -> Result<()> {
        if self.legal_for(p) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "covariance model {self} is not defined for dimension {p}"
            )))
        }
    }

    /// All components share one covariance matrix.
    pub fn common_covariance(self) -> bool {
        matches!(self, Self::E | Self::EII | Self::EEI | Self::EEE)
    }

    pub fn equal_volume(self) -> bool {
        matches!(self, Self::E | Self::EII | Self::EEI | Self::EVI | Self::EEE | Self::EEV)
    }

    /// The model with the same volume structure in the requested dimension:
    /// equal-volume models map to `E` in one dimension, the rest to `V`; in two
    /// or more dimensions multivariate models are returned unchanged and
    /// `E`/`V` map to `EII`/`VII`.
    pub fn for_dimension(self, p: usize) -> CovarianceModel {
        match (p, self.is_univariate()) {
            (1, true) | (0 | 2.., false) => self,
            (1, false) => {
                if self.equal_volume() {
                    Self::E
                } else {
                    Self::V
                }
            }
            (_, true) => {
                if self == Self::E {
                    Self::EII
                } else {
                    Self::VII
                }
            }
        }
    }

    fn diagonal(self) -> bool {
        matches!(
            self,
            Self::E | Self::V | Self::EII | Self::VII | Self::EEI | Self::VEI | Self::EVI | Self::VVI
        )
    }
}

impl fmt::Display for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovarianceModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown covariance model '{s}'")))
    }
}

/// Number of free covariance parameters of a `g`-component mixture in dimension `p`.
///
/// | model | count |
/// |-------|-------|
/// | E, EII | 1 |
/// | V, VII | G |
/// | EEI | p |
/// | VEI | p + G − 1 |
/// | EVI | pG − G + 1 |
/// | VVI | pG |
/// | EEE | p(p+1)/2 |
/// | EEV | G·p(p+1)/2 − (G−1)p |
/// | VEV | G·p(p+1)/2 − (G−1)(p−1) |
/// | VVV | G·p(p+1)/2 |
pub fn n_covariance_params(model: CovarianceModel, p: usize, g: usize) -> Result<usize> {
    model.check_dim(p)?;
    if g == 0 {
        return Err(Error::InvalidInput("component count must be positive".into()));
    }
    let full = p * (p + 1) / 2;
    Ok(match model {
        CovarianceModel::E | CovarianceModel::EII => 1,
        CovarianceModel::V | CovarianceModel::VII => g,
        CovarianceModel::EEI => p,
        CovarianceModel::VEI => p + g - 1,
        CovarianceModel::EVI => p * g - g + 1,
        CovarianceModel::VVI => p * g,
        CovarianceModel::EEE => full,
        CovarianceModel::EEV => g * full - (g - 1) * p,
        CovarianceModel::VEV => g * full - (g - 1) * (p - 1),
        CovarianceModel::VVV => g * full,
    })
}

/// Total free parameters: mixing weights, means and covariance terms.
pub fn n_params(model: CovarianceModel, p: usize, g: usize) -> Result<usize> {
    Ok((g - 1) + g * p + n_covariance_params(model, p, g)?)
}

pub fn bic(loglik: f64, n_params: usize, n: usize) -> f64 {
    2.0 * loglik - n_params as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
}

/// Cholesky factor of one component, row-major lower triangle.
#[derive(Debug, Clone)]
struct Factor {
    chol: Vec<f64>,
    half_log_det: f64,
    log_weight: f64,
}

impl Factor {
    fn new(c: &GaussianComponent) -> Result<Self> {
        let p = c.mean.len();
        let chol = c
            .covariance
            .matrix()
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let mut flat = vec![0.0; p * p];
        let mut half_log_det = 0.0;
        for i in 0..p {
            for j in 0..=i {
                flat[i * p + j] = l[(i, j)];
            }
            half_log_det += l[(i, i)].ln();
        }
        Ok(Factor {
            chol: flat,
            half_log_det,
            log_weight: c.weight.ln(),
        })
    }

    /// `log φ(x; μ, Σ)` without the weight.
    fn log_pdf(&self, x: &[f64], mean: &[f64], scratch: &mut [f64]) -> f64 {
        let p = mean.len();
        let mut quad = 0.0;
        for i in 0..p {
            let row = &self.chol[i * p..i * p + i];
            let mut s = x[i] - mean[i];
            for (l, z) in row.iter().zip(scratch.iter()) {
                s -= l * z;
            }
            let z = s / self.chol[i * p + i];
            scratch[i] = z;
            quad += z * z;
        }
        -0.5 * (p as f64 * LN_2PI + quad) - self.half_log_det
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A `G`-component Gaussian mixture `f(x) = Σ_g π_g φ(x; μ_g, Σ_g)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureModel {
    pub model: CovarianceModel,
    pub components: Vec<GaussianComponent>,
    #[serde(skip)]
    factors: OnceLock<Vec<Factor>>,
}

impl MixtureModel {
    pub fn new(model: CovarianceModel, components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("mixture needs at least one component".into()))?;
        let p = first.mean.len();
        model.check_dim(p)?;
        for c in &components {
            if c.mean.len() != p || c.covariance.order() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: c.mean.len(),
                });
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidInput(format!("invalid mixing weight {}", c.weight)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("mixing weights sum to {total}")));
        }
        Ok(MixtureModel {
            model,
            components,
            factors: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    fn factors(&self) -> Result<&[Factor]> {
        if let Some(f) = self.factors.get() {
            return Ok(f);
        }
        let built = self
            .components
            .iter()
            .map(Factor::new)
            .collect::<Result<Vec<_>>>()?;
        Ok(self.factors.get_or_init(|| built))
    }

    /// `log π_g + log φ(x; μ_g, Σ_g)` for every component.
    pub fn weighted_log_densities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let factors = self.factors()?;
        let mut scratch = vec![0.0; x.len()];
        Ok(self
            .components
            .iter()
            .zip(factors)
            .map(|(c, f)| f.log_weight + f.log_pdf(x, &c.mean, &mut scratch))
            .collect())
    }

    /// Log mixture density, evaluated in log space.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.weighted_log_densities(x)?))
    }

    /// Sum of log densities over the rows of `data`.
    pub fn loglik(&self, data: &DMatrix<f64>) -> Result<f64> {
        let rows = RowData::from_matrix(data);
        (0..rows.n).map(|i| self.log_density(rows.row(i))).sum()
    }

    pub fn covariances(&self) -> Vec<SymMatrix> {
        self.components.iter().map(|c| c.covariance.clone()).collect()
    }

    /// `Σ_g π_g μ_g`.
    pub fn mean(&self) -> Vec<f64> {
        let p = self.dim();
        let mut m = vec![0.0; p];
        for c in &self.components {
            for (a, b) in m.iter_mut().zip(&c.mean) {
                *a += c.weight * b;
            }
        }
        m
    }
}

/// Row-major copy of an `n × p` data matrix.
#[derive(Debug, Clone)]
pub(crate) struct RowData {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
}

impl RowData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (n, p) = m.shape();
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                x.push(m[(i, j)]);
            }
        }
        RowData { n, p, x }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Trace of the (1/n) sample covariance.
    fn total_variance(&self) -> f64 {
        let mut mean = vec![0.0; self.p];
        for i in 0..self.n {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n as f64);
        let mut ss = 0.0;
        for i in 0..self.n {
            for (m, v) in mean.iter().zip(self.row(i)) {
                ss += (v - m) * (v - m);
            }
        }
        ss / self.n as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change declaring convergence.
    pub tol: f64,
    pub seed: u64,
    pub n_starts: usize,
    /// Inner fixed-point cap for M-steps without closed form (VEI, VEV).
    pub inner_max_iter: usize,
    pub inner_tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 500,
            tol: 1e-6,
            seed: 0,
            n_starts: 5,
            inner_max_iter: 50,
            inner_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: MixtureModel,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some covariance hit the eigenvalue floor at least once.
    pub ridged: bool,
    /// Log-likelihood after every E-step of the winning start.
    pub loglik_trace: Vec<f64>,
}

/// Weighted sufficient statistics for an M-step.
pub(crate) struct Moments {
    pub counts: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Scatter matrices `W_g = Σ_i r_ig (x_i − μ_g)(x_i − μ_g)ᵀ`.
    pub scatter: Vec<DMatrix<f64>>,
}

impl Moments {
    /// `resp` is row-major `n × g`.
    pub fn compute(rows: &RowData, resp: &[f64], g: usize) -> Moments {
        let p = rows.p;
        let mut counts = vec![0.0; g];
        let mut means = vec![vec![0.0; p]; g];
        for i in 0..rows.n {
            let x = rows.row(i);
            for k in 0..g {
                let r = resp[i * g + k];
                if r == 0.0 {
                    continue;
                }
                counts[k] += r;
                for (m, v) in means[k].iter_mut().zip(x) {
                    *m += r * v;
                }
            }
        }
        for k in 0..g {
            if counts[k] > 0.0 {
                means[k].iter_mut().for_each(|m| *m /= counts[k]);
            }
        }
        let mut scatter = Vec::with_capacity(g);
        let mut d = vec![0.0; p];
        for k in 0..g {
            let mut w = vec![0.0; p * p];
            for i in 0..rows.n {
                let r = resp[i * g + k];
                if r == 0.0 {
                    continue;
                }
                for (dj, (x, m)) in d.iter_mut().zip(rows.row(i).iter().zip(&means[k])) {
                    *dj = x - m;
                }
                for a in 0..p {
                    let ra = r * d[a];
                    for b in a..p {
                        w[a * p + b] += ra * d[b];
                    }
                }
            }
            scatter.push(DMatrix::from_fn(p, p, |a, b| {
                if a <= b {
                    w[a * p + b]
                } else {
                    w[b * p + a]
                }
            }));
        }
        Moments {
            counts,
            means,
            scatter,
        }
    }
}

fn geometric_mean(v: &[f64]) -> f64 {
    (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp()
}

fn diag_of(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, i)]).collect()
}

/// Builds `L diag(values) Lᵀ`.
fn from_eigen(vectors: &DMatrix<f64>, values: &[f64]) -> SymMatrix {
    let mut scaled = vectors.clone();
    for (j, v) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*v);
    }
    SymMatrix::symmetrized(scaled * vectors.transpose())
}

/// Shape vector (unit determinant) read back from a previous covariance, used to
/// warm-start the inner fixed-point iterations so each M-step improves on the
/// previous parameters.
fn previous_shape(prev: Option<&[SymMatrix]>, model: CovarianceModel, p: usize) -> Vec<f64> {
    let Some(first) = prev.and_then(|c| c.first()) else {
        return vec![1.0; p];
    };
    let raw = match model {
        CovarianceModel::VEI => first.diagonal(),
        _ => match sym_eigen(first) {
            Ok(e) => e.values,
            Err(_) => return vec![1.0; p],
        },
    };
    if raw.iter().any(|v| !(*v > 0.0)) {
        return vec![1.0; p];
    }
    let gm = geometric_mean(&raw);
    raw.iter().map(|v| v / gm).collect()
}

pub(crate) struct InnerSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub floor: f64,
}

/// Constrained covariance M-step. Returns the covariances and whether the
/// eigenvalue floor was applied.
pub(crate) fn constrained_covariances(
    model: CovarianceModel,
    m: &Moments,
    prev: Option<&[SymMatrix]>,
    inner: &InnerSettings,
) -> (Vec<SymMatrix>, bool) {
    let g = m.counts.len();
    let p = m.means[0].len();
    let n: f64 = m.counts.iter().sum();
    let floor = inner.floor;
    let mut ridged = false;
    let mut clamp = |v: f64| {
        if v < floor || !v.is_finite() {
            ridged = true;
            floor
        } else {
            v
        }
    };

    let covs: Vec<SymMatrix> = match model {
        CovarianceModel::E | CovarianceModel::EII => {
            let tr: f64 = m.scatter.iter().map(|w| w.trace()).sum();
            let lambda = clamp(tr / (n * p as f64));
            vec![SymMatrix::from_diagonal(&vec![lambda; p]); g]
        }
        CovarianceModel::V | CovarianceModel::VII => (0..g)
            .map(|k| {
                let lambda = clamp(m.scatter[k].trace() / (m.counts[k] * p as f64));
                SymMatrix::from_diagonal(&vec![lambda; p])
            })
            .collect(),
        CovarianceModel::EEI => {
            let mut d = vec![0.0; p];
            for w in &m.scatter {
                for (a, b) in d.iter_mut().zip(diag_of(w)) {
                    *a += b;
                }
            }
            let d: Vec<f64> = d.into_iter().map(|v| clamp(v / n)).collect();
            vec![SymMatrix::from_diagonal(&d); g]
        }
        CovarianceModel::VVI => (0..g)
            .map(|k| {
                let d: Vec<f64> = diag_of(&m.scatter[k])
                    .into_iter()
                    .map(|v| clamp(v / m.counts[k]))
                    .collect();
                SymMatrix::from_diagonal(&d)
            })
            .collect(),
        CovarianceModel::EVI => {
            // B_g = diag(W_g)/|diag(W_g)|^{1/p}, λ = Σ_g |diag(W_g)|^{1/p} / n
            let diags: Vec<Vec<f64>> = (0..g)
                .map(|k| {
                    diag_of(&m.scatter[k])
                        .into_iter()
                        .map(|v| v.max(floor * m.counts[k].max(1.0)))
                        .collect()
                })
                .collect();
            let gms: Vec<f64> = diags.iter().map(|d| geometric_mean(d)).collect();
            let lambda = gms.iter().sum::<f64>() / n;
            diags
                .iter()
                .zip(&gms)
                .map(|(d, gm)| {
                    let v: Vec<f64> = d.iter().map(|x| clamp(lambda * x / gm)).collect();
                    SymMatrix::from_diagonal(&v)
                })
                .collect()
        }
        CovarianceModel::VEI => {
            let diags: Vec<Vec<f64>> = (0..g)
                .map(|k| {
                    diag_of(&m.scatter[k])
                        .into_iter()
                        .map(|v| v.max(floor * m.counts[k].max(1.0)))
                        .collect()
                })
                .collect();
            let mut shape = previous_shape(prev, model, p);
            let mut lambdas = vec![1.0; g];
            for _ in 0..inner.max_iter.max(1) {
                for k in 0..g {
                    let s: f64 = diags[k].iter().zip(&shape).map(|(w, b)| w / b).sum();
                    lambdas[k] = s / (p as f64 * m.counts[k]);
                }
                let mut acc = vec![0.0; p];
                for k in 0..g {
                    for (a, w) in acc.iter_mut().zip(&diags[k]) {
                        *a += w / lambdas[k];
                    }
                }
                let gm = geometric_mean(&acc);
                let next: Vec<f64> = acc.iter().map(|a| a / gm).collect();
                let change = next
                    .iter()
                    .zip(&shape)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                shape = next;
                if change < inner.tol {
                    break;
                }
            }
            for k in 0..g {
                let s: f64 = diags[k].iter().zip(&shape).map(|(w, b)| w / b).sum();
                lambdas[k] = s / (p as f64 * m.counts[k]);
            }
            (0..g)
                .map(|k| {
                    let v: Vec<f64> = shape.iter().map(|b| clamp(lambdas[k] * b)).collect();
                    SymMatrix::from_diagonal(&v)
                })
                .collect()
        }
        CovarianceModel::EEE => {
            let mut w = DMatrix::zeros(p, p);
            for s in &m.scatter {
                w += s;
            }
            let cov = SymMatrix::symmetrized(w / n);
            let cov = floor_full(cov, floor, &mut ridged);
            vec![cov; g]
        }
        CovarianceModel::VVV => (0..g)
            .map(|k| {
                let cov = SymMatrix::symmetrized(&m.scatter[k] / m.counts[k]);
                floor_full(cov, floor, &mut ridged)
            })
            .collect(),
        CovarianceModel::EEV | CovarianceModel::VEV => {
            let eigs: Vec<_> = m
                .scatter
                .iter()
                .map(|w| sym_eigen(&SymMatrix::symmetrized(w.clone())))
                .collect::<Result<Vec<_>>>()
                .unwrap_or_else(|_| {
                    (0..g)
                        .map(|_| crate::linalg::EigenPairs {
                            values: vec![f64::NAN; p],
                            vectors: DMatrix::identity(p, p),
                        })
                        .collect()
                });
            let omegas: Vec<Vec<f64>> = eigs
                .iter()
                .zip(&m.counts)
                .map(|(e, c)| {
                    e.values
                        .iter()
                        .map(|v| if v.is_finite() { v.max(floor * c.max(1.0)) } else { floor })
                        .collect()
                })
                .collect();
            if model == CovarianceModel::EEV {
                // Σ_g = L_g diag(Σ_h Ω_h / n) L_gᵀ
                let mut acc = vec![0.0; p];
                for o in &omegas {
                    for (a, v) in acc.iter_mut().zip(o) {
                        *a += v;
                    }
                }
                let vals: Vec<f64> = acc.iter().map(|a| clamp(a / n)).collect();
                eigs.iter().map(|e| from_eigen(&e.vectors, &vals)).collect()
            } else {
                let mut shape = previous_shape(prev, model, p);
                let mut lambdas = vec![1.0; g];
                for _ in 0..inner.max_iter.max(1) {
                    for k in 0..g {
                        let s: f64 = omegas[k].iter().zip(&shape).map(|(w, a)| w / a).sum();
                        lambdas[k] = s / (p as f64 * m.counts[k]);
                    }
                    let mut acc = vec![0.0; p];
                    for k in 0..g {
                        for (a, w) in acc.iter_mut().zip(&omegas[k]) {
                            *a += w / lambdas[k];
                        }
                    }
                    let gm = geometric_mean(&acc);
                    let next: Vec<f64> = acc.iter().map(|a| a / gm).collect();
                    let change = next
                        .iter()
                        .zip(&shape)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    shape = next;
                    if change < inner.tol {
                        break;
                    }
                }
                (0..g)
                    .map(|k| {
                        let s: f64 = omegas[k].iter().zip(&shape).map(|(w, a)| w / a).sum();
                        let lambda = s / (p as f64 * m.counts[k]);
                        let vals: Vec<f64> = shape.iter().map(|a| clamp(lambda * a)).collect();
                        from_eigen(&eigs[k].vectors, &vals)
                    })
                    .collect()
            }
        }
    };
    (covs, ridged)
}

fn floor_full(cov: SymMatrix, floor: f64, ridged: &mut bool) -> SymMatrix {
    // pivots well above the floor are accepted without an eigensolve
    if let Some(ch) = cov.matrix().clone().cholesky() {
        let l = ch.l();
        let min_pivot = (0..cov.order()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e6 * floor {
            return cov;
        }
    }
    match sym_eigen(&cov) {
        Ok(e) => {
            if e.values.iter().all(|&v| v >= floor) {
                return cov;
            }
            *ridged = true;
            e.reconstruct_with(|v| v.max(floor))
        }
        Err(_) => {
            *ridged = true;
            SymMatrix::from_diagonal(&vec![floor; cov.order()])
        }
    }
}

/// Eigenvalue floor for covariances fitted to `rows`.
pub(crate) fn variance_floor(rows: &RowData) -> f64 {
    (1e-8 * rows.total_variance() / rows.p as f64).max(f64::MIN_POSITIVE)
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<SymMatrix>,
}

impl Params {
    fn to_mixture(&self, model: CovarianceModel) -> Result<MixtureModel> {
        let comps = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covs)
            .map(|((w, m), c)| GaussianComponent {
                weight: *w,
                mean: m.clone(),
                covariance: c.clone(),
            })
            .collect();
        MixtureModel::new(model, comps)
    }
}

fn m_step(
    rows: &RowData,
    resp: &[f64],
    g: usize,
    model: CovarianceModel,
    prev: Option<&[SymMatrix]>,
    inner: &InnerSettings,
) -> Result<(Params, bool)> {
    let m = Moments::compute(rows, resp, g);
    if let Some(k) = m.counts.iter().position(|&c| c < EMPTY_COMPONENT_MASS) {
        return Err(Error::Degenerate(format!("component {k} is empty")));
    }
    let (covs, ridged) = constrained_covariances(model, &m, prev, inner);
    let n = rows.n as f64;
    Ok((
        Params {
            weights: m.counts.iter().map(|c| c / n).collect(),
            means: m.means,
            covs,
        },
        ridged,
    ))
}

/// Computes responsibilities in place and returns the log-likelihood.
fn e_step(rows: &RowData, mix: &MixtureModel, resp: &mut [f64]) -> Result<f64> {
    let g = mix.n_components();
    let factors = mix.factors()?;
    let mut scratch = vec![0.0; rows.p];
    let mut ll = 0.0;
    for i in 0..rows.n {
        let x = rows.row(i);
        let out = &mut resp[i * g..(i + 1) * g];
        for (k, (c, f)) in mix.components.iter().zip(factors).enumerate() {
            out[k] = f.log_weight + f.log_pdf(x, &c.mean, &mut scratch);
        }
        let lse = log_sum_exp(out);
        if !lse.is_finite() {
            return Err(Error::Degenerate("non-finite log-likelihood".into()));
        }
        ll += lse;
        out.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    Ok(ll)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hard k-means partition. `farthest` selects farthest-point seeding, otherwise
/// D²-weighted sampling.
fn kmeans_labels(rows: &RowData, g: usize, rng: &mut ChaCha8Rng, farthest: bool) -> Vec<usize> {
    let n = rows.n;
    let mut centers: Vec<Vec<f64>> = vec![rows.row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(rows.row(i), &centers[0])).collect();
    while centers.len() < g {
        let next = if farthest {
            (0..n).max_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap_or(0)
        } else {
            let total: f64 = dist.iter().sum();
            if total <= 0.0 {
                rng.random_range(0..n)
            } else {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, d) in dist.iter().enumerate() {
                    if u < *d {
                        pick = i;
                        break;
                    }
                    u -= d;
                }
                pick
            }
        };
        centers.push(rows.row(next).to_vec());
        let c = centers.last().unwrap();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(rows.row(i), c));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..25 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let x = rows.row(i);
            let best = (0..g)
                .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
                .unwrap_or(0);
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; rows.p]; g];
        let mut counts = vec![0usize; g];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(rows.row(i)) {
                *s += v;
            }
        }
        for k in 0..g {
            if counts[k] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(rows.row(a), &centers[labels[a]])
                            .total_cmp(&sq_dist(rows.row(b), &centers[labels[b]]))
                    })
                    .unwrap_or(0);
                centers[k] = rows.row(far).to_vec();
                labels[far] = k;
                changed = true;
            } else {
                centers[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn single_start(
    rows: &RowData,
    g: usize,
    model: CovarianceModel,
    cfg: &EmConfig,
    init: &[usize],
    floor: f64,
) -> Result<FitResult> {
    let inner = InnerSettings {
        max_iter: cfg.inner_max_iter,
        tol: cfg.inner_tol,
        floor,
    };
    let mut resp = vec![0.0; rows.n * g];
    for (i, &l) in init.iter().enumerate() {
        resp[i * g + l] = 1.0;
    }
    let (mut params, mut ridged) = m_step(rows, &resp, g, model, None, &inner)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mix = params.to_mixture(model)?;
        let ll = e_step(rows, &mix, &mut resp).map_err(|e| match e {
            Error::NotPositiveDefinite => Error::Degenerate("covariance lost positive definiteness".into()),
            other => other,
        })?;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= cfg.tol * ll.abs().max(1.0) {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations >= cfg.max_iter || g == 1 && iterations >= 1 && !model_needs_inner(model) {
            converged = converged || g == 1;
            let n_params = n_params(model, rows.p, g)?;
            return Ok(FitResult {
                bic: bic(ll, n_params, rows.n),
                model: mix,
                loglik: ll,
                n_params,
                iterations,
                converged,
                ridged,
                loglik_trace: trace,
            });
        }
        let (next, r) = m_step(rows, &resp, g, model, Some(&params.covs), &inner)?;
        ridged |= r;
        params = next;
        iterations += 1;
    }
}

fn model_needs_inner(model: CovarianceModel) -> bool {
    matches!(model, CovarianceModel::VEI | CovarianceModel::VEV)
}

/// Fits a `g`-component mixture under `model` by EM from `cfg.n_starts`
/// k-means initializations and returns the start with the highest log-likelihood.
///
/// Rows of `data` are observations.
pub fn em_fit(data: &DMatrix<f64>, g: usize, model: CovarianceModel, cfg: &EmConfig) -> Result<FitResult> {
    let rows = RowData::from_matrix(data);
    em_fit_rows(&rows, g, model, cfg)
}

pub(crate) fn em_fit_rows(rows: &RowData, g: usize, model: CovarianceModel, cfg: &EmConfig) -> Result<FitResult> {
    model.check_dim(rows.p)?;
    if g == 0 {
        return Err(Error::InvalidInput("component count must be positive".into()));
    }
    if rows.n <= g {
        return Err(Error::InvalidInput(format!(
            "need more observations ({}) than components ({g})",
            rows.n
        )));
    }
    if rows.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data has non-finite entries".into()));
    }
    let floor = variance_floor(rows);

    if g == 1 {
        return single_start(rows, 1, model, cfg, &vec![0; rows.n], floor);
    }

    let wanted = cfg.n_starts.max(1);
    let mut best: Option<FitResult> = None;
    let mut successes = 0;
    let mut last_err = None;
    for attempt in 0..wanted * 3 {
        if successes == wanted {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let init = kmeans_labels(rows, g, &mut rng, attempt == 0);
        match single_start(rows, g, model, cfg, &init, floor) {
            Ok(fit) => {
                successes += 1;
                if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| {
        Error::Degenerate(format!(
            "all EM starts degenerate for {model} with G={g}: {}",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))
    })
}

/// Checks that a covariance set obeys `model`'s equal/variable volume, shape
/// and orientation constraints within relative tolerance `tol`.
pub fn satisfies_constraint(covs: &[SymMatrix], model: CovarianceModel, tol: f64) -> bool {
    let Some(first) = covs.first() else {
        return true;
    };
    let p = first.order();
    let scale = covs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let close = |a: f64, b: f64, s: f64| (a - b).abs() <= tol * s.max(f64::MIN_POSITIVE);

    if model.diagonal() {
        for c in covs {
            for i in 0..p {
                for j in 0..p {
                    if i != j && c.get(i, j).abs() > tol * scale {
                        return false;
                    }
                }
            }
        }
    }
    if model.common_covariance() {
        return covs
            .iter()
            .all(|c| c.sub(first).norm() <= tol * scale);
    }
    let volumes: Vec<f64> = covs.iter().map(|c| geometric_mean(&spectrum(c))).collect();
    if model.equal_volume() && !volumes.iter().all(|v| close(*v, volumes[0], volumes[0])) {
        return false;
    }
    match model {
        CovarianceModel::V | CovarianceModel::VII => covs.iter().all(|c| {
            let d = c.diagonal();
            d.iter().all(|v| close(*v, d[0], d[0]))
        }),
        CovarianceModel::VEI | CovarianceModel::EVI | CovarianceModel::VVI => {
            if model == CovarianceModel::VEI {
                let shapes: Vec<Vec<f64>> = covs
                    .iter()
                    .zip(&volumes)
                    .map(|(c, v)| c.diagonal().iter().map(|d| d / v).collect())
                    .collect();
                shapes
                    .iter()
                    .all(|s| s.iter().zip(&shapes[0]).all(|(a, b)| close(*a, *b, b.abs().max(1.0))))
            } else {
                true
            }
        }
        CovarianceModel::EEV | CovarianceModel::VEV => {
            let shapes: Vec<Vec<f64>> = covs
                .iter()
                .zip(&volumes)
                .map(|(c, v)| spectrum(c).iter().map(|d| d / v).collect())
                .collect();
            shapes
                .iter()
                .all(|s| s.iter().zip(&shapes[0]).all(|(a, b)| close(*a, *b, b.abs().max(1.0))))
        }
        _ => true,
    }
}

fn spectrum(c: &SymMatrix) -> Vec<f64> {
    sym_eigen(c).map(|e| e.values).unwrap_or_else(|_| c.diagonal())
}
