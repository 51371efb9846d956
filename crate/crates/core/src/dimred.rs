//! Dimension reduction for mixture classifiers.
//!
//! The basis solves `M β = l Σ_X β` with `βᵀ Σ_X β = I`, where the kernel
//! blends a location term built from the spread of the class-component means
//! and a dispersion term built from the spread of the class-component
//! covariances:
//!
//! ```text
//! M(λ) = 2λ · M_loc Σ_X⁻¹ M_loc + 2(1 − λ) · M_disp
//! ```
//!
//! At `λ = 0.5` this is the unweighted sum of the two terms. SIR, SAVE and LDA
//! canonical directions are provided as reference methods.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{encode_labels, Family, MixtureClassifier};
use crate::error::{Error, Result};
use crate::gmm::{em_fit, CovarianceModel, EmConfig, GaussianComponent, MixtureModel};
use crate::linalg::{generalized_eigen, generalized_eigen_whitened, inv_sqrt, sym_eigen, SymMatrix};
use crate::seed::derive_seed;

pub const BASIS_SCHEMA: &str = "mixdr.basis/v1";

/// How the marginal covariance is estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalCovariance {
    #[default]
    Full,
    /// Per-feature variances only, for `p` close to or above `n`.
    Diagonal,
}

/// One class-component with its overall weight `π_k · π_gk`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedComponent {
    pub class: usize,
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
}

/// The two kernel ingredients plus everything needed to recombine them.
#[derive(Debug, Clone)]
pub struct KernelParts {
    /// `Σ ω (μ_gk − μ)(μ_gk − μ)ᵀ`
    pub location: SymMatrix,
    /// `Σ ω (Σ_gk − Σ̄) Σ_X⁻¹ (Σ_gk − Σ̄)`
    pub dispersion: SymMatrix,
    pub marginal_cov: SymMatrix,
    /// `Σ̄ = Σ ω Σ_gk`
    pub pooled_cov: SymMatrix,
    pub mean: Vec<f64>,
    pub components: Vec<WeightedComponent>,
    marginal_inv: SymMatrix,
    marginal_inv_sqrt: SymMatrix,
}

/// Column means and the `1/n` covariance of the rows of `data`.
pub fn marginal_moments(data: &DMatrix<f64>) -> Result<(Vec<f64>, SymMatrix)> {
    let (n, p) = data.shape();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("empty data matrix".into()));
    }
    let mean: Vec<f64> = (0..p).map(|j| data.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| data[(i, j)] - mean[j]);
    let cov = SymMatrix::new(centered.transpose() * &centered / n as f64)?;
    Ok((mean, cov))
}

impl KernelParts {
    /// Population entry point: explicit weighted components and marginal covariance.
    pub fn from_components(components: Vec<WeightedComponent>, marginal_cov: SymMatrix) -> Result<KernelParts> {
        let p = marginal_cov.order();
        if components.is_empty() {
            return Err(Error::InvalidInput("no components".into()));
        }
        for c in &components {
            if c.mean.len() != p || c.covariance.order() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: c.mean.len(),
                });
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "component weights must be positive and sum to 1, got sum {total}"
            )));
        }
        let marginal_inv = marginal_cov.inverse()?;
        let marginal_inv_sqrt = inv_sqrt(&marginal_cov, 0.0)?;

        let mut mean = vec![0.0; p];
        for c in &components {
            for (m, v) in mean.iter_mut().zip(&c.mean) {
                *m += c.weight * v;
            }
        }
        let mut location = DMatrix::zeros(p, p);
        let mut pooled = DMatrix::zeros(p, p);
        for c in &components {
            let d = nalgebra::DVector::from_iterator(p, c.mean.iter().zip(&mean).map(|(a, b)| a - b));
            location += c.weight * &d * d.transpose();
            pooled += c.weight * c.covariance.matrix();
        }
        let pooled_cov = SymMatrix::new(pooled)?;
        let mut dispersion = DMatrix::zeros(p, p);
        for c in &components {
            let diff = c.covariance.sub(&pooled_cov);
            dispersion += c.weight * marginal_inv.sandwich(&diff).into_matrix();
        }
        Ok(KernelParts {
            location: SymMatrix::new(location)?,
            dispersion: SymMatrix::new(dispersion)?,
            marginal_cov,
            pooled_cov,
            mean,
            components,
            marginal_inv,
            marginal_inv_sqrt,
        })
    }

    /// Kernel ingredients from a fitted classifier, with `Σ_X` estimated on `data`.
    pub fn from_classifier(c: &MixtureClassifier, data: &DMatrix<f64>, mode: MarginalCovariance) -> Result<KernelParts> {
        if data.ncols() != c.dim() {
            return Err(Error::DimensionMismatch {
                expected: c.dim(),
                found: data.ncols(),
            });
        }
        let (_, mut cov) = marginal_moments(data)?;
        if mode == MarginalCovariance::Diagonal {
            cov = SymMatrix::from_diagonal(&cov.diagonal());
        }
        let components = c
            .class_models
            .iter()
            .zip(&c.priors)
            .enumerate()
            .flat_map(|(k, (m, prior))| {
                m.components.iter().map(move |g| WeightedComponent {
                    class: k,
                    weight: prior * g.weight,
                    mean: g.mean.clone(),
                    covariance: g.covariance.clone(),
                })
            })
            .collect();
        KernelParts::from_components(components, cov).map_err(|e| match e {
            Error::Singular { .. } => Error::NotPositiveDefinite,
            other => other,
        })
    }

    pub fn dim(&self) -> usize {
        self.marginal_cov.order()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn marginal_inverse(&self) -> &SymMatrix {
        &self.marginal_inv
    }

    /// `M_loc Σ_X⁻¹ M_loc`
    pub fn location_kernel(&self) -> SymMatrix {
        self.marginal_inv.sandwich(&self.location)
    }

    pub fn kernel(&self, lambda: f64) -> SymMatrix {
        self.location_kernel()
            .scale(2.0 * lambda)
            .add(&self.dispersion.scale(2.0 * (1.0 - lambda)))
    }
}

/// Directions from one of the reference methods.
#[derive(Debug, Clone)]
pub struct Directions {
    /// `p × d`, columns ordered by eigenvalue.
    pub beta: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DimRedBasis {
    pub lambda: f64,
    /// `p × d`
    pub beta: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Share of each eigenvalue coming from the location term.
    pub loc_part: Vec<f64>,
    /// Share of each eigenvalue coming from the dispersion term.
    pub disp_part: Vec<f64>,
    /// Centering vector used by [`project`] when asked to center.
    pub mean: Vec<f64>,
}

impl DimRedBasis {
    pub fn d(&self) -> usize {
        self.beta.ncols()
    }

    pub fn dim(&self) -> usize {
        self.beta.nrows()
    }

    pub fn direction(&self, j: usize) -> Vec<f64> {
        self.beta.column(j).iter().copied().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BasisDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<DimRedBasis> {
        serde_json::from_str::<BasisDocument>(s)?.try_into()
    }
}

/// JSON form of a basis; `beta` is stored as `p` rows of `d` coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisDocument {
    pub schema: String,
    pub lambda: f64,
    pub d: usize,
    pub eigenvalues: Vec<f64>,
    pub loc_part: Vec<f64>,
    pub disp_part: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl From<&DimRedBasis> for BasisDocument {
    fn from(b: &DimRedBasis) -> Self {
        BasisDocument {
            schema: BASIS_SCHEMA.into(),
            lambda: b.lambda,
            d: b.d(),
            eigenvalues: b.eigenvalues.clone(),
            loc_part: b.loc_part.clone(),
            disp_part: b.disp_part.clone(),
            beta: b.beta.row_iter().map(|r| r.iter().copied().collect()).collect(),
            mean: b.mean.clone(),
        }
    }
}

impl TryFrom<BasisDocument> for DimRedBasis {
    type Error = Error;

    fn try_from(doc: BasisDocument) -> Result<Self> {
        let p = doc.beta.len();
        if p == 0 || doc.beta.iter().any(|r| r.len() != doc.d) {
            return Err(Error::InvalidInput(format!("beta must be p rows of {} coefficients", doc.d)));
        }
        if doc.eigenvalues.len() != doc.d || doc.loc_part.len() != doc.d || doc.disp_part.len() != doc.d {
            return Err(Error::InvalidInput("per-direction lists must have length d".into()));
        }
        if doc.mean.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: doc.mean.len(),
            });
        }
        Ok(DimRedBasis {
            lambda: doc.lambda,
            beta: DMatrix::from_fn(p, doc.d, |i, j| doc.beta[i][j]),
            eigenvalues: doc.eigenvalues,
            loc_part: doc.loc_part,
            disp_part: doc.disp_part,
            mean: doc.mean,
        })
    }
}

/// Flips each column so that its largest-magnitude coefficient is positive.
fn orient_columns(beta: &mut DMatrix<f64>) {
    for mut col in beta.column_iter_mut() {
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
}

fn quad(m: &SymMatrix, v: &[f64]) -> f64 {
    let x = nalgebra::DVector::from_column_slice(v);
    (x.transpose() * m.matrix() * &x)[(0, 0)]
}

/// Basis for the blended kernel, truncated to `min(p, Σ G_k − 1)` directions.
pub fn gmmdrc(parts: &KernelParts, lambda: f64) -> Result<DimRedBasis> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let p = parts.dim();
    let d = p.min(parts.n_components().saturating_sub(1));
    if d == 0 {
        return Err(Error::Contract("a single component spans no directions".into()));
    }
    let loc = parts.location_kernel().scale(2.0 * lambda);
    let disp = parts.dispersion.scale(2.0 * (1.0 - lambda));
    let ge = generalized_eigen_whitened(&loc.add(&disp), &parts.marginal_inv_sqrt)?;
    let mut beta = ge.basis.columns(0, d).into_owned();
    orient_columns(&mut beta);
    let mut loc_part = Vec::with_capacity(d);
    let mut disp_part = Vec::with_capacity(d);
    for j in 0..d {
        let b: Vec<f64> = beta.column(j).iter().copied().collect();
        loc_part.push(quad(&loc, &b));
        disp_part.push(quad(&disp, &b));
    }
    Ok(DimRedBasis {
        lambda,
        beta,
        eigenvalues: ge.values[..d].to_vec(),
        loc_part,
        disp_part,
        mean: parts.mean.clone(),
    })
}

/// Per-direction split of the eigenvalues of the unweighted (`λ = 0.5`) kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenTerms {
    /// `β_jᵀ M_loc Σ_X⁻¹ M_loc β_j`
    pub location: Vec<f64>,
    /// `β_jᵀ M_disp β_j`
    pub dispersion: Vec<f64>,
    /// `Var(E(β_jᵀx | Y))²` from the model parameters.
    pub location_moment: Vec<f64>,
    /// `Σ ω (β_jᵀ (Σ_gk − Σ̄) β_j)²`
    pub dispersion_moment: Vec<f64>,
}

/// `location_j + dispersion_j = l_j` holds exactly. The projected-moment
/// columns match them only when `β_j` is also an eigenvector of each term.
pub fn eigen_decomposition_terms(basis: &DimRedBasis, parts: &KernelParts) -> Result<EigenTerms> {
    if (basis.lambda - 0.5).abs() > 1e-12 {
        return Err(Error::Contract(format!(
            "eigenvalue decomposition needs the unweighted kernel (lambda = 0.5), got {}",
            basis.lambda
        )));
    }
    if basis.dim() != parts.dim() {
        return Err(Error::DimensionMismatch {
            expected: parts.dim(),
            found: basis.dim(),
        });
    }
    let loc_kernel = parts.location_kernel();
    let mut terms = EigenTerms {
        location: Vec::new(),
        dispersion: Vec::new(),
        location_moment: Vec::new(),
        dispersion_moment: Vec::new(),
    };
    for j in 0..basis.d() {
        let b = basis.direction(j);
        terms.location.push(quad(&loc_kernel, &b));
        terms.dispersion.push(quad(&parts.dispersion, &b));
        let centre: f64 = b.iter().zip(&parts.mean).map(|(x, m)| x * m).sum();
        let between: f64 = parts
            .components
            .iter()
            .map(|c| {
                let proj: f64 = b.iter().zip(&c.mean).map(|(x, m)| x * m).sum();
                c.weight * (proj - centre).powi(2)
            })
            .sum();
        terms.location_moment.push(between * between);
        let pooled = quad(&parts.pooled_cov, &b);
        terms.dispersion_moment.push(
            parts
                .components
                .iter()
                .map(|c| c.weight * (quad(&c.covariance, &b) - pooled).powi(2))
                .sum(),
        );
    }
    Ok(terms)
}

/// `z_i = βᵀ x_i`, optionally after centering at the basis mean.
pub fn project(basis: &DimRedBasis, data: &DMatrix<f64>, centered: bool) -> Result<DMatrix<f64>> {
    if data.ncols() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: data.ncols(),
        });
    }
    if centered {
        let shifted = DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)] - basis.mean[j]);
        Ok(shifted * &basis.beta)
    } else {
        Ok(data * &basis.beta)
    }
}

fn pooled_model(c: &MixtureClassifier) -> CovarianceModel {
    let first = c.class_models[0].model;
    if c.family == Family::Edda || c.class_models.iter().all(|m| m.model == first) {
        first
    } else {
        CovarianceModel::VVV
    }
}

/// `2 (L_labelled − L_pooled)` on the first `d_eval` projected coordinates.
///
/// `L_labelled` refits the classifier's structure class by class on the
/// projection and sums class-conditional log-likelihoods. `L_pooled` is a
/// single mixture with `Σ G_k` components fitted ignoring labels.
pub fn lr_criterion(
    data: &DMatrix<f64>,
    class_idx: &[usize],
    basis: &DimRedBasis,
    c: &MixtureClassifier,
    d_eval: usize,
    em: &EmConfig,
) -> Result<f64> {
    if d_eval == 0 || d_eval > basis.d() {
        return Err(Error::InvalidInput(format!(
            "d_eval must lie in 1..={}, got {d_eval}",
            basis.d()
        )));
    }
    let z = project(basis, data, false)?.columns(0, d_eval).into_owned();
    let labelled = c.refit_structure(&z, class_idx, em)?;
    let l1 = labelled.labelled_loglik(&z, class_idx)?;

    let model = pooled_model(c).for_dimension(d_eval);
    let cfg = EmConfig {
        seed: derive_seed(em.seed, "pooled"),
        ..em.clone()
    };
    let fitted = em_fit(&z, c.total_components(), model, &cfg).map(|f| f.loglik);
    // the labelled fit, read as one mixture, is itself a candidate when it obeys the pooled constraint
    let feasible = if c.family == Family::Edda || model == CovarianceModel::VVV.for_dimension(d_eval) {
        let comps = labelled
            .class_models
            .iter()
            .zip(&labelled.priors)
            .flat_map(|(m, prior)| {
                m.components.iter().map(move |g| GaussianComponent {
                    weight: prior * g.weight,
                    ..g.clone()
                })
            })
            .collect();
        MixtureModel::new(model, comps).and_then(|m| m.loglik(&z)).ok()
    } else {
        None
    };
    let l0 = match (fitted, feasible) {
        (Ok(a), Some(b)) => a.max(b),
        (Ok(a), None) => a,
        (Err(_), Some(b)) => b,
        (Err(e), None) => return Err(e),
    };
    let lr = 2.0 * (l1 - l0);
    if !lr.is_finite() {
        return Err(Error::Degenerate("likelihood ratio is not finite".into()));
    }
    Ok(lr)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrTrace {
    pub grid: Vec<f64>,
    pub lr_values: Vec<f64>,
    pub argmax_lambda: f64,
}

/// `{0, 0.05, …, 1}`
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Relative gap under which two LR values count as tied.
pub const LR_TIE_TOL: f64 = 1e-6;

/// Scores every grid value with [`lr_criterion`]; ties go to the larger λ.
pub fn tune_lambda(
    parts: &KernelParts,
    data: &DMatrix<f64>,
    class_idx: &[usize],
    c: &MixtureClassifier,
    grid: &[f64],
    d_eval: usize,
    em: &EmConfig,
) -> Result<LrTrace> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidInput(format!("lambda {l} outside [0, 1]")));
    }
    let lr_values = grid
        .par_iter()
        .map(|&l| gmmdrc(parts, l).and_then(|b| lr_criterion(data, class_idx, &b, c, d_eval, em)))
        .collect::<Result<Vec<_>>>()?;
    let top = lr_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = LR_TIE_TOL * top.abs().max(1.0);
    let mut best = None;
    for (i, &l) in grid.iter().enumerate() {
        if top - lr_values[i] <= tol && best.is_none_or(|b: usize| l > grid[b]) {
            best = Some(i);
        }
    }
    let best = best.expect("grid is nonempty");
    Ok(LrTrace {
        grid: grid.to_vec(),
        argmax_lambda: grid[best],
        lr_values,
    })
}

/// Sample class moments with class-frequency priors and `1/n_k` covariances.
#[derive(Debug, Clone)]
pub struct ClassMoments {
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<SymMatrix>,
    pub marginal_mean: Vec<f64>,
    pub marginal_cov: SymMatrix,
}

impl ClassMoments {
    pub fn compute(data: &DMatrix<f64>, labels: &[String]) -> Result<ClassMoments> {
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                found: labels.len(),
            });
        }
        let (classes, idx) = encode_labels(labels);
        let (marginal_mean, marginal_cov) = marginal_moments(data)?;
        let p = data.ncols();
        let n = data.nrows() as f64;
        let mut priors = Vec::new();
        let mut means = Vec::new();
        let mut covariances = Vec::new();
        for k in 0..classes.len() {
            let rows: Vec<usize> = (0..idx.len()).filter(|&i| idx[i] == k).collect();
            let sub = DMatrix::from_fn(rows.len(), p, |i, j| data[(rows[i], j)]);
            let (m, s) = marginal_moments(&sub)?;
            priors.push(rows.len() as f64 / n);
            means.push(m);
            covariances.push(s);
        }
        Ok(ClassMoments {
            classes,
            priors,
            means,
            covariances,
            marginal_mean,
            marginal_cov,
        })
    }

    /// `Σ π_k (μ_k − μ)(μ_k − μ)ᵀ`
    pub fn between(&self) -> SymMatrix {
        let p = self.marginal_mean.len();
        let mut b = DMatrix::zeros(p, p);
        for (prior, m) in self.priors.iter().zip(&self.means) {
            let d = nalgebra::DVector::from_iterator(p, m.iter().zip(&self.marginal_mean).map(|(a, c)| a - c));
            b += *prior * &d * d.transpose();
        }
        SymMatrix::new(b).expect("square")
    }

    /// `Σ π_k Σ_k`
    pub fn within(&self) -> SymMatrix {
        let p = self.marginal_mean.len();
        let mut w = SymMatrix::zeros(p);
        for (prior, s) in self.priors.iter().zip(&self.covariances) {
            w = w.add(&s.scale(*prior));
        }
        w
    }

    /// One component per class carrying the class moments. With `pooled`, every
    /// class gets the within-class covariance.
    pub fn kernel_parts(&self, pooled: bool) -> Result<KernelParts> {
        let within = self.within();
        let comps = (0..self.classes.len())
            .map(|k| WeightedComponent {
                class: k,
                weight: self.priors[k],
                mean: self.means[k].clone(),
                covariance: if pooled { within.clone() } else { self.covariances[k].clone() },
            })
            .collect();
        KernelParts::from_components(comps, self.marginal_cov.clone())
    }

    /// `Σ π_k (I − Σ_X^{-1/2} Σ_k Σ_X^{-1/2})²`
    pub fn save_kernel(&self) -> Result<SymMatrix> {
        let p = self.marginal_mean.len();
        let w = inv_sqrt(&self.marginal_cov, 0.0)?;
        let mut m = SymMatrix::zeros(p);
        for (prior, s) in self.priors.iter().zip(&self.covariances) {
            let a = SymMatrix::identity(p).sub(&s.sandwich(&w));
            m = m.add(&SymMatrix::new(a.matrix() * a.matrix())?.scale(*prior));
        }
        Ok(m)
    }
}

fn truncate(beta: &DMatrix<f64>, values: &[f64], d: usize) -> Directions {
    let mut beta = beta.columns(0, d).into_owned();
    orient_columns(&mut beta);
    Directions {
        beta,
        eigenvalues: values[..d].to_vec(),
    }
}

/// Canonical discriminant directions: `Σ_B β = l Σ_W β`.
pub fn lda_canonical(data: &DMatrix<f64>, labels: &[String]) -> Result<Directions> {
    let cm = ClassMoments::compute(data, labels)?;
    let ge = generalized_eigen(&cm.between(), &cm.within())?;
    let d = data.ncols().min(cm.classes.len().saturating_sub(1));
    Ok(truncate(&ge.basis, &ge.values, d))
}

/// Sliced inverse regression with classes as slices: `Σ_B β = l Σ_X β`.
pub fn sir_directions(data: &DMatrix<f64>, labels: &[String]) -> Result<Directions> {
    let cm = ClassMoments::compute(data, labels)?;
    let ge = generalized_eigen(&cm.between(), &cm.marginal_cov)?;
    let d = data.ncols().min(cm.classes.len().saturating_sub(1));
    Ok(truncate(&ge.basis, &ge.values, d))
}

/// Sliced average variance estimation with classes as slices. All `p`
/// directions are returned.
pub fn save_directions(data: &DMatrix<f64>, labels: &[String]) -> Result<Directions> {
    let cm = ClassMoments::compute(data, labels)?;
    let w = inv_sqrt(&cm.marginal_cov, 0.0).map_err(|_| Error::NotPositiveDefinite)?;
    let eig = sym_eigen(&cm.save_kernel()?)?;
    let beta = w.matrix() * &eig.vectors;
    Ok(truncate(&beta, &eig.values, data.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{fit_edda, ClassifierConfig};
    use crate::linalg::principal_angle;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn z(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn comp(class: usize, weight: f64, mean: Vec<f64>, cov: SymMatrix) -> WeightedComponent {
        WeightedComponent {
            class,
            weight,
            mean,
            covariance: cov,
        }
    }

    fn labelled(n: usize, p: usize, k: usize, seed: u64) -> (DMatrix<f64>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts: Vec<Vec<f64>> = (0..k).map(|_| (0..p).map(|_| 2.0 * z(&mut rng)).collect()).collect();
        let scales: Vec<Vec<f64>> = (0..k).map(|_| (0..p).map(|_| 0.5 + z(&mut rng).abs()).collect()).collect();
        let mut x = DMatrix::zeros(n, p);
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % k;
            for j in 0..p {
                x[(i, j)] = shifts[c][j] + scales[c][j] * z(&mut rng);
            }
            y.push(format!("c{c}"));
        }
        // mix coordinates so covariances are not diagonal
        let mix = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.3 * z(&mut rng) });
        (x * mix, y)
    }

    #[test]
    fn single_component_has_null_kernels() {
        let parts = KernelParts::from_components(
            vec![comp(0, 1.0, vec![1.0, 2.0], SymMatrix::identity(2))],
            SymMatrix::identity(2),
        )
        .unwrap();
        assert_eq!(parts.location.norm(), 0.0);
        assert_eq!(parts.dispersion.norm(), 0.0);
        assert!(matches!(gmmdrc(&parts, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn symmetric_pair_location_matrix() {
        let parts = KernelParts::from_components(
            vec![
                comp(0, 0.5, vec![1.0, 0.0], SymMatrix::identity(2)),
                comp(1, 0.5, vec![-1.0, 0.0], SymMatrix::identity(2)),
            ],
            SymMatrix::from_diagonal(&[2.0, 1.0]),
        )
        .unwrap();
        let expect = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(parts.location.sub(&expect).norm() < 1e-15);
        assert!(parts.dispersion.norm() < 1e-15);
    }

    #[test]
    fn equal_covariance_fits_have_no_dispersion_term() {
        let (x, y) = labelled(300, 3, 3, 1);
        for model in [CovarianceModel::EEE, CovarianceModel::EEI, CovarianceModel::EII] {
            let c = fit_edda(&x, &y, &[model], &ClassifierConfig::default()).unwrap().classifier;
            let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
            assert!(parts.dispersion.norm() < 1e-10 * parts.marginal_cov.norm(), "{model}");
        }
    }

    #[test]
    fn unit_blend_matches_location_only_problem() {
        let (x, y) = labelled(300, 4, 3, 2);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let b = gmmdrc(&parts, 1.0).unwrap();
        let direct = generalized_eigen(&parts.location_kernel(), &parts.marginal_cov).unwrap();
        let angle = principal_angle(&b.beta, &direct.basis.columns(0, b.d()).into_owned(), None).unwrap();
        assert!(angle < 1e-8, "{angle}");
    }

    #[test]
    fn half_blend_is_the_plain_sum() {
        let (x, y) = labelled(200, 3, 2, 3);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let plain = parts.location_kernel().add(&parts.dispersion);
        assert!(parts.kernel(0.5).sub(&plain).norm() <= 1e-15 * plain.norm());
    }

    #[test]
    fn basis_is_marginally_orthonormal_and_sorted() {
        let (x, y) = labelled(400, 5, 4, 4);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        for lambda in [0.0, 0.3, 0.5, 1.0] {
            let b = gmmdrc(&parts, lambda).unwrap();
            assert_eq!(b.d(), 3);
            let gram = parts.marginal_cov.congruence(&b.beta);
            assert!(gram.sub(&SymMatrix::identity(3)).norm() < 1e-8);
            assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            for j in 0..b.d() {
                assert_abs_diff_eq!(b.loc_part[j] + b.disp_part[j], b.eigenvalues[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn decomposition_requires_half_blend() {
        let (x, y) = labelled(200, 3, 2, 5);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let b = gmmdrc(&parts, 0.8).unwrap();
        assert!(matches!(eigen_decomposition_terms(&b, &parts), Err(Error::Contract(_))));
    }

    #[test]
    fn variance_only_difference_is_all_dispersion() {
        let parts = KernelParts::from_components(
            vec![
                comp(0, 0.5, vec![0.0], SymMatrix::from_diagonal(&[1.0])),
                comp(1, 0.5, vec![0.0], SymMatrix::from_diagonal(&[4.0])),
            ],
            SymMatrix::from_diagonal(&[2.5]),
        )
        .unwrap();
        let b = gmmdrc(&parts, 0.5).unwrap();
        let t = eigen_decomposition_terms(&b, &parts).unwrap();
        assert_eq!(t.location[0], 0.0);
        assert_abs_diff_eq!(t.dispersion[0], b.eigenvalues[0], epsilon = 1e-15);
        // in one dimension the projected moments are exact too
        assert_abs_diff_eq!(t.dispersion_moment[0], b.eigenvalues[0], epsilon = 1e-12);
    }

    #[test]
    fn hand_built_two_dimensional_decomposition() {
        // means differ along x, variances along y; both terms are diagonal
        let parts = KernelParts::from_components(
            vec![
                comp(0, 0.5, vec![-1.0, 0.0], SymMatrix::from_diagonal(&[1.0, 1.0])),
                comp(1, 0.5, vec![1.0, 0.0], SymMatrix::from_diagonal(&[1.0, 9.0])),
            ],
            SymMatrix::from_diagonal(&[2.0, 5.0]),
        )
        .unwrap();
        let b = gmmdrc(&parts, 0.5).unwrap();
        let t = eigen_decomposition_terms(&b, &parts).unwrap();
        // by hand: location along x is (1/2)² = 0.25, dispersion along y is (4/5)² = 0.64
        assert_abs_diff_eq!(b.eigenvalues[0], 0.64, epsilon = 1e-12);
        let whole = generalized_eigen(&parts.kernel(0.5), &parts.marginal_cov).unwrap();
        assert_abs_diff_eq!(whole.values[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(t.location[0] + t.dispersion[0], b.eigenvalues[0], epsilon = 1e-12);
        assert_abs_diff_eq!(t.dispersion_moment[0], 0.64, epsilon = 1e-12);
    }

    #[test]
    fn projection_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5]);
        let mut b = DimRedBasis {
            lambda: 0.5,
            beta: DMatrix::identity(2, 2),
            eigenvalues: vec![1.0, 0.5],
            loc_part: vec![1.0, 0.5],
            disp_part: vec![0.0, 0.0],
            mean: vec![1.0, 1.0],
        };
        assert_eq!(project(&b, &x, false).unwrap(), x);
        b.beta = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let z1 = project(&b, &x, false).unwrap();
        assert_eq!(z1.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, -1.0]);
        let zc = project(&b, &x, true).unwrap();
        assert_eq!(zc[(0, 0)], 0.0);
        assert!(matches!(
            project(&b, &DMatrix::zeros(2, 3), false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projected_coordinates_have_unit_variance() {
        let (x, y) = labelled(500, 4, 3, 6);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let b = gmmdrc(&parts, 0.5).unwrap();
        let zm = project(&b, &x, true).unwrap();
        let (_, cov) = marginal_moments(&zm).unwrap();
        assert!(cov.sub(&SymMatrix::identity(b.d())).norm() < 1e-8);
    }

    #[test]
    fn lda_axis_and_collinear_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400;
        let x = DMatrix::from_fn(n, 2, |i, j| z(&mut rng) + if j == 0 && i % 2 == 1 { 3.0 } else { 0.0 });
        let y: Vec<String> = (0..n).map(|i| (i % 2).to_string()).collect();
        let lda = lda_canonical(&x, &y).unwrap();
        let v = lda.beta.column(0);
        assert!(v[0].abs() / v.norm() > 0.99);

        let x = DMatrix::from_fn(n, 3, |i, j| z(&mut rng) + (i % 3) as f64 * [1.0, 2.0, -1.0][j]);
        let y: Vec<String> = (0..n).map(|i| (i % 3).to_string()).collect();
        let cm = ClassMoments::compute(&x, &y).unwrap();
        let ge = generalized_eigen(&cm.between(), &cm.within()).unwrap();
        let nonzero = ge.values.iter().filter(|v| **v > 1e-3 * ge.values[0]).count();
        // sample means are not exactly collinear, but the second root is tiny
        assert!(nonzero <= 2);
        assert!(ge.values[1] < 0.05 * ge.values[0]);
    }

    #[test]
    fn save_vanishes_without_class_differences() {
        // two copies of one sample: identical class moments, equal to the marginal ones
        let (x, _) = labelled(100, 3, 1, 8);
        let both = DMatrix::from_fn(200, 3, |i, j| x[(i % 100, j)]);
        let y: Vec<String> = (0..200).map(|i| (i / 100).to_string()).collect();
        let cm = ClassMoments::compute(&both, &y).unwrap();
        assert!(cm.save_kernel().unwrap().norm() < 1e-12);
    }

    #[test]
    fn save_picks_the_variance_discrepancy_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 2000;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let s = match (i % 2, j) {
                (0, _) => 1.0,
                (1, 0) => 1.2,
                _ => 3.0,
            };
            s * z(&mut rng)
        });
        let y: Vec<String> = (0..n).map(|i| (i % 2).to_string()).collect();
        let save = save_directions(&x, &y).unwrap();
        let v = save.beta.column(0);
        assert!(v[1].abs() / v.norm() > 0.95);
    }

    #[test]
    fn basis_json_round_trip() {
        let (x, y) = labelled(200, 3, 3, 10);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let b = gmmdrc(&parts, 0.25).unwrap();
        let back = DimRedBasis::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(back.beta, b.beta);
        assert_eq!(back.eigenvalues, b.eigenvalues);
        assert_eq!(back.mean, b.mean);
    }

    #[test]
    fn columns_are_sign_normalised() {
        let (x, y) = labelled(300, 4, 3, 11);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let b = gmmdrc(&parts, 0.5).unwrap();
        for col in b.beta.column_iter() {
            let max = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn diagonal_marginal_mode_handles_wide_data() {
        let (x, y) = labelled(12, 20, 2, 12);
        let c = fit_edda(&x, &y, &[CovarianceModel::EII], &ClassifierConfig::default()).unwrap().classifier;
        assert!(KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).is_err());
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Diagonal).unwrap();
        let b = gmmdrc(&parts, 0.5).unwrap();
        assert_eq!(b.d(), 1);
    }

    #[test]
    fn singleton_grid_and_grid_validation() {
        let (x, y) = labelled(200, 3, 2, 13);
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let idx = c.class_indices(&y).unwrap();
        let em = EmConfig::default();
        let t = tune_lambda(&parts, &x, &idx, &c, &[0.5], 1, &em).unwrap();
        assert_eq!(t.argmax_lambda, 0.5);
        assert!(tune_lambda(&parts, &x, &idx, &c, &[], 1, &em).is_err());
        assert!(tune_lambda(&parts, &x, &idx, &c, &[1.5], 1, &em).is_err());
    }

    #[test]
    fn mean_only_separation_favours_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 400;
        let x = DMatrix::from_fn(n, 3, |i, j| z(&mut rng) + if j == 0 && i % 2 == 1 { 2.5 } else { 0.0 });
        let y: Vec<String> = (0..n).map(|i| (i % 2).to_string()).collect();
        let c = fit_edda(&x, &y, &[CovarianceModel::EEE], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let idx = c.class_indices(&y).unwrap();
        let t = tune_lambda(&parts, &x, &idx, &c, &default_lambda_grid(), 1, &EmConfig::default()).unwrap();
        assert_eq!(t.argmax_lambda, 1.0, "{:?}", t.lr_values);
    }

    #[test]
    fn variance_only_separation_still_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 400;
        let x = DMatrix::from_fn(n, 3, |i, j| z(&mut rng) * if j == 1 && i % 2 == 1 { 3.0 } else { 1.0 });
        let y: Vec<String> = (0..n).map(|i| (i % 2).to_string()).collect();
        let c = fit_edda(&x, &y, &[CovarianceModel::VVV], &ClassifierConfig::default()).unwrap().classifier;
        let parts = KernelParts::from_classifier(&c, &x, MarginalCovariance::Full).unwrap();
        let idx = c.class_indices(&y).unwrap();
        let t = tune_lambda(&parts, &x, &idx, &c, &default_lambda_grid(), 1, &EmConfig::default()).unwrap();
        assert!(t.lr_values.iter().all(|v| v.is_finite()));
        let low = t.lr_values[0];
        let high = *t.lr_values.last().unwrap();
        assert!(low >= high, "{:?}", t.lr_values);
    }
}
