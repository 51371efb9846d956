//! Mixture discriminant models.
//!
//! Two families share one representation ([`MixtureClassifier`]): EDDA, where
//! every class is a single Gaussian and the classes jointly obey one
//! covariance parametrization, and MclustDA, where each class is its own
//! mixture with its own parametrization and component count.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{
    self, bic, constrained_covariances, em_fit_rows, n_covariance_params, variance_floor, CovarianceModel,
    EmConfig, GaussianComponent, InnerSettings, MixtureModel, Moments, RowData,
};
use crate::linalg::SymMatrix;
use crate::seed::derive_seed;

pub const CLASSIFIER_SCHEMA: &str = "mixdr.classifier/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Edda,
    Mclustda,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edda" => Ok(Family::Edda),
            "mclustda" => Ok(Family::Mclustda),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

/// Sorted distinct class names and per-observation class indices.
///
/// Names that all parse as integers are ordered numerically, otherwise lexically.
pub fn encode_labels(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut names: Vec<String> = labels.to_vec();
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap_or(0));
    }
    let index = labels
        .iter()
        .map(|l| names.binary_search_by(|n| compare_names(n, l, &names)).unwrap_or(0))
        .collect();
    (names, index)
}

fn compare_names(a: &str, b: &str, names: &[String]) -> Ordering {
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        match (a.parse::<i64>(), b.parse::<i64>()) {
            (Ok(x), Ok(y)) => x.cmp(&y),
            _ => a.cmp(b),
        }
    } else {
        a.cmp(b)
    }
}

#[derive(Debug, Clone)]
pub struct MixtureClassifier {
    pub family: Family,
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    pub class_models: Vec<MixtureModel>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Prediction {
    pub posterior: Vec<f64>,
    /// Index into `classes`; ties go to the lowest index.
    pub label: usize,
    /// `1 − max posterior`.
    pub uncertainty: f64,
}

impl MixtureClassifier {
    pub fn new(family: Family, classes: Vec<String>, priors: Vec<f64>, class_models: Vec<MixtureModel>) -> Result<Self> {
        if classes.is_empty() || classes.len() != priors.len() || classes.len() != class_models.len() {
            return Err(Error::InvalidInput(format!(
                "{} classes, {} priors and {} class models do not line up",
                classes.len(),
                priors.len(),
                class_models.len()
            )));
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|p| !(*p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("priors must be positive and sum to 1, got {priors:?}")));
        }
        let p = class_models[0].dim();
        if let Some(m) = class_models.iter().find(|m| m.dim() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: m.dim(),
            });
        }
        if family == Family::Edda && class_models.iter().any(|m| m.n_components() != 1) {
            return Err(Error::InvalidInput("EDDA classes have exactly one component".into()));
        }
        Ok(MixtureClassifier {
            family,
            classes,
            priors,
            class_models,
        })
    }

    pub fn dim(&self) -> usize {
        self.class_models[0].dim()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// `Σ_k G_k`.
    pub fn total_components(&self) -> usize {
        self.class_models.iter().map(|m| m.n_components()).sum()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn class_indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.class_index(l)
                    .ok_or_else(|| Error::InvalidInput(format!("label '{l}' is not a class of the model")))
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let mut lp = Vec::with_capacity(self.n_classes());
        for (prior, m) in self.priors.iter().zip(&self.class_models) {
            lp.push(prior.ln() + m.log_density(x)?);
        }
        Ok(posterior_from_log(&lp))
    }

    pub fn predict_many(&self, data: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.ncols(),
            });
        }
        let rows = RowData::from_matrix(data);
        (0..rows.n).into_par_iter().map(|i| self.predict(rows.row(i))).collect()
    }

    /// Fraction of rows whose predicted class differs from `labels`.
    pub fn error_rate(&self, data: &DMatrix<f64>, labels: &[String]) -> Result<f64> {
        let preds = self.predict_many(data)?;
        let wrong = preds
            .iter()
            .zip(labels)
            .filter(|(p, l)| &self.classes[p.label] != *l)
            .count();
        Ok(wrong as f64 / labels.len().max(1) as f64)
    }

    /// Refits the same family, covariance structure and component counts on new
    /// data (typically a projection), mapping parametrizations to the new
    /// dimension. Priors are kept.
    pub fn refit_structure(&self, data: &DMatrix<f64>, class_idx: &[usize], em: &EmConfig) -> Result<MixtureClassifier> {
        let rows = RowData::from_matrix(data);
        check_groups(&rows, class_idx, self.n_classes())?;
        let p = rows.p;
        let models = match self.family {
            Family::Edda => {
                let model = self.class_models[0].model.for_dimension(p);
                edda_fit_model(&rows, class_idx, self.n_classes(), model)?.models
            }
            Family::Mclustda => self
                .class_models
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let sub = subset_rows(&rows, class_idx, k);
                    let cfg = EmConfig {
                        seed: derive_seed(em.seed, &format!("refit/{k}")),
                        ..em.clone()
                    };
                    em_fit_rows(&sub, m.n_components(), m.model.for_dimension(p), &cfg).map(|f| f.model)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        MixtureClassifier::new(self.family, self.classes.clone(), self.priors.clone(), models)
    }

    /// `Σ_i log f_{y_i}(x_i)`: class-conditional log-likelihood of labelled data.
    pub fn labelled_loglik(&self, data: &DMatrix<f64>, class_idx: &[usize]) -> Result<f64> {
        let rows = RowData::from_matrix(data);
        (0..rows.n)
            .map(|i| self.class_models[class_idx[i]].log_density(rows.row(i)))
            .sum()
    }
}

pub(crate) fn posterior_from_log(lp: &[f64]) -> Prediction {
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = lp.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = post.iter().sum();
    post.iter_mut().for_each(|v| *v /= total);
    let mut label = 0;
    for (k, v) in post.iter().enumerate() {
        if *v > post[label] {
            label = k;
        }
    }
    Prediction {
        uncertainty: 1.0 - post[label],
        label,
        posterior: post,
    }
}

/// One row of the model-selection audit table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRow {
    /// `None` for EDDA, where candidates are scored jointly across classes.
    pub class: Option<String>,
    pub model: CovarianceModel,
    pub g: usize,
    pub loglik: Option<f64>,
    pub n_params: Option<usize>,
    pub bic: Option<f64>,
    pub error: Option<String>,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub classifier: MixtureClassifier,
    pub selection: Vec<SelectionRow>,
    /// Total BIC of the selected classifier.
    pub bic: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub em: EmConfig,
    /// Class priors in class order; sample proportions when absent.
    pub priors: Option<Vec<f64>>,
}

fn check_groups(rows: &RowData, class_idx: &[usize], k: usize) -> Result<Vec<usize>> {
    if class_idx.len() != rows.n {
        return Err(Error::DimensionMismatch {
            expected: rows.n,
            found: class_idx.len(),
        });
    }
    let mut counts = vec![0usize; k];
    for &c in class_idx {
        if c >= k {
            return Err(Error::InvalidInput(format!("class index {c} out of range")));
        }
        counts[c] += 1;
    }
    Ok(counts)
}

fn prepare(data: &DMatrix<f64>, labels: &[String]) -> Result<(RowData, Vec<String>, Vec<usize>, Vec<usize>)> {
    if data.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            found: labels.len(),
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("data has non-finite entries".into()));
    }
    let rows = RowData::from_matrix(data);
    let (classes, idx) = encode_labels(labels);
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    let counts = check_groups(&rows, &idx, classes.len())?;
    if let Some(k) = counts.iter().position(|&c| c < 2) {
        return Err(Error::InvalidInput(format!(
            "class '{}' has {} observation(s); at least 2 required",
            classes[k], counts[k]
        )));
    }
    Ok((rows, classes, idx, counts))
}

fn resolve_priors(cfg: &ClassifierConfig, counts: &[usize]) -> Result<Vec<f64>> {
    match &cfg.priors {
        Some(p) => {
            if p.len() != counts.len() {
                return Err(Error::InvalidInput(format!(
                    "{} priors supplied for {} classes",
                    p.len(),
                    counts.len()
                )));
            }
            Ok(p.clone())
        }
        None => {
            let n: usize = counts.iter().sum();
            Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
        }
    }
}

fn legal_candidates(candidates: &[CovarianceModel], p: usize) -> Result<Vec<CovarianceModel>> {
    let legal: Vec<_> = candidates.iter().copied().filter(|m| m.legal_for(p)).collect();
    if legal.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no candidate covariance model is defined for dimension {p}"
        )));
    }
    Ok(legal)
}

fn subset_rows(rows: &RowData, class_idx: &[usize], k: usize) -> RowData {
    let mut x = Vec::new();
    let mut n = 0;
    for (i, &c) in class_idx.iter().enumerate() {
        if c == k {
            x.extend_from_slice(rows.row(i));
            n += 1;
        }
    }
    RowData { n, p: rows.p, x }
}

struct EddaFit {
    models: Vec<MixtureModel>,
    loglik: f64,
}

/// Classes play the role of components with known memberships: one
/// constrained M-step, with inner iterations run to convergence.
fn edda_fit_model(rows: &RowData, class_idx: &[usize], k: usize, model: CovarianceModel) -> Result<EddaFit> {
    model.check_dim(rows.p)?;
    let mut resp = vec![0.0; rows.n * k];
    for (i, &c) in class_idx.iter().enumerate() {
        resp[i * k + c] = 1.0;
    }
    let moments = Moments::compute(rows, &resp, k);
    let inner = InnerSettings {
        max_iter: 10_000,
        tol: 1e-13,
        floor: variance_floor(rows),
    };
    let (covs, _) = constrained_covariances(model, &moments, None, &inner);
    let models = moments
        .means
        .iter()
        .zip(covs)
        .map(|(mean, cov)| {
            MixtureModel::new(
                model,
                vec![GaussianComponent {
                    weight: 1.0,
                    mean: mean.clone(),
                    covariance: cov,
                }],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loglik = 0.0;
    for i in 0..rows.n {
        loglik += models[class_idx[i]].log_density(rows.row(i)).map_err(|e| match e {
            Error::NotPositiveDefinite => Error::Degenerate(format!("{model} covariance not positive definite")),
            other => other,
        })?;
    }
    if !loglik.is_finite() {
        return Err(Error::Degenerate(format!("{model} log-likelihood is not finite")));
    }
    Ok(EddaFit { models, loglik })
}

/// Orders candidates: larger BIC first, then model name, then smaller G.
fn better(a: (f64, CovarianceModel, usize), b: (f64, CovarianceModel, usize)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.1.name().cmp(b.1.name()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.2 < b.2,
        },
    }
}

/// EDDA: one Gaussian per class, all classes sharing one parametrization; the
/// candidate with the largest BIC wins.
pub fn fit_edda(
    data: &DMatrix<f64>,
    labels: &[String],
    candidates: &[CovarianceModel],
    cfg: &ClassifierConfig,
) -> Result<FitOutcome> {
    let (rows, classes, idx, counts) = prepare(data, labels)?;
    let priors = resolve_priors(cfg, &counts)?;
    let k = classes.len();
    let candidates = legal_candidates(candidates, rows.p)?;

    let fits: Vec<(CovarianceModel, Result<(EddaFit, usize, f64)>)> = candidates
        .par_iter()
        .map(|&model| {
            let res = edda_fit_model(&rows, &idx, k, model).and_then(|fit| {
                let np = k * rows.p + n_covariance_params(model, rows.p, k)?;
                let b = bic(fit.loglik, np, rows.n);
                Ok((fit, np, b))
            });
            (model, res)
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (model, res)) in fits.iter().enumerate() {
        if let Ok((_, _, b)) = res {
            let cand = (*b, *model, 1);
            if best.is_none_or(|j| {
                let (m, r) = &fits[j];
                better(cand, (r.as_ref().map(|x| x.2).unwrap_or(f64::NEG_INFINITY), *m, 1))
            }) {
                best = Some(i);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Degenerate("all EDDA candidates degenerate".into()))?;

    let mut selection = Vec::new();
    let mut chosen = None;
    for (i, (model, res)) in fits.into_iter().enumerate() {
        match res {
            Ok((fit, np, b)) => {
                selection.push(SelectionRow {
                    class: None,
                    model,
                    g: 1,
                    loglik: Some(fit.loglik),
                    n_params: Some(np),
                    bic: Some(b),
                    error: None,
                    selected: i == best,
                });
                if i == best {
                    chosen = Some((fit, b));
                }
            }
            Err(e) => selection.push(SelectionRow {
                class: None,
                model,
                g: 1,
                loglik: None,
                n_params: None,
                bic: None,
                error: Some(e.to_string()),
                selected: false,
            }),
        }
    }
    let (fit, b) = chosen.expect("selected candidate present");
    Ok(FitOutcome {
        classifier: MixtureClassifier::new(Family::Edda, classes, priors, fit.models)?,
        selection,
        bic: b,
    })
}

/// MclustDA: independent per-class selection over the (model, G) grid by
/// class-local BIC. The reported BIC is the sum over classes.
pub fn fit_mclustda(
    data: &DMatrix<f64>,
    labels: &[String],
    candidates: &[CovarianceModel],
    g_range: &[usize],
    cfg: &ClassifierConfig,
) -> Result<FitOutcome> {
    let (rows, classes, idx, counts) = prepare(data, labels)?;
    let priors = resolve_priors(cfg, &counts)?;
    let candidates = legal_candidates(candidates, rows.p)?;
    if g_range.is_empty() || g_range.contains(&0) {
        return Err(Error::InvalidInput("component range must be nonempty and positive".into()));
    }

    let mut grid = Vec::new();
    for k in 0..classes.len() {
        for &model in &candidates {
            for &g in g_range {
                grid.push((k, model, g));
            }
        }
    }
    let subsets: Vec<RowData> = (0..classes.len()).map(|k| subset_rows(&rows, &idx, k)).collect();
    let fits: Vec<Result<gmm::FitResult>> = grid
        .par_iter()
        .map(|&(k, model, g)| {
            let em = EmConfig {
                seed: derive_seed(cfg.em.seed, &format!("{}/{}/{}", classes[k], model, g)),
                ..cfg.em.clone()
            };
            em_fit_rows(&subsets[k], g, model, &em)
        })
        .collect();

    let mut selection = Vec::with_capacity(grid.len());
    let mut class_models = Vec::with_capacity(classes.len());
    let mut total_bic = 0.0;
    for k in 0..classes.len() {
        let mut best: Option<usize> = None;
        for (i, (&(kk, model, g), fit)) in grid.iter().zip(&fits).enumerate() {
            if kk != k {
                continue;
            }
            if let Ok(f) = fit {
                let take = match best {
                    None => true,
                    Some(j) => {
                        let (_, bm, bg) = grid[j];
                        let bb = fits[j].as_ref().map(|f| f.bic).unwrap_or(f64::NEG_INFINITY);
                        better((f.bic, model, g), (bb, bm, bg))
                    }
                };
                if take {
                    best = Some(i);
                }
            }
        }
        let best = best.ok_or_else(|| {
            Error::Degenerate(format!("all candidates degenerate for class '{}'", classes[k]))
        })?;
        for (i, (&(kk, model, g), fit)) in grid.iter().zip(&fits).enumerate() {
            if kk != k {
                continue;
            }
            selection.push(match fit {
                Ok(f) => SelectionRow {
                    class: Some(classes[k].clone()),
                    model,
                    g,
                    loglik: Some(f.loglik),
                    n_params: Some(f.n_params),
                    bic: Some(f.bic),
                    error: None,
                    selected: i == best,
                },
                Err(e) => SelectionRow {
                    class: Some(classes[k].clone()),
                    model,
                    g,
                    loglik: None,
                    n_params: None,
                    bic: None,
                    error: Some(e.to_string()),
                    selected: false,
                },
            });
        }
        let f = fits[best].as_ref().expect("best fit is Ok");
        total_bic += f.bic;
        class_models.push(f.model.clone());
    }
    Ok(FitOutcome {
        classifier: MixtureClassifier::new(Family::Mclustda, classes, priors, class_models)?,
        selection,
        bic: total_bic,
    })
}

/// On-disk JSON form of a classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierDocument {
    pub schema: String,
    pub family: Family,
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    pub per_class: Vec<ClassDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassDocument {
    pub model: CovarianceModel,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl From<&MixtureClassifier> for ClassifierDocument {
    fn from(c: &MixtureClassifier) -> Self {
        ClassifierDocument {
            schema: CLASSIFIER_SCHEMA.into(),
            family: c.family,
            classes: c.classes.clone(),
            priors: c.priors.clone(),
            per_class: c
                .class_models
                .iter()
                .map(|m| ClassDocument {
                    model: m.model,
                    weights: m.components.iter().map(|x| x.weight).collect(),
                    means: m.components.iter().map(|x| x.mean.clone()).collect(),
                    covariances: m.components.iter().map(|x| x.covariance.to_rows()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ClassifierDocument> for MixtureClassifier {
    type Error = Error;

    fn try_from(doc: ClassifierDocument) -> Result<Self> {
        let models = doc
            .per_class
            .into_iter()
            .map(|c| {
                if c.weights.len() != c.means.len() || c.weights.len() != c.covariances.len() {
                    return Err(Error::InvalidInput("per-class component lists differ in length".into()));
                }
                let comps = c
                    .weights
                    .into_iter()
                    .zip(c.means)
                    .zip(c.covariances)
                    .map(|((weight, mean), cov)| {
                        Ok(GaussianComponent {
                            weight,
                            mean,
                            covariance: SymMatrix::from_rows(&cov)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                MixtureModel::new(c.model, comps)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureClassifier::new(doc.family, doc.classes, doc.priors, models)
    }
}

impl MixtureClassifier {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ClassifierDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ClassifierDocument = serde_json::from_str(s)?;
        doc.try_into()
    }
}
