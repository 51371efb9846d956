//! Defaults and glue shared by the command line and the HTTP service, so both
//! front ends produce identical numbers for identical requests.

use serde::{Deserialize, Serialize};

use crate::classifier::{fit_edda, fit_mclustda, ClassifierConfig, Family, FitOutcome};
use crate::data::LabeledDataset;
use crate::dimred::{gmmdrc, project, DimRedBasis, KernelParts, MarginalCovariance};
use crate::error::{Error, Result};
use crate::gmm::{CovarianceModel, EmConfig};
use crate::seed::derive_seed;

pub const DEFAULT_G_MAX: usize = 5;
pub const MAX_LR_STEPS: usize = 101;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub family: Family,
    /// Candidate parametrizations; every model legal for the data when absent.
    pub models: Option<Vec<CovarianceModel>>,
    /// MclustDA tries `G = 1..=g_max` per class.
    pub g_max: usize,
    pub seed: u64,
    pub marginal: MarginalCovariance,
    pub priors: Option<Vec<f64>>,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            family: Family::Mclustda,
            models: None,
            g_max: DEFAULT_G_MAX,
            seed: 0,
            marginal: MarginalCovariance::Full,
            priors: None,
        }
    }
}

impl FitSpec {
    pub fn candidates(&self, p: usize) -> Vec<CovarianceModel> {
        match &self.models {
            Some(m) => m.clone(),
            None => CovarianceModel::ALL.into_iter().filter(|m| m.legal_for(p)).collect(),
        }
    }

    /// EM settings for the fit stage.
    pub fn em(&self) -> EmConfig {
        EmConfig {
            seed: derive_seed(self.seed, "fit"),
            ..EmConfig::default()
        }
    }

    /// EM settings for refits on projections (LR criterion, plots).
    pub fn projection_em(&self) -> EmConfig {
        EmConfig {
            seed: derive_seed(self.seed, "projection"),
            ..EmConfig::default()
        }
    }

    pub fn fit(&self, ds: &LabeledDataset) -> Result<FitOutcome> {
        if self.g_max == 0 {
            return Err(Error::InvalidInput("g_max must be at least 1".into()));
        }
        let cfg = ClassifierConfig {
            em: self.em(),
            priors: self.priors.clone(),
        };
        let candidates = self.candidates(ds.p());
        match self.family {
            Family::Edda => fit_edda(&ds.x, &ds.y, &candidates, &cfg),
            Family::Mclustda => {
                let g: Vec<usize> = (1..=self.g_max).collect();
                fit_mclustda(&ds.x, &ds.y, &candidates, &g, &cfg)
            }
        }
    }
}

/// `steps` evenly spaced values from 0 to 1 inclusive.
pub fn lambda_grid(steps: usize) -> Result<Vec<f64>> {
    match steps {
        1 => Ok(vec![0.5]),
        2..=MAX_LR_STEPS => Ok((0..steps).map(|i| i as f64 / (steps - 1) as f64).collect()),
        _ => Err(Error::InvalidInput(format!(
            "grid steps must lie in 1..={MAX_LR_STEPS}, got {steps}"
        ))),
    }
}

/// Directions scored by the LR criterion when the caller does not say: the
/// plotted plane, or the single direction when that is all there is.
pub fn default_d_eval(d: usize) -> usize {
    d.clamp(1, 2)
}

/// Basis plus projected coordinates for one λ.
pub fn basis_and_projection(parts: &KernelParts, ds: &LabeledDataset, lambda: f64) -> Result<(DimRedBasis, nalgebra::DMatrix<f64>)> {
    let basis = gmmdrc(parts, lambda)?;
    let z = project(&basis, &ds.x, false)?;
    Ok((basis, z))
}
