//! JSON payloads exchanged with the service. Every response carries a
//! `schema` field naming its version.

use mixdr_core::classifier::{Family, SelectionRow};
use mixdr_core::pipeline::FitSpec;
use mixdr_core::viz::PlotBox;
use serde::{Deserialize, Serialize};

pub const SESSION_SCHEMA: &str = "mixdr.session/v1";
pub const SESSION_LIST_SCHEMA: &str = "mixdr.session_list/v1";
pub const PROJECTION_SCHEMA: &str = "mixdr.projection/v1";
pub const BOUNDARY_SCHEMA: &str = "mixdr.boundary/v1";
pub const LR_SCHEMA: &str = "mixdr.lr/v1";
pub const ERROR_SCHEMA: &str = "mixdr.error/v1";
pub const HEALTH_SCHEMA: &str = "mixdr.health/v1";

/// Body of `POST /sessions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// CSV text with a header row.
    pub csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default)]
    pub fit: FitSpec,
    /// Return 202 at once and fit in the background.
    #[serde(default, rename = "async")]
    pub run_async: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Fitting,
    Ready,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub schema: String,
    pub session_id: String,
    pub status: SessionStatus,
    pub created_unix_ms: u64,
    pub n: usize,
    pub p: usize,
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    /// Number of directions the basis has at every λ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bic: Option<f64>,
    pub selection_table: Vec<SelectionRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionList {
    pub schema: String,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub status: SessionStatus,
    pub created_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub z1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z2: Option<f64>,
    pub label: String,
    /// `1 − max posterior` of the full-dimensional classifier.
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub schema: String,
    pub session_id: String,
    /// λ actually used: the request rounded to four decimals.
    pub lambda: f64,
    pub dims: usize,
    pub d: usize,
    pub eigenvalues: Vec<f64>,
    pub loc_part: Vec<f64>,
    pub disp_part: Vec<f64>,
    /// `p` rows of `d` coefficients.
    pub beta: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub axis_names: Vec<String>,
    pub points: Vec<ProjectedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub schema: String,
    pub session_id: String,
    pub lambda: f64,
    pub grid_size: usize,
    pub bounds: PlotBox,
    pub classes: Vec<String>,
    /// Row-major from the lowest `y`, indices into `classes`.
    pub class_at_cell: Vec<usize>,
    pub uncertainty_at_cell: Vec<f64>,
    pub max_uncertainty: f64,
    /// `[x0, y0, x1, y1]` in projected coordinates.
    pub segments: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTracePayload {
    pub schema: String,
    pub session_id: String,
    pub d_eval: usize,
    pub grid: Vec<f64>,
    pub lr_values: Vec<f64>,
    pub argmax_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub schema: String,
    pub category: String,
    pub message: String,
}

impl ApiError {
    pub fn new(category: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            schema: ERROR_SCHEMA.into(),
            category: category.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub schema: String,
    pub status: String,
    pub version: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_session_defaults() {
        let req: CreateSession = serde_json::from_str(r#"{"csv":"a,b,class\n1,2,x\n"}"#).unwrap();
        assert!(!req.run_async);
        assert!(req.label_column.is_none());
        assert_eq!(req.fit.family, Family::Mclustda);
        let back: CreateSession = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
        assert_eq!(back.csv, req.csv);
        assert!(serde_json::from_str::<CreateSession>(r#"{"csv":"","lambda":1}"#).is_err());
    }

    #[test]
    fn one_dimensional_points_omit_z2() {
        let p = ProjectedPoint {
            z1: 1.0,
            z2: None,
            label: "a".into(),
            uncertainty: 0.0,
        };
        let s = serde_json::to_string(&p).unwrap();
        assert!(!s.contains("z2"));
        assert_eq!(serde_json::from_str::<ProjectedPoint>(&s).unwrap(), p);
    }
}
