use std::time::Duration;

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::api::{
    ApiError, Boundary, CreateSession, Health, LrTracePayload, Projection, SessionInfo, SessionList, SessionStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {error}")]
    Api { status: StatusCode, error: ApiError },
    #[error("session {0} did not become ready in time")]
    Timeout(String),
    #[error("session {id} failed: {error}")]
    FitFailed { id: String, error: ApiError },
}

impl ClientError {
    /// Server-side error category, when there is one.
    pub fn category(&self) -> Option<&str> {
        match self {
            ClientError::Api { error, .. } | ClientError::FitFailed { error, .. } => Some(&error.category),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let error = serde_json::from_str(&text).unwrap_or_else(|_| ApiError::new("http", text));
        Err(ClientError::Api { status, error })
    }

    pub async fn health(&self) -> Result<Health> {
        Self::decode(self.http.get(self.url("/health")).send().await?).await
    }

    /// The service's OpenAPI description.
    pub async fn spec(&self) -> Result<Value> {
        Self::decode(self.http.get(self.url("/spec")).send().await?).await
    }

    /// Returns as soon as the server answers; with `run_async` the session
    /// may still be fitting.
    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionInfo> {
        Self::decode(self.http.post(self.url("/sessions")).json(req).send().await?).await
    }

    pub async fn sessions(&self) -> Result<SessionList> {
        Self::decode(self.http.get(self.url("/sessions")).send().await?).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo> {
        Self::decode(self.http.get(self.url(&format!("/sessions/{id}"))).send().await?).await
    }

    /// Polls until the session is ready or failed.
    pub async fn wait_ready(&self, id: &str, poll: Duration, timeout: Duration) -> Result<SessionInfo> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let info = self.session(id).await?;
            match info.status {
                SessionStatus::Ready => return Ok(info),
                SessionStatus::Failed => {
                    return Err(ClientError::FitFailed {
                        id: id.to_string(),
                        error: info.error.unwrap_or_else(|| ApiError::new("fit.failed", "no detail")),
                    })
                }
                SessionStatus::Fitting if tokio::time::Instant::now() >= deadline => {
                    return Err(ClientError::Timeout(id.to_string()))
                }
                SessionStatus::Fitting => tokio::time::sleep(poll).await,
            }
        }
    }

    pub async fn projection(&self, id: &str, lambda: f64, dims: Option<usize>) -> Result<Projection> {
        let mut q = vec![("lambda", lambda.to_string())];
        if let Some(d) = dims {
            q.push(("dims", d.to_string()));
        }
        let req = self.http.get(self.url(&format!("/sessions/{id}/projection"))).query(&q);
        Self::decode(req.send().await?).await
    }

    pub async fn boundary(&self, id: &str, lambda: f64, grid: Option<usize>) -> Result<Boundary> {
        let mut q = vec![("lambda", lambda.to_string())];
        if let Some(g) = grid {
            q.push(("grid", g.to_string()));
        }
        let req = self.http.get(self.url(&format!("/sessions/{id}/boundary"))).query(&q);
        Self::decode(req.send().await?).await
    }

    pub async fn lr(&self, id: &str, steps: Option<usize>, d_eval: Option<usize>) -> Result<LrTracePayload> {
        let mut q = Vec::new();
        if let Some(s) = steps {
            q.push(("steps", s.to_string()));
        }
        if let Some(d) = d_eval {
            q.push(("d_eval", d.to_string()));
        }
        let req = self.http.get(self.url(&format!("/sessions/{id}/lr"))).query(&q);
        Self::decode(req.send().await?).await
    }

    pub async fn delete(&self, id: &str) -> Result<()> {
        let resp = self.http.delete(self.url(&format!("/sessions/{id}"))).send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(());
        }
        let text = resp.text().await?;
        let error = serde_json::from_str(&text).unwrap_or_else(|_| ApiError::new("http", text));
        Err(ClientError::Api { status, error })
    }
}
