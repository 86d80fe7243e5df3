//! HTTP client for the JSE gateway.

use geps_core::catalog::{DatasetRecord, JobRecord, JobRequest, JobRow, NodeRecord, PlacementRecord};
use geps_core::jse::gateway::{DatasetView, JobView, NewDataset, NewNode, Submitted};
use reqwest::{Method, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::time::{Duration, Instant};

pub const DEFAULT_GATEWAY: &str = "http://127.0.0.1:7745";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway {url} unreachable: {source}")]
    Network { url: String, source: reqwest::Error },
    #[error("gateway answered {status}: {message}")]
    Api {
        status: u16,
        code: String,
        message: String,
        body: Value,
    },
    #[error("unexpected gateway response: {0}")]
    Decode(String),
}

impl GatewayError {
    pub fn status(&self) -> Option<u16> {
        match self {
            GatewayError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            GatewayError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayClient {
    base: String,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    async fn send(&self, req: RequestBuilder) -> Result<Response, GatewayError> {
        let resp = req.send().await.map_err(|source| GatewayError::Network {
            url: self.base.clone(),
            source,
        })?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body: Value = resp.json().await.unwrap_or(Value::Null);
        Err(GatewayError::Api {
            status: status.as_u16(),
            code: body["error"].as_str().unwrap_or_default().to_owned(),
            message: body["message"]
                .as_str()
                .map(str::to_owned)
                .unwrap_or_else(|| status.to_string()),
            body,
        })
    }

    async fn json<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, GatewayError> {
        let resp = self.send(req).await?;
        resp.json().await.map_err(|e| GatewayError::Decode(e.to_string()))
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, GatewayError> {
        self.json(self.request(Method::GET, path)).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, GatewayError> {
        self.json(self.request(Method::POST, path).json(body)).await
    }

    pub async fn submit(&self, req: &JobRequest) -> Result<u64, GatewayError> {
        let s: Submitted = self.post("/jobs", req).await?;
        Ok(s.job_id)
    }

    pub async fn jobs(&self) -> Result<Vec<JobRow>, GatewayError> {
        self.get("/jobs").await
    }

    pub async fn job(&self, job_id: u64) -> Result<JobView, GatewayError> {
        self.get(&format!("/jobs/{job_id}")).await
    }

    pub async fn result(&self, job_id: u64) -> Result<Vec<u8>, GatewayError> {
        let resp = self
            .send(self.request(Method::GET, &format!("/jobs/{job_id}/result")))
            .await?;
        let bytes = resp.bytes().await.map_err(|source| GatewayError::Network {
            url: self.base.clone(),
            source,
        })?;
        Ok(bytes.to_vec())
    }

    pub async fn nodes(&self) -> Result<Vec<NodeRecord>, GatewayError> {
        self.get("/nodes").await
    }

    pub async fn node(&self, name: &str) -> Result<NodeRecord, GatewayError> {
        self.get(&format!("/nodes/{name}")).await
    }

    pub async fn add_node(&self, address: &str) -> Result<NodeRecord, GatewayError> {
        self.post(
            "/nodes",
            &NewNode {
                address: address.to_owned(),
            },
        )
        .await
    }

    pub async fn datasets(&self) -> Result<Vec<DatasetView>, GatewayError> {
        self.get("/datasets").await
    }

    pub async fn create_dataset(&self, req: &NewDataset) -> Result<DatasetRecord, GatewayError> {
        self.post("/datasets", req).await
    }

    pub async fn add_placements(&self, dataset_id: u64, placements: &[PlacementRecord]) -> Result<u64, GatewayError> {
        let v: Value = self
            .post(&format!("/datasets/{dataset_id}/placements"), &placements)
            .await?;
        Ok(v["added"].as_u64().unwrap_or(0))
    }

    /// Polls until the job reaches FINISHED or ERROR, or `timeout` passes.
    pub async fn wait(&self, job_id: u64, poll: Duration, timeout: Duration) -> Result<JobRecord, GatewayError> {
        let deadline = Instant::now() + timeout;
        loop {
            let view = self.job(job_id).await?;
            if view.job.state.is_terminal() || Instant::now() >= deadline {
                return Ok(view.job);
            }
            tokio::time::sleep(poll).await;
        }
    }
}
