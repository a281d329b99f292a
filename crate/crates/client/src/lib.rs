//! Async client for the costguard service.

use costguard_core::api::{
    BenchRequest, CreateSessionRequest, ErrorBody, ErrorKind, ForgetResponse, ObserveRequest,
    ObserveResponse, PredictRequest, PredictResponse, RunResponse, SampleJson, SessionInfo,
    StepResponse, StreamRequest, ThresholdResponse,
};
use costguard_core::experiment::{BenchReport, OracleCheckReport, RunConfig};
use costguard_core::synth::GeneratorConfig;
use reqwest::{Method, RequestBuilder, Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:7878";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach the service: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {}", body.message)]
    Api { status: StatusCode, body: ErrorBody },
}

impl ClientError {
    /// The service-side error class, when the service answered.
    pub fn kind(&self) -> Option<ErrorKind> {
        match self {
            ClientError::Api { body, .. } => Some(body.kind),
            ClientError::Http(_) => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    async fn checked(resp: Response) -> Result<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or_else(|_| ErrorBody {
            kind: if status.is_client_error() {
                ErrorKind::Config
            } else {
                ErrorKind::Internal
            },
            message: text,
            line: None,
        });
        Err(ClientError::Api { status, body })
    }

    async fn json<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T> {
        let mut req = self.request(method, path);
        if let Some(b) = body {
            req = req.json(b);
        }
        Ok(Self::checked(req.send().await?).await?.json().await?)
    }

    async fn text<B: Serialize + ?Sized>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<String> {
        let mut req = self.request(method, path);
        if let Some(b) = body {
            req = req.json(b);
        }
        Ok(Self::checked(req.send().await?).await?.text().await?)
    }

    pub async fn health(&self) -> Result<()> {
        self.json::<(), serde_json::Value>(Method::GET, "/health", None)
            .await
            .map(drop)
    }

    pub async fn create_session(&self, req: &CreateSessionRequest) -> Result<SessionInfo> {
        self.json(Method::POST, "/v1/sessions", Some(req)).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionInfo> {
        self.json::<(), _>(Method::GET, &format!("/v1/sessions/{id}"), None)
            .await
    }

    pub async fn delete_session(&self, id: &str) -> Result<()> {
        self.json::<(), serde_json::Value>(Method::DELETE, &format!("/v1/sessions/{id}"), None)
            .await
            .map(drop)
    }

    pub async fn observe(&self, id: &str, samples: Vec<SampleJson>) -> Result<ObserveResponse> {
        let body = ObserveRequest { samples };
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/observe"),
            Some(&body),
        )
        .await
    }

    pub async fn predict(&self, id: &str, probs: Vec<f64>) -> Result<PredictResponse> {
        let body = PredictRequest { probs };
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/predict"),
            Some(&body),
        )
        .await
    }

    pub async fn step(&self, id: &str, sample: &SampleJson) -> Result<StepResponse> {
        self.json(
            Method::POST,
            &format!("/v1/sessions/{id}/step"),
            Some(sample),
        )
        .await
    }

    pub async fn forget(&self, id: &str, sample_id: u64) -> Result<ForgetResponse> {
        self.json::<(), _>(
            Method::POST,
            &format!("/v1/sessions/{id}/forget/{sample_id}"),
            None,
        )
        .await
    }

    pub async fn threshold(&self, id: &str) -> Result<ThresholdResponse> {
        self.json::<(), _>(Method::GET, &format!("/v1/sessions/{id}/threshold"), None)
            .await
    }

    /// Calibration masses as `# key=value` headers then `value,weight` rows.
    pub async fn snapshot(&self, id: &str) -> Result<String> {
        self.text::<()>(Method::GET, &format!("/v1/sessions/{id}/snapshot"), None)
            .await
    }

    /// The generated stream as CSV.
    pub async fn generate(&self, config: &GeneratorConfig) -> Result<String> {
        self.text(Method::POST, "/v1/generate", Some(config)).await
    }

    pub async fn run(
        &self,
        config: &RunConfig,
        stream: String,
        include_log: bool,
    ) -> Result<RunResponse> {
        let body = StreamRequest {
            config: config.clone(),
            stream,
            include_log,
        };
        self.json(Method::POST, "/v1/run", Some(&body)).await
    }

    pub async fn oracle_check(
        &self,
        config: &RunConfig,
        stream: String,
    ) -> Result<OracleCheckReport> {
        let body = StreamRequest {
            config: config.clone(),
            stream,
            include_log: false,
        };
        self.json(Method::POST, "/v1/oracle-check", Some(&body))
            .await
    }

    pub async fn bench(&self, config: &BenchRequest) -> Result<BenchReport> {
        self.json(Method::POST, "/v1/bench", Some(config)).await
    }
}
