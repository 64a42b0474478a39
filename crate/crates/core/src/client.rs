//! Blocking client for the service's HTTP API, used by the CLI and by
//! simulated vehicles talking to a remote service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{CloudLink, LinkError, UploadAck};
use crate::analysis::Report;
use crate::model::{
    Experiment, FunctionSpec, LifecycleEvent, ParameterSet, StatusIndicator, TelemetryRecord,
    Timestamp, Vin,
};
use crate::service::http::{DeviceToken, ErrorBody, SESSION_HEADER};
use crate::service::{AuditEntry, IngestReceipt, LiveSnapshot};

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error document.
    #[error("{code}: {message}")]
    Rejected {
        status: u16,
        code: String,
        message: String,
    },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Rejected { code, .. } => code,
            ClientError::Transport(_) => "Transport",
            ClientError::Decode(_) => "Decode",
        }
    }
}

impl From<ureq::Error> for ClientError {
    fn from(e: ureq::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(base_url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpClient {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn decode<T: DeserializeOwned>(mut resp: ureq::http::Response<ureq::Body>) -> Result<T> {
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if status >= 400 {
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => ClientError::Rejected {
                    status,
                    code: body.error,
                    message: body.message,
                },
                Err(_) => ClientError::Rejected {
                    status,
                    code: format!("Http{status}"),
                    message: String::from_utf8_lossy(&bytes).into_owned(),
                },
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Like [`HttpClient::decode`], with 204 mapped to `None`.
    fn decode_optional<T: DeserializeOwned>(
        resp: ureq::http::Response<ureq::Body>,
    ) -> Result<Option<T>> {
        if resp.status().as_u16() == 204 {
            return Ok(None);
        }
        Self::decode(resp).map(Some)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.agent.get(&self.url(path)).call()?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.agent.post(&self.url(path)).send_json(body)?)
    }

    fn post_empty<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.agent.post(&self.url(path)).send_empty()?)
    }

    pub fn register_function(&self, spec: &FunctionSpec) -> Result<()> {
        let resp = self.agent.post(&self.url("/functions")).send_json(spec)?;
        if resp.status().is_success() {
            return Ok(());
        }
        Self::decode::<serde_json::Value>(resp).map(|_| ())
    }

    pub fn functions(&self) -> Result<Vec<FunctionSpec>> {
        self.get("/functions")
    }

    pub fn create_experiment(&self, experiment: &Experiment) -> Result<Experiment> {
        self.post("/experiments", experiment)
    }

    pub fn experiments(&self) -> Result<Vec<Experiment>> {
        self.get("/experiments")
    }

    pub fn experiment(&self, id: &str) -> Result<Experiment> {
        self.get(&format!("/experiments/{id}"))
    }

    pub fn transition(&self, id: &str, event: LifecycleEvent) -> Result<Experiment> {
        self.post_empty(&format!("/experiments/{id}/{event}"))
    }

    pub fn repartition(&self, id: &str) -> Result<Experiment> {
        self.post_empty(&format!("/experiments/{id}/repartition"))
    }

    pub fn adjust(
        &self,
        id: &str,
        variant_id: &str,
        overrides: &ParameterSet,
    ) -> Result<Experiment> {
        let url = self.url(&format!(
            "/experiments/{id}/variants/{variant_id}/overrides"
        ));
        Self::decode(self.agent.put(&url).send_json(overrides)?)
    }

    pub fn live(&self, id: &str) -> Result<LiveSnapshot> {
        self.get(&format!("/experiments/{id}/live"))
    }

    pub fn report(&self, id: &str, epoch: Option<u32>) -> Result<Report> {
        match epoch {
            Some(e) => self.get(&format!("/experiments/{id}/report?epoch={e}")),
            None => self.get(&format!("/experiments/{id}/report")),
        }
    }

    pub fn audit(&self, id: &str) -> Result<Vec<AuditEntry>> {
        self.get(&format!("/experiments/{id}/audit"))
    }

    pub fn export_csv(&self, id: &str, epoch: Option<u32>) -> Result<Vec<u8>> {
        let path = match epoch {
            Some(e) => format!("/experiments/{id}/export.csv?epoch={e}"),
            None => format!("/experiments/{id}/export.csv"),
        };
        let mut resp = self.agent.get(&self.url(&path)).call()?;
        if resp.status().as_u16() >= 400 {
            return Self::decode::<serde_json::Value>(resp).map(|_| Vec::new());
        }
        resp.body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| ClientError::Transport(e.to_string()))
    }

    pub fn handshake(&self, vin: &Vin) -> Result<Option<StatusIndicator>> {
        Self::decode_optional(
            self.agent
                .post(&self.url("/handshake"))
                .send_json(serde_json::json!({ "vin": vin }))?,
        )
    }

    pub fn poll(&self, session_token: &str) -> Result<Option<StatusIndicator>> {
        Self::decode_optional(
            self.agent
                .post(&self.url("/poll"))
                .send_json(serde_json::json!({ "session_token": session_token }))?,
        )
    }

    pub fn close_session(&self, session_token: &str) -> Result<()> {
        self.agent
            .post(&self.url("/sessions/close"))
            .send_json(serde_json::json!({ "session_token": session_token }))?;
        Ok(())
    }

    pub fn enroll(&self, vin: &Vin) -> Result<String> {
        let t: DeviceToken = self.post("/devices", &serde_json::json!({ "vin": vin }))?;
        Ok(t.device_token)
    }

    pub fn ingest(&self, token: &str, batch: &[TelemetryRecord]) -> Result<IngestReceipt> {
        Self::decode(
            self.agent
                .post(&self.url("/ingest"))
                .header(SESSION_HEADER, token)
                .send_json(batch)?,
        )
    }
}

fn link_error(e: ClientError) -> LinkError {
    match e {
        ClientError::Transport(m) if m.contains("timeout") || m.contains("Timeout") => {
            LinkError::Timeout
        }
        ClientError::Transport(m) | ClientError::Decode(m) => LinkError::Transport(m),
        ClientError::Rejected { code, .. } => LinkError::Rejected(code),
    }
}

/// A vehicle's link to a remote service. Timestamps are assigned by the
/// server clock, so `now` is ignored.
impl CloudLink for HttpClient {
    fn handshake(
        &mut self,
        vin: &Vin,
        _now: Timestamp,
        timeout_s: f64,
    ) -> std::result::Result<Option<StatusIndicator>, LinkError> {
        let resp = self
            .agent
            .post(&self.url("/handshake"))
            .config()
            .timeout_global(Some(Duration::from_secs_f64(timeout_s)))
            .build()
            .send_json(serde_json::json!({ "vin": vin }))
            .map_err(|e| link_error(e.into()))?;
        Self::decode_optional(resp).map_err(link_error)
    }

    fn poll(
        &mut self,
        session_token: &str,
        _now: Timestamp,
    ) -> std::result::Result<Option<StatusIndicator>, LinkError> {
        HttpClient::poll(self, session_token).map_err(link_error)
    }

    fn upload(
        &mut self,
        credential: &str,
        batch: &[TelemetryRecord],
        _now: Timestamp,
    ) -> std::result::Result<UploadAck, LinkError> {
        let receipt = self.ingest(credential, batch).map_err(link_error)?;
        Ok(UploadAck {
            accepted: receipt.accepted,
            rejected: receipt.rejected.len(),
        })
    }

    fn close_session(&mut self, session_token: &str, _now: Timestamp) {
        let _ = HttpClient::close_session(self, session_token);
    }
}
