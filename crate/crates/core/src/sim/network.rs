//! Fault-injectable network between simulated vehicles and the service.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::agent::{CloudLink, LinkError, UploadAck};
use crate::assignment::fnv1a64;
use crate::client::HttpClient;
use crate::model::{
    IndicatorPayload, ParamValue, ParameterSet, StatusIndicator, TelemetryRecord, Timestamp, Vin,
};
use crate::service::{CloudService, ServiceError};

/// Parameter name planted in corrupted indicators. No function declares it,
/// so vehicles must reject the payload.
pub const CORRUPT_PARAMETER: &str = "__corrupt__";

/// A fault active for `[start_s, end_s)` seconds after scenario start, on the
/// listed vehicle indices or on the whole fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultWindow {
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<Vec<usize>>,
}

impl FaultWindow {
    pub fn covers(&self, vehicle: usize, t_s: f64) -> bool {
        t_s >= self.start_s
            && t_s < self.end_s
            && self.vehicles.as_ref().is_none_or(|v| v.contains(&vehicle))
    }
}

/// Uploads from a fixed share of the vehicles in one variant are acknowledged
/// and then discarded. Membership is a hash of the VIN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadBlackhole {
    pub variant_id: String,
    pub fraction: f64,
}

impl UploadBlackhole {
    pub fn captures(&self, vin: &Vin) -> bool {
        let h = fnv1a64(format!("blackhole:{vin}").as_bytes()) % 1_000_000;
        (h as f64) < self.fraction * 1_000_000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Latency {
    pub median_ms: f64,
    pub sigma: f64,
}

impl Default for Latency {
    fn default() -> Self {
        Latency {
            median_ms: 120.0,
            sigma: 0.8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModel {
    /// Loss on every request unless overridden below.
    pub loss_probability: f64,
    pub handshake_loss_probability: Option<f64>,
    /// Half of lost uploads lose the request, half lose the acknowledgement
    /// after the service stored the batch.
    pub upload_loss_probability: Option<f64>,
    pub latency: Latency,
    /// No traffic at all.
    pub partitions: Vec<FaultWindow>,
    /// Handshakes go unanswered; the vehicle times out.
    pub handshake_silence: Vec<FaultWindow>,
    /// Indicators arrive with an undeclared parameter.
    pub malformed_responses: Vec<FaultWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upload_blackhole: Option<UploadBlackhole>,
}

impl NetworkModel {
    pub fn check(&self) -> Result<(), String> {
        let probs = [
            Some(self.loss_probability),
            self.handshake_loss_probability,
            self.upload_loss_probability,
            self.upload_blackhole.as_ref().map(|b| b.fraction),
        ];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("network probabilities must lie in [0, 1]".into());
        }
        if !(self.latency.median_ms > 0.0 && self.latency.sigma >= 0.0) {
            return Err("latency needs a positive median and non-negative sigma".into());
        }
        Ok(())
    }

    fn in_window(windows: &[FaultWindow], vehicle: usize, t_s: f64) -> bool {
        windows.iter().any(|w| w.covers(vehicle, t_s))
    }

    fn latency_s(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.latency.sigma == 0.0 {
            return self.latency.median_ms / 1000.0;
        }
        let d = LogNormal::new(self.latency.median_ms.ln(), self.latency.sigma)
            .expect("checked latency");
        d.sample(rng) / 1000.0
    }
}

/// Where simulated vehicles send their traffic.
#[derive(Clone)]
pub enum Backend {
    Local(Arc<CloudService>),
    Remote(HttpClient),
}

fn service_error(e: ServiceError) -> LinkError {
    LinkError::Rejected(e.code().to_string())
}

impl Backend {
    fn handshake(&self, vin: &Vin, now: Timestamp) -> Result<Option<StatusIndicator>, LinkError> {
        match self {
            Backend::Local(s) => Ok(s.handshake(vin, now)),
            Backend::Remote(c) => CloudLink::handshake(&mut c.clone(), vin, now, 30.0),
        }
    }

    fn poll(&self, token: &str, now: Timestamp) -> Result<Option<StatusIndicator>, LinkError> {
        match self {
            Backend::Local(s) => Ok(s.poll(token, now)),
            Backend::Remote(c) => CloudLink::poll(&mut c.clone(), token, now),
        }
    }

    fn upload(
        &self,
        token: &str,
        batch: &[TelemetryRecord],
        now: Timestamp,
    ) -> Result<UploadAck, LinkError> {
        match self {
            Backend::Local(s) => s
                .ingest(batch.to_vec(), token, now)
                .map(|r| UploadAck {
                    accepted: r.accepted,
                    rejected: r.rejected.len(),
                })
                .map_err(service_error),
            Backend::Remote(c) => CloudLink::upload(&mut c.clone(), token, batch, now),
        }
    }

    fn close_session(&self, token: &str, now: Timestamp) {
        match self {
            Backend::Local(s) => s.close_session(token),
            Backend::Remote(c) => CloudLink::close_session(&mut c.clone(), token, now),
        }
    }

    /// Registers the vehicle for uploads outside sessions.
    pub fn enroll(&self, vin: &Vin) -> Result<String, String> {
        match self {
            Backend::Local(s) => Ok(s.enroll(vin)),
            Backend::Remote(c) => c.enroll(vin).map_err(|e| e.to_string()),
        }
    }
}

/// Counters the network keeps per run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub requests: u64,
    pub lost: u64,
    /// Records acknowledged to the vehicle but never stored.
    pub blackholed: u64,
}

/// One vehicle's view of the network for the duration of one agent call.
pub struct SimLink<'a> {
    pub backend: &'a Backend,
    pub model: &'a NetworkModel,
    pub rng: &'a mut ChaCha8Rng,
    pub stats: &'a mut NetworkStats,
    pub vehicle: usize,
    /// Scenario start; fault windows are relative to it.
    pub t0: Timestamp,
}

impl SimLink<'_> {
    fn t_s(&self, now: Timestamp) -> f64 {
        (now - self.t0).num_milliseconds() as f64 / 1000.0
    }

    fn partitioned(&self, now: Timestamp) -> bool {
        NetworkModel::in_window(&self.model.partitions, self.vehicle, self.t_s(now))
    }

    fn lost(&mut self, p: f64) -> bool {
        self.stats.requests += 1;
        // Always draw so the stream position does not depend on p.
        let lost = self.rng.random::<f64>() < p;
        self.stats.lost += u64::from(lost);
        lost
    }

    fn corrupt(&self, now: Timestamp, indicator: StatusIndicator) -> StatusIndicator {
        if !NetworkModel::in_window(&self.model.malformed_responses, self.vehicle, self.t_s(now)) {
            return indicator;
        }
        let mut values: std::collections::BTreeMap<String, ParamValue> = match &indicator.payload {
            IndicatorPayload::CloudOverrides(set) => set
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            IndicatorPayload::SwitchPosition(_) => Default::default(),
        };
        values.insert(CORRUPT_PARAMETER.into(), ParamValue::Real(1.0));
        StatusIndicator {
            payload: IndicatorPayload::CloudOverrides(ParameterSet::from_map(values)),
            ..indicator
        }
    }
}

impl CloudLink for SimLink<'_> {
    fn handshake(
        &mut self,
        vin: &Vin,
        now: Timestamp,
        timeout_s: f64,
    ) -> Result<Option<StatusIndicator>, LinkError> {
        let p = self
            .model
            .handshake_loss_probability
            .unwrap_or(self.model.loss_probability);
        let lost = self.lost(p);
        let latency = self.model.latency_s(self.rng);
        if self.partitioned(now)
            || lost
            || latency > timeout_s
            || NetworkModel::in_window(&self.model.handshake_silence, self.vehicle, self.t_s(now))
        {
            return Err(LinkError::Timeout);
        }
        let reply = self.backend.handshake(vin, now)?;
        Ok(reply.map(|i| self.corrupt(now, i)))
    }

    fn poll(
        &mut self,
        session_token: &str,
        now: Timestamp,
    ) -> Result<Option<StatusIndicator>, LinkError> {
        let lost = self.lost(self.model.loss_probability);
        if self.partitioned(now) {
            return Err(LinkError::Transport("partitioned".into()));
        }
        if lost {
            return Err(LinkError::Timeout);
        }
        let reply = self.backend.poll(session_token, now)?;
        Ok(reply.map(|i| self.corrupt(now, i)))
    }

    fn upload(
        &mut self,
        credential: &str,
        batch: &[TelemetryRecord],
        now: Timestamp,
    ) -> Result<UploadAck, LinkError> {
        let p = self
            .model
            .upload_loss_probability
            .unwrap_or(self.model.loss_probability);
        let lost = self.lost(p);
        let ack_lost = self.rng.random::<bool>();
        if self.partitioned(now) {
            return Err(LinkError::Transport("partitioned".into()));
        }
        if lost && !ack_lost {
            return Err(LinkError::Timeout);
        }
        let ack = match &self.model.upload_blackhole {
            Some(hole) if batch.first().is_some_and(|r| hole.captures(&r.vin)) => {
                let kept: Vec<TelemetryRecord> = batch
                    .iter()
                    .filter(|r| r.variant.as_str() != hole.variant_id)
                    .cloned()
                    .collect();
                let swallowed = batch.len() - kept.len();
                let mut ack = if kept.is_empty() {
                    UploadAck::default()
                } else {
                    self.backend.upload(credential, &kept, now)?
                };
                if !lost {
                    self.stats.blackholed += swallowed as u64;
                }
                ack.accepted += swallowed;
                ack
            }
            _ => self.backend.upload(credential, batch, now)?,
        };
        if lost {
            return Err(LinkError::Timeout);
        }
        Ok(ack)
    }

    fn close_session(&mut self, session_token: &str, now: Timestamp) {
        if !self.partitioned(now) {
            self.backend.close_session(session_token, now);
        }
    }
}
