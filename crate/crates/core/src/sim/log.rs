//! The simulation's event log: newline-delimited JSON, one event per line,
//! fields in a fixed order.

use serde::{Deserialize, Serialize};

use crate::agent::AgentEvent;
use crate::model::Vin;

/// Events the harness itself records, next to the agents' own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    DayStart {
        day: u32,
        driving: usize,
    },
    KeyOn {
        distance_km: f64,
    },
    KeyOff {
        distance_km: f64,
        odometer_km: f64,
    },
    InterruptInjected,
    Steering {
        experiment_id: String,
        action: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Finished {
        generated: u64,
        stored: u64,
        buffered: u64,
    },
}

#[derive(Serialize)]
struct Line<'a, E: Serialize> {
    t_ms: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    vin: Option<&'a str>,
    #[serde(flatten)]
    event: &'a E,
}

#[derive(Debug, Default, Clone)]
pub struct EventLog {
    buf: Vec<u8>,
    lines: usize,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push<E: Serialize>(&mut self, t_ms: i64, vin: Option<&Vin>, event: &E) {
        let line = Line {
            t_ms,
            vin: vin.map(Vin::as_str),
            event,
        };
        serde_json::to_writer(&mut self.buf, &line).expect("log lines serialize");
        self.buf.push(b'\n');
        self.lines += 1;
    }

    pub fn agent(&mut self, t_ms: i64, vin: &Vin, event: &AgentEvent) {
        self.push(t_ms, Some(vin), event);
    }

    pub fn sim(&mut self, t_ms: i64, vin: Option<&Vin>, event: &SimEvent) {
        self.push(t_ms, vin, event);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    /// Parses every line back into a JSON value.
    pub fn lines(&self) -> impl Iterator<Item = serde_json::Value> + '_ {
        self.buf
            .split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).expect("log holds valid JSON"))
    }
}
