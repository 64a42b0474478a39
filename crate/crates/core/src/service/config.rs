use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Service configuration, read from a TOML file.
///
/// ```toml
/// bind = "127.0.0.1:8080"
/// poll_period_s = 60
/// max_batch_records = 5000
/// store_dir = "data"
/// function_specs = ["functions/energy_management.json"]
/// dashboard_dir = "dashboard/dist"
/// ```
///
/// Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Refresh period suggested to vehicles in every status indicator.
    pub poll_period_s: f64,
    /// Larger upload batches are refused with `BatchTooLarge`.
    pub max_batch_records: usize,
    /// Where telemetry segments and the audit log live; in-memory when absent.
    pub store_dir: Option<PathBuf>,
    /// Function specifications registered at startup.
    pub function_specs: Vec<PathBuf>,
    /// Static dashboard assets served under `/`.
    pub dashboard_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            poll_period_s: 60.0,
            max_batch_records: 5_000,
            store_dir: None,
            function_specs: Vec::new(),
            dashboard_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let mut config: ServiceConfig = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.store_dir.as_mut().map(resolve);
        config.dashboard_dir.as_mut().map(resolve);
        config.function_specs.iter_mut().for_each(resolve);
        Ok(config)
    }
}
