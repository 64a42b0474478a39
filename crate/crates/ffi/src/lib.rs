//! C ABI over the fleetlab core.
//!
//! Every entry point returns a [`FleetlabStatus`]. Structured values cross the
//! boundary as UTF-8 JSON; strings handed out by the library must be released
//! with [`fleetlab_string_free`]. After a failing call,
//! [`fleetlab_last_error_code`] and [`fleetlab_last_error_message`] describe
//! the failure on the calling thread.
//!
//! Times are passed as Unix milliseconds.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::{TimeZone, Utc};
use fleetlab::analysis::{self, AnalysisError};
use fleetlab::model::{
    Experiment, FunctionSpec, LifecycleEvent, ModelError, ParameterSet, TelemetryRecord, Vin,
};
use fleetlab::service::{CloudService, ServiceConfig, ServiceError};
use fleetlab::sim::{self, Scenario, SimError};
use fleetlab::{assignment, Timestamp};
use serde::Serialize;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FleetlabStatus {
    Ok = 0,
    /// The cloud has nothing for this vehicle; keep local parameters.
    Silence = 1,
    NullArgument = -1,
    InvalidUtf8 = -2,
    InvalidJson = -3,
    /// Rejected by validation: VIN, bounds, names, allocation, batch size.
    InvalidInput = -4,
    /// Unknown experiment, variant, session or device token.
    NotFound = -5,
    /// Lifecycle, layer or duplicate-id conflict.
    IllegalState = -6,
    /// Not enough data or mismatched shapes for a statistical test.
    AnalysisFailed = -7,
    /// Storage or audit log failure.
    Io = -8,
    Panic = -100,
}

/// Opaque handle to an experiment cloud.
pub struct FleetlabService {
    inner: CloudService,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FleetlabWelch {
    /// `mean(b) - mean(a)`.
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub t: f64,
    pub df: f64,
    pub std_error: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FleetlabSrm {
    pub chi_square: f64,
    pub p_value: f64,
    pub flagged: bool,
}

struct Failure {
    status: FleetlabStatus,
    code: &'static str,
    message: String,
}

impl Failure {
    fn new(status: FleetlabStatus, code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::IllegalTransition { .. } | ModelError::LayerConflict { .. } => {
                FleetlabStatus::IllegalState
            }
            ModelError::UnknownFunction(_) => FleetlabStatus::NotFound,
            _ => FleetlabStatus::InvalidInput,
        };
        Failure::new(status, e.code(), e.to_string())
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::Model(m) => return m.clone().into(),
            ServiceError::UnknownExperiment(_)
            | ServiceError::UnknownVariant(_)
            | ServiceError::UnknownSession => FleetlabStatus::NotFound,
            ServiceError::DuplicateExperiment(_) | ServiceError::IllegalState { .. } => {
                FleetlabStatus::IllegalState
            }
            ServiceError::BatchTooLarge { .. } => FleetlabStatus::InvalidInput,
            ServiceError::Store(_) | ServiceError::Audit(_) => FleetlabStatus::Io,
        };
        Failure::new(status, e.code(), e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::new(FleetlabStatus::AnalysisFailed, e.code(), e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            SimError::Service(s) => s.into(),
            other => Failure::new(
                FleetlabStatus::InvalidInput,
                other.code(),
                other.to_string(),
            ),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<(CString, CString)>> = const { RefCell::new(None) };
}

fn c_string(text: impl Into<Vec<u8>>) -> CString {
    let mut bytes = text.into();
    bytes.retain(|b| *b != 0);
    CString::new(bytes).expect("interior NULs removed")
}

fn record_failure(failure: &Failure) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some((c_string(failure.code), c_string(failure.message.as_str())));
    });
}

fn guard(f: impl FnOnce() -> Result<FleetlabStatus, Failure>) -> FleetlabStatus {
    let failure = match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            LAST_ERROR.with(|slot| slot.borrow_mut().take());
            return status;
        }
        Ok(Err(failure)) => failure,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Failure::new(FleetlabStatus::Panic, "Panic", message)
        }
    };
    record_failure(&failure);
    failure.status
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            FleetlabStatus::NullArgument,
            "NullArgument",
            format!("{name} is NULL"),
        ));
    }
    CStr::from_ptr(p).to_str().map_err(|e| {
        Failure::new(
            FleetlabStatus::InvalidUtf8,
            "InvalidUtf8",
            format!("{name}: {e}"),
        )
    })
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn json_arg<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| {
        Failure::new(
            FleetlabStatus::InvalidJson,
            "InvalidJson",
            format!("{name}: {e}"),
        )
    })
}

unsafe fn service_arg<'a>(p: *const FleetlabService) -> Result<&'a CloudService, Failure> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| {
        Failure::new(
            FleetlabStatus::NullArgument,
            "NullArgument",
            "service is NULL",
        )
    })
}

fn check_out<T>(out: *mut T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(
            FleetlabStatus::NullArgument,
            "NullArgument",
            format!("{name} is NULL"),
        ))
    } else {
        Ok(())
    }
}

unsafe fn put_string(out: *mut *mut c_char, text: impl Into<Vec<u8>>) {
    *out = c_string(text).into_raw();
}

unsafe fn put_json(out: *mut *mut c_char, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string(value)
        .map_err(|e| Failure::new(FleetlabStatus::Panic, "Serialize", e.to_string()))?;
    put_string(out, text);
    Ok(())
}

fn timestamp(now_ms: i64) -> Result<Timestamp, Failure> {
    Utc.timestamp_millis_opt(now_ms).single().ok_or_else(|| {
        Failure::new(
            FleetlabStatus::InvalidInput,
            "InvalidTimestamp",
            format!("{now_ms} ms is out of range"),
        )
    })
}

fn epoch_arg(epoch: i64) -> Result<Option<u32>, Failure> {
    if epoch < 0 {
        return Ok(None);
    }
    u32::try_from(epoch).map(Some).map_err(|_| {
        Failure::new(
            FleetlabStatus::InvalidInput,
            "InvalidEpoch",
            "epoch too large",
        )
    })
}

/// Library version as a static NUL-terminated string. Do not free.
#[no_mangle]
pub extern "C" fn fleetlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Stable error code of the last failing call on this thread, or NULL.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn fleetlab_last_error_code() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |(code, _)| code.as_ptr())
    })
}

/// Human-readable message of the last failing call on this thread, or NULL.
#[no_mangle]
pub extern "C" fn fleetlab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |(_, message)| message.as_ptr())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Checks a VIN without touching any service.
///
/// # Safety
/// `vin` must be NULL or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_vin_validate(vin: *const c_char) -> FleetlabStatus {
    guard(|| {
        Vin::parse(str_arg(vin, "vin")?)?;
        Ok(FleetlabStatus::Ok)
    })
}

/// Assignment bucket in `[0, 10000)` for `vin` under `salt` and `epoch`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_bucket(
    vin: *const c_char,
    salt: *const c_char,
    epoch: u32,
    out: *mut u32,
) -> FleetlabStatus {
    guard(|| {
        check_out(out, "out")?;
        let vin = Vin::parse(str_arg(vin, "vin")?)?;
        *out = assignment::bucket(&vin, str_arg(salt, "salt")?, epoch);
        Ok(FleetlabStatus::Ok)
    })
}

/// Welch two-sample test of `b` against `a`.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_welch(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut FleetlabWelch,
) -> FleetlabStatus {
    guard(|| {
        check_out(out, "out")?;
        let a = slice_arg(a, na, "a")?;
        let b = slice_arg(b, nb, "b")?;
        let r = analysis::welch_test(a, b)?;
        *out = FleetlabWelch {
            delta: r.delta,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            p_value: r.p_value,
            t: r.t,
            df: r.df,
            std_error: r.std_error,
        };
        Ok(FleetlabStatus::Ok)
    })
}

/// Sample-ratio check of `n` observed counts against `n` allocation fractions.
///
/// # Safety
/// `observed` and `allocation` must point to `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_srm(
    observed: *const u64,
    allocation: *const f64,
    n: usize,
    out: *mut FleetlabSrm,
) -> FleetlabStatus {
    guard(|| {
        check_out(out, "out")?;
        let observed = slice_arg(observed, n, "observed")?;
        let allocation = slice_arg(allocation, n, "allocation")?;
        let r = analysis::srm_check(observed, allocation)?;
        *out = FleetlabSrm {
            chi_square: r.chi_square,
            p_value: r.p_value,
            flagged: r.flagged,
        };
        Ok(FleetlabStatus::Ok)
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(
            FleetlabStatus::NullArgument,
            "NullArgument",
            format!("{name} is NULL"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Creates an in-memory service. `config_json` may be NULL for defaults.
///
/// # Safety
/// `config_json` must be NULL or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_new(
    config_json: *const c_char,
    out: *mut *mut FleetlabService,
) -> FleetlabStatus {
    guard(|| {
        check_out(out, "out")?;
        let config = config_arg(config_json)?;
        let service = Box::new(FleetlabService {
            inner: CloudService::new(config),
        });
        *out = Box::into_raw(service);
        Ok(FleetlabStatus::Ok)
    })
}

/// Opens a persistent service in `dir`, replaying its audit log and store.
///
/// # Safety
/// As for [`fleetlab_service_new`]; `dir` must be a valid string.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_open(
    config_json: *const c_char,
    dir: *const c_char,
    out: *mut *mut FleetlabService,
) -> FleetlabStatus {
    guard(|| {
        check_out(out, "out")?;
        let config = config_arg(config_json)?;
        let dir = str_arg(dir, "dir")?;
        let service = Box::new(FleetlabService {
            inner: CloudService::open(config, Path::new(dir))?,
        });
        *out = Box::into_raw(service);
        Ok(FleetlabStatus::Ok)
    })
}

unsafe fn config_arg(config_json: *const c_char) -> Result<ServiceConfig, Failure> {
    match opt_str_arg(config_json, "config_json")? {
        Some(text) => json_arg(text, "config_json"),
        None => Ok(ServiceConfig::default()),
    }
}

/// Releases a service. NULL is ignored.
///
/// # Safety
/// `service` must come from `fleetlab_service_new`/`_open` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_free(service: *mut FleetlabService) {
    if !service.is_null() {
        drop(Box::from_raw(service));
    }
}

/// Registers a function specification given as JSON.
///
/// # Safety
/// Pointers must be valid; see the module documentation.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_register_function(
    service: *const FleetlabService,
    spec_json: *const c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        let spec: FunctionSpec = json_arg(str_arg(spec_json, "spec_json")?, "spec_json")?;
        service.register_function(spec)?;
        Ok(FleetlabStatus::Ok)
    })
}

/// Creates a draft experiment. On success `out_json` receives the stored
/// experiment; it may be NULL when the caller does not need it.
///
/// # Safety
/// Pointers must be valid; see the module documentation.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_create_experiment(
    service: *const FleetlabService,
    experiment_json: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        let experiment: Experiment = json_arg(
            str_arg(experiment_json, "experiment_json")?,
            "experiment_json",
        )?;
        let stored = service.create_experiment(experiment, timestamp(now_ms)?)?;
        put_experiment(out_json, &stored)
    })
}

unsafe fn put_experiment(
    out: *mut *mut c_char,
    experiment: &Experiment,
) -> Result<FleetlabStatus, Failure> {
    if !out.is_null() {
        put_json(out, experiment)?;
    }
    Ok(FleetlabStatus::Ok)
}

/// Applies `activate`, `pause`, `resume` or `conclude`.
///
/// # Safety
/// Pointers must be valid; `out_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_transition(
    service: *const FleetlabService,
    experiment_id: *const c_char,
    event: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        let id = str_arg(experiment_id, "experiment_id")?;
        let event: LifecycleEvent = str_arg(event, "event")?
            .parse()
            .map_err(|e: String| Failure::new(FleetlabStatus::InvalidInput, "UnknownEvent", e))?;
        let next = service.transition(id, event, timestamp(now_ms)?)?;
        put_experiment(out_json, &next)
    })
}

/// Starts a new assignment epoch with a fresh salt.
///
/// # Safety
/// Pointers must be valid; `out_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_repartition(
    service: *const FleetlabService,
    experiment_id: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        let id = str_arg(experiment_id, "experiment_id")?;
        let next = service.repartition(id, timestamp(now_ms)?)?;
        put_experiment(out_json, &next)
    })
}

/// Replaces a treatment's cloud overrides with the JSON object `overrides_json`.
///
/// # Safety
/// Pointers must be valid; `out_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_adjust(
    service: *const FleetlabService,
    experiment_id: *const c_char,
    variant_id: *const c_char,
    overrides_json: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        let id = str_arg(experiment_id, "experiment_id")?;
        let variant = str_arg(variant_id, "variant_id")?;
        let overrides: ParameterSet =
            json_arg(str_arg(overrides_json, "overrides_json")?, "overrides_json")?;
        let next = service.steer_adjust(id, variant, overrides, timestamp(now_ms)?)?;
        put_experiment(out_json, &next)
    })
}

/// Key-on handshake. Returns `Ok` with the status indicator in `out_json`, or
/// `Silence` with `*out_json` set to NULL.
///
/// # Safety
/// Pointers must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_handshake(
    service: *const FleetlabService,
    vin: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let service = service_arg(service)?;
        let vin = Vin::parse(str_arg(vin, "vin")?)?;
        match service.handshake(&vin, timestamp(now_ms)?) {
            Some(indicator) => {
                put_json(out_json, &indicator)?;
                Ok(FleetlabStatus::Ok)
            }
            None => Ok(FleetlabStatus::Silence),
        }
    })
}

/// Refresh poll for an open session; same result convention as the handshake.
///
/// # Safety
/// Pointers must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_poll(
    service: *const FleetlabService,
    session_token: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let service = service_arg(service)?;
        let token = str_arg(session_token, "session_token")?;
        match service.poll(token, timestamp(now_ms)?) {
            Some(indicator) => {
                put_json(out_json, &indicator)?;
                Ok(FleetlabStatus::Ok)
            }
            None => Ok(FleetlabStatus::Silence),
        }
    })
}

/// Ends a session at key-off. Unknown tokens are ignored.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_close_session(
    service: *const FleetlabService,
    session_token: *const c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        service.close_session(str_arg(session_token, "session_token")?);
        Ok(FleetlabStatus::Ok)
    })
}

/// Issues the upload credential for a vehicle.
///
/// # Safety
/// Pointers must be valid; `out_token` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_enroll(
    service: *const FleetlabService,
    vin: *const c_char,
    out_token: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_token, "out_token")?;
        let service = service_arg(service)?;
        let vin = Vin::parse(str_arg(vin, "vin")?)?;
        put_string(out_token, service.enroll(&vin));
        Ok(FleetlabStatus::Ok)
    })
}

/// Stores a JSON array of telemetry records uploaded with `device_token`.
/// The receipt (accepted, inserted, rejected) goes to `out_json` if non-NULL.
///
/// # Safety
/// Pointers must be valid; `out_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_ingest(
    service: *const FleetlabService,
    device_token: *const c_char,
    records_json: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        let service = service_arg(service)?;
        let token = str_arg(device_token, "device_token")?;
        let batch: Vec<TelemetryRecord> =
            json_arg(str_arg(records_json, "records_json")?, "records_json")?;
        let receipt = service.ingest(batch, token, timestamp(now_ms)?)?;
        if !out_json.is_null() {
            put_json(out_json, &receipt)?;
        }
        Ok(FleetlabStatus::Ok)
    })
}

/// Running per-variant snapshot of an experiment as JSON.
///
/// # Safety
/// Pointers must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_live(
    service: *const FleetlabService,
    experiment_id: *const c_char,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        let service = service_arg(service)?;
        let snapshot = service.query_live(str_arg(experiment_id, "experiment_id")?)?;
        put_json(out_json, &snapshot)?;
        Ok(FleetlabStatus::Ok)
    })
}

/// Analysis report as JSON. A negative `epoch` selects the current one.
///
/// # Safety
/// Pointers must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_report(
    service: *const FleetlabService,
    experiment_id: *const c_char,
    epoch: i64,
    out_json: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        let service = service_arg(service)?;
        let report = service.report(str_arg(experiment_id, "experiment_id")?, epoch_arg(epoch)?)?;
        put_json(out_json, &report)?;
        Ok(FleetlabStatus::Ok)
    })
}

/// Stored records of an experiment as CSV. A negative `epoch` exports all.
///
/// # Safety
/// Pointers must be valid; `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_service_export_csv(
    service: *const FleetlabService,
    experiment_id: *const c_char,
    epoch: i64,
    out_csv: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_csv, "out_csv")?;
        let service = service_arg(service)?;
        let bytes =
            service.export_csv(str_arg(experiment_id, "experiment_id")?, epoch_arg(epoch)?)?;
        put_string(out_csv, bytes);
        Ok(FleetlabStatus::Ok)
    })
}

/// Runs a simulated fleet against a fresh in-process service. `scenario_json`
/// may be NULL or partial; missing fields take their defaults. Run statistics
/// go to `out_stats_json`; the event log (NDJSON) to `out_log` if non-NULL.
///
/// # Safety
/// Pointers must be valid; `out_stats_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fleetlab_sim_run(
    scenario_json: *const c_char,
    out_stats_json: *mut *mut c_char,
    out_log: *mut *mut c_char,
) -> FleetlabStatus {
    guard(|| {
        check_out(out_stats_json, "out_stats_json")?;
        let scenario = match opt_str_arg(scenario_json, "scenario_json")? {
            Some(text) => Scenario::from_json(text)?,
            None => Scenario::default(),
        };
        let outcome = sim::run(&scenario)?;
        put_json(out_stats_json, &outcome.stats)?;
        if !out_log.is_null() {
            put_string(out_log, outcome.log.into_bytes());
        }
        Ok(FleetlabStatus::Ok)
    })
}
