//! C ABI over the `fedfg` simulator.
//!
//! Every fallible function returns a [`FedfgStatus`]; on failure a message
//! is available from [`fedfg_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedfg::baselines::AggregatorKind;
use fedfg::harness::{emit_csv, preset};
use fedfg::server::hampel_threshold;
use fedfg::{FedFgError, RunConfig, RunOutput};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedfgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidConfig = 4,
    UnknownPreset = 5,
    Io = 6,
    DataFormat = 7,
    NonFinite = 8,
    PrivacyViolation = 9,
    OutOfRange = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Opaque run configuration.
pub struct FedfgConfig {
    inner: RunConfig,
}

/// Opaque result of a completed run.
pub struct FedfgRun {
    output: RunOutput,
    clients: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &FedFgError) -> FedfgStatus {
    match err {
        FedFgError::DimensionMismatch { .. } | FedFgError::LayoutMismatch(_) | FedFgError::InvalidInput(_) => {
            FedfgStatus::InvalidArgument
        }
        FedFgError::NonFinite(_) => FedfgStatus::NonFinite,
        FedFgError::InvalidConfig { .. } => FedfgStatus::InvalidConfig,
        FedFgError::UnknownPreset(_) => FedfgStatus::UnknownPreset,
        FedFgError::Idx(_) => FedfgStatus::DataFormat,
        FedFgError::Io { .. } => FedfgStatus::Io,
        FedFgError::PrivacyViolation { .. } => FedfgStatus::PrivacyViolation,
    }
}

struct Failure(FedfgStatus, String);

impl From<FedFgError> for Failure {
    fn from(e: FedFgError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: FedfgStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FedfgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_error();
            FedfgStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("panic: {message}"));
            FedfgStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(FedfgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(FedfgStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(FedfgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(FedfgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn config_ref<'a>(cfg: *const FedfgConfig) -> Result<&'a FedfgConfig, Failure> {
    cfg.as_ref()
        .ok_or_else(|| fail(FedfgStatus::NullPointer, "config handle is null"))
}

unsafe fn config_mut<'a>(cfg: *mut FedfgConfig) -> Result<&'a mut FedfgConfig, Failure> {
    cfg.as_mut()
        .ok_or_else(|| fail(FedfgStatus::NullPointer, "config handle is null"))
}

unsafe fn run_ref<'a>(run: *const FedfgRun) -> Result<&'a FedfgRun, Failure> {
    run.as_ref()
        .ok_or_else(|| fail(FedfgStatus::NullPointer, "run handle is null"))
}

fn round_of(run: &FedfgRun, round: usize) -> Result<&fedfg::RoundRecord, Failure> {
    run.output.records.get(round).ok_or_else(|| {
        fail(
            FedfgStatus::OutOfRange,
            format!("round {round} out of range ({} recorded)", run.output.records.len()),
        )
    })
}

unsafe fn copy_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), Failure> {
    if capacity < values.len() {
        return Err(fail(
            FedfgStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(fail(FedfgStatus::NullPointer, "output buffer is null"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn fedfg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedfg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a configuration from a preset name such as `"sf30-iid"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_from_preset(name: *const c_char, out: *mut *mut FedfgConfig) -> FedfgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = preset(read_str(name, "name")?)?;
        *out = Box::into_raw(Box::new(FedfgConfig { inner }));
        Ok(())
    })
}

/// Parses a configuration from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_from_toml(text: *const c_char, out: *mut *mut FedfgConfig) -> FedfgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let inner = RunConfig::from_toml_str(read_str(text, "text")?)?;
        *out = Box::into_raw(Box::new(FedfgConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_set_seed(cfg: *mut FedfgConfig, seed: u64) -> FedfgStatus {
    guard(|| {
        config_mut(cfg)?.inner.seed = seed;
        Ok(())
    })
}

/// Worker threads for client updates; 0 picks the available parallelism.
///
/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_set_threads(cfg: *mut FedfgConfig, threads: usize) -> FedfgStatus {
    guard(|| {
        config_mut(cfg)?.inner.threads = threads;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_set_rounds(cfg: *mut FedfgConfig, rounds: usize) -> FedfgStatus {
    guard(|| {
        config_mut(cfg)?.inner.rounds = rounds;
        Ok(())
    })
}

/// Selects the aggregation rule by name: `fedfg`, `fedavg`, `coord_median`,
/// `trimmed_mean` or `geometric_median`.
///
/// # Safety
/// `cfg` must be a live handle; `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_set_aggregator(cfg: *mut FedfgConfig, name: *const c_char) -> FedfgStatus {
    guard(|| {
        let kind: AggregatorKind = read_str(name, "name")?.parse()?;
        config_mut(cfg)?.inner.aggregator = kind;
        Ok(())
    })
}

/// Serialises the configuration as TOML. Free the result with
/// [`fedfg_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_to_toml(cfg: *const FedfgConfig, out: *mut *mut c_char) -> FedfgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let text = config_ref(cfg)?.inner.to_toml_string();
        let c = CString::new(text).map_err(|_| fail(FedfgStatus::InvalidArgument, "TOML contains NUL"))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedfg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedfg_config_free(cfg: *mut FedfgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Executes the full simulation described by `cfg`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run(cfg: *const FedfgConfig, out: *mut *mut FedfgRun) -> FedfgStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &config_ref(cfg)?.inner;
        let output = fedfg::run(cfg)?;
        *out = Box::into_raw(Box::new(FedfgRun {
            output,
            clients: cfg.clients,
        }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_rounds(run: *const FedfgRun, out: *mut usize) -> FedfgStatus {
    guard(|| {
        *out_ref(out, "out")? = run_ref(run)?.output.records.len();
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_clients(run: *const FedfgRun, out: *mut usize) -> FedfgStatus {
    guard(|| {
        *out_ref(out, "out")? = run_ref(run)?.clients;
        Ok(())
    })
}

/// Test accuracy after `round` (0-based).
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_accuracy(run: *const FedfgRun, round: usize, out: *mut f64) -> FedfgStatus {
    guard(|| {
        let record = round_of(run_ref(run)?, round)?;
        *out_ref(out, "out")? = record.accuracy;
        Ok(())
    })
}

/// Outlier threshold of `round`; NaN for baseline aggregators.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_tau(run: *const FedfgRun, round: usize, out: *mut f64) -> FedfgStatus {
    guard(|| {
        let record = round_of(run_ref(run)?, round)?;
        *out_ref(out, "out")? = record.tau;
        Ok(())
    })
}

/// Copies the per-client outlier scores of `round` into `out`, which must
/// hold at least as many values as there are clients.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_outlier_scores(
    run: *const FedfgRun,
    round: usize,
    out: *mut f64,
    capacity: usize,
) -> FedfgStatus {
    guard(|| copy_out(&round_of(run_ref(run)?, round)?.o, out, capacity))
}

/// Copies the per-client accuracy scores of `round` into `out`.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_accuracy_scores(
    run: *const FedfgRun,
    round: usize,
    out: *mut f64,
    capacity: usize,
) -> FedfgStatus {
    guard(|| copy_out(&round_of(run_ref(run)?, round)?.s, out, capacity))
}

/// Writes 1 for each client excluded in `round` and 0 otherwise.
///
/// # Safety
/// `run` must be a live handle; `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_flagged(
    run: *const FedfgRun,
    round: usize,
    out: *mut u8,
    capacity: usize,
) -> FedfgStatus {
    guard(|| {
        let flags = &round_of(run_ref(run)?, round)?.flagged;
        if capacity < flags.len() {
            return Err(fail(
                FedfgStatus::BufferTooSmall,
                format!("buffer holds {capacity} flags, {} needed", flags.len()),
            ));
        }
        if !flags.is_empty() {
            if out.is_null() {
                return Err(fail(FedfgStatus::NullPointer, "output buffer is null"));
            }
            for (i, &f) in flags.iter().enumerate() {
                *out.add(i) = u8::from(f);
            }
        }
        Ok(())
    })
}

/// Ids of the malicious clients. `count` always receives the number of ids;
/// at most `capacity` of them are copied.
///
/// # Safety
/// `run` must be a live handle; `out` valid for `capacity` writes; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_malicious(
    run: *const FedfgRun,
    out: *mut usize,
    capacity: usize,
    count: *mut usize,
) -> FedfgStatus {
    guard(|| {
        let ids = &run_ref(run)?.output.malicious;
        *out_ref(count, "count")? = ids.len();
        if capacity < ids.len() {
            return Err(fail(
                FedfgStatus::BufferTooSmall,
                format!("buffer holds {capacity} ids, {} needed", ids.len()),
            ));
        }
        if !ids.is_empty() {
            if out.is_null() {
                return Err(fail(FedfgStatus::NullPointer, "output buffer is null"));
            }
            ptr::copy_nonoverlapping(ids.as_ptr(), out, ids.len());
        }
        Ok(())
    })
}

/// Number of extractor parameter segments the privacy audit saw; always 0
/// for a successful run.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_extractor_segments_seen(run: *const FedfgRun, out: *mut usize) -> FedfgStatus {
    guard(|| {
        *out_ref(out, "out")? = run_ref(run)?.output.audit.extractor_segments_seen;
        Ok(())
    })
}

/// Writes the per-round metrics CSV to `path`.
///
/// # Safety
/// `run` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_write_csv(run: *const FedfgRun, path: *const c_char) -> FedfgStatus {
    guard(|| {
        let run = run_ref(run)?;
        let path = PathBuf::from(read_str(path, "path")?);
        emit_csv(&run.output.records, run.clients, path)?;
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedfg_run_free(run: *mut FedfgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Hellinger distance between two probability vectors of length `len`.
///
/// # Safety
/// `p` and `q` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_hellinger(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> FedfgStatus {
    guard(|| {
        let p = slice(p, len, "p")?;
        let q = slice(q, len, "q")?;
        *out_ref(out, "out")? = fedfg::server::hellinger(p, q)?;
        Ok(())
    })
}

/// Hampel cutoff over `len` outlier scores. Any of the outputs may be NULL.
///
/// # Safety
/// `scores` must be valid for `len` reads; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedfg_hampel_threshold(
    scores: *const f64,
    len: usize,
    gamma: f64,
    eps_stab: f64,
    median: *mut f64,
    mad: *mut f64,
    tau: *mut f64,
) -> FedfgStatus {
    guard(|| {
        let h = hampel_threshold(slice(scores, len, "scores")?, gamma, eps_stab)?;
        for (ptr, value) in [(median, h.median), (mad, h.mad), (tau, h.tau)] {
            if let Some(slot) = ptr.as_mut() {
                *slot = value;
            }
        }
        Ok(())
    })
}
