//! C ABI over vflkit.
//!
//! Every fallible function returns a [`VflStatus`]; on failure the message is
//! kept per thread and read back with [`vfl_last_error_message`]. Systems and
//! benign caches are opaque handles released with their `_free` function.
//! Matrices are row-major `double` buffers; a multi-participant input is an
//! array of per-participant buffers sharing one row count.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::os::raw::c_int;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use vflkit::protocol::{BenignCache, SystemCheckpoint, VFLSystem, ADVERSARY};
use vflkit::synthesis::{SynthesisConfig, Synthesizer};
use vflkit::variance::{heterolr_variance, splitnn_unit_variance, ScalarMixture, SplitnnMode};
use vflkit::{Error, Matrix};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Data = 4,
    Config = 5,
    NonFinite = 6,
    Privacy = 7,
    Io = 8,
    Panic = 9,
}

/// A trained system.
pub struct VflSystem {
    inner: VFLSystem,
}

/// Benign rows of every non-adversary participant, cached for repeated
/// pairing with inputs of A.
pub struct VflBenign {
    inner: BenignCache,
}

/// How the SplitNN unit variance is assembled.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VflSplitnnMode {
    ExactMixture = 0,
    PerComponent = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> VflStatus {
    match e {
        Error::Shape(_) => VflStatus::Shape,
        Error::NonFinite(_) => VflStatus::NonFinite,
        Error::InvalidArgument(_) | Error::Partition(_) | Error::CalibrationMissing(_) => {
            VflStatus::InvalidArgument
        }
        Error::Data { .. } | Error::Json(_) => VflStatus::Data,
        Error::PrivacyViolation(_) => VflStatus::Privacy,
        Error::Config(_) => VflStatus::Config,
        Error::Io(_) => VflStatus::Io,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (VflStatus, String)>) -> VflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            VflStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            VflStatus::Panic
        }
    }
}

type FfiResult<T> = Result<T, (VflStatus, String)>;

fn lift<T>(r: vflkit::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (VflStatus, String) {
    (VflStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (VflStatus, String) {
    (VflStatus::InvalidArgument, msg.into())
}

/// # Safety
/// `p` is null or valid for reads of `len` doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` is null or a valid handle.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `p` is null or valid for writes of one `T`.
unsafe fn write<T>(p: *mut T, v: T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// # Safety
/// `s` is null or a NUL-terminated string.
unsafe fn string<'a>(s: *const c_char, what: &str) -> FfiResult<&'a str> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Copies per-participant buffers of `rows` rows into matrices whose widths
/// follow `participants` of the system.
///
/// # Safety
/// `views` holds `participants.len()` pointers, each valid for
/// `rows × width` doubles.
unsafe fn views(
    system: &VFLSystem,
    views: *const *const f64,
    participants: &[usize],
    rows: usize,
) -> FfiResult<Vec<Matrix>> {
    if rows == 0 {
        return Err(invalid("row count must be positive"));
    }
    let ptrs = slice_ptrs(views, participants.len())?;
    participants
        .iter()
        .zip(ptrs)
        .map(|(&p, &ptr)| {
            let width = system.participants[p].columns.len();
            let data = slice(ptr, rows * width, "view")?.to_vec();
            lift(Matrix::new(rows, width, data))
        })
        .collect()
}

/// # Safety
/// `p` is null or valid for reads of `n` pointers.
unsafe fn slice_ptrs<'a>(p: *const *const f64, n: usize) -> FfiResult<&'a [*const f64]> {
    if p.is_null() {
        return Err(null("view array"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn mixture(weights: &[f64], means: &[f64], stds: &[f64]) -> FfiResult<ScalarMixture> {
    lift(ScalarMixture::new(
        weights.to_vec(),
        means.to_vec(),
        stds.to_vec(),
    ))
}

/// Version string of the library; static, never freed.
#[no_mangle]
pub extern "C" fn vfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Byte length of the last error message of this thread, without the
/// terminating NUL.
#[no_mangle]
pub extern "C" fn vfl_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message of this thread into `buf`, truncated to
/// `len - 1` bytes and NUL-terminated. Returns the number of bytes written
/// without the NUL, or -1 when `buf` is null or `len` is 0.
///
/// # Safety
/// `buf` is null or valid for writes of `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn vfl_last_error_message(buf: *mut c_char, len: usize) -> c_int {
    if buf.is_null() || len == 0 {
        return -1;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let n = msg.len().min(len - 1);
        std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
        n as c_int
    })
}

/// Loads a system checkpoint written by the `train` command.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn vfl_system_load(
    path: *const c_char,
    out: *mut *mut VflSystem,
) -> VflStatus {
    guard(|| {
        let path = string(path, "path")?;
        let ckpt = lift(SystemCheckpoint::load(Path::new(path)))?;
        let inner = lift(ckpt.to_system())?;
        write(out, Box::into_raw(Box::new(VflSystem { inner })), "out")
    })
}

/// Releases a system; null is ignored.
///
/// # Safety
/// `system` is null or a handle from [`vfl_system_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vfl_system_free(system: *mut VflSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Participant count, class count and the feature width of one participant.
///
/// # Safety
/// `system` is a valid handle; every non-null out pointer is writable.
#[no_mangle]
pub unsafe extern "C" fn vfl_system_shape(
    system: *const VflSystem,
    participant: usize,
    out_participants: *mut usize,
    out_classes: *mut usize,
    out_width: *mut usize,
) -> VflStatus {
    guard(|| {
        let sys = &handle(system, "system")?.inner;
        let m = sys.participant_count();
        if participant >= m {
            return Err(invalid(format!(
                "participant {participant} out of range (system has {m})"
            )));
        }
        write(out_participants, m, "out_participants")?;
        write(out_classes, sys.classes, "out_classes")?;
        write(
            out_width,
            sys.participants[participant].columns.len(),
            "out_width",
        )
    })
}

/// Joint predictions for `rows` aligned rows; `views` holds one buffer per
/// participant and `out_labels` receives `rows` labels.
///
/// # Safety
/// See the module notes; `out_labels` is valid for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn vfl_system_predict(
    system: *const VflSystem,
    views_ptr: *const *const f64,
    rows: usize,
    out_labels: *mut usize,
) -> VflStatus {
    guard(|| {
        let sys = &handle(system, "system")?.inner;
        let all: Vec<usize> = (0..sys.participant_count()).collect();
        let mats = views(sys, views_ptr, &all, rows)?;
        let preds = lift(sys.predict(&mats.iter().collect::<Vec<_>>()))?;
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        std::ptr::copy_nonoverlapping(preds.as_ptr(), out_labels, rows);
        Ok(())
    })
}

/// Caches benign rows of every participant except A (participant 0);
/// `views` holds one buffer per benign participant in order.
///
/// # Safety
/// See the module notes; `out` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn vfl_benign_new(
    system: *const VflSystem,
    views_ptr: *const *const f64,
    rows: usize,
    out: *mut *mut VflBenign,
) -> VflStatus {
    guard(|| {
        let sys = &handle(system, "system")?.inner;
        let benign: Vec<usize> = (1..sys.participant_count()).collect();
        let mats = views(sys, views_ptr, &benign, rows)?;
        let inner = lift(sys.benign_cache(ADVERSARY, &mats.iter().collect::<Vec<_>>()))?;
        write(out, Box::into_raw(Box::new(VflBenign { inner })), "out")
    })
}

/// Releases a benign cache; null is ignored.
///
/// # Safety
/// `benign` is null or a handle from [`vfl_benign_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vfl_benign_free(benign: *mut VflBenign) {
    if !benign.is_null() {
        drop(Box::from_raw(benign));
    }
}

/// Fraction of cached benign rows for which `x_a` yields `target`.
///
/// # Safety
/// Handles are valid; `x_a` holds `len` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vfl_hit_rate(
    system: *const VflSystem,
    benign: *const VflBenign,
    x_a: *const f64,
    len: usize,
    target: usize,
    out: *mut f64,
) -> VflStatus {
    guard(|| {
        let sys = &handle(system, "system")?.inner;
        let cache = &handle(benign, "benign")?.inner;
        let x = slice(x_a, len, "x_a")?;
        write(out, lift(sys.hit_rate(cache, x, target))?, "out")
    })
}

/// Label `x_a` yields most often against the cached rows and its fraction.
///
/// # Safety
/// Handles are valid; `x_a` holds `len` doubles; out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn vfl_majority_label(
    system: *const VflSystem,
    benign: *const VflBenign,
    x_a: *const f64,
    len: usize,
    out_label: *mut usize,
    out_fraction: *mut f64,
) -> VflStatus {
    guard(|| {
        let sys = &handle(system, "system")?.inner;
        let cache = &handle(benign, "benign")?.inner;
        let x = slice(x_a, len, "x_a")?;
        let (label, frac) = lift(vflkit::assessment::majority_label(sys, cache, x))?;
        write(out_label, label, "out_label")?;
        write(out_fraction, frac, "out_fraction")
    })
}

/// Synthesizes a perturbation of `x_a` toward `target`. S is given as one
/// buffer per benign participant with `s_rows` rows; success is judged on
/// `check`. `config_json` is a synthesis config object or null for defaults.
/// Writes `len` doubles to `out_perturbation` and the attack accuracy.
///
/// # Safety
/// Handles are valid; buffers match the stated sizes; out pointers are
/// writable.
#[no_mangle]
pub unsafe extern "C" fn vfl_synthesize(
    system: *const VflSystem,
    check: *const VflBenign,
    s_views: *const *const f64,
    s_rows: usize,
    x_a: *const f64,
    len: usize,
    target: usize,
    config_json: *const c_char,
    out_perturbation: *mut f64,
    out_accuracy: *mut f64,
) -> VflStatus {
    guard(|| {
        let sys = &handle(system, "system")?.inner;
        let cache = &handle(check, "check")?.inner;
        let cfg: SynthesisConfig = if config_json.is_null() {
            SynthesisConfig::default()
        } else {
            serde_json::from_str(string(config_json, "config_json")?)
                .map_err(|e| (VflStatus::Config, format!("synthesis config: {e}")))?
        };
        let benign: Vec<usize> = (1..sys.participant_count()).collect();
        let s = views(sys, s_views, &benign, s_rows)?;
        let x = slice(x_a, len, "x_a")?;
        let syn = lift(Synthesizer::new(
            sys,
            cfg,
            &s.iter().collect::<Vec<_>>(),
            cache,
        ))?;
        let cand = lift(syn.generate(x, target))?;
        if out_perturbation.is_null() {
            return Err(null("out_perturbation"));
        }
        std::ptr::copy_nonoverlapping(cand.perturbation.as_ptr(), out_perturbation, len);
        write(out_accuracy, cand.attack_accuracy, "out_accuracy")
    })
}

/// Analytic variance of the sigmoid output for a scalar score drawn from a
/// `k`-component Gaussian mixture.
///
/// # Safety
/// `weights`, `means` and `stds` each hold `k` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vfl_heterolr_variance(
    weights: *const f64,
    means: *const f64,
    stds: *const f64,
    k: usize,
    out: *mut f64,
) -> VflStatus {
    guard(|| {
        let sm = mixture(
            slice(weights, k, "weights")?,
            slice(means, k, "means")?,
            slice(stds, k, "stds")?,
        )?;
        write(out, heterolr_variance(&sm).value, "out")
    })
}

/// Analytic variance of a ReLU unit whose pre-activation is drawn from a
/// `k`-component Gaussian mixture.
///
/// # Safety
/// `weights`, `means` and `stds` each hold `k` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn vfl_splitnn_variance(
    weights: *const f64,
    means: *const f64,
    stds: *const f64,
    k: usize,
    mode: VflSplitnnMode,
    out: *mut f64,
) -> VflStatus {
    guard(|| {
        let sm = mixture(
            slice(weights, k, "weights")?,
            slice(means, k, "means")?,
            slice(stds, k, "stds")?,
        )?;
        let mode = match mode {
            VflSplitnnMode::ExactMixture => SplitnnMode::ExactMixture,
            VflSplitnnMode::PerComponent => SplitnnMode::PerComponent,
        };
        write(out, splitnn_unit_variance(&sm, mode).value, "out")
    })
}
