//! C ABI over the dualbook core.
//!
//! Every fallible call returns a [`DualbookStatus`]; on failure the message
//! is kept per thread and read back with [`dualbook_last_error`]. Objects
//! cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};

use chrono::NaiveDate;
use dualbook::dual::{fit_beta, orthogonality_defect, RegressionOutput};
use dualbook::panel::{build_panels, BucketConfig};
use dualbook::pdo::{pdo_evolve, Complex64, DiffusionParams, SpectralGrid};
use dualbook::state::{attenuation, state_matrix, StateMatrix, VolumeMode};
use dualbook::synth::business_days;
use dualbook::tape::{parse_tape, parse_tape_str, ColumnMap, ParsedTape, TapeRecord};
use dualbook::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualbookStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidInput = 4,
    Shape = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualbookVolumeMode {
    Buy = 0,
    Sell = 1,
    Imbalance = 2,
}

impl From<DualbookVolumeMode> for VolumeMode {
    fn from(m: DualbookVolumeMode) -> Self {
        match m {
            DualbookVolumeMode::Buy => VolumeMode::Buy,
            DualbookVolumeMode::Sell => VolumeMode::Sell,
            DualbookVolumeMode::Imbalance => VolumeMode::Imbalance,
        }
    }
}

/// Fit statistics returned by value.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DualbookFitSummary {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub max_imag: f64,
    pub reconstruction_error: f64,
    pub max_abs_residual: f64,
    pub orthogonality_defect: f64,
}

/// Parsed trade tape.
pub struct DualbookTape {
    records: Vec<TapeRecord>,
    rejected: usize,
}

/// Interday correlation state matrix.
pub struct DualbookStates(StateMatrix);

/// Dual-space regression output.
pub struct DualbookFit(RegressionOutput);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(DualbookStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            _ if e.is_numeric() => DualbookStatus::Numeric,
            Error::Io(_) => DualbookStatus::Io,
            Error::Shape(_) | Error::Layer { .. } | Error::Misaligned(_) => DualbookStatus::Shape,
            _ => DualbookStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> DualbookStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DualbookStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            DualbookStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DualbookStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> std::result::Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(values: impl ExactSizeIterator<Item = f64>, buf: *mut f64, len: usize) -> Outcome {
    let need = values.len();
    if len < need {
        return Err(Failure(DualbookStatus::BufferTooSmall, format!("buffer of {len} for {need} values")));
    }
    if need > 0 && buf.is_null() {
        return Err(null("buffer"));
    }
    for (i, v) in values.enumerate() {
        buf.add(i).write(v);
    }
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> std::result::Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn from_parsed(parsed: ParsedTape) -> DualbookTape {
    DualbookTape { rejected: parsed.rejected.len(), records: parsed.records }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dualbook_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dualbook_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a tape file with the default column names.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dualbook_tape_open(path: *const c_char, out: *mut *mut DualbookTape) -> DualbookStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(DualbookStatus::InvalidUtf8, "path is not UTF-8".into()))?;
        let file = File::open(path).map_err(|e| Failure(DualbookStatus::Io, format!("{path}: {e}")))?;
        let parsed = parse_tape(BufReader::new(file), &ColumnMap::default())?;
        put(out, boxed(from_parsed(parsed)), "out")
    })
}

/// Parses tape text held in memory.
///
/// # Safety
/// `text` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_tape_parse(text: *const c_char, len: usize, out: *mut *mut DualbookTape) -> DualbookStatus {
    guard(|| {
        if text.is_null() && len > 0 {
            return Err(null("text"));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(text.cast::<u8>(), len) };
        let text = std::str::from_utf8(bytes).map_err(|_| Failure(DualbookStatus::InvalidUtf8, "tape is not UTF-8".into()))?;
        put(out, boxed(from_parsed(parse_tape_str(text, &ColumnMap::default()))), "out")
    })
}

/// Accepted and rejected row counts.
///
/// # Safety
/// `tape` must be a live handle; the out pointers may be null to skip.
#[no_mangle]
pub unsafe extern "C" fn dualbook_tape_counts(tape: *const DualbookTape, records: *mut usize, rejected: *mut usize) -> DualbookStatus {
    guard(|| {
        let t = handle(tape, "tape")?;
        if !records.is_null() {
            records.write(t.records.len());
        }
        if !rejected.is_null() {
            rejected.write(t.rejected);
        }
        Ok(())
    })
}

/// # Safety
/// `tape` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dualbook_tape_free(tape: *mut DualbookTape) {
    if !tape.is_null() {
        drop(Box::from_raw(tape));
    }
}

/// Buckets the tape with the default layout and builds the state matrix.
///
/// # Safety
/// `tape` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_states_from_tape(
    tape: *const DualbookTape,
    mode: DualbookVolumeMode,
    out: *mut *mut DualbookStates,
) -> DualbookStatus {
    guard(|| {
        let t = handle(tape, "tape")?;
        let panels = build_panels(&t.records, &BucketConfig::default())?;
        put(out, boxed(DualbookStates(state_matrix(&panels, mode.into())?)), "out")
    })
}

/// Wraps a row-major `rows x cols` matrix dated on consecutive business
/// days from 2009-01-05.
///
/// # Safety
/// `values` must point to `rows * cols` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_states_from_values(
    values: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut DualbookStates,
) -> DualbookStatus {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| Failure(DualbookStatus::Shape, "matrix too large".into()))?;
        let flat = slice(values, n, "values")?;
        let data: Vec<Vec<f64>> = flat.chunks(cols.max(1)).map(|r| r.to_vec()).take(rows).collect();
        let start = NaiveDate::from_ymd_opt(2009, 1, 5).expect("valid date");
        let m = StateMatrix::new(VolumeMode::Imbalance, business_days(start, rows), data)?;
        put(out, boxed(DualbookStates(m)), "out")
    })
}

/// # Safety
/// `states` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_states_shape(states: *const DualbookStates, rows: *mut usize, cols: *mut usize) -> DualbookStatus {
    guard(|| {
        let s = &handle(states, "states")?.0;
        put(rows, s.rows(), "rows")?;
        put(cols, s.cols(), "cols")
    })
}

/// Copies the matrix row-major into `buf`.
///
/// # Safety
/// `states` must be a live handle and `buf` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dualbook_states_values(states: *const DualbookStates, buf: *mut f64, len: usize) -> DualbookStatus {
    guard(|| {
        let s = &handle(states, "states")?.0;
        let flat: Vec<f64> = s.values.concat();
        copy_out(flat.into_iter(), buf, len)
    })
}

/// # Safety
/// `states` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dualbook_states_free(states: *mut DualbookStates) {
    if !states.is_null() {
        drop(Box::from_raw(states));
    }
}

/// Least-squares fit of the dual-space operator on the state increments.
///
/// # Safety
/// `states` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_fit(states: *const DualbookStates, out: *mut *mut DualbookFit) -> DualbookStatus {
    guard(|| {
        let s = &handle(states, "states")?.0;
        put(out, boxed(DualbookFit(fit_beta(s)?)), "out")
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_fit_summary(fit: *const DualbookFit, out: *mut DualbookFitSummary) -> DualbookStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.0;
        let summary = DualbookFitSummary {
            rows: f.rows(),
            cols: f.cols(),
            rank: f.rank,
            max_imag: f.max_imag,
            reconstruction_error: f.reconstruction_error(),
            max_abs_residual: f.max_abs_residual(),
            orthogonality_defect: orthogonality_defect(f),
        };
        put(out, summary, "out")
    })
}

/// Copies the stacked `2n x 2n` operator row-major; `dim` receives `2n`.
///
/// # Safety
/// `fit` must be a live handle, `buf` hold `len` writable doubles and
/// `dim` be null or writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_fit_beta(fit: *const DualbookFit, buf: *mut f64, len: usize, dim: *mut usize) -> DualbookStatus {
    guard(|| {
        let beta = &handle(fit, "fit")?.0.beta;
        if !dim.is_null() {
            dim.write(beta.dim());
        }
        copy_out(beta.rows.concat().into_iter(), buf, len)
    })
}

/// Copies the real-space residuals row-major (`rows x cols` of the summary).
///
/// # Safety
/// `fit` must be a live handle and `buf` hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dualbook_fit_residuals(fit: *const DualbookFit, buf: *mut f64, len: usize) -> DualbookStatus {
    guard(|| {
        let f = &handle(fit, "fit")?.0;
        copy_out(f.residuals.concat().into_iter(), buf, len)
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dualbook_fit_free(fit: *mut DualbookFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Correlation seen through independent noise: second-order and exact forms.
///
/// # Safety
/// `approx` and `exact` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dualbook_attenuation(rho: f64, nsr1: f64, nsr2: f64, approx: *mut f64, exact: *mut f64) -> DualbookStatus {
    guard(|| {
        let a = attenuation(rho, nsr1, nsr2)?;
        put(approx, a.approx, "approx")?;
        put(exact, a.exact, "exact")
    })
}

/// Evolves `n` uniform samples with spacing `h` under drift `a` and
/// diffusion `s2` for time `t`, writing the real part to `out`.
///
/// # Safety
/// `values` must hold `n` readable and `out` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dualbook_pdo_evolve_1d(
    values: *const f64,
    n: usize,
    h: f64,
    a: f64,
    s2: f64,
    t: f64,
    out: *mut f64,
) -> DualbookStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        let samples = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        let grid = SpectralGrid::new(vec![n], vec![0.0], vec![h], samples)?;
        let evolved = pdo_evolve(&grid, &DiffusionParams::scalar(a, s2)?, t)?;
        copy_out(evolved.values.iter().map(|z| z.re), out, n)
    })
}
