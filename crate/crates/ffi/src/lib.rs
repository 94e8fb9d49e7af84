//! C interface to `npksd-core`.
//!
//! Every fallible function returns an [`NpksdStatus`]; on failure the message is
//! available from [`npksd_last_error`] on the same thread. Handles are opaque and
//! must be released with their matching `_free` function. Strings returned through
//! out-parameters are owned by the caller and released with [`npksd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use npksd_core::experiment::{run_test, RunConfig};
use npksd_core::generators::{exact_score, sample, GeneratorSpec};
use npksd_core::kernels::GaussianKernel;
use npksd_core::rng::stream;
use npksd_core::score::{fit_score_matching, ConditionalScoreModel, ScoreBasis, SummaryStatistic};
use npksd_core::stein::ksd_v;
use npksd_core::testing::{npksd_test, TestConfig};
use npksd_core::{Error, SampleMatrix};

/// Result codes. Zero means success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpksdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Unsupported = 7,
    Panic = 8,
}

/// Row-major sample matrix.
pub struct NpksdSamples(SampleMatrix);

/// Sampler for a synthetic model.
pub struct NpksdGenerator(GeneratorSpec);

/// Fitted conditional score model.
pub struct NpksdModel(ConditionalScoreModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NpksdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } | Error::IndexOutOfRange { .. } => NpksdStatus::DimensionMismatch,
            Error::TooFewSamples { .. } | Error::InvalidParameter { .. } => NpksdStatus::InvalidArgument,
            Error::Singular { .. }
            | Error::DegenerateConditional { .. }
            | Error::NonFinite { .. }
            | Error::NotPositiveDefinite(_) => NpksdStatus::Numerical,
            Error::Unsupported(_) => NpksdStatus::Unsupported,
            Error::Csv { .. } => NpksdStatus::Parse,
            Error::Io { .. } => NpksdStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(NpksdStatus::Parse, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NpksdStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> NpksdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => NpksdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NpksdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NpksdStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output string"));
    }
    *out = CString::new(s).expect("JSON has no interior nul").into_raw();
    Ok(())
}

/// Message for the most recent failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn npksd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string produced by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn npksd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies `rows * cols` row-major values into a new sample matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_samples_new(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut NpksdSamples,
) -> NpksdStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(NpksdStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        put(out, NpksdSamples(SampleMatrix::new(rows, cols, values)?))
    })
}

/// Reads a headerless numeric CSV file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_samples_from_csv(path: *const c_char, out: *mut *mut NpksdSamples) -> NpksdStatus {
    guard(|| put(out, NpksdSamples(SampleMatrix::read_csv(text(path, "path")?)?)))
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn npksd_samples_rows(samples: *const NpksdSamples) -> usize {
    samples.as_ref().map_or(0, |s| s.0.nrows())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn npksd_samples_cols(samples: *const NpksdSamples) -> usize {
    samples.as_ref().map_or(0, |s| s.0.ncols())
}

/// Copies the row-major values into `dst`, which must hold `rows * cols` doubles.
///
/// # Safety
/// `dst` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn npksd_samples_copy(
    samples: *const NpksdSamples,
    dst: *mut f64,
    capacity: usize,
) -> NpksdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let src = s.0.as_slice();
        if capacity < src.len() {
            return Err(Failure(
                NpksdStatus::InvalidArgument,
                format!("buffer holds {capacity} values, need {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
        Ok(())
    })
}

/// # Safety
/// `samples` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn npksd_samples_free(samples: *mut NpksdSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

/// Gaussian with identity covariance scaled by `1 + variance_shift`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_generator_gvd(dim: usize, variance_shift: f64, out: *mut *mut NpksdGenerator) -> NpksdStatus {
    guard(|| put(out, NpksdGenerator(GeneratorSpec::gvd(dim, variance_shift)?)))
}

/// Balanced two-component Gaussian mixture with adjacent-coordinate covariance `rho`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_generator_mog(dim: usize, rho: f64, out: *mut *mut NpksdGenerator) -> NpksdStatus {
    guard(|| put(out, NpksdGenerator(GeneratorSpec::mog(dim, rho)?)))
}

/// Draws `count` rows with a seeded stream.
///
/// # Safety
/// `generator` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_generator_sample(
    generator: *const NpksdGenerator,
    count: usize,
    seed: u64,
    out: *mut *mut NpksdSamples,
) -> NpksdStatus {
    guard(|| {
        let g = borrow(generator, "generator")?;
        let draws = sample(&g.0, count, &mut stream(seed, "ffi-sample", &[]))?;
        put(out, NpksdSamples(draws))
    })
}

/// # Safety
/// `generator` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn npksd_generator_free(generator: *mut NpksdGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Fits conditional scores by ridge score matching. `mean_statistic` selects the
/// mean of the remaining coordinates as the conditioning summary.
///
/// # Safety
/// `samples` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_model_fit(
    samples: *const NpksdSamples,
    mean_statistic: bool,
    degree: u32,
    ridge: f64,
    out: *mut *mut NpksdModel,
) -> NpksdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        let statistic = if mean_statistic {
            SummaryStatistic::Mean
        } else {
            SummaryStatistic::Identity
        };
        let model = fit_score_matching(&s.0, statistic, ScoreBasis::new(degree)?, ridge)?;
        put(out, NpksdModel(model))
    })
}

/// Serializes a fitted model, coefficients included, as JSON.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_model_to_json(model: *const NpksdModel, out: *mut *mut c_char) -> NpksdStatus {
    guard(|| put_string(out, serde_json::to_string(&borrow(model, "model")?.0)?))
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn npksd_model_free(model: *mut NpksdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Kernel Stein discrepancy (V-statistic) of `samples` against the generator's exact score.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_ksd_v(
    samples: *const NpksdSamples,
    generator: *const NpksdGenerator,
    bandwidth: f64,
    out: *mut f64,
) -> NpksdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        let g = borrow(generator, "generator")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ksd_v(&s.0, &exact_score(&g.0)?, &GaussianKernel::new(bandwidth)?)?;
        Ok(())
    })
}

/// Runs the NP-KSD Monte Carlo test of `observed` against `generator`.
/// `config_json` holds the test settings (`n`, `N`, `B`, `b`, `alpha`, `seed`, ...);
/// the report is returned as JSON.
///
/// # Safety
/// Handles must be live, `config_json` nul-terminated, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_test_json(
    observed: *const NpksdSamples,
    generator: *const NpksdGenerator,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> NpksdStatus {
    guard(|| {
        let obs = borrow(observed, "observed")?;
        let g = borrow(generator, "generator")?;
        let mut cfg: TestConfig = serde_json::from_str(text(config_json, "config_json")?)?;
        cfg.observed_size = obs.0.nrows();
        let report = npksd_test(&obs.0, &g.0, &cfg)?;
        put_string(out_json, serde_json::to_string(&report)?)
    })
}

/// Executes a complete run configuration (any method) and returns the report as JSON.
///
/// # Safety
/// `config_json` must be nul-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn npksd_run_json(config_json: *const c_char, out_json: *mut *mut c_char) -> NpksdStatus {
    guard(|| {
        let cfg: RunConfig = serde_json::from_str(text(config_json, "config_json")?)?;
        put_string(out_json, serde_json::to_string(&run_test(&cfg)?)?)
    })
}
