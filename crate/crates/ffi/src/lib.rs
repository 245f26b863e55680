//! C ABI over the qdnoise library.
//!
//! Objects cross the boundary as opaque handles returned through out
//! pointers and released with the matching `qdn_*_free`. Every fallible
//! call returns a `QdnStatus`; on failure `qdn_last_error` holds a message
//! for the calling thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qdnoise::fitting::t2star_prediction;
use qdnoise::hyperfine::{count_spinful, ergodic_t2star, BathSpecies, DotGeometry};
use qdnoise::psd::{CompositePsd, QuantityUnit};
use qdnoise::qubit::{fringe_probability, PulseParams};
use qdnoise::spectral::{welch_psd, PsdEstimate, Window};
use qdnoise::synth::{synthesize, NoiseTrace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    NumericError = 4,
    IoError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Power-spectral-density model.
pub struct QdnPsd(CompositePsd);

/// Uniformly sampled noise trace.
pub struct QdnTrace(NoiseTrace);

/// One-sided Welch estimate.
pub struct QdnPsdEstimate(PsdEstimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(QdnStatus, String);

impl From<qdnoise::Error> for Failure {
    fn from(e: qdnoise::Error) -> Self {
        let status = match &e {
            qdnoise::Error::Io(_) => QdnStatus::IoError,
            e if e.is_config_error() => QdnStatus::ConfigError,
            _ => QdnStatus::NumericError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QdnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(QdnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QdnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside qdnoise");
            QdnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qdn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qdn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn qdn_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Parse a PSD model from JSON (`{"unit_label": ..., "segments": [...]}`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_psd_from_json(json: *const c_char, out: *mut *mut QdnPsd) -> QdnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(json, "json")?;
        let psd: CompositePsd = serde_json::from_str(text).map_err(qdnoise::Error::from)?;
        *out = Box::into_raw(Box::new(QdnPsd(psd)));
        Ok(())
    })
}

/// # Safety
/// `psd` must come from `qdn_psd_from_json` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qdn_psd_free(psd: *mut QdnPsd) {
    if !psd.is_null() {
        drop(Box::from_raw(psd));
    }
}

/// # Safety
/// `psd` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_psd_eval(psd: *const QdnPsd, frequency_hz: f64, out: *mut f64) -> QdnStatus {
    guard(|| {
        let psd = handle(psd, "psd")?;
        *out_arg(out, "out")? = psd.0.eval(frequency_hz)?;
        Ok(())
    })
}

/// # Safety
/// `psd` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_psd_integrate(psd: *const QdnPsd, f_lo_hz: f64, f_hi_hz: f64, out: *mut f64) -> QdnStatus {
    guard(|| {
        let psd = handle(psd, "psd")?;
        *out_arg(out, "out")? = psd.0.integrate(f_lo_hz, f_hi_hz)?;
        Ok(())
    })
}

/// # Safety
/// `psd` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_synthesize(
    psd: *const QdnPsd,
    n_samples: usize,
    sample_rate_hz: f64,
    seed: u64,
    out: *mut *mut QdnTrace,
) -> QdnStatus {
    guard(|| {
        let psd = handle(psd, "psd")?;
        let out = out_arg(out, "out")?;
        let trace = synthesize(&psd.0, n_samples, sample_rate_hz, seed)?;
        *out = Box::into_raw(Box::new(QdnTrace(trace)));
        Ok(())
    })
}

/// Trace from caller-owned samples, which are copied.
///
/// # Safety
/// `samples` must point to `n` doubles, `unit` be a NUL-terminated label
/// such as `"detuning-Hz"`, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_from_samples(
    samples: *const f64,
    n: usize,
    sample_rate_hz: f64,
    unit: *const c_char,
    out: *mut *mut QdnTrace,
) -> QdnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        let unit = QuantityUnit::from(str_arg(unit, "unit")?.to_owned());
        let data = std::slice::from_raw_parts(samples, n).to_vec();
        let trace = NoiseTrace::new(sample_rate_hz, data, 0, unit)?;
        *out = Box::into_raw(Box::new(QdnTrace(trace)));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_free(trace: *mut QdnTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of samples; 0 for a NULL handle.
///
/// # Safety
/// `trace` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_len(trace: *const QdnTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// Sample rate in Hz; NaN for a NULL handle.
///
/// # Safety
/// `trace` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_sample_rate(trace: *const QdnTrace) -> f64 {
    trace.as_ref().map_or(f64::NAN, |t| t.0.sample_rate())
}

/// Copy the samples into `buf`, which must hold at least `qdn_trace_len`.
///
/// # Safety
/// `buf` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_copy_samples(trace: *const QdnTrace, buf: *mut f64, capacity: usize) -> QdnStatus {
    guard(|| {
        let trace = handle(trace, "trace")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let s = trace.0.samples();
        if capacity < s.len() {
            return Err(Failure(
                QdnStatus::BufferTooSmall,
                format!("buffer holds {capacity} samples, trace has {}", s.len()),
            ));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), buf, s.len());
        Ok(())
    })
}

/// # Safety
/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_save(trace: *const QdnTrace, path: *const c_char) -> QdnStatus {
    guard(|| {
        let trace = handle(trace, "trace")?;
        trace.0.save_binary(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `path` and `unit` must be NUL-terminated strings and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn qdn_trace_load(path: *const c_char, unit: *const c_char, out: *mut *mut QdnTrace) -> QdnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let unit = QuantityUnit::from(str_arg(unit, "unit")?.to_owned());
        let trace = NoiseTrace::load_binary(str_arg(path, "path")?, unit)?;
        *out = Box::into_raw(Box::new(QdnTrace(trace)));
        Ok(())
    })
}

/// Welch estimate. `segment_length` 0 picks the default; `window` is 0 for
/// Hann and 1 for rectangular.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_welch(
    trace: *const QdnTrace,
    segment_length: usize,
    overlap_fraction: f64,
    window: u32,
    out: *mut *mut QdnPsdEstimate,
) -> QdnStatus {
    guard(|| {
        let trace = handle(trace, "trace")?;
        let out = out_arg(out, "out")?;
        let window = match window {
            0 => Window::Hann,
            1 => Window::Rect,
            w => return Err(invalid(format!("unknown window {w}"))),
        };
        let seg = if segment_length == 0 {
            qdnoise::spectral::default_segment_length(trace.0.len())
        } else {
            segment_length
        };
        let mut est = welch_psd(trace.0.samples(), trace.0.sample_rate(), seg, overlap_fraction, window)?;
        est.unit_label = trace.0.unit().clone();
        *out = Box::into_raw(Box::new(QdnPsdEstimate(est)));
        Ok(())
    })
}

/// # Safety
/// `est` must come from `qdn_welch` or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qdn_estimate_free(est: *mut QdnPsdEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of frequency bins; 0 for a NULL handle.
///
/// # Safety
/// `est` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn qdn_estimate_len(est: *const QdnPsdEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.0.len())
}

/// Copy bin frequencies and densities; either buffer may be NULL.
///
/// # Safety
/// Non-NULL buffers must hold `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qdn_estimate_copy(
    est: *const QdnPsdEstimate,
    frequencies_hz: *mut f64,
    densities: *mut f64,
    capacity: usize,
) -> QdnStatus {
    guard(|| {
        let est = handle(est, "estimate")?;
        let n = est.0.len();
        if capacity < n {
            return Err(Failure(
                QdnStatus::BufferTooSmall,
                format!("buffer holds {capacity} bins, estimate has {n}"),
            ));
        }
        if !frequencies_hz.is_null() {
            ptr::copy_nonoverlapping(est.0.frequencies_hz.as_ptr(), frequencies_hz, n);
        }
        if !densities.is_null() {
            ptr::copy_nonoverlapping(est.0.densities.as_ptr(), densities, n);
        }
        Ok(())
    })
}

/// Ramsey fringe spin-up probability.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_fringe_probability(
    f_rabi_hz: f64,
    t_pi_half_s: f64,
    t_e_s: f64,
    delta_f_hz: f64,
    out: *mut f64,
) -> QdnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let params = PulseParams::new(f_rabi_hz, t_pi_half_s)?;
        *out = fringe_probability(&params, t_e_s, delta_f_hz);
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_t2star_prediction(s0: f64, alpha: f64, t_m_s: f64, t_e_s: f64, out: *mut f64) -> QdnStatus {
    guard(|| {
        *out_arg(out, "out")? = t2star_prediction(s0, alpha, t_m_s, t_e_s)?;
        Ok(())
    })
}

fn species(p: f64, gamma: f64, hyperfine_ev: f64, nuclear_spin: f64) -> Result<BathSpecies, Failure> {
    let s = BathSpecies {
        label: "ffi".into(),
        p,
        gamma,
        hyperfine_ev,
        nuclear_spin,
    };
    s.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(s)
}

fn geometry(n_atoms: f64) -> Result<DotGeometry, Failure> {
    if !(n_atoms > 0.0 && n_atoms.is_finite()) {
        return Err(invalid("n_atoms must be positive"));
    }
    Ok(DotGeometry {
        orbital_splitting_ev: None,
        effective_mass_ratio: None,
        radius_m: f64::NAN,
        height_m: f64::NAN,
        atomic_density_per_m3: f64::NAN,
        n_atoms,
    })
}

/// Spinful nuclei `p gamma n_atoms`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_count_spinful(p: f64, gamma: f64, n_atoms: f64, out: *mut f64) -> QdnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = species(p, gamma, 1.0, 0.5)?;
        *out = count_spinful(&s, &geometry(n_atoms)?);
        Ok(())
    })
}

/// Ergodic-limit hyperfine T2* in seconds.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdn_ergodic_t2star(
    p: f64,
    gamma: f64,
    hyperfine_ev: f64,
    nuclear_spin: f64,
    n_atoms: f64,
    out: *mut f64,
) -> QdnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ergodic_t2star(&species(p, gamma, hyperfine_ev, nuclear_spin)?, &geometry(n_atoms)?)?;
        Ok(())
    })
}
