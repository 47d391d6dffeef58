//! C ABI for the driftmark laboratory.
//!
//! Objects are exposed as opaque handles created by `dm_*_new` functions and
//! released with the matching `dm_*_free`. Every fallible call returns a
//! [`DmStatus`]; on failure [`dm_last_error`] describes the cause. Output
//! arrays are caller-allocated and their lengths are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use driftmark::codec::{decode_message, detection_stat, encode_message, make_codebook, CodeBook, Message};
use driftmark::eval::{run_suite, write_metrics_csv, ExperimentConfig};
use driftmark::injection::{corrected_eps, make_preset, InjectionConfig, Preset, Window};
use driftmark::oracle::{OracleSpec, ScoreOracle};
use driftmark::sampler::{sample, SamplerKind};
use driftmark::schedule::{build_schedule, NoiseSchedule, ScheduleKind, ScheduleSpec};
use driftmark::Error;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    DimensionMismatch = 3,
    StepOutOfRange = 4,
    InsufficientData = 5,
    Io = 6,
    Json = 7,
    InvalidUtf8 = 8,
    Cell = 9,
    Panic = 10,
}

/// Reverse sampler selector for [`dm_sample`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmSampler {
    /// Uses the `eta` argument.
    Ddim = 0,
    Ancestral = 1,
    EmSde = 2,
    PfOde = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmPreset {
    Q = 0,
    R = 1,
}

pub struct DmSchedule(NoiseSchedule);
pub struct DmOracle(ScoreOracle);
pub struct DmCodebook(CodeBook);
pub struct DmInjection(InjectionConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DmStatus {
    match e {
        Error::InvalidParameter(_) => DmStatus::InvalidParameter,
        Error::DimensionMismatch { .. } => DmStatus::DimensionMismatch,
        Error::StepOutOfRange { .. } => DmStatus::StepOutOfRange,
        Error::InsufficientData(_) => DmStatus::InsufficientData,
        Error::Cell { .. } => DmStatus::Cell,
        Error::Io { .. } => DmStatus::Io,
        Error::Json(_) => DmStatus::Json,
    }
}

enum Fail {
    Lab(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lab(e)
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmStatus::Ok,
        Ok(Err(Fail::Lab(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer passed for `{what}`"));
            DmStatus::NullPointer
        }
        Ok(Err(Fail::Utf8)) => {
            set_last_error("string argument is not valid UTF-8".into());
            DmStatus::InvalidUtf8
        }
        Err(_) => {
            set_last_error("internal panic".into());
            DmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8)
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_out(out: *mut f64, len: usize, values: &[f64]) -> Result<(), Fail> {
    if len != values.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: len,
        }
        .into());
    }
    slice_mut(out, len, "out")?.copy_from_slice(values);
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message describing the most recent failure on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Linear β schedule with `steps` steps.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_new_linear(
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    out: *mut *mut DmSchedule,
) -> DmStatus {
    guard(|| {
        store(
            out,
            DmSchedule(build_schedule(ScheduleKind::Linear, steps, beta_min, beta_max)?),
        )
    })
}

/// Linear schedule whose β range is rescaled to the step count.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_new_scaled_linear(steps: usize, out: *mut *mut DmSchedule) -> DmStatus {
    guard(|| store(out, DmSchedule(ScheduleSpec::scaled_linear(steps).build()?)))
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_from_json(json: *const c_char, out: *mut *mut DmSchedule) -> DmStatus {
    guard(|| store(out, DmSchedule(NoiseSchedule::from_json(string(json, "json")?)?)))
}

/// # Safety
/// `s` must be NULL or a handle from a `dm_schedule_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_free(s: *mut DmSchedule) {
    release(s)
}

/// Number of steps, or 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_steps(s: *const DmSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.steps())
}

/// # Safety
/// `s` must be a live schedule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_alpha_bar(s: *const DmSchedule, t: usize, out: *mut f64) -> DmStatus {
    guard(|| {
        let v = deref(s, "schedule")?.0.alpha_bar(t)?;
        *slice_mut(out, 1, "out")?.first_mut().expect("one element") = v;
        Ok(())
    })
}

/// `λ·√ᾱ_t/√(1−ᾱ_t)`.
///
/// # Safety
/// `s` must be a live schedule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_schedule_modulation_coeff(
    s: *const DmSchedule,
    t: usize,
    lambda: f64,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        let v = deref(s, "schedule")?.0.modulation_coeff(t, lambda)?;
        *slice_mut(out, 1, "out")?.first_mut().expect("one element") = v;
        Ok(())
    })
}

/// Seeded isotropic Gaussian mixture with equal weights.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_oracle_new_mixture(
    dim: usize,
    n_components: usize,
    mean_norm: f64,
    variance: f64,
    seed: u64,
    out: *mut *mut DmOracle,
) -> DmStatus {
    guard(|| {
        let spec = OracleSpec {
            dim,
            n_components,
            mean_norm,
            variance,
            seed,
        };
        store(out, DmOracle(spec.build()?))
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_oracle_from_json(json: *const c_char, out: *mut *mut DmOracle) -> DmStatus {
    guard(|| store(out, DmOracle(ScoreOracle::from_json(string(json, "json")?)?)))
}

/// # Safety
/// `o` must be NULL or an oracle handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn dm_oracle_free(o: *mut DmOracle) {
    release(o)
}

/// Latent dimension, or 0 for NULL.
///
/// # Safety
/// `o` must be NULL or a live oracle handle.
#[no_mangle]
pub unsafe extern "C" fn dm_oracle_dim(o: *const DmOracle) -> usize {
    o.as_ref().map_or(0, |o| o.0.dim())
}

/// Exact score `∇ log p_t(z)` written to `out[0..len]`.
///
/// # Safety
/// Handles must be live; `z` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_oracle_score(
    o: *const DmOracle,
    s: *const DmSchedule,
    z: *const f64,
    len: usize,
    t: usize,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        let score = deref(o, "oracle")?
            .0
            .exact_score(&deref(s, "schedule")?.0, slice(z, len, "z")?, t)?;
        write_out(out, len, &score)
    })
}

/// Posterior mean `E[z_0 | z_t]` written to `out[0..len]`.
///
/// # Safety
/// As for [`dm_oracle_score`].
#[no_mangle]
pub unsafe extern "C" fn dm_oracle_posterior_mean(
    o: *const DmOracle,
    s: *const DmSchedule,
    z: *const f64,
    len: usize,
    t: usize,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        let mean = deref(o, "oracle")?
            .0
            .posterior_mean(&deref(s, "schedule")?.0, slice(z, len, "z")?, t)?;
        write_out(out, len, &mean)
    })
}

/// `k` orthonormal carriers in `R^d` with amplitude `alpha`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dm_codebook_new(
    dim: usize,
    bits: usize,
    alpha: f64,
    seed: u64,
    out: *mut *mut DmCodebook,
) -> DmStatus {
    guard(|| store(out, DmCodebook(make_codebook(dim, bits, alpha, seed)?)))
}

/// # Safety
/// `cb` must be NULL or a codebook handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn dm_codebook_free(cb: *mut DmCodebook) {
    release(cb)
}

fn message_from(bits: &[u8]) -> Result<Message, Fail> {
    Ok(Message::new(bits.iter().map(|b| *b != 0).collect())?)
}

/// Residual for a message given as one byte per bit (non-zero = 1).
///
/// # Safety
/// `bits` must hold `n_bits` bytes and `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_codebook_encode(
    cb: *const DmCodebook,
    bits: *const u8,
    n_bits: usize,
    out: *mut f64,
    dim: usize,
) -> DmStatus {
    guard(|| {
        let delta = encode_message(&message_from(slice(bits, n_bits, "bits")?)?, &deref(cb, "codebook")?.0)?;
        write_out(out, dim, &delta)
    })
}

/// Decoded bits, one byte per bit.
///
/// # Safety
/// `z` must hold `dim` doubles and `bits_out` must hold `n_bits` bytes.
#[no_mangle]
pub unsafe extern "C" fn dm_codebook_decode(
    cb: *const DmCodebook,
    z: *const f64,
    dim: usize,
    bits_out: *mut u8,
    n_bits: usize,
) -> DmStatus {
    guard(|| {
        let cb = &deref(cb, "codebook")?.0;
        let m = decode_message(slice(z, dim, "z")?, cb)?;
        if n_bits != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: n_bits,
            }
            .into());
        }
        for (o, b) in slice_mut(bits_out, n_bits, "bits_out")?.iter_mut().zip(m.bits()) {
            *o = u8::from(*b);
        }
        Ok(())
    })
}

/// Mean signed carrier margin of `z` for the expected message, in units of
/// the amplitude.
///
/// # Safety
/// `z` must hold `dim` doubles, `bits` `n_bits` bytes, `out` one double.
#[no_mangle]
pub unsafe extern "C" fn dm_codebook_detection_stat(
    cb: *const DmCodebook,
    z: *const f64,
    dim: usize,
    bits: *const u8,
    n_bits: usize,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        let m = message_from(slice(bits, n_bits, "bits")?)?;
        let stat = detection_stat(slice(z, dim, "z")?, &m, &deref(cb, "codebook")?.0)?;
        write_out(out, 1, &[stat])
    })
}

/// Injection of `delta` with strength `lambda` over `t ∈ [t_start, t_end]`.
///
/// # Safety
/// `delta` must hold `dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_injection_new(
    delta: *const f64,
    dim: usize,
    lambda: f64,
    t_start: usize,
    t_end: usize,
    out: *mut *mut DmInjection,
) -> DmStatus {
    guard(|| {
        let window = Window::new(t_start, t_end)?;
        let cfg = InjectionConfig::custom(slice(delta, dim, "delta")?.to_vec(), lambda, window)?;
        store(out, DmInjection(cfg))
    })
}

/// Quality (Q) or robustness (R) preset scaled to the schedule length.
///
/// # Safety
/// `s` must be a live schedule; `delta` must hold `dim` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_injection_new_preset(
    preset: DmPreset,
    s: *const DmSchedule,
    delta: *const f64,
    dim: usize,
    out: *mut *mut DmInjection,
) -> DmStatus {
    guard(|| {
        let kind = match preset {
            DmPreset::Q => Preset::Q,
            DmPreset::R => Preset::R,
        };
        let cfg = make_preset(kind, &deref(s, "schedule")?.0, slice(delta, dim, "delta")?.to_vec())?;
        store(out, DmInjection(cfg))
    })
}

/// # Safety
/// `cfg` must be NULL or an injection handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn dm_injection_free(cfg: *mut DmInjection) {
    release(cfg)
}

/// Window bounds and strength of an injection.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dm_injection_params(
    cfg: *const DmInjection,
    t_start: *mut usize,
    t_end: *mut usize,
    lambda: *mut f64,
) -> DmStatus {
    guard(|| {
        let c = &deref(cfg, "injection")?.0;
        *slice_mut(t_start, 1, "t_start")?.first_mut().expect("one element") = c.window().start;
        *slice_mut(t_end, 1, "t_end")?.first_mut().expect("one element") = c.window().end;
        *slice_mut(lambda, 1, "lambda")?.first_mut().expect("one element") = c.lambda();
        Ok(())
    })
}

/// Corrected noise prediction at step `t`.
///
/// # Safety
/// Handles must be live; `eps` and `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_corrected_eps(
    cfg: *const DmInjection,
    s: *const DmSchedule,
    eps: *const f64,
    dim: usize,
    t: usize,
    out: *mut f64,
) -> DmStatus {
    guard(|| {
        let e = corrected_eps(
            slice(eps, dim, "eps")?,
            &deref(cfg, "injection")?.0,
            &deref(s, "schedule")?.0,
            t,
        )?;
        write_out(out, dim, &e)
    })
}

/// Draws `z_T` from `seed` and integrates to `t = 0`, writing the clean
/// latent to `out`. `cfg` may be NULL for an uninjected run; `eta` is read
/// only for DDIM.
///
/// # Safety
/// Handles must be live (`cfg` may be NULL); `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn dm_sample(
    sampler: DmSampler,
    eta: f64,
    o: *const DmOracle,
    s: *const DmSchedule,
    steps: usize,
    cfg: *const DmInjection,
    seed: u64,
    out: *mut f64,
    dim: usize,
) -> DmStatus {
    guard(|| {
        let kind = match sampler {
            DmSampler::Ddim => SamplerKind::Ddim { eta },
            DmSampler::Ancestral => SamplerKind::Ancestral,
            DmSampler::EmSde => SamplerKind::EmSde,
            DmSampler::PfOde => SamplerKind::PfOde,
        };
        let inj = cfg.as_ref().map(|c| &c.0);
        let tr = sample(kind, &deref(o, "oracle")?.0, &deref(s, "schedule")?.0, steps, inj, seed)?;
        write_out(out, dim, tr.final_latent())
    })
}

/// Runs the experiment matrix described by a JSON configuration (an empty
/// object selects the defaults) and returns the metrics CSV in a newly
/// allocated string to be released with [`dm_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `csv_out` writable.
#[no_mangle]
pub unsafe extern "C" fn dm_run_suite(config_json: *const c_char, csv_out: *mut *mut c_char) -> DmStatus {
    guard(|| {
        if csv_out.is_null() {
            return Err(Fail::Null("csv_out"));
        }
        let cfg = ExperimentConfig::from_json(string(config_json, "config_json")?)?;
        let records = run_suite(&cfg)?;
        let mut buf = Vec::new();
        write_metrics_csv(&records, &mut buf).expect("in-memory write");
        *csv_out = CString::new(buf).expect("CSV has no NUL bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn dm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
