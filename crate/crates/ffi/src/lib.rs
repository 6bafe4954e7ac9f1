//! C ABI over the modegan library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`/
//! `*_extract` and released by the matching `*_free`. Every fallible call
//! returns a [`ModeganStatus`]; on failure the message is kept per thread and
//! read with [`modegan_last_error_message`]. Matrices are row-major `double`
//! buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use modegan::metrics;
use modegan::penalty::{extract_mode_bank, greedy_match, mode_distance};
use modegan::{
    checkpoint, make_benchmark, AutoEncoder, Benchmark, BenchmarkParams, Error, GaussianMixture,
    Matrix, MetricsConfig, ModeBank, SeededRng,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Usage = 5,
    Parse = 6,
    Checkpoint = 7,
    Numeric = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A Gaussian mixture benchmark.
pub struct ModeganMixture(GaussianMixture);

/// A frozen autoencoder loaded from a checkpoint.
pub struct ModeganAutoencoder(AutoEncoder);

/// A mode bank with its penalty-weight history.
pub struct ModeganBank(ModeBank);

/// Final metrics of a sample set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ModeganReport {
    pub modes_found: usize,
    pub hqs: f64,
    /// Natural log, in [0, ln 2].
    pub jsd: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ModeganStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => ModeganStatus::Dimension,
            Error::Usage(_) => ModeganStatus::Usage,
            Error::Config(_) => ModeganStatus::Config,
            Error::Parse { .. } => ModeganStatus::Parse,
            Error::Checkpoint(_) => ModeganStatus::Checkpoint,
            Error::NonFinite { .. } | Error::Diverged { .. } => ModeganStatus::Numeric,
            Error::Io { .. } => ModeganStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: ModeganStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ModeganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ModeganStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ModeganStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(ModeganStatus::NullPointer, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(ModeganStatus::NullPointer, format!("{what} is null")))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(ModeganStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ModeganStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Failure> {
    if p.is_null() {
        return Err(fail(ModeganStatus::NullPointer, format!("{what} is null")));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(ModeganStatus::InvalidArgument, format!("{what} is too large")))?;
    let data = std::slice::from_raw_parts(p, len).to_vec();
    Ok(Matrix::from_vec(rows, cols, data)?)
}

unsafe fn write_out(src: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(ModeganStatus::NullPointer, "output buffer is null"));
    }
    if out_len < src.len() {
        return Err(fail(
            ModeganStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn modegan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
/// Returns 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn modegan_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a benchmark mixture (`ring8`, `grid25`, `random25`, `cube27`) with
/// default geometry. `mixture_seed` only matters for `random25`.
///
/// # Safety
/// `benchmark` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modegan_mixture_new(
    benchmark: *const c_char,
    mixture_seed: u64,
    out: *mut *mut ModeganMixture,
) -> ModeganStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        let name = read_str(benchmark, "benchmark")?;
        let b: Benchmark = name.parse()?;
        let mix = make_benchmark(b, &BenchmarkParams::default(), &mut SeededRng::new(mixture_seed))?;
        *out = Box::into_raw(Box::new(ModeganMixture(mix)));
        Ok(())
    })
}

/// Data dimension, or 0 for a null handle.
///
/// # Safety
/// `mix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn modegan_mixture_dim(mix: *const ModeganMixture) -> usize {
    mix.as_ref().map_or(0, |m| m.0.dim())
}

/// Number of components, or 0 for a null handle.
///
/// # Safety
/// `mix` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn modegan_mixture_components(mix: *const ModeganMixture) -> usize {
    mix.as_ref().map_or(0, |m| m.0.n_components())
}

/// Draws `n` samples into `out` (`n * dim` values).
///
/// # Safety
/// `mix` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modegan_mixture_sample(
    mix: *const ModeganMixture,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> ModeganStatus {
    guard(|| {
        let mix = borrow(mix, "mixture")?;
        let samples = mix.0.sample(n, &mut SeededRng::new(seed));
        write_out(samples.data(), out, out_len)
    })
}

/// Scores generated samples against reference samples of the same mixture
/// with the default metric settings (3 sigma, one hit per mode, auto bins).
///
/// # Safety
/// `mix` must be a live handle; `gens` and `reals` must hold `rows * dim`
/// doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modegan_mixture_evaluate(
    mix: *const ModeganMixture,
    gens: *const f64,
    gen_rows: usize,
    reals: *const f64,
    real_rows: usize,
    out: *mut ModeganReport,
) -> ModeganStatus {
    guard(|| {
        let mix = borrow(mix, "mixture")?;
        let out = borrow_mut(out, "out")?;
        let dim = mix.0.dim();
        let gens = read_matrix(gens, gen_rows, dim, "gens")?;
        let reals = read_matrix(reals, real_rows, dim, "reals")?;
        let r = metrics::evaluate(&gens, &reals, &mix.0, &MetricsConfig::default())?;
        *out = ModeganReport {
            modes_found: r.modes_found,
            hqs: r.hqs,
            jsd: r.jsd,
        };
        Ok(())
    })
}

/// # Safety
/// `mix` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn modegan_mixture_free(mix: *mut ModeganMixture) {
    if !mix.is_null() {
        drop(Box::from_raw(mix));
    }
}

/// Jensen-Shannon divergence (nats) of two histograms of length `len`.
///
/// # Safety
/// `p` and `q` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modegan_jsd(
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
) -> ModeganStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let p = read_matrix(p, 1, len, "p")?;
        let q = read_matrix(q, 1, len, "q")?;
        *out = metrics::jsd(p.data(), q.data())?;
        Ok(())
    })
}

/// Loads an autoencoder checkpoint. Only frozen encoders are accepted.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modegan_autoencoder_load(
    path: *const c_char,
    out: *mut *mut ModeganAutoencoder,
) -> ModeganStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let ae = checkpoint::load_autoencoder(Path::new(path))?;
        if !ae.is_frozen() {
            return Err(fail(ModeganStatus::Usage, format!("{path}: encoder is not frozen")));
        }
        *out = Box::into_raw(Box::new(ModeganAutoencoder(ae)));
        Ok(())
    })
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `ae` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn modegan_autoencoder_data_dim(ae: *const ModeganAutoencoder) -> usize {
    ae.as_ref().map_or(0, |a| a.0.data_dim())
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `ae` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn modegan_autoencoder_latent_dim(ae: *const ModeganAutoencoder) -> usize {
    ae.as_ref().map_or(0, |a| a.0.latent_dim())
}

/// Encodes `rows` inputs into `out` (`rows * latent_dim` values).
///
/// # Safety
/// `ae` must be a live handle; `x` must hold `rows * data_dim` doubles and
/// `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modegan_autoencoder_encode(
    ae: *const ModeganAutoencoder,
    x: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> ModeganStatus {
    guard(|| {
        let ae = borrow(ae, "autoencoder")?;
        let x = read_matrix(x, rows, ae.0.data_dim(), "x")?;
        let z = ae.0.encode(&x)?;
        write_out(z.data(), out, out_len)
    })
}

/// # Safety
/// `ae` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn modegan_autoencoder_free(ae: *mut ModeganAutoencoder) {
    if !ae.is_null() {
        drop(Box::from_raw(ae));
    }
}

/// Encodes `n` distinct rows drawn from `reals` into a new bank with
/// history length `k`. All weights start at 1.
///
/// # Safety
/// `reals` must hold `rows * data_dim` doubles; `ae` must be a live handle;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modegan_bank_extract(
    reals: *const f64,
    rows: usize,
    ae: *const ModeganAutoencoder,
    n: usize,
    k: usize,
    seed: u64,
    out: *mut *mut ModeganBank,
) -> ModeganStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        *out = ptr::null_mut();
        let ae = borrow(ae, "autoencoder")?;
        let reals = read_matrix(reals, rows, ae.0.data_dim(), "reals")?;
        let bank = extract_mode_bank(&reals, n, &ae.0, k, &mut SeededRng::new(seed))?;
        *out = Box::into_raw(Box::new(ModeganBank(bank)));
        Ok(())
    })
}

/// Number of modes, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn modegan_bank_len(bank: *const ModeganBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Copies the current penalty weights (one per mode).
///
/// # Safety
/// `bank` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modegan_bank_weights(
    bank: *const ModeganBank,
    out: *mut f64,
    out_len: usize,
) -> ModeganStatus {
    guard(|| {
        let bank = borrow(bank, "bank")?;
        write_out(bank.0.weights(), out, out_len)
    })
}

/// Matches `rows` generated encodings to the bank, writes the weighted mode
/// distance to `out_dist`, then pushes the matched distances into the
/// weight history.
///
/// # Safety
/// `bank` must be a live handle; `encodings` must hold
/// `rows * latent_dim` doubles; `out_dist` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modegan_bank_observe(
    bank: *mut ModeganBank,
    encodings: *const f64,
    rows: usize,
    out_dist: *mut f64,
) -> ModeganStatus {
    guard(|| {
        let bank = borrow_mut(bank, "bank")?;
        let out_dist = borrow_mut(out_dist, "out_dist")?;
        let enc = read_matrix(encodings, rows, bank.0.latent_dim(), "encodings")?;
        let assignment = greedy_match(&bank.0, &enc)?;
        let dist = mode_distance(&bank.0, &assignment)?;
        bank.0.update_penalty_weights(&assignment)?;
        *out_dist = dist;
        Ok(())
    })
}

/// # Safety
/// `bank` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn modegan_bank_free(bank: *mut ModeganBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}
