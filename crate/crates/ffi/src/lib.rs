//! C ABI over `speckle-cs`.
//!
//! Every fallible call returns an [`SpkStatus`]. On failure the message is
//! kept per thread and can be read with [`spk_last_error`]. Matrices and
//! generator models cross the boundary as opaque handles that the caller
//! releases with the matching `_free` function.
//!
//! Buffers are caller-owned. Output lengths are checked against the exact
//! size the call will write; a mismatch is `SPK_STATUS_SHAPE`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use speckle_cs::generator::{self, AdamConfig};
use speckle_cs::l1::{self, BpdnConfig, SolveReport};
use speckle_cs::recon::{self, ReconConfig};
use speckle_cs::{forward, metrics, speckle, Error, GeneratorModel, GrayImage, MeasurementMatrix, SpeckleConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    MissingArtifact = 7,
    Reconstruction = 8,
    /// The result is mathematically undefined (e.g. correlation of a constant).
    Undefined = 9,
    Panic = 10,
}

/// Measurement matrix handle.
pub struct SpkMatrix(MeasurementMatrix);

/// Generator model handle.
pub struct SpkModel(GeneratorModel);

/// Summary of an l1 solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpkSolveInfo {
    pub residual_norm: f64,
    pub l1_norm: f64,
    pub tau: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Latent-descent settings; see [`spk_recon_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpkReconOptions {
    pub steps: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SpkStatus {
    match e {
        Error::Io { .. } => SpkStatus::Io,
        Error::BadMagic { .. } | Error::Truncated { .. } | Error::Format(_) | Error::Json(_) => SpkStatus::Format,
        Error::Shape(_) | Error::Consistency(_) => SpkStatus::Shape,
        Error::MissingClass(_) | Error::InvalidArgument(_) => SpkStatus::InvalidArgument,
        Error::NonFinite(_) => SpkStatus::NonFinite,
        Error::MissingArtifact(_) => SpkStatus::MissingArtifact,
        Error::Reconstruction(_) => SpkStatus::Reconstruction,
    }
}

/// Failure carried out of a guarded body.
struct Fail(SpkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: SpkStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SpkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SpkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            SpkStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SpkStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return fail(SpkStatus::NullPointer, format!("{what} is null"));
    }
    if len != want {
        return fail(SpkStatus::Shape, format!("{what} holds {len} values, need {want}"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SpkStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return fail(SpkStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(SpkStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return fail(SpkStatus::NullPointer, "output handle is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn image_of(pixels: &[f64], width: usize, height: usize) -> Result<GrayImage, Fail> {
    Ok(GrayImage::new(width, height, pixels.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// One speckle intensity pattern, row-major, `grid * grid` values.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_generate_speckle(grid: usize, cutoff: f64, seed: u64, out: *mut f64, out_len: usize) -> SpkStatus {
    guard(|| {
        let cfg = SpeckleConfig::new(grid, cutoff, seed)?;
        let out = output(out, out_len, grid * grid, "out")?;
        out.copy_from_slice(speckle::generate_speckle(&cfg)?.pixels());
        Ok(())
    })
}

/// Ideal low-pass filter of a `width x height` image at relative cutoff `cutoff`.
///
/// # Safety
/// `pixels` and `out` must each hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_low_pass(
    pixels: *const f64,
    width: usize,
    height: usize,
    cutoff: f64,
    out: *mut f64,
) -> SpkStatus {
    guard(|| {
        let n = width * height;
        let img = image_of(input(pixels, n, "pixels")?, width, height)?;
        let filtered = speckle::low_pass(&img, cutoff)?;
        output(out, n, n, "out")?.copy_from_slice(filtered.pixels());
        Ok(())
    })
}

/// Simulated speckle matrix: `count` patterns on a `grid x grid` field.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_build(
    count: usize,
    grid: usize,
    cutoff: f64,
    seed: u64,
    out: *mut *mut SpkMatrix,
) -> SpkStatus {
    guard(|| {
        let cfg = SpeckleConfig::new(grid, cutoff, seed)?;
        store(out, SpkMatrix(forward::build_matrix(count, &cfg)?))
    })
}

/// Matrix from `rows * cols` row-major values, copied.
///
/// # Safety
/// `data` must hold `rows * cols` doubles; `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_from_data(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut SpkMatrix,
) -> SpkStatus {
    guard(|| {
        let values = input(data, rows * cols, "data")?.to_vec();
        let m = MeasurementMatrix::from_rows(rows, cols, values, forward::Provenance::Recorded { tag: "ffi".into() })?;
        if !m.is_finite() {
            return fail(SpkStatus::NonFinite, "matrix data");
        }
        store(out, SpkMatrix(m))
    })
}

/// Matrix from a raw file with its JSON sidecar.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_load(file: *const c_char, out: *mut *mut SpkMatrix) -> SpkStatus {
    guard(|| {
        let p = path(file)?;
        store(out, SpkMatrix(MeasurementMatrix::load(&p)?))
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_rows(m: *const SpkMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_cols(m: *const SpkMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Bucket signal `y = A x` for a flattened image `x` of `cols` values.
///
/// # Safety
/// `x` must hold `x_len` doubles and `y` `y_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_measure(
    m: *const SpkMatrix,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> SpkStatus {
    guard(|| {
        let m = &handle(m, "matrix")?.0;
        let x = input(x, x_len, "x")?;
        if x_len != m.cols() {
            return fail(SpkStatus::Shape, format!("matrix has {} columns, x has {x_len}", m.cols()));
        }
        output(y, y_len, m.rows(), "y")?.copy_from_slice(&m.apply(x));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spk_matrix_free(m: *mut SpkMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

unsafe fn solve(
    m: *const SpkMatrix,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
    info: *mut SpkSolveInfo,
    run: impl FnOnce(&MeasurementMatrix, &[f64]) -> speckle_cs::Result<SolveReport>,
) -> SpkStatus {
    guard(|| {
        let m = &handle(m, "matrix")?.0;
        let y = input(y, y_len, "y")?;
        let x = output(x, x_len, m.cols(), "x")?;
        let report = run(m, y)?;
        x.copy_from_slice(&report.solution);
        if let Some(info) = info.as_mut() {
            *info = SpkSolveInfo {
                residual_norm: report.residual_norm,
                l1_norm: report.l1_norm,
                tau: report.tau,
                iterations: report.iterations,
                converged: report.converged,
            };
        }
        Ok(())
    })
}

/// Basis pursuit: `min ‖x‖₁` subject to `A x = y`.
///
/// # Safety
/// `y` must hold `y_len` doubles, `x` `x_len` writable doubles; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn spk_solve_bp(
    m: *const SpkMatrix,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
    info: *mut SpkSolveInfo,
) -> SpkStatus {
    solve(m, y, y_len, x, x_len, info, |a, y| l1::solve_bp(a, y, &BpdnConfig::default()))
}

/// Basis pursuit denoising: `min ‖x‖₁` subject to `‖A x − y‖₂ ≤ delta`.
///
/// # Safety
/// As for [`spk_solve_bp`].
#[no_mangle]
pub unsafe extern "C" fn spk_solve_bpdn(
    m: *const SpkMatrix,
    y: *const f64,
    y_len: usize,
    delta: f64,
    x: *mut f64,
    x_len: usize,
    info: *mut SpkSolveInfo,
) -> SpkStatus {
    solve(m, y, y_len, x, x_len, info, |a, y| l1::solve_bpdn(a, y, &BpdnConfig::with_delta(delta)))
}

/// Load a GGW1 generator file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn spk_model_load(file: *const c_char, out: *mut *mut SpkModel) -> SpkStatus {
    guard(|| {
        let p = path(file)?;
        store(out, SpkModel(generator::load_model(&p)?))
    })
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_model_latent_dim(model: *const SpkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.latent_dim())
}

/// Number of output pixels, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_model_output_len(model: *const SpkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.output_len())
}

/// Generator output `G(z)`, in the generator's own range.
///
/// # Safety
/// `z` must hold `z_len` doubles and `out` `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_model_forward(
    model: *const SpkModel,
    z: *const f64,
    z_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SpkStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let z = input(z, z_len, "z")?;
        let act = model.forward(z)?;
        output(out, out_len, model.output_len(), "out")?.copy_from_slice(act.to_image()?.pixels());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spk_model_free(model: *mut SpkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Library defaults for latent descent.
#[no_mangle]
pub extern "C" fn spk_recon_options_default() -> SpkReconOptions {
    let d = ReconConfig::default();
    SpkReconOptions {
        steps: d.steps,
        restarts: d.restarts,
        learning_rate: d.adam.lr,
        seed: d.seed,
    }
}

/// Reconstruction by gradient descent over the generator latent.
/// `image` receives `(G(ẑ) + 1) / 2`; `best_loss` may be null.
///
/// # Safety
/// `y` must hold `y_len` doubles and `image` `image_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_gan_reconstruct(
    model: *const SpkModel,
    m: *const SpkMatrix,
    y: *const f64,
    y_len: usize,
    options: SpkReconOptions,
    image: *mut f64,
    image_len: usize,
    best_loss: *mut f64,
) -> SpkStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let m = &handle(m, "matrix")?.0;
        let y = input(y, y_len, "y")?;
        let image = output(image, image_len, model.output_len(), "image")?;
        let cfg = ReconConfig {
            steps: options.steps,
            restarts: options.restarts,
            adam: AdamConfig {
                lr: options.learning_rate,
                ..AdamConfig::default()
            },
            seed: options.seed,
            plateau: None,
        };
        let result = recon::reconstruct(model, m, y, &cfg)?;
        image.copy_from_slice(result.image.pixels());
        if let Some(l) = best_loss.as_mut() {
            *l = result.best_loss;
        }
        Ok(())
    })
}

/// Pearson correlation of two equal-length vectors.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `r` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_pearson(a: *const f64, b: *const f64, len: usize, r: *mut f64) -> SpkStatus {
    guard(|| {
        let a = input(a, len, "a")?;
        let b = input(b, len, "b")?;
        if r.is_null() {
            return fail(SpkStatus::NullPointer, "r is null");
        }
        match metrics::pearson(a, b) {
            Some(v) => {
                *r = v;
                Ok(())
            }
            None => fail(SpkStatus::Undefined, "correlation is undefined for fewer than two samples or constant input"),
        }
    })
}
