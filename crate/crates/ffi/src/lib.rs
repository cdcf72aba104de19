//! C ABI over `grassdim`.
//!
//! Every fallible call returns a [`GdStatus`] and writes its result through an out pointer.
//! Handles are opaque and owned by the caller once returned; release them with the matching
//! `*_free` function. The message of the most recent failure on the calling thread is available
//! from [`gd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use grassdim::dimension::{boxdim_estimate, default_s_grid, energy_slope_dim};
use grassdim::error::Error;
use grassdim::experiments::{run_experiment, ExperimentConfig};
use grassdim::fractals::lookup;
use grassdim::grassmann::{dpi_distance, sample_uniform, Subspace};
use grassdim::io::read_cloud;
use grassdim::measures::{pushforward, riesz_energy, PointCloud};
use grassdim::seeding::stream_rng;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    DegeneratePair = 4,
    Resolution = 5,
    Saturation = 6,
    InsufficientRange = 7,
    SizeLimit = 8,
    Precondition = 9,
    EmptySet = 10,
    Config = 11,
    Format = 12,
    Io = 13,
    Panic = 99,
}

impl From<&Error> for GdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch(_) => GdStatus::DimensionMismatch,
            Error::InvalidParameter(_) => GdStatus::InvalidArgument,
            Error::DegeneratePair(_) => GdStatus::DegeneratePair,
            Error::Resolution { .. } => GdStatus::Resolution,
            Error::Saturation { .. } => GdStatus::Saturation,
            Error::InsufficientRange { .. } => GdStatus::InsufficientRange,
            Error::Size(_) => GdStatus::SizeLimit,
            Error::Precondition { .. } => GdStatus::Precondition,
            Error::EmptySet(_) => GdStatus::EmptySet,
            Error::Config(_) => GdStatus::Config,
            Error::Format(_) => GdStatus::Format,
            Error::Io(_) => GdStatus::Io,
        }
    }
}

/// Weighted point cloud.
pub struct GdCloud(PointCloud);

/// Point of a Grassmannian.
pub struct GdSubspace(Subspace);

/// Serialized experiment report.
pub struct GdReport(CString);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            GdStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            GdStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_last_error(msg);
            GdStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            GdStatus::from(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            GdStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failure on this thread; empty after a success. Valid until the next call.
#[no_mangle]
pub extern "C" fn gd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------------------
// Clouds

/// Builds a cloud from `count` row-major points in `dim` coordinates. `weights` may be null
/// for unit weights.
///
/// # Safety
/// `coords` must hold `dim * count` doubles and `weights`, when non-null, `count` doubles.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_new(
    dim: usize,
    coords: *const f64,
    weights: *const f64,
    count: usize,
    out: *mut *mut GdCloud,
) -> GdStatus {
    guard(|| {
        if coords.is_null() && count > 0 {
            return Err(Failure::Null("coords"));
        }
        let len = dim.checked_mul(count).ok_or_else(|| Failure::Arg("dim * count overflows".into()))?;
        let xs = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(coords, len).to_vec() };
        let cloud = if weights.is_null() {
            PointCloud::with_unit_weights(dim, xs)?
        } else {
            PointCloud::new(dim, xs, std::slice::from_raw_parts(weights, count).to_vec())?
        };
        write_out(out, boxed(GdCloud(cloud)))
    })
}

/// Generates a corpus cloud by key; `depth` 0 selects the default depth.
///
/// # Safety
/// `key` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_generate(key: *const c_char, depth: u32, out: *mut *mut GdCloud) -> GdStatus {
    guard(|| {
        let entry = lookup(text(key, "key")?)?;
        let cloud = entry.generate((depth > 0).then_some(depth))?;
        write_out(out, boxed(GdCloud(cloud)))
    })
}

/// Reads a CSV or binary cloud file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_read(path: *const c_char, out: *mut *mut GdCloud) -> GdStatus {
    guard(|| {
        let cloud = read_cloud(Path::new(text(path, "path")?))?;
        write_out(out, boxed(GdCloud(cloud)))
    })
}

/// Ambient dimension, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_dim(cloud: *const GdCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.dim())
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_len(cloud: *const GdCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coordinates (row-major) into `buf`, which must hold `dim * len` doubles.
///
/// # Safety
/// `buf` must be writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_coords(cloud: *const GdCloud, buf: *mut f64, capacity: usize) -> GdStatus {
    guard(|| {
        let c = borrow(cloud, "cloud")?;
        let src = c.0.coords();
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if capacity < src.len() {
            return Err(Failure::Arg(format!("buffer holds {capacity} values, need {}", src.len())));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gd_cloud_free(cloud: *mut GdCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

// ---------------------------------------------------------------------------------------
// Subspaces

/// Uniform sample of G(n, m) from stream `index` of `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gd_subspace_sample(
    n: usize,
    m: usize,
    seed: u64,
    index: u64,
    out: *mut *mut GdSubspace,
) -> GdStatus {
    guard(|| {
        let v = sample_uniform(n, m, &mut stream_rng(seed, index))?;
        write_out(out, boxed(GdSubspace(v)))
    })
}

/// Subspace spanned by the `m` rows of a row-major frame (`m * n` doubles), orthonormalised.
///
/// # Safety
/// `frame` must hold `m * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn gd_subspace_from_frame(
    n: usize,
    m: usize,
    frame: *const f64,
    out: *mut *mut GdSubspace,
) -> GdStatus {
    guard(|| {
        if frame.is_null() {
            return Err(Failure::Null("frame"));
        }
        let len = n.checked_mul(m).ok_or_else(|| Failure::Arg("n * m overflows".into()))?;
        let v = Subspace::from_row_major(n, m, std::slice::from_raw_parts(frame, len))?;
        write_out(out, boxed(GdSubspace(v)))
    })
}

/// Distance between the orthogonal projections.
///
/// # Safety
/// Both handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_subspace_distance(
    v: *const GdSubspace,
    w: *const GdSubspace,
    out: *mut f64,
) -> GdStatus {
    guard(|| {
        let d = dpi_distance(&borrow(v, "v")?.0, &borrow(w, "w")?.0)?;
        write_out(out, d)
    })
}

/// # Safety
/// `v` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gd_subspace_free(v: *mut GdSubspace) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

// ---------------------------------------------------------------------------------------
// Estimators

/// Pushforward of `cloud` under the projection onto `v`, in frame coordinates.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_project(
    cloud: *const GdCloud,
    v: *const GdSubspace,
    out: *mut *mut GdCloud,
) -> GdStatus {
    guard(|| {
        let p = pushforward(&borrow(cloud, "cloud")?.0, &borrow(v, "v")?.0)?;
        write_out(out, boxed(GdCloud(p)))
    })
}

/// Box-counting estimate over dyadic levels `j_min..=j_max`.
///
/// # Safety
/// `cloud` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_boxdim(cloud: *const GdCloud, j_min: u32, j_max: u32, out: *mut f64) -> GdStatus {
    guard(|| {
        let est = boxdim_estimate(&borrow(cloud, "cloud")?.0, j_min, j_max)?;
        write_out(out, est.value)
    })
}

/// Energy-slope estimate on the grid `s_step, 2 s_step, … < dim`.
///
/// # Safety
/// `cloud` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_energy_dim(cloud: *const GdCloud, s_step: f64, out: *mut f64) -> GdStatus {
    guard(|| {
        let c = &borrow(cloud, "cloud")?.0;
        if !(s_step > 0.0 && s_step.is_finite()) {
            return Err(Failure::Arg(format!("s_step must be positive, got {s_step}")));
        }
        let est = energy_slope_dim(c, &default_s_grid(c.dim(), s_step))?;
        write_out(out, est.value)
    })
}

/// Riesz s-energy over distinct pairs.
///
/// # Safety
/// `cloud` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_riesz_energy(cloud: *const GdCloud, s: f64, out: *mut f64) -> GdStatus {
    guard(|| write_out(out, riesz_energy(&borrow(cloud, "cloud")?.0, s)?))
}

// ---------------------------------------------------------------------------------------
// Experiments

/// Runs an experiment from TOML text; `threads` 0 uses the default pool.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gd_experiment_run(
    config_toml: *const c_char,
    threads: usize,
    out: *mut *mut GdReport,
) -> GdStatus {
    guard(|| {
        let config = ExperimentConfig::from_toml_str(text(config_toml, "config_toml")?)?;
        let report = run_experiment(&config, (threads > 0).then_some(threads))?;
        let json = CString::new(report.to_json()?).map_err(|e| Failure::Arg(e.to_string()))?;
        write_out(out, boxed(GdReport(json)))
    })
}

/// JSON text of a report, owned by the handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gd_report_json(report: *const GdReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.0.as_ptr())
}

/// # Safety
/// `report` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn gd_report_free(report: *mut GdReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
