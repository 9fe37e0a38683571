//! C ABI over the hykey toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_load`/`*_new`
//! and released by the matching `*_free`. Every fallible call returns a
//! [`HykeyStatus`]; on failure `hykey_last_error_message` describes the most
//! recent error on the calling thread. Panics never unwind into C; they are
//! reported as `HYKEY_STATUS_PANIC`.
//!
//! Array outputs use the two-call pattern: pass a null buffer to learn the
//! length, then a buffer of at least that many elements.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hykey::geometry::{
    estimate_homography_robust, Correspondence, GeometryError, Point, RobustConfig,
};
use hykey::hsidata::{default_wavelengths, load_cube, save_cube, HsiCube, HsiError};
use hykey::matching::{mnn_match, similarity, MatchingError};
use hykey::model::{Checkpoint, HyKeyNetwork, ModelError, NetworkOutput};

/// Result of every fallible call. Values 10 to 20 are the cube-file and
/// dataset codes of the core library, unchanged.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HykeyStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    BufferTooSmall = 4,
    Model = 5,
    Checkpoint = 6,
    Geometry = 7,
    Matching = 8,
    Io = 9,
    CubeBadMagic = 10,
    CubeUnsupportedVersion = 11,
    CubeHeaderSyntax = 12,
    CubeHeaderInconsistent = 13,
    CubePayloadLength = 14,
    CubeWavelengths = 15,
    CubeValueRange = 16,
    CubeMosaicDimensions = 17,
    InvalidSpec = 18,
    Manifest = 19,
    CubeIo = 20,
    Panic = 99,
}

/// A hyperspectral cube `[bands, height, width]`.
pub struct HykeyCube(HsiCube);

/// A network restored from a checkpoint.
pub struct HykeyNetwork(HyKeyNetwork);

/// Keypoints, scores and descriptors of one image.
pub struct HykeyFeatures(NetworkOutput);

/// A mutual nearest-neighbour match.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HykeyMatch {
    pub index0: u32,
    pub index1: u32,
    pub similarity: f32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HykeyStatus, String);

impl From<HsiError> for Failure {
    fn from(e: HsiError) -> Self {
        let status = match e.code() {
            10 => HykeyStatus::CubeBadMagic,
            11 => HykeyStatus::CubeUnsupportedVersion,
            12 => HykeyStatus::CubeHeaderSyntax,
            13 => HykeyStatus::CubeHeaderInconsistent,
            14 => HykeyStatus::CubePayloadLength,
            15 => HykeyStatus::CubeWavelengths,
            16 => HykeyStatus::CubeValueRange,
            17 => HykeyStatus::CubeMosaicDimensions,
            18 => HykeyStatus::InvalidSpec,
            19 => HykeyStatus::Manifest,
            _ => HykeyStatus::CubeIo,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Checkpoint(_) => HykeyStatus::Checkpoint,
            ModelError::Io(_) => HykeyStatus::Io,
            _ => HykeyStatus::Model,
        };
        Failure(status, e.to_string())
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        Failure(HykeyStatus::Geometry, e.to_string())
    }
}

impl From<MatchingError> for Failure {
    fn from(e: MatchingError) -> Self {
        Failure(HykeyStatus::Matching, e.to_string())
    }
}

fn fail<T>(status: HykeyStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HykeyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HykeyStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            HykeyStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(HykeyStatus::NullArgument, format!("{name} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(HykeyStatus::InvalidUtf8, format!("{name} is not UTF-8")),
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(HykeyStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(HykeyStatus::NullArgument, format!("{name} is null")))
}

/// Copies `src` to `dst` when it is non-null and large enough; always
/// reports the needed length.
unsafe fn copy_out<T: Copy>(
    src: &[T],
    dst: *mut T,
    capacity: usize,
    len_out: *mut usize,
) -> Result<(), Failure> {
    if let Some(l) = len_out.as_mut() {
        *l = src.len();
    }
    if dst.is_null() {
        return Ok(());
    }
    if capacity < src.len() {
        return fail(
            HykeyStatus::BufferTooSmall,
            format!("buffer holds {capacity} elements, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// cbindgen:ignore
static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hykey_version() -> *const c_char {
    VERSION.as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hykey_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a cube file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hykey_cube_load(
    path: *const c_char,
    out: *mut *mut HykeyCube,
) -> HykeyStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cube = load_cube(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(HykeyCube(cube)));
        Ok(())
    })
}

/// Builds a cube from band-major `[bands, height, width]` values in [0, 1]
/// with evenly spaced default wavelengths.
///
/// # Safety
/// `data` must point to `len` floats and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hykey_cube_new(
    bands: usize,
    height: usize,
    width: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut HykeyCube,
) -> HykeyStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        if data.is_null() {
            return fail(HykeyStatus::NullArgument, "data is null");
        }
        let expected = bands.checked_mul(height).and_then(|n| n.checked_mul(width));
        if expected != Some(len) {
            return fail(
                HykeyStatus::InvalidArgument,
                format!("{len} values for a {bands}x{height}x{width} cube"),
            );
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let cube = HsiCube::new(bands, height, width, default_wavelengths(bands), values)?;
        *out = Box::into_raw(Box::new(HykeyCube(cube)));
        Ok(())
    })
}

/// Writes a cube file.
///
/// # Safety
/// `cube` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hykey_cube_save(
    cube: *const HykeyCube,
    path: *const c_char,
) -> HykeyStatus {
    guard(|| {
        let cube = handle(cube, "cube")?;
        save_cube(&cube.0, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Shape of a cube; any output pointer may be null.
///
/// # Safety
/// `cube` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hykey_cube_shape(
    cube: *const HykeyCube,
    bands: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> HykeyStatus {
    guard(|| {
        let c = &handle(cube, "cube")?.0;
        for (p, v) in [(bands, c.bands()), (height, c.height()), (width, c.width())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `cube` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn hykey_cube_free(cube: *mut HykeyCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}

/// Restores a network from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hykey_network_load(
    path: *const c_char,
    out: *mut *mut HykeyNetwork,
) -> HykeyStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let net = Checkpoint::load(path_arg(path, "path")?)?.to_network()?;
        *out = Box::into_raw(Box::new(HykeyNetwork(net)));
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn hykey_network_free(net: *mut HykeyNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Detects up to `max_keypoints` keypoints and describes them.
///
/// # Safety
/// `net` and `cube` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hykey_network_infer(
    net: *const HykeyNetwork,
    cube: *const HykeyCube,
    max_keypoints: usize,
    out: *mut *mut HykeyFeatures,
) -> HykeyStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let (net, cube) = (handle(net, "net")?, handle(cube, "cube")?);
        let f = net.0.infer(&cube.0, max_keypoints)?;
        *out = Box::into_raw(Box::new(HykeyFeatures(f)));
        Ok(())
    })
}

/// Number of keypoints and descriptor length; either pointer may be null.
///
/// # Safety
/// `features` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn hykey_features_size(
    features: *const HykeyFeatures,
    count: *mut usize,
    dim: *mut usize,
) -> HykeyStatus {
    guard(|| {
        let f = &handle(features, "features")?.0;
        if let Some(c) = count.as_mut() {
            *c = f.keypoints.len();
        }
        if let Some(d) = dim.as_mut() {
            *d = f.descriptors.shape()[1];
        }
        Ok(())
    })
}

/// Keypoints as interleaved `x, y` pixel coordinates (`2 * count` floats).
///
/// # Safety
/// `xy` must be null or hold `capacity` floats; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn hykey_features_keypoints(
    features: *const HykeyFeatures,
    xy: *mut f32,
    capacity: usize,
    len: *mut usize,
) -> HykeyStatus {
    guard(|| {
        let f = &handle(features, "features")?.0;
        let flat: Vec<f32> = f.keypoints.iter().flatten().copied().collect();
        copy_out(&flat, xy, capacity, len)
    })
}

/// Detection scores, one per keypoint.
///
/// # Safety
/// `scores` must be null or hold `capacity` floats; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn hykey_features_scores(
    features: *const HykeyFeatures,
    scores: *mut f32,
    capacity: usize,
    len: *mut usize,
) -> HykeyStatus {
    guard(|| {
        copy_out(
            &handle(features, "features")?.0.scores,
            scores,
            capacity,
            len,
        )
    })
}

/// Unit-norm descriptors, row-major `[count, dim]`.
///
/// # Safety
/// `descriptors` must be null or hold `capacity` floats; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn hykey_features_descriptors(
    features: *const HykeyFeatures,
    descriptors: *mut f32,
    capacity: usize,
    len: *mut usize,
) -> HykeyStatus {
    guard(|| {
        copy_out(
            handle(features, "features")?.0.descriptors.data(),
            descriptors,
            capacity,
            len,
        )
    })
}

/// # Safety
/// `features` must come from this library and not be used afterwards. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn hykey_features_free(features: *mut HykeyFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Mutual nearest-neighbour matches between two feature sets, sorted by
/// `index0`. `min_similarity` below -1 disables the similarity floor.
///
/// # Safety
/// Handles must come from this library; `matches` must be null or hold
/// `capacity` elements; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn hykey_match(
    a: *const HykeyFeatures,
    b: *const HykeyFeatures,
    min_similarity: f32,
    matches: *mut HykeyMatch,
    capacity: usize,
    len: *mut usize,
) -> HykeyStatus {
    guard(|| {
        let (a, b) = (&handle(a, "a")?.0, &handle(b, "b")?.0);
        let found = if a.keypoints.is_empty() || b.keypoints.is_empty() {
            vec![]
        } else {
            let floor = (min_similarity >= -1.0).then_some(min_similarity);
            mnn_match(&similarity(&a.descriptors, &b.descriptors)?, floor)
        };
        let out: Vec<HykeyMatch> = found
            .iter()
            .map(|m| HykeyMatch {
                index0: m.i as u32,
                index1: m.j as u32,
                similarity: m.similarity,
            })
            .collect();
        copy_out(&out, matches, capacity, len)
    })
}

/// Robust homography mapping `points0` onto `points1` (interleaved `x, y`,
/// `count` points each). Writes the row-major 3x3 matrix to `h` and, if
/// `inliers` is non-null, one 0/1 flag per point.
///
/// # Safety
/// `points0`/`points1` must hold `2 * count` doubles, `h` nine doubles and
/// `inliers` (if non-null) `count` bytes.
#[no_mangle]
pub unsafe extern "C" fn hykey_estimate_homography(
    points0: *const f64,
    points1: *const f64,
    count: usize,
    threshold: f64,
    seed: u64,
    h: *mut f64,
    inliers: *mut u8,
) -> HykeyStatus {
    guard(|| {
        if points0.is_null() || points1.is_null() || h.is_null() {
            return fail(
                HykeyStatus::NullArgument,
                "points0, points1 and h must be non-null",
            );
        }
        if !(threshold > 0.0 && threshold.is_finite()) {
            return fail(
                HykeyStatus::InvalidArgument,
                format!("threshold {threshold} must be positive"),
            );
        }
        let (p0, p1) = (
            std::slice::from_raw_parts(points0, 2 * count),
            std::slice::from_raw_parts(points1, 2 * count),
        );
        let matches: Vec<Correspondence> = (0..count)
            .map(|i| {
                Correspondence::from_points(
                    Point::new(p0[2 * i], p0[2 * i + 1]),
                    Point::new(p1[2 * i], p1[2 * i + 1]),
                )
            })
            .collect();
        let config = RobustConfig {
            seed,
            ..RobustConfig::homography(threshold)
        };
        let est = estimate_homography_robust(&matches, &config)?;
        let m = est.homography.matrix();
        let out = std::slice::from_raw_parts_mut(h, 9);
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = m[(r, c)];
            }
        }
        if !inliers.is_null() {
            let flags = std::slice::from_raw_parts_mut(inliers, count);
            for (f, &b) in flags.iter_mut().zip(&est.inliers) {
                *f = b as u8;
            }
        }
        Ok(())
    })
}
