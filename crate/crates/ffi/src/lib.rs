//! C ABI over the valgauge library.
//!
//! Every function returns a [`VgStatus`]. On failure the thread's last error
//! message is set and can be read with [`vg_last_error_message`]. Outputs are
//! written through caller-provided pointers and left untouched on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use valgauge::metrics::{var_pct, wasserstein1};
use valgauge::topology::{circular_inversion_distance, cis, CircularSequence};
use valgauge::verifier::{self, HashedEncoder, VerifierParams};
use valgauge::{validate_profile, EmpiricalDistribution, ValueDimension, NUM_VALUES};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Panic = 5,
}

/// A verifier with its text encoder. Create with `vg_verifier_new_random` or
/// `vg_verifier_load`, release with `vg_verifier_free`.
pub struct VgVerifier {
    params: VerifierParams,
    encoder: HashedEncoder,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

type FfiResult = Result<(), (VgStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> VgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            VgStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VgStatus::Panic
        }
    }
}

fn invalid(msg: impl ToString) -> (VgStatus, String) {
    (VgStatus::InvalidArgument, msg.to_string())
}

fn null(name: &str) -> (VgStatus, String) {
    (VgStatus::NullPointer, format!("{name} is null"))
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], (VgStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, (VgStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

fn write<T>(out: *mut T, value: T, name: &str) -> FfiResult {
    if out.is_null() {
        return Err(null(name));
    }
    // SAFETY: non-null, and the caller promises it points to writable memory.
    unsafe { out.write(value) };
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next valgauge call on the same thread.
#[no_mangle]
pub extern "C" fn vg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// 1-Wasserstein distance between two uniform empirical distributions.
///
/// # Safety
/// `p` and `q` must point to `n` and `m` doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn vg_wasserstein1(p: *const f64, n: usize, q: *const f64, m: usize, out: *mut f64) -> VgStatus {
    guard(|| {
        let p = EmpiricalDistribution::new(slice(p, n, "p")?.to_vec()).map_err(invalid)?;
        let q = EmpiricalDistribution::new(slice(q, m, "q")?.to_vec()).map_err(invalid)?;
        write(out, wasserstein1(&p, &q), "out")
    })
}

/// Var% of a simulated sample against ground truth.
///
/// # Safety
/// `sim` and `gt` must point to `n` and `m` doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn vg_var_pct(sim: *const f64, n: usize, gt: *const f64, m: usize, out: *mut f64) -> VgStatus {
    guard(|| {
        let v = var_pct(slice(sim, n, "sim")?, slice(gt, m, "gt")?).map_err(invalid)?;
        write(out, v, "out")
    })
}

fn sequence(idx: &[u8], name: &str) -> Result<CircularSequence, (VgStatus, String)> {
    let dims = idx
        .iter()
        .map(|&i| {
            ValueDimension::from_index(i as usize).ok_or_else(|| invalid(format!("{name}: index {i} is not 0..9")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    CircularSequence::new(dims).map_err(|e| invalid(format!("{name}: {e}")))
}

/// Minimum inversion distance over rotations of `obs` against `gt`. Both hold
/// the same `n` value indices (0 = Self-Direction ... 9 = Universalism).
///
/// # Safety
/// `obs` and `gt` must point to `n` bytes; `out` to one size_t.
#[no_mangle]
pub unsafe extern "C" fn vg_circular_inversion_distance(
    obs: *const u8,
    gt: *const u8,
    n: usize,
    out: *mut usize,
) -> VgStatus {
    guard(|| {
        let o = sequence(slice(obs, n, "obs")?, "obs")?;
        let g = sequence(slice(gt, n, "gt")?, "gt")?;
        write(out, circular_inversion_distance(&o, &g).map_err(invalid)?, "out")
    })
}

/// Circular Inversion Score in [0, 1]; arguments as for
/// `vg_circular_inversion_distance`.
///
/// # Safety
/// `obs` and `gt` must point to `n` bytes; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn vg_cis(obs: *const u8, gt: *const u8, n: usize, out: *mut f64) -> VgStatus {
    guard(|| {
        let o = sequence(slice(obs, n, "obs")?, "obs")?;
        let g = sequence(slice(gt, n, "gt")?, "gt")?;
        write(out, cis(&o, &g).map_err(invalid)?, "out")
    })
}

fn boxed(v: VgVerifier, out: *mut *mut VgVerifier) -> FfiResult {
    if out.is_null() {
        return Err(null("out"));
    }
    write(out, Box::into_raw(Box::new(v)), "out")
}

/// Randomly initialized verifier of embedding width `width` (at least 2).
///
/// # Safety
/// `out` must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn vg_verifier_new_random(
    width: usize,
    seed: u64,
    encoder_seed: u64,
    out: *mut *mut VgVerifier,
) -> VgStatus {
    guard(|| {
        if width < 2 {
            return Err(invalid("width must be at least 2"));
        }
        boxed(
            VgVerifier {
                params: VerifierParams::random(width, seed),
                encoder: HashedEncoder::new(width, encoder_seed),
            },
            out,
        )
    })
}

/// Loads a params file written by `valgauge train-verifier`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable storage for one
/// handle.
#[no_mangle]
pub unsafe extern "C" fn vg_verifier_load(
    path: *const c_char,
    encoder_seed: u64,
    out: *mut *mut VgVerifier,
) -> VgStatus {
    guard(|| {
        let path = string(path, "path")?;
        let text = std::fs::read_to_string(Path::new(path)).map_err(|e| (VgStatus::Io, format!("{path}: {e}")))?;
        let params = VerifierParams::from_text(&text).map_err(|e| (VgStatus::Parse, format!("{path}: {e}")))?;
        let encoder = HashedEncoder::new(params.width(), encoder_seed);
        boxed(VgVerifier { params, encoder }, out)
    })
}

/// Embedding width of a verifier.
///
/// # Safety
/// `handle` must come from this library and not be freed; `out` must point to
/// one size_t.
#[no_mangle]
pub unsafe extern "C" fn vg_verifier_width(handle: *const VgVerifier, out: *mut usize) -> VgStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        write(out, h.params.width(), "out")
    })
}

/// Scores `action` in `context` for an agent with the given ten value scores
/// in [-1, 1]. When `activation` is not null, the ten attention weights are
/// written there as well.
///
/// # Safety
/// `handle` must be live; strings NUL-terminated; `profile` must point to 10
/// doubles, `score` to one, and `activation` to 10 or be null.
#[no_mangle]
pub unsafe extern "C" fn vg_verifier_score(
    handle: *const VgVerifier,
    action: *const c_char,
    context: *const c_char,
    profile: *const f64,
    score: *mut f64,
    activation: *mut f64,
) -> VgStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let action = string(action, "action")?;
        let context = string(context, "context")?;
        let profile = validate_profile(slice(profile, NUM_VALUES, "profile")?).map_err(invalid)?;
        if score.is_null() {
            return Err(null("score"));
        }
        let s = verifier::score(&h.params, &h.encoder, action, context, &profile).map_err(invalid)?;
        write(score, s.score, "score")?;
        if !activation.is_null() {
            // SAFETY: the caller provides room for NUM_VALUES doubles.
            ptr::copy_nonoverlapping(s.activation.weights().as_ptr(), activation, NUM_VALUES);
        }
        Ok(())
    })
}

/// Releases a verifier. Null is ignored.
///
/// # Safety
/// `handle` must be null or a live handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn vg_verifier_free(handle: *mut VgVerifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
