//! C ABI over `blockrg`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Structured inputs (lattice specs,
//! kernels, site sets, run configs) are JSON strings in the same shapes the
//! command-line config uses. Every fallible call returns an [`RgStatus`]; on
//! failure the message is available from [`rg_last_error`] on the same
//! thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use blockrg::caps::Caps;
use blockrg::cli::{parse_config, run};
use blockrg::combinatorics::{epsilon_threshold, parse_rational, CountingParams};
use blockrg::error::RgError;
use blockrg::expansion::ursell;
use blockrg::jacobian::partial_derivative;
use blockrg::kernel::Kernel;
use blockrg::lattice::{Lattice, LatticeSpec, SiteSet};
use blockrg::rg::renormalize;
use blockrg::spin::Interaction;

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    Invalid = 1,
    CapExceeded = 2,
    Divergent = 3,
    Numerical = 4,
    NullPointer = 5,
    Utf8 = 6,
    Panic = 7,
}

/// A finite volume.
pub struct RgLattice(Lattice);

/// Couplings `J(X)` keyed by site set.
pub struct RgInteraction(Interaction);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(RgStatus, String);

impl From<RgError> for Fail {
    fn from(e: RgError) -> Fail {
        let status = match e {
            RgError::Invalid(_) => RgStatus::Invalid,
            RgError::CapExceeded { .. } => RgStatus::CapExceeded,
            RgError::Divergent(_) => RgStatus::Divergent,
            RgError::Numerical(_) => RgStatus::Numerical,
        };
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(RgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(RgStatus::Utf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(RgStatus::NullPointer, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(RgStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn bad_json(name: &'static str) -> impl Fn(serde_json::Error) -> Fail {
    move |e| Fail(RgStatus::Invalid, format!("{name}: {e}"))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a lattice from a spec such as
/// `{"geometry":"square_2d","extent":[4,4],"boundary":{"kind":"periodic"}}`.
///
/// # Safety
/// `spec_json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_lattice_new(spec_json: *const c_char, out: *mut *mut RgLattice) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        let spec: LatticeSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(bad_json("lattice spec"))?;
        let lat = Lattice::new(&spec)?;
        *out = Box::into_raw(Box::new(RgLattice(lat)));
        Ok(())
    })
}

/// # Safety
/// `lat` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_lattice_free(lat: *mut RgLattice) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

/// # Safety
/// `lat` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_lattice_num_sites(lat: *const RgLattice, out: *mut usize) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ref_arg(lat, "lat")?.0.len();
        Ok(())
    })
}

/// Parse couplings such as
/// `{"dim":1,"translation_invariant":true,"couplings":{"[[0],[1]]":0.5}}`.
///
/// # Safety
/// `text` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_interaction_from_json(text: *const c_char, out: *mut *mut RgInteraction) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        let j = Interaction::from_json(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(RgInteraction(j)));
        Ok(())
    })
}

/// Serialize couplings; free the result with [`rg_string_free`].
///
/// # Safety
/// `j` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_interaction_to_json(j: *const RgInteraction, out: *mut *mut c_char) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = owned_string(ref_arg(j, "j")?.0.to_json());
        Ok(())
    })
}

/// Coupling of one site set, zero when absent.
///
/// # Safety
/// `j` must be a live handle, `set_json` a valid C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_interaction_get(
    j: *const RgInteraction,
    set_json: *const c_char,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        let x = SiteSet::decode(str_arg(set_json, "set_json")?)?;
        *out = ref_arg(j, "j")?.0.get(&x);
        Ok(())
    })
}

/// # Safety
/// `j` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_interaction_free(j: *mut RgInteraction) {
    if !j.is_null() {
        drop(Box::from_raw(j));
    }
}

/// One exact RG step. Writes the image lattice and the renormalized
/// couplings with `|J′| ≤ drop_tol` removed (the constant is always kept).
///
/// # Safety
/// Handles must be live, `kernel_json` a valid C string, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rg_renormalize(
    lat: *const RgLattice,
    j: *const RgInteraction,
    kernel_json: *const c_char,
    drop_tol: f64,
    out_image: *mut *mut RgLattice,
    out_couplings: *mut *mut RgInteraction,
) -> RgStatus {
    guard(|| {
        out_arg(out_image, "out_image")?;
        out_arg(out_couplings, "out_couplings")?;
        let kernel: Kernel = serde_json::from_str(str_arg(kernel_json, "kernel_json")?).map_err(bad_json("kernel"))?;
        let r = renormalize(&ref_arg(lat, "lat")?.0, &ref_arg(j, "j")?.0, &kernel, &Caps::default())?;
        let (couplings, _) = r.interaction(drop_tol);
        *out_image = Box::into_raw(Box::new(RgLattice(r.image)));
        *out_couplings = Box::into_raw(Box::new(RgInteraction(couplings)));
        Ok(())
    })
}

/// `∂J′(Z)/∂J(W)` with `Z` in image coordinates.
///
/// # Safety
/// Handles must be live, strings valid C strings, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rg_partial_derivative(
    lat: *const RgLattice,
    j: *const RgInteraction,
    kernel_json: *const c_char,
    z_json: *const c_char,
    w_json: *const c_char,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        let kernel: Kernel = serde_json::from_str(str_arg(kernel_json, "kernel_json")?).map_err(bad_json("kernel"))?;
        let z = SiteSet::decode(str_arg(z_json, "z_json")?)?;
        let w = SiteSet::decode(str_arg(w_json, "w_json")?)?;
        *out = partial_derivative(&ref_arg(lat, "lat")?.0, &ref_arg(j, "j")?.0, &kernel, &z, &w, &Caps::default())?;
        Ok(())
    })
}

/// Ursell coefficient of the graph with row-major `n × n` adjacency
/// `adj` (non-zero = edge).
///
/// # Safety
/// `adj` must point to `n * n` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_ursell(adj: *const u8, n: usize, out: *mut i64) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        if adj.is_null() && n > 0 {
            return Err(Fail(RgStatus::NullPointer, "adj is null".into()));
        }
        let cells = if n == 0 { &[][..] } else { std::slice::from_raw_parts(adj, n * n) };
        let matrix: Vec<Vec<bool>> = cells.chunks(n.max(1)).map(|r| r.iter().map(|&x| x != 0).collect()).collect();
        *out = ursell(&matrix)?;
        Ok(())
    })
}

/// Largest activity `ε` for which the polymer series closes at `ln M`,
/// with `M = m_num / m_den`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_epsilon_threshold(
    p: u32,
    r: u32,
    c_link: u32,
    m_num: i64,
    m_den: i64,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        out_arg(out, "out")?;
        if m_den == 0 {
            return Err(Fail(RgStatus::Invalid, "m_den is zero".into()));
        }
        let m = parse_rational(&format!("{m_num}/{m_den}")).map_err(|e| Fail(RgStatus::Invalid, e))?;
        *out = epsilon_threshold(&CountingParams::new(p, r, c_link, m))?;
        Ok(())
    })
}

/// Run a full JSON config, as the command-line tool does, and write the
/// report JSON to `out_report` (free with [`rg_string_free`]). Artifact
/// contents are added under `"artifact_contents"`, keyed by file name. A
/// divergent run still
/// returns the report, with status `Divergent`.
///
/// # Safety
/// `config_json` must be a valid C string; `out_report` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_run_config(config_json: *const c_char, out_report: *mut *mut c_char) -> RgStatus {
    guard(|| {
        out_arg(out_report, "out_report")?;
        let config = parse_config(str_arg(config_json, "config_json")?)
            .map_err(|d| Fail(RgStatus::Invalid, d.to_string()))?;
        let out = run(&config)?;
        let mut report = serde_json::to_value(&out.report).expect("report serializes");
        let artifacts: serde_json::Map<String, serde_json::Value> = out
            .artifacts
            .iter()
            .map(|a| (a.name.clone(), serde_json::Value::String(a.contents.clone())))
            .collect();
        report["artifact_contents"] = serde_json::Value::Object(artifacts);
        *out_report = owned_string(report.to_string());
        if out.report.divergent {
            return Err(Fail(RgStatus::Divergent, "expansion flagged as divergent".into()));
        }
        Ok(())
    })
}
