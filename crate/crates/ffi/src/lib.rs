//! C ABI for the simulator: opaque handles, integer error codes, and
//! UTF-8 buffers. The header `include/anniwalk.h` is generated by
//! cbindgen at build time.
//!
//! Conventions: every fallible call returns an `AwStatus`; outputs are
//! written through pointers. Handles are created and destroyed in pairs
//! (`*_new`/`*_free`); passing a null handle returns `NullPointer`.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use anniwalk::conductance::{build_conductances, Conductances};
use anniwalk::experiments::{run, ExperimentConfig};
use anniwalk::geometry::{build_interface, build_lattice, DomainSpec, LatticeGraph, Side};
use anniwalk::jn::{jn_table, PiPoly};

/// Status codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BadConfig = 3,
    GeometryError = 4,
    NumericsError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque domain description.
pub struct AwDomain {
    spec: DomainSpec,
}

/// Opaque lattice with its conductances.
pub struct AwLattice {
    lat: LatticeGraph,
    cond: Conductances,
}

/// Opaque table of exact constants.
pub struct AwJnTable {
    table: Vec<PiPoly>,
}

fn classify(err: &anniwalk::Error) -> AwStatus {
    use anniwalk::Error::*;
    match err {
        Config(_) | Json(_) | Io(_) => AwStatus::BadConfig,
        EmptyLattice | DisconnectedAnchor(_) | NoPairableSite { .. } => AwStatus::GeometryError,
        _ => AwStatus::NumericsError,
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, AwStatus> {
    if ptr.is_null() {
        return Err(AwStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| AwStatus::InvalidUtf8)
}

fn write_buffer(text: &str, buf: *mut c_char, cap: usize) -> AwStatus {
    if buf.is_null() {
        return AwStatus::NullPointer;
    }
    let bytes = text.as_bytes();
    if bytes.len() + 1 > cap {
        return AwStatus::BufferTooSmall;
    }
    unsafe {
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
        *buf.add(bytes.len()) = 0;
    }
    AwStatus::Ok
}

fn guarded<F: FnOnce() -> AwStatus>(f: F) -> AwStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(AwStatus::Panic)
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn aw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parse a domain from its JSON description.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aw_domain_from_json(
    json: *const c_char,
    out: *mut *mut AwDomain,
) -> AwStatus {
    guarded(|| {
        if out.is_null() {
            return AwStatus::NullPointer;
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match DomainSpec::from_json(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(AwDomain { spec }));
                AwStatus::Ok
            }
            Err(e) => classify(&e),
        }
    })
}

/// # Safety
/// `d` must come from `aw_domain_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn aw_domain_free(d: *mut AwDomain) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Build the lattice of one side (`side`: 0 plus, 1 minus) at level `j`.
///
/// # Safety
/// `d` must be a live domain handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aw_lattice_build(
    d: *const AwDomain,
    side: u32,
    j: u32,
    out: *mut *mut AwLattice,
) -> AwStatus {
    guarded(|| {
        if d.is_null() || out.is_null() {
            return AwStatus::NullPointer;
        }
        let spec = &(*d).spec;
        let side = if side == 0 { Side::Plus } else { Side::Minus };
        let lat = match build_lattice(spec, side, j) {
            Ok(l) => l,
            Err(e) => return classify(&e),
        };
        let cond = match build_conductances(&lat, spec.rho(side)) {
            Ok(c) => c,
            Err(e) => return classify(&e),
        };
        *out = Box::into_raw(Box::new(AwLattice { lat, cond }));
        AwStatus::Ok
    })
}

/// # Safety
/// `l` must come from `aw_lattice_build` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn aw_lattice_free(l: *mut AwLattice) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// Vertex, edge, and boundary counts of a built lattice.
///
/// # Safety
/// `l` must be a live lattice handle; out pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn aw_lattice_counts(
    l: *const AwLattice,
    vertices: *mut usize,
    edges: *mut usize,
    boundary: *mut usize,
) -> AwStatus {
    guarded(|| {
        if l.is_null() {
            return AwStatus::NullPointer;
        }
        let lat = &(*l).lat;
        if !vertices.is_null() {
            *vertices = lat.len();
        }
        if !edges.is_null() {
            *edges = lat.edges.len();
        }
        if !boundary.is_null() {
            *boundary = lat.boundary_count();
        }
        AwStatus::Ok
    })
}

/// Total vertex measure of the lattice walk.
///
/// # Safety
/// `l` must be a live lattice handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn aw_lattice_total_measure(
    l: *const AwLattice,
    out: *mut f64,
) -> AwStatus {
    guarded(|| {
        if l.is_null() || out.is_null() {
            return AwStatus::NullPointer;
        }
        *out = (*l).cond.m_total;
        AwStatus::Ok
    })
}

/// Total interface surface measure between the two sides at level `j`.
///
/// # Safety
/// `d` must be a live domain handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn aw_interface_total_measure(
    d: *const AwDomain,
    j: u32,
    out: *mut f64,
) -> AwStatus {
    guarded(|| {
        if d.is_null() || out.is_null() {
            return AwStatus::NullPointer;
        }
        let spec = &(*d).spec;
        let lp = match build_lattice(spec, Side::Plus, j) {
            Ok(l) => l,
            Err(e) => return classify(&e),
        };
        let lm = match build_lattice(spec, Side::Minus, j) {
            Ok(l) => l,
            Err(e) => return classify(&e),
        };
        match build_interface(spec, &lp, &lm) {
            Ok(i) => {
                *out = i.sigma_total;
                AwStatus::Ok
            }
            Err(e) => classify(&e),
        }
    })
}

/// Allocate the exact constant table `J_0 .. J_n_max`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn aw_jn_table_new(n_max: u32, out: *mut *mut AwJnTable) -> AwStatus {
    guarded(|| {
        if out.is_null() {
            return AwStatus::NullPointer;
        }
        if n_max > 40 {
            return AwStatus::BadConfig;
        }
        *out = Box::into_raw(Box::new(AwJnTable {
            table: jn_table(n_max),
        }));
        AwStatus::Ok
    })
}

/// # Safety
/// `t` must come from `aw_jn_table_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn aw_jn_table_free(t: *mut AwJnTable) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Floating value of `J_n`.
///
/// # Safety
/// `t` must be a live table handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn aw_jn_decimal(t: *const AwJnTable, n: u32, out: *mut f64) -> AwStatus {
    guarded(|| {
        if t.is_null() || out.is_null() {
            return AwStatus::NullPointer;
        }
        let table = &(*t).table;
        if n as usize >= table.len() {
            return AwStatus::BadConfig;
        }
        *out = table[n as usize].eval_f64();
        AwStatus::Ok
    })
}

/// Exact value of `J_n` as a string like `4 + 10/3*pi`.
///
/// # Safety
/// `t` must be a live table handle; `buf` must hold `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn aw_jn_exact_string(
    t: *const AwJnTable,
    n: u32,
    buf: *mut c_char,
    cap: usize,
) -> AwStatus {
    guarded(|| {
        if t.is_null() {
            return AwStatus::NullPointer;
        }
        let table = &(*t).table;
        if n as usize >= table.len() {
            return AwStatus::BadConfig;
        }
        write_buffer(&format!("{}", table[n as usize]), buf, cap)
    })
}

/// Run an experiment from a JSON config; the manifest is written back as
/// JSON. `pass` receives 1 when every gated check passed.
///
/// # Safety
/// `json` must be NUL-terminated; `buf` must hold `cap` writable bytes;
/// `pass` may be null.
#[no_mangle]
pub unsafe extern "C" fn aw_run_experiment(
    json: *const c_char,
    buf: *mut c_char,
    cap: usize,
    pass: *mut i32,
) -> AwStatus {
    guarded(|| {
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match ExperimentConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => return classify(&e),
        };
        match run(&cfg) {
            Ok(manifest) => {
                if !pass.is_null() {
                    *pass = i32::from(manifest.pass);
                }
                let body = match serde_json::to_string_pretty(&manifest) {
                    Ok(b) => b,
                    Err(_) => return AwStatus::NumericsError,
                };
                write_buffer(&body, buf, cap)
            }
            Err(e) => classify(&e),
        }
    })
}
