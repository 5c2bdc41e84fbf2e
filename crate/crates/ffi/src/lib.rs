//! C ABI over `witten-core`: opaque handles, integer status codes and a
//! thread-local last-error message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use witten_core::config::{ConfigError, Fixture, SolverKind};
use witten_core::kramers::{evaluate, prefactor, radial_predict};
use witten_core::labeling::{LabelingResult, RadialLabeling};
use witten_core::potential::Potential;
use witten_core::spectral::{assemble_radial, assemble_witten, smallest_eigs, EigOptions};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WittenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Config = 4,
    Labeling = 5,
    Prediction = 6,
    Spectral = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// A parsed potential.
pub struct WittenPotential(Potential);

/// A fixture loaded from TOML, with its labeling computed on demand.
pub struct WittenFixture {
    fixture: Fixture,
    labeling: Option<LabelingResult>,
    radial: Option<RadialLabeling>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: WittenStatus, msg: impl std::fmt::Display) -> WittenStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> WittenStatus) -> WittenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(WittenStatus::Panic, "internal panic"),
    }
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, WittenStatus> {
    if s.is_null() {
        return Err(fail(WittenStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(WittenStatus::InvalidArgument, "string is not UTF-8"))
}

fn config_status(e: &ConfigError) -> WittenStatus {
    match e {
        ConfigError::Toml(_) | ConfigError::Potential(_) => WittenStatus::Parse,
        ConfigError::Labeling(_) | ConfigError::Sublevel(_) => WittenStatus::Labeling,
        _ => WittenStatus::Config,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn witten_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`) and returns the full length including
/// the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn witten_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Parses `source` as a potential in `dim` variables `x1..xd`.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn witten_potential_new(source: *const c_char, dim: usize, out: *mut *mut WittenPotential) -> WittenStatus {
    guard(|| {
        if out.is_null() {
            return fail(WittenStatus::NullPointer, "null output pointer");
        }
        let src = match text(source) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match Potential::parse(src, dim) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(WittenPotential(p)));
                WittenStatus::Ok
            }
            Err(e) => fail(WittenStatus::Parse, e),
        }
    })
}

/// Releases a potential; null is ignored.
///
/// # Safety
/// `p` must come from `witten_potential_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn witten_potential_free(p: *mut WittenPotential) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Value at `x` (length `dim`) and, when `grad` is non-null, the gradient.
///
/// # Safety
/// `x` must point to `dim` doubles, `value` to one double and `grad` (if
/// non-null) to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn witten_potential_eval(
    p: *const WittenPotential,
    x: *const f64,
    dim: usize,
    value: *mut f64,
    grad: *mut f64,
) -> WittenStatus {
    guard(|| {
        if p.is_null() || x.is_null() || value.is_null() {
            return fail(WittenStatus::NullPointer, "null argument");
        }
        let p = &(*p).0;
        if dim != p.dim() {
            return fail(WittenStatus::InvalidArgument, format!("expected {} coordinates, got {dim}", p.dim()));
        }
        let xs = std::slice::from_raw_parts(x, dim);
        match p.value_grad(xs) {
            Ok((v, g)) => {
                *value = v;
                if !grad.is_null() {
                    std::slice::from_raw_parts_mut(grad, dim).copy_from_slice(g.as_slice());
                }
                WittenStatus::Ok
            }
            Err(e) => fail(WittenStatus::InvalidArgument, e),
        }
    })
}

fn fixture_out(r: Result<Fixture, ConfigError>, out: *mut *mut WittenFixture) -> WittenStatus {
    match r {
        Ok(fixture) => {
            let h = Box::new(WittenFixture { fixture, labeling: None, radial: None });
            // SAFETY: callers check `out` for null first.
            unsafe { *out = Box::into_raw(h) };
            WittenStatus::Ok
        }
        Err(e) => fail(config_status(&e), e),
    }
}

/// Builds a fixture from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_from_toml(toml: *const c_char, out: *mut *mut WittenFixture) -> WittenStatus {
    guard(|| {
        if out.is_null() {
            return fail(WittenStatus::NullPointer, "null output pointer");
        }
        match text(toml) {
            Ok(t) => fixture_out(Fixture::from_toml(t), out),
            Err(s) => s,
        }
    })
}

/// Loads a fixture file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_load(path: *const c_char, out: *mut *mut WittenFixture) -> WittenStatus {
    guard(|| {
        if out.is_null() {
            return fail(WittenStatus::NullPointer, "null output pointer");
        }
        match text(path) {
            Ok(t) => fixture_out(Fixture::load(Path::new(t)), out),
            Err(s) => s,
        }
    })
}

/// Releases a fixture; null is ignored.
///
/// # Safety
/// `fx` must come from a fixture constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_free(fx: *mut WittenFixture) {
    if !fx.is_null() {
        drop(Box::from_raw(fx));
    }
}

/// Number of declared minima.
///
/// # Safety
/// `fx` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_minimum_count(fx: *const WittenFixture, out: *mut usize) -> WittenStatus {
    if fx.is_null() || out.is_null() {
        return fail(WittenStatus::NullPointer, "null argument");
    }
    *out = (*fx).fixture.minima.len();
    WittenStatus::Ok
}

impl WittenFixture {
    fn radial_solver(&self) -> bool {
        self.fixture.spec.solve.as_ref().is_some_and(|s| s.solver == SolverKind::Radial)
    }

    fn labeling(&mut self) -> Result<&LabelingResult, WittenStatus> {
        if self.labeling.is_none() {
            let f = &self.fixture;
            let g = f.sample(&f.spec.grid).map_err(|e| fail(config_status(&e), e))?;
            self.labeling = Some(f.label(&g).map_err(|e| fail(config_status(&e), e))?);
        }
        Ok(self.labeling.as_ref().expect("just set"))
    }

    fn radial(&mut self) -> Result<&RadialLabeling, WittenStatus> {
        if self.radial.is_none() {
            self.radial = Some(self.fixture.label_radial().map_err(|e| fail(config_status(&e), e))?);
        }
        Ok(self.radial.as_ref().expect("just set"))
    }

    fn barrier(&mut self, index: usize) -> Result<f64, WittenStatus> {
        let l = self.labeling()?;
        l.minima.get(index).map(|m| m.barrier).ok_or_else(|| fail(WittenStatus::OutOfRange, format!("minimum {index}")))
    }

    fn prediction(&mut self, index: usize, h: f64) -> Result<f64, WittenStatus> {
        let pred = if self.radial_solver() {
            let profile = self.fixture.profile().map_err(|e| fail(config_status(&e), e))?;
            let d = self.fixture.spec.dim;
            let rl = self.radial()?.clone();
            radial_predict(&profile, d, &rl, index)
        } else {
            let l = self.labeling()?.clone();
            let f = &self.fixture;
            prefactor(&f.potential, index, &f.minima, &f.saddles, &l)
        };
        let pred = pred.map_err(|e| fail(WittenStatus::Prediction, e))?;
        evaluate(&pred, h).map_err(|e| fail(WittenStatus::Prediction, e))
    }

    fn eigenvalues(&self, h: f64, k: usize) -> Result<Vec<f64>, WittenStatus> {
        let f = &self.fixture;
        let spec = if self.radial_solver() {
            let r = f.radial("solve").map_err(|e| fail(config_status(&e), e))?;
            let profile = f.profile().map_err(|e| fail(config_status(&e), e))?;
            let op = assemble_radial(&profile, f.spec.dim, r.r_max, r.cells, h).map_err(|e| fail(WittenStatus::Spectral, e))?;
            smallest_eigs(&op, k, &EigOptions::default())
        } else {
            let op = assemble_witten(&f.potential, &f.solve_bounds, &f.spec.grid, h, false).map_err(|e| fail(WittenStatus::Spectral, e))?;
            smallest_eigs(&op, k, &EigOptions::default())
        };
        spec.map(|s| s.values).map_err(|e| fail(WittenStatus::Spectral, e))
    }
}

/// Barrier `S(m)` of minimum `index` (infinite for the global minimum).
///
/// # Safety
/// `fx` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_barrier(fx: *mut WittenFixture, index: usize, out: *mut f64) -> WittenStatus {
    guard(|| {
        if fx.is_null() || out.is_null() {
            return fail(WittenStatus::NullPointer, "null argument");
        }
        match (*fx).barrier(index) {
            Ok(s) => {
                *out = s;
                WittenStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Eyring-Kramers prediction of the eigenvalue attached to minimum
/// `index` at `h`, using the fixture's solver kind.
///
/// # Safety
/// `fx` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_prediction(fx: *mut WittenFixture, index: usize, h: f64, out: *mut f64) -> WittenStatus {
    guard(|| {
        if fx.is_null() || out.is_null() {
            return fail(WittenStatus::NullPointer, "null argument");
        }
        if index >= (*fx).fixture.minima.len() {
            return fail(WittenStatus::OutOfRange, format!("minimum {index}"));
        }
        match (*fx).prediction(index, h) {
            Ok(v) => {
                *out = v;
                WittenStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// The `k` smallest eigenvalues of the discrete Witten Laplacian at `h`,
/// written in ascending order to `out`.
///
/// # Safety
/// `fx` must be valid and `out` must point to `k` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn witten_fixture_smallest_eigenvalues(fx: *const WittenFixture, h: f64, k: usize, out: *mut f64) -> WittenStatus {
    guard(|| {
        if fx.is_null() || out.is_null() {
            return fail(WittenStatus::NullPointer, "null argument");
        }
        if k == 0 {
            return fail(WittenStatus::InvalidArgument, "k must be positive");
        }
        match (*fx).eigenvalues(h, k) {
            Ok(v) => {
                std::slice::from_raw_parts_mut(out, k).copy_from_slice(&v[..k]);
                WittenStatus::Ok
            }
            Err(s) => s,
        }
    })
}
