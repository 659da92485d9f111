//! C ABI over `voi-core`.
//!
//! Tables are opaque `VoiTable` handles owned by the caller and released with
//! [`voi_table_free`]. Every fallible function returns a [`VoiStatus`]; on
//! failure [`voi_last_error`] describes what went wrong on the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{CStr, CString, c_char};
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::ptr;

use voi_core::designs::{DesignKind, DesignSpec, simulate_statistics};
use voi_core::hiv::{HivData, HivModel, Scenario};
use voi_core::sampler::{ChainConfig, run_chains};
use voi_core::voi::{self, LossSpec, VoiConfig};
use voi_core::{SampleTable, VoiError};

/// Opaque table of Monte Carlo draws.
pub struct VoiTable {
    inner: SampleTable,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownColumn = 3,
    Io = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoiDesign {
    GumAnon = 0,
    Gmshs = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoiScenario {
    Base = 0,
    GumAnonOnly = 1,
    GumcadDiagnosed = 2,
}

/// Result of a value-of-information estimate. `proportion` and `se` are NaN
/// when undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiEstimate {
    pub value: f64,
    pub baseline: f64,
    pub proportion: f64,
    pub se: f64,
    pub k_used: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(VoiStatus, String);

impl From<VoiError> for Fail {
    fn from(e: VoiError) -> Self {
        let status = match &e {
            VoiError::UnknownColumns(_) => VoiStatus::UnknownColumn,
            VoiError::Io { .. } | VoiError::Parse { .. } => VoiStatus::Io,
            VoiError::Singular(_) | VoiError::Initialisation(_) => VoiStatus::Numerical,
            _ => VoiStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(VoiStatus::InvalidArgument, msg.into())
}

/// Run `f`, turning errors and panics into a status plus thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VoiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VoiStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            VoiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(VoiStatus::NullPointer, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn table_arg<'a>(p: *const VoiTable) -> Result<&'a SampleTable, Fail> {
    unsafe { p.as_ref() }
        .map(|t| &t.inner)
        .ok_or_else(|| Fail(VoiStatus::NullPointer, "table is null".into()))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| Fail(VoiStatus::NullPointer, "output pointer is null".into()))
}

fn emit(table: SampleTable, out: &mut *mut VoiTable) {
    *out = Box::into_raw(Box::new(VoiTable { inner: table }));
}

fn estimate(e: &voi::VoiEstimate) -> VoiEstimate {
    VoiEstimate {
        value: e.value,
        baseline: e.baseline,
        proportion: e.proportion.unwrap_or(f64::NAN),
        se: e.se.unwrap_or(f64::NAN),
        k_used: e.k_used as u64,
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn voi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Read a CSV of draws (header row of names, one row per draw).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn voi_table_read_csv(path: *const c_char, out: *mut *mut VoiTable) -> VoiStatus {
    guard(|| {
        let out = unsafe { out_arg(out) }?;
        let path = unsafe { str_arg(path, "path") }?;
        emit(SampleTable::read_csv(path)?, out);
        Ok(())
    })
}

/// Build a table from `ncols` columns of `nrows` values each.
///
/// # Safety
/// `names` must point to `ncols` NUL-terminated strings and `columns` to
/// `ncols` arrays of `nrows` doubles.
#[no_mangle]
pub unsafe extern "C" fn voi_table_from_columns(
    names: *const *const c_char,
    columns: *const *const f64,
    ncols: usize,
    nrows: usize,
    out: *mut *mut VoiTable,
) -> VoiStatus {
    guard(|| {
        let out = unsafe { out_arg(out) }?;
        if ncols > 0 && (names.is_null() || columns.is_null()) {
            return Err(Fail(VoiStatus::NullPointer, "names or columns is null".into()));
        }
        let mut n = Vec::with_capacity(ncols);
        let mut c = Vec::with_capacity(ncols);
        for j in 0..ncols {
            n.push(unsafe { str_arg(*names.add(j), "column name") }?.to_string());
            let col = unsafe { *columns.add(j) };
            if col.is_null() && nrows > 0 {
                return Err(Fail(VoiStatus::NullPointer, format!("column {j} is null")));
            }
            let data = if nrows == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(col, nrows) } };
            c.push(data.to_vec());
        }
        emit(SampleTable::new(n, c)?, out);
        Ok(())
    })
}

/// Release a table. Null is ignored.
///
/// # Safety
/// `table` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn voi_table_free(table: *mut VoiTable) {
    if !table.is_null() {
        drop(unsafe { Box::from_raw(table) });
    }
}

/// # Safety
/// `table` must be a live handle; `nrows` and `ncols` writable.
#[no_mangle]
pub unsafe extern "C" fn voi_table_shape(table: *const VoiTable, nrows: *mut usize, ncols: *mut usize) -> VoiStatus {
    guard(|| {
        let t = unsafe { table_arg(table) }?;
        *unsafe { out_arg(nrows) }? = t.nrows();
        *unsafe { out_arg(ncols) }? = t.ncols();
        Ok(())
    })
}

/// Copy column `name` into `buf`, which must hold `len >= nrows` doubles.
///
/// # Safety
/// `table` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn voi_table_column(
    table: *const VoiTable,
    name: *const c_char,
    buf: *mut f64,
    len: usize,
) -> VoiStatus {
    guard(|| {
        let t = unsafe { table_arg(table) }?;
        let col = t.column(unsafe { str_arg(name, "name") }?)?;
        if buf.is_null() {
            return Err(Fail(VoiStatus::NullPointer, "buffer is null".into()));
        }
        if len < col.len() {
            return Err(invalid(format!("buffer holds {len} values, column has {}", col.len())));
        }
        unsafe { std::slice::from_raw_parts_mut(buf, col.len()) }.copy_from_slice(col);
        Ok(())
    })
}

/// # Safety
/// `table` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn voi_table_write_csv(table: *const VoiTable, path: *const c_char) -> VoiStatus {
    guard(|| {
        let t = unsafe { table_arg(table) }?;
        t.write_csv(unsafe { str_arg(path, "path") }?)?;
        Ok(())
    })
}

/// EVPPI of the inputs for the posterior variance of `output`.
///
/// # Safety
/// `inputs` must point to `ninputs` NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn voi_evppi_scalar(
    table: *const VoiTable,
    inputs: *const *const c_char,
    ninputs: usize,
    output: *const c_char,
    seed: u64,
    out: *mut VoiEstimate,
) -> VoiStatus {
    guard(|| {
        let t = unsafe { table_arg(table) }?;
        let out = unsafe { out_arg(out) }?;
        if inputs.is_null() {
            return Err(Fail(VoiStatus::NullPointer, "inputs is null".into()));
        }
        let names = (0..ninputs)
            .map(|j| unsafe { str_arg(*inputs.add(j), "input name") }.map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = LossSpec::scalar(unsafe { str_arg(output, "output") }?);
        let cfg = VoiConfig { seed, ..Default::default() };
        *out = estimate(&voi::evppi(t, &names, &loss, &cfg)?);
        Ok(())
    })
}

/// Takes a raw `VoiDesign` value so out-of-range codes are reported, not UB.
fn design_kind(design: u32) -> Result<DesignKind, Fail> {
    match design {
        d if d == VoiDesign::GumAnon as u32 => Ok(DesignKind::GumAnon),
        d if d == VoiDesign::Gmshs as u32 => Ok(DesignKind::Gmshs { split: None }),
        d => Err(invalid(format!("unknown design code {d}"))),
    }
}

/// Simulate the design's summary statistic for every draw. `design` is a
/// `VoiDesign` value.
///
/// # Safety
/// `table` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn voi_simulate_statistics(
    table: *const VoiTable,
    design: u32,
    n: u64,
    seed: u64,
    out: *mut *mut VoiTable,
) -> VoiStatus {
    guard(|| {
        let t = unsafe { table_arg(table) }?;
        let out = unsafe { out_arg(out) }?;
        emit(simulate_statistics(&DesignSpec::new(design_kind(design)?, n, seed), t)?, out);
        Ok(())
    })
}

/// EVSI of a study of size `n` for the posterior variance of `output`.
///
/// # Safety
/// `table` must be a live handle, `output` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn voi_evsi_scalar(
    table: *const VoiTable,
    design: u32,
    n: u64,
    output: *const c_char,
    seed: u64,
    out: *mut VoiEstimate,
) -> VoiStatus {
    guard(|| {
        let t = unsafe { table_arg(table) }?;
        let out = unsafe { out_arg(out) }?;
        let loss = LossSpec::scalar(unsafe { str_arg(output, "output") }?);
        let cfg = VoiConfig { seed, ..Default::default() };
        let plan = DesignSpec::new(design_kind(design)?, 0, seed);
        let curve = voi::evsi_curve(t, &plan, &[n], &loss, &cfg)?;
        let e = curve
            .into_iter()
            .next()
            .expect("one point per grid entry")
            .estimate
            .map_err(|m| Fail(VoiStatus::Numerical, m))?;
        *out = estimate(&e);
        Ok(())
    })
}

/// Sample the HIV prevalence model. `data_path` may be null for the built-in
/// synthetic data; `scenario` is a `VoiScenario` value and `draws` counts
/// pooled post-burn-in draws.
///
/// # Safety
/// `data_path` must be null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn voi_run_sampler(
    data_path: *const c_char,
    scenario: u32,
    draws: usize,
    chains: usize,
    burnin: usize,
    seed: u64,
    out: *mut *mut VoiTable,
) -> VoiStatus {
    guard(|| {
        let out = unsafe { out_arg(out) }?;
        let data = if data_path.is_null() {
            HivData::synthetic_london_2012()
        } else {
            HivData::load(unsafe { str_arg(data_path, "data path") }?)?
        };
        let scenario = match scenario {
            s if s == VoiScenario::Base as u32 => Scenario::Base,
            s if s == VoiScenario::GumAnonOnly as u32 => Scenario::GumAnonOnly,
            s if s == VoiScenario::GumcadDiagnosed as u32 => Scenario::GumcadDiagnosed,
            s => return Err(invalid(format!("unknown scenario code {s}"))),
        };
        let mut cfg = ChainConfig::with_total_draws(draws, chains);
        cfg.chains = chains;
        cfg.burnin = burnin;
        cfg.seed = seed;
        let model = HivModel::new(data, scenario)?;
        let (table, _) = run_chains(&model, &cfg)?;
        emit(table, out);
        Ok(())
    })
}
