//! C ABI over the cutdiffusion engine.
//!
//! Configs and latents cross the boundary as opaque handles that the caller
//! frees with the matching `*_free` function. Every fallible call returns a
//! [`CdStatus`]; on failure the message is available from
//! [`cd_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cutdiffusion::io::parse_config;
use cutdiffusion::pipeline::{run, CostReport, ExecOptions, Method, RunConfig};
use cutdiffusion::{CutError, Latent, Shape};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Backend = 4,
    Invariant = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

pub const CD_METHOD_CUT: u32 = 0;
pub const CD_METHOD_MULTI: u32 = 1;
pub const CD_METHOD_DIRECT: u32 = 2;

/// Parsed, validated run configuration.
pub struct CdConfig(RunConfig);

/// Row-major `h x w x c` latent of doubles, channels innermost.
pub struct CdLatent(Latent);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CdCostReport {
    pub phase1_patches: u64,
    pub phase2_patches: u64,
    pub phase1_calls: u64,
    pub phase2_calls: u64,
    pub total_calls: u64,
    pub peak_resident_latents: u64,
}

impl From<&CostReport> for CdCostReport {
    fn from(r: &CostReport) -> Self {
        CdCostReport {
            phase1_patches: r.phase1_patches,
            phase2_patches: r.phase2_patches,
            phase1_calls: r.phase1_calls,
            phase2_calls: r.phase2_calls,
            total_calls: r.total_calls,
            peak_resident_latents: r.peak_resident_latents,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(err: &CutError) -> CdStatus {
    match err {
        CutError::Config { .. } => CdStatus::Config,
        CutError::Transport { .. } | CutError::Protocol(_) | CutError::Capacity(_) | CutError::Backend { .. } => {
            CdStatus::Backend
        }
        CutError::Io(_) | CutError::Format(_) => CdStatus::Io,
        _ => CdStatus::Invariant,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (CdStatus, String)>) -> CdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside cutdiffusion");
            CdStatus::Panic
        }
    }
}

fn lift(err: CutError) -> (CdStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (CdStatus, String) {
    (CdStatus::NullPointer, format!("`{what}` is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a TOML config document.
///
/// # Safety
/// `toml` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cd_config_from_toml(toml: *const c_char, out: *mut *mut CdConfig) -> CdStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (CdStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let cfg = parse_config(text).map_err(lift)?;
        *out = Box::into_raw(Box::new(CdConfig(cfg)));
        Ok(())
    })
}

/// Default config around a patch shape and canvas size.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cd_config_new(
    base_h: usize,
    base_w: usize,
    channels: usize,
    target_h: usize,
    target_w: usize,
    out: *mut *mut CdConfig,
) -> CdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::new(Shape::new(base_h, base_w, channels), target_h, target_w).map_err(lift)?;
        *out = Box::into_raw(Box::new(CdConfig(cfg)));
        Ok(())
    })
}

/// Sets seed and phase boundary in one call and revalidates.
///
/// # Safety
/// `config` must come from `cd_config_from_toml` or `cd_config_new`.
#[no_mangle]
pub unsafe extern "C" fn cd_config_set_seed_t_prime(config: *mut CdConfig, seed: u64, t_prime: usize) -> CdStatus {
    guard(|| {
        let cfg = config.as_mut().ok_or_else(|| null("config"))?;
        let mut next = cfg.0.clone();
        next.seed = seed;
        next.t_prime = t_prime;
        next.validate().map_err(lift)?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cd_config_free(config: *mut CdConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one pipeline. `method` is one of the `CD_METHOD_*` constants;
/// `threads` of 0 uses the machine default. `report` may be null.
///
/// # Safety
/// `config` must be a live handle, `out` writable, `report` null or writable.
#[no_mangle]
pub unsafe extern "C" fn cd_run(
    config: *const CdConfig,
    method: u32,
    threads: usize,
    out: *mut *mut CdLatent,
    report: *mut CdCostReport,
) -> CdStatus {
    guard(|| {
        let cfg = &config.as_ref().ok_or_else(|| null("config"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let method = match method {
            CD_METHOD_CUT => Method::Cut,
            CD_METHOD_MULTI => Method::Multi,
            CD_METHOD_DIRECT => Method::Direct,
            m => return Err((CdStatus::InvalidArgument, format!("unknown method {m}"))),
        };
        let backend = cfg.build_denoiser().map_err(lift)?;
        let result = run(method, cfg, backend.as_ref(), ExecOptions { threads }).map_err(lift)?;
        if !report.is_null() {
            *report = CdCostReport::from(&result.report);
        }
        *out = Box::into_raw(Box::new(CdLatent(result.latent)));
        Ok(())
    })
}

/// # Safety
/// `latent` must be a live handle; the shape pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cd_latent_shape(
    latent: *const CdLatent,
    h: *mut usize,
    w: *mut usize,
    c: *mut usize,
) -> CdStatus {
    guard(|| {
        let z = &latent.as_ref().ok_or_else(|| null("latent"))?.0;
        if h.is_null() || w.is_null() || c.is_null() {
            return Err(null("shape output"));
        }
        let s = z.shape();
        *h = s.h;
        *w = s.w;
        *c = s.c;
        Ok(())
    })
}

/// Copies `h * w * c` doubles into `buf`, which holds `len` elements.
///
/// # Safety
/// `latent` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cd_latent_copy_data(latent: *const CdLatent, buf: *mut f64, len: usize) -> CdStatus {
    guard(|| {
        let z = &latent.as_ref().ok_or_else(|| null("latent"))?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let data = z.as_slice();
        if len < data.len() {
            return Err((
                CdStatus::BufferTooSmall,
                format!("buffer holds {len} values, latent has {}", data.len()),
            ));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// # Safety
/// `latent` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cd_latent_free(latent: *mut CdLatent) {
    if !latent.is_null() {
        drop(Box::from_raw(latent));
    }
}
