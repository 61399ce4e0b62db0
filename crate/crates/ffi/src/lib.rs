//! C interface to `sprite-core`.
//!
//! Objects cross the boundary as opaque pointers created and destroyed by
//! this library. Every fallible call returns a [`SpriteStatus`]; on failure
//! the message is available from [`sprite_last_error`] on the same thread.
//! Passing null to a `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sprite_core::solvers::{sprite_detailed, SolverConfig};
use sprite_core::wavelets::DictionaryKind;
use sprite_core::{ImageGrid, LRExposure, LRStack, SpriteError};

/// Packed `major << 16 | minor`.
pub const SPRITE_ABI_VERSION: u32 = 1 << 16;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpriteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Estimation = 3,
    Divergence = 4,
    Internal = 5,
}

/// Exposures collected before a reconstruction.
pub struct SpriteStack {
    height: usize,
    width: usize,
    upsampling: usize,
    exposures: Vec<LRExposure>,
}

/// Solver settings; starts from the library defaults.
pub struct SpriteConfig {
    inner: SolverConfig,
}

/// A reconstructed image.
pub struct SpriteImage {
    inner: ImageGrid,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &SpriteError) -> SpriteStatus {
    match err.exit_code() {
        3 => SpriteStatus::Estimation,
        4 => SpriteStatus::Divergence,
        _ => SpriteStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SpriteStatus, String)>) -> SpriteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpriteStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error (panic)");
            SpriteStatus::Internal
        }
    }
}

fn null() -> (SpriteStatus, String) {
    (SpriteStatus::NullPointer, "null pointer argument".into())
}

fn core_err(e: SpriteError) -> (SpriteStatus, String) {
    (status_of(&e), e.to_string())
}

#[no_mangle]
pub extern "C" fn sprite_abi_version() -> u32 {
    SPRITE_ABI_VERSION
}

/// Message of the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sprite_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// New empty stack of `height × width` exposures to be upsampled by `upsampling`.
/// Returns null on invalid sizes.
#[no_mangle]
pub extern "C" fn sprite_stack_new(height: usize, width: usize, upsampling: usize) -> *mut SpriteStack {
    if height == 0 || width == 0 || upsampling == 0 {
        set_error("stack dimensions and upsampling must be positive");
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(SpriteStack {
        height,
        width,
        upsampling,
        exposures: Vec::new(),
    }))
}

/// # Safety
/// `stack` must be null or come from [`sprite_stack_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn sprite_stack_free(stack: *mut SpriteStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Appends one exposure. `pixels` holds `len = height·width` row-major values;
/// `shift_row`/`shift_col` are in low-resolution pixels relative to exposure 0.
///
/// # Safety
/// `stack` must be a live stack handle and `pixels` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn sprite_stack_push(
    stack: *mut SpriteStack,
    pixels: *const f64,
    len: usize,
    sigma: f64,
    flux: f64,
    shift_row: f64,
    shift_col: f64,
) -> SpriteStatus {
    guard(|| {
        let stack = stack.as_mut().ok_or_else(null)?;
        if pixels.is_null() {
            return Err(null());
        }
        if len != stack.height * stack.width {
            return Err((
                SpriteStatus::InvalidInput,
                format!("expected {} pixels, got {len}", stack.height * stack.width),
            ));
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        let image = ImageGrid::from_vec(stack.height, stack.width, data).map_err(core_err)?;
        let e = LRExposure::new(image, sigma, flux, (shift_row, shift_col)).map_err(core_err)?;
        stack.exposures.push(e);
        Ok(())
    })
}

/// Number of exposures pushed so far; 0 for null.
///
/// # Safety
/// `stack` must be null or a live stack handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_stack_len(stack: *const SpriteStack) -> usize {
    stack.as_ref().map_or(0, |s| s.exposures.len())
}

#[no_mangle]
pub extern "C" fn sprite_config_new() -> *mut SpriteConfig {
    Box::into_raw(Box::new(SpriteConfig {
        inner: SolverConfig::default(),
    }))
}

/// # Safety
/// `config` must be null or come from [`sprite_config_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn sprite_config_free(config: *mut SpriteConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

unsafe fn with_config(config: *mut SpriteConfig, f: impl FnOnce(&mut SolverConfig)) -> SpriteStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(null)?;
        let mut next = c.inner.clone();
        f(&mut next);
        next.validate().map_err(core_err)?;
        c.inner = next;
        Ok(())
    })
}

/// Transform code: 2 = second-generation starlet, 24 = biorthogonal 7/9.
///
/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_config_set_transform(config: *mut SpriteConfig, code: u32) -> SpriteStatus {
    match DictionaryKind::from_code(code) {
        Ok(kind) => with_config(config, |c| c.dictionary = kind),
        Err(e) => {
            set_error(&e.to_string());
            SpriteStatus::InvalidInput
        }
    }
}

/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_config_set_kappa(config: *mut SpriteConfig, kappa: f64) -> SpriteStatus {
    with_config(config, |c| c.kappa = kappa)
}

/// Iteration cap per pass and number of reweighting passes.
///
/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_config_set_iterations(config: *mut SpriteConfig, n_max: usize, k_max: usize) -> SpriteStatus {
    with_config(config, |c| {
        c.n_max = n_max;
        c.k_max = k_max;
    })
}

/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_config_set_positivity(config: *mut SpriteConfig, enabled: bool) -> SpriteStatus {
    with_config(config, |c| c.positivity = enabled)
}

/// When set, noise, shifts and fluxes are estimated from the pixels and the
/// values passed to [`sprite_stack_push`] are ignored.
///
/// # Safety
/// `config` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_config_set_estimate(config: *mut SpriteConfig, enabled: bool) -> SpriteStatus {
    with_config(config, |c| c.estimate_parameters = enabled)
}

/// Runs the reconstruction; on success `*out` receives a new image handle.
///
/// # Safety
/// `stack` and `config` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sprite_reconstruct(
    stack: *const SpriteStack,
    config: *const SpriteConfig,
    out: *mut *mut SpriteImage,
) -> SpriteStatus {
    guard(|| {
        let stack = stack.as_ref().ok_or_else(null)?;
        let config = config.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        *out = ptr::null_mut();
        let st = LRStack::new(stack.exposures.clone(), stack.upsampling).map_err(core_err)?;
        let res = sprite_detailed(&st, &config.inner).map_err(core_err)?;
        *out = Box::into_raw(Box::new(SpriteImage { inner: res.image }));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a live image handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_image_height(image: *const SpriteImage) -> usize {
    image.as_ref().map_or(0, |i| i.inner.height())
}

/// # Safety
/// `image` must be null or a live image handle.
#[no_mangle]
pub unsafe extern "C" fn sprite_image_width(image: *const SpriteImage) -> usize {
    image.as_ref().map_or(0, |i| i.inner.width())
}

/// Copies the row-major pixels into `dst`, which must hold exactly `len` values.
///
/// # Safety
/// `image` must be a live image handle and `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sprite_image_copy(image: *const SpriteImage, dst: *mut f64, len: usize) -> SpriteStatus {
    guard(|| {
        let image = image.as_ref().ok_or_else(null)?;
        if dst.is_null() {
            return Err(null());
        }
        let px = image.inner.pixels();
        if len != px.len() {
            return Err((SpriteStatus::InvalidInput, format!("buffer holds {len} values, image has {}", px.len())));
        }
        std::slice::from_raw_parts_mut(dst, len).copy_from_slice(px);
        Ok(())
    })
}

/// # Safety
/// `image` must be null or come from [`sprite_reconstruct`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn sprite_image_free(image: *mut SpriteImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}
