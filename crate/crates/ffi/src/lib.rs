//! C ABI over `leo_jscc`.
//!
//! Every fallible function returns an [`LjsStatus`]; results go through out
//! pointers. After a non-`LJS_STATUS_OK` return, [`ljs_last_error`] copies a
//! message describing the failure on the calling thread. Handles are opaque
//! and must be released with their `_free` function. A model handle may be
//! shared between threads; a sampler handle may not.
//!
//! Complex symbols cross the boundary as interleaved `re, im` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;

use num_complex::Complex64;

use leo_jscc::channel::{transmit, ChannelConfig, FadingMode, SymbolVector};
use leo_jscc::fading::{
    loo_pdf, loo_to_internal, sample_loo_one, stationary_distribution, ChannelState, DirectPhase, LooInternal,
    LooParams, MarkovChain,
};
use leo_jscc::jscc::{ChannelContext, JsccError, JsccModel, ModelKind};
use leo_jscc::linkbudget::{noise_sigma_squared, slant_range, LinkParams};
use leo_jscc::nn::{NnError, Tensor};
use leo_jscc::rng::{stream_rng, StreamRng};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LjsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Input outside the mathematical domain, e.g. elevation above 90°.
    Domain = 3,
    Io = 4,
    /// An adaptive model was called without a channel context.
    MissingContext = 5,
    /// Output buffer too small.
    BufferSize = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: LjsStatus, msg: impl Into<String>) -> LjsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

/// Runs `f`, converting panics into `LJS_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> LjsStatus) -> LjsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LjsStatus::Panic, msg)
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(LjsStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length excluding the
/// terminator, so a caller can size a buffer with a first `len = 0` call.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn ljs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LjsLinkParams {
    pub orbit_height_km: f64,
    pub carrier_hz: f64,
    pub tx_power_w: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub antenna_temp_k: f64,
    pub ref_temp_k: f64,
}

impl From<LjsLinkParams> for LinkParams {
    fn from(p: LjsLinkParams) -> Self {
        Self {
            orbit_height_km: p.orbit_height_km,
            carrier_hz: p.carrier_hz,
            tx_power_w: p.tx_power_w,
            tx_gain_dbi: p.tx_gain_dbi,
            rx_gain_dbi: p.rx_gain_dbi,
            bandwidth_hz: p.bandwidth_hz,
            noise_figure_db: p.noise_figure_db,
            antenna_temp_k: p.antenna_temp_k,
            ref_temp_k: p.ref_temp_k,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LjsSnrReport {
    pub elevation_deg: f64,
    pub slant_range_km: f64,
    pub path_loss_db: f64,
    pub noise_power_dbw: f64,
    pub snr_db: f64,
}

/// Fills `out` with the reference downlink parameters.
///
/// # Safety
/// `out` must point to writable memory for one `LjsLinkParams`.
#[no_mangle]
pub unsafe extern "C" fn ljs_link_params_default(out: *mut LjsLinkParams) -> LjsStatus {
    non_null!(out);
    let d = LinkParams::default();
    *out = LjsLinkParams {
        orbit_height_km: d.orbit_height_km,
        carrier_hz: d.carrier_hz,
        tx_power_w: d.tx_power_w,
        tx_gain_dbi: d.tx_gain_dbi,
        rx_gain_dbi: d.rx_gain_dbi,
        bandwidth_hz: d.bandwidth_hz,
        noise_figure_db: d.noise_figure_db,
        antenna_temp_k: d.antenna_temp_k,
        ref_temp_k: d.ref_temp_k,
    };
    LjsStatus::Ok
}

/// # Safety
/// `out_km` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_slant_range(elevation_deg: f64, orbit_height_km: f64, out_km: *mut f64) -> LjsStatus {
    non_null!(out_km);
    match slant_range(elevation_deg, orbit_height_km) {
        Ok(d) => {
            *out_km = d;
            LjsStatus::Ok
        }
        Err(e) => fail(LjsStatus::Domain, e.to_string()),
    }
}

/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_snr(params: *const LjsLinkParams, elevation_deg: f64, out: *mut LjsSnrReport) -> LjsStatus {
    non_null!(params, out);
    let p = LinkParams::from(*params);
    if let Err(e) = p.validate() {
        return fail(LjsStatus::InvalidArgument, e.to_string());
    }
    match p.snr_at(elevation_deg) {
        Ok(r) => {
            *out = LjsSnrReport {
                elevation_deg: r.elevation_deg,
                slant_range_km: r.slant_range_km,
                path_loss_db: r.path_loss_db,
                noise_power_dbw: r.noise_power_dbw,
                snr_db: r.snr_db,
            };
            LjsStatus::Ok
        }
        Err(e) => fail(LjsStatus::Domain, e.to_string()),
    }
}

/// Per-component noise variance `σ² = P / (2·10^(SNR/10))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_noise_sigma_squared(snr_db: f64, signal_power: f64, out: *mut f64) -> LjsStatus {
    non_null!(out);
    if !(signal_power > 0.0 && signal_power.is_finite()) || snr_db.is_nan() {
        return fail(LjsStatus::InvalidArgument, format!("signal power {signal_power}, snr {snr_db}"));
    }
    *out = noise_sigma_squared(snr_db, signal_power);
    LjsStatus::Ok
}

/// Loo statistics in dB. `mp_db` may be `-INFINITY`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LjsLooParams {
    pub alpha_db: f64,
    pub psi_db: f64,
    pub mp_db: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LjsLooInternal {
    pub mu: f64,
    pub d0: f64,
    pub b0: f64,
}

fn loo(p: &LjsLooParams) -> Result<LooParams, LjsStatus> {
    let p = LooParams { alpha_db: p.alpha_db, psi_db: p.psi_db, mp_db: p.mp_db };
    p.validate().map_err(|e| fail(LjsStatus::InvalidArgument, e.to_string()))?;
    Ok(p)
}

/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_loo_to_internal(params: *const LjsLooParams, out: *mut LjsLooInternal) -> LjsStatus {
    non_null!(params, out);
    let p = match loo(&*params) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let LooInternal { mu, d0, b0 } = loo_to_internal(&p);
    *out = LjsLooInternal { mu, d0, b0 };
    LjsStatus::Ok
}

/// Amplitude density at `r`.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_loo_pdf(params: *const LjsLooParams, r: f64, out: *mut f64) -> LjsStatus {
    non_null!(params, out);
    guard(|| {
        let p = match loo(&*params) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match loo_pdf(r, &p) {
            Ok(v) => {
                *out = v;
                LjsStatus::Ok
            }
            Err(e) => fail(LjsStatus::Domain, e.to_string()),
        }
    })
}

/// Stationary distribution of a three-state chain in LOS, shadow, deep
/// shadow order. `transition` is row-major 3×3.
///
/// # Safety
/// `state_probs` and `out` must hold 3 doubles, `transition` 9.
#[no_mangle]
pub unsafe extern "C" fn ljs_stationary_distribution(
    state_probs: *const f64,
    transition: *const f64,
    out: *mut f64,
) -> LjsStatus {
    non_null!(state_probs, transition, out);
    guard(|| {
        let p = std::slice::from_raw_parts(state_probs, 3);
        let t = std::slice::from_raw_parts(transition, 9);
        let chain = match MarkovChain::new(
            [p[0], p[1], p[2]],
            [[t[0], t[1], t[2]], [t[3], t[4], t[5]], [t[6], t[7], t[8]]],
        ) {
            Ok(c) => c,
            Err(e) => return fail(LjsStatus::InvalidArgument, e.to_string()),
        };
        match stationary_distribution(&chain) {
            Ok(pi) => {
                std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&pi);
                LjsStatus::Ok
            }
            Err(e) => fail(LjsStatus::Domain, e.to_string()),
        }
    })
}

/// Seeded stream of Loo gains.
pub struct LjsSampler {
    params: LooParams,
    internal: LooInternal,
    rng: StreamRng,
}

/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_sampler_new(
    params: *const LjsLooParams,
    seed: u64,
    stream: u64,
    out: *mut *mut LjsSampler,
) -> LjsStatus {
    non_null!(params, out);
    let p = match loo(&*params) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let s = LjsSampler { params: p, internal: loo_to_internal(&p), rng: stream_rng(seed, stream) };
    *out = Box::into_raw(Box::new(s));
    LjsStatus::Ok
}

/// Writes `count` gains as interleaved `re, im` pairs.
///
/// # Safety
/// `sampler` must come from `ljs_sampler_new`; `out` must hold `2·count`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ljs_sampler_draw(sampler: *mut LjsSampler, count: usize, out: *mut f64) -> LjsStatus {
    non_null!(sampler, out);
    let s = &mut *sampler;
    let out = std::slice::from_raw_parts_mut(out, 2 * count);
    for pair in out.chunks_exact_mut(2) {
        let h = sample_loo_one(&s.params, &s.internal, DirectPhase::Zero, &mut s.rng).gain();
        pair[0] = h.re;
        pair[1] = h.im;
    }
    LjsStatus::Ok
}

/// # Safety
/// `sampler` must come from `ljs_sampler_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn ljs_sampler_free(sampler: *mut LjsSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// `ẑ = z·h + σ(N + jN)` with per-symbol (`block_fading = 0`) or one shared
/// gain, signal power 1. `z` and `out` hold `2·k` interleaved doubles and
/// may alias.
///
/// # Safety
/// Pointers must be valid for `2·k` doubles and `params` readable.
#[no_mangle]
pub unsafe extern "C" fn ljs_transmit(
    z: *const f64,
    k: usize,
    params: *const LjsLooParams,
    snr_db: f64,
    block_fading: i32,
    seed: u64,
    stream: u64,
    out: *mut f64,
) -> LjsStatus {
    non_null!(z, params, out);
    guard(|| {
        let p = match loo(&*params) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let input = std::slice::from_raw_parts(z, 2 * k);
        let sym = match SymbolVector::new(input.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()) {
            Ok(s) => s,
            Err(e) => return fail(LjsStatus::InvalidArgument, e.to_string()),
        };
        let cfg = ChannelConfig {
            mode: if block_fading != 0 { FadingMode::Block } else { FadingMode::PerSymbol },
            ..ChannelConfig::default()
        };
        let mut rng = stream_rng(seed, stream);
        match transmit(&sym, &p, snr_db, &cfg, &mut rng) {
            Ok((y, _)) => {
                let out = std::slice::from_raw_parts_mut(out, 2 * k);
                for (pair, c) in out.chunks_exact_mut(2).zip(&y.symbols) {
                    pair[0] = c.re;
                    pair[1] = c.im;
                }
                LjsStatus::Ok
            }
            Err(e) => fail(LjsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Trained codec loaded from a checkpoint.
pub struct LjsModel {
    inner: Mutex<JsccModel<f32>>,
}

/// Channel context for adaptive models. `state`: 0 LOS, 1 shadow,
/// 2 deep shadow.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LjsContext {
    pub snr_db: f64,
    pub state: u32,
}

fn jscc_status(e: JsccError) -> LjsStatus {
    let status = match e {
        JsccError::MissingContext => LjsStatus::MissingContext,
        JsccError::Nn(NnError::Io(_)) => LjsStatus::Io,
        _ => LjsStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_model_load(path: *const c_char, out: *mut *mut LjsModel) -> LjsStatus {
    non_null!(path, out);
    guard(|| {
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(LjsStatus::InvalidArgument, "path is not UTF-8"),
        };
        if !Path::new(path).is_file() {
            return fail(LjsStatus::Io, format!("no such file: {path}"));
        }
        match JsccModel::<f32>::load(Path::new(path)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(LjsModel { inner: Mutex::new(m) }));
                LjsStatus::Ok
            }
            Err(e) => jscc_status(e),
        }
    })
}

/// # Safety
/// `model` must come from `ljs_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn ljs_model_free(model: *mut LjsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Pixel count per image (`bands·H·W`), complex symbols per image and
/// whether the model needs a context (1) or ignores it (0).
///
/// # Safety
/// `model` must be live; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn ljs_model_shape(
    model: *const LjsModel,
    pixels: *mut usize,
    symbols: *mut usize,
    adaptive: *mut i32,
) -> LjsStatus {
    non_null!(model, pixels, symbols, adaptive);
    let m = (*model).inner.lock().unwrap_or_else(|p| p.into_inner());
    *pixels = m.architecture.source_dim();
    *symbols = m.architecture.symbols();
    *adaptive = i32::from(m.kind() == ModelKind::Adaptive);
    LjsStatus::Ok
}

fn context(ctx: *const LjsContext) -> Result<Option<Vec<ChannelContext>>, LjsStatus> {
    if ctx.is_null() {
        return Ok(None);
    }
    // SAFETY: checked non-null; the caller guarantees validity.
    let c = unsafe { *ctx };
    let state = ChannelState::from_index(c.state as usize)
        .ok_or_else(|| fail(LjsStatus::InvalidArgument, format!("state index {} not in 0..3", c.state)))?;
    Ok(Some(vec![ChannelContext::new(c.snr_db, state)]))
}

/// Encodes one image (`pixels` floats in `[0, 1]`, band-major) into
/// `2·symbols` interleaved doubles. `ctx` may be null for baseline models.
///
/// # Safety
/// `image` must hold `pixels` floats, `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ljs_model_encode(
    model: *const LjsModel,
    image: *const f32,
    pixels: usize,
    ctx: *const LjsContext,
    out: *mut f64,
    out_len: usize,
) -> LjsStatus {
    non_null!(model, image, out);
    guard(|| {
        let mut m = (*model).inner.lock().unwrap_or_else(|p| p.into_inner());
        let [b, h, w] = m.architecture.input_shape;
        if pixels != b * h * w {
            return fail(LjsStatus::InvalidArgument, format!("expected {} pixels, got {pixels}", b * h * w));
        }
        if out_len < 2 * m.architecture.symbols() {
            return fail(LjsStatus::BufferSize, format!("need {} doubles", 2 * m.architecture.symbols()));
        }
        let ctxs = match context(ctx) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let x = match Tensor::from_vec(&[1, b, h, w], std::slice::from_raw_parts(image, pixels).to_vec()) {
            Ok(x) => x,
            Err(e) => return fail(LjsStatus::InvalidArgument, e.to_string()),
        };
        let ctxs = if m.kind() == ModelKind::Adaptive { ctxs } else { None };
        match m.encode(&x, ctxs.as_deref()) {
            Ok(z) => {
                let out = std::slice::from_raw_parts_mut(out, out_len);
                for (pair, c) in out.chunks_exact_mut(2).zip(&z[0].symbols) {
                    pair[0] = c.re;
                    pair[1] = c.im;
                }
                LjsStatus::Ok
            }
            Err(e) => jscc_status(e),
        }
    })
}

/// Decodes `symbols` received complex values into `pixels` floats clamped
/// to `[0, 1]`.
///
/// # Safety
/// `z` must hold `2·symbols` doubles, `out` `pixels` floats.
#[no_mangle]
pub unsafe extern "C" fn ljs_model_decode(
    model: *const LjsModel,
    z: *const f64,
    symbols: usize,
    ctx: *const LjsContext,
    out: *mut f32,
    pixels: usize,
) -> LjsStatus {
    non_null!(model, z, out);
    guard(|| {
        let mut m = (*model).inner.lock().unwrap_or_else(|p| p.into_inner());
        if pixels != m.architecture.source_dim() {
            return fail(LjsStatus::BufferSize, format!("need {} floats", m.architecture.source_dim()));
        }
        let ctxs = match context(ctx) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let input = std::slice::from_raw_parts(z, 2 * symbols);
        let sym = match SymbolVector::new(input.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()) {
            Ok(s) => s,
            Err(e) => return fail(LjsStatus::InvalidArgument, e.to_string()),
        };
        let ctxs = if m.kind() == ModelKind::Adaptive { ctxs } else { None };
        match m.decode(&[sym], ctxs.as_deref()) {
            Ok(y) => {
                std::slice::from_raw_parts_mut(out, pixels).copy_from_slice(y.data());
                LjsStatus::Ok
            }
            Err(e) => jscc_status(e),
        }
    })
}
