//! C ABI for the separation front-end.
//!
//! Conventions:
//! - Every function returns a [`BsStatus`]; `BS_STATUS_OK` is zero.
//! - On failure, a thread-local message is readable through
//!   [`bs_last_error_message`] until the next call on the same thread.
//! - Multichannel audio buffers are channel-major: channel 0's samples,
//!   then channel 1's, and so on. Matrices are row-major.
//! - Objects returned through out-pointers are owned by the caller and
//!   released with the matching `*_free` function.
//!
//! The header `include/beamsep.h` is generated by cbindgen at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::Array2;

use beamsep::beamforming::{
    apply_filters, estimate_psd, mvdr_filters, select_reference, ReferencePolicy,
};
use beamsep::error::Error;
use beamsep::loss::{ctc_loss, pit_resolve, LabelSequence, LogitSequence, LossMatrix};
use beamsep::masking::{oracle_masks, OracleMaskKind};
use beamsep::metrics::si_sdr;
use beamsep::stft::{istft, stft, MultichannelSpectrogram, MultichannelWaveform, StftConfig};

/// Status codes returned by every API function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericError = 4,
    Panic = 5,
}

/// Oracle mask flavors for [`bs_separate_oracle`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsMaskKind {
    Irm = 0,
    Ibm = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> =
        RefCell::new(CString::new("").expect("empty string has no NUL"));
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NUL bytes stripped");
    });
}

fn status_of(err: &Error) -> BsStatus {
    match err {
        Error::InvalidConfig(_) | Error::InvalidInput(_) | Error::ShapeMismatch(_) => {
            BsStatus::InvalidArgument
        }
        Error::Wav { .. } | Error::Io { .. } | Error::Json { .. } => BsStatus::DataError,
        Error::Numeric(_) | Error::AttentionProvider { .. } => BsStatus::NumericError,
    }
}

fn fail(err: Error) -> BsStatus {
    let status = status_of(&err);
    set_last_error(&err.to_string());
    status
}

fn fail_invalid(message: &str) -> BsStatus {
    set_last_error(message);
    BsStatus::InvalidArgument
}

fn fail_null() -> BsStatus {
    set_last_error("null pointer argument");
    BsStatus::NullPointer
}

fn guard(f: impl FnOnce() -> BsStatus) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            BsStatus::Panic
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next API call from the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// --- STFT configuration -----------------------------------------------------

/// Opaque STFT analysis/synthesis configuration.
pub struct BsStftConfig(StftConfig);

/// Default profile: 16 kHz, 400-sample Hann window, 160-sample hop,
/// 512-point FFT (257 bins).
///
/// # Safety
/// `out` must be a valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_stft_config_default(out: *mut *mut BsStftConfig) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return fail_null();
        }
        let cfg = Box::new(BsStftConfig(StftConfig::default()));
        *out = Box::into_raw(cfg);
        BsStatus::Ok
    })
}

/// # Safety
/// `out` must be a valid location for one pointer.
#[no_mangle]
pub unsafe extern "C" fn bs_stft_config_new(
    sample_rate_hz: u32,
    window_len_samples: usize,
    hop_samples: usize,
    fft_size: usize,
    out: *mut *mut BsStftConfig,
) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return fail_null();
        }
        let cfg = StftConfig {
            sample_rate_hz,
            window_len_samples,
            hop_samples,
            fft_size,
            window_kind: beamsep::stft::WindowKind::Hann,
        };
        if let Err(e) = cfg.validate() {
            return fail(e);
        }
        *out = Box::into_raw(Box::new(BsStftConfig(cfg)));
        BsStatus::Ok
    })
}

/// Number of frequency bins the configuration produces (`fft_size/2 + 1`).
///
/// # Safety
/// `config` must come from a `bs_stft_config_*` constructor; `out` must be a
/// valid location for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn bs_stft_config_num_bins(
    config: *const BsStftConfig,
    out: *mut usize,
) -> BsStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail_null();
        }
        *out = (*config).0.num_bins();
        BsStatus::Ok
    })
}

/// # Safety
/// `config` must have come from a `bs_stft_config_*` constructor and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_stft_config_free(config: *mut BsStftConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

// --- Spectrograms ------------------------------------------------------------

/// Opaque complex spectrogram with axes (time, frequency, channel).
pub struct BsSpectrogram(MultichannelSpectrogram);

unsafe fn waveform_from_raw(
    samples: *const f64,
    n_channels: usize,
    n_samples: usize,
    sample_rate_hz: u32,
) -> Result<MultichannelWaveform, Error> {
    let total = n_channels
        .checked_mul(n_samples)
        .ok_or_else(|| Error::InvalidInput("buffer size overflow".into()))?;
    let slice = std::slice::from_raw_parts(samples, total);
    let data = Array2::from_shape_vec((n_channels, n_samples), slice.to_vec())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    MultichannelWaveform::new(data, sample_rate_hz)
}

/// Forward transform of channel-major interleaved samples.
///
/// # Safety
/// `samples` must point to `n_channels * n_samples` doubles; `config` and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bs_stft_forward(
    config: *const BsStftConfig,
    samples: *const f64,
    n_channels: usize,
    n_samples: usize,
    out: *mut *mut BsSpectrogram,
) -> BsStatus {
    guard(|| {
        if config.is_null() || samples.is_null() || out.is_null() {
            return fail_null();
        }
        if n_channels == 0 || n_samples == 0 {
            return fail_invalid("empty waveform");
        }
        let cfg = &(*config).0;
        let wave = match waveform_from_raw(samples, n_channels, n_samples, cfg.sample_rate_hz) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        match stft(&wave, cfg) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(BsSpectrogram(spec)));
                BsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Spectrogram dimensions: frames, bins, channels.
///
/// # Safety
/// `spec` must come from this library; the out-pointers must each be valid
/// for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn bs_spectrogram_dims(
    spec: *const BsSpectrogram,
    out_frames: *mut usize,
    out_bins: *mut usize,
    out_channels: *mut usize,
) -> BsStatus {
    guard(|| {
        if spec.is_null() || out_frames.is_null() || out_bins.is_null() || out_channels.is_null() {
            return fail_null();
        }
        let s = &(*spec).0;
        *out_frames = s.num_frames();
        *out_bins = s.num_bins();
        *out_channels = s.num_channels();
        BsStatus::Ok
    })
}

/// Copy the complex data out as interleaved (re, im) doubles in
/// (time, frequency, channel) row-major order. `buffer` must hold
/// `2 * frames * bins * channels` doubles.
///
/// # Safety
/// `buffer` must be writable for that many doubles.
#[no_mangle]
pub unsafe extern "C" fn bs_spectrogram_copy_data(
    spec: *const BsSpectrogram,
    buffer: *mut f64,
    buffer_len: usize,
) -> BsStatus {
    guard(|| {
        if spec.is_null() || buffer.is_null() {
            return fail_null();
        }
        let s = &(*spec).0;
        let needed = 2 * s.data.len();
        if buffer_len < needed {
            return fail_invalid(&format!("buffer holds {buffer_len} doubles, need {needed}"));
        }
        let out = std::slice::from_raw_parts_mut(buffer, needed);
        for (i, z) in s.data.iter().enumerate() {
            out[2 * i] = z.re;
            out[2 * i + 1] = z.im;
        }
        BsStatus::Ok
    })
}

/// Inverse transform. `buffer` must hold `channels * original_len` doubles;
/// query the sizes with [`bs_istft_dims`] first.
///
/// # Safety
/// `buffer` must be writable for `buffer_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bs_istft(
    spec: *const BsSpectrogram,
    buffer: *mut f64,
    buffer_len: usize,
) -> BsStatus {
    guard(|| {
        if spec.is_null() || buffer.is_null() {
            return fail_null();
        }
        let s = &(*spec).0;
        match istft(s) {
            Ok(wave) => {
                let needed = wave.num_channels() * wave.len_samples();
                if buffer_len < needed {
                    return fail_invalid(&format!(
                        "buffer holds {buffer_len} doubles, need {needed}"
                    ));
                }
                let out = std::slice::from_raw_parts_mut(buffer, needed);
                for c in 0..wave.num_channels() {
                    for i in 0..wave.len_samples() {
                        out[c * wave.len_samples() + i] = wave.samples[(c, i)];
                    }
                }
                BsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Output sizes of [`bs_istft`] for this spectrogram.
///
/// # Safety
/// `spec` must come from this library; the out-pointers must each be valid
/// for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn bs_istft_dims(
    spec: *const BsSpectrogram,
    out_channels: *mut usize,
    out_samples: *mut usize,
) -> BsStatus {
    guard(|| {
        if spec.is_null() || out_channels.is_null() || out_samples.is_null() {
            return fail_null();
        }
        let s = &(*spec).0;
        *out_channels = s.num_channels();
        *out_samples = s.original_len_samples;
        BsStatus::Ok
    })
}

/// # Safety
/// `spec` must have come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_spectrogram_free(spec: *mut BsSpectrogram) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

// --- One-shot oracle separation ----------------------------------------------

/// Separate a multichannel mixture with oracle masks and MVDR beamforming.
///
/// `mix` is channel-major `n_channels * n_samples`. `refs` concatenates the
/// per-source spatial images, each channel-major, `n_sources * n_channels *
/// n_samples` doubles in total. `ref_channel` below zero selects the
/// mask-weighted max-power channel. `out_sources` receives `n_sources *
/// n_samples` doubles (one mono estimate per source).
///
/// # Safety
/// All pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn bs_separate_oracle(
    config: *const BsStftConfig,
    mix: *const f64,
    n_channels: usize,
    n_samples: usize,
    refs: *const f64,
    n_sources: usize,
    mask_kind: BsMaskKind,
    mvdr_eps: f64,
    ref_channel: i32,
    out_sources: *mut f64,
) -> BsStatus {
    guard(|| {
        if config.is_null() || mix.is_null() || refs.is_null() || out_sources.is_null() {
            return fail_null();
        }
        if n_sources == 0 {
            return fail_invalid("need at least one source");
        }
        let cfg = &(*config).0;
        let mix_wave = match waveform_from_raw(mix, n_channels, n_samples, cfg.sample_rate_hz) {
            Ok(w) => w,
            Err(e) => return fail(e),
        };
        let mix_spec = match stft(&mix_wave, cfg) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let per_source = n_channels * n_samples;
        let mut ref_specs = Vec::with_capacity(n_sources);
        for s in 0..n_sources {
            let wave = match waveform_from_raw(
                refs.add(s * per_source),
                n_channels,
                n_samples,
                cfg.sample_rate_hz,
            ) {
                Ok(w) => w,
                Err(e) => return fail(e),
            };
            match stft(&wave, cfg) {
                Ok(spec) => ref_specs.push(spec),
                Err(e) => return fail(e),
            }
        }

        let kind = match mask_kind {
            BsMaskKind::Irm => OracleMaskKind::Irm,
            BsMaskKind::Ibm => OracleMaskKind::Ibm,
        };
        let masks = match oracle_masks(&ref_specs, &mix_spec, kind) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        let policy = if ref_channel < 0 {
            ReferencePolicy::MaxAveragePower
        } else {
            ReferencePolicy::FixedChannel(ref_channel as usize)
        };
        let reference = match select_reference(&mix_spec, &masks, policy) {
            Ok(u) => u,
            Err(e) => return fail(e),
        };
        let psd = match estimate_psd(&mix_spec, &masks) {
            Ok((p, _)) => p,
            Err(e) => return fail(e),
        };
        let filters = match mvdr_filters(&psd, &reference, mvdr_eps) {
            Ok((f, _)) => f,
            Err(e) => return fail(e),
        };
        let separated = match apply_filters(&filters, &mix_spec) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };

        let out = std::slice::from_raw_parts_mut(out_sources, n_sources * n_samples);
        for s in 1..=n_sources {
            let spec = match separated.speaker_spectrogram(s) {
                Ok(sp) => sp,
                Err(e) => return fail(e),
            };
            let wave = match istft(&spec) {
                Ok(w) => w,
                Err(e) => return fail(e),
            };
            for i in 0..n_samples.min(wave.len_samples()) {
                out[(s - 1) * n_samples + i] = wave.samples[(0, i)];
            }
        }
        BsStatus::Ok
    })
}

// --- Metrics and losses --------------------------------------------------------

/// Scale-invariant SDR in dB. `out_capped` (nullable) is set to 1 when the
/// residual vanished and the +100 dB cap applies.
///
/// # Safety
/// `estimate` and `reference` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bs_si_sdr(
    estimate: *const f64,
    reference: *const f64,
    len: usize,
    out_db: *mut f64,
    out_capped: *mut i32,
) -> BsStatus {
    guard(|| {
        if estimate.is_null() || reference.is_null() || out_db.is_null() {
            return fail_null();
        }
        let est = std::slice::from_raw_parts(estimate, len);
        let reference = std::slice::from_raw_parts(reference, len);
        match si_sdr(est, reference) {
            Ok(score) => {
                *out_db = score.db;
                if !out_capped.is_null() {
                    *out_capped = i32::from(score.capped);
                }
                BsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// CTC loss of row-major logits `(frames, vocab)` against a label sequence
/// (tokens in `[1, vocab)`; 0 is the blank). `out_grad` (nullable) receives
/// the gradient, same shape as the logits. Infeasible instances yield +inf
/// loss and a zero gradient.
///
/// # Safety
/// Buffer sizes: `logits` holds `frames * vocab`, `labels` holds `n_labels`,
/// `out_grad` (when non-null) holds `frames * vocab`.
#[no_mangle]
pub unsafe extern "C" fn bs_ctc_loss(
    logits: *const f64,
    frames: usize,
    vocab: usize,
    labels: *const u32,
    n_labels: usize,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> BsStatus {
    guard(|| {
        if logits.is_null() || out_loss.is_null() || (labels.is_null() && n_labels > 0) {
            return fail_null();
        }
        let raw = std::slice::from_raw_parts(logits, frames * vocab);
        let data = match Array2::from_shape_vec((frames, vocab), raw.to_vec()) {
            Ok(d) => d,
            Err(e) => return fail_invalid(&e.to_string()),
        };
        let logits = match LogitSequence::new(data) {
            Ok(l) => l,
            Err(e) => return fail(e),
        };
        let tokens: Vec<usize> = if n_labels == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(labels, n_labels)
                .iter()
                .map(|&t| t as usize)
                .collect()
        };
        let labels = match LabelSequence::new(tokens, vocab) {
            Ok(l) => l,
            Err(e) => return fail(e),
        };
        match ctc_loss(&logits, &labels) {
            Ok(outcome) => {
                *out_loss = outcome.loss;
                if !out_grad.is_null() {
                    let grad = std::slice::from_raw_parts_mut(out_grad, frames * vocab);
                    for (slot, &g) in grad.iter_mut().zip(outcome.grad.iter()) {
                        *slot = g;
                    }
                }
                BsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Resolve the best stream-to-reference assignment for a row-major square
/// loss matrix. `out_permutation` receives `size` indices; `out_total` the
/// summed loss of the chosen assignment.
///
/// # Safety
/// `losses` holds `size * size` doubles; `out_permutation` holds `size`
/// entries.
#[no_mangle]
pub unsafe extern "C" fn bs_pit_resolve(
    losses: *const f64,
    size: usize,
    out_permutation: *mut usize,
    out_total: *mut f64,
) -> BsStatus {
    guard(|| {
        if losses.is_null() || out_permutation.is_null() || out_total.is_null() {
            return fail_null();
        }
        let raw = std::slice::from_raw_parts(losses, size * size);
        let data = match Array2::from_shape_vec((size, size), raw.to_vec()) {
            Ok(d) => d,
            Err(e) => return fail_invalid(&e.to_string()),
        };
        let matrix = match LossMatrix::new(data) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match pit_resolve(&matrix) {
            Ok((perm, total)) => {
                let out = std::slice::from_raw_parts_mut(out_permutation, size);
                out.copy_from_slice(&perm.map);
                *out_total = total;
                BsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Levenshtein distance with substitution/insertion/deletion counts.
///
/// # Safety
/// `hyp` holds `hyp_len` tokens and `reference` holds `ref_len` tokens.
#[no_mangle]
pub unsafe extern "C" fn bs_edit_distance(
    hyp: *const u32,
    hyp_len: usize,
    reference: *const u32,
    ref_len: usize,
    out_substitutions: *mut usize,
    out_insertions: *mut usize,
    out_deletions: *mut usize,
) -> BsStatus {
    guard(|| {
        if (hyp.is_null() && hyp_len > 0) || (reference.is_null() && ref_len > 0) {
            return fail_null();
        }
        let h: &[u32] = if hyp_len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(hyp, hyp_len)
        };
        let r: &[u32] = if ref_len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(reference, ref_len)
        };
        let report = beamsep::metrics::edit_distance(h, r);
        if !out_substitutions.is_null() {
            *out_substitutions = report.substitutions;
        }
        if !out_insertions.is_null() {
            *out_insertions = report.insertions;
        }
        if !out_deletions.is_null() {
            *out_deletions = report.deletions;
        }
        BsStatus::Ok
    })
}
