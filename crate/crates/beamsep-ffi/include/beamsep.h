#ifndef BEAMSEP_H
#define BEAMSEP_H

/* Generated by cbindgen from beamsep-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API function.
 */
typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  BS_STATUS_DATA_ERROR = 3,
  BS_STATUS_NUMERIC_ERROR = 4,
  BS_STATUS_PANIC = 5,
} BsStatus;

/**
 * Oracle mask flavors for [`bs_separate_oracle`].
 */
typedef enum BsMaskKind {
  BS_MASK_KIND_IRM = 0,
  BS_MASK_KIND_IBM = 1,
} BsMaskKind;

/**
 * Opaque complex spectrogram with axes (time, frequency, channel).
 */
typedef struct BsSpectrogram BsSpectrogram;

/**
 * Opaque STFT analysis/synthesis configuration.
 */
typedef struct BsStftConfig BsStftConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next API call from the same thread.
 */
const char *bs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bs_version(void);

/**
 * Default profile: 16 kHz, 400-sample Hann window, 160-sample hop,
 * 512-point FFT (257 bins).
 *
 * # Safety
 * `out` must be a valid location for one pointer.
 */
enum BsStatus bs_stft_config_default(struct BsStftConfig **out);

/**
 * # Safety
 * `out` must be a valid location for one pointer.
 */
enum BsStatus bs_stft_config_new(uint32_t sample_rate_hz,
                                 size_t window_len_samples,
                                 size_t hop_samples,
                                 size_t fft_size,
                                 struct BsStftConfig **out);

/**
 * Number of frequency bins the configuration produces (`fft_size/2 + 1`).
 *
 * # Safety
 * `config` must come from a `bs_stft_config_*` constructor; `out` must be a
 * valid location for one `size_t`.
 */
enum BsStatus bs_stft_config_num_bins(const struct BsStftConfig *config, size_t *out);

/**
 * # Safety
 * `config` must have come from a `bs_stft_config_*` constructor and must not
 * be used afterwards.
 */
void bs_stft_config_free(struct BsStftConfig *config);

/**
 * Forward transform of channel-major interleaved samples.
 *
 * # Safety
 * `samples` must point to `n_channels * n_samples` doubles; `config` and
 * `out` must be valid.
 */
enum BsStatus bs_stft_forward(const struct BsStftConfig *config,
                              const double *samples,
                              size_t n_channels,
                              size_t n_samples,
                              struct BsSpectrogram **out);

/**
 * Spectrogram dimensions: frames, bins, channels.
 *
 * # Safety
 * `spec` must come from this library; the out-pointers must each be valid
 * for one `size_t`.
 */
enum BsStatus bs_spectrogram_dims(const struct BsSpectrogram *spec,
                                  size_t *out_frames,
                                  size_t *out_bins,
                                  size_t *out_channels);

/**
 * Copy the complex data out as interleaved (re, im) doubles in
 * (time, frequency, channel) row-major order. `buffer` must hold
 * `2 * frames * bins * channels` doubles.
 *
 * # Safety
 * `buffer` must be writable for that many doubles.
 */
enum BsStatus bs_spectrogram_copy_data(const struct BsSpectrogram *spec,
                                       double *buffer,
                                       size_t buffer_len);

/**
 * Inverse transform. `buffer` must hold `channels * original_len` doubles;
 * query the sizes with [`bs_istft_dims`] first.
 *
 * # Safety
 * `buffer` must be writable for `buffer_len` doubles.
 */
enum BsStatus bs_istft(const struct BsSpectrogram *spec, double *buffer, size_t buffer_len);

/**
 * Output sizes of [`bs_istft`] for this spectrogram.
 *
 * # Safety
 * `spec` must come from this library; the out-pointers must each be valid
 * for one `size_t`.
 */
enum BsStatus bs_istft_dims(const struct BsSpectrogram *spec,
                            size_t *out_channels,
                            size_t *out_samples);

/**
 * # Safety
 * `spec` must have come from this library and must not be used afterwards.
 */
void bs_spectrogram_free(struct BsSpectrogram *spec);

/**
 * Separate a multichannel mixture with oracle masks and MVDR beamforming.
 *
 * `mix` is channel-major `n_channels * n_samples`. `refs` concatenates the
 * per-source spatial images, each channel-major, `n_sources * n_channels *
 * n_samples` doubles in total. `ref_channel` below zero selects the
 * mask-weighted max-power channel. `out_sources` receives `n_sources *
 * n_samples` doubles (one mono estimate per source).
 *
 * # Safety
 * All pointers must reference buffers of the stated sizes.
 */
enum BsStatus bs_separate_oracle(const struct BsStftConfig *config,
                                 const double *mix,
                                 size_t n_channels,
                                 size_t n_samples,
                                 const double *refs,
                                 size_t n_sources,
                                 enum BsMaskKind mask_kind,
                                 double mvdr_eps,
                                 int32_t ref_channel,
                                 double *out_sources);

/**
 * Scale-invariant SDR in dB. `out_capped` (nullable) is set to 1 when the
 * residual vanished and the +100 dB cap applies.
 *
 * # Safety
 * `estimate` and `reference` must each point to `len` doubles.
 */
enum BsStatus bs_si_sdr(const double *estimate,
                        const double *reference,
                        size_t len,
                        double *out_db,
                        int32_t *out_capped);

/**
 * CTC loss of row-major logits `(frames, vocab)` against a label sequence
 * (tokens in `[1, vocab)`; 0 is the blank). `out_grad` (nullable) receives
 * the gradient, same shape as the logits. Infeasible instances yield +inf
 * loss and a zero gradient.
 *
 * # Safety
 * Buffer sizes: `logits` holds `frames * vocab`, `labels` holds `n_labels`,
 * `out_grad` (when non-null) holds `frames * vocab`.
 */
enum BsStatus bs_ctc_loss(const double *logits,
                          size_t frames,
                          size_t vocab,
                          const uint32_t *labels,
                          size_t n_labels,
                          double *out_loss,
                          double *out_grad);

/**
 * Resolve the best stream-to-reference assignment for a row-major square
 * loss matrix. `out_permutation` receives `size` indices; `out_total` the
 * summed loss of the chosen assignment.
 *
 * # Safety
 * `losses` holds `size * size` doubles; `out_permutation` holds `size`
 * entries.
 */
enum BsStatus bs_pit_resolve(const double *losses,
                             size_t size,
                             size_t *out_permutation,
                             double *out_total);

/**
 * Levenshtein distance with substitution/insertion/deletion counts.
 *
 * # Safety
 * `hyp` holds `hyp_len` tokens and `reference` holds `ref_len` tokens.
 */
enum BsStatus bs_edit_distance(const uint32_t *hyp,
                               size_t hyp_len,
                               const uint32_t *reference,
                               size_t ref_len,
                               size_t *out_substitutions,
                               size_t *out_insertions,
                               size_t *out_deletions);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAMSEP_H */
