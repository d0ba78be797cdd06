//! Multi-source MVDR beamforming: mask-weighted PSD estimation, filter
//! solution with an interference-sum PSD, filter application, and beam
//! pattern analysis.
//!
//! For speaker `i`, every other source — the competing speakers and the
//! noise component (source 0) — counts as interference, so the usual noise
//! PSD in the MVDR solution is replaced by the sum of all other sources'
//! PSDs. The filter for speaker `i` at frequency `f` is
//!
//! ```text
//! g_i(f) = (Phi_int^-1 Phi_i / tr(Phi_int^-1 Phi_i)) u
//! ```
//!
//! where `u` is the one-hot reference-microphone vector. The inverse is a
//! Hermitian factorization of the regularized interference sum; when the
//! factorization fails the code falls back to a pseudo-inverse and flags the
//! bin in the diagnostics.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::masking::MaskSet;
use crate::stft::{MultichannelSpectrogram, StftConfig};

/// Substitute mask-weight total for bins whose masks sum to zero over time.
const WEIGHT_FLOOR: f64 = 1e-10;

/// Default scale-free regularization for the interference PSD inverse.
pub const DEFAULT_MVDR_EPS: f64 = 1e-6;

/// Per-source, per-frequency spatial covariance matrices, axes
/// `(source 0..=J, frequency, channel, channel)`. Source 0 is the noise.
#[derive(Debug, Clone)]
pub struct PsdSet {
    pub matrices: Array4<Complex64>,
}

impl PsdSet {
    pub fn num_sources(&self) -> usize {
        self.matrices.shape()[0]
    }
    pub fn num_bins(&self) -> usize {
        self.matrices.shape()[1]
    }
    pub fn num_channels(&self) -> usize {
        self.matrices.shape()[2]
    }
}

#[derive(Debug, Clone, Default)]
pub struct PsdDiagnostics {
    /// (source, frequency) bins whose mask weight summed to zero and were
    /// floored instead of dividing by zero.
    pub floored_weights: Vec<(usize, usize)>,
}

/// Per-speaker beamformer weights, axes `(speaker 1..=J stored at row i-1,
/// frequency, channel)`, plus the shared reference vector.
#[derive(Debug, Clone)]
pub struct BeamformerFilters {
    pub weights: Array3<Complex64>,
    pub reference: Array1<f64>,
}

impl BeamformerFilters {
    pub fn num_speakers(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn num_bins(&self) -> usize {
        self.weights.shape()[1]
    }
    pub fn num_channels(&self) -> usize {
        self.weights.shape()[2]
    }
}

#[derive(Debug, Clone)]
pub struct MvdrDiagnostics {
    /// Condition number of the regularized interference PSD per
    /// (speaker, frequency).
    pub condition_numbers: Array2<f64>,
    /// (speaker, frequency) bins where the Hermitian factorization failed and
    /// a pseudo-inverse was used.
    pub pinv_fallbacks: Vec<(usize, usize)>,
}

/// Per-speaker single-channel beamformed spectrograms, axes
/// `(speaker, time, frequency)`.
#[derive(Debug, Clone)]
pub struct SeparatedSpectrograms {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub original_len_samples: usize,
}

impl SeparatedSpectrograms {
    pub fn num_speakers(&self) -> usize {
        self.data.shape()[0]
    }

    /// View one speaker as a single-channel spectrogram for resynthesis.
    pub fn speaker_spectrogram(&self, speaker: usize) -> Result<MultichannelSpectrogram> {
        if speaker == 0 || speaker > self.num_speakers() {
            return Err(Error::InvalidInput(format!(
                "speaker index {speaker} out of range 1..={}",
                self.num_speakers()
            )));
        }
        let plane = self.data.index_axis(Axis(0), speaker - 1);
        let (t, f) = (plane.nrows(), plane.ncols());
        let data = Array3::from_shape_fn((t, f, 1), |(ti, fi, _)| plane[(ti, fi)]);
        Ok(MultichannelSpectrogram {
            data,
            config: self.config,
            original_len_samples: self.original_len_samples,
        })
    }
}

/// Mask-weighted PSD estimation.
///
/// The per-channel mask vector is reduced to a scalar weight by averaging
/// over channels, which is channel-symmetric and equals the scalar mask when
/// all channels agree. Results are symmetrized to exactly Hermitian.
pub fn estimate_psd(
    mix: &MultichannelSpectrogram,
    masks: &MaskSet,
) -> Result<(PsdSet, PsdDiagnostics)> {
    let (t, f, c) = (mix.num_frames(), mix.num_bins(), mix.num_channels());
    let (s, mt, mf, mc) = masks.dims();
    if (mt, mf, mc) != (t, f, c) {
        return Err(Error::ShapeMismatch(format!(
            "masks have shape (*, {mt}, {mf}, {mc}), mix has ({t}, {f}, {c})"
        )));
    }

    let mut matrices = Array4::zeros((s, f, c, c));
    let mut diag = PsdDiagnostics::default();

    for si in 0..s {
        for fi in 0..f {
            let mut acc = Array2::<Complex64>::zeros((c, c));
            let mut weight_sum = 0.0f64;
            for ti in 0..t {
                let mut w = 0.0;
                for ci in 0..c {
                    w += masks.data[(si, ti, fi, ci)];
                }
                w /= c as f64;
                if w == 0.0 {
                    continue;
                }
                weight_sum += w;
                for a in 0..c {
                    let xa = mix.data[(ti, fi, a)];
                    for b in 0..c {
                        acc[(a, b)] += xa * mix.data[(ti, fi, b)].conj() * w;
                    }
                }
            }
            if weight_sum == 0.0 {
                weight_sum = WEIGHT_FLOOR;
                diag.floored_weights.push((si, fi));
            }
            for a in 0..c {
                for b in 0..c {
                    let avg = acc[(a, b)] / weight_sum;
                    matrices[(si, fi, a, b)] = avg;
                }
            }
            // exact Hermitian symmetrization
            for a in 0..c {
                matrices[(si, fi, a, a)] = Complex64::new(matrices[(si, fi, a, a)].re, 0.0);
                for b in a + 1..c {
                    let m = (matrices[(si, fi, a, b)] + matrices[(si, fi, b, a)].conj()) * 0.5;
                    matrices[(si, fi, a, b)] = m;
                    matrices[(si, fi, b, a)] = m.conj();
                }
            }
        }
    }

    Ok((PsdSet { matrices }, diag))
}

type CMat = nalgebra::DMatrix<Complex64>;

fn psd_slice(psd: &PsdSet, source: usize, bin: usize) -> CMat {
    let c = psd.num_channels();
    CMat::from_fn(c, c, |a, b| psd.matrices[(source, bin, a, b)])
}

/// Solve the MVDR filters for every speaker and frequency.
///
/// `reference` must have nonnegative entries summing to one. `eps` scales the
/// diagonal loading `eps * tr(Phi_int) / C * I` added before inversion.
pub fn mvdr_filters(
    psd: &PsdSet,
    reference: &Array1<f64>,
    eps: f64,
) -> Result<(BeamformerFilters, MvdrDiagnostics)> {
    let c = psd.num_channels();
    let bins = psd.num_bins();
    let sources = psd.num_sources();
    if sources < 2 {
        return Err(Error::InvalidInput(
            "PSD set must contain the noise source plus at least one speaker".into(),
        ));
    }
    let speakers = sources - 1;
    if reference.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "reference vector has {} entries, expected {c}",
            reference.len()
        )));
    }
    if reference.iter().any(|&v| v < 0.0) || (reference.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(
            "reference vector entries must be nonnegative and sum to 1".into(),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig("mvdr eps must be positive".into()));
    }

    let u = nalgebra::DVector::from_iterator(c, reference.iter().map(|&v| Complex64::new(v, 0.0)));
    let mut weights = Array3::zeros((speakers, bins, c));
    let mut cond = Array2::zeros((speakers, bins));
    let mut pinv_fallbacks = Vec::new();

    for i in 1..=speakers {
        for fi in 0..bins {
            // interference = every other source, noise included
            let mut phi_int = CMat::zeros(c, c);
            for j in 0..sources {
                if j != i {
                    phi_int += psd_slice(psd, j, fi);
                }
            }
            let trace_int: f64 = (0..c).map(|a| phi_int[(a, a)].re).sum();
            let load = eps * trace_int / c as f64;
            for a in 0..c {
                phi_int[(a, a)] += Complex64::new(load, 0.0);
            }

            let eig = phi_int.clone().symmetric_eigen().eigenvalues;
            let (lo, hi) = eig
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            cond[(i - 1, fi)] = if lo > 0.0 { hi / lo } else { f64::INFINITY };

            let target = psd_slice(psd, i, fi);
            let solved = match phi_int.clone().cholesky() {
                Some(chol) => chol.solve(&target),
                None => {
                    pinv_fallbacks.push((i, fi));
                    let pinv = phi_int.pseudo_inverse(1e-12).map_err(|m| {
                        Error::Numeric(format!(
                            "pseudo-inverse failed at frequency bin {fi} for speaker {i}: {m}"
                        ))
                    })?;
                    &pinv * &target
                }
            };

            let trace: Complex64 = (0..c).map(|a| solved[(a, a)]).sum();
            if trace.norm() < 1e-30 {
                return Err(Error::Numeric(format!(
                    "degenerate target PSD at frequency bin {fi} for speaker {i}"
                )));
            }
            let g = (solved / trace) * &u;
            for a in 0..c {
                if !g[a].is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite filter weight at frequency bin {fi} for speaker {i}"
                    )));
                }
                weights[(i - 1, fi, a)] = g[a];
            }
        }
    }

    Ok((
        BeamformerFilters {
            weights,
            reference: reference.clone(),
        },
        MvdrDiagnostics {
            condition_numbers: cond,
            pinv_fallbacks,
        },
    ))
}

/// Apply the filters: `s_i(t, f) = g_i(f)^H x(t, f)`.
pub fn apply_filters(
    filters: &BeamformerFilters,
    mix: &MultichannelSpectrogram,
) -> Result<SeparatedSpectrograms> {
    let (t, f, c) = (mix.num_frames(), mix.num_bins(), mix.num_channels());
    if filters.num_channels() != c || filters.num_bins() != f {
        return Err(Error::ShapeMismatch(format!(
            "filters expect ({}, {}) (bins, channels), mix has ({f}, {c})",
            filters.num_bins(),
            filters.num_channels()
        )));
    }
    let speakers = filters.num_speakers();
    let mut data = Array3::zeros((speakers, t, f));
    for s in 0..speakers {
        for fi in 0..f {
            for ti in 0..t {
                let mut acc = Complex64::new(0.0, 0.0);
                for ci in 0..c {
                    acc += filters.weights[(s, fi, ci)].conj() * mix.data[(ti, fi, ci)];
                }
                data[(s, ti, fi)] = acc;
            }
        }
    }
    Ok(SeparatedSpectrograms {
        data,
        config: mix.config,
        original_len_samples: mix.original_len_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    FixedChannel(usize),
    MaxAveragePower,
}

/// Pick the reference microphone as a one-hot vector.
///
/// `MaxAveragePower` scores each channel by its speaker-mask-weighted mixture
/// power summed over speakers, time and frequency; ties go to the lowest
/// channel index.
pub fn select_reference(
    mix: &MultichannelSpectrogram,
    masks: &MaskSet,
    policy: ReferencePolicy,
) -> Result<Array1<f64>> {
    let c = mix.num_channels();
    let chosen = match policy {
        ReferencePolicy::FixedChannel(ch) => {
            if ch >= c {
                return Err(Error::InvalidInput(format!(
                    "fixed reference channel {ch} out of range (C = {c})"
                )));
            }
            ch
        }
        ReferencePolicy::MaxAveragePower => {
            let (_, t, f, mc) = masks.dims();
            if (t, f, mc) != (mix.num_frames(), mix.num_bins(), c) {
                return Err(Error::ShapeMismatch(
                    "masks and mix disagree for reference selection".into(),
                ));
            }
            let mut best = (0usize, f64::NEG_INFINITY);
            for ci in 0..c {
                let mut score = 0.0;
                for si in 1..=masks.num_speakers {
                    for ti in 0..t {
                        for fi in 0..f {
                            score +=
                                masks.data[(si, ti, fi, ci)] * mix.data[(ti, fi, ci)].norm_sqr();
                        }
                    }
                }
                if score > best.1 {
                    best = (ci, score);
                }
            }
            best.0
        }
    };
    let mut u = Array1::zeros(c);
    u[chosen] = 1.0;
    Ok(u)
}

/// Far-field steering vector toward azimuth `theta` (degrees, horizontal
/// plane) at `freq_hz` for the given mic geometry.
pub fn steering_vector(
    mic_positions_m: &[[f64; 3]],
    azimuth_deg: f64,
    freq_hz: f64,
    speed_mps: f64,
) -> Vec<Complex64> {
    let theta = azimuth_deg.to_radians();
    let dir = [theta.cos(), theta.sin(), 0.0];
    mic_positions_m
        .iter()
        .map(|p| {
            let proj = dir[0] * p[0] + dir[1] * p[1] + dir[2] * p[2];
            let phase = std::f64::consts::TAU * freq_hz * proj / speed_mps;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BeamPatternRow {
    pub azimuth_deg: f64,
    pub freq_hz: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BeamPatternTable {
    pub rows: Vec<BeamPatternRow>,
}

impl BeamPatternTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("azimuth_deg,freq_hz,magnitude\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.azimuth_deg, r.freq_hz, r.magnitude
            ));
        }
        out
    }
}

/// Beamformer response `|g^H d(theta, f)|` over a 1-degree azimuth grid for
/// the requested analysis frequencies.
pub fn beam_pattern(
    filters: &BeamformerFilters,
    speaker: usize,
    freqs_hz: &[f64],
    mic_positions_m: &[[f64; 3]],
    speed_mps: f64,
    cfg: &StftConfig,
) -> Result<BeamPatternTable> {
    if speaker == 0 || speaker > filters.num_speakers() {
        return Err(Error::InvalidInput(format!(
            "speaker index {speaker} out of range 1..={}",
            filters.num_speakers()
        )));
    }
    if mic_positions_m.len() != filters.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} mic positions for {}-channel filters",
            mic_positions_m.len(),
            filters.num_channels()
        )));
    }
    let nyquist = cfg.sample_rate_hz as f64 / 2.0;
    let mut rows = Vec::with_capacity(freqs_hz.len() * 360);
    for &freq in freqs_hz {
        if freq > nyquist {
            return Err(Error::InvalidInput(format!(
                "frequency {freq} Hz exceeds Nyquist {nyquist} Hz"
            )));
        }
        let bin = ((freq * cfg.fft_size as f64 / cfg.sample_rate_hz as f64).round() as usize)
            .min(cfg.num_bins() - 1);
        for az in 0..360 {
            let d = steering_vector(mic_positions_m, az as f64, freq, speed_mps);
            let mut acc = Complex64::new(0.0, 0.0);
            for (ci, dc) in d.iter().enumerate() {
                acc += filters.weights[(speaker - 1, bin, ci)].conj() * dc;
            }
            rows.push(BeamPatternRow {
                azimuth_deg: az as f64,
                freq_hz: freq,
                magnitude: acc.norm(),
            });
        }
    }
    Ok(BeamPatternTable { rows })
}
