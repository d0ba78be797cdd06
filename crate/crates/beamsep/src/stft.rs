//! Windowed short-time Fourier analysis and synthesis.
//!
//! Analysis frames are left-aligned (no centering): frame `t` covers samples
//! `[t*hop, t*hop + window_len)`, so a signal of length `n` yields
//! `1 + (n - window_len) / hop` frames. Each frame is Hann-windowed and
//! zero-padded at the tail to `fft_size` before the transform; only the
//! `fft_size/2 + 1` non-negative frequency bins are kept.
//!
//! Synthesis is weighted overlap-add: the inverse transform of each frame is
//! windowed again and accumulated, then normalized per sample by the summed
//! squared window. For an unmodified spectrogram this reconstructs the input
//! exactly wherever the window coverage is non-degenerate.

use ndarray::{Array2, Array3, ArrayView1};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Threshold below which the overlap-add normalization denominator is treated
/// as unusable, relative to its maximum over the signal. Samples under it
/// (the outermost edge samples, where only a window tail touches) are emitted
/// as zero: after spectral modification the frame content there is no longer
/// proportional to the window, and dividing by a near-zero coverage sum would
/// amplify it into spikes. For the default Hann/hop profile the interior
/// coverage never drops below ~0.9, two orders of magnitude above this floor.
const OLA_DENOM_REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

/// Analysis/synthesis parameters. The default profile is 16 kHz audio with a
/// 25 ms (400-sample) Hann window, 10 ms (160-sample) hop and a 512-point
/// transform, giving 257 frequency bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub window_len_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub window_kind: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            sample_rate_hz: 16_000,
            window_len_samples: 400,
            hop_samples: 160,
            fft_size: 512,
            window_kind: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig(
                "sample_rate_hz must be positive".into(),
            ));
        }
        if self.hop_samples == 0 {
            return Err(Error::InvalidConfig("hop_samples must be positive".into()));
        }
        if !(self.hop_samples <= self.window_len_samples
            && self.window_len_samples <= self.fft_size)
        {
            return Err(Error::InvalidConfig(format!(
                "need hop <= window <= fft_size, got hop={} window={} fft_size={}",
                self.hop_samples, self.window_len_samples, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Number of retained frequency bins, `fft_size/2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples: `1 + (len - window)/hop`.
    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.window_len_samples {
            return Err(Error::InvalidInput(format!(
                "waveform of {} samples is shorter than one {}-sample window",
                len, self.window_len_samples
            )));
        }
        Ok(1 + (len - self.window_len_samples) / self.hop_samples)
    }

    /// Periodic (DFT-even) window coefficients.
    pub fn window(&self) -> Vec<f64> {
        match self.window_kind {
            WindowKind::Hann => hann_periodic(self.window_len_samples),
        }
    }
}

/// Periodic Hann window: `0.5 - 0.5 cos(2 pi n / len)`.
fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos())
        .collect()
}

/// Time-domain multichannel signal. Samples are stored channel-major
/// `(channel, sample)`; all channels have equal length.
#[derive(Debug, Clone)]
pub struct MultichannelWaveform {
    pub samples: Array2<f64>,
    pub sample_rate_hz: u32,
}

impl MultichannelWaveform {
    pub fn new(samples: Array2<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(MultichannelWaveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn from_mono(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((1, n), samples)
            .expect("mono shape is consistent by construction");
        Self::new(arr, sample_rate_hz)
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.row(c)
    }
}

/// Complex STFT tensor with axes `(time, frequency, channel)`.
#[derive(Debug, Clone)]
pub struct MultichannelSpectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub original_len_samples: usize,
}

impl MultichannelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Forward transform of every channel.
pub fn stft(wave: &MultichannelWaveform, cfg: &StftConfig) -> Result<MultichannelSpectrogram> {
    cfg.validate()?;
    if wave.sample_rate_hz != cfg.sample_rate_hz {
        return Err(Error::InvalidInput(format!(
            "waveform sample rate {} does not match config {}",
            wave.sample_rate_hz, cfg.sample_rate_hz
        )));
    }
    if wave.samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "waveform contains non-finite samples".into(),
        ));
    }
    let len = wave.len_samples();
    let frames = cfg.num_frames(len)?;
    let bins = cfg.num_bins();
    let channels = wave.num_channels();
    let window = cfg.window();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    let mut out = Array3::zeros((frames, bins, channels));

    for c in 0..channels {
        let chan = wave.channel(c);
        for t in 0..frames {
            let start = t * cfg.hop_samples;
            for (m, w) in window.iter().enumerate() {
                buf[m] = Complex64::new(chan[start + m] * w, 0.0);
            }
            // tail zero-padding from window_len to fft_size
            for slot in buf.iter_mut().skip(cfg.window_len_samples) {
                *slot = Complex64::new(0.0, 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out[(t, f, c)] = buf[f];
            }
        }
    }

    Ok(MultichannelSpectrogram {
        data: out,
        config: *cfg,
        original_len_samples: len,
    })
}

/// Weighted overlap-add synthesis, truncated to the original signal length.
///
/// Samples whose window coverage is degenerate (the leading and trailing edge
/// of the signal) are emitted as zero; a degenerate denominator strictly
/// inside `[window_len, len - window_len)` is an error instead, since the
/// interior is where the round-trip contract holds.
pub fn istft(spec: &MultichannelSpectrogram) -> Result<MultichannelWaveform> {
    let cfg = &spec.config;
    cfg.validate()?;
    let (frames, bins, channels) = (spec.num_frames(), spec.num_bins(), spec.num_channels());
    if bins != cfg.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins but config implies {}",
            bins,
            cfg.num_bins()
        )));
    }
    if spec.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "spectrogram contains non-finite entries".into(),
        ));
    }

    let len = spec.original_len_samples;
    let window = cfg.window();
    let n = cfg.fft_size;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    let mut num = Array2::<f64>::zeros((channels, len));
    let mut den = vec![0.0f64; len];

    for t in 0..frames {
        let start = t * cfg.hop_samples;
        for (m, w) in window.iter().enumerate() {
            if start + m < len {
                den[start + m] += w * w;
            }
        }
        for c in 0..channels {
            // rebuild the full conjugate-symmetric spectrum
            for (f, slot) in buf.iter_mut().enumerate() {
                *slot = if f < bins {
                    spec.data[(t, f, c)]
                } else {
                    spec.data[(t, n - f, c)].conj()
                };
            }
            ifft.process(&mut buf);
            let scale = 1.0 / n as f64;
            for (m, w) in window.iter().enumerate() {
                let idx = start + m;
                if idx < len {
                    num[(c, idx)] += w * buf[m].re * scale;
                }
            }
        }
    }

    let den_max = den.iter().cloned().fold(0.0f64, f64::max);
    let floor = den_max * OLA_DENOM_REL_FLOOR;
    let interior = cfg.window_len_samples..len.saturating_sub(cfg.window_len_samples);
    let mut out = Array2::<f64>::zeros((channels, len));
    for i in 0..len {
        if den[i] <= floor {
            if interior.contains(&i) {
                return Err(Error::Numeric(format!(
                    "overlap-add normalization vanishes at interior sample {i}"
                )));
            }
            continue; // edge sample, no usable coverage
        }
        for c in 0..channels {
            out[(c, i)] = num[(c, i)] / den[i];
        }
    }

    MultichannelWaveform::new(out, cfg.sample_rate_hz)
}
