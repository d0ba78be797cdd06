//! Per-source, per-channel time-frequency masks.
//!
//! Source index 0 is reserved for the noise component throughout; speakers
//! occupy indices `1..=J`. Masks live in `[0, 1]` and are not constrained to
//! sum to one across sources.

use ndarray::{Array3, Array4, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::MultichannelSpectrogram;

/// Denominator guard for ratio masks; silent bins get masks near zero rather
/// than 0/0.
pub const MASK_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMaskKind {
    /// Magnitude-ratio mask |S^i| / (sum_j |S^j| + eps).
    Irm,
    /// One-hot mask selecting the dominant source per bin.
    Ibm,
}

/// Mask tensor with axes `(source 0..=J, time, frequency, channel)`.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub data: Array4<f64>,
    pub num_speakers: usize,
}

impl MaskSet {
    pub fn new(data: Array4<f64>, num_speakers: usize) -> Result<Self> {
        if data.shape()[0] != num_speakers + 1 {
            return Err(Error::ShapeMismatch(format!(
                "mask tensor has {} source slots, expected J+1 = {}",
                data.shape()[0],
                num_speakers + 1
            )));
        }
        if data.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::InvalidInput(
                "mask entries must lie in [0, 1]".into(),
            ));
        }
        Ok(MaskSet { data, num_speakers })
    }

    /// Mask plane for one source, axes `(time, frequency, channel)`.
    pub fn source(&self, i: usize) -> ndarray::ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), i)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2], s[3])
    }
}

/// Single-channel mask estimator contract: given one channel's complex
/// spectrogram, produce `(J+1, T, F)` masks in `[0, 1]` for noise plus each
/// speaker. Estimation must depend only on that channel.
pub trait MaskEstimator {
    fn num_speakers(&self) -> usize;
    fn estimate(&self, channel_spec: ArrayView2<'_, Complex64>) -> Result<Array3<f64>>;
}

/// Oracle masks computed from the true per-source images.
///
/// The noise reference is the magnitude residual `|X_mix| - sum_j |S^j|`,
/// which float arithmetic can drive negative; its mask is clamped to `[0, 1]`
/// after the ratio. The shared denominator is `sum_j |S^j| + |residual| + eps`
/// so speaker masks of a noise-free additive scene keep their plain
/// magnitude-ratio form.
pub fn oracle_masks(
    refs: &[MultichannelSpectrogram],
    mix: &MultichannelSpectrogram,
    kind: OracleMaskKind,
) -> Result<MaskSet> {
    if refs.is_empty() {
        return Err(Error::InvalidInput("no reference spectrograms".into()));
    }
    let (t, f, c) = (mix.num_frames(), mix.num_bins(), mix.num_channels());
    for (i, r) in refs.iter().enumerate() {
        if r.num_frames() != t || r.num_bins() != f || r.num_channels() != c {
            return Err(Error::ShapeMismatch(format!(
                "reference {i} has shape ({}, {}, {}), mix has ({t}, {f}, {c})",
                r.num_frames(),
                r.num_bins(),
                r.num_channels()
            )));
        }
    }
    let j = refs.len();
    let mut data = Array4::zeros((j + 1, t, f, c));

    for ti in 0..t {
        for fi in 0..f {
            for ci in 0..c {
                let mags: Vec<f64> = refs.iter().map(|r| r.data[(ti, fi, ci)].norm()).collect();
                let speaker_sum: f64 = mags.iter().sum();
                let residual = mix.data[(ti, fi, ci)].norm() - speaker_sum;
                let denom = speaker_sum + residual.abs() + MASK_EPS;
                match kind {
                    OracleMaskKind::Irm => {
                        data[(0, ti, fi, ci)] = (residual / denom).clamp(0.0, 1.0);
                        for (s, &m) in mags.iter().enumerate() {
                            data[(s + 1, ti, fi, ci)] = (m / denom).clamp(0.0, 1.0);
                        }
                    }
                    OracleMaskKind::Ibm => {
                        // argmax over noise residual and speakers; first wins ties
                        let noise_mag = residual.max(0.0);
                        let mut best = 0usize;
                        let mut best_mag = noise_mag;
                        for (s, &m) in mags.iter().enumerate() {
                            if m > best_mag {
                                best_mag = m;
                                best = s + 1;
                            }
                        }
                        data[(best, ti, fi, ci)] = 1.0;
                    }
                }
            }
        }
    }

    MaskSet::new(data, j)
}

/// Run a mask estimator independently on every channel and stack the results.
/// Estimator output is validated against the interface contract (shape and
/// range); a violation is a hard error, not a clamp.
pub fn apply_masknet(
    estimator: &dyn MaskEstimator,
    mix: &MultichannelSpectrogram,
) -> Result<MaskSet> {
    let (t, f, c) = (mix.num_frames(), mix.num_bins(), mix.num_channels());
    let j = estimator.num_speakers();
    let mut data = Array4::zeros((j + 1, t, f, c));
    for ci in 0..c {
        let channel = mix.data.index_axis(Axis(2), ci);
        let masks = estimator.estimate(channel)?;
        if masks.shape() != [j + 1, t, f] {
            return Err(Error::ShapeMismatch(format!(
                "estimator returned shape {:?} for channel {ci}, expected ({}, {t}, {f})",
                masks.shape(),
                j + 1
            )));
        }
        if masks.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::InvalidInput(format!(
                "estimator produced masks outside [0, 1] on channel {ci}"
            )));
        }
        for si in 0..=j {
            for ti in 0..t {
                for fi in 0..f {
                    data[(si, ti, fi, ci)] = masks[(si, ti, fi)];
                }
            }
        }
    }
    MaskSet::new(data, j)
}

/// Per-frequency median renormalization used only to make mask plots
/// readable. Never part of the signal path.
pub fn median_renormalize_for_plot(masks: &MaskSet) -> Array4<f64> {
    let (s, t, f, c) = masks.dims();
    let mut out = masks.data.clone();
    for si in 0..s {
        for ci in 0..c {
            for fi in 0..f {
                let mut col: Vec<f64> = (0..t).map(|ti| masks.data[(si, ti, fi, ci)]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = col[t / 2];
                if median > MASK_EPS {
                    for ti in 0..t {
                        out[(si, ti, fi, ci)] /= median;
                    }
                }
            }
        }
    }
    out
}

/// Minimal trainable estimator: an independent affine map plus sigmoid per
/// (source, frequency) over the log-magnitude input, fit by gradient descent
/// on mask MSE against oracle targets. This exists to demonstrate the
/// estimator interface end to end; it is nothing like a real mask network.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AffineSigmoidEstimator {
    pub num_speakers: usize,
    pub num_bins: usize,
    pub weight: Vec<f64>, // (J+1) x F, row-major
    pub bias: Vec<f64>,   // (J+1) x F
}

impl AffineSigmoidEstimator {
    pub fn new(num_speakers: usize, num_bins: usize) -> Self {
        let slots = (num_speakers + 1) * num_bins;
        AffineSigmoidEstimator {
            num_speakers,
            num_bins,
            weight: vec![0.0; slots],
            bias: vec![0.0; slots],
        }
    }

    fn logmag(z: Complex64) -> f64 {
        (z.norm() + MASK_EPS).ln()
    }

    /// One epoch of full-batch gradient descent on MSE against `target`
    /// masks for a single channel. Returns the pre-update MSE.
    pub fn train_step(
        &mut self,
        channel_spec: ArrayView2<'_, Complex64>,
        target: &Array3<f64>,
        learning_rate: f64,
    ) -> Result<f64> {
        let (t, f) = (channel_spec.nrows(), channel_spec.ncols());
        if target.shape() != [self.num_speakers + 1, t, f] {
            return Err(Error::ShapeMismatch(
                "training target shape does not match estimator".into(),
            ));
        }
        let mut mse = 0.0;
        let count = ((self.num_speakers + 1) * t * f) as f64;
        let mut grad_w = vec![0.0; self.weight.len()];
        let mut grad_b = vec![0.0; self.bias.len()];
        for si in 0..=self.num_speakers {
            for fi in 0..f {
                let idx = si * self.num_bins + fi;
                for ti in 0..t {
                    let z = Self::logmag(channel_spec[(ti, fi)]);
                    let a = self.weight[idx] * z + self.bias[idx];
                    let m = 1.0 / (1.0 + (-a).exp());
                    let err = m - target[(si, ti, fi)];
                    mse += err * err;
                    let d = 2.0 * err * m * (1.0 - m) / count;
                    grad_w[idx] += d * z;
                    grad_b[idx] += d;
                }
            }
        }
        for (w, g) in self.weight.iter_mut().zip(&grad_w) {
            *w -= learning_rate * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad_b) {
            *b -= learning_rate * g;
        }
        Ok(mse / count)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

impl MaskEstimator for AffineSigmoidEstimator {
    fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    fn estimate(&self, channel_spec: ArrayView2<'_, Complex64>) -> Result<Array3<f64>> {
        let (t, f) = (channel_spec.nrows(), channel_spec.ncols());
        if f != self.num_bins {
            return Err(Error::ShapeMismatch(format!(
                "estimator expects {} bins, spectrogram has {f}",
                self.num_bins
            )));
        }
        let mut out = Array3::zeros((self.num_speakers + 1, t, f));
        for si in 0..=self.num_speakers {
            for fi in 0..f {
                let idx = si * self.num_bins + fi;
                for ti in 0..t {
                    let z = Self::logmag(channel_spec[(ti, fi)]);
                    let a = self.weight[idx] * z + self.bias[idx];
                    out[(si, ti, fi)] = 1.0 / (1.0 + (-a).exp());
                }
            }
        }
        Ok(out)
    }
}
