//! Log-mel filterbank features and global mean-variance normalization.
//!
//! Mel scale is `2595 * log10(1 + f/700)`. Filters are peak-1 triangles
//! (no area normalization) spanning `fmin..fmax`, applied to magnitude (not
//! power) spectra. Normalization statistics are corpus-level, accumulated
//! with a streaming one-pass algorithm that supports shard merging; the
//! variance convention is population variance (divide by the frame count).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stft::{MultichannelSpectrogram, StftConfig};

pub const LOG_EPS: f64 = 1e-10;
pub const STD_FLOOR: f64 = 1e-5;
pub const DEFAULT_NUM_MELS: usize = 80;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `(n_mels, num_bins)`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, cfg: &StftConfig, fmin_hz: f64, fmax_hz: f64) -> Result<Self> {
        cfg.validate()?;
        let nyquist = cfg.sample_rate_hz as f64 / 2.0;
        if n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be positive".into()));
        }
        if !(0.0 <= fmin_hz && fmin_hz < fmax_hz && fmax_hz <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= fmin < fmax <= nyquist, got fmin={fmin_hz} fmax={fmax_hz} nyquist={nyquist}"
            )));
        }
        let bins = cfg.num_bins();
        let mel_lo = hz_to_mel(fmin_hz);
        let mel_hi = hz_to_mel(fmax_hz);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|k| mel_to_hz(mel_lo + (mel_hi - mel_lo) * k as f64 / (n_mels + 1) as f64))
            .collect();

        let bin_hz = |b: usize| b as f64 * cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        let mut weights = Array2::zeros((n_mels, bins));
        for k in 0..n_mels {
            let (left, center, right) = (edges[k], edges[k + 1], edges[k + 2]);
            for b in 0..bins {
                let f = bin_hz(b);
                let w = if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
                weights[(k, b)] = w;
            }
        }
        Ok(MelFilterbank {
            weights,
            n_mels,
            fmin_hz,
            fmax_hz,
        })
    }

    pub fn with_defaults(cfg: &StftConfig) -> Result<Self> {
        Self::new(DEFAULT_NUM_MELS, cfg, 0.0, cfg.sample_rate_hz as f64 / 2.0)
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }
}

/// Feature matrix, `(frames, n_mels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }
    pub fn num_dims(&self) -> usize {
        self.data.ncols()
    }
}

/// Log-mel features of a single-channel spectrogram:
/// `log(fb . |S| + eps)` per frame.
pub fn logmel(spec: &MultichannelSpectrogram, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    if spec.num_channels() != 1 {
        return Err(Error::InvalidInput(format!(
            "logmel expects a single-channel spectrogram, got {} channels",
            spec.num_channels()
        )));
    }
    if spec.num_bins() != fb.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.num_bins(),
            fb.num_bins()
        )));
    }
    let (t, f) = (spec.num_frames(), spec.num_bins());
    let mut out = Array2::zeros((t, fb.n_mels));
    for ti in 0..t {
        for k in 0..fb.n_mels {
            let mut acc = 0.0;
            for b in 0..f {
                let w = fb.weights[(k, b)];
                if w != 0.0 {
                    acc += w * spec.data[(ti, b, 0)].norm();
                }
            }
            out[(ti, k)] = (acc + LOG_EPS).ln();
        }
    }
    Ok(FeatureMatrix { data: out })
}

/// Corpus-level normalization statistics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MvnStats {
    pub n_mels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub frame_count: u64,
}

impl MvnStats {
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

/// Streaming mean/variance accumulator (Welford), mergeable across shards.
#[derive(Debug, Clone)]
pub struct MvnAccumulator {
    n_mels: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MvnAccumulator {
    pub fn new(n_mels: usize) -> Self {
        MvnAccumulator {
            n_mels,
            count: 0,
            mean: vec![0.0; n_mels],
            m2: vec![0.0; n_mels],
        }
    }

    pub fn push(&mut self, features: &FeatureMatrix) -> Result<()> {
        if features.num_dims() != self.n_mels {
            return Err(Error::ShapeMismatch(format!(
                "features have {} dims, accumulator expects {}",
                features.num_dims(),
                self.n_mels
            )));
        }
        for row in features.data.rows() {
            self.count += 1;
            let n = self.count as f64;
            for (k, &x) in row.iter().enumerate() {
                let d = x - self.mean[k];
                self.mean[k] += d / n;
                self.m2[k] += d * (x - self.mean[k]);
            }
        }
        Ok(())
    }

    /// Merge another shard's accumulator into this one.
    pub fn merge(&mut self, other: &MvnAccumulator) -> Result<()> {
        if other.n_mels != self.n_mels {
            return Err(Error::ShapeMismatch("accumulator dimensions differ".into()));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for k in 0..self.n_mels {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Produce the statistics. Dimensions whose standard deviation falls
    /// below the floor are substituted and reported.
    pub fn finalize(&self) -> Result<(MvnStats, Vec<usize>)> {
        if self.count == 0 {
            return Err(Error::InvalidInput(
                "cannot finalize statistics over zero frames".into(),
            ));
        }
        let n = self.count as f64;
        let mut std = Vec::with_capacity(self.n_mels);
        let mut floored = Vec::new();
        for k in 0..self.n_mels {
            let s = (self.m2[k] / n).sqrt();
            if s < STD_FLOOR {
                std.push(STD_FLOOR);
                floored.push(k);
            } else {
                std.push(s);
            }
        }
        Ok((
            MvnStats {
                n_mels: self.n_mels,
                mean: self.mean.clone(),
                std,
                frame_count: self.count,
            },
            floored,
        ))
    }
}

/// Normalize features: `(x - mean) / std` elementwise.
pub fn mvn_apply(features: &FeatureMatrix, stats: &MvnStats) -> Result<FeatureMatrix> {
    if stats.frame_count < 2 {
        return Err(Error::InvalidInput(
            "normalization statistics need at least two frames".into(),
        ));
    }
    if features.num_dims() != stats.n_mels {
        return Err(Error::ShapeMismatch(format!(
            "features have {} dims, stats expect {}",
            features.num_dims(),
            stats.n_mels
        )));
    }
    let mut data = features.data.clone();
    for mut row in data.rows_mut() {
        for (k, x) in row.iter_mut().enumerate() {
            *x = (*x - stats.mean[k]) / stats.std[k];
        }
    }
    Ok(FeatureMatrix { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn small_cfg() -> StftConfig {
        StftConfig {
            sample_rate_hz: 16_000,
            window_len_samples: 400,
            hop_samples: 160,
            fft_size: 512,
            window_kind: crate::stft::WindowKind::Hann,
        }
    }

    fn spec_of(data: Array3<Complex64>) -> MultichannelSpectrogram {
        MultichannelSpectrogram {
            data,
            config: small_cfg(),
            original_len_samples: 0,
        }
    }

    #[test]
    fn filterbank_rows_are_nonnegative_unimodal_and_ordered() {
        let fb = MelFilterbank::with_defaults(&small_cfg()).unwrap();
        let mut last_peak = 0usize;
        for k in 0..fb.n_mels {
            let row: Vec<f64> = fb.weights.row(k).to_vec();
            assert!(row.iter().all(|&w| w >= 0.0));
            // unimodal: never rises again after it starts falling
            let mut falling = false;
            for pair in row.windows(2) {
                if pair[1] < pair[0] - 1e-15 {
                    falling = true;
                } else if falling && pair[1] > pair[0] + 1e-15 {
                    panic!("filter {k} is not unimodal");
                }
            }
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(peak >= last_peak, "filter peaks out of order at {k}");
            last_peak = peak;
        }
    }

    #[test]
    fn interior_bins_are_covered() {
        let cfg = small_cfg();
        let fb = MelFilterbank::with_defaults(&cfg).unwrap();
        let bin_hz = |b: usize| b as f64 * cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        for b in 0..fb.num_bins() {
            let f = bin_hz(b);
            if f > fb.fmin_hz && f < fb.fmax_hz {
                let total: f64 = (0..fb.n_mels).map(|k| fb.weights[(k, b)]).sum();
                assert!(total > 0.0, "bin {b} ({f} Hz) has no filter coverage");
            }
        }
    }

    #[test]
    fn zero_spectrogram_maps_to_log_eps() {
        let cfg = small_cfg();
        let fb = MelFilterbank::with_defaults(&cfg).unwrap();
        let spec = spec_of(Array3::zeros((3, cfg.num_bins(), 1)));
        let feat = logmel(&spec, &fb).unwrap();
        for &v in feat.data.iter() {
            assert_eq!(v, LOG_EPS.ln());
        }
    }

    #[test]
    fn doubling_magnitude_shifts_by_log2() {
        let cfg = small_cfg();
        let fb = MelFilterbank::with_defaults(&cfg).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let data = Array3::from_shape_fn((4, cfg.num_bins(), 1), |_| {
            Complex64::new(rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0))
        });
        let doubled = spec_of(&data * Complex64::new(2.0, 0.0));
        let base = spec_of(data);
        let fa = logmel(&base, &fb).unwrap();
        let fbb = logmel(&doubled, &fb).unwrap();
        for (a, b) in fa.data.iter().zip(fbb.data.iter()) {
            assert!((b - a - std::f64::consts::LN_2).abs() < 1e-9);
        }
    }

    #[test]
    fn single_active_bin_lights_only_covering_filters() {
        let cfg = small_cfg();
        let fb = MelFilterbank::with_defaults(&cfg).unwrap();
        let bin = 100;
        let mut data = Array3::zeros((1, cfg.num_bins(), 1));
        data[(0, bin, 0)] = Complex64::new(5.0, 0.0);
        let feat = logmel(&spec_of(data), &fb).unwrap();
        let floor = LOG_EPS.ln();
        for k in 0..fb.n_mels {
            let covers = fb.weights[(k, bin)] > 0.0;
            let above = feat.data[(0, k)] > floor + 1e-9;
            assert_eq!(covers, above, "filter {k}: covers={covers} above={above}");
        }
    }

    fn random_features(frames: usize, dims: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        FeatureMatrix {
            data: Array2::from_shape_fn((frames, dims), |_| rng.random_range(-3.0..5.0)),
        }
    }

    #[test]
    fn self_normalization_yields_zero_mean_unit_std() {
        let feat = random_features(500, 8, 2);
        let mut acc = MvnAccumulator::new(8);
        acc.push(&feat).unwrap();
        let (stats, floored) = acc.finalize().unwrap();
        assert!(floored.is_empty());
        let normalized = mvn_apply(&feat, &stats).unwrap();
        for k in 0..8 {
            let col: Vec<f64> = normalized.data.column(k).to_vec();
            let n = col.len() as f64;
            let mean: f64 = col.iter().sum::<f64>() / n;
            let var: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "dim {k} mean {mean}");
            assert!(
                (var.sqrt() - 1.0).abs() < 1e-6,
                "dim {k} std {}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn constant_dimension_normalizes_to_zero_via_floor() {
        let mut feat = random_features(50, 3, 3);
        for t in 0..50 {
            feat.data[(t, 1)] = 4.25;
        }
        let mut acc = MvnAccumulator::new(3);
        acc.push(&feat).unwrap();
        let (stats, floored) = acc.finalize().unwrap();
        assert_eq!(floored, vec![1]);
        assert_eq!(stats.std[1], STD_FLOOR);
        let normalized = mvn_apply(&feat, &stats).unwrap();
        for t in 0..50 {
            assert_eq!(normalized.data[(t, 1)], 0.0);
        }
    }

    #[test]
    fn sharded_accumulation_matches_one_shot() {
        let a = random_features(123, 6, 4);
        let b = random_features(77, 6, 5);
        let c = random_features(200, 6, 6);

        let mut one = MvnAccumulator::new(6);
        one.push(&a).unwrap();
        one.push(&b).unwrap();
        one.push(&c).unwrap();
        let (stats_one, _) = one.finalize().unwrap();

        // independent two-pass oracle
        let all: Vec<&FeatureMatrix> = vec![&a, &b, &c];
        let n: usize = all.iter().map(|f| f.num_frames()).sum();
        let mut mean = vec![0.0; 6];
        for f in &all {
            for row in f.data.rows() {
                for (k, &x) in row.iter().enumerate() {
                    mean[k] += x;
                }
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; 6];
        for f in &all {
            for row in f.data.rows() {
                for (k, &x) in row.iter().enumerate() {
                    var[k] += (x - mean[k]) * (x - mean[k]);
                }
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }

        // sharded merge
        let mut s1 = MvnAccumulator::new(6);
        s1.push(&a).unwrap();
        let mut s2 = MvnAccumulator::new(6);
        s2.push(&b).unwrap();
        let mut s3 = MvnAccumulator::new(6);
        s3.push(&c).unwrap();
        s1.merge(&s2).unwrap();
        s1.merge(&s3).unwrap();
        let (stats_sharded, _) = s1.finalize().unwrap();

        for k in 0..6 {
            assert!((stats_one.mean[k] - mean[k]).abs() < 1e-10);
            assert!((stats_one.std[k] - var[k].sqrt()).abs() < 1e-10);
            assert!((stats_sharded.mean[k] - stats_one.mean[k]).abs() < 1e-10);
            assert!((stats_sharded.std[k] - stats_one.std[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn mvn_apply_is_invertible() {
        let feat = random_features(60, 5, 7);
        let mut acc = MvnAccumulator::new(5);
        acc.push(&feat).unwrap();
        let (stats, _) = acc.finalize().unwrap();
        let normalized = mvn_apply(&feat, &stats).unwrap();
        for t in 0..60 {
            for k in 0..5 {
                let back = normalized.data[(t, k)] * stats.std[k] + stats.mean[k];
                assert!((back - feat.data[(t, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stats_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let stats = MvnStats {
            n_mels: 2,
            mean: vec![1.0, -0.5],
            std: vec![2.0, 0.25],
            frame_count: 10,
        };
        stats.save(&path).unwrap();
        let back = MvnStats::load(&path).unwrap();
        assert_eq!(back.mean, stats.mean);
        assert_eq!(back.std, stats.std);
        assert_eq!(back.frame_count, 10);
    }
}
