//! Spatialized mixture synthesis: anechoic delay/decay propagation, optional
//! low-order image-method reverberation, SNR-controlled mixing, and a
//! deterministic corpus generator.
//!
//! Fractional propagation delays use a 31-tap Hann-windowed sinc interpolator;
//! every channel therefore carries a fixed extra latency of half the kernel
//! (15 samples), which leaves inter-channel time differences untouched.
//! Amplitudes follow 1/(4*pi*d) spherical spreading.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::MultichannelWaveform;
use crate::wav::{read_wav_expecting_rate, write_wav, WavFormat};

/// Interpolation kernel width. Odd so the center tap lands on a sample.
const SINC_TAPS: usize = 31;
const SINC_HALF: usize = SINC_TAPS / 2;

/// Maximum supported image-method reflection order.
pub const MAX_IMAGE_ORDER: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    Anechoic,
    ImageMethod { order: u32, absorption: f64 },
}

/// Room geometry shared by all sources of one mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomScene {
    pub room_dims_m: [f64; 3],
    pub source_positions_m: Vec<[f64; 3]>,
    pub mic_positions_m: Vec<[f64; 3]>,
    pub speed_of_sound_mps: f64,
    pub mode: PropagationMode,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl RoomScene {
    pub fn validate(&self) -> Result<()> {
        if self.mic_positions_m.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one mic".into()));
        }
        if self.source_positions_m.is_empty() {
            return Err(Error::InvalidConfig(
                "scene needs at least one source".into(),
            ));
        }
        if self.room_dims_m.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidConfig(
                "room dimensions must be positive".into(),
            ));
        }
        if self.speed_of_sound_mps <= 0.0 {
            return Err(Error::InvalidConfig(
                "speed of sound must be positive".into(),
            ));
        }
        let inside = |p: &[f64; 3]| {
            p.iter()
                .zip(self.room_dims_m.iter())
                .all(|(&x, &dim)| x > 0.0 && x < dim)
        };
        for p in self.source_positions_m.iter().chain(&self.mic_positions_m) {
            if !inside(p) {
                return Err(Error::InvalidConfig(format!(
                    "position {p:?} is not strictly inside room {:?}",
                    self.room_dims_m
                )));
            }
        }
        let mut points: Vec<&[f64; 3]> = self.source_positions_m.iter().collect();
        points.extend(self.mic_positions_m.iter());
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                if dist(points[i], points[j]) == 0.0 {
                    return Err(Error::InvalidConfig(
                        "sources and mics must be pairwise distinct points".into(),
                    ));
                }
            }
        }
        if let PropagationMode::ImageMethod { order, absorption } = self.mode {
            if order > MAX_IMAGE_ORDER {
                return Err(Error::InvalidConfig(format!(
                    "image-method order {order} exceeds supported maximum {MAX_IMAGE_ORDER}"
                )));
            }
            if !(0.0 < absorption && absorption < 1.0) {
                return Err(Error::InvalidConfig(
                    "absorption must lie strictly in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    /// Images (distance, amplitude) between one source and one mic under the
    /// scene's propagation mode. Order 0 reduces to the direct path.
    fn images(&self, source: &[f64; 3], mic: &[f64; 3]) -> Result<Vec<(f64, f64)>> {
        let direct = dist(source, mic);
        if direct == 0.0 {
            return Err(Error::InvalidInput(
                "source and mic coincide (zero path length)".into(),
            ));
        }
        match self.mode {
            PropagationMode::Anechoic => Ok(vec![(direct, 1.0 / (4.0 * PI * direct))]),
            PropagationMode::ImageMethod { order, absorption } => {
                // pressure reflection coefficient from the energy absorption
                let refl = (1.0 - absorption).sqrt();
                let span = order as i64;
                let mut out = Vec::new();
                for mx in -span..=span {
                    for my in -span..=span {
                        for mz in -span..=span {
                            for q in 0..2i64 {
                                for j in 0..2i64 {
                                    for k in 0..2i64 {
                                        let n_refl = ((mx - q).abs()
                                            + mx.abs()
                                            + (my - j).abs()
                                            + my.abs()
                                            + (mz - k).abs()
                                            + mz.abs())
                                            as u32;
                                        if n_refl > order {
                                            continue;
                                        }
                                        let img = [
                                            (1 - 2 * q) as f64 * source[0]
                                                + 2.0 * mx as f64 * self.room_dims_m[0],
                                            (1 - 2 * j) as f64 * source[1]
                                                + 2.0 * my as f64 * self.room_dims_m[1],
                                            (1 - 2 * k) as f64 * source[2]
                                                + 2.0 * mz as f64 * self.room_dims_m[2],
                                        ];
                                        let d = dist(&img, mic);
                                        if d == 0.0 {
                                            return Err(Error::InvalidInput(
                                                "image source coincides with mic".into(),
                                            ));
                                        }
                                        out.push((d, refl.powi(n_refl as i32) / (4.0 * PI * d)));
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Largest integer delay (in samples) over every source/mic/image path.
    /// All images of a scene are rendered to a common length derived from it.
    fn max_delay_samples(&self, sample_rate_hz: u32) -> Result<usize> {
        let mut max_d = 0.0f64;
        for s in &self.source_positions_m {
            for m in &self.mic_positions_m {
                for (d, _) in self.images(s, m)? {
                    max_d = max_d.max(d);
                }
            }
        }
        Ok((sample_rate_hz as f64 * max_d / self.speed_of_sound_mps).ceil() as usize)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hann-windowed sinc taps for a delay of `eta` in (fractional) samples past
/// the kernel center.
fn fractional_delay_kernel(eta: f64) -> [f64; SINC_TAPS] {
    let mut kern = [0.0; SINC_TAPS];
    for (k, slot) in kern.iter_mut().enumerate() {
        let w = 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / (SINC_TAPS - 1) as f64).cos();
        *slot = sinc(k as f64 - SINC_HALF as f64 - eta) * w;
    }
    kern
}

/// Render a dry mono signal at every mic of the scene for one source.
pub fn simulate_propagation(
    dry: &MultichannelWaveform,
    scene: &RoomScene,
    source_index: usize,
) -> Result<MultichannelWaveform> {
    scene.validate()?;
    if dry.num_channels() != 1 {
        return Err(Error::InvalidInput(format!(
            "dry signal must be mono, got {} channels",
            dry.num_channels()
        )));
    }
    let source = scene
        .source_positions_m
        .get(source_index)
        .ok_or_else(|| Error::InvalidInput(format!("source index {source_index} out of range")))?;

    let fs = dry.sample_rate_hz as f64;
    let n = dry.len_samples();
    let out_len = n + scene.max_delay_samples(dry.sample_rate_hz)? + SINC_TAPS;
    let channels = scene.mic_positions_m.len();
    let mut out = Array2::<f64>::zeros((channels, out_len));
    let x = dry.channel(0);

    for (c, mic) in scene.mic_positions_m.iter().enumerate() {
        for (d, amp) in scene.images(source, mic)? {
            let delay = fs * d / scene.speed_of_sound_mps;
            let whole = delay.floor() as usize;
            let kern = fractional_delay_kernel(delay - delay.floor());
            for (k, &h) in kern.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                let g = amp * h;
                let off = whole + k;
                for (m, &v) in x.iter().enumerate() {
                    out[(c, m + off)] += g * v;
                }
            }
        }
    }

    MultichannelWaveform::new(out, dry.sample_rate_hz)
}

/// One generated mixture: the mixed signal, the per-source spatial images used
/// as separation references, and bookkeeping for evaluation.
#[derive(Debug, Clone)]
pub struct MixtureRecord {
    pub mixture: MultichannelWaveform,
    pub references: Vec<MultichannelWaveform>,
    pub noise: Option<MultichannelWaveform>,
    pub snr_db: f64,
    pub transcripts: Vec<String>,
    pub scene: Option<RoomScene>,
}

/// Mix two spatialized images so that the energy ratio of source a to source b
/// at `ref_channel` equals `snr_db`. Source b is rescaled; the rescaled images
/// are stored as references.
pub fn mix_at_snr(
    images_a: &MultichannelWaveform,
    images_b: &MultichannelWaveform,
    snr_db: f64,
    ref_channel: usize,
) -> Result<MixtureRecord> {
    if images_a.sample_rate_hz != images_b.sample_rate_hz {
        return Err(Error::InvalidInput("sample rates differ".into()));
    }
    if images_a.num_channels() != images_b.num_channels()
        || images_a.len_samples() != images_b.len_samples()
    {
        return Err(Error::ShapeMismatch(format!(
            "image shapes differ: {}x{} vs {}x{}",
            images_a.num_channels(),
            images_a.len_samples(),
            images_b.num_channels(),
            images_b.len_samples()
        )));
    }
    if ref_channel >= images_a.num_channels() {
        return Err(Error::InvalidInput(format!(
            "ref_channel {ref_channel} out of range"
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput("snr_db must be finite".into()));
    }

    let energy =
        |w: &MultichannelWaveform| -> f64 { w.channel(ref_channel).iter().map(|&v| v * v).sum() };
    let e_a = energy(images_a);
    let e_b = energy(images_b);
    if e_a == 0.0 || e_b == 0.0 {
        return Err(Error::InvalidInput(
            "cannot set an SNR against a silent source".into(),
        ));
    }

    let current_db = 10.0 * (e_a / e_b).log10();
    let scale = 10f64.powf((current_db - snr_db) / 20.0);

    let b_scaled = MultichannelWaveform::new(&images_b.samples * scale, images_b.sample_rate_hz)?;
    let mixture = MultichannelWaveform::new(
        &images_a.samples + &b_scaled.samples,
        images_a.sample_rate_hz,
    )?;

    Ok(MixtureRecord {
        mixture,
        references: vec![images_a.clone(), b_scaled],
        noise: None,
        snr_db,
        transcripts: Vec::new(),
        scene: None,
    })
}

// --- corpus generation -----------------------------------------------------

/// A dry source utterance on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceFile {
    pub id: String,
    pub wav: PathBuf,
    pub transcript: String,
}

/// Parameters for synthesizing dry utterances when no recordings are given.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticUtterances {
    pub count: usize,
    pub duration_s: f64,
}

/// Uniform sampling ranges for random scenes. These ranges are this
/// generator's own convention, chosen to give plausible small rooms and
/// compact arrays; they are not calibrated against any external corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomRanges {
    pub dims_min_m: [f64; 3],
    pub dims_max_m: [f64; 3],
    pub mic_spacing_m: [f64; 2],
    pub wall_margin_m: f64,
    pub min_source_separation_m: f64,
    pub min_source_mic_distance_m: f64,
}

impl Default for RoomRanges {
    fn default() -> Self {
        RoomRanges {
            dims_min_m: [4.0, 4.0, 2.5],
            dims_max_m: [8.0, 8.0, 3.5],
            mic_spacing_m: [0.06, 0.20],
            wall_margin_m: 0.5,
            min_source_separation_m: 0.8,
            min_source_mic_distance_m: 0.5,
        }
    }
}

/// Input description for `generate_corpus`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sample_rate_hz: u32,
    pub n_mixtures: usize,
    pub channels: usize,
    pub seed: u64,
    pub snr_range_db: [f64; 2],
    #[serde(default)]
    pub utterances: Vec<UtteranceFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_utterances: Option<SyntheticUtterances>,
    #[serde(default = "default_mode")]
    pub mode: PropagationMode,
    #[serde(default)]
    pub room: RoomRanges,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_snr_db_range: Option<[f64; 2]>,
}

fn default_mode() -> PropagationMode {
    PropagationMode::Anechoic
}

/// One mixture entry of the emitted corpus manifest. Paths are relative to
/// the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestMixture {
    pub id: String,
    pub wav_mix: PathBuf,
    pub wav_refs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_noise: Option<PathBuf>,
    pub snr_db: f64,
    pub scene: RoomScene,
    pub transcripts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub sample_rate_hz: u32,
    pub seed: u64,
    pub mixtures: Vec<ManifestMixture>,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<CorpusManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Deterministic per-mixture RNG: the stream is keyed on (corpus seed, index),
/// so parallel and serial generation agree.
pub fn mixture_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Speech-like synthetic utterance: alternating voiced bursts and pauses.
/// Each burst gets its own pitch, spectral tilt and phases with vibrato on
/// top; occasional bursts are fricative-like shaped noise. The gating and
/// per-burst pitch changes matter: they give the signal the time-frequency
/// sparsity and decorrelation that mask-driven beamforming relies on.
pub fn synthesize_utterance(rng: &mut ChaCha12Rng, duration_s: f64, fs: u32) -> Vec<f64> {
    let n = (duration_s * fs as f64).round() as usize;
    let f0_base: f64 = rng.random_range(100.0..240.0);
    let dt = 1.0 / fs as f64;
    let mut out = vec![0.0f64; n];

    let mut cursor = 0usize;
    while cursor < n {
        let burst_len = (rng.random_range(0.12..0.30) * fs as f64) as usize;
        let gap_len = (rng.random_range(0.05..0.15) * fs as f64) as usize;
        let end = (cursor + burst_len).min(n);
        let gain: f64 = rng.random_range(0.4..1.0);
        let ramp = (0.010 * fs as f64) as usize; // 10 ms on/off ramps

        if rng.random_range(0.0..1.0) < 0.2 {
            // fricative-like burst: first-difference of white noise tilts the
            // spectrum toward high frequencies
            let mut prev = 0.0;
            for (k, i) in (cursor..end).enumerate() {
                let white: f64 = rng.random_range(-1.0..1.0);
                let hiss = white - 0.7 * prev;
                prev = white;
                out[i] += 0.35 * gain * hiss * burst_ramp(k, end - cursor, ramp);
            }
        } else {
            let f0 = f0_base * rng.random_range(0.85..1.15);
            let vibrato_hz: f64 = rng.random_range(3.0..6.0);
            let vibrato_depth: f64 = rng.random_range(0.01..0.05);
            let n_harm = ((4000.0 / f0).floor() as usize).max(1);
            let phases: Vec<f64> = (0..n_harm)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            // crude formant: one harmonic region is emphasized per burst
            let formant_h = rng.random_range(0..n_harm.max(1));
            let tilts: Vec<f64> = (0..n_harm)
                .map(|h| {
                    let formant = 1.0 + 2.0 / (1.0 + (h as f64 - formant_h as f64).powi(2));
                    rng.random_range(0.5..1.0) * formant / (h + 1) as f64
                })
                .collect();
            let mut phase_acc = vec![0.0f64; n_harm];
            for (k, i) in (cursor..end).enumerate() {
                let t = k as f64 * dt;
                let f_inst =
                    f0 * (1.0 + vibrato_depth * (std::f64::consts::TAU * vibrato_hz * t).sin());
                let mut v = 0.0;
                for h in 0..n_harm {
                    phase_acc[h] += std::f64::consts::TAU * f_inst * (h + 1) as f64 * dt;
                    v += tilts[h] * (phase_acc[h] + phases[h]).sin();
                }
                out[i] += gain * v * burst_ramp(k, end - cursor, ramp) / (n_harm as f64).sqrt();
            }
        }
        cursor = end + gap_len;
    }

    // low broadband floor keeps every bin defined without masking structure
    for v in out.iter_mut() {
        *v += 0.002 * rng.random_range(-1.0f64..1.0);
    }
    let peak = out.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-12);
    for v in &mut out {
        *v *= 0.5 / peak;
    }
    out
}

fn burst_ramp(k: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    if k < ramp {
        0.5 - 0.5 * (std::f64::consts::PI * k as f64 / ramp as f64).cos()
    } else if k + ramp > len {
        let tail = len - k;
        0.5 - 0.5 * (std::f64::consts::PI * tail as f64 / ramp as f64).cos()
    } else {
        1.0
    }
}

const TRANSCRIPT_WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa",
];

fn synthetic_transcript(rng: &mut ChaCha12Rng, duration_s: f64) -> String {
    let words = ((duration_s * 2.0).round() as usize).max(1);
    (0..words)
        .map(|_| TRANSCRIPT_WORDS[rng.random_range(0..TRANSCRIPT_WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn sample_scene(
    rng: &mut ChaCha12Rng,
    ranges: &RoomRanges,
    channels: usize,
    n_sources: usize,
    mode: PropagationMode,
) -> Result<RoomScene> {
    let mut dims = [0.0f64; 3];
    for (d, (lo, hi)) in dims
        .iter_mut()
        .zip(ranges.dims_min_m.iter().zip(ranges.dims_max_m.iter()))
    {
        *d = rng.random_range(*lo..*hi);
    }
    let margin = ranges.wall_margin_m;

    // compact linear array with random center and horizontal orientation
    let spacing = rng.random_range(ranges.mic_spacing_m[0]..ranges.mic_spacing_m[1]);
    let array_len = spacing * (channels.saturating_sub(1)) as f64;
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = [theta.cos(), theta.sin(), 0.0];
    let center = [
        rng.random_range(margin + array_len..dims[0] - margin - array_len),
        rng.random_range(margin + array_len..dims[1] - margin - array_len),
        rng.random_range(margin..dims[2] - margin),
    ];
    let mics: Vec<[f64; 3]> = (0..channels)
        .map(|k| {
            let off = (k as f64 - (channels as f64 - 1.0) / 2.0) * spacing;
            [
                center[0] + off * dir[0],
                center[1] + off * dir[1],
                center[2] + off * dir[2],
            ]
        })
        .collect();

    let mut sources: Vec<[f64; 3]> = Vec::with_capacity(n_sources);
    let mut tries = 0;
    while sources.len() < n_sources {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::Numeric(
                "could not place sources satisfying separation constraints".into(),
            ));
        }
        let cand = [
            rng.random_range(margin..dims[0] - margin),
            rng.random_range(margin..dims[1] - margin),
            rng.random_range(margin..dims[2] - margin),
        ];
        let far_from_sources = sources
            .iter()
            .all(|s| dist(s, &cand) >= ranges.min_source_separation_m);
        let far_from_mics = mics
            .iter()
            .all(|m| dist(m, &cand) >= ranges.min_source_mic_distance_m);
        if far_from_sources && far_from_mics {
            sources.push(cand);
        }
    }

    let scene = RoomScene {
        room_dims_m: dims,
        source_positions_m: sources,
        mic_positions_m: mics,
        speed_of_sound_mps: 343.0,
        mode,
    };
    scene.validate()?;
    Ok(scene)
}

fn pad_to(wave: &MultichannelWaveform, len: usize) -> MultichannelWaveform {
    if wave.len_samples() == len {
        return wave.clone();
    }
    let mut samples = Array2::zeros((wave.num_channels(), len));
    samples
        .slice_mut(ndarray::s![.., ..wave.len_samples()])
        .assign(&wave.samples);
    MultichannelWaveform {
        samples,
        sample_rate_hz: wave.sample_rate_hz,
    }
}

/// Generate one mixture of the corpus. Pure given (spec, dry utterances,
/// index), which is what makes the corpus reproducible and parallelizable.
fn generate_mixture(
    spec: &DatasetSpec,
    dry: &[(String, Vec<f64>, String)],
    index: usize,
) -> Result<(MixtureRecord, usize, usize)> {
    let mut rng = mixture_rng(spec.seed, index as u64);
    let n_utts = dry.len();
    let ia = rng.random_range(0..n_utts);
    let mut ib = rng.random_range(0..n_utts);
    while ib == ia {
        ib = rng.random_range(0..n_utts);
    }
    let scene = sample_scene(&mut rng, &spec.room, spec.channels, 2, spec.mode)?;
    let snr_db = rng.random_range(spec.snr_range_db[0]..=spec.snr_range_db[1]);

    let wave_a = MultichannelWaveform::from_mono(dry[ia].1.clone(), spec.sample_rate_hz)?;
    let wave_b = MultichannelWaveform::from_mono(dry[ib].1.clone(), spec.sample_rate_hz)?;
    let img_a = simulate_propagation(&wave_a, &scene, 0)?;
    let img_b = simulate_propagation(&wave_b, &scene, 1)?;
    let len = img_a.len_samples().max(img_b.len_samples());
    let img_a = pad_to(&img_a, len);
    let img_b = pad_to(&img_b, len);

    let mut record = mix_at_snr(&img_a, &img_b, snr_db, 0)?;

    if let Some([lo, hi]) = spec.noise_snr_db_range {
        let noise_snr = rng.random_range(lo..=hi);
        let speech_energy: f64 = record.mixture.channel(0).iter().map(|&v| v * v).sum();
        let mut noise = Array2::zeros((spec.channels, len));
        for v in noise.iter_mut() {
            *v = rng.random_range(-1.0f64..1.0);
        }
        let noise_energy: f64 = noise.row(0).iter().map(|&v| v * v).sum();
        let scale = (speech_energy / noise_energy).sqrt() * 10f64.powf(-noise_snr / 20.0);
        noise *= scale;
        let noise = MultichannelWaveform::new(noise, spec.sample_rate_hz)?;
        record.mixture = MultichannelWaveform::new(
            &record.mixture.samples + &noise.samples,
            spec.sample_rate_hz,
        )?;
        record.noise = Some(noise);
    }

    record.transcripts = vec![dry[ia].2.clone(), dry[ib].2.clone()];
    record.scene = Some(scene);
    Ok((record, ia, ib))
}

/// Load or synthesize the dry utterance pool for a dataset description.
pub fn load_dry_utterances(
    spec: &DatasetSpec,
    base_dir: &Path,
) -> Result<Vec<(String, Vec<f64>, String)>> {
    if !spec.utterances.is_empty() {
        let mut out = Vec::with_capacity(spec.utterances.len());
        for u in &spec.utterances {
            let path = if u.wav.is_absolute() {
                u.wav.clone()
            } else {
                base_dir.join(&u.wav)
            };
            let wave = read_wav_expecting_rate(&path, spec.sample_rate_hz)?;
            if wave.num_channels() != 1 {
                return Err(Error::InvalidInput(format!(
                    "utterance {} must be mono",
                    path.display()
                )));
            }
            out.push((u.id.clone(), wave.channel(0).to_vec(), u.transcript.clone()));
        }
        return Ok(out);
    }
    if let Some(synth) = spec.synthetic_utterances {
        if synth.count < 2 {
            return Err(Error::InvalidConfig(
                "need at least two utterances to build two-speaker mixtures".into(),
            ));
        }
        let mut out = Vec::with_capacity(synth.count);
        for k in 0..synth.count {
            // utterance stream keyed separately from mixture streams
            let mut rng = mixture_rng(spec.seed ^ 0x5eed_u64, k as u64);
            let samples = synthesize_utterance(&mut rng, synth.duration_s, spec.sample_rate_hz);
            let transcript = synthetic_transcript(&mut rng, synth.duration_s);
            out.push((format!("synth{k:04}"), samples, transcript));
        }
        return Ok(out);
    }
    Err(Error::InvalidConfig(
        "dataset lists no utterances and no synthetic_utterances".into(),
    ))
}

/// Generate the corpus described by `spec` into `out_dir`, writing WAVs and a
/// `corpus.json` manifest. Deterministic given the seed.
pub fn generate_corpus(
    spec: &DatasetSpec,
    base_dir: &Path,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    if spec.n_mixtures > 0 && spec.channels == 0 {
        return Err(Error::InvalidConfig("channels must be >= 1".into()));
    }
    if spec.snr_range_db[0] > spec.snr_range_db[1] {
        return Err(Error::InvalidConfig("snr range is inverted".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut manifest = CorpusManifest {
        sample_rate_hz: spec.sample_rate_hz,
        seed: spec.seed,
        mixtures: Vec::new(),
    };
    if spec.n_mixtures == 0 {
        manifest.save(out_dir.join("corpus.json"))?;
        return Ok(manifest);
    }

    let dry = load_dry_utterances(spec, base_dir)?;
    if dry.len() < 2 {
        return Err(Error::InvalidConfig(
            "need at least two utterances to build two-speaker mixtures".into(),
        ));
    }

    use rayon::prelude::*;
    let records: Vec<Result<(MixtureRecord, usize, usize)>> = (0..spec.n_mixtures)
        .into_par_iter()
        .map(|i| generate_mixture(spec, &dry, i))
        .collect();

    for (i, rec) in records.into_iter().enumerate() {
        let (record, _, _) = rec?;
        let id = format!("mix{i:05}");
        let mix_dir = out_dir.join(&id);
        std::fs::create_dir_all(&mix_dir).map_err(|e| Error::io(&mix_dir, e))?;

        let wav_mix = PathBuf::from(&id).join("mix.wav");
        write_wav(out_dir.join(&wav_mix), &record.mixture, WavFormat::Float32)?;
        let mut wav_refs = Vec::new();
        for (s, image) in record.references.iter().enumerate() {
            let rel = PathBuf::from(&id).join(format!("ref{}.wav", s + 1));
            write_wav(out_dir.join(&rel), image, WavFormat::Float32)?;
            wav_refs.push(rel);
        }
        let wav_noise = match &record.noise {
            Some(noise) => {
                let rel = PathBuf::from(&id).join("noise.wav");
                write_wav(out_dir.join(&rel), noise, WavFormat::Float32)?;
                Some(rel)
            }
            None => None,
        };

        manifest.mixtures.push(ManifestMixture {
            id,
            wav_mix,
            wav_refs,
            wav_noise,
            snr_db: record.snr_db,
            scene: record.scene.expect("generator always sets the scene"),
            transcripts: record.transcripts,
        });
    }

    manifest.save(out_dir.join("corpus.json"))?;
    Ok(manifest)
}
