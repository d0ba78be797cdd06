//! End-to-end pipeline orchestration shared by the CLI and tests: corpus
//! generation, oracle-mask separation, evaluation, feature extraction, and
//! scheduling dry-runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beamforming::{
    apply_filters, beam_pattern, estimate_psd, mvdr_filters, select_reference, BeamPatternTable,
    ReferencePolicy, DEFAULT_MVDR_EPS,
};
use crate::error::{Error, Result};
use crate::features::{
    logmel, mvn_apply, MelFilterbank, MvnAccumulator, MvnStats, DEFAULT_NUM_MELS,
};
use crate::masking::{
    apply_masknet, oracle_masks, AffineSigmoidEstimator, MaskSet, OracleMaskKind,
};
use crate::metrics::{si_sdr, SiSdr};
use crate::spatial::{generate_corpus, CorpusManifest, DatasetSpec};
use crate::stft::{istft, stft, MultichannelSpectrogram, MultichannelWaveform, StftConfig};
use crate::tensor::{write_c64_tensor, write_f32_tensor};
use crate::wav::{read_wav_expecting_rate, write_wav, WavFormat};

/// Where masks come from in the separation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    OracleIrm,
    OracleIbm,
    /// Serialized [`AffineSigmoidEstimator`] weights.
    Estimator {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub mask_source: MaskSource,
    pub mvdr_eps: f64,
    pub reference: ReferencePolicy,
    pub num_speakers: usize,
    pub lambda: f64,
    pub n_mels: usize,
    /// 0 means one worker per logical CPU.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stft: StftConfig::default(),
            mask_source: MaskSource::OracleIrm,
            mvdr_eps: DEFAULT_MVDR_EPS,
            reference: ReferencePolicy::MaxAveragePower,
            num_speakers: 2,
            lambda: 0.2,
            n_mels: DEFAULT_NUM_MELS,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.num_speakers == 0 {
            return Err(Error::InvalidConfig("num_speakers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must lie in [0, 1]".into()));
        }
        if self.mvdr_eps.is_nan() || self.mvdr_eps <= 0.0 {
            return Err(Error::InvalidConfig("mvdr_eps must be positive".into()));
        }
        if let MaskSource::Estimator { path } = &self.mask_source {
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "estimator weights {} do not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

/// Generate a corpus from a dataset description file.
pub fn cmd_generate(manifest_path: &Path, out_dir: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let spec: DatasetSpec =
        serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    generate_corpus(&spec, base, out_dir)
}

/// Result bundle for one separated mixture.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationDiagnostics {
    pub id: String,
    pub ref_channel: usize,
    pub psd_floored_bins: Vec<(usize, usize)>,
    pub mvdr_pinv_fallbacks: Vec<(usize, usize)>,
    /// Condition number of the regularized interference PSD per speaker per
    /// frequency bin.
    pub condition_numbers: Vec<Vec<f64>>,
    /// SI-SDR of each separated stream against its same-index reference.
    pub si_sdr_db: Vec<f64>,
    /// SI-SDR of the unprocessed mixture (reference channel) against each
    /// reference.
    pub mixture_si_sdr_db: Vec<f64>,
}

fn load_masks(
    cfg: &PipelineConfig,
    mix_spec: &MultichannelSpectrogram,
    refs: &[MultichannelSpectrogram],
) -> Result<MaskSet> {
    match &cfg.mask_source {
        MaskSource::OracleIrm => oracle_masks(refs, mix_spec, OracleMaskKind::Irm),
        MaskSource::OracleIbm => oracle_masks(refs, mix_spec, OracleMaskKind::Ibm),
        MaskSource::Estimator { path } => {
            let est = AffineSigmoidEstimator::load(path)?;
            apply_masknet(&est, mix_spec)
        }
    }
}

/// Separate one mixture with the configured mask source and write per-source
/// WAVs, mask/filter tensors and diagnostics into `out_dir/<id>/`.
pub fn separate_mixture(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    mixture: &crate::spatial::ManifestMixture,
    sample_rate_hz: u32,
    out_dir: &Path,
    write_plot_masks: bool,
) -> Result<SeparationDiagnostics> {
    let mix_wave = read_wav_expecting_rate(corpus_dir.join(&mixture.wav_mix), sample_rate_hz)?;
    let mix_spec = stft(&mix_wave, &cfg.stft)?;

    let mut ref_waves = Vec::new();
    let mut ref_specs = Vec::new();
    for rel in &mixture.wav_refs {
        let wave = read_wav_expecting_rate(corpus_dir.join(rel), sample_rate_hz)?;
        ref_specs.push(stft(&wave, &cfg.stft)?);
        ref_waves.push(wave);
    }
    if ref_specs.len() != cfg.num_speakers {
        return Err(Error::InvalidInput(format!(
            "mixture {} has {} references, config expects {} speakers",
            mixture.id,
            ref_specs.len(),
            cfg.num_speakers
        )));
    }

    let masks = load_masks(cfg, &mix_spec, &ref_specs)?;
    let reference = select_reference(&mix_spec, &masks, cfg.reference)?;
    let ref_channel = reference
        .iter()
        .position(|&v| v == 1.0)
        .expect("reference vector is one-hot");
    let (psd, psd_diag) = estimate_psd(&mix_spec, &masks)?;
    let (filters, mvdr_diag) = mvdr_filters(&psd, &reference, cfg.mvdr_eps)?;
    let separated = apply_filters(&filters, &mix_spec)?;

    let mix_dir = out_dir.join(&mixture.id);
    std::fs::create_dir_all(&mix_dir).map_err(|e| Error::io(&mix_dir, e))?;

    let mut si_sdr_db = Vec::new();
    let mut mixture_si_sdr_db = Vec::new();
    for s in 1..=cfg.num_speakers {
        let wave = istft(&separated.speaker_spectrogram(s)?)?;
        write_wav(mix_dir.join(format!("s{s}.wav")), &wave, WavFormat::Float32)?;
        let reference_signal = ref_waves[s - 1].channel(ref_channel);
        let est = wave.channel(0);
        let n = est.len().min(reference_signal.len());
        let score = si_sdr(
            &est.as_slice().expect("contiguous")[..n],
            &reference_signal.as_slice().expect("contiguous")[..n],
        )?;
        si_sdr_db.push(score.db);

        let mix_channel = mix_wave.channel(ref_channel);
        let n = mix_channel.len().min(reference_signal.len());
        let baseline = si_sdr(
            &mix_channel.as_slice().expect("contiguous")[..n],
            &reference_signal.as_slice().expect("contiguous")[..n],
        )?;
        mixture_si_sdr_db.push(baseline.db);
    }

    // mask and filter dumps for inspection
    let (s, t, f, c) = masks.dims();
    write_f32_tensor(
        mix_dir.join("masks.bin"),
        &[s, t, f, c],
        masks.data.as_slice().expect("contiguous"),
    )?;
    if write_plot_masks {
        let plot = crate::masking::median_renormalize_for_plot(&masks);
        write_f32_tensor(
            mix_dir.join("masks_plot.bin"),
            &[s, t, f, c],
            plot.as_slice().expect("contiguous"),
        )?;
    }
    let w = &filters.weights;
    write_c64_tensor(
        mix_dir.join("filters.bin"),
        &[w.shape()[0], w.shape()[1], w.shape()[2]],
        w.as_slice().expect("contiguous"),
    )?;
    let p = &psd.matrices;
    write_c64_tensor(
        mix_dir.join("psd.bin"),
        &[p.shape()[0], p.shape()[1], p.shape()[2], p.shape()[3]],
        p.as_slice().expect("contiguous"),
    )?;

    let diag = SeparationDiagnostics {
        id: mixture.id.clone(),
        ref_channel,
        psd_floored_bins: psd_diag.floored_weights,
        mvdr_pinv_fallbacks: mvdr_diag.pinv_fallbacks,
        condition_numbers: (0..cfg.num_speakers)
            .map(|i| mvdr_diag.condition_numbers.row(i).to_vec())
            .collect(),
        si_sdr_db,
        mixture_si_sdr_db,
    };
    let diag_path = mix_dir.join("diagnostics.json");
    let text = serde_json::to_string_pretty(&diag).map_err(|e| Error::json(&diag_path, e))?;
    std::fs::write(&diag_path, text).map_err(|e| Error::io(&diag_path, e))?;

    Ok(diag)
}

/// Outcome of `cmd_separate` over a whole corpus.
#[derive(Debug, Serialize)]
pub struct SeparateSummary {
    pub succeeded: Vec<SeparationDiagnostics>,
    pub failed: Vec<(String, String)>,
}

/// Separate every mixture of a corpus, in parallel across mixtures.
/// Per-mixture failures are collected, not fatal.
pub fn cmd_separate(
    cfg: &PipelineConfig,
    corpus_manifest: &Path,
    out_dir: &Path,
    write_plot_masks: bool,
) -> Result<SeparateSummary> {
    cfg.validate()?;
    let manifest = CorpusManifest::load(corpus_manifest)?;
    let corpus_dir = corpus_manifest.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let run = || -> Vec<(usize, std::result::Result<SeparationDiagnostics, String>)> {
        use rayon::prelude::*;
        manifest
            .mixtures
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let res = separate_mixture(
                    cfg,
                    corpus_dir,
                    m,
                    manifest.sample_rate_hz,
                    out_dir,
                    write_plot_masks,
                )
                .map_err(|e| e.to_string());
                (i, res)
            })
            .collect()
    };

    let mut results = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Numeric(format!("worker pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    results.sort_by_key(|(i, _)| *i);

    let mut summary = SeparateSummary {
        succeeded: Vec::new(),
        failed: Vec::new(),
    };
    for (i, res) in results {
        match res {
            Ok(d) => summary.succeeded.push(d),
            Err(msg) => summary.failed.push((manifest.mixtures[i].id.clone(), msg)),
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureScore {
    pub id: String,
    /// Stream-to-reference assignment chosen by best-permutation SI-SDR.
    pub permutation: Vec<usize>,
    pub per_source_si_sdr_db: Vec<f64>,
    pub mixture_si_sdr_db: Vec<f64>,
    pub improvement_db: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTable {
    pub mixtures: Vec<MixtureScore>,
    pub average_si_sdr_db: f64,
    pub average_mixture_si_sdr_db: f64,
    pub average_improvement_db: f64,
}

impl ScoreTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score serialization cannot fail")
    }

    /// Plain-text table, one row per mixture plus the averages.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>14} {:>14} {:>14}\n",
            "mixture", "si_sdr[dB]", "mix_si_sdr[dB]", "improve[dB]"
        ));
        for m in &self.mixtures {
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
            out.push_str(&format!(
                "{:<12} {:>14.2} {:>14.2} {:>14.2}\n",
                m.id,
                avg(&m.per_source_si_sdr_db),
                avg(&m.mixture_si_sdr_db),
                avg(&m.improvement_db)
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>14.2} {:>14.2} {:>14.2}\n",
            "average",
            self.average_si_sdr_db,
            self.average_mixture_si_sdr_db,
            self.average_improvement_db
        ));
        out
    }
}

/// Score separated outputs against corpus references. Streams are paired to
/// references by the permutation that maximizes total SI-SDR, mirroring the
/// permutation-invariant training criterion at evaluation time.
pub fn cmd_evaluate(corpus_manifest: &Path, separated_dir: &Path) -> Result<ScoreTable> {
    let manifest = CorpusManifest::load(corpus_manifest)?;
    let corpus_dir = corpus_manifest.parent().unwrap_or(Path::new("."));

    let mut scores = Vec::new();
    for mixture in &manifest.mixtures {
        let mix_dir = separated_dir.join(&mixture.id);
        let diag_path = mix_dir.join("diagnostics.json");
        let diag_text =
            std::fs::read_to_string(&diag_path).map_err(|e| Error::io(&diag_path, e))?;
        let diag: serde_json::Value =
            serde_json::from_str(&diag_text).map_err(|e| Error::json(&diag_path, e))?;
        let ref_channel = diag["ref_channel"].as_u64().ok_or_else(|| {
            Error::InvalidInput(format!("{}: missing ref_channel", diag_path.display()))
        })? as usize;

        let j = mixture.wav_refs.len();
        let mut estimates = Vec::with_capacity(j);
        for s in 1..=j {
            let wave = read_wav_expecting_rate(
                mix_dir.join(format!("s{s}.wav")),
                manifest.sample_rate_hz,
            )?;
            estimates.push(wave.channel(0).to_vec());
        }
        let mut references = Vec::with_capacity(j);
        for rel in &mixture.wav_refs {
            let wave = read_wav_expecting_rate(corpus_dir.join(rel), manifest.sample_rate_hz)?;
            references.push(wave.channel(ref_channel).to_vec());
        }
        let mix_wave =
            read_wav_expecting_rate(corpus_dir.join(&mixture.wav_mix), manifest.sample_rate_hz)?;
        let mix_channel = mix_wave.channel(ref_channel).to_vec();

        let pair_score = |est: &[f64], reference: &[f64]| -> Result<SiSdr> {
            let n = est.len().min(reference.len());
            si_sdr(&est[..n], &reference[..n])
        };

        // best-permutation pairing by total SI-SDR
        let mut table = vec![vec![0.0f64; j]; j];
        for (i, est) in estimates.iter().enumerate() {
            for (k, reference) in references.iter().enumerate() {
                table[i][k] = pair_score(est, reference)?.db;
            }
        }
        let perms = all_permutations(j);
        let best = perms
            .into_iter()
            .max_by(|a, b| {
                let ta: f64 = a.iter().enumerate().map(|(i, &k)| table[i][k]).sum();
                let tb: f64 = b.iter().enumerate().map(|(i, &k)| table[i][k]).sum();
                ta.partial_cmp(&tb).expect("scores are finite")
            })
            .expect("at least one permutation");

        let per_source: Vec<f64> = best.iter().enumerate().map(|(i, &k)| table[i][k]).collect();
        let mixture_scores: Vec<f64> = best
            .iter()
            .map(|&k| pair_score(&mix_channel, &references[k]).map(|s| s.db))
            .collect::<Result<_>>()?;
        let improvement: Vec<f64> = per_source
            .iter()
            .zip(&mixture_scores)
            .map(|(a, b)| a - b)
            .collect();

        scores.push(MixtureScore {
            id: mixture.id.clone(),
            permutation: best,
            per_source_si_sdr_db: per_source,
            mixture_si_sdr_db: mixture_scores,
            improvement_db: improvement,
        });
    }

    let flat = |f: fn(&MixtureScore) -> &Vec<f64>| -> f64 {
        let values: Vec<f64> = scores.iter().flat_map(|m| f(m).iter().copied()).collect();
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    Ok(ScoreTable {
        average_si_sdr_db: flat(|m| &m.per_source_si_sdr_db),
        average_mixture_si_sdr_db: flat(|m| &m.mixture_si_sdr_db),
        average_improvement_db: flat(|m| &m.improvement_db),
        mixtures: scores,
    })
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for idx in 0..remaining.len() {
            let v = remaining.remove(idx);
            prefix.push(v);
            rec(remaining, prefix, out);
            prefix.pop();
            remaining.insert(idx, v);
        }
    }
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(&mut remaining, &mut Vec::new(), &mut out);
    out
}

/// Multi-speaker scheduler entries from a corpus manifest: one entry per
/// mixture, keyed by its SNR, with frame counts derived from the mixture WAV
/// headers under the configured hop.
pub fn scheduler_metas_from_corpus(
    manifest_path: &Path,
    stft_cfg: &StftConfig,
) -> Result<Vec<crate::scheduler::UtteranceMeta>> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .mixtures
        .iter()
        .map(|m| {
            let path = dir.join(&m.wav_mix);
            let reader = hound::WavReader::open(&path).map_err(|e| Error::Wav {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let len = reader.duration() as usize;
            Ok(crate::scheduler::UtteranceMeta {
                id: m.id.clone(),
                kind: crate::scheduler::UtteranceKind::NoisyMulti,
                length_frames: frames_for(len, stft_cfg),
                snr_db: Some(m.snr_db),
                shard: m.wav_mix.clone(),
            })
        })
        .collect()
}

/// Single-speaker scheduler entries from a WAV list (the same entry schema
/// the corpus generator consumes).
pub fn scheduler_metas_from_wav_list(
    list_path: &Path,
    stft_cfg: &StftConfig,
) -> Result<Vec<crate::scheduler::UtteranceMeta>> {
    let text = std::fs::read_to_string(list_path).map_err(|e| Error::io(list_path, e))?;
    let files: Vec<crate::spatial::UtteranceFile> =
        serde_json::from_str(&text).map_err(|e| Error::json(list_path, e))?;
    let dir = list_path.parent().unwrap_or(Path::new("."));
    files
        .iter()
        .map(|u| {
            let path = if u.wav.is_absolute() {
                u.wav.clone()
            } else {
                dir.join(&u.wav)
            };
            let reader = hound::WavReader::open(&path).map_err(|e| Error::Wav {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let len = reader.duration() as usize;
            Ok(crate::scheduler::UtteranceMeta {
                id: u.id.clone(),
                kind: crate::scheduler::UtteranceKind::CleanSingle,
                length_frames: frames_for(len, stft_cfg),
                snr_db: None,
                shard: u.wav.clone(),
            })
        })
        .collect()
}

fn frames_for(len_samples: usize, cfg: &StftConfig) -> usize {
    if len_samples >= cfg.window_len_samples {
        1 + (len_samples - cfg.window_len_samples) / cfg.hop_samples
    } else {
        1
    }
}

/// Schedule dry-run over `epochs_curriculum` + `epochs_shuffled` epochs,
/// validating the plan invariants. Returns (plans, violations).
pub fn cmd_schedule_dryrun(
    clean: &[crate::scheduler::UtteranceMeta],
    noisy: &[crate::scheduler::UtteranceMeta],
    batch_size: usize,
    seed: u64,
    epochs_curriculum: usize,
    epochs_shuffled: usize,
    snr_sort: crate::scheduler::SnrSortKey,
) -> Result<(Vec<crate::scheduler::BatchPlan>, Vec<String>)> {
    use crate::scheduler::{build_curriculum, build_shuffled, validate_plan};
    let mut plans = Vec::new();
    let mut violations = Vec::new();
    for _ in 0..epochs_curriculum {
        let plan = build_curriculum(clean, noisy, batch_size, snr_sort)?;
        violations.extend(validate_plan(&plan, clean, noisy, snr_sort));
        plans.push(plan);
    }
    for epoch in 0..epochs_shuffled {
        let plan = build_shuffled(clean, noisy, batch_size, seed.wrapping_add(epoch as u64))?;
        violations.extend(validate_plan(&plan, clean, noisy, snr_sort));
        plans.push(plan);
    }
    Ok((plans, violations))
}

/// Feature extraction for one WAV: log-mel of the first channel, optionally
/// normalized. Returns the feature matrix.
pub fn extract_features(
    wav_path: &Path,
    cfg: &PipelineConfig,
    stats: Option<&MvnStats>,
) -> Result<crate::features::FeatureMatrix> {
    let wave = read_wav_expecting_rate(wav_path, cfg.stft.sample_rate_hz)?;
    let mono = MultichannelWaveform::from_mono(wave.channel(0).to_vec(), wave.sample_rate_hz)?;
    let spec = stft(&mono, &cfg.stft)?;
    let fb = MelFilterbank::new(
        cfg.n_mels,
        &cfg.stft,
        0.0,
        cfg.stft.sample_rate_hz as f64 / 2.0,
    )?;
    let feat = logmel(&spec, &fb)?;
    match stats {
        Some(s) => mvn_apply(&feat, s),
        None => Ok(feat),
    }
}

/// Accumulate normalization statistics over several WAVs.
pub fn accumulate_stats(wav_paths: &[PathBuf], cfg: &PipelineConfig) -> Result<MvnStats> {
    let mut acc = MvnAccumulator::new(cfg.n_mels);
    for path in wav_paths {
        let feat = extract_features(path, cfg, None)?;
        acc.push(&feat)?;
    }
    let (stats, _) = acc.finalize()?;
    Ok(stats)
}

/// Beam-pattern table for one separated mixture, using the scene geometry
/// recorded in the corpus manifest and the filters dumped by `cmd_separate`.
pub fn cmd_beampattern(
    corpus_manifest: &Path,
    separated_dir: &Path,
    mixture_id: &str,
    speaker: usize,
    freqs_hz: &[f64],
    cfg: &PipelineConfig,
) -> Result<BeamPatternTable> {
    let manifest = CorpusManifest::load(corpus_manifest)?;
    let mixture = manifest
        .mixtures
        .iter()
        .find(|m| m.id == mixture_id)
        .ok_or_else(|| {
            Error::InvalidInput(format!("mixture {mixture_id} not found in manifest"))
        })?;
    let filters_path = separated_dir.join(mixture_id).join("filters.bin");
    let (dims, data) = crate::tensor::read_c64_tensor(&filters_path)?;
    if dims.len() != 3 {
        return Err(Error::InvalidInput(format!(
            "{}: expected a 3-d filter tensor",
            filters_path.display()
        )));
    }
    let weights = ndarray::Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
        .map_err(|e| Error::InvalidInput(format!("filter tensor: {e}")))?;
    let mut reference = ndarray::Array1::zeros(dims[2]);
    reference[0] = 1.0;
    let filters = crate::beamforming::BeamformerFilters { weights, reference };
    beam_pattern(
        &filters,
        speaker,
        freqs_hz,
        &mixture.scene.mic_positions_m,
        mixture.scene.speed_of_sound_mps,
        &cfg.stft,
    )
}

/// Self-test for the CTC gradient: random instances against central finite
/// differences. Returns the max relative error observed.
pub fn ctc_gradient_self_test(trials: usize, seed: u64) -> Result<f64> {
    use crate::loss::{ctc_loss, LabelSequence, LogitSequence};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut tested = 0usize;
    while tested < trials {
        let t = rng.random_range(2..7);
        let v = rng.random_range(2..7);
        let n = rng.random_range(0..4.min(t + 1));
        let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(1..v)).collect();
        let labels = LabelSequence::new(tokens, v)?;
        let logits = LogitSequence::new(ndarray::Array2::from_shape_fn((t, v), |_| {
            rng.random_range(-2.0..2.0)
        }))?;
        let out = ctc_loss(&logits, &labels)?;
        if !out.feasible {
            continue;
        }
        tested += 1;
        let h = 1e-4;
        for ti in 0..t {
            for tok in 0..v {
                let mut plus = logits.data.clone();
                plus[(ti, tok)] += h;
                let mut minus = logits.data.clone();
                minus[(ti, tok)] -= h;
                let lp = ctc_loss(&LogitSequence::new(plus)?, &labels)?.loss;
                let lm = ctc_loss(&LogitSequence::new(minus)?, &labels)?.loss;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - out.grad[(ti, tok)]).abs() / (1.0 + out.grad[(ti, tok)].abs());
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_json();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.num_speakers, 2);
        assert_eq!(back.stft, cfg.stft);
        assert!(matches!(back.mask_source, MaskSource::OracleIrm));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let cfg = PipelineConfig {
            lambda: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            mvdr_eps: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            mask_source: MaskSource::Estimator {
                path: PathBuf::from("/definitely/not/here.json"),
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ctc_self_test_passes_threshold() {
        let worst = ctc_gradient_self_test(10, 3).unwrap();
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }
}
