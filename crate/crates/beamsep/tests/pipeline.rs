//! Pipeline-level integration tests: corpus generation, separation,
//! evaluation, scheduling dry-runs, and the CLI binary's exit behavior.

mod common;

use std::path::{Path, PathBuf};

use beamsep::pipeline::{cmd_evaluate, cmd_generate, cmd_separate, MaskSource, PipelineConfig};
use beamsep::spatial::{
    generate_corpus, CorpusManifest, DatasetSpec, PropagationMode, RoomRanges, SyntheticUtterances,
};
use beamsep::stft::MultichannelWaveform;
use beamsep::wav::{read_wav, write_wav, WavFormat};

fn synth_spec(n_mixtures: usize, seed: u64, channels: usize) -> DatasetSpec {
    DatasetSpec {
        sample_rate_hz: 16_000,
        n_mixtures,
        channels,
        seed,
        snr_range_db: [-5.0, 5.0],
        utterances: Vec::new(),
        synthetic_utterances: Some(SyntheticUtterances {
            count: 6,
            duration_s: 0.8,
        }),
        mode: PropagationMode::Anechoic,
        room: RoomRanges::default(),
        noise_snr_db_range: None,
    }
}

fn write_spec(dir: &Path, spec: &DatasetSpec) -> PathBuf {
    let path = dir.join("dataset.json");
    std::fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

#[test]
fn generate_lists_requested_number_of_records() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = write_spec(dir.path(), &synth_spec(5, 1, 2));
    let out = dir.path().join("corpus");
    let manifest = cmd_generate(&spec_path, &out).unwrap();
    assert_eq!(manifest.mixtures.len(), 5);
    for m in &manifest.mixtures {
        assert!(out.join(&m.wav_mix).exists());
        for r in &m.wav_refs {
            assert!(out.join(r).exists());
        }
    }
}

#[test]
fn generate_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = write_spec(dir.path(), &synth_spec(3, 7, 2));
    let out1 = dir.path().join("c1");
    let out2 = dir.path().join("c2");
    cmd_generate(&spec_path, &out1).unwrap();
    cmd_generate(&spec_path, &out2).unwrap();
    let m1 = std::fs::read(out1.join("corpus.json")).unwrap();
    let m2 = std::fs::read(out2.join("corpus.json")).unwrap();
    assert_eq!(m1, m2);
    // the audio payloads agree too
    let manifest = CorpusManifest::load(out1.join("corpus.json")).unwrap();
    let rel = &manifest.mixtures[0].wav_mix;
    assert_eq!(
        std::fs::read(out1.join(rel)).unwrap(),
        std::fs::read(out2.join(rel)).unwrap()
    );
}

#[test]
fn generate_without_utterances_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = synth_spec(2, 1, 2);
    spec.synthetic_utterances = None;
    let spec_path = write_spec(dir.path(), &spec);
    assert!(cmd_generate(&spec_path, &dir.path().join("corpus")).is_err());
}

/// Two dry utterances living in fully separate frequency bands (tones below
/// 1.5 kHz against tones above 3 kHz) and alternating in time, the way two
/// polite talkers would. Oracle masks make this near-perfectly separable,
/// so per-source SI-SDR should be very high. The scene is colinear with
/// integer-sample path delays so the mixing matches the per-bin model
/// exactly and the headroom above the 40 dB bar is wide.
#[test]
fn disjoint_band_sources_separate_nearly_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let fs = 16_000u32;
    let n = 64_000usize;
    let t = |i: usize| i as f64 / fs as f64;
    // 500 ms alternating activity slots with 50 ms raised-cosine edges
    let slot = 8_000usize;
    let gate = |i: usize, phase: usize| -> f64 {
        let pos = i % (2 * slot);
        let active = (pos / slot) == phase;
        let edge = 800usize;
        let k = pos % slot;
        if !active {
            0.0
        } else if k < edge {
            0.5 - 0.5 * (std::f64::consts::PI * k as f64 / edge as f64).cos()
        } else if k + edge > slot {
            let tail = slot - k;
            0.5 - 0.5 * (std::f64::consts::PI * tail as f64 / edge as f64).cos()
        } else {
            1.0
        }
    };
    let low: Vec<f64> = (0..n)
        .map(|i| {
            gate(i, 0)
                * (0.4 * (std::f64::consts::TAU * 400.0 * t(i)).sin()
                    + 0.3 * (std::f64::consts::TAU * 800.0 * t(i)).sin()
                    + 0.2 * (std::f64::consts::TAU * 1200.0 * t(i)).sin())
        })
        .collect();
    let high: Vec<f64> = (0..n)
        .map(|i| {
            gate(i, 1)
                * (0.4 * (std::f64::consts::TAU * 3400.0 * t(i)).sin()
                    + 0.3 * (std::f64::consts::TAU * 4600.0 * t(i)).sin()
                    + 0.2 * (std::f64::consts::TAU * 6000.0 * t(i)).sin())
        })
        .collect();

    // colinear geometry whose source-mic distances are integer multiples of
    // one sample of travel, so the fractional-delay kernel is a pure shift
    let q = 343.0 / 16_000.0;
    let scene = beamsep::spatial::RoomScene {
        room_dims_m: [6.0, 5.0, 3.0],
        source_positions_m: vec![[1.0, 3.0, 1.5], [1.0 + 120.0 * q, 3.0, 1.5]],
        mic_positions_m: vec![[1.0 + 60.0 * q, 3.0, 1.5], [1.0 + 61.0 * q, 3.0, 1.5]],
        speed_of_sound_mps: 343.0,
        mode: PropagationMode::Anechoic,
    };
    let img_low = beamsep::spatial::simulate_propagation(
        &MultichannelWaveform::from_mono(low, fs).unwrap(),
        &scene,
        0,
    )
    .unwrap();
    let img_high = beamsep::spatial::simulate_propagation(
        &MultichannelWaveform::from_mono(high, fs).unwrap(),
        &scene,
        1,
    )
    .unwrap();
    let record = beamsep::spatial::mix_at_snr(&img_low, &img_high, 0.0, 0).unwrap();

    // assemble the corpus layout by hand
    let corpus_dir = dir.path().join("corpus");
    let mix_dir = corpus_dir.join("mix00000");
    std::fs::create_dir_all(&mix_dir).unwrap();
    write_wav(mix_dir.join("mix.wav"), &record.mixture, WavFormat::Float32).unwrap();
    write_wav(
        mix_dir.join("ref1.wav"),
        &record.references[0],
        WavFormat::Float32,
    )
    .unwrap();
    write_wav(
        mix_dir.join("ref2.wav"),
        &record.references[1],
        WavFormat::Float32,
    )
    .unwrap();
    let manifest = CorpusManifest {
        sample_rate_hz: fs,
        seed: 0,
        mixtures: vec![beamsep::spatial::ManifestMixture {
            id: "mix00000".into(),
            wav_mix: PathBuf::from("mix00000/mix.wav"),
            wav_refs: vec![
                PathBuf::from("mix00000/ref1.wav"),
                PathBuf::from("mix00000/ref2.wav"),
            ],
            wav_noise: None,
            snr_db: 0.0,
            scene,
            transcripts: vec!["low tones".into(), "high tones".into()],
        }],
    };
    manifest.save(corpus_dir.join("corpus.json")).unwrap();

    let cfg = PipelineConfig::default();
    let sep_dir = dir.path().join("sep");
    let summary = cmd_separate(&cfg, &corpus_dir.join("corpus.json"), &sep_dir, false).unwrap();
    assert!(summary.failed.is_empty());
    for d in &summary.succeeded {
        for (s, &db) in d.si_sdr_db.iter().enumerate() {
            assert!(
                db > 40.0,
                "source {s} of {}: SI-SDR {db:.1} dB below 40 dB",
                d.id
            );
        }
    }
}

#[test]
fn zero_speaker_config_is_an_error() {
    let cfg = PipelineConfig {
        num_speakers: 0,
        ..Default::default()
    };
    assert!(cfg.validate().is_err());
}

/// With a single channel the MVDR matrix normalizes to the scalar 1, so the
/// pipeline reduces to an identity pass on the mixture.
#[test]
fn single_channel_pipeline_is_identity_on_the_mixture() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_spec(1, 11, 1);
    let corpus_dir = dir.path().join("corpus");
    generate_corpus(&spec, dir.path(), &corpus_dir).unwrap();
    let manifest = CorpusManifest::load(corpus_dir.join("corpus.json")).unwrap();

    let cfg = PipelineConfig::default();
    let sep_dir = dir.path().join("sep");
    let summary = cmd_separate(&cfg, &corpus_dir.join("corpus.json"), &sep_dir, false).unwrap();
    assert!(summary.failed.is_empty());

    let mix = read_wav(corpus_dir.join(&manifest.mixtures[0].wav_mix)).unwrap();
    let sep = read_wav(sep_dir.join(&manifest.mixtures[0].id).join("s1.wav")).unwrap();
    let window = 400;
    let interior = window..mix.len_samples() - window;
    let mut err = 0.0;
    let mut norm = 0.0;
    for i in interior {
        let d = sep.samples[(0, i)] - mix.samples[(0, i)];
        err += d * d;
        norm += mix.samples[(0, i)] * mix.samples[(0, i)];
    }
    assert!(
        (err / norm).sqrt() < 1e-6,
        "single-channel separation should echo the mixture"
    );
}

fn fake_separated_dir(
    dir: &Path,
    corpus_dir: &Path,
    manifest: &CorpusManifest,
    swap: bool,
) -> PathBuf {
    let sep_dir = dir.join(if swap { "sep_swapped" } else { "sep_plain" });
    for m in &manifest.mixtures {
        let mix_dir = sep_dir.join(&m.id);
        std::fs::create_dir_all(&mix_dir).unwrap();
        let refs: Vec<MultichannelWaveform> = m
            .wav_refs
            .iter()
            .map(|r| read_wav(corpus_dir.join(r)).unwrap())
            .collect();
        for (s, r) in refs.iter().enumerate() {
            let channel0 =
                MultichannelWaveform::from_mono(r.channel(0).to_vec(), r.sample_rate_hz).unwrap();
            let slot = if swap { refs.len() - s } else { s + 1 };
            write_wav(
                mix_dir.join(format!("s{slot}.wav")),
                &channel0,
                WavFormat::Float32,
            )
            .unwrap();
        }
        std::fs::write(
            mix_dir.join("diagnostics.json"),
            serde_json::json!({ "ref_channel": 0 }).to_string(),
        )
        .unwrap();
    }
    sep_dir
}

#[test]
fn evaluating_references_as_estimates_caps_and_permutes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_spec(2, 21, 2);
    let corpus_dir = dir.path().join("corpus");
    let manifest = generate_corpus(&spec, dir.path(), &corpus_dir).unwrap();
    let corpus_json = corpus_dir.join("corpus.json");

    let plain = fake_separated_dir(dir.path(), &corpus_dir, &manifest, false);
    let table = cmd_evaluate(&corpus_json, &plain).unwrap();
    for m in &table.mixtures {
        assert_eq!(m.permutation, vec![0, 1]);
        for &db in &m.per_source_si_sdr_db {
            // float32 WAV round trip keeps reconstruction at the cap
            assert!(db > 99.0, "expected capped score, got {db}");
        }
    }

    let swapped = fake_separated_dir(dir.path(), &corpus_dir, &manifest, true);
    let table_swapped = cmd_evaluate(&corpus_json, &swapped).unwrap();
    assert_eq!(
        table.average_si_sdr_db, table_swapped.average_si_sdr_db,
        "permutation search must recover swapped outputs"
    );
    for m in &table_swapped.mixtures {
        assert_eq!(m.permutation, vec![1, 0]);
    }
}

#[test]
fn evaluate_matches_direct_metric_calls() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_spec(1, 31, 2);
    let corpus_dir = dir.path().join("corpus");
    let manifest = generate_corpus(&spec, dir.path(), &corpus_dir).unwrap();
    let corpus_json = corpus_dir.join("corpus.json");

    let cfg = PipelineConfig::default();
    let sep_dir = dir.path().join("sep");
    let summary = cmd_separate(&cfg, &corpus_json, &sep_dir, false).unwrap();
    assert_eq!(summary.succeeded.len(), 1);
    let table = cmd_evaluate(&corpus_json, &sep_dir).unwrap();

    let m = &manifest.mixtures[0];
    let score = &table.mixtures[0];
    let ref_channel = summary.succeeded[0].ref_channel;
    for (stream, &k) in score.permutation.iter().enumerate() {
        let est = read_wav(sep_dir.join(&m.id).join(format!("s{}.wav", stream + 1))).unwrap();
        let reference = read_wav(corpus_dir.join(&m.wav_refs[k])).unwrap();
        let est = est.channel(0).to_vec();
        let reference = reference.channel(ref_channel).to_vec();
        let n = est.len().min(reference.len());
        let direct = beamsep::metrics::si_sdr(&est[..n], &reference[..n]).unwrap();
        assert_eq!(direct.db, score.per_source_si_sdr_db[stream]);
    }
}

#[test]
fn estimator_mask_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_spec(1, 41, 2);
    let corpus_dir = dir.path().join("corpus");
    generate_corpus(&spec, dir.path(), &corpus_dir).unwrap();

    // an untrained estimator is a valid (if useless) mask source; the
    // pipeline must still run and produce finite scores
    let cfg0 = PipelineConfig::default();
    let est = beamsep::masking::AffineSigmoidEstimator::new(2, cfg0.stft.num_bins());
    let est_path = dir.path().join("estimator.json");
    est.save(&est_path).unwrap();

    let cfg = PipelineConfig {
        mask_source: MaskSource::Estimator { path: est_path },
        ..Default::default()
    };
    let sep_dir = dir.path().join("sep");
    let summary = cmd_separate(&cfg, &corpus_dir.join("corpus.json"), &sep_dir, false).unwrap();
    assert!(summary.failed.is_empty());
    assert!(summary.succeeded[0].si_sdr_db.iter().all(|d| d.is_finite()));
}

#[test]
fn schedule_dryrun_validates_and_is_deterministic() {
    use beamsep::scheduler::{SnrSortKey, UtteranceKind, UtteranceMeta};
    let clean: Vec<UtteranceMeta> = (0..13)
        .map(|i| UtteranceMeta {
            id: format!("c{i}"),
            kind: UtteranceKind::CleanSingle,
            length_frames: 100 + (i * 37) % 50,
            snr_db: None,
            shard: PathBuf::from("clean.bin"),
        })
        .collect();
    let noisy: Vec<UtteranceMeta> = (0..9)
        .map(|i| UtteranceMeta {
            id: format!("n{i}"),
            kind: UtteranceKind::NoisyMulti,
            length_frames: 80,
            snr_db: Some(-5.0 + i as f64),
            shard: PathBuf::from("noisy.bin"),
        })
        .collect();

    let (plans, violations) = beamsep::pipeline::cmd_schedule_dryrun(
        &clean,
        &noisy,
        4,
        99,
        1,
        2,
        SnrSortKey::AbsoluteSnr,
    )
    .unwrap();
    assert!(violations.is_empty(), "violations: {violations:?}");
    assert_eq!(plans.len(), 3);

    let (plans2, _) = beamsep::pipeline::cmd_schedule_dryrun(
        &clean,
        &noisy,
        4,
        99,
        1,
        2,
        SnrSortKey::AbsoluteSnr,
    )
    .unwrap();
    for (a, b) in plans.iter().zip(&plans2) {
        assert_eq!(a.to_json(), b.to_json());
    }
}

// --- CLI binary smoke tests -------------------------------------------------

fn beamsep_bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_beamsep"))
}

#[test]
fn cli_missing_manifest_exits_with_data_error() {
    let out = beamsep_bin()
        .args([
            "generate",
            "/nonexistent/dataset.json",
            "/tmp/beamsep-test-out",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_usage_errors_exit_with_one() {
    let out = beamsep_bin().args(["no-such-subcommand"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = beamsep_bin().args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn separate_dumps_mask_and_filter_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_spec(1, 55, 2);
    let corpus_dir = dir.path().join("corpus");
    generate_corpus(&spec, dir.path(), &corpus_dir).unwrap();
    let cfg = PipelineConfig::default();
    let sep_dir = dir.path().join("sep");
    let summary = cmd_separate(&cfg, &corpus_dir.join("corpus.json"), &sep_dir, true).unwrap();
    assert!(summary.failed.is_empty());
    let mix_dir = sep_dir.join("mix00000");
    for name in [
        "masks.bin",
        "masks_plot.bin",
        "filters.bin",
        "psd.bin",
        "diagnostics.json",
    ] {
        assert!(mix_dir.join(name).exists(), "{name} missing");
    }
    let (dims, data) = beamsep::tensor::read_f32_tensor(mix_dir.join("masks.bin")).unwrap();
    assert_eq!(dims.len(), 4);
    assert_eq!(dims[0], 3); // noise + two speakers
    assert!(data.iter().all(|&m| (0.0..=1.0).contains(&m)));
    let (fdims, _) = beamsep::tensor::read_c64_tensor(mix_dir.join("filters.bin")).unwrap();
    assert_eq!(fdims, vec![2, 257, 2]);
}

#[test]
fn schedule_dryrun_accepts_a_corpus_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = synth_spec(3, 66, 2);
    let corpus_dir = dir.path().join("corpus");
    generate_corpus(&spec, dir.path(), &corpus_dir).unwrap();

    let out = beamsep_bin()
        .args([
            "schedule-dryrun",
            "--corpus",
            corpus_dir.join("corpus.json").to_str().unwrap(),
            "--batch-size",
            "2",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all scheduling invariants hold"), "{text}");
}

#[test]
fn cli_ctc_check_passes() {
    let out = beamsep_bin()
        .args(["ctc-check", "--trials", "5", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
}

#[test]
fn cli_config_show_defaults_prints_json() {
    let out = beamsep_bin()
        .args(["config", "show-defaults"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["num_speakers"], 2);
    assert_eq!(parsed["stft"]["fft_size"], 512);
}

#[test]
fn cli_generate_separate_evaluate_beampattern_flow() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = write_spec(dir.path(), &synth_spec(2, 5, 2));
    let corpus_dir = dir.path().join("corpus");
    let sep_dir = dir.path().join("sep");

    let gen = beamsep_bin()
        .args([
            "generate",
            spec_path.to_str().unwrap(),
            corpus_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(gen.status.code(), Some(0), "{gen:?}");

    let sep = beamsep_bin()
        .args([
            "separate",
            corpus_dir.join("corpus.json").to_str().unwrap(),
            sep_dir.to_str().unwrap(),
            "--quiet",
        ])
        .output()
        .unwrap();
    assert_eq!(sep.status.code(), Some(0), "{sep:?}");

    let eval = beamsep_bin()
        .args([
            "evaluate",
            corpus_dir.join("corpus.json").to_str().unwrap(),
            sep_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0), "{eval:?}");
    let text = String::from_utf8_lossy(&eval.stdout);
    assert!(text.contains("average"), "missing average row: {text}");

    let csv_path = dir.path().join("pattern.csv");
    let bp = beamsep_bin()
        .args([
            "beampattern",
            corpus_dir.join("corpus.json").to_str().unwrap(),
            sep_dir.to_str().unwrap(),
            "--mixture",
            "mix00000",
            "--speaker",
            "1",
            "--out",
            csv_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(bp.status.code(), Some(0), "{bp:?}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("azimuth_deg,freq_hz,magnitude"));
    // 4 default frequencies x 360 azimuths + header
    assert_eq!(csv.lines().count(), 4 * 360 + 1);
}
