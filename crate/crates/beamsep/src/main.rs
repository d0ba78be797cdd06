//! Command-line front end over the separation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beamsep::error::Error;
use beamsep::pipeline::{
    self, accumulate_stats, cmd_beampattern, cmd_evaluate, cmd_generate, cmd_schedule_dryrun,
    cmd_separate, extract_features, PipelineConfig,
};
use beamsep::scheduler::{SnrSortKey, UtteranceMeta};

#[derive(Parser)]
#[command(
    name = "beamsep",
    about = "Multi-channel multi-speaker separation front-end: corpus synthesis, mask-driven MVDR separation, features, losses, scheduling and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpt {
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for per-mixture parallelism (0 = auto).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl ConfigOpt {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if self.workers > 0 {
            cfg.workers = self.workers;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a spatialized two-speaker corpus from a dataset description.
    Generate {
        /// Dataset description JSON.
        manifest: PathBuf,
        /// Output directory for WAVs and corpus.json.
        out_dir: PathBuf,
        /// Override the seed recorded in the dataset description.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Separate every mixture of a corpus with mask-driven MVDR.
    Separate {
        /// Corpus manifest (corpus.json from `generate`).
        corpus: PathBuf,
        /// Output directory for separated WAVs and diagnostics.
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigOpt,
        /// Also dump median-renormalized masks for plotting.
        #[arg(long)]
        plot_masks: bool,
        /// Suppress the per-mixture progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Score separated outputs against the corpus references.
    Evaluate {
        corpus: PathBuf,
        separated_dir: PathBuf,
        /// Write the score table JSON here (stdout gets the text table).
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Build and validate curriculum + shuffled batch plans.
    ScheduleDryrun {
        /// Utterance metadata JSON: a list of scheduler entries.
        #[arg(long, conflicts_with = "corpus")]
        utterances: Option<PathBuf>,
        /// Corpus manifest; its mixtures become the multi-speaker pool.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Single-speaker WAV list JSON appended as the clean pool
        /// (entries: {id, wav, transcript}).
        #[arg(long, requires = "corpus")]
        clean_wavs: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        epochs_curriculum: usize,
        #[arg(long, default_value_t = 1)]
        epochs_shuffled: usize,
        /// Sort noisy mixtures by raw SNR instead of |SNR|.
        #[arg(long)]
        raw_snr_sort: bool,
        /// Write the per-epoch plans JSON here.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Extract log-mel features; accumulate or apply normalization stats.
    Features {
        /// Input WAV files.
        wavs: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigOpt,
        /// Accumulate corpus statistics over the inputs and write them here.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Normalize using previously accumulated statistics.
        #[arg(long)]
        apply_stats: Option<PathBuf>,
        /// Directory for per-input feature tensors (binary format).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the CTC gradient self-test against finite differences.
    CtcCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit the beam-pattern CSV for one separated mixture.
    Beampattern {
        corpus: PathBuf,
        separated_dir: PathBuf,
        /// Mixture id, e.g. mix00000.
        #[arg(long)]
        mixture: String,
        /// Speaker index (1-based).
        #[arg(long, default_value_t = 1)]
        speaker: usize,
        /// Analysis frequencies in Hz.
        #[arg(long, value_delimiter = ',', default_values_t = vec![500.0, 1000.0, 2000.0, 4000.0])]
        freqs: Vec<f64>,
        #[command(flatten)]
        config: ConfigOpt,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the built-in default pipeline configuration.
    ShowDefaults,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            manifest,
            out_dir,
            seed,
        } => {
            let corpus = match seed {
                None => cmd_generate(&manifest, &out_dir)?,
                Some(seed) => {
                    let text =
                        std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
                    let mut spec: beamsep::spatial::DatasetSpec =
                        serde_json::from_str(&text).map_err(|e| Error::json(&manifest, e))?;
                    spec.seed = seed;
                    let base = manifest.parent().unwrap_or(std::path::Path::new("."));
                    beamsep::spatial::generate_corpus(&spec, base, &out_dir)?
                }
            };
            println!(
                "generated {} mixtures into {}",
                corpus.mixtures.len(),
                out_dir.display()
            );
            for m in &corpus.mixtures {
                println!("  {}  snr {:+.2} dB", m.id, m.snr_db);
            }
            Ok(())
        }
        Command::Separate {
            corpus,
            out_dir,
            config,
            plot_masks,
            quiet,
        } => {
            let cfg = config.load()?;
            let summary = cmd_separate(&cfg, &corpus, &out_dir, plot_masks)?;
            if !quiet {
                for d in &summary.succeeded {
                    let avg = d.si_sdr_db.iter().sum::<f64>() / d.si_sdr_db.len().max(1) as f64;
                    println!(
                        "{}: ref_channel {}  si_sdr {:+.2} dB  pinv_fallbacks {}",
                        d.id,
                        d.ref_channel,
                        avg,
                        d.mvdr_pinv_fallbacks.len()
                    );
                }
            }
            for (id, msg) in &summary.failed {
                eprintln!("{id}: FAILED: {msg}");
            }
            if summary.failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "{} of {} mixtures failed",
                    summary.failed.len(),
                    summary.failed.len() + summary.succeeded.len()
                )))
            }
        }
        Command::Evaluate {
            corpus,
            separated_dir,
            json_out,
        } => {
            let table = cmd_evaluate(&corpus, &separated_dir)?;
            print!("{}", table.to_text());
            if let Some(path) = json_out {
                std::fs::write(&path, table.to_json()).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        }
        Command::ScheduleDryrun {
            utterances,
            corpus,
            clean_wavs,
            batch_size,
            seed,
            epochs_curriculum,
            epochs_shuffled,
            raw_snr_sort,
            json_out,
        } => {
            let metas: Vec<UtteranceMeta> = match (&utterances, &corpus) {
                (Some(path), None) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::json(path, e))?
                }
                (None, Some(corpus_path)) => {
                    let stft = PipelineConfig::default().stft;
                    let mut metas = pipeline::scheduler_metas_from_corpus(corpus_path, &stft)?;
                    if let Some(clean_path) = &clean_wavs {
                        metas.extend(pipeline::scheduler_metas_from_wav_list(clean_path, &stft)?);
                    }
                    metas
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "give exactly one of --utterances or --corpus".into(),
                    ))
                }
            };
            let (clean, noisy): (Vec<_>, Vec<_>) = metas
                .into_iter()
                .partition(|m| m.kind == beamsep::scheduler::UtteranceKind::CleanSingle);
            let sort = if raw_snr_sort {
                SnrSortKey::RawSnr
            } else {
                SnrSortKey::AbsoluteSnr
            };
            let (plans, violations) = cmd_schedule_dryrun(
                &clean,
                &noisy,
                batch_size,
                seed,
                epochs_curriculum,
                epochs_shuffled,
                sort,
            )?;
            for (i, plan) in plans.iter().enumerate() {
                println!("epoch {i}: {:?} phase, {} batches", plan.phase, plan.len());
            }
            if let Some(path) = json_out {
                let text =
                    serde_json::to_string_pretty(&plans).map_err(|e| Error::json(&path, e))?;
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
            if violations.is_empty() {
                println!("all scheduling invariants hold");
                Ok(())
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                Err(Error::InvalidInput(format!(
                    "{} scheduling violations",
                    violations.len()
                )))
            }
        }
        Command::Features {
            wavs,
            config,
            stats_out,
            apply_stats,
            out_dir,
        } => {
            if wavs.is_empty() {
                return Err(Error::InvalidConfig("no input WAVs given".into()));
            }
            let cfg = config.load()?;
            if let Some(stats_path) = stats_out {
                let stats = accumulate_stats(&wavs, &cfg)?;
                stats.save(&stats_path)?;
                println!(
                    "accumulated stats over {} frames into {}",
                    stats.frame_count,
                    stats_path.display()
                );
                return Ok(());
            }
            let stats = match &apply_stats {
                Some(path) => Some(beamsep::features::MvnStats::load(path)?),
                None => None,
            };
            for wav in &wavs {
                let feat = extract_features(wav, &cfg, stats.as_ref())?;
                println!(
                    "{}: {} frames x {} mels",
                    wav.display(),
                    feat.num_frames(),
                    feat.num_dims()
                );
                if let Some(dir) = &out_dir {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    let stem = wav
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "features".into());
                    beamsep::tensor::write_f32_tensor(
                        dir.join(format!("{stem}.bin")),
                        &[feat.num_frames(), feat.num_dims()],
                        feat.data.as_slice().expect("contiguous"),
                    )?;
                }
            }
            Ok(())
        }
        Command::CtcCheck { trials, seed } => {
            let worst = pipeline::ctc_gradient_self_test(trials, seed)?;
            println!("max relative gradient error over {trials} instances: {worst:.3e}");
            if worst < 1e-4 {
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "CTC gradient check failed: {worst:.3e} >= 1e-4"
                )))
            }
        }
        Command::Beampattern {
            corpus,
            separated_dir,
            mixture,
            speaker,
            freqs,
            config,
            out,
        } => {
            let cfg = config.load()?;
            let table = cmd_beampattern(&corpus, &separated_dir, &mixture, speaker, &freqs, &cfg)?;
            let csv = table.to_csv();
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Config { action } => match action {
            ConfigAction::ShowDefaults => {
                println!("{}", PipelineConfig::default().to_json());
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    // behave like a unix tool when stdout is a closed pipe
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    // usage problems exit with 1; clap's default of 2 is reserved for data
    // errors here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
