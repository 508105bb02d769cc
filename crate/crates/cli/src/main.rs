//! Command-line surface tying analysis, inversion, baseline, and evaluation
//! into reproducible runs.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 input/format
//! error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use melsin::config::PipelineConfig;
use melsin::dsp::{AudioBuffer, WindowKind};
use melsin::error::Error;
use melsin::eval::{eval_csv_header, eval_csv_row, EvalReport};
use melsin::mel::{load_melspec_binary, save_melspec_binary, LogMelSpectrogram};
use melsin::pipeline;
use melsin::pitch::{load_pitch_csv, save_pitch_csv, PitchTrack};
use melsin::sinres::save_frames_csv;
use melsin::wav::{read_wav, write_wav, WavFormat};

#[derive(Parser)]
#[command(
    name = "melsin",
    version,
    about = "Reconstructs pitched audio from log-mel-spectrograms with a harmonic sinusoidal model"
)]
struct Cli {
    #[command(flatten)]
    overrides: ConfigOverrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the pipeline configuration; `--config` loads defaults
/// from a TOML file and individual flags override it.
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    sample_rate: Option<u32>,
    #[arg(long, global = true)]
    num_mels: Option<usize>,
    #[arg(long, global = true)]
    window_length: Option<usize>,
    #[arg(long, global = true)]
    hop_size: Option<usize>,
    #[arg(long, global = true)]
    fft_size: Option<usize>,
    /// blackman, hann, or rectangular
    #[arg(long, global = true)]
    analysis_window: Option<String>,
    #[arg(long, global = true)]
    f0_min: Option<f64>,
    #[arg(long, global = true)]
    f0_max: Option<f64>,
    #[arg(long, global = true)]
    yin_threshold: Option<f64>,
    #[arg(long, global = true)]
    continuity_tolerance: Option<f64>,
    #[arg(long, global = true)]
    log_floor_db: Option<f64>,
    #[arg(long, global = true)]
    griffinlim_iterations: Option<usize>,
    #[arg(long, global = true)]
    griffinlim_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a log-mel-spectrogram and pitch track from a WAV file
    Analyze {
        input: PathBuf,
        /// Output directory for <stem>.melspec and <stem>.pitch.csv
        #[arg(short, long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Sinusoidal reconstruction from serialized artifacts
    Invert {
        melspec: PathBuf,
        pitch: PathBuf,
        #[arg(short, long, value_name = "WAV")]
        output: PathBuf,
        /// Also dump the harmonic frame table as CSV (diagnostic)
        #[arg(long, value_name = "CSV")]
        dump_frames: Option<PathBuf>,
    },
    /// Griffin-Lim reconstruction from a serialized melspec
    Baseline {
        melspec: PathBuf,
        #[arg(short, long, value_name = "WAV")]
        output: PathBuf,
    },
    /// Analyze, invert, run the baseline, and evaluate both reconstructions
    Roundtrip {
        input: PathBuf,
        /// Output directory for all artifacts plus <stem>.eval.csv
        #[arg(short, long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Alignment search half-width in samples
        #[arg(long, default_value_t = 1024)]
        max_lag: usize,
    },
    /// Compare two WAV files; prints an evaluation CSV row on stdout
    Evaluate {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = 1024)]
        max_lag: usize,
    },
}

/// An error annotated with the pipeline stage it came from.
struct StageError {
    stage: &'static str,
    source: Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> Stage<T> for melsin::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn exit_code_for(error: &StageError) -> u8 {
    match (&error.source, error.stage) {
        (_, "config") => 2,
        (Error::NumericFailure(_), _)
        | (Error::CalibrationFailure(_), _)
        | (Error::DegenerateCandidate(_), _)
        | (Error::DegenerateFilterbank { .. }, _) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli.overrides) {
        Ok(config) => config,
        Err(e) => return fail(&e),
    };
    let result = match cli.command {
        Command::Analyze { input, out_dir } => cmd_analyze(&input, &out_dir, &config).map(|_| ()),
        Command::Invert {
            melspec,
            pitch,
            output,
            dump_frames,
        } => cmd_invert(&melspec, &pitch, &output, dump_frames.as_deref(), &config),
        Command::Baseline { melspec, output } => cmd_baseline(&melspec, &output, &config),
        Command::Roundtrip {
            input,
            out_dir,
            max_lag,
        } => cmd_roundtrip(&input, &out_dir, max_lag, &config),
        Command::Evaluate {
            reference,
            candidate,
            max_lag,
        } => cmd_evaluate(&reference, &candidate, max_lag, &config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(error: &StageError) -> ExitCode {
    eprintln!("melsin: {}: {}", error.stage, error.source);
    ExitCode::from(exit_code_for(error))
}

fn build_config(overrides: &ConfigOverrides) -> Result<PipelineConfig, StageError> {
    let mut config = match &overrides.config {
        Some(path) => PipelineConfig::from_toml_file(path).stage("config")?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = overrides.sample_rate {
        config.sample_rate = v;
    }
    if let Some(v) = overrides.num_mels {
        config.num_mels = v;
    }
    if let Some(v) = overrides.window_length {
        config.window_length = v;
    }
    if let Some(v) = overrides.hop_size {
        config.hop_size = v;
    }
    if let Some(v) = overrides.fft_size {
        config.fft_size = v;
    }
    if let Some(v) = &overrides.analysis_window {
        config.analysis_window = WindowKind::from_str(v).stage("config")?;
    }
    if let Some(v) = overrides.f0_min {
        config.f0_min = v;
    }
    if let Some(v) = overrides.f0_max {
        config.f0_max = v;
    }
    if let Some(v) = overrides.yin_threshold {
        config.yin_threshold = v;
    }
    if let Some(v) = overrides.continuity_tolerance {
        config.continuity_tolerance = v;
    }
    if let Some(v) = overrides.log_floor_db {
        config.log_floor_db = v;
    }
    if let Some(v) = overrides.griffinlim_iterations {
        config.griffinlim_iterations = v;
    }
    if let Some(v) = overrides.griffinlim_seed {
        config.griffinlim_seed = v;
    }
    config.validate().stage("config")?;
    Ok(config)
}

fn stem_of(input: &Path) -> String {
    input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string())
}

struct AnalyzeOutputs {
    audio: AudioBuffer,
    melspec_path: PathBuf,
    pitch_path: PathBuf,
}

fn cmd_analyze(
    input: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
) -> Result<AnalyzeOutputs, StageError> {
    std::fs::create_dir_all(out_dir)
        .map_err(Error::from)
        .stage("analyze")?;
    let audio = read_wav(input).stage("read-wav")?;
    let analysis = pipeline::analyze(&audio, config).stage("analyze")?;
    let stem = stem_of(input);
    let melspec_path = out_dir.join(format!("{stem}.melspec"));
    let pitch_path = out_dir.join(format!("{stem}.pitch.csv"));
    save_melspec_binary(&melspec_path, &analysis.logmel).stage("write-melspec")?;
    save_pitch_csv(&pitch_path, &analysis.pitch).stage("write-pitch")?;
    println!("wrote {}", melspec_path.display());
    println!("wrote {}", pitch_path.display());
    Ok(AnalyzeOutputs {
        audio,
        melspec_path,
        pitch_path,
    })
}

fn load_artifacts(
    melspec: &Path,
    pitch: &Path,
) -> Result<(LogMelSpectrogram, PitchTrack), StageError> {
    let logmel = load_melspec_binary(melspec).stage("read-melspec")?;
    let track = load_pitch_csv(pitch).stage("read-pitch")?;
    Ok((logmel, track))
}

fn cmd_invert(
    melspec: &Path,
    pitch: &Path,
    output: &Path,
    dump_frames: Option<&Path>,
    config: &PipelineConfig,
) -> Result<(), StageError> {
    let (logmel, track) = load_artifacts(melspec, pitch)?;
    let (audio, frames) = pipeline::invert_with_frames(&logmel, &track, config).stage("invert")?;
    if let Some(path) = dump_frames {
        save_frames_csv(path, &frames).stage("write-frames")?;
        println!("wrote {}", path.display());
    }
    write_wav(output, &audio, WavFormat::Float32).stage("write-wav")?;
    println!("wrote {}", output.display());
    Ok(())
}

fn cmd_baseline(melspec: &Path, output: &Path, config: &PipelineConfig) -> Result<(), StageError> {
    let logmel = load_melspec_binary(melspec).stage("read-melspec")?;
    let audio = pipeline::baseline(&logmel, config).stage("baseline")?;
    write_wav(output, &audio, WavFormat::Float32).stage("write-wav")?;
    println!("wrote {}", output.display());
    Ok(())
}

fn cmd_roundtrip(
    input: &Path,
    out_dir: &Path,
    max_lag: usize,
    config: &PipelineConfig,
) -> Result<(), StageError> {
    let outputs = cmd_analyze(input, out_dir, config)?;
    let stem = stem_of(input);

    // Inversion and baseline consume the serialized artifacts, so
    // `roundtrip` is exactly `analyze` + `invert` + `baseline`.
    let (logmel, track) = load_artifacts(&outputs.melspec_path, &outputs.pitch_path)?;
    let sin_audio = pipeline::invert(&logmel, &track, config).stage("invert")?;
    let sin_path = out_dir.join(format!("{stem}.sin.wav"));
    write_wav(&sin_path, &sin_audio, WavFormat::Float32).stage("write-wav")?;
    println!("wrote {}", sin_path.display());

    let gl_audio = pipeline::baseline(&logmel, config).stage("baseline")?;
    let gl_path = out_dir.join(format!("{stem}.gl.wav"));
    write_wav(&gl_path, &gl_audio, WavFormat::Float32).stage("write-wav")?;
    println!("wrote {}", gl_path.display());

    let mut rows = Vec::new();
    for path in [&sin_path, &gl_path] {
        let candidate = read_wav(path).stage("read-wav")?;
        let report =
            pipeline::evaluate_audio(&outputs.audio, &candidate, config, max_lag).stage("evaluate")?;
        print_summary(&report, path);
        rows.push(eval_csv_row(
            &report,
            &input.display().to_string(),
            &path.display().to_string(),
        ));
    }
    let eval_path = out_dir.join(format!("{stem}.eval.csv"));
    let mut csv = String::from(eval_csv_header());
    for row in &rows {
        csv.push('\n');
        csv.push_str(row);
    }
    csv.push('\n');
    std::fs::write(&eval_path, csv)
        .map_err(Error::from)
        .stage("write-eval")?;
    println!("wrote {}", eval_path.display());
    Ok(())
}

fn print_summary(report: &EvalReport, candidate: &Path) {
    println!(
        "{}: sc={:.6} sc_rel={:.6} lag={} scale={:.6}",
        candidate.display(),
        report.spectral_convergence,
        report.spectral_convergence_relative,
        report.alignment_lag,
        report.energy_scale
    );
}

fn cmd_evaluate(
    reference: &Path,
    candidate: &Path,
    max_lag: usize,
    config: &PipelineConfig,
) -> Result<(), StageError> {
    let ref_audio = read_wav(reference).stage("read-wav")?;
    let cand_audio = read_wav(candidate).stage("read-wav")?;
    let report =
        pipeline::evaluate_audio(&ref_audio, &cand_audio, config, max_lag).stage("evaluate")?;
    println!("{}", eval_csv_header());
    println!(
        "{}",
        eval_csv_row(
            &report,
            &reference.display().to_string(),
            &candidate.display().to_string()
        )
    );
    Ok(())
}
