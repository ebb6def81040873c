//! Command-line entry point: one binary with subcommands that wire the
//! library into reproducible pipelines. Exit codes: 0 success, 2 usage
//! error (from argument parsing), 1 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::embeddings::{
    apply_silence_mask, extract_embeddings, load_embeddings, mask_from_segments, save_embeddings,
    ToyEmbedder, EMBEDDING_HOP_S,
};
use crate::error::{Error, Result};
use crate::metrics::{render_score_table, score_der_detailed, CorpusScore};
use crate::segments::{read_rttm, write_rttm, SegmentList};
use crate::simulate::{read_dataset, simulate_dataset, MixtureSpec};
use crate::trainer::{
    parse_config, train, Checkpoint, InferOptions, SpeakerCount, TrainConfig, VadGating,
};

#[derive(Parser)]
#[command(
    name = "eendfuse",
    version,
    about = "End-to-end neural speaker diarization with attractor decoding and speaker-embedding fusion",
    after_help = "File formats (RTTM, feature/embedding dumps, configs, manifests) are documented in FORMATS.md."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated 2-speaker conversation dataset (WAV + RTTM +
    /// manifest).
    Simulate(SimulateArgs),
    /// Extract per-frame speaker embeddings into .emb files.
    Embed(EmbedArgs),
    /// Train a model from scratch on a dataset directory.
    Train(TrainArgs),
    /// Finetune an existing checkpoint (attractor loss weight 0.1).
    Adapt(AdaptArgs),
    /// Run diarization and write an RTTM hypothesis.
    Infer(InferArgs),
    /// Score a hypothesis RTTM against a reference RTTM.
    Score(ScoreArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of mixtures to generate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    /// Target overlapped-speech fraction.
    #[arg(long, default_value_t = 0.344)]
    overlap: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Maximum mixture duration in seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Optional white-noise floor SNR in dB.
    #[arg(long)]
    snr_db: Option<f64>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Dataset directory (manifest.tsv layout).
    #[arg(long)]
    data: PathBuf,
    /// Where to write <id>.emb files (defaults to the dataset directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extraction window in seconds.
    #[arg(long, value_parser = ["1", "2", "3"])]
    window: String,
    /// Embedding provider.
    #[arg(long, default_value = "toy", value_parser = ["toy", "file"])]
    provider: String,
    /// Seed for the toy provider.
    #[arg(long, default_value_t = 4242)]
    seed: u64,
    /// Directory of existing .emb files (file provider only).
    #[arg(long)]
    emb_in: Option<PathBuf>,
    /// Zero embedding rows at silence using the reference RTTM.
    #[arg(long)]
    oracle_vad: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Flat key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Optional held-out dataset for validation frame-DER.
    #[arg(long)]
    val_data: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint stem (without extension) to initialize from.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    val_data: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint stem (without extension).
    #[arg(long)]
    ckpt: PathBuf,
    /// Single input WAV (mutually exclusive with --data).
    #[arg(long, conflicts_with = "data")]
    wav: Option<PathBuf>,
    /// Recording id for --wav (defaults to the file stem).
    #[arg(long)]
    id: Option<String>,
    /// Dataset directory to diarize.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output RTTM file for all hypotheses.
    #[arg(long)]
    out: PathBuf,
    /// VAD gating of the hypothesis.
    #[arg(long, default_value = "none", value_parser = ["none", "oracle", "energy"])]
    vad: String,
    /// Reference RTTM for oracle gating in --wav mode (dataset mode uses
    /// the per-recording RTTM files).
    #[arg(long)]
    r#ref: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 11)]
    median: usize,
    /// Speaker count: a number or "auto".
    #[arg(long, default_value = "2")]
    speakers: String,
    /// Directory for encoder-output dumps (one file per recording).
    #[arg(long)]
    dump_encodings: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference RTTM file or directory of .rttm files.
    #[arg(long)]
    r#ref: PathBuf,
    /// Hypothesis RTTM file or directory; repeat the flag to compare
    /// several system configurations side by side.
    #[arg(long, required = true)]
    hyp: Vec<PathBuf>,
    /// Collar in seconds excluded around reference boundaries.
    #[arg(long, default_value_t = 0.25)]
    collar: f64,
    /// Write a DER bar chart to this SVG file (per recording for a single
    /// hypothesis, per hypothesis when several are given).
    #[arg(long)]
    plot: Option<PathBuf>,
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Train(args) => cmd_train(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Score(args) => cmd_score(args),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = MixtureSpec::new(args.seed);
    spec.target_overlap = args.overlap;
    spec.max_duration_s = args.duration;
    spec.noise_snr_db = args.snr_db;
    let entries = simulate_dataset(&spec, args.count, &args.out)?;
    let mean_overlap = entries.iter().map(|e| e.overlap).sum::<f64>() / entries.len() as f64;
    println!(
        "wrote {} mixtures to {} (mean overlap {:.3})",
        entries.len(),
        args.out.display(),
        mean_overlap
    );
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> Result<()> {
    let entries = read_dataset(&args.data)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.data.clone());
    std::fs::create_dir_all(&out_dir)?;
    let window_s: f64 = args.window.parse().expect("validated by clap");

    for entry in &entries {
        let mut emb = match args.provider.as_str() {
            "toy" => {
                let audio = crate::audio::AudioSignal::read_wav(&entry.wav)?;
                let provider = ToyEmbedder::new(args.seed);
                extract_embeddings(&audio, &provider, window_s, EMBEDDING_HOP_S)?
            }
            "file" => {
                let dir = args.emb_in.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("--provider file requires --emb-in".into())
                })?;
                let emb = load_embeddings(dir.join(format!("{}.emb", entry.id)))?;
                if (emb.window_s() - window_s).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "{}: file window {}s does not match --window {}s",
                        entry.id,
                        emb.window_s(),
                        window_s
                    )));
                }
                emb
            }
            _ => unreachable!("validated by clap"),
        };
        if args.oracle_vad {
            let reference = read_rttm(&entry.rttm)?;
            let mask =
                mask_from_segments(&reference, &entry.id, emb.num_frames(), EMBEDDING_HOP_S);
            emb = apply_silence_mask(&emb, &mask)?;
        }
        save_embeddings(&emb, out_dir.join(format!("{}.emb", entry.id)))?;
    }
    println!("wrote {} embedding files to {}", entries.len(), out_dir.display());
    Ok(())
}

fn run_training(
    data: &Path,
    config: &Path,
    out: &Path,
    val_data: Option<&Path>,
    init: Option<&Path>,
    adapt: bool,
) -> Result<()> {
    let mut cfg: TrainConfig = parse_config(config)?;
    cfg.mode = if adapt { crate::losses::TrainMode::Adapt } else { crate::losses::TrainMode::Train };
    let entries = read_dataset(data)?;
    let val_entries = val_data.map(read_dataset).transpose()?;
    let outcome = train(&cfg, &entries, val_entries.as_deref(), init, out)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "finished {} epochs: loss {:.4}, val frame-DER {:.2}% -> {}",
        last.epoch,
        last.mean_loss,
        100.0 * last.val_der,
        outcome.final_stem.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    run_training(&args.data, &args.config, &args.out, args.val_data.as_deref(), None, false)
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    run_training(
        &args.data,
        &args.config,
        &args.out,
        args.val_data.as_deref(),
        Some(&args.init),
        true,
    )
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let speakers = match args.speakers.as_str() {
        "auto" => SpeakerCount::Auto,
        n => SpeakerCount::Fixed(n.parse().map_err(|_| {
            Error::InvalidArgument(format!("--speakers takes a number or 'auto', got {n}"))
        })?),
    };
    let opts = InferOptions {
        vad: VadGating::parse(&args.vad)?,
        threshold: args.threshold,
        median_window: args.median,
        speakers,
    };

    let mut all = SegmentList::default();
    match (&args.wav, &args.data) {
        (Some(wav), None) => {
            let id = args
                .id
                .clone()
                .or_else(|| wav.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .ok_or_else(|| Error::InvalidArgument("cannot derive recording id".into()))?;
            let report = ckpt.infer_wav(wav, &id, args.r#ref.as_deref(), &opts)?;
            if let Some(dir) = &args.dump_encodings {
                std::fs::create_dir_all(dir)?;
                ckpt.dump_encodings(wav, &dir.join(format!("{id}.enc")))?;
            }
            all.extend(report.segments);
        }
        (None, Some(data)) => {
            let entries = read_dataset(data)?;
            for entry in &entries {
                let reference = if opts.vad == VadGating::Oracle {
                    Some(entry.rttm.clone())
                } else {
                    None
                };
                let report =
                    ckpt.infer_wav(&entry.wav, &entry.id, reference.as_deref(), &opts)?;
                if let Some(dir) = &args.dump_encodings {
                    std::fs::create_dir_all(dir)?;
                    ckpt.dump_encodings(&entry.wav, &dir.join(format!("{}.enc", entry.id)))?;
                }
                all.extend(report.segments);
            }
        }
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of --wav or --data is required".into(),
            ))
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_rttm(&all, &args.out)?;
    println!("wrote {} segments to {}", all.len(), args.out.display());
    Ok(())
}

fn read_rttm_path(path: &Path) -> Result<SegmentList> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "rttm").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no .rttm files in {}",
                path.display()
            )));
        }
        let mut all = SegmentList::default();
        for f in files {
            all.extend(read_rttm(&f)?);
        }
        Ok(all)
    } else {
        read_rttm(path)
    }
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let reference = read_rttm_path(&args.r#ref)?;
    let mut scored: Vec<(String, CorpusScore)> = Vec::new();
    for hyp_path in &args.hyp {
        let hypothesis = read_rttm_path(hyp_path)?;
        let score = score_der_detailed(&reference, &hypothesis, args.collar)?;
        let label = hyp_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| hyp_path.display().to_string());
        if args.hyp.len() > 1 {
            println!("== {}", hyp_path.display());
        }
        print!("{}", render_score_table(&score));
        println!("corpus DER {:.2}%", 100.0 * score.totals.der);
        scored.push((label, score));
    }
    if let Some(plot) = &args.plot {
        let bars: Vec<(String, f64)> = if scored.len() == 1 {
            let (_, score) = &scored[0];
            let mut bars: Vec<(String, f64)> = score
                .per_recording
                .iter()
                .map(|r| (r.recording_id.clone(), 100.0 * r.breakdown.der))
                .collect();
            bars.push(("TOTAL".to_string(), 100.0 * score.totals.der));
            bars
        } else {
            scored.iter().map(|(label, s)| (label.clone(), 100.0 * s.totals.der)).collect()
        };
        write_der_svg(&bars, plot)?;
        println!("wrote plot to {}", plot.display());
    }
    Ok(())
}

/// Static DER bar chart: one bar per recording (plus the corpus total) or
/// one bar per compared hypothesis.
fn write_der_svg(bars: &[(String, f64)], path: &Path) -> Result<()> {
    let width = 80 + bars.len() * 60;
    let height = 320;
    let plot_h = 240.0;
    let max_der = bars.iter().map(|(_, d)| *d).fold(10.0f64, f64::max).min(200.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str("<text x=\"10\" y=\"20\">DER% (collar-scored)</text>\n");
    for (i, (name, der)) in bars.iter().enumerate() {
        let x = 50 + i * 60;
        let h = (der / max_der * plot_h).min(plot_h);
        let y = 40.0 + plot_h - h;
        let fill = if name == "TOTAL" { "#444444" } else { "#4878cf" };
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y:.1}\" width=\"40\" height=\"{h:.1}\" fill=\"{fill}\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{:.1}\">{:.1}</text>\n",
            y - 4.0,
            der
        ));
        let label: String = name.chars().take(8).collect();
        svg.push_str(&format!("<text x=\"{x}\" y=\"{}\">{label}</text>\n", 40.0 + plot_h + 16.0));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
