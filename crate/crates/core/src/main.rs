use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use causalsum::checkpoint;
use causalsum::config::RunConfig;
use causalsum::eval::{segment_scores, select_summary, video_budget};
use causalsum::runner;
use causalsum::synth::{self, CorpusMode, SynthConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "causalsum", version, about = "Causal video summarization runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic intervention corpus
    Synth(SynthArgs),
    /// Train the causal model on a corpus
    Train(TrainArgs),
    /// Run the split protocol and effect estimation
    Eval(EvalArgs),
    /// Generate a summary for one video
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// single key=value override (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut run = RunConfig::default();
        if let Some(path) = &self.config {
            run.merge_file(path).map_err(CliError::usage)?;
        }
        for pair in &self.sets {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set needs KEY=VALUE, got '{pair}'")))?;
            run.set(k.trim(), v).map_err(CliError::usage)?;
        }
        run.validate().map_err(CliError::usage)?;
        Ok(run)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// output corpus directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    videos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = ["paper_protocol", "confounded"], default_value = "paper_protocol")]
    mode: String,
    /// overwrite an existing non-empty output directory
    #[arg(long)]
    force: bool,
    #[arg(long)]
    frames_min: Option<usize>,
    #[arg(long)]
    frames_max: Option<usize>,
    /// propensity sharpness (confounded mode)
    #[arg(long)]
    gamma: Option<f64>,
    /// structural treatment coefficient (confounded mode)
    #[arg(long)]
    c_effect: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// per-epoch metrics CSV output path
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// train a fresh model inside each split instead of using a checkpoint
    #[arg(long)]
    retrain_per_split: bool,
    /// also estimate the average treatment effect against the oracle
    #[arg(long)]
    ate: bool,
    /// metrics document output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    video: u32,
    #[arg(long)]
    budget_fraction: Option<f64>,
    /// write the per-frame score trace to this file
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Summarize(args) => cmd_summarize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.videos == 0 {
        return Err(CliError::Usage("--videos must be positive".into()));
    }
    if args.out.exists() && args.out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        if !args.force {
            return Err(CliError::Runtime(format!(
                "output directory {} is not empty (use --force to overwrite)",
                args.out.display()
            )));
        }
        std::fs::remove_dir_all(&args.out)?;
    }
    let mut cfg = SynthConfig {
        n_videos: args.videos,
        mode: match args.mode.as_str() {
            "confounded" => CorpusMode::Confounded,
            _ => CorpusMode::PaperProtocol,
        },
        ..SynthConfig::default()
    };
    if let Some(v) = args.frames_min {
        cfg.frames_min = v;
    }
    if let Some(v) = args.frames_max {
        cfg.frames_max = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.c_effect {
        cfg.c_effect = v;
    }
    cfg.validate().map_err(CliError::usage)?;

    let corpus = synth::generate_corpus(&cfg, args.seed)?;
    synth::save_corpus(&corpus, &args.out)?;
    println!(
        "wrote corpus: {} videos, {} labeled frames, seed {}",
        corpus.videos.len(),
        corpus.frame_records.len(),
        args.seed
    );
    if let Some(o) = corpus.oracle {
        println!("oracle_ate={} stderr={}", o.ate, o.stderr);
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let run = args.cfg.resolve()?;
    let corpus = synth::load_corpus(&args.corpus)?;
    let (model, metrics) = runner::train_on_corpus(&corpus, &run, None, run.seed)?;
    let meta = runner::checkpoint_meta(&run, &corpus);
    checkpoint::save(&args.out, &meta, &model.store)?;
    let csv = runner::metrics_csv(&metrics);
    if let Some(path) = &args.metrics {
        std::fs::write(path, &csv)?;
    } else {
        print!("{csv}");
    }
    println!(
        "trained {} epochs on {} examples; checkpoint {}",
        metrics.len(),
        runner::training_examples(&corpus, &run, None).len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let run = args.cfg.resolve()?;
    let corpus = synth::load_corpus(&args.corpus)?;
    if args.checkpoint.is_none() && !args.retrain_per_split {
        return Err(CliError::Usage(
            "need --checkpoint or --retrain-per-split".into(),
        ));
    }

    let mut doc = String::new();
    writeln!(doc, "seed={}", run.seed).unwrap();
    writeln!(doc, "splits={}", run.splits).unwrap();
    writeln!(doc, "budget_fraction={}", run.budget_fraction).unwrap();
    writeln!(doc, "seg_len={}", run.seg_len).unwrap();

    let (report, model) = if let Some(path) = &args.checkpoint {
        let ckpt = checkpoint::load(path)?;
        let mut model = runner::build_model(&ckpt.meta);
        ckpt.restore_into(&mut model.store)?;
        let report = runner::evaluate_with_model(&corpus, &model, &run)?;
        (report, Some(model))
    } else {
        (runner::evaluate_with_retraining(&corpus, &run)?, None)
    };
    doc.push_str(&runner::report_table(&report));

    if args.ate {
        let oracle = corpus.oracle.ok_or(runner::RunnerError::NoOracle)?;
        let model = match model {
            Some(m) => m,
            None => runner::train_on_corpus(&corpus, &run, None, run.seed)?.0,
        };
        let est = runner::estimate_corpus_effect(&model, &corpus, &run, 256, 8)?;
        writeln!(doc, "ate_estimate={est}").unwrap();
        writeln!(doc, "ate_oracle={}", oracle.ate).unwrap();
        writeln!(doc, "abs_error={}", (est - oracle.ate).abs()).unwrap();
    }

    match &args.out {
        Some(path) => std::fs::write(path, &doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let corpus = synth::load_corpus(&args.corpus)?;
    if args.video as usize >= corpus.videos.len() {
        return Err(CliError::Usage(format!(
            "video {} not in corpus of {} videos",
            args.video,
            corpus.videos.len()
        )));
    }
    let run = &ckpt.meta.run;
    let budget_fraction = args.budget_fraction.unwrap_or(run.budget_fraction);
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(CliError::Usage("--budget-fraction must lie in (0, 1]".into()));
    }
    if run.multimodal && corpus.videos[args.video as usize].query_tokens.is_empty() {
        return Err(CliError::Runtime(
            "checkpoint was trained multimodal but the video has no query tokens".into(),
        ));
    }

    let mut model = runner::build_model(&ckpt.meta);
    ckpt.restore_into(&mut model.store)?;
    let scores = runner::score_video(&model, &corpus, args.video)?;
    let seg = segment_scores(&scores, run.seg_len)?;
    let budget = video_budget(scores.len(), budget_fraction);
    let sel = select_summary(&seg, budget);

    println!(
        "video={} frames={} budget_frames={} selected_frames={}",
        args.video,
        scores.len(),
        budget,
        sel.total_selected_frames
    );
    let mut start = 0usize;
    for (i, (&count, &selected)) in seg.frame_counts.iter().zip(&sel.selected).enumerate() {
        println!(
            "segment {i}: frames {}..{} score {:.6} {}",
            start,
            start + count,
            seg.scores[i],
            if selected { "selected" } else { "discarded" }
        );
        start += count;
    }

    if let Some(path) = &args.trace {
        let trace: String = scores.iter().map(|s| format!("{s}\n")).collect();
        std::fs::write(path, trace)?;
    }
    Ok(())
}
