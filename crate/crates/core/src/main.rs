use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vidtag::dataset::SynthConfig;
use vidtag::metrics::MetricConfig;
use vidtag::orchestrator::{self, resolve_out_dir, EvalReport, RunConfig};
use vidtag::util::read_json;
use vidtag::{Error, Result};

#[derive(Parser)]
#[command(name = "vidtag", version, about = "Multi-label video-ad tagging with a stacking ensemble")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Worker threads for parallel training (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "VIDTAG_LOG", default_value = "info")]
    log_level: String,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth {
        /// Synthetic dataset config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score each base learner on its own.
    CompareModalities(RunArgs),
    /// Score stacked models over the feature-combination ladder.
    CompareCombinations(RunArgs),
    /// Score the stacked ensemble against the late-fusion baselines.
    CompareFusion(RunArgs),
    /// Fit a stacked model on all labeled samples and save it.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Bundle directory (defaults to `<out>/model`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write ranked top-k predictions as JSON lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        /// Output directory; predictions go to `predictions.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction file against a manifest's labels.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Metric config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_run(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    cfg.out_dir = resolve_out_dir(Path::new(&cfg.out_dir)).to_string_lossy().into_owned();
    Ok(cfg)
}

fn finish(report: &EvalReport, out: &Path) -> Result<()> {
    let path = report.write(out)?;
    for r in &report.rows {
        println!("{}\taccuracy={:.4}\tgap={:.4}", r.name, r.accuracy, r.gap);
    }
    log::info!("report written to {}", path.display());
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, seed, out } => {
            let cfg: SynthConfig = read_json(&config)?;
            let out = resolve_out_dir(&out);
            let manifest = orchestrator::cmd_synth(&cfg, seed, &out)?;
            println!("{} samples written to {}", manifest.sample_ids.len(), out.display());
            Ok(())
        }
        Command::CompareModalities(args) => {
            let cfg = load_run(&args)?;
            finish(&orchestrator::cmd_compare_modalities(&cfg)?, &cfg.out_path())
        }
        Command::CompareCombinations(args) => {
            let cfg = load_run(&args)?;
            finish(&orchestrator::cmd_compare_combinations(&cfg)?, &cfg.out_path())
        }
        Command::CompareFusion(args) => {
            let cfg = load_run(&args)?;
            finish(&orchestrator::cmd_compare_fusion(&cfg)?, &cfg.out_path())
        }
        Command::Train { run, model } => {
            let cfg = load_run(&run)?;
            let model = model.unwrap_or_else(|| cfg.out_path().join("model"));
            let report = orchestrator::cmd_train(&cfg, &model)?;
            log::info!("model saved to {}", model.display());
            finish(&report, &cfg.out_path())
        }
        Command::Predict { model, manifest, top_k, out } => {
            let out = resolve_out_dir(&out).join("predictions.jsonl");
            let n = orchestrator::cmd_predict(&model, &manifest, top_k, &out)?;
            println!("{n} predictions written to {}", out.display());
            Ok(())
        }
        Command::Score { predictions, manifest, config, out } => {
            let metric: MetricConfig = match config {
                Some(p) => read_json(&p)?,
                None => MetricConfig::default(),
            };
            let report = orchestrator::cmd_score(&predictions, &manifest, &metric)?;
            finish(&report, &resolve_out_dir(&out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.global.log_level).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {}", Error::Validation(format!("cannot configure {n} threads: {e}")));
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
