//! Command-line front end: `generate | train | distill | evaluate | ablate | report`.
//!
//! Exit codes: 0 success, 1 validation or configuration error, 2 I/O error,
//! 3 numeric failure.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_ablate, cmd_distill, cmd_evaluate, cmd_generate, cmd_train, Grid, RunOptions};
pub use config::ExperimentConfig;

use crate::error::Result;
use crate::network::parse_modalities;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MASKDISTILL_OUT";

#[derive(Debug, Parser)]
#[command(name = "maskdistill", version, about = "Masked multimodal training and speech-only distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML); defaults apply to anything not set.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory [default: $MASKDISTILL_OUT/<command> or runs/<command>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the generator seed (generate) or the initialisation seed (training).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Number of seeds to run; seeds are offset by the repeat index.
    #[arg(long, value_name = "K", default_value_t = 1)]
    repeats: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic train/val/test splits.
    Generate(Common),
    /// Train one model (baseline or masked) and report both inference settings.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory, overriding `data_dir` in the config.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Distill an audio-only student from a trained teacher checkpoint.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        teacher: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// `audio` or `audio,video`.
        #[arg(long, default_value = "audio,video")]
        modalities: String,
    },
    /// Run ablation grids: depth, masking, disjoint (comma separated) or all.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        grid: String,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Render every report under a directory as markdown tables.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(common: &Common, verb: &str) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(verb)
}

fn load_config(common: &Common, data: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = data {
        cfg.data_dir = Some(dir.to_path_buf());
    }
    Ok(cfg)
}

fn options(common: &Common, verb: &str) -> RunOptions {
    RunOptions {
        out: out_dir(common, verb),
        force: common.force,
        repeats: common.repeats,
    }
}

fn with_init_seed(mut cfg: ExperimentConfig, seed: Option<u64>) -> Result<ExperimentConfig> {
    if let Some(s) = seed {
        cfg.seeds.init = s;
        cfg.model.seed = 0;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(common) => {
            let mut cfg = load_config(&common, None)?;
            if let Some(s) = common.seed {
                cfg.synth.seed = s;
            }
            let summary = cmd_generate(&cfg, &out_dir(&common, "generate"), common.force)?;
            Ok(summary.render())
        }
        Command::Train { common, data } => {
            let cfg = with_init_seed(load_config(&common, data.as_deref())?, common.seed)?;
            let opts = options(&common, "train");
            let reports = cmd_train(&cfg, &opts)?;
            let tables: Vec<String> = reports.iter().map(report::render_train).collect();
            Ok(format!("{}\nwrote {}\n", tables.join("\n"), opts.out.display()))
        }
        Command::Distill { common, teacher, data } => {
            let cfg = with_init_seed(load_config(&common, data.as_deref())?, common.seed)?;
            let opts = options(&common, "distill");
            let r = cmd_distill(&cfg, &teacher, &opts)?;
            Ok(format!("{}\nwrote {}\n", report::render_distill(&r), opts.out.display()))
        }
        Command::Evaluate {
            common,
            checkpoint,
            dataset,
            modalities,
        } => {
            let modalities = parse_modalities(&modalities)?;
            let opts = options(&common, "evaluate");
            let r = cmd_evaluate(&checkpoint, &dataset, &modalities, &opts)?;
            Ok(format!(
                "weighted F1 ({}): {:.4}\nwrote {}\n",
                r.modalities.join("+"),
                r.metrics.weighted_f1,
                opts.out.display()
            ))
        }
        Command::Ablate { common, grid, data } => {
            let grids = Grid::parse_list(&grid)?;
            let cfg = with_init_seed(load_config(&common, data.as_deref())?, common.seed)?;
            let opts = options(&common, "ablate");
            let r = cmd_ablate(&cfg, &grids, &opts)?;
            let md: Vec<String> = r.tables.iter().map(report::Table::to_markdown).collect();
            Ok(format!("{}\nwrote {}\n", md.join("\n"), opts.out.display()))
        }
        Command::Report { common } => {
            let dir = common.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| "runs".into());
            report::render_dir(&dir)
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}
