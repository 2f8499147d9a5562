//! `eegd3`: synthesize, pretrain, interpret and probe.
//!
//! Every command writes into `--out` and leaves a `run.json` there with the
//! resolved config, its hash, the seed and the git revision.

mod commands;
mod config;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use run::Run;

#[derive(Parser)]
#[command(name = "eegd3", version, about = "Disentangled decoding decomposition for multichannel EEG")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Restrict to one cross-validation fold.
    #[arg(long, global = true)]
    fold: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic store (motor scene or sleep nights).
    Synth,
    /// Pretrain one checkpoint per fold on the time-bin task.
    Pretrain,
    /// Filter responses, topographies, timecourses and significance tests.
    Interpret {
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Timecourse consistency per component and condition.
    Consistency {
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Two-component motor probe on frozen latents.
    Downstream {
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Few-shot sleep probe across label budgets.
    Fewshot {
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Blink reconstruction from the bandpassed frontal channel.
    Blinkprobe,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Synth => "synth",
            Cmd::Pretrain => "pretrain",
            Cmd::Interpret { .. } => "interpret",
            Cmd::Consistency { .. } => "consistency",
            Cmd::Downstream { .. } => "downstream",
            Cmd::Fewshot { .. } => "fewshot",
            Cmd::Blinkprobe => "blinkprobe",
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global().context("starting worker pool")?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let out = cfg.out.clone().context("no output directory: pass --out or set `out` in the config")?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let run = Run { command: cli.command.name(), cfg, out, fold: cli.fold };
    match &cli.command {
        Cmd::Synth => commands::synth(&run),
        Cmd::Pretrain => commands::pretrain(&run),
        Cmd::Interpret { checkpoints } => commands::interpret(&run, checkpoints),
        Cmd::Consistency { checkpoints } => commands::consistency(&run, checkpoints),
        Cmd::Downstream { checkpoints } => commands::downstream(&run, checkpoints),
        Cmd::Fewshot { checkpoints } => commands::fewshot(&run, checkpoints),
        Cmd::Blinkprobe => commands::blinkprobe(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.name();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({
                "command": command,
                "error": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{report}");
            ExitCode::from(2)
        }
    }
}
