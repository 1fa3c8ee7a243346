use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsc_core::nn::NetworkCheckpoint;
use tsc_lab::artifacts::{self, RunCheckpoint, Variant};
use tsc_lab::config::OUT_ENV;
use tsc_lab::{report, CliError, CliResult, RunConfig};

/// Few-shot continual learning experiments.
///
/// Any configuration key can be given as a flag, e.g. `--tsc.beta 0.1`.
#[derive(Parser)]
#[command(name = "tsc-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// jt, st, mr, cp, ewc_m, mas_m, si_m or tsc.
    #[arg(long)]
    method: Option<String>,
    /// new-class or new-instance.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory (falls back to $TSC_LAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list, e.g. `0-9` or `1,3`.
    #[arg(long)]
    seeds: Option<String>,
    /// `key=value` override; dotted flags are rewritten to this.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the embedding on the support pool for every seed.
    Pretrain(Settings),
    /// Run one method over the stream for every seed.
    Run {
        #[command(flatten)]
        settings: Settings,
        /// Directory of pretrained `seed_<s>.json` checkpoints.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Continue from a run checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the cartesian product of `--grid key=v1,v2,...` axes.
    Sweep {
        #[command(flatten)]
        settings: Settings,
        #[arg(long, value_name = "KEY=V1,V2")]
        grid: Vec<String>,
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Aggregate run directories into summary tables.
    Report {
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of a network or run checkpoint.
    InspectCheckpoint { path: PathBuf },
}

/// Rewrites `--a.b value` and `--a.b=value` into `--set a.b=value`.
fn rewrite_dotted(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(arg) = it.next() {
        match arg.strip_prefix("--") {
            Some(flag) if flag.split('=').next().is_some_and(|k| k.contains('.')) => {
                out.push("--set".into());
                if flag.contains('=') {
                    out.push(flag.to_string());
                } else {
                    let value = it.next().unwrap_or_default();
                    out.push(format!("{flag}={value}"));
                }
            }
            _ => out.push(arg),
        }
    }
    out
}

fn resolve(settings: &Settings) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &settings.config {
        cfg.apply_file(path)?;
    }
    if let Ok(out) = std::env::var(OUT_ENV) {
        cfg.set("run.out", &out)?;
    }
    if let Some(m) = &settings.method {
        cfg.set("method", m)?;
    }
    if let Some(m) = &settings.mode {
        cfg.set("stream.mode", m)?;
    }
    if let Some(s) = &settings.seeds {
        cfg.set("run.seeds", s)?;
    }
    cfg.apply_assignments(&settings.set)?;
    if let Some(out) = &settings.out {
        cfg.run.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid_variants(base: &RunConfig, grid: &[String]) -> CliResult<Vec<Variant>> {
    let mut variants = vec![(Vec::<String>::new(), base.clone())];
    for axis in grid {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("grid axis must be key=v1,v2: `{axis}`")))?;
        let mut next = Vec::new();
        for (tags, cfg) in &variants {
            for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let mut c = cfg.clone();
                c.set(key, v)?;
                let mut t = tags.clone();
                t.push(format!("{key}={v}"));
                next.push((t, c));
            }
        }
        variants = next;
    }
    variants
        .into_iter()
        .map(|(tags, config)| {
            config.validate()?;
            let label = if tags.is_empty() {
                config.method_label()
            } else {
                format!("{}[{}]", config.method_label(), tags.join(";"))
            };
            Ok(Variant { label, config })
        })
        .collect()
}

fn summarize_outcome(out: &Path, outcome: &artifacts::Outcome) {
    println!("wrote {}", out.display());
    println!("runs completed: {}, failed: {}", outcome.runs.len(), outcome.failures.len());
    for f in &outcome.failures {
        eprintln!("seed {} ({}) failed: {}", f.seed, f.label, f.error);
    }
}

fn inspect(path: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(ckpt) = NetworkCheckpoint::from_json(&text) {
        let spec = &ckpt.spec;
        println!("network checkpoint");
        println!("input_dim = {}", spec.input_dim);
        println!("hidden = {:?}", spec.hidden_layers.iter().map(|h| h.width).collect::<Vec<_>>());
        println!("output_classes = {}", spec.output_classes);
        println!("parameters = {}", ckpt.values.len());
        println!("optimizer = {}", if ckpt.optimizer.is_some() { "present" } else { "none" });
        return Ok(());
    }
    let ckpt: RunCheckpoint = serde_json::from_str(&text)?;
    let s = &ckpt.state;
    println!("run checkpoint");
    println!("method = {}", s.label);
    println!("seed = {}", s.seed);
    println!("tasks completed = {}", s.next_task - 1);
    println!("replay examples = {}", s.replay.len());
    if let Some(r) = s.records.last() {
        println!("last a_top1 = {}", r.a_top1);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(settings) => {
            let cfg = resolve(&settings)?;
            let written = artifacts::pretrain_all(&cfg, &cfg.run.out)?;
            println!("wrote {} pretrained checkpoints to {}", written.len(), cfg.run.out.display());
        }
        Command::Run { settings, pretrained, resume } => {
            let cfg = resolve(&settings)?;
            let outcome = match resume {
                Some(ckpt) => artifacts::resume_experiment(&ckpt, &cfg.run.out)?,
                None => artifacts::run_experiment(&[Variant::single(cfg.clone())], &cfg.run.out, pretrained.as_deref())?,
            };
            summarize_outcome(&cfg.run.out, &outcome);
        }
        Command::Sweep { settings, grid, pretrained } => {
            let cfg = resolve(&settings)?;
            let variants = grid_variants(&cfg, &grid)?;
            let outcome = artifacts::run_experiment(&variants, &cfg.run.out, pretrained.as_deref())?;
            summarize_outcome(&cfg.run.out, &outcome);
        }
        Command::Report { runs, out } => {
            let rows = report::emit_report(&runs, &out)?;
            println!("wrote {} summary rows to {}", rows.len(), out.display());
        }
        Command::InspectCheckpoint { path } => inspect(&path)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse_from(rewrite_dotted(std::env::args()));
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(2)
        }
    }
}
