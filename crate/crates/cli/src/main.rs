//! `sem2` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sem2::envsim::Weather;
use sem2::pipeline::{self, RunConfig, Variant};
use sem2::replay::write_episode;

#[derive(Parser)]
#[command(name = "sem2", version, about = "Train and evaluate semantic-masked world-model driving agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Sem2,
    NoFilter,
    NoMultisource,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Sem2 => Variant::Sem2,
            VariantArg::NoFilter => Variant::NoFilter,
            VariantArg::NoMultisource => Variant::NoMultisource,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics and checkpoints.
    Train {
        /// TOML run config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base config used when no file is given or for keys it omits.
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Output directory.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// `key.path=value` override, repeatable. Applied after `SEM2_SET`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Greedy-policy returns of a checkpoint per weather.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// TOML file of `[[weather]]` tables; the clear and heavy presets when omitted.
        #[arg(long)]
        weathers: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Layout to evaluate on instead of the checkpoint's evaluation layout.
        #[arg(long)]
        layout: Option<String>,
        /// Also write one episode dump per weather into this directory.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
    },
    /// Render observation, mask and reconstruction panels for an episode dump.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        #[arg(long, default_value = "inspect")]
        out: PathBuf,
    },
    /// Draw PNG charts from a metrics file.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> sem2::Result<()> {
    match cli.command {
        Command::Train { config, preset, seed, variant, out, overrides } => {
            let base = match preset {
                Preset::Default => RunConfig::default(),
                Preset::Tiny => RunConfig::tiny(),
            };
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    let merged: Vec<String> = toml_assignments(&text)?;
                    base.with_overrides(&merged)?
                }
                None => base,
            };
            cfg = cfg.with_env_overrides()?.with_overrides(&overrides)?;
            if let Some(s) = seed {
                cfg.schedule.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            cfg.validate()?;
            let summary = pipeline::train(&cfg, &out)?;
            println!("env steps      {}", summary.env_step);
            println!("updates        {}", summary.global_step);
            println!("metrics        {}", summary.metrics.display());
            println!("final          {}", summary.final_checkpoint.display());
            if let (Some(p), Some(b)) = (&summary.best_checkpoint, summary.best_eval) {
                println!("best           {} (eval mean {b:.2})", p.display());
            }
        }
        Command::Evaluate { checkpoint, weathers, episodes, seed, layout, dump_dir } => {
            let weathers = match weathers {
                Some(p) => pipeline::load_weathers(&p)?,
                None => vec![Weather::clear(), Weather::heavy()],
            };
            let rows = pipeline::evaluate(&checkpoint, &weathers, episodes, seed, layout.as_deref())?;
            println!("{:<16} {:<12} {:>12} {:>10}", "weather", "layout", "mean", "ci95");
            for r in &rows {
                println!("{:<16} {:<12} {:>12.2} {:>10.2}", r.weather, r.layout, r.mean, r.ci95);
            }
            if let Some(dir) = dump_dir {
                std::fs::create_dir_all(&dir)?;
                let agent = pipeline::load_checkpoint(&checkpoint)?;
                let registry = pipeline::build_registry(&agent.config.env)?;
                let layout = layout.unwrap_or_else(|| agent.config.eval_layout().to_string());
                for w in &weathers {
                    let ep = pipeline::greedy_rollouts(&agent, registry.clone(), &layout, w, 1, seed)?.remove(0);
                    let path = dir.join(format!("{}.sem2ep", w.name));
                    write_episode(&path, &ep.episode)?;
                    println!("episode dump   {}", path.display());
                }
            }
        }
        Command::Inspect { checkpoint, episode, out } => {
            let report = pipeline::inspect(&checkpoint, &episode, &out)?;
            if let Some(n) = &report.notice {
                println!("note: {n}");
            }
            println!("panels         {} in {}", report.panels.len(), out.display());
            if let Some(acc) = report.mask_accuracy {
                println!("mask accuracy  {acc:.4}");
            }
        }
        Command::Plot { metrics, out } => {
            for p in pipeline::plot(&metrics, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Flattens a TOML document into `key.path=value` assignments so a partial
/// file can be layered over a preset.
fn toml_assignments(text: &str) -> sem2::Result<Vec<String>> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| sem2::Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    flatten("", &toml::Value::Table(doc), &mut out);
    Ok(out)
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix}={other}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
