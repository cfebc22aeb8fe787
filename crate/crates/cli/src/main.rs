use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mpmab_core::experiment::{
    generate_all, run_sweep, run_validation, write_instances, write_sweep, ExperimentConfig,
    ExperimentError, Preset, ValidationConfig,
};
use mpmab_core::metrics::aggregate_runs;
use mpmab_core::validator::ValidatorError;

/// Multi-task bandit experiments: regret sweeps, instance generation and
/// concentration checks.
#[derive(Debug, Parser)]
#[command(name = "mpmab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a regret sweep and write summary.csv, instances, config and manifest.
    Run(CommonArgs),
    /// Run the Monte-Carlo concentration checks and write a JSON report.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of episodes per check.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Generate the sweep's instances without running any episode.
    GenInstances(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config; its keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = PresetArg::Paper)]
    preset: PresetArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Smoke,
    Analysis,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Smoke => Preset::Smoke,
            PresetArg::Analysis => Preset::Analysis,
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    /// Bad flags or configuration: exit 2.
    Usage(anyhow::Error),
    /// A check failed or the run could not complete: exit 1.
    Check(anyhow::Error),
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(err.into())
}

/// Overlays the keys of a JSON config file onto `base`.
fn overlay<T>(base: &T, path: Option<&Path>) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(base)?;
    if let Some(path) = path {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let serde_json::Value::Object(patch) = patch else {
            anyhow::bail!("{}: config must be a JSON object", path.display());
        };
        let map = value.as_object_mut().expect("configs serialize to objects");
        map.extend(patch);
    }
    serde_json::from_value(value).context("invalid configuration")
}

fn experiment_config(args: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = overlay(&ExperimentConfig::preset(args.preset.into()), args.config.as_deref())
        .map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.check().map_err(usage)?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn runtime(err: ExperimentError) -> Failure {
    match err {
        ExperimentError::Config(_) | ExperimentError::Instance { .. } => usage(err),
        other => Failure::Check(other.into()),
    }
}

fn cmd_run(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = experiment_config(args)?;
    let dir = out_dir(&cfg);
    let result = run_sweep(&cfg, args.workers).map_err(runtime)?;
    write_sweep(&dir, &cfg, &result).map_err(runtime)?;
    for &v in &cfg.v_values {
        for &alg in &cfg.algorithms {
            let agg = aggregate_runs(&result.select(v, alg)).map_err(|e| Failure::Check(e.into()))?;
            let fin = agg.final_regret();
            println!(
                "v={v:<2} {alg:<16} final regret {:>12.2} ± {:<10.2} (n={})",
                fin.mean, fin.stderr, agg.n
            );
        }
    }
    println!("wrote {} runs to {}", result.runs.len(), dir.display());
    Ok(())
}

fn cmd_gen_instances(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = experiment_config(args)?;
    let dir = out_dir(&cfg);
    let instances = generate_all(&cfg).map_err(runtime)?;
    write_instances(&dir, &instances).map_err(runtime)?;
    println!("wrote {} instances to {}", instances.len(), dir.join("instances").display());
    Ok(())
}

fn cmd_validate(args: &CommonArgs, episodes: Option<usize>) -> Result<(), Failure> {
    let mut base = ValidationConfig::default();
    if let PresetArg::Smoke = args.preset {
        base.horizon = 500;
        base.episodes = 200;
    }
    let mut cfg = overlay(&base, args.config.as_deref()).map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = episodes {
        cfg.episodes = n;
    }
    let reports = run_validation(&cfg, args.workers).map_err(|e| match e {
        ExperimentError::Validator(ValidatorError::Episode(_)) => runtime(e),
        ExperimentError::Validator(_) | ExperimentError::Env(_) | ExperimentError::Schedule(_) => {
            usage(e)
        }
        other => runtime(other),
    })?;
    for r in &reports {
        println!("{r}");
    }
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Check)?;
    let path = dir.join("validation.json");
    let mut text = serde_json::to_string_pretty(&reports).map_err(|e| Failure::Check(e.into()))?;
    text.push('\n');
    std::fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Check)?;
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} checks, {failed} failed; report at {}", reports.len(), path.display());
    if failed > 0 {
        return Err(Failure::Check(anyhow::anyhow!("{failed} concentration checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on malformed arguments.
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { common, episodes } => cmd_validate(common, *episodes),
        Command::GenInstances(args) => cmd_gen_instances(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}
