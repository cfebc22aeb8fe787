//! Experiment configuration, seeded sweeps, and on-disk artifacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{generate_instance, reporting_alpha, EnvError, GenerationParams, MpmabInstance};
use crate::metrics::{
    default_checkpoints, summarize_run, write_summary_csv, MetricsError, RegretKind, RunMeta,
    RunSummary, SummaryRow,
};
use crate::policies::{Algorithm, ConstantsPreset, PolicyConfig, PolicyError, TieBreak, UcbClock};
use crate::protocol::{
    make_schedule, run_episode, EpisodeError, EpisodeOptions, ScheduleError, ScheduleKind,
};
use crate::rng::{derive_seed, Domain};
use crate::validator::{run_agg_grid, ConcCheckReport, ValidationSetup, ValidatorError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("v = {v}, instance {index}: {source}")]
    Instance {
        v: usize,
        index: usize,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Validator(#[from] ValidatorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Named starting points for an [`ExperimentConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// M = 20, K = 10, ε = 0.15, T = 50 000, v ∈ 0..=9, 30 instances, four algorithms.
    Paper,
    /// Two players, two arms, 100 rounds, one instance, one algorithm.
    Smoke,
    /// The `Paper` setup with the constants used in the regret analysis.
    Analysis,
}

/// Full description of a regret sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_players: usize,
    pub num_arms: usize,
    pub epsilon: f64,
    pub horizon: usize,
    pub schedule: ScheduleKind,
    /// Target subpar counts `v`, each in `[0, K - 1]`.
    pub v_values: Vec<usize>,
    pub instances_per_v: usize,
    pub algorithms: Vec<Algorithm>,
    pub preset: ConstantsPreset,
    /// Overrides of the preset constants.
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub confidence_coef: Option<f64>,
    pub tie_break: TieBreak,
    pub ucb_clock: UcbClock,
    pub seed: u64,
    pub checkpoints: usize,
    pub regret_kind: RegretKind,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Paper)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = Self {
            num_players: 20,
            num_arms: 10,
            epsilon: 0.15,
            horizon: 50_000,
            schedule: ScheduleKind::Concurrent,
            v_values: (0..10).collect(),
            instances_per_v: 30,
            algorithms: Algorithm::HEADLINE.to_vec(),
            preset: ConstantsPreset::Experiment,
            c1: None,
            c2: None,
            confidence_coef: None,
            tie_break: TieBreak::LowestIndex,
            ucb_clock: UcbClock::PlayerLocal,
            seed: 0,
            checkpoints: crate::metrics::DEFAULT_CHECKPOINTS,
            regret_kind: RegretKind::Pseudo,
            out_dir: None,
        };
        match preset {
            Preset::Paper => paper,
            Preset::Analysis => Self {
                preset: ConstantsPreset::Analysis,
                ..paper
            },
            Preset::Smoke => Self {
                num_players: 2,
                num_arms: 2,
                horizon: 100,
                v_values: vec![1],
                instances_per_v: 1,
                algorithms: vec![Algorithm::RobustAggTs],
                ..paper
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.num_players == 0 || self.num_arms == 0 {
            return bad("num_players and num_arms must be positive".into());
        }
        if self.horizon == 0 && !matches!(self.schedule, ScheduleKind::FromFile { .. }) {
            return bad("horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if self.v_values.is_empty() || self.algorithms.is_empty() || self.instances_per_v == 0 {
            return bad("need at least one v value, algorithm and instance".into());
        }
        if let Some(&v) = self.v_values.iter().find(|&&v| v >= self.num_arms) {
            return bad(format!("v = {v} outside [0, {}]", self.num_arms - 1));
        }
        if self.checkpoints == 0 {
            return bad("checkpoints must be positive".into());
        }
        for &v in &self.v_values {
            self.generation(v).check_feasible()?;
        }
        self.policy(self.algorithms[0]).check()?;
        Ok(())
    }

    fn generation(&self, v: usize) -> GenerationParams {
        GenerationParams {
            num_players: self.num_players,
            num_arms: self.num_arms,
            epsilon: self.epsilon,
            target_subpar: v,
        }
    }

    pub fn policy(&self, algorithm: Algorithm) -> PolicyConfig {
        let mut cfg = PolicyConfig::with_preset(algorithm, self.horizon, self.epsilon, self.preset);
        cfg.c1 = self.c1.unwrap_or(cfg.c1);
        cfg.c2 = self.c2.unwrap_or(cfg.c2);
        cfg.confidence_coef = self.confidence_coef.unwrap_or(cfg.confidence_coef);
        cfg.tie_break = self.tie_break;
        cfg.ucb_clock = self.ucb_clock;
        cfg
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn instance_seed(&self, v: usize, index: usize) -> u64 {
        derive_seed(&[self.seed, Domain::Instance as u64, v as u64, index as u64])
    }

    pub fn schedule_seed(&self, v: usize, index: usize) -> u64 {
        derive_seed(&[self.seed, Domain::Schedule as u64, v as u64, index as u64])
    }

    /// Seed of one (v, instance, algorithm) run.
    pub fn run_seed(&self, v: usize, index: usize, algorithm: Algorithm) -> u64 {
        derive_seed(&[self.seed, v as u64, index as u64, algorithm.id()])
    }

    /// Every run of the sweep in a fixed order: v, then instance, then algorithm.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &v in &self.v_values {
            for index in 0..self.instances_per_v {
                for &algorithm in &self.algorithms {
                    out.push(RunSpec {
                        run_id: format!("v{v}-i{index:03}-{algorithm}"),
                        v,
                        instance_index: index,
                        algorithm,
                        instance_seed: self.instance_seed(v, index),
                        schedule_seed: self.schedule_seed(v, index),
                        run_seed: self.run_seed(v, index, algorithm),
                    });
                }
            }
        }
        out
    }

    /// Generates the `(v, index)` instance.
    pub fn instance(&self, v: usize, index: usize) -> Result<MpmabInstance, ExperimentError> {
        generate_instance(self.generation(v), self.instance_seed(v, index))
            .map_err(|source| ExperimentError::Instance { v, index, source })
    }
}

/// Identity and seeds of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub v: usize,
    pub instance_index: usize,
    pub algorithm: Algorithm,
    pub instance_seed: u64,
    pub schedule_seed: u64,
    pub run_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub spec: RunSpec,
    pub summary: RunSummary,
}

/// Runs one episode on `instance` and summarizes it.
pub fn execute_run(
    config: &ExperimentConfig,
    spec: &RunSpec,
    instance: &MpmabInstance,
) -> Result<RunSummary, ExperimentError> {
    let schedule = make_schedule(
        &config.schedule,
        config.num_players,
        config.horizon,
        spec.schedule_seed,
    )?;
    let mut policy_cfg = config.policy(spec.algorithm);
    policy_cfg.horizon = schedule.horizon();
    let mut policy = policy_cfg.build(instance.num_players(), instance.num_arms())?;
    let trace = run_episode(
        instance,
        &schedule,
        policy.as_mut(),
        spec.run_seed,
        EpisodeOptions::default(),
    )?;
    let gaps = instance.gaps();
    let subpar = gaps.subpar_set(reporting_alpha(instance.epsilon()));
    let checkpoints = default_checkpoints(trace.horizon(), config.checkpoints);
    Ok(summarize_run(&trace, &gaps, &subpar, &checkpoints, config.regret_kind)?)
}

/// Results of a sweep, in [`ExperimentConfig::runs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub instances: Vec<((usize, usize), MpmabInstance)>,
    pub runs: Vec<RunResult>,
}

impl SweepResult {
    pub fn rows(&self, config: &ExperimentConfig) -> Vec<SummaryRow> {
        let kind = config.schedule.label();
        self.runs
            .iter()
            .flat_map(|r| {
                r.summary.csv_rows(&RunMeta {
                    run_id: r.spec.run_id.clone(),
                    algorithm: r.spec.algorithm.to_string(),
                    instance_seed: r.spec.instance_seed,
                    schedule_kind: kind.clone(),
                    v_subpar: r.spec.v,
                })
            })
            .collect()
    }

    /// Summaries of `algorithm` at subpar count `v`.
    pub fn select(&self, v: usize, algorithm: Algorithm) -> Vec<RunSummary> {
        self.runs
            .iter()
            .filter(|r| r.spec.v == v && r.spec.algorithm == algorithm)
            .map(|r| r.summary.clone())
            .collect()
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n.max(1));
    }
    Ok(builder.build()?)
}

/// Generates every instance of the sweep.
pub fn generate_all(
    config: &ExperimentConfig,
) -> Result<Vec<((usize, usize), MpmabInstance)>, ExperimentError> {
    config.check()?;
    let keys: Vec<(usize, usize)> = config
        .v_values
        .iter()
        .flat_map(|&v| (0..config.instances_per_v).map(move |i| (v, i)))
        .collect();
    keys.into_par_iter()
        .map(|(v, i)| Ok(((v, i), config.instance(v, i)?)))
        .collect()
}

/// Runs the whole sweep on at most `workers` threads (all cores when `None`).
///
/// Runs are independent and results are collected in run order, so the
/// output does not depend on the worker count.
pub fn run_sweep(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<SweepResult, ExperimentError> {
    config.check()?;
    pool(workers)?.install(|| {
        let instances = generate_all(config)?;
        let runs = config.runs();
        let results = runs
            .into_par_iter()
            .map(|spec| {
                let per_v = config.instances_per_v;
                let pos = config.v_values.iter().position(|&v| v == spec.v).expect("v in config");
                let instance = &instances[pos * per_v + spec.instance_index].1;
                let summary = execute_run(config, &spec, instance)?;
                Ok(RunResult { spec, summary })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        Ok(SweepResult {
            instances,
            runs: results,
        })
    })
}

/// Manifest written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub runs: Vec<RunSpec>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn instance_file(v: usize, index: usize) -> String {
    format!("v{v}_i{index:03}.json")
}

/// Writes `instances/*.json` for every `(v, index)`.
pub fn write_instances(
    dir: &Path,
    instances: &[((usize, usize), MpmabInstance)],
) -> Result<(), ExperimentError> {
    let inst_dir = dir.join("instances");
    fs::create_dir_all(&inst_dir).map_err(io_err(&inst_dir))?;
    for ((v, i), inst) in instances {
        inst.save(&inst_dir.join(instance_file(*v, *i)))?;
    }
    Ok(())
}

/// Writes summary.csv, instances, config.json and manifest.json into `dir`.
pub fn write_sweep(
    dir: &Path,
    config: &ExperimentConfig,
    result: &SweepResult,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("summary.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_summary_csv(BufWriter::new(file), &result.rows(config))?;
    write_instances(dir, &result.instances)?;
    write_json(&dir.join("config.json"), config)?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            master_seed: config.seed,
            runs: result.runs.iter().map(|r| r.spec.clone()).collect(),
        },
    )
}

/// Grid of aggregate concentration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub num_players: usize,
    pub num_arms: usize,
    pub epsilon: f64,
    pub horizon: usize,
    /// Subpar count of the generated instance; ignored with `instance`.
    pub target_subpar: usize,
    /// Instance file to use instead of generating one.
    pub instance: Option<PathBuf>,
    pub schedule: ScheduleKind,
    pub algorithm: Algorithm,
    /// Arms to check, 0-based; all arms when empty.
    pub arms: Vec<usize>,
    pub ks: Vec<u64>,
    pub deltas: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            num_players: 5,
            num_arms: 3,
            epsilon: 0.1,
            horizon: 2000,
            target_subpar: 1,
            instance: None,
            schedule: ScheduleKind::Concurrent,
            algorithm: Algorithm::UniformRandom,
            arms: Vec::new(),
            ks: vec![1, 50, 200],
            deltas: vec![0.1, 0.05],
            episodes: 2000,
            seed: 0,
        }
    }
}

impl ValidationConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn instance(&self) -> Result<MpmabInstance, ExperimentError> {
        match &self.instance {
            Some(path) => Ok(MpmabInstance::load(path)?),
            None => Ok(generate_instance(
                GenerationParams {
                    num_players: self.num_players,
                    num_arms: self.num_arms,
                    epsilon: self.epsilon,
                    target_subpar: self.target_subpar,
                },
                derive_seed(&[self.seed, Domain::Instance as u64]),
            )?),
        }
    }
}

/// Runs every (arm, k, δ) check in both directions.
pub fn run_validation(
    config: &ValidationConfig,
    workers: Option<usize>,
) -> Result<Vec<ConcCheckReport>, ExperimentError> {
    let instance = config.instance()?;
    let schedule = make_schedule(
        &config.schedule,
        instance.num_players(),
        config.horizon,
        derive_seed(&[config.seed, Domain::Schedule as u64]),
    )?;
    let policy = PolicyConfig::new(config.algorithm, schedule.horizon(), instance.epsilon());
    let arms: Vec<usize> = if config.arms.is_empty() {
        (0..instance.num_arms()).collect()
    } else {
        config.arms.clone()
    };
    let setup = ValidationSetup {
        instance: &instance,
        schedule: &schedule,
        policy: &policy,
        episodes: config.episodes,
        seed: config.seed,
    };
    pool(workers)?.install(|| Ok(run_agg_grid(&setup, &arms, &config.ks, &config.deltas)?))
}
