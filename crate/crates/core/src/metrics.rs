//! Regret trajectories, per-category breakdowns and cross-run statistics.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ArmCategory, GapTable, SubparSet};
use crate::protocol::RunTrace;

/// Default number of evenly spaced checkpoints.
pub const DEFAULT_CHECKPOINTS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("checkpoints must be sorted ascending and at most T = {horizon}")]
    BadCheckpoints { horizon: usize },
    #[error("cannot aggregate zero runs")]
    NoRuns,
    #[error("run {index} uses a different checkpoint grid")]
    MismatchedCheckpoints { index: usize },
    #[error("trace is {trace_players}x{trace_arms}, gap table is {gap_players}x{gap_arms}")]
    ShapeMismatch {
        trace_players: usize,
        trace_arms: usize,
        gap_players: usize,
        gap_arms: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What a single pull contributes to regret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretKind {
    /// `Δ_{i}^p`, the gap of the pulled arm.
    #[default]
    Pseudo,
    /// `μ*^p - r`, the best mean minus the observed reward.
    Realized,
}

/// `count` evenly spaced rounds in `1..=T`, always ending at `T`.
pub fn default_checkpoints(horizon: usize, count: usize) -> Vec<usize> {
    if horizon == 0 {
        return vec![0];
    }
    let count = count.clamp(1, horizon);
    let mut grid: Vec<usize> = (1..=count)
        .map(|j| (j * horizon).div_ceil(count))
        .collect();
    grid.dedup();
    grid
}

/// Pull counts and accumulated regret split by [`ArmCategory`]
/// (indexed by [`ArmCategory::index`]).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub pulls: [u64; 3],
    pub regret: [f64; 3],
}

impl CategoryBreakdown {
    pub fn total_pulls(&self) -> u64 {
        self.pulls.iter().sum()
    }

    pub fn total_regret(&self) -> f64 {
        self.regret.iter().sum()
    }

    /// Share of pulls per category; all zero when nothing was pulled.
    pub fn pull_fractions(&self) -> [f64; 3] {
        let total = self.total_pulls();
        if total == 0 {
            return [0.0; 3];
        }
        self.pulls.map(|c| c as f64 / total as f64)
    }

    pub fn get(&self, category: ArmCategory) -> (u64, f64) {
        (self.pulls[category.index()], self.regret[category.index()])
    }
}

/// Regret trajectory of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: RegretKind,
    pub checkpoints: Vec<usize>,
    /// Collective cumulative regret at each checkpoint.
    pub regret: Vec<f64>,
    /// Per-player cumulative regret, `[checkpoint][player]`.
    pub player_regret: Vec<Vec<f64>>,
    /// Cumulative category breakdown at each checkpoint.
    pub categories: Vec<CategoryBreakdown>,
    /// Total activations `P` of the schedule.
    pub total_activations: usize,
}

impl RunSummary {
    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_categories(&self) -> CategoryBreakdown {
        self.categories.last().copied().unwrap_or_default()
    }

    /// One CSV row per checkpoint.
    pub fn csv_rows(&self, meta: &RunMeta) -> Vec<SummaryRow> {
        self.checkpoints
            .iter()
            .zip(&self.regret)
            .zip(&self.categories)
            .map(|((&checkpoint, &regret_total), cat)| SummaryRow {
                run_id: meta.run_id.clone(),
                algorithm: meta.algorithm.clone(),
                instance_seed: meta.instance_seed,
                schedule_kind: meta.schedule_kind.clone(),
                v_subpar: meta.v_subpar,
                checkpoint,
                regret_total,
                regret_optimal: cat.regret[0],
                regret_nearopt: cat.regret[1],
                regret_subpar: cat.regret[2],
                pulls_optimal: cat.pulls[0],
                pulls_nearopt: cat.pulls[1],
                pulls_subpar: cat.pulls[2],
                p: self.total_activations,
            })
            .collect()
    }
}

/// Identifying columns attached to a run's CSV rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub run_id: String,
    pub algorithm: String,
    pub instance_seed: u64,
    pub schedule_kind: String,
    pub v_subpar: usize,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub algorithm: String,
    pub instance_seed: u64,
    pub schedule_kind: String,
    pub v_subpar: usize,
    pub checkpoint: usize,
    pub regret_total: f64,
    pub regret_optimal: f64,
    pub regret_nearopt: f64,
    pub regret_subpar: f64,
    pub pulls_optimal: u64,
    pub pulls_nearopt: u64,
    pub pulls_subpar: u64,
    #[serde(rename = "P")]
    pub p: usize,
}

pub fn write_summary_csv<W: io::Write>(writer: W, rows: &[SummaryRow]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .collect::<Result<Vec<SummaryRow>, _>>()
        .map_err(Into::into)
}

fn check_shape(trace: &RunTrace, gaps: &GapTable) -> Result<(), MetricsError> {
    if trace.num_players() != gaps.num_players() || trace.num_arms() != gaps.num_arms() {
        return Err(MetricsError::ShapeMismatch {
            trace_players: trace.num_players(),
            trace_arms: trace.num_arms(),
            gap_players: gaps.num_players(),
            gap_arms: gaps.num_arms(),
        });
    }
    Ok(())
}

fn check_checkpoints(checkpoints: &[usize], horizon: usize) -> Result<(), MetricsError> {
    let sorted = checkpoints.windows(2).all(|w| w[0] <= w[1]);
    if !sorted || checkpoints.last().is_some_and(|&c| c > horizon) {
        return Err(MetricsError::BadCheckpoints { horizon });
    }
    Ok(())
}

/// Neumaier-compensated running sum, so a million-term trajectory agrees
/// with the count-based form to well below 1e-9.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Walks the trace once, accumulating regret overall, per player and per
/// category, and records the running totals at each checkpoint.
pub fn summarize_run(
    trace: &RunTrace,
    gaps: &GapTable,
    subpar: &SubparSet,
    checkpoints: &[usize],
    kind: RegretKind,
) -> Result<RunSummary, MetricsError> {
    check_shape(trace, gaps)?;
    check_checkpoints(checkpoints, trace.horizon())?;
    let m = trace.num_players();
    let mut total = Compensated::default();
    let mut per_player = vec![Compensated::default(); m];
    let mut cat_pulls = [0u64; 3];
    let mut cat_regret = [Compensated::default(); 3];
    let mut summary = RunSummary {
        kind,
        checkpoints: checkpoints.to_vec(),
        regret: Vec::with_capacity(checkpoints.len()),
        player_regret: Vec::with_capacity(checkpoints.len()),
        categories: Vec::with_capacity(checkpoints.len()),
        total_activations: trace.total_pulls(),
    };

    let mut next = 0;
    let mut record = |summary: &mut RunSummary,
                      t: usize,
                      total: &Compensated,
                      per_player: &[Compensated],
                      cat_pulls: &[u64; 3],
                      cat_regret: &[Compensated; 3]| {
        while next < checkpoints.len() && checkpoints[next] == t {
            summary.regret.push(total.value());
            summary
                .player_regret
                .push(per_player.iter().map(Compensated::value).collect());
            summary.categories.push(CategoryBreakdown {
                pulls: *cat_pulls,
                regret: cat_regret.map(|c| c.value()),
            });
            next += 1;
        }
    };
    record(&mut summary, 0, &total, &per_player, &cat_pulls, &cat_regret);
    for t in 1..=trace.horizon() {
        for r in trace.round(t) {
            let term = match kind {
                RegretKind::Pseudo => gaps.gap(r.player, r.arm),
                RegretKind::Realized => gaps.best_mean(r.player) - r.reward,
            };
            let c = gaps.categorize(subpar, r.player, r.arm).index();
            total.add(term);
            per_player[r.player].add(term);
            cat_pulls[c] += 1;
            cat_regret[c].add(term);
        }
        record(&mut summary, t, &total, &per_player, &cat_pulls, &cat_regret);
    }
    Ok(summary)
}

/// Cumulative pseudo-regret at each checkpoint.
pub fn regret_trajectory(
    trace: &RunTrace,
    gaps: &GapTable,
    checkpoints: &[usize],
) -> Result<Vec<f64>, MetricsError> {
    let subpar = gaps.subpar_set(f64::INFINITY);
    Ok(summarize_run(trace, gaps, &subpar, checkpoints, RegretKind::Pseudo)?.regret)
}

/// Pulls and pseudo-regret of the whole trace, split by category.
pub fn category_breakdown(
    trace: &RunTrace,
    gaps: &GapTable,
    subpar: &SubparSet,
) -> Result<CategoryBreakdown, MetricsError> {
    let summary = summarize_run(trace, gaps, subpar, &[trace.horizon()], RegretKind::Pseudo)?;
    Ok(summary.final_categories())
}

/// `Σ_p Σ_i n_i^p(T) · Δ_i^p`, the count-based form of the pseudo-regret.
pub fn final_count_regret(trace: &RunTrace, gaps: &GapTable) -> Result<f64, MetricsError> {
    check_shape(trace, gaps)?;
    let k = trace.num_arms();
    Ok(trace
        .final_counts()
        .iter()
        .enumerate()
        .map(|(idx, &n)| n as f64 * gaps.gap(idx / k, idx % k))
        .sum())
}

/// Mean, sample standard deviation (n - 1 denominator) and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Stat {
    /// Spread terms are 0 for fewer than two samples.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self {
                mean,
                std: 0.0,
                stderr: 0.0,
            };
        }
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        Self {
            mean,
            std,
            stderr: std / (n as f64).sqrt(),
        }
    }
}

/// Elementwise statistics across runs sharing a checkpoint grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub checkpoints: Vec<usize>,
    pub regret: Vec<Stat>,
    /// `[checkpoint][category]` regret.
    pub category_regret: Vec<[Stat; 3]>,
    /// `[checkpoint][category]` share of pulls.
    pub category_pull_share: Vec<[Stat; 3]>,
}

impl Aggregate {
    pub fn final_regret(&self) -> Stat {
        self.regret.last().copied().unwrap_or_default()
    }

    pub fn final_category_regret(&self, category: ArmCategory) -> Stat {
        self.category_regret
            .last()
            .map(|c| c[category.index()])
            .unwrap_or_default()
    }
}

pub fn aggregate_runs(runs: &[RunSummary]) -> Result<Aggregate, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    if let Some(index) = runs.iter().position(|r| r.checkpoints != first.checkpoints) {
        return Err(MetricsError::MismatchedCheckpoints { index });
    }
    let column = |f: &dyn Fn(&RunSummary) -> f64| Stat::from_samples(&runs.iter().map(f).collect::<Vec<_>>());
    let points = first.checkpoints.len();
    let regret = (0..points).map(|c| column(&|r| r.regret[c])).collect();
    let category_regret = (0..points)
        .map(|c| std::array::from_fn(|j| column(&|r| r.categories[c].regret[j])))
        .collect();
    let category_pull_share = (0..points)
        .map(|c| std::array::from_fn(|j| column(&|r| r.categories[c].pull_fractions()[j])))
        .collect();
    Ok(Aggregate {
        n: runs.len(),
        checkpoints: first.checkpoints.clone(),
        regret,
        category_regret,
        category_pull_share,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MpmabInstance;

    fn paired() -> (MpmabInstance, GapTable) {
        let inst =
            MpmabInstance::from_rows(0.1, &[vec![0.9, 0.6, 0.2], vec![0.85, 0.62, 0.25]]).unwrap();
        let gaps = inst.gaps();
        (inst, gaps)
    }

    #[test]
    fn grid_ends_at_horizon() {
        assert_eq!(default_checkpoints(1000, 100).len(), 100);
        assert_eq!(default_checkpoints(1000, 100)[0], 10);
        assert_eq!(*default_checkpoints(1234, 100).last().unwrap(), 1234);
        assert_eq!(default_checkpoints(5, 100), vec![1, 2, 3, 4, 5]);
        assert_eq!(default_checkpoints(0, 100), vec![0]);
    }

    #[test]
    fn optimal_pulls_have_no_regret() {
        let (_, gaps) = paired();
        let trace = RunTrace::from_rounds(2, 3, &vec![vec![(0, 0, 1.0), (1, 0, 1.0)]; 5]);
        let subpar = gaps.subpar_set(0.5);
        let s = summarize_run(&trace, &gaps, &subpar, &[1, 3, 5], RegretKind::Pseudo).unwrap();
        assert_eq!(s.regret, vec![0.0; 3]);
        assert_eq!(s.final_categories().pull_fractions(), [1.0, 0.0, 0.0]);
        assert_eq!(s.final_categories().regret, [0.0; 3]);
    }

    #[test]
    fn linear_accumulation() {
        let inst = MpmabInstance::from_rows(0.0, &[vec![0.5, 0.2]]).unwrap();
        let gaps = inst.gaps();
        let trace = RunTrace::from_rounds(1, 2, &vec![vec![(0, 1, 0.0)]; 10]);
        let r = regret_trajectory(&trace, &gaps, &[10]).unwrap();
        assert!((r[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_concurrent_trace_matches_hand_sum() {
        let (_, gaps) = paired();
        let rounds = vec![
            vec![(0, 1, 1.0), (1, 2, 0.0)],
            vec![(0, 0, 1.0), (1, 1, 1.0)],
            vec![(0, 2, 0.0), (1, 0, 1.0)],
        ];
        let trace = RunTrace::from_rounds(2, 3, &rounds);
        let subpar = gaps.subpar_set(0.5);
        let s = summarize_run(&trace, &gaps, &subpar, &[1, 2, 3], RegretKind::Pseudo).unwrap();
        let hand = [0.3 + 0.6, 0.3 + 0.6 + 0.23, 0.3 + 0.6 + 0.23 + 0.7];
        for (got, want) in s.regret.iter().zip(hand) {
            assert!((got - want).abs() < 1e-12);
        }
        // Per-player regrets sum to the collective total on a concurrent schedule.
        let last = s.player_regret.last().unwrap();
        assert!((last.iter().sum::<f64>() - s.final_regret()).abs() < 1e-12);
        assert!((final_count_regret(&trace, &gaps).unwrap() - s.final_regret()).abs() < 1e-12);
        // Arm 3 is subpar, arm 2 near-optimal for both players at α = 0.5.
        let c = s.final_categories();
        assert_eq!(c.pulls, [2, 2, 2]);
        assert!((c.regret[2] - 1.3).abs() < 1e-12);
        assert!((c.regret[1] - 0.53).abs() < 1e-12);
    }

    #[test]
    fn subpar_only_trace() {
        let (_, gaps) = paired();
        let trace = RunTrace::from_rounds(2, 3, &vec![vec![(0, 2, 0.0)]; 4]);
        let c = category_breakdown(&trace, &gaps, &gaps.subpar_set(0.5)).unwrap();
        assert_eq!(c.pull_fractions(), [0.0, 0.0, 1.0]);
        assert_eq!(c.regret[2], c.total_regret());
    }

    #[test]
    fn realized_regret_uses_rewards() {
        let inst = MpmabInstance::from_rows(0.0, &[vec![0.5, 0.2]]).unwrap();
        let gaps = inst.gaps();
        let trace = RunTrace::from_rounds(1, 2, &[vec![(0, 1, 1.0)], vec![(0, 0, 0.0)]]);
        let s = summarize_run(&trace, &gaps, &gaps.subpar_set(1.0), &[2], RegretKind::Realized).unwrap();
        assert!((s.final_regret() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn bad_checkpoints_rejected() {
        let (_, gaps) = paired();
        let trace = RunTrace::from_rounds(2, 3, &[vec![]]);
        let sub = gaps.subpar_set(0.5);
        assert!(summarize_run(&trace, &gaps, &sub, &[2], RegretKind::Pseudo).is_err());
        assert!(summarize_run(&trace, &gaps, &sub, &[1, 0], RegretKind::Pseudo).is_err());
    }

    fn with_final(regret: f64) -> RunSummary {
        RunSummary {
            kind: RegretKind::Pseudo,
            checkpoints: vec![10],
            regret: vec![regret],
            player_regret: vec![vec![regret]],
            categories: vec![CategoryBreakdown {
                pulls: [1, 1, 0],
                regret: [0.0, regret, 0.0],
            }],
            total_activations: 10,
        }
    }

    #[test]
    fn aggregate_statistics() {
        let one = aggregate_runs(&[with_final(7.0)]).unwrap();
        assert_eq!(one.final_regret(), Stat { mean: 7.0, std: 0.0, stderr: 0.0 });
        let twins = aggregate_runs(&[with_final(4.0), with_final(4.0)]).unwrap();
        assert_eq!(twins.final_regret().std, 0.0);
        let three = aggregate_runs(&[with_final(10.0), with_final(20.0), with_final(30.0)]).unwrap();
        let s = three.final_regret();
        assert_eq!(s.mean, 20.0);
        assert!((s.std - 10.0).abs() < 1e-12);
        assert!((s.stderr - 10.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(three.category_pull_share[0][1].mean, 0.5);
        assert_eq!(three.n, 3);
    }

    #[test]
    fn aggregate_rejects_mismatched_grids() {
        let mut other = with_final(1.0);
        other.checkpoints = vec![11];
        assert!(matches!(
            aggregate_runs(&[with_final(1.0), other]),
            Err(MetricsError::MismatchedCheckpoints { index: 1 })
        ));
        assert!(matches!(aggregate_runs(&[]), Err(MetricsError::NoRuns)));
    }

    #[test]
    fn csv_round_trip() {
        let (_, gaps) = paired();
        let trace = RunTrace::from_rounds(2, 3, &[vec![(0, 1, 1.0), (1, 2, 0.0)]]);
        let s = summarize_run(&trace, &gaps, &gaps.subpar_set(0.5), &[1], RegretKind::Pseudo).unwrap();
        let meta = RunMeta {
            run_id: "r0".into(),
            algorithm: "ind_ts".into(),
            instance_seed: 9,
            schedule_kind: "concurrent".into(),
            v_subpar: 1,
        };
        let rows = s.csv_rows(&meta);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        write_summary_csv(std::fs::File::create(&path).unwrap(), &rows).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(
            "run_id,algorithm,instance_seed,schedule_kind,v_subpar,checkpoint,regret_total,\
             regret_optimal,regret_nearopt,regret_subpar,pulls_optimal,pulls_nearopt,pulls_subpar,P\n"
        ));
        assert_eq!(read_summary_csv(&path).unwrap(), rows);
    }
}
