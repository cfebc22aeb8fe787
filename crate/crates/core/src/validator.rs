//! Monte-Carlo checks of the stopping-time concentration bounds and
//! structural checks of the delayed-update invariant on snapshot traces.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::MpmabInstance;
use crate::policies::{PairState, PolicyConfig, PolicyError};
use crate::protocol::{run_episode, EpisodeError, EpisodeOptions, RunTrace, Schedule};
use crate::rng::{derive_seed, Domain};

/// Number of binomial standard deviations allowed above δ.
pub const SLACK_SIGMAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("k = {k} exceeds the maximum number of pulls {max}")]
    KTooLarge { k: u64, max: u64 },
    #[error("arm {arm} out of range (K = {arms})")]
    ArmOutOfRange { arm: usize, arms: usize },
    #[error("player {player} out of range (M = {players})")]
    PlayerOutOfRange { player: usize, players: usize },
    #[error("delta {0} must lie in (0, 1)")]
    BadDelta(f64),
    #[error("at least one episode is required")]
    NoEpisodes,
    #[error("trace was recorded without policy snapshots")]
    NoSnapshots,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// Which deviation a check bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `μ_j^p - agg-μ̂_j(τ_k) ≤ r` for every player.
    Lower,
    /// `agg-μ̂_j(τ_k) - μ_j^p ≤ r + 2ε` for every player.
    Upper,
    /// `|ind-μ̂_i^p(π_k) - μ_i^p| ≤ sqrt(2 ln(4/δ) / (n ∨ 1))`.
    Individual,
}

/// Radius of the aggregate bound after `n` total pulls.
pub fn agg_radius(n: u64, num_players: usize, delta: f64, direction: Direction, epsilon: f64) -> f64 {
    let base = (2.0 * (2.0 / delta).ln() / (n as f64 - num_players as f64).max(1.0)).sqrt();
    match direction {
        Direction::Upper => base + 2.0 * epsilon,
        _ => base,
    }
}

/// Radius of the two-sided individual bound after `n` own pulls.
pub fn ind_radius(n: u64, delta: f64) -> f64 {
    (2.0 * (4.0 / delta).ln() / n.max(1) as f64).sqrt()
}

/// Outcome of one Monte-Carlo concentration check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcCheckReport {
    pub direction: Direction,
    pub arm: usize,
    /// Player for [`Direction::Individual`] checks.
    pub player: Option<usize>,
    pub k: u64,
    pub delta: f64,
    pub episodes: usize,
    pub violations: u64,
    pub rate: f64,
    /// `3·sqrt(δ(1-δ)/N)`.
    pub slack: f64,
    /// `δ + slack`, the largest passing rate.
    pub bound: f64,
    /// Episodes in which the stopping time was never reached.
    pub unreached: u64,
    /// Episodes where `n_j(τ_k)` fell outside `[k, k + M - 1]`.
    pub count_range_failures: u64,
    /// The slack exceeds δ itself, so N is too small to be informative.
    pub insufficient_n: bool,
    pub pass: bool,
}

impl ConcCheckReport {
    fn new(
        direction: Direction,
        arm: usize,
        player: Option<usize>,
        k: u64,
        delta: f64,
        episodes: usize,
        violations: u64,
        unreached: u64,
        count_range_failures: u64,
    ) -> Self {
        let rate = violations as f64 / episodes as f64;
        let slack = SLACK_SIGMAS * (delta * (1.0 - delta) / episodes as f64).sqrt();
        let bound = delta + slack;
        Self {
            direction,
            arm,
            player,
            k,
            delta,
            episodes,
            violations,
            rate,
            slack,
            bound,
            unreached,
            count_range_failures,
            insufficient_n: slack > delta,
            pass: rate <= bound && count_range_failures == 0,
        }
    }
}

impl fmt::Display for ConcCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} arm={} k={} delta={} rate={:.5} bound={:.5} {}{}",
            self.direction,
            self.arm + 1,
            self.k,
            self.delta,
            self.rate,
            self.bound,
            if self.pass { "PASS" } else { "FAIL" },
            if self.insufficient_n { " (insufficient N)" } else { "" }
        )
    }
}

/// Instance, schedule and policy shared by every episode of a check.
#[derive(Debug, Clone, Copy)]
pub struct ValidationSetup<'a> {
    pub instance: &'a MpmabInstance,
    pub schedule: &'a Schedule,
    pub policy: &'a PolicyConfig,
    pub episodes: usize,
    pub seed: u64,
}

impl ValidationSetup<'_> {
    fn check(&self) -> Result<(), ValidatorError> {
        if self.episodes == 0 {
            return Err(ValidatorError::NoEpisodes);
        }
        self.policy.check()?;
        Ok(())
    }

    fn check_arm(&self, arm: usize) -> Result<(), ValidatorError> {
        let arms = self.instance.num_arms();
        if arm >= arms {
            return Err(ValidatorError::ArmOutOfRange { arm, arms });
        }
        Ok(())
    }

    fn max_pulls(&self) -> u64 {
        (self.schedule.horizon() * self.instance.num_players()) as u64
    }

    fn episode(&self, e: usize) -> Result<RunTrace, ValidatorError> {
        let mut policy = self
            .policy
            .build(self.instance.num_players(), self.instance.num_arms())?;
        let seed = derive_seed(&[self.seed, Domain::Validation as u64, e as u64]);
        Ok(run_episode(
            self.instance,
            self.schedule,
            policy.as_mut(),
            seed,
            EpisodeOptions::default(),
        )?)
    }
}

fn check_delta(delta: f64) -> Result<(), ValidatorError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ValidatorError::BadDelta(delta));
    }
    Ok(())
}

/// Total count and reward sum of `arm` at the end of round `τ_k`, for each
/// `k` in `ks`; `None` when the k-th pull never happens.
fn arm_stats_at_tau(trace: &RunTrace, arm: usize, ks: &[u64]) -> Vec<Option<(u64, f64)>> {
    let mut out = vec![None; ks.len()];
    let (mut n, mut sum) = (0u64, 0.0f64);
    for (slot, &k) in out.iter_mut().zip(ks) {
        if k == 0 {
            *slot = Some((0, 0.0));
        }
    }
    for t in 1..=trace.horizon() {
        let before = n;
        for r in trace.round(t).filter(|r| r.arm == arm) {
            n += 1;
            sum += r.reward;
        }
        if n == before {
            continue;
        }
        for (slot, &k) in out.iter_mut().zip(ks) {
            if slot.is_none() && k <= n {
                *slot = Some((n, sum));
            }
        }
    }
    out
}

/// Runs `setup.episodes` episodes once and evaluates both aggregate
/// directions for every `(arm, k, δ)` combination on the same episodes.
pub fn run_agg_grid(
    setup: &ValidationSetup<'_>,
    arms: &[usize],
    ks: &[u64],
    deltas: &[f64],
) -> Result<Vec<ConcCheckReport>, ValidatorError> {
    setup.check()?;
    for &arm in arms {
        setup.check_arm(arm)?;
    }
    for &k in ks {
        if k > setup.max_pulls() {
            return Err(ValidatorError::KTooLarge {
                k,
                max: setup.max_pulls(),
            });
        }
    }
    for &d in deltas {
        check_delta(d)?;
    }

    let per_episode: Vec<Vec<Vec<Option<(u64, f64)>>>> = (0..setup.episodes)
        .into_par_iter()
        .map(|e| {
            let trace = setup.episode(e)?;
            Ok(arms.iter().map(|&a| arm_stats_at_tau(&trace, a, ks)).collect())
        })
        .collect::<Result<_, ValidatorError>>()?;

    let inst = setup.instance;
    let (m, eps) = (inst.num_players(), inst.epsilon());
    let mut reports = Vec::new();
    for (ai, &arm) in arms.iter().enumerate() {
        let (lo_mu, hi_mu) = (0..m)
            .map(|p| inst.mean(p, arm))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        for (ki, &k) in ks.iter().enumerate() {
            let outcomes: Vec<Option<(u64, f64)>> = per_episode.iter().map(|ep| ep[ai][ki]).collect();
            let unreached = outcomes.iter().filter(|o| o.is_none()).count() as u64;
            let range_failures = outcomes
                .iter()
                .flatten()
                .filter(|(n, _)| k > 0 && !(k..=k + m as u64 - 1).contains(n))
                .count() as u64;
            for &delta in deltas {
                for direction in [Direction::Lower, Direction::Upper] {
                    let violations = outcomes
                        .iter()
                        .flatten()
                        .filter(|&&(n, sum)| {
                            // Global estimate with the +ε offset.
                            let est = sum / n.max(1) as f64 + eps;
                            let r = agg_radius(n, m, delta, direction, eps);
                            match direction {
                                Direction::Lower => hi_mu - est > r,
                                _ => est - lo_mu > r,
                            }
                        })
                        .count() as u64;
                    reports.push(ConcCheckReport::new(
                        direction,
                        arm,
                        None,
                        k,
                        delta,
                        setup.episodes,
                        violations,
                        unreached,
                        range_failures,
                    ));
                }
            }
        }
    }
    Ok(reports)
}

/// One aggregate concentration check (Lower or Upper) for arm `arm` at `τ_k`.
pub fn check_agg_concentration(
    setup: &ValidationSetup<'_>,
    arm: usize,
    k: u64,
    delta: f64,
    direction: Direction,
) -> Result<ConcCheckReport, ValidatorError> {
    let reports = run_agg_grid(setup, &[arm], &[k], &[delta])?;
    Ok(reports
        .into_iter()
        .find(|r| r.direction == direction)
        .expect("grid reports both aggregate directions"))
}

/// Individual concentration check for `(arm, player)` at `π_k`.
pub fn check_ind_concentration(
    setup: &ValidationSetup<'_>,
    arm: usize,
    player: usize,
    k: u64,
    delta: f64,
) -> Result<ConcCheckReport, ValidatorError> {
    setup.check()?;
    setup.check_arm(arm)?;
    let players = setup.instance.num_players();
    if player >= players {
        return Err(ValidatorError::PlayerOutOfRange { player, players });
    }
    let max = setup.schedule.horizon() as u64;
    if k > max {
        return Err(ValidatorError::KTooLarge { k, max });
    }
    check_delta(delta)?;
    let mu = setup.instance.mean(player, arm);

    let outcomes: Vec<Option<(u64, f64)>> = (0..setup.episodes)
        .into_par_iter()
        .map(|e| {
            if k == 0 {
                return Ok(Some((0, 0.0)));
            }
            let trace = setup.episode(e)?;
            let (mut n, mut sum) = (0u64, 0.0);
            for r in trace.records().filter(|r| r.arm == arm && r.player == player) {
                n += 1;
                sum += r.reward;
                if n == k {
                    return Ok(Some((n, sum)));
                }
            }
            Ok(None)
        })
        .collect::<Result<_, ValidatorError>>()?;

    let unreached = outcomes.iter().filter(|o| o.is_none()).count() as u64;
    let violations = outcomes
        .iter()
        .flatten()
        .filter(|&&(n, sum)| (sum / n.max(1) as f64 - mu).abs() > ind_radius(n, delta))
        .count() as u64;
    Ok(ConcCheckReport::new(
        Direction::Individual,
        arm,
        Some(player),
        k,
        delta,
        setup.episodes,
        violations,
        unreached,
        0,
    ))
}

/// What went wrong for one (player, arm) pair at one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InvariantKind {
    /// A posterior parameter moved between two consecutive pulls.
    ParameterChanged { field: String },
    /// The stored aggregate count differs from `n_i` at the player's last pull.
    StaleCountMismatch { expected: u64, found: u64 },
    /// The stored own count differs from `n_i^p(t - 1)`.
    OwnCountMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantViolation {
    pub player: usize,
    pub arm: usize,
    /// 1-based round whose start-of-round state is inconsistent.
    pub round: usize,
    #[serde(flatten)]
    pub kind: InvariantKind,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "round {} player {} arm {}: {:?}",
            self.round,
            self.player + 1,
            self.arm + 1,
            self.kind
        )
    }
}

fn changed_field(a: &PairState, b: &PairState) -> Option<&'static str> {
    let same = |x: f64, y: f64| x.to_bits() == y.to_bits();
    if a.own_count != b.own_count {
        Some("own_count")
    } else if a.agg_count != b.agg_count {
        Some("agg_count")
    } else if !same(a.ind_mean, b.ind_mean) {
        Some("ind_mean")
    } else if !same(a.ind_var, b.ind_var) {
        Some("ind_var")
    } else if !same(a.agg_mean, b.agg_mean) {
        Some("agg_mean")
    } else if !same(a.agg_var, b.agg_var) {
        Some("agg_var")
    } else if a.individual != b.individual {
        Some("individual")
    } else {
        None
    }
}

/// Checks the delayed-update invariant on a snapshot trace: on every round in
/// `(π_{s-1}(i,p), π_s(i,p)]` the pair's posterior parameters, counts and
/// selection flag equal their values right after `π_{s-1}`; the stored
/// aggregate count equals `n_i` at the player's last pull; and the own count
/// equals `n_i^p(t - 1)`.
pub fn check_invariants_trace(trace: &RunTrace) -> Result<Vec<InvariantViolation>, ValidatorError> {
    if !trace.has_snapshots() {
        return Err(ValidatorError::NoSnapshots);
    }
    let (m, k) = (trace.num_players(), trace.num_arms());
    let mut reference: Vec<Option<PairState>> = vec![None; m * k];
    let mut own = vec![0u64; m * k];
    let mut arm_total = vec![0u64; k];
    // n_i at the pair's most recent pull.
    let mut at_last_pull = vec![0u64; m * k];
    let mut violations = Vec::new();

    for t in 1..=trace.horizon() {
        let states = trace.snapshot(t).expect("snapshots recorded every round");
        for (idx, state) in states.iter().enumerate() {
            let (player, arm) = (idx / k, idx % k);
            let mut report = |kind| {
                violations.push(InvariantViolation {
                    player,
                    arm,
                    round: t,
                    kind,
                })
            };
            if state.own_count != own[idx] {
                report(InvariantKind::OwnCountMismatch {
                    expected: own[idx],
                    found: state.own_count,
                });
            }
            if state.agg_count != at_last_pull[idx] {
                report(InvariantKind::StaleCountMismatch {
                    expected: at_last_pull[idx],
                    found: state.agg_count,
                });
            }
            match &reference[idx] {
                None => reference[idx] = Some(*state),
                Some(prev) => {
                    if let Some(field) = changed_field(prev, state) {
                        report(InvariantKind::ParameterChanged {
                            field: field.to_string(),
                        });
                        // Report each drift once, then track the new value.
                        reference[idx] = Some(*state);
                    }
                }
            }
        }
        let records: Vec<_> = trace.round(t).collect();
        for r in &records {
            own[r.player * k + r.arm] += 1;
            arm_total[r.arm] += 1;
        }
        for r in &records {
            let idx = r.player * k + r.arm;
            at_last_pull[idx] = arm_total[r.arm];
            reference[idx] = None;
        }
    }
    Ok(violations)
}

/// Checks that every snapshot's selection flag equals `n_i^p(t-1) ≥ threshold`.
pub fn check_selection_predicate(
    trace: &RunTrace,
    threshold: f64,
) -> Result<Vec<InvariantViolation>, ValidatorError> {
    if !trace.has_snapshots() {
        return Err(ValidatorError::NoSnapshots);
    }
    let k = trace.num_arms();
    let mut out = Vec::new();
    for t in 1..=trace.horizon() {
        for (idx, s) in trace.snapshot(t).expect("snapshots").iter().enumerate() {
            if s.individual != (s.own_count as f64 >= threshold) {
                out.push(InvariantViolation {
                    player: idx / k,
                    arm: idx % k,
                    round: t,
                    kind: InvariantKind::ParameterChanged {
                        field: "individual".into(),
                    },
                });
            }
        }
    }
    Ok(out)
}
