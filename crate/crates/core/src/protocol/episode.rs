use thiserror::Error;

use super::{RunTrace, Schedule};
use crate::env::MpmabInstance;
use crate::policies::{Policy, PolicyError, Pull};
use crate::rng::{Domain, RoundBlock};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("policy is sized for {policy_players} players x {policy_arms} arms, instance has {players} x {arms}")]
    PolicyShape {
        policy_players: usize,
        policy_arms: usize,
        players: usize,
        arms: usize,
    },
    #[error("schedule covers {schedule} players, instance has {instance}")]
    ScheduleShape { schedule: usize, instance: usize },
    #[error("round {round}: policy chose arm {arm} for player {player}, only {arms} arms exist")]
    ArmOutOfRange {
        round: usize,
        player: usize,
        arm: usize,
        arms: usize,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Order in which active players are asked for their decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlayerOrder {
    #[default]
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    /// Record the policy's posterior state at the start of every round.
    pub snapshots: bool,
    pub player_order: PlayerOrder,
}

/// Runs one episode: each round, every active player chooses from the
/// previous round's state, rewards are drawn, and all pulls are broadcast.
///
/// Player `p`'s randomness in round `t` comes from fixed offsets of the
/// `(seed, t)` streams, so the trace is a function of the inputs and `seed`
/// alone.
pub fn run_episode(
    instance: &MpmabInstance,
    schedule: &Schedule,
    policy: &mut dyn Policy,
    seed: u64,
    options: EpisodeOptions,
) -> Result<RunTrace, EpisodeError> {
    let (m, k) = (instance.num_players(), instance.num_arms());
    if policy.num_players() != m || policy.num_arms() != k {
        return Err(EpisodeError::PolicyShape {
            policy_players: policy.num_players(),
            policy_arms: policy.num_arms(),
            players: m,
            arms: k,
        });
    }
    if schedule.num_players() != m {
        return Err(EpisodeError::ScheduleShape {
            schedule: schedule.num_players(),
            instance: m,
        });
    }

    let horizon = schedule.horizon();
    let mut trace = RunTrace::with_capacity(m, k, horizon, schedule.total_activations());
    // K normal draws plus one tie-break uniform per player.
    let mut decision_draws = RoundBlock::new(m, k + 1);
    let mut reward_draws = RoundBlock::new(m, 1);
    let mut chosen = vec![0usize; m];
    let mut pulls: Vec<Pull> = Vec::with_capacity(m);

    for t in 1..=horizon {
        if options.snapshots {
            if let Some(states) = policy.snapshot() {
                trace.push_snapshot(&states);
            }
        }
        let active = schedule.active(t - 1);
        if active.is_empty() {
            policy.observe(t as u64, &[])?;
            trace.close_round();
            continue;
        }

        decision_draws.refill(seed, Domain::Policy, t as u64);
        let mut decide = |p: usize| -> Result<(), EpisodeError> {
            let arm = policy.choose(p, t as u64, &mut decision_draws.cursor(p));
            if arm >= k {
                return Err(EpisodeError::ArmOutOfRange {
                    round: t,
                    player: p,
                    arm,
                    arms: k,
                });
            }
            chosen[p] = arm;
            Ok(())
        };
        match options.player_order {
            PlayerOrder::Ascending => active.iter().try_for_each(|&p| decide(p as usize))?,
            PlayerOrder::Descending => active.iter().rev().try_for_each(|&p| decide(p as usize))?,
        }

        reward_draws.refill(seed, Domain::Reward, t as u64);
        pulls.clear();
        for &p in active {
            let p = p as usize;
            let arm = chosen[p];
            let reward = instance.sample_reward(p, arm, &mut reward_draws.cursor(p));
            trace.push(p, arm, reward);
            pulls.push(Pull {
                player: p,
                arm,
                reward,
            });
        }
        policy.observe(t as u64, &pulls)?;
        trace.close_round();
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{Algorithm, PolicyConfig};
    use crate::rng::DrawSource;

    fn instance() -> MpmabInstance {
        MpmabInstance::from_rows(0.1, &[vec![0.3, 0.8], vec![0.35, 0.75]]).unwrap()
    }

    #[test]
    fn single_arm_is_forced() {
        let inst = MpmabInstance::from_rows(0.0, &[vec![0.4], vec![0.4]]).unwrap();
        let schedule = Schedule::concurrent(2, 50);
        let mut policy = PolicyConfig::new(Algorithm::IndTs, 50, 0.0).build(2, 1).unwrap();
        let trace = run_episode(&inst, &schedule, policy.as_mut(), 1, EpisodeOptions::default()).unwrap();
        assert!(trace.records().all(|r| r.arm == 0));
        assert_eq!(trace.total_pulls(), 100);
    }

    #[test]
    fn empty_schedule_gives_empty_trace() {
        let schedule = Schedule::from_sets(2, &[]).unwrap();
        let mut policy = PolicyConfig::new(Algorithm::IndTs, 1, 0.1).build(2, 2).unwrap();
        let trace = run_episode(&instance(), &schedule, policy.as_mut(), 1, EpisodeOptions::default()).unwrap();
        assert_eq!(trace.horizon(), 0);
        assert!(trace.final_counts().iter().all(|&c| c == 0));
    }

    #[test]
    fn replay_is_identical() {
        let schedule = Schedule::concurrent(2, 100);
        let run = || {
            let mut policy = PolicyConfig::new(Algorithm::IndTs, 100, 0.1).build(2, 2).unwrap();
            run_episode(&instance(), &schedule, policy.as_mut(), 77, EpisodeOptions::default()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn records_exist_only_for_active_players() {
        let schedule = Schedule::from_sets(2, &[vec![1], vec![], vec![0, 1]]).unwrap();
        let mut policy = PolicyConfig::new(Algorithm::IndUcb, 3, 0.1).build(2, 2).unwrap();
        let trace = run_episode(&instance(), &schedule, policy.as_mut(), 3, EpisodeOptions::default()).unwrap();
        let players: Vec<Vec<usize>> = (1..=3).map(|t| trace.round(t).map(|r| r.player).collect()).collect();
        assert_eq!(players, vec![vec![1], vec![], vec![0, 1]]);
    }

    struct Broken;
    impl Policy for Broken {
        fn name(&self) -> &'static str {
            "broken"
        }
        fn num_players(&self) -> usize {
            2
        }
        fn num_arms(&self) -> usize {
            2
        }
        fn choose(&self, _: usize, _: u64, _: &mut dyn DrawSource) -> usize {
            5
        }
        fn observe(&mut self, _: u64, _: &[Pull]) -> Result<(), PolicyError> {
            Ok(())
        }
    }

    #[test]
    fn out_of_range_arm_aborts() {
        let schedule = Schedule::concurrent(2, 3);
        let err = run_episode(&instance(), &schedule, &mut Broken, 0, EpisodeOptions::default()).unwrap_err();
        assert!(matches!(err, EpisodeError::ArmOutOfRange { round: 1, arm: 5, .. }));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let schedule = Schedule::concurrent(3, 3);
        let mut policy = PolicyConfig::new(Algorithm::IndTs, 3, 0.1).build(2, 2).unwrap();
        assert!(matches!(
            run_episode(&instance(), &schedule, policy.as_mut(), 0, EpisodeOptions::default()),
            Err(EpisodeError::ScheduleShape { .. })
        ));
    }
}
