use super::{argmax, with_scores, Policy, PolicyError, Pull, RoundGuard, TieBreak};
use crate::rng::DrawSource;

/// Independent Gaussian Thompson sampling per player, prior N(0, 1).
///
/// Posterior for (p, i) is `N(mean, 1 / (n ∨ 1))` with `mean` the player's
/// own empirical mean (0 before the first pull).
#[derive(Debug, Clone)]
pub struct IndTs {
    num_players: usize,
    num_arms: usize,
    tie_break: TieBreak,
    counts: Vec<u64>,
    sums: Vec<f64>,
    guard: RoundGuard,
}

impl IndTs {
    pub fn new(num_players: usize, num_arms: usize, tie_break: TieBreak) -> Self {
        Self {
            num_players,
            num_arms,
            tie_break,
            counts: vec![0; num_players * num_arms],
            sums: vec![0.0; num_players * num_arms],
            guard: RoundGuard::new(num_players, num_arms),
        }
    }

    /// Posterior `(mean, variance)` of `(player, arm)`.
    pub fn posterior(&self, player: usize, arm: usize) -> (f64, f64) {
        let idx = player * self.num_arms + arm;
        let n = self.counts[idx].max(1) as f64;
        (self.sums[idx] / n, 1.0 / n)
    }
}

impl Policy for IndTs {
    fn name(&self) -> &'static str {
        "ind_ts"
    }

    fn num_players(&self) -> usize {
        self.num_players
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn choose(&self, player: usize, _round: u64, draws: &mut dyn DrawSource) -> usize {
        with_scores(self.num_arms, |scores| {
            for (i, s) in scores.iter_mut().enumerate() {
                let (mean, var) = self.posterior(player, i);
                *s = mean + var.sqrt() * draws.std_normal();
            }
            argmax(scores, self.tie_break, draws)
        })
    }

    fn observe(&mut self, round: u64, pulls: &[Pull]) -> Result<(), PolicyError> {
        self.guard.check(round, pulls)?;
        for pull in pulls {
            let idx = pull.player * self.num_arms + pull.arm;
            self.counts[idx] += 1;
            self.sums[idx] += pull.reward;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::testing::zero;
    use crate::rng::{keyed_stream, Domain, StreamDraws};

    #[test]
    fn single_arm_always_chosen() {
        let policy = IndTs::new(1, 1, TieBreak::LowestIndex);
        let mut draws = StreamDraws(keyed_stream(1, Domain::Policy, 0, 0));
        assert!((0..100).all(|r| policy.choose(0, r, &mut draws) == 0));
    }

    #[test]
    fn frozen_draws_pick_highest_mean() {
        let mut policy = IndTs::new(1, 2, TieBreak::LowestIndex);
        policy.counts = vec![5, 5];
        policy.sums = vec![4.0, 1.5];
        assert_eq!(policy.choose(0, 11, &mut zero()), 0);
    }

    #[test]
    fn symmetric_arms_split_evenly() {
        let mut policy = IndTs::new(1, 2, TieBreak::LowestIndex);
        policy.counts = vec![10_000, 10_000];
        policy.sums = vec![5_000.0, 5_000.0];
        let mut draws = StreamDraws(keyed_stream(2, Domain::Policy, 0, 0));
        let n = 10_000;
        let first = (0..n).filter(|&r| policy.choose(0, r, &mut draws) == 0).count();
        let share = first as f64 / n as f64;
        assert!((share - 0.5).abs() <= 0.015, "share {share}");
    }

    #[test]
    fn prior_is_standard_normal() {
        let policy = IndTs::new(2, 3, TieBreak::LowestIndex);
        assert_eq!(policy.posterior(1, 2), (0.0, 1.0));
    }

    #[test]
    fn ignores_other_players() {
        let mut a = IndTs::new(2, 3, TieBreak::LowestIndex);
        let mut b = a.clone();
        let p = |player, arm, reward| Pull {
            player,
            arm,
            reward,
        };
        a.observe(1, &[p(0, 1, 1.0), p(1, 2, 1.0)]).unwrap();
        b.observe(1, &[p(0, 1, 1.0), p(1, 2, 0.0)]).unwrap();
        let mut da = StreamDraws(keyed_stream(3, Domain::Policy, 0, 0));
        let mut db = StreamDraws(keyed_stream(3, Domain::Policy, 0, 0));
        for r in 2..50 {
            assert_eq!(a.choose(0, r, &mut da), b.choose(0, r, &mut db));
        }
    }
}
