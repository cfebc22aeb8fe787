use super::{argmax, with_scores, Policy, PolicyError, Pull, RoundGuard, TieBreak, UcbClock};
use crate::rng::DrawSource;

/// UCB-1 index `mean + sqrt(2 ln t / n)`; infinite for an unpulled arm.
#[inline]
pub fn ucb1_index(mean: f64, pulls: u64, time: f64) -> f64 {
    if pulls == 0 {
        f64::INFINITY
    } else {
        mean + (2.0 * time.ln() / pulls as f64).sqrt()
    }
}

/// Independent UCB-1 per player, using only the player's own observations.
#[derive(Debug, Clone)]
pub struct IndUcb {
    num_players: usize,
    num_arms: usize,
    clock: UcbClock,
    tie_break: TieBreak,
    counts: Vec<u64>,
    sums: Vec<f64>,
    activations: Vec<u64>,
    guard: RoundGuard,
}

impl IndUcb {
    pub fn new(num_players: usize, num_arms: usize, clock: UcbClock, tie_break: TieBreak) -> Self {
        Self {
            num_players,
            num_arms,
            clock,
            tie_break,
            counts: vec![0; num_players * num_arms],
            sums: vec![0.0; num_players * num_arms],
            activations: vec![0; num_players],
            guard: RoundGuard::new(num_players, num_arms),
        }
    }

    /// Times `player` has been active before the current round.
    pub fn activations(&self, player: usize) -> u64 {
        self.activations[player]
    }
}

impl Policy for IndUcb {
    fn name(&self) -> &'static str {
        "ind_ucb"
    }

    fn num_players(&self) -> usize {
        self.num_players
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn choose(&self, player: usize, round: u64, draws: &mut dyn DrawSource) -> usize {
        let time = match self.clock {
            UcbClock::PlayerLocal => self.activations[player] + 1,
            UcbClock::Global => round,
        } as f64;
        let base = player * self.num_arms;
        with_scores(self.num_arms, |scores| {
            for (i, s) in scores.iter_mut().enumerate() {
                let n = self.counts[base + i];
                let mean = if n == 0 { 0.0 } else { self.sums[base + i] / n as f64 };
                *s = ucb1_index(mean, n, time);
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
            self.activations[pull.player] += 1;
        }
        Ok(())
    }
}
