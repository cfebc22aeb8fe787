use super::{Policy, PolicyError, Pull, RoundGuard};
use crate::rng::DrawSource;

/// Picks an arm uniformly at random every time; used for concentration checks.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    num_players: usize,
    num_arms: usize,
    guard: RoundGuard,
}

impl UniformRandom {
    pub fn new(num_players: usize, num_arms: usize) -> Self {
        Self {
            num_players,
            num_arms,
            guard: RoundGuard::new(num_players, num_arms),
        }
    }
}

impl Policy for UniformRandom {
    fn name(&self) -> &'static str {
        "uniform_random"
    }

    fn num_players(&self) -> usize {
        self.num_players
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn choose(&self, _player: usize, _round: u64, draws: &mut dyn DrawSource) -> usize {
        ((draws.uniform() * self.num_arms as f64) as usize).min(self.num_arms - 1)
    }

    fn observe(&mut self, round: u64, pulls: &[Pull]) -> Result<(), PolicyError> {
        self.guard.check(round, pulls)
    }
}
