use super::{
    argmax, with_scores, PairState, Policy, PolicyConfig, PolicyError, Pull, RoundGuard, TieBreak,
};
use crate::rng::DrawSource;

/// When a (player, arm) pair's aggregate posterior is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Only when the player pulls the arm.
    Delayed,
    /// Every round, for every player and arm.
    Eager,
}

/// Own-pull count from which the individual posterior is used:
/// `c1 ln T / ε² + 2M`, or +∞ when ε = 0.
pub fn switch_threshold(c1: f64, horizon: usize, epsilon: f64, num_players: usize) -> f64 {
    if epsilon == 0.0 {
        return f64::INFINITY;
    }
    c1 * (horizon as f64).ln() / (epsilon * epsilon) + 2.0 * num_players as f64
}

/// Thompson sampling that switches per (player, arm) between an aggregate
/// posterior over every player's data and an individual posterior.
///
/// The aggregate mean carries an optimistic `+ε` offset and its variance
/// discounts `M` samples: `N(sum_i / (n_i ∨ 1) + ε, c2 / ((n_i - M) ∨ 1))`.
/// The individual posterior is `N(own mean, c2 / (n_i^p ∨ 1))`, used once the
/// player's own count reaches [`switch_threshold`].
#[derive(Debug, Clone)]
pub struct RobustAggTs {
    num_players: usize,
    num_arms: usize,
    epsilon: f64,
    c2: f64,
    threshold: f64,
    mode: UpdateMode,
    tie_break: TieBreak,
    own_count: Vec<u64>,
    own_sum: Vec<f64>,
    ind_mean: Vec<f64>,
    ind_var: Vec<f64>,
    agg_mean: Vec<f64>,
    agg_var: Vec<f64>,
    agg_count: Vec<u64>,
    arm_count: Vec<u64>,
    arm_sum: Vec<f64>,
    guard: RoundGuard,
}

impl RobustAggTs {
    pub fn new(
        num_players: usize,
        num_arms: usize,
        config: &PolicyConfig,
        mode: UpdateMode,
    ) -> Self {
        let pairs = num_players * num_arms;
        Self {
            num_players,
            num_arms,
            epsilon: config.epsilon,
            c2: config.c2,
            threshold: switch_threshold(config.c1, config.horizon, config.epsilon, num_players),
            mode,
            tie_break: config.tie_break,
            own_count: vec![0; pairs],
            own_sum: vec![0.0; pairs],
            ind_mean: vec![0.0; pairs],
            ind_var: vec![config.c2; pairs],
            // The initial aggregate mean is 0, without the ε offset.
            agg_mean: vec![0.0; pairs],
            agg_var: vec![config.c2; pairs],
            agg_count: vec![0; pairs],
            arm_count: vec![0; num_arms],
            arm_sum: vec![0.0; num_arms],
            guard: RoundGuard::new(num_players, num_arms),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    /// Total pulls of `arm` by all players.
    pub fn arm_count(&self, arm: usize) -> u64 {
        self.arm_count[arm]
    }

    pub fn pair(&self, player: usize, arm: usize) -> PairState {
        let idx = player * self.num_arms + arm;
        PairState {
            own_count: self.own_count[idx],
            agg_count: self.agg_count[idx],
            ind_mean: self.ind_mean[idx],
            ind_var: self.ind_var[idx],
            agg_mean: self.agg_mean[idx],
            agg_var: self.agg_var[idx],
            individual: self.uses_individual(idx),
        }
    }

    #[inline]
    fn uses_individual(&self, idx: usize) -> bool {
        self.own_count[idx] as f64 >= self.threshold
    }

    fn refresh_aggregate(&mut self, idx: usize, arm: usize) {
        let n = self.arm_count[arm];
        self.agg_mean[idx] = self.arm_sum[arm] / n.max(1) as f64 + self.epsilon;
        self.agg_var[idx] = self.c2 / (n as f64 - self.num_players as f64).max(1.0);
        self.agg_count[idx] = n;
    }
}

impl Policy for RobustAggTs {
    fn name(&self) -> &'static str {
        match self.mode {
            UpdateMode::Delayed => "robust_agg_ts",
            UpdateMode::Eager => "robust_agg_ts_v",
        }
    }

    fn num_players(&self) -> usize {
        self.num_players
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn choose(&self, player: usize, _round: u64, draws: &mut dyn DrawSource) -> usize {
        let base = player * self.num_arms;
        with_scores(self.num_arms, |scores| {
            for (i, s) in scores.iter_mut().enumerate() {
                let idx = base + i;
                let (mean, var) = if self.uses_individual(idx) {
                    (self.ind_mean[idx], self.ind_var[idx])
                } else {
                    (self.agg_mean[idx], self.agg_var[idx])
                };
                *s = mean + var.sqrt() * draws.std_normal();
            }
            argmax(scores, self.tie_break, draws)
        })
    }

    fn observe(&mut self, round: u64, pulls: &[Pull]) -> Result<(), PolicyError> {
        self.guard.check(round, pulls)?;
        let k = self.num_arms;
        // All counts move before any posterior is recomputed.
        for pull in pulls {
            let idx = pull.player * k + pull.arm;
            self.own_count[idx] += 1;
            self.own_sum[idx] += pull.reward;
            self.arm_count[pull.arm] += 1;
            self.arm_sum[pull.arm] += pull.reward;
        }
        for pull in pulls {
            let idx = pull.player * k + pull.arm;
            let n = self.own_count[idx].max(1) as f64;
            self.ind_mean[idx] = self.own_sum[idx] / n;
            self.ind_var[idx] = self.c2 / n;
            if self.mode == UpdateMode::Delayed {
                self.refresh_aggregate(idx, pull.arm);
            }
        }
        if self.mode == UpdateMode::Eager {
            for p in 0..self.num_players {
                for i in 0..k {
                    self.refresh_aggregate(p * k + i, i);
                }
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Option<Vec<PairState>> {
        Some(
            (0..self.num_players)
                .flat_map(|p| (0..self.num_arms).map(move |i| (p, i)))
                .map(|(p, i)| self.pair(p, i))
                .collect(),
        )
    }
}
