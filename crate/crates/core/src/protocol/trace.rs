use crate::policies::PairState;

/// Full interaction log of one episode.
///
/// Records are stored column-wise and grouped by round; within a round they
/// follow ascending player index.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    num_players: usize,
    num_arms: usize,
    offsets: Vec<usize>,
    players: Vec<u32>,
    arms: Vec<u32>,
    rewards: Vec<f64>,
    final_counts: Vec<u64>,
    snapshots: Option<Vec<PairState>>,
}

/// One recorded pull, with its 1-based round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullRecord {
    pub round: usize,
    pub player: usize,
    pub arm: usize,
    pub reward: f64,
}

impl RunTrace {
    pub(crate) fn with_capacity(num_players: usize, num_arms: usize, horizon: usize, pulls: usize) -> Self {
        let mut offsets = Vec::with_capacity(horizon + 1);
        offsets.push(0);
        Self {
            num_players,
            num_arms,
            offsets,
            players: Vec::with_capacity(pulls),
            arms: Vec::with_capacity(pulls),
            rewards: Vec::with_capacity(pulls),
            final_counts: vec![0; num_players * num_arms],
            snapshots: None,
        }
    }

    pub(crate) fn push(&mut self, player: usize, arm: usize, reward: f64) {
        self.players.push(player as u32);
        self.arms.push(arm as u32);
        self.rewards.push(reward);
        self.final_counts[player * self.num_arms + arm] += 1;
    }

    pub(crate) fn close_round(&mut self) {
        self.offsets.push(self.players.len());
    }

    pub(crate) fn push_snapshot(&mut self, states: &[PairState]) {
        self.snapshots.get_or_insert_with(Vec::new).extend_from_slice(states);
    }

    /// Builds a trace from scripted rounds of `(player, arm, reward)`.
    pub fn from_rounds(num_players: usize, num_arms: usize, rounds: &[Vec<(usize, usize, f64)>]) -> Self {
        let total = rounds.iter().map(Vec::len).sum();
        let mut trace = Self::with_capacity(num_players, num_arms, rounds.len(), total);
        for round in rounds {
            let mut sorted = round.clone();
            sorted.sort_by_key(|r| r.0);
            for (p, i, r) in sorted {
                trace.push(p, i, r);
            }
            trace.close_round();
        }
        trace
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn horizon(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_pulls(&self) -> usize {
        self.players.len()
    }

    /// Records of 1-based round `t`.
    pub fn round(&self, t: usize) -> impl Iterator<Item = PullRecord> + '_ {
        (self.offsets[t - 1]..self.offsets[t]).map(move |j| self.record(t, j))
    }

    /// Every record in round order.
    pub fn records(&self) -> impl Iterator<Item = PullRecord> + '_ {
        (1..=self.horizon()).flat_map(move |t| self.round(t))
    }

    fn record(&self, round: usize, j: usize) -> PullRecord {
        PullRecord {
            round,
            player: self.players[j] as usize,
            arm: self.arms[j] as usize,
            reward: self.rewards[j],
        }
    }

    /// Own-pull counts `n_i^p(T)`, row-major by player.
    pub fn final_counts(&self) -> &[u64] {
        &self.final_counts
    }

    pub fn final_count(&self, player: usize, arm: usize) -> u64 {
        self.final_counts[player * self.num_arms + arm]
    }

    /// `n_i^p(t)` for every pair, recomputed from the records of rounds `1..=t`.
    pub fn counts_through(&self, t: usize) -> Vec<u64> {
        let mut counts = vec![0; self.num_players * self.num_arms];
        for j in 0..self.offsets[t] {
            counts[self.players[j] as usize * self.num_arms + self.arms[j] as usize] += 1;
        }
        counts
    }

    /// `n_i(t)`, total pulls of `arm` through round `t`.
    pub fn arm_count_through(&self, arm: usize, t: usize) -> u64 {
        self.arms[..self.offsets[t]]
            .iter()
            .filter(|&&a| a as usize == arm)
            .count() as u64
    }

    pub fn has_snapshots(&self) -> bool {
        self.snapshots.is_some()
    }

    /// Policy state at the start of 1-based round `t`, row-major by player.
    pub fn snapshot(&self, t: usize) -> Option<&[PairState]> {
        let width = self.num_players * self.num_arms;
        self.snapshots
            .as_ref()
            .map(|s| &s[(t - 1) * width..t * width])
    }

    /// Round of the `k`-th pull of `arm` by any player; 0 for k = 0 and
    /// `T + 1` if it never happens.
    pub fn tau_k(&self, arm: usize, k: u64) -> usize {
        if k == 0 {
            return 0;
        }
        self.kth_pull(arm, k).map_or(self.horizon() + 1, |(t, _)| t)
    }

    /// Round and player of the `k`-th pull of `arm`, pulls within a round
    /// ordered by player index. `None` for k = 0 or when it never happens.
    pub fn kth_pull(&self, arm: usize, k: u64) -> Option<(usize, usize)> {
        if k == 0 {
            return None;
        }
        let mut seen = 0;
        for t in 1..=self.horizon() {
            for j in self.offsets[t - 1]..self.offsets[t] {
                if self.arms[j] as usize == arm {
                    seen += 1;
                    if seen == k {
                        return Some((t, self.players[j] as usize));
                    }
                }
            }
        }
        None
    }

    /// Player who made the `k`-th pull of `arm` (k ≥ 1).
    pub fn kth_puller(&self, arm: usize, k: u64) -> Option<usize> {
        self.kth_pull(arm, k).map(|(_, p)| p)
    }

    /// Round of `player`'s `k`-th pull of `arm`; 0 for k = 0, `T + 1` if never.
    pub fn pi_k(&self, arm: usize, player: usize, k: u64) -> usize {
        if k == 0 {
            return 0;
        }
        let mut seen = 0;
        for t in 1..=self.horizon() {
            for j in self.offsets[t - 1]..self.offsets[t] {
                if self.arms[j] as usize == arm && self.players[j] as usize == player {
                    seen += 1;
                    if seen == k {
                        return t;
                    }
                }
            }
        }
        self.horizon() + 1
    }
}
