//! Decision policies behind a two-phase interface.
//!
//! [`Policy::choose`] takes `&self`, so every active player's decision in a
//! round is computed from the state left by the previous round. All of the
//! round's pulls and rewards are then delivered at once to
//! [`Policy::observe`].

mod ind_ts;
mod ind_ucb;
mod robust_agg_ts;
mod robust_agg_ucb;
mod uniform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::DrawSource;

pub use ind_ts::IndTs;
pub use ind_ucb::{ucb1_index, IndUcb};
pub use robust_agg_ts::{switch_threshold, RobustAggTs, UpdateMode};
pub use robust_agg_ucb::{ConfidenceWidth, RobustAggUcb, GOLDEN_TOLERANCE};
pub use uniform::UniformRandom;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("round {round}: player {player} appears twice in the decisions")]
    DuplicatePlayer { round: u64, player: usize },
    #[error("round {round}: player {player} outside 0..{players}")]
    PlayerOutOfRange {
        round: u64,
        player: usize,
        players: usize,
    },
    #[error("round {round}: arm {arm} outside 0..{arms}")]
    ArmOutOfRange { round: u64, arm: usize, arms: usize },
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
}

/// One player's action and observed reward in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pull {
    pub player: usize,
    pub arm: usize,
    pub reward: f64,
}

/// Posterior state of one (player, arm) pair as seen at decision time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairState {
    pub own_count: u64,
    pub agg_count: u64,
    pub ind_mean: f64,
    pub ind_var: f64,
    pub agg_mean: f64,
    pub agg_var: f64,
    /// Whether the individual posterior would be used.
    pub individual: bool,
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn num_players(&self) -> usize;

    fn num_arms(&self) -> usize;

    /// Arm for `player` in 1-based `round`.
    fn choose(&self, player: usize, round: u64, draws: &mut dyn DrawSource) -> usize;

    /// Incorporates every pull of `round`; pulls must name distinct players.
    fn observe(&mut self, round: u64, pulls: &[Pull]) -> Result<(), PolicyError>;

    /// Row-major (player-major) posterior state, for policies that keep one.
    fn snapshot(&self) -> Option<Vec<PairState>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    IndUcb,
    IndTs,
    RobustAggUcb,
    RobustAggTs,
    RobustAggTsV,
    UniformRandom,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Self::IndUcb,
        Self::IndTs,
        Self::RobustAggUcb,
        Self::RobustAggTs,
        Self::RobustAggTsV,
        Self::UniformRandom,
    ];

    /// The four algorithms compared in the headline experiment.
    pub const HEADLINE: [Algorithm; 4] =
        [Self::RobustAggTs, Self::RobustAggUcb, Self::IndTs, Self::IndUcb];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::IndUcb => "ind_ucb",
            Self::IndTs => "ind_ts",
            Self::RobustAggUcb => "robust_agg_ucb",
            Self::RobustAggTs => "robust_agg_ts",
            Self::RobustAggTsV => "robust_agg_ts_v",
            Self::UniformRandom => "uniform_random",
        }
    }

    /// Stable numeric id, used in seed derivation.
    pub fn id(self) -> u64 {
        match self {
            Self::IndUcb => 1,
            Self::IndTs => 2,
            Self::RobustAggUcb => 3,
            Self::RobustAggTs => 4,
            Self::RobustAggTsV => 5,
            Self::UniformRandom => 6,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| PolicyError::UnknownAlgorithm(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    RandomUniform,
}

/// Time index in the UCB-1 logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UcbClock {
    /// Number of rounds in which the player has been active, this one included.
    #[default]
    PlayerLocal,
    /// Global round number.
    Global,
}

/// Named constant sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsPreset {
    /// c1 = 1/2, c2 = 1 and a confidence width with coefficient 2.
    #[default]
    Experiment,
    /// c1 = 40, c2 = 4 and the 8·√13 confidence width from the regret analysis.
    Analysis,
}

impl ConstantsPreset {
    pub fn c1(self) -> f64 {
        match self {
            Self::Experiment => 0.5,
            Self::Analysis => 40.0,
        }
    }

    pub fn c2(self) -> f64 {
        match self {
            Self::Experiment => 1.0,
            Self::Analysis => 4.0,
        }
    }

    pub fn confidence_coef(self) -> f64 {
        match self {
            Self::Experiment => ConfidenceWidth::EXPERIMENT_COEF,
            Self::Analysis => ConfidenceWidth::ANALYSIS_COEF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub algorithm: Algorithm,
    pub horizon: usize,
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub tie_break: TieBreak,
    pub ucb_clock: UcbClock,
    /// Leading coefficient of the RobustAgg-UCB confidence width.
    pub confidence_coef: f64,
}

impl PolicyConfig {
    pub fn new(algorithm: Algorithm, horizon: usize, epsilon: f64) -> Self {
        Self::with_preset(algorithm, horizon, epsilon, ConstantsPreset::Experiment)
    }

    pub fn with_preset(
        algorithm: Algorithm,
        horizon: usize,
        epsilon: f64,
        preset: ConstantsPreset,
    ) -> Self {
        Self {
            algorithm,
            horizon,
            epsilon,
            c1: preset.c1(),
            c2: preset.c2(),
            tie_break: TieBreak::LowestIndex,
            ucb_clock: UcbClock::PlayerLocal,
            confidence_coef: preset.confidence_coef(),
        }
    }

    pub fn check(&self) -> Result<(), PolicyError> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(PolicyError::Config(format!(
                "c1 and c2 must be positive, got {} and {}",
                self.c1, self.c2
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PolicyError::Config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if !(self.confidence_coef > 0.0) {
            return Err(PolicyError::Config("confidence_coef must be positive".into()));
        }
        Ok(())
    }

    pub fn build(
        &self,
        num_players: usize,
        num_arms: usize,
    ) -> Result<Box<dyn Policy>, PolicyError> {
        self.check()?;
        let (m, k) = (num_players, num_arms);
        Ok(match self.algorithm {
            Algorithm::IndUcb => Box::new(IndUcb::new(m, k, self.ucb_clock, self.tie_break)),
            Algorithm::IndTs => Box::new(IndTs::new(m, k, self.tie_break)),
            Algorithm::RobustAggUcb => Box::new(RobustAggUcb::new(
                m,
                k,
                self.epsilon,
                ConfidenceWidth::new(self.confidence_coef, self.horizon),
                self.tie_break,
            )),
            Algorithm::RobustAggTs => {
                Box::new(RobustAggTs::new(m, k, self, UpdateMode::Delayed))
            }
            Algorithm::RobustAggTsV => Box::new(RobustAggTs::new(m, k, self, UpdateMode::Eager)),
            Algorithm::UniformRandom => Box::new(UniformRandom::new(m, k)),
        })
    }
}

/// Index of the largest value. Under [`TieBreak::RandomUniform`] one extra
/// uniform is drawn, only when there is a tie.
pub fn argmax(values: &[f64], tie_break: TieBreak, draws: &mut dyn DrawSource) -> usize {
    let mut best = 0;
    let mut ties = 1usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
            ties = 1;
        } else if v == values[best] {
            ties += 1;
        }
    }
    if ties == 1 || tie_break == TieBreak::LowestIndex {
        return best;
    }
    let pick = ((draws.uniform() * ties as f64) as usize).min(ties - 1);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == values[best])
        .nth(pick)
        .map(|(i, _)| i)
        .unwrap_or(best)
}

/// Runs `f` on a zeroed score buffer of length `k`, on the stack when small.
pub(crate) fn with_scores<R>(k: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    const STACK: usize = 64;
    if k <= STACK {
        let mut buf = [0.0; STACK];
        f(&mut buf[..k])
    } else {
        f(&mut vec![0.0; k])
    }
}

/// Validates a round's pulls: players in range and distinct, arms in range.
#[derive(Debug, Clone)]
pub(crate) struct RoundGuard {
    stamps: Vec<u64>,
    num_arms: usize,
}

impl RoundGuard {
    pub(crate) fn new(num_players: usize, num_arms: usize) -> Self {
        Self {
            stamps: vec![0; num_players],
            num_arms,
        }
    }

    pub(crate) fn check(&mut self, round: u64, pulls: &[Pull]) -> Result<(), PolicyError> {
        // Stamps hold round + 1 so that round 0 is usable too.
        let stamp = round + 1;
        for pull in pulls {
            let players = self.stamps.len();
            let slot = self
                .stamps
                .get_mut(pull.player)
                .ok_or(PolicyError::PlayerOutOfRange {
                    round,
                    player: pull.player,
                    players,
                })?;
            if *slot == stamp {
                return Err(PolicyError::DuplicatePlayer {
                    round,
                    player: pull.player,
                });
            }
            *slot = stamp;
            if pull.arm >= self.num_arms {
                return Err(PolicyError::ArmOutOfRange {
                    round,
                    arm: pull.arm,
                    arms: self.num_arms,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::rng::DrawSource;

    /// Draw source returning a fixed standard normal value and fixed uniforms.
    pub struct Frozen {
        pub uniform: f64,
        pub normal: f64,
    }

    impl DrawSource for Frozen {
        fn uniform(&mut self) -> f64 {
            self.uniform
        }

        fn std_normal(&mut self) -> f64 {
            self.normal
        }
    }

    pub fn zero() -> Frozen {
        Frozen {
            uniform: 0.5,
            normal: 0.0,
        }
    }
}
