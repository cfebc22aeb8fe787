use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_stream, Domain};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule needs at least one round")]
    EmptyHorizon,
    #[error("inclusion probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("line {line}: player index {index} outside 1..={players}")]
    PlayerOutOfRange {
        line: usize,
        index: usize,
        players: usize,
    },
    #[error("line {line}: player {index} listed twice")]
    DuplicatePlayer { line: usize, index: usize },
    #[error("line {line}: cannot parse {token:?} as a player index")]
    Parse { line: usize, token: String },
    #[error("schedule file: {0}")]
    Io(#[from] std::io::Error),
}

/// How the active player sets are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleKind {
    /// Every player acts every round.
    Concurrent,
    /// Round-robin singletons.
    Sequential,
    /// Each player joins each round independently with probability `q`.
    RandomSubset { q: f64 },
    /// Read from a schedule file.
    FromFile { path: String },
}

impl ScheduleKind {
    pub fn label(&self) -> String {
        match self {
            Self::Concurrent => "concurrent".into(),
            Self::Sequential => "sequential".into(),
            Self::RandomSubset { q } => format!("random_subset({q})"),
            Self::FromFile { path } => format!("file({path})"),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Oblivious sequence of active player sets, stored compactly.
///
/// Player indices are 0-based and sorted ascending within each round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    num_players: usize,
    offsets: Vec<usize>,
    players: Vec<u32>,
}

impl Schedule {
    /// Builds a schedule from explicit sets; each set is sorted and checked.
    pub fn from_sets(num_players: usize, sets: &[Vec<usize>]) -> Result<Self, ScheduleError> {
        let mut offsets = Vec::with_capacity(sets.len() + 1);
        let mut players = Vec::new();
        offsets.push(0);
        for (line, set) in sets.iter().enumerate() {
            let mut sorted = set.clone();
            sorted.sort_unstable();
            for (n, &p) in sorted.iter().enumerate() {
                if p >= num_players {
                    return Err(ScheduleError::PlayerOutOfRange {
                        line: line + 1,
                        index: p + 1,
                        players: num_players,
                    });
                }
                if n > 0 && sorted[n - 1] == p {
                    return Err(ScheduleError::DuplicatePlayer {
                        line: line + 1,
                        index: p + 1,
                    });
                }
                players.push(p as u32);
            }
            offsets.push(players.len());
        }
        Ok(Self {
            num_players,
            offsets,
            players,
        })
    }

    pub fn concurrent(num_players: usize, horizon: usize) -> Self {
        let players = (0..horizon)
            .flat_map(|_| 0..num_players as u32)
            .collect::<Vec<_>>();
        let offsets = (0..=horizon).map(|t| t * num_players).collect();
        Self {
            num_players,
            offsets,
            players,
        }
    }

    pub fn sequential(num_players: usize, horizon: usize) -> Self {
        Self {
            num_players,
            offsets: (0..=horizon).collect(),
            players: (0..horizon).map(|t| (t % num_players) as u32).collect(),
        }
    }

    pub fn random_subset(
        num_players: usize,
        horizon: usize,
        q: f64,
        seed: u64,
    ) -> Result<Self, ScheduleError> {
        if !(0.0..=1.0).contains(&q) {
            return Err(ScheduleError::BadProbability(q));
        }
        let mut rng = keyed_stream(seed, Domain::Schedule, 0, 0);
        let mut offsets = Vec::with_capacity(horizon + 1);
        let mut players = Vec::new();
        offsets.push(0);
        for _ in 0..horizon {
            for p in 0..num_players {
                if rng.random::<f64>() < q {
                    players.push(p as u32);
                }
            }
            offsets.push(players.len());
        }
        Ok(Self {
            num_players,
            offsets,
            players,
        })
    }

    /// Parses the text format: one line per round, comma-separated 1-based
    /// player indices, a blank line for an empty round.
    pub fn parse(num_players: usize, text: &str) -> Result<Self, ScheduleError> {
        let mut sets = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let mut set = Vec::new();
            if !line.is_empty() {
                for token in line.split(',') {
                    let token = token.trim();
                    let index: usize = token.parse().map_err(|_| ScheduleError::Parse {
                        line: n + 1,
                        token: token.to_string(),
                    })?;
                    if index == 0 || index > num_players {
                        return Err(ScheduleError::PlayerOutOfRange {
                            line: n + 1,
                            index,
                            players: num_players,
                        });
                    }
                    set.push(index - 1);
                }
            }
            sets.push(set);
        }
        Self::from_sets(num_players, &sets)
    }

    pub fn load(num_players: usize, path: &Path) -> Result<Self, ScheduleError> {
        Self::parse(num_players, &std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in 0..self.horizon() {
            let line: Vec<String> = self.active(t).iter().map(|p| (p + 1).to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn horizon(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Active players of round `t`, 0-based round index.
    #[inline]
    pub fn active(&self, t: usize) -> &[u32] {
        &self.players[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Total number of activations `P`.
    pub fn total_activations(&self) -> usize {
        self.players.len()
    }
}

/// Builds a schedule of the requested kind; `seed` feeds the random kind.
pub fn make_schedule(
    kind: &ScheduleKind,
    num_players: usize,
    horizon: usize,
    seed: u64,
) -> Result<Schedule, ScheduleError> {
    match kind {
        ScheduleKind::FromFile { path } => Schedule::load(num_players, Path::new(path)),
        _ if horizon == 0 => Err(ScheduleError::EmptyHorizon),
        ScheduleKind::Concurrent => Ok(Schedule::concurrent(num_players, horizon)),
        ScheduleKind::Sequential => Ok(Schedule::sequential(num_players, horizon)),
        ScheduleKind::RandomSubset { q } => {
            Schedule::random_subset(num_players, horizon, *q, seed)
        }
    }
}
