//! ε-MPMAB problem instances and their gap structure.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_stream, DrawSource, Domain};

/// Slack allowed when comparing mean differences against ε, so that decimal
/// inputs such as 0.65 - 0.55 are not rejected over one ulp.
pub const DISSIMILARITY_TOL: f64 = 1e-12;

/// Width of the dead zone kept between generated bands and the 5ε subpar boundary.
pub const GENERATION_MARGIN: f64 = 0.02;

/// Attempts before instance generation gives up.
pub const GENERATION_ATTEMPTS: usize = 100;

const BASE_OPTIMUM_LO: f64 = 0.9;
const BASE_OPTIMUM_HI: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("means matrix has {got} entries, expected {players} x {arms}")]
    DimensionMismatch {
        players: usize,
        arms: usize,
        got: usize,
    },
    #[error("instance needs at least one player and one arm")]
    Empty,
    #[error("epsilon {0} outside [0, 1]")]
    BadEpsilon(f64),
    #[error("infeasible generation parameters: {0}")]
    Infeasible(String),
    #[error("no instance with {target} subpar arms after {attempts} attempts")]
    GenerationFailed { target: usize, attempts: usize },
    #[error("instance file: {0}")]
    Io(#[from] std::io::Error),
    #[error("instance file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("loaded instance is invalid: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RewardFamily {
    #[default]
    Bernoulli,
}

/// Player-by-arm mean reward matrix with a known dissimilarity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MpmabInstance {
    num_players: usize,
    num_arms: usize,
    epsilon: f64,
    means: Vec<f64>,
    family: RewardFamily,
    seed: Option<u64>,
    target_subpar: Option<usize>,
}

impl MpmabInstance {
    /// Builds an instance from per-player rows. Only shape and ε range are
    /// checked here; use [`MpmabInstance::validate`] for the reward constraints.
    pub fn from_rows(epsilon: f64, rows: &[Vec<f64>]) -> Result<Self, EnvError> {
        let num_players = rows.len();
        let num_arms = rows.first().map_or(0, Vec::len);
        let means: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(num_players, num_arms, epsilon, means)
    }

    pub fn new(
        num_players: usize,
        num_arms: usize,
        epsilon: f64,
        means: Vec<f64>,
    ) -> Result<Self, EnvError> {
        if num_players == 0 || num_arms == 0 {
            return Err(EnvError::Empty);
        }
        if means.len() != num_players * num_arms {
            return Err(EnvError::DimensionMismatch {
                players: num_players,
                arms: num_arms,
                got: means.len(),
            });
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(EnvError::BadEpsilon(epsilon));
        }
        Ok(Self {
            num_players,
            num_arms,
            epsilon,
            means,
            family: RewardFamily::Bernoulli,
            seed: None,
            target_subpar: None,
        })
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn family(&self) -> RewardFamily {
        self.family
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn target_subpar(&self) -> Option<usize> {
        self.target_subpar
    }

    #[inline]
    pub fn mean(&self, player: usize, arm: usize) -> f64 {
        self.means[player * self.num_arms + arm]
    }

    /// Row-major (player-major) means.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn row(&self, player: usize) -> &[f64] {
        &self.means[player * self.num_arms..(player + 1) * self.num_arms]
    }

    /// Reports every mean outside [0, 1] and every pair of players whose
    /// means on an arm differ by more than ε.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for p in 0..self.num_players {
            for i in 0..self.num_arms {
                let mu = self.mean(p, i);
                if !(0.0..=1.0).contains(&mu) {
                    violations.push(Violation::MeanOutOfRange {
                        player: p,
                        arm: i,
                        mean: mu,
                    });
                }
            }
        }
        for i in 0..self.num_arms {
            for p in 0..self.num_players {
                for q in p + 1..self.num_players {
                    let diff = (self.mean(p, i) - self.mean(q, i)).abs();
                    if diff > self.epsilon + DISSIMILARITY_TOL {
                        violations.push(Violation::Dissimilarity {
                            arm: i,
                            players: (p, q),
                            diff,
                        });
                    }
                }
            }
        }
        ValidationReport { violations }
    }

    pub fn gaps(&self) -> GapTable {
        GapTable::compute(self)
    }

    /// Draws one reward for `player` pulling `arm`, consuming exactly one uniform.
    #[inline]
    pub fn sample_reward(&self, player: usize, arm: usize, draws: &mut dyn DrawSource) -> f64 {
        let u = draws.uniform();
        match self.family {
            RewardFamily::Bernoulli => {
                if u < self.mean(player, arm) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String, EnvError> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let mut instance = Self::new(file.num_players, file.num_arms, file.epsilon, file.means)?;
        instance.family = file.family;
        instance.seed = file.seed;
        instance.target_subpar = file.target_subpar;
        let report = instance.validate();
        if !report.is_ok() {
            return Err(EnvError::Invalid(report));
        }
        Ok(instance)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk layout of an instance.
#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    #[serde(rename = "M")]
    num_players: usize,
    #[serde(rename = "K")]
    num_arms: usize,
    epsilon: f64,
    means: Vec<f64>,
    #[serde(default)]
    family: RewardFamily,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    target_subpar: Option<usize>,
}

impl From<&MpmabInstance> for InstanceFile {
    fn from(inst: &MpmabInstance) -> Self {
        Self {
            num_players: inst.num_players,
            num_arms: inst.num_arms,
            epsilon: inst.epsilon,
            means: inst.means.clone(),
            family: inst.family,
            seed: inst.seed,
            target_subpar: inst.target_subpar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    MeanOutOfRange {
        player: usize,
        arm: usize,
        mean: f64,
    },
    Dissimilarity {
        arm: usize,
        players: (usize, usize),
        diff: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                write!(f, "; ")?;
            }
            match v {
                Violation::MeanOutOfRange { player, arm, mean } => {
                    write!(f, "mean {mean} of player {player} arm {arm} outside [0,1]")?
                }
                Violation::Dissimilarity { arm, players, diff } => write!(
                    f,
                    "arm {arm}: players {} and {} differ by {diff}",
                    players.0, players.1
                )?,
            }
        }
        Ok(())
    }
}

/// Per-player best means and suboptimality gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTable {
    num_players: usize,
    num_arms: usize,
    best_mean: Vec<f64>,
    gaps: Vec<f64>,
    gap_min: Vec<f64>,
    gap_max: Vec<f64>,
}

impl GapTable {
    pub fn compute(instance: &MpmabInstance) -> Self {
        let (m, k) = (instance.num_players(), instance.num_arms());
        let best_mean: Vec<f64> = (0..m)
            .map(|p| instance.row(p).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut gaps = Vec::with_capacity(m * k);
        for (p, best) in best_mean.iter().enumerate() {
            gaps.extend(instance.row(p).iter().map(|mu| best - mu));
        }
        let mut gap_min = vec![f64::INFINITY; k];
        let mut gap_max = vec![f64::NEG_INFINITY; k];
        for p in 0..m {
            for i in 0..k {
                let g = gaps[p * k + i];
                gap_min[i] = gap_min[i].min(g);
                gap_max[i] = gap_max[i].max(g);
            }
        }
        Self {
            num_players: m,
            num_arms: k,
            best_mean,
            gaps,
            gap_min,
            gap_max,
        }
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn best_mean(&self, player: usize) -> f64 {
        self.best_mean[player]
    }

    #[inline]
    pub fn gap(&self, player: usize, arm: usize) -> f64 {
        self.gaps[player * self.num_arms + arm]
    }

    pub fn gap_min(&self, arm: usize) -> f64 {
        self.gap_min[arm]
    }

    pub fn gap_max(&self, arm: usize) -> f64 {
        self.gap_max[arm]
    }

    /// Arms for which some player's gap strictly exceeds `alpha`.
    pub fn subpar_set(&self, alpha: f64) -> SubparSet {
        SubparSet {
            mask: self.gap_max.iter().map(|&g| g > alpha).collect(),
        }
    }

    #[inline]
    pub fn categorize(&self, subpar: &SubparSet, player: usize, arm: usize) -> ArmCategory {
        if self.gap(player, arm) == 0.0 {
            ArmCategory::Optimal
        } else if subpar.contains(arm) {
            ArmCategory::Subpar
        } else {
            ArmCategory::NearOptimal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubparSet {
    mask: Vec<bool>,
}

impl SubparSet {
    pub fn contains(&self, arm: usize) -> bool {
        self.mask[arm]
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn arms(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Size of the complement within all arms.
    pub fn complement_len(&self) -> usize {
        self.mask.len() - self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArmCategory {
    Optimal,
    NearOptimal,
    Subpar,
}

impl ArmCategory {
    pub const ALL: [ArmCategory; 3] = [Self::Optimal, Self::NearOptimal, Self::Subpar];

    pub fn index(self) -> usize {
        match self {
            Self::Optimal => 0,
            Self::NearOptimal => 1,
            Self::Subpar => 2,
        }
    }
}

/// Subpar threshold used for reporting: 5ε.
pub fn reporting_alpha(epsilon: f64) -> f64 {
    5.0 * epsilon
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub num_players: usize,
    pub num_arms: usize,
    pub epsilon: f64,
    pub target_subpar: usize,
}

impl GenerationParams {
    /// Rejects parameter sets whose construction bands are empty.
    pub fn check_feasible(&self) -> Result<(), EnvError> {
        let eps = self.epsilon;
        if self.num_players == 0 || self.num_arms == 0 {
            return Err(EnvError::Empty);
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(EnvError::BadEpsilon(eps));
        }
        if self.target_subpar >= self.num_arms {
            return Err(EnvError::Infeasible(format!(
                "target subpar count {} must be below K = {}",
                self.target_subpar, self.num_arms
            )));
        }
        let near_count = self.num_arms - 1 - self.target_subpar;
        if self.target_subpar > 0 {
            let subpar_hi = BASE_OPTIMUM_LO - 4.0 * eps - GENERATION_MARGIN;
            if subpar_hi < eps / 2.0 {
                return Err(EnvError::Infeasible(format!(
                    "subpar band [{}, {subpar_hi}] is empty for epsilon {eps}",
                    eps / 2.0
                )));
            }
        }
        if near_count > 0 && 4.0 * eps < 2.0 * GENERATION_MARGIN {
            return Err(EnvError::Infeasible(format!(
                "near-optimal band is empty for epsilon {eps}"
            )));
        }
        Ok(())
    }
}

/// Generates a random instance with exactly `target_subpar` arms in the 5ε subpar set.
///
/// One arm is the common base optimum `b* ~ U[0.9, 0.95]`. Subpar arms take
/// base means in `[ε/2, b* - 4ε - m]`, near-optimal arms in
/// `[b* - 4ε + m, b* - m]`. A randomly chosen spread player is pushed `+ε/2`
/// on the optimum and `-ε/2` on subpar arms; every other (player, arm) offset
/// is uniform in `[-ε/2, ε/2]`. Candidates are clipped to [0, 1] and
/// re-drawn until the subpar count and the ε constraint both hold.
pub fn generate_instance(params: GenerationParams, seed: u64) -> Result<MpmabInstance, EnvError> {
    params.check_feasible()?;
    let GenerationParams {
        num_players: m,
        num_arms: k,
        epsilon: eps,
        target_subpar: v,
    } = params;
    let half = eps / 2.0;
    let mut rng = keyed_stream(seed, Domain::Instance, 0, 0);

    for _ in 0..GENERATION_ATTEMPTS {
        let base_opt = rng.random_range(BASE_OPTIMUM_LO..=BASE_OPTIMUM_HI);
        let mut arms: Vec<usize> = (0..k).collect();
        arms.shuffle(&mut rng);
        let (opt_arm, rest) = arms.split_first().expect("k >= 1");
        let (subpar_arms, _near_arms) = rest.split_at(v);

        let mut base = vec![0.0; k];
        let mut is_subpar = vec![false; k];
        base[*opt_arm] = base_opt;
        for &i in rest {
            if subpar_arms.contains(&i) {
                is_subpar[i] = true;
                base[i] = rng.random_range(half..=base_opt - 4.0 * eps - GENERATION_MARGIN);
            } else {
                base[i] = rng.random_range(
                    base_opt - 4.0 * eps + GENERATION_MARGIN..=base_opt - GENERATION_MARGIN,
                );
            }
        }

        let spread = rng.random_range(0..m);
        let mut means = Vec::with_capacity(m * k);
        for p in 0..m {
            for i in 0..k {
                let offset = if p == spread && i == *opt_arm {
                    half
                } else if p == spread && is_subpar[i] {
                    -half
                } else if eps > 0.0 {
                    rng.random_range(-half..=half)
                } else {
                    0.0
                };
                means.push((base[i] + offset).clamp(0.0, 1.0));
            }
        }

        let mut instance = MpmabInstance::new(m, k, eps, means)?;
        if !instance.validate().is_ok() {
            continue;
        }
        if instance.gaps().subpar_set(reporting_alpha(eps)).len() != v {
            continue;
        }
        instance.seed = Some(seed);
        instance.target_subpar = Some(v);
        return Ok(instance);
    }
    Err(EnvError::GenerationFailed {
        target: v,
        attempts: GENERATION_ATTEMPTS,
    })
}
