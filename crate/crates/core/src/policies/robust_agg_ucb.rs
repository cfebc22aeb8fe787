use super::{argmax, with_scores, Policy, PolicyError, Pull, RoundGuard, TieBreak};
use crate::rng::DrawSource;

/// Bracket width at which [`ConfidenceWidth::minimize_golden`] stops.
pub const GOLDEN_TOLERANCE: f64 = 1e-9;

/// Deviation bound of the λ-weighted estimator
/// `F(n, m, λ, ε) = coef · sqrt(ln T · [λ²/n + (1-λ)²/m]) + (1-λ) ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceWidth {
    coef: f64,
    log_horizon: f64,
}

impl ConfidenceWidth {
    /// 8·√13, the constant carried through the regret analysis.
    pub const ANALYSIS_COEF: f64 = 28.844_410_203_711_913;
    /// 2: at λ = 1 the width is `sqrt(4 ln T / n) = sqrt(2 ln(1/δ) / n)` with
    /// δ = 1/T², the usual UCB(δ) radius for unit sub-Gaussian rewards.
    pub const EXPERIMENT_COEF: f64 = 2.0;

    pub fn new(coef: f64, horizon: usize) -> Self {
        Self {
            coef,
            log_horizon: (horizon.max(1) as f64).ln(),
        }
    }

    pub fn analysis(horizon: usize) -> Self {
        Self::new(Self::ANALYSIS_COEF, horizon)
    }

    pub fn coef(&self) -> f64 {
        self.coef
    }

    /// `F` at weight `lambda`.
    #[inline]
    pub fn value(&self, n_bar: f64, m_bar: f64, lambda: f64, epsilon: f64) -> f64 {
        let spread = lambda * lambda / n_bar + (1.0 - lambda) * (1.0 - lambda) / m_bar;
        self.coef * (self.log_horizon * spread).sqrt() + (1.0 - lambda) * epsilon
    }

    /// Exact minimiser of `F` over λ ∈ [0, 1], with the minimum value.
    ///
    /// With `a = 1/n`, `b = 1/m` and `A = coef·sqrt(ln T)`, the variance term
    /// is minimised at `λ0 = n / (n + m)` with value `s0 = ab / (a + b)`.
    /// For ε > 0 the stationary point satisfies
    /// `(λ - λ0)² = ε² s0 / ((a + b)(A²(a + b) - ε²))`, and λ* = 1 when the
    /// slope at λ = 1, `A·sqrt(a) - ε`, is not positive.
    #[inline]
    pub fn minimize(&self, n_bar: f64, m_bar: f64, epsilon: f64) -> (f64, f64) {
        let a = 1.0 / n_bar;
        let b = 1.0 / m_bar;
        let lambda0 = n_bar / (n_bar + m_bar);
        let lambda = if epsilon <= 0.0 {
            lambda0
        } else {
            let amp2 = self.coef * self.coef * self.log_horizon;
            if amp2 * a <= epsilon * epsilon {
                1.0
            } else {
                let s0 = a * b / (a + b);
                let denom = (a + b) * (amp2 * (a + b) - epsilon * epsilon);
                (lambda0 + epsilon * (s0 / denom).sqrt()).min(1.0)
            }
        };
        (lambda, self.value(n_bar, m_bar, lambda, epsilon))
    }

    /// Golden-section search for the minimiser; the objective is convex in λ.
    pub fn minimize_golden(&self, n_bar: f64, m_bar: f64, epsilon: f64) -> (f64, f64) {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let f = |l: f64| self.value(n_bar, m_bar, l, epsilon);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > GOLDEN_TOLERANCE {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = f(x2);
            }
        }
        // The interior estimate cannot land exactly on a boundary optimum.
        let mid = 0.5 * (lo + hi);
        [(mid, f(mid)), (0.0, f(0.0)), (1.0, f(1.0))]
            .into_iter()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("three candidates")
    }
}

/// RobustAgg(ε): UCB over a λ-weighted mix of own and other players' data.
#[derive(Debug, Clone)]
pub struct RobustAggUcb {
    num_players: usize,
    num_arms: usize,
    epsilon: f64,
    width: ConfidenceWidth,
    tie_break: TieBreak,
    own_count: Vec<u64>,
    own_sum: Vec<f64>,
    arm_count: Vec<u64>,
    arm_sum: Vec<f64>,
    guard: RoundGuard,
}

/// Quantities behind one (player, arm) upper confidence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbBreakdown {
    pub own_mean: f64,
    pub others_mean: f64,
    pub lambda: f64,
    pub width: f64,
    pub ucb: f64,
}

impl RobustAggUcb {
    pub fn new(
        num_players: usize,
        num_arms: usize,
        epsilon: f64,
        width: ConfidenceWidth,
        tie_break: TieBreak,
    ) -> Self {
        Self {
            num_players,
            num_arms,
            epsilon,
            width,
            tie_break,
            own_count: vec![0; num_players * num_arms],
            own_sum: vec![0.0; num_players * num_arms],
            arm_count: vec![0; num_arms],
            arm_sum: vec![0.0; num_arms],
            guard: RoundGuard::new(num_players, num_arms),
        }
    }

    #[inline]
    pub fn breakdown(&self, player: usize, arm: usize) -> UcbBreakdown {
        let idx = player * self.num_arms + arm;
        let own = self.own_count[idx];
        let others = self.arm_count[arm] - own;
        let n_bar = own.max(1) as f64;
        let m_bar = others.max(1) as f64;
        let own_mean = self.own_sum[idx] / n_bar;
        let others_mean = (self.arm_sum[arm] - self.own_sum[idx]) / m_bar;
        let (lambda, width) = self.width.minimize(n_bar, m_bar, self.epsilon);
        UcbBreakdown {
            own_mean,
            others_mean,
            lambda,
            width,
            ucb: lambda * own_mean + (1.0 - lambda) * others_mean + width,
        }
    }
}

impl Policy for RobustAggUcb {
    fn name(&self) -> &'static str {
        "robust_agg_ucb"
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
                *s = self.breakdown(player, i).ucb;
            }
            argmax(scores, self.tie_break, draws)
        })
    }

    fn observe(&mut self, round: u64, pulls: &[Pull]) -> Result<(), PolicyError> {
        self.guard.check(round, pulls)?;
        for pull in pulls {
            let idx = pull.player * self.num_arms + pull.arm;
            self.own_count[idx] += 1;
            self.own_sum[idx] += pull.reward;
            self.arm_count[pull.arm] += 1;
            self.arm_sum[pull.arm] += pull.reward;
        }
        Ok(())
    }
}
