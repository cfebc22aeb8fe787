use mpmab_core::env::{generate_instance, GenerationParams, MpmabInstance};
use mpmab_core::metrics::{final_count_regret, regret_trajectory};
use mpmab_core::policies::{argmax, Algorithm, ConfidenceWidth, PolicyConfig, TieBreak};
use mpmab_core::protocol::{
    make_schedule, run_episode, EpisodeOptions, PlayerOrder, RunTrace, Schedule, ScheduleKind,
};
use mpmab_core::rng::{keyed_stream, Domain, StreamDraws};
use mpmab_core::validator::check_invariants_trace;
use proptest::prelude::*;
use rand::Rng;

/// Random instance satisfying the ε constraint: a base row plus offsets in [-ε/2, ε/2].
fn random_instance(m: usize, k: usize, eps: f64, seed: u64) -> MpmabInstance {
    let mut rng = keyed_stream(seed, Domain::Instance, m as u64, k as u64);
    let base: Vec<f64> = (0..k).map(|_| rng.random_range(eps / 2.0..=1.0 - eps / 2.0)).collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            base.iter()
                .map(|b| b + rng.random_range(-eps / 2.0..=eps / 2.0))
                .collect()
        })
        .collect();
    MpmabInstance::from_rows(eps, &rows).unwrap()
}

fn feasible(m: usize, k: usize, eps: f64, v: usize) -> Option<GenerationParams> {
    let params = GenerationParams {
        num_players: m,
        num_arms: k,
        epsilon: eps,
        target_subpar: v,
    };
    params.check_feasible().ok().map(|_| params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Subpar-arm facts 1-4 on generated instances.
    #[test]
    fn subpar_facts(m in 1usize..8, k in 2usize..10, v_frac in 0.0f64..1.0, eps in 0.02f64..0.18, seed: u64) {
        let v = ((k as f64 - 1.0) * v_frac).round() as usize;
        let Some(params) = feasible(m, k, eps, v) else { return Ok(()); };
        let inst = generate_instance(params, seed).unwrap();
        prop_assert!(inst.validate().is_ok());
        let g = inst.gaps();
        prop_assert_eq!(g.subpar_set(5.0 * eps).len(), v);
        let tol = 1e-12;
        for i in 0..k {
            for p in 0..m {
                for q in 0..m {
                    prop_assert!((g.gap(p, i) - g.gap(q, i)).abs() <= 2.0 * eps + tol);
                }
            }
        }
        for i in g.subpar_set(10.0 * eps).arms() {
            for p in 0..m {
                prop_assert!(g.gap(p, i) > 8.0 * eps - tol);
            }
        }
        prop_assert!(g.subpar_set(2.0 * eps).complement_len() >= 1);
        for i in g.subpar_set(5.0 * eps).arms() {
            prop_assert!(g.gap_max(i) <= 2.0 * g.gap_min(i) + tol);
        }
    }

    #[test]
    fn generation_is_deterministic(v in 0usize..10, seed: u64) {
        let params = feasible(20, 10, 0.15, v).unwrap();
        prop_assert_eq!(generate_instance(params, seed).unwrap(), generate_instance(params, seed).unwrap());
    }

    #[test]
    fn subpar_set_is_monotone(m in 1usize..5, k in 1usize..6, eps in 0.0f64..0.3, seed: u64, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let g = random_instance(m, k, eps, seed).gaps();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wide = g.subpar_set(lo);
        for i in g.subpar_set(hi).arms() {
            prop_assert!(wide.contains(i));
        }
    }

    /// Gaps and subpar sets against a direct double loop.
    #[test]
    fn gaps_match_brute_force(m in 1usize..5, k in 1usize..6, eps in 0.0f64..0.3, seed: u64, alpha in 0.0f64..1.0) {
        let inst = random_instance(m, k, eps, seed);
        let g = inst.gaps();
        for p in 0..m {
            let best = (0..k).map(|i| inst.mean(p, i)).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..k {
                prop_assert_eq!(g.gap(p, i), best - inst.mean(p, i));
            }
        }
        let oracle: Vec<usize> = (0..k).filter(|&i| (0..m).any(|p| g.gap(p, i) > alpha)).collect();
        prop_assert_eq!(g.subpar_set(alpha).arms(), oracle);
    }

    /// The closed-form minimiser never exceeds either endpoint nor the golden-section result.
    #[test]
    fn minimize_is_global(n in 1u32..100_000, mm in 1u32..100_000, eps in 0.0f64..1.0, t in 2usize..1_000_000) {
        let w = ConfidenceWidth::analysis(t);
        let (n, mm) = (n as f64, mm as f64);
        let (lambda, f) = w.minimize(n, mm, eps);
        prop_assert!((0.0..=1.0).contains(&lambda));
        prop_assert!(f <= w.value(n, mm, 0.0, eps) + 1e-12);
        prop_assert!(f <= w.value(n, mm, 1.0, eps) + 1e-12);
        prop_assert!(f <= w.minimize_golden(n, mm, eps).1 + 1e-12);
    }

    /// LowestIndex picks the first maximum; permuting arms permutes the choice.
    #[test]
    fn tie_break_follows_permutation(values in prop::collection::vec(0u8..4, 1..8), shift in 0usize..8) {
        let vals: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let mut draws = StreamDraws(keyed_stream(0, Domain::Policy, 0, 0));
        let pick = argmax(&vals, TieBreak::LowestIndex, &mut draws);
        let first = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(pick, vals.iter().position(|&x| x == first).unwrap());
        let k = vals.len();
        let s = shift % k;
        let rotated: Vec<f64> = (0..k).map(|j| vals[(j + s) % k]).collect();
        let picked = argmax(&rotated, TieBreak::LowestIndex, &mut draws);
        prop_assert_eq!(rotated[picked], first);
    }
}

fn episode(
    inst: &MpmabInstance,
    schedule: &Schedule,
    algorithm: Algorithm,
    seed: u64,
    options: EpisodeOptions,
) -> RunTrace {
    let mut policy = PolicyConfig::new(algorithm, schedule.horizon(), inst.epsilon())
        .build(inst.num_players(), inst.num_arms())
        .unwrap();
    run_episode(inst, schedule, policy.as_mut(), seed, options).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Decisions do not depend on the order in which active players are asked.
    #[test]
    fn simultaneity(alg_idx in 0usize..6, m in 1usize..5, k in 1usize..5, seed: u64) {
        let algorithm = Algorithm::ALL[alg_idx];
        let inst = random_instance(m, k, 0.1, seed);
        let schedule = make_schedule(&ScheduleKind::RandomSubset { q: 0.7 }, m, 150, seed).unwrap();
        let forward = episode(&inst, &schedule, algorithm, seed, EpisodeOptions::default());
        let backward = episode(&inst, &schedule, algorithm, seed, EpisodeOptions {
            player_order: PlayerOrder::Descending,
            ..Default::default()
        });
        prop_assert_eq!(forward, backward);
    }

    /// Stopping-time structure and count reconstruction.
    #[test]
    fn trace_structure(alg_idx in 0usize..6, m in 1usize..5, k in 1usize..5, seed: u64) {
        let inst = random_instance(m, k, 0.1, seed);
        let schedule = make_schedule(&ScheduleKind::RandomSubset { q: 0.5 }, m, 120, seed ^ 1).unwrap();
        let trace = episode(&inst, &schedule, Algorithm::ALL[alg_idx], seed, EpisodeOptions::default());
        let horizon = trace.horizon();
        for t in 1..=horizon {
            let players: Vec<usize> = trace.round(t).map(|r| r.player).collect();
            let active: Vec<usize> = schedule.active(t - 1).iter().map(|&p| p as usize).collect();
            prop_assert_eq!(players, active);
        }
        prop_assert_eq!(trace.counts_through(horizon), trace.final_counts().to_vec());
        for arm in 0..k {
            let total = trace.arm_count_through(arm, horizon);
            let mut prev = 0;
            for kk in 0..=total + 1 {
                let tau = trace.tau_k(arm, kk);
                prop_assert!(tau >= prev);
                prev = tau;
                if kk >= 1 && tau <= horizon {
                    let n = trace.arm_count_through(arm, tau);
                    prop_assert!(n >= kk && n <= kk + m as u64 - 1);
                }
            }
            prop_assert_eq!(trace.tau_k(arm, total + 1), horizon + 1);
            for p in 0..m {
                let mut prev = 0;
                for kk in 0..=trace.final_count(p, arm) {
                    let pi = trace.pi_k(arm, p, kk);
                    prop_assert!(pi >= prev);
                    prev = pi;
                }
            }
        }
        let gaps = inst.gaps();
        let path = regret_trajectory(&trace, &gaps, &[horizon]).unwrap()[0];
        prop_assert!((path - final_count_regret(&trace, &gaps).unwrap()).abs() <= 1e-9);
    }

    /// Delayed-mode snapshots keep the invariant on random schedules.
    #[test]
    fn delayed_invariant(m in 1usize..5, k in 1usize..5, seed: u64) {
        let inst = random_instance(m, k, 0.1, seed);
        let schedule = make_schedule(&ScheduleKind::RandomSubset { q: 0.5 }, m, 200, seed).unwrap();
        let trace = episode(&inst, &schedule, Algorithm::RobustAggTs, seed, EpisodeOptions {
            snapshots: true,
            ..Default::default()
        });
        prop_assert_eq!(check_invariants_trace(&trace).unwrap(), vec![]);
    }
}

/// Ind-TS and Ind-UCB decisions for player 0 ignore everyone else's rewards.
#[test]
fn individual_policies_are_isolated() {
    let base = vec![vec![0.7, 0.4, 0.5], vec![0.65, 0.45, 0.5], vec![0.72, 0.38, 0.55]];
    let mut other = base.clone();
    other[1] = vec![0.0, 1.0, 0.0];
    other[2] = vec![1.0, 0.0, 1.0];
    let a = MpmabInstance::from_rows(1.0, &base).unwrap();
    let b = MpmabInstance::from_rows(1.0, &other).unwrap();
    let schedule = Schedule::concurrent(3, 500);
    for algorithm in [Algorithm::IndTs, Algorithm::IndUcb] {
        let ta = episode(&a, &schedule, algorithm, 9, EpisodeOptions::default());
        let tb = episode(&b, &schedule, algorithm, 9, EpisodeOptions::default());
        let own = |t: &RunTrace| t.records().filter(|r| r.player == 0).map(|r| r.arm).collect::<Vec<_>>();
        assert_eq!(own(&ta), own(&tb), "{algorithm}");
    }
    // The transfer policy does read other players' data.
    let ta = episode(&a, &schedule, Algorithm::RobustAggUcb, 9, EpisodeOptions::default());
    let tb = episode(&b, &schedule, Algorithm::RobustAggUcb, 9, EpisodeOptions::default());
    assert_ne!(ta, tb);
}

/// A single player sees identical individual statistics in both update modes.
#[test]
fn single_player_modes_share_individual_statistics() {
    let inst = MpmabInstance::from_rows(0.1, &[vec![0.6, 0.3, 0.5]]).unwrap();
    let schedule = Schedule::concurrent(1, 300);
    let opts = EpisodeOptions {
        snapshots: true,
        ..Default::default()
    };
    let delayed = episode(&inst, &schedule, Algorithm::RobustAggTs, 4, opts);
    let eager = episode(&inst, &schedule, Algorithm::RobustAggTsV, 4, opts);
    for t in 1..=300 {
        let (d, e) = (delayed.snapshot(t).unwrap(), eager.snapshot(t).unwrap());
        for (x, y) in d.iter().zip(e) {
            assert_eq!((x.own_count, x.ind_mean, x.ind_var), (y.own_count, y.ind_mean, y.ind_var));
        }
    }
}

/// An episode with two players where only one pulls the shared arm: the
/// abstaining player's aggregate parameters move under Eager updates.
#[test]
fn eager_update_breaks_constancy() {
    let inst = MpmabInstance::from_rows(0.1, &[vec![0.6, 0.4], vec![0.55, 0.45]]).unwrap();
    let schedule = Schedule::from_sets(2, &[vec![0, 1], vec![1], vec![1], vec![0, 1]]).unwrap();
    let opts = EpisodeOptions {
        snapshots: true,
        ..Default::default()
    };
    let eager = episode(&inst, &schedule, Algorithm::RobustAggTsV, 1, opts);
    assert!(!check_invariants_trace(&eager).unwrap().is_empty());
    let delayed = episode(&inst, &schedule, Algorithm::RobustAggTs, 1, opts);
    assert!(check_invariants_trace(&delayed).unwrap().is_empty());
}

#[test]
fn reward_frequency() {
    let inst = MpmabInstance::from_rows(0.0, &[vec![0.6]]).unwrap();
    let mut draws = StreamDraws(keyed_stream(5, Domain::Reward, 0, 0));
    let n = 100_000;
    let hits: f64 = (0..n).map(|_| inst.sample_reward(0, 0, &mut draws)).sum();
    assert!((hits / n as f64 - 0.6).abs() <= 0.005);
}
