use amc_core::analysis::{ks_statistic, occupancy_fractions};
use amc_core::ensemble::{simulate_trajectory, Drive};
use amc_core::memory::{
    optimal_crystal_fraction, stratified_sample, Capacities, ConsolidationConfig, ConsolidationSwitches,
    NeighborTarget, PhaseBuffers, SamplingConfig, Thresholds,
};
use amc_core::agent::QTable;
use amc_core::rng::stream;
use amc_core::sde::{em_step, fixed_point, CrystallizationState, SdeParams};
use amc_core::utility::{
    detect_interference, utility, EpsilonRule, Experience, InterferenceParams, NoveltyTable, UtilityWeights,
};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = SdeParams> {
    (1e-6..1.0f64, 1e-6..1.0f64, 0.0..2.0f64, 0.01..1.0f64).prop_map(|(a, b, s, dt)| SdeParams::new(a, b, s, dt).unwrap())
}

proptest! {
    #[test]
    fn em_step_never_leaves_the_unit_interval(
        p in params(), c in 0.0..=1.0f64, u in 0.0..=1.0f64, i in 0.0..=1.0f64, z in -40.0..40.0f64,
    ) {
        let next = em_step(CrystallizationState::new(c).unwrap(), u, i, &p, z).unwrap();
        prop_assert!((0.0..=1.0).contains(&next.value()));
    }

    #[test]
    fn drift_points_inward_at_the_boundaries(p in params(), u in 0.0..=1.0f64, i in 0.0..=1.0f64) {
        prop_assert!(p.drift(0.0, u, i) >= 0.0);
        prop_assert!(p.drift(1.0, u, i) <= 0.0);
        prop_assert_eq!(p.diffusion(0.0), 0.0);
        prop_assert_eq!(p.diffusion(1.0), 0.0);
    }

    #[test]
    fn more_utility_never_lowers_the_next_state(
        p in params(), c in 0.0..=1.0f64, u1 in 0.0..=1.0f64, u2 in 0.0..=1.0f64, i in 0.0..=1.0f64, z in -5.0..5.0f64,
    ) {
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let c = CrystallizationState::new(c).unwrap();
        let a = em_step(c, lo, i, &p, z).unwrap().value();
        let b = em_step(c, hi, i, &p, z).unwrap().value();
        prop_assert!(b >= a);
    }

    #[test]
    fn utility_is_bounded_and_monotone_in_td(
        td1 in 0.0..50.0f64, td2 in 0.0..50.0f64, nov in 0.0..=1.0f64, dv in 0.0..50.0f64, scale in 0.1..20.0f64,
    ) {
        let w = UtilityWeights::default();
        let a = utility(td1.min(td2), nov, dv, &w, scale);
        let b = utility(td1.max(td2), nov, dv, &w, scale);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b >= a);
    }

    #[test]
    fn novelty_strictly_decreases_with_visits(z in 0.5..1e3f64, n in 0u64..200) {
        let t = NoveltyTable::new(z).unwrap();
        prop_assert!(t.novelty_of_count(n + 1) < t.novelty_of_count(n));
        prop_assert!(t.novelty_of_count(n) <= 1.0);
    }

    #[test]
    fn interference_is_symmetric(
        x1 in 0.0..1.0f64, x2 in 0.0..1.0f64, a1 in 0usize..2, a2 in 0usize..2,
        r1 in -1.0..1.0f64, r2 in -1.0..1.0f64, eps in 0.01..2.0f64, dr in 0.01..1.0f64,
    ) {
        let mut e1 = Experience::new(vec![x1], 0, a1, r1, vec![x1], 0, false, 0);
        let mut e2 = Experience::new(vec![x2], 1, a2, r2, vec![x2], 1, false, 1);
        e1.id = 0;
        e2.id = 1;
        let p = InterferenceParams::new(eps, dr).unwrap();
        prop_assert_eq!(detect_interference(&e1, &[&e2], &p), detect_interference(&e2, &[&e1], &p));
        prop_assert!(!detect_interference(&e1, &[&e1], &p));
    }

    #[test]
    fn optimal_crystal_fraction_complements_the_fixed_point(
        p in params(), u in 0.01..=1.0f64, i in 0.01..=1.0f64,
    ) {
        let f = optimal_crystal_fraction(&p, u, i).unwrap();
        let c = fixed_point(u, i, &p).unwrap().c_star;
        prop_assert!((f + c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic_lies_in_unit_interval(mut xs in prop::collection::vec(0.0..1.0f64, 2..200)) {
        xs.sort_by(f64::total_cmp);
        let d = ks_statistic(&xs, |x| x * x).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn occupancy_fractions_sum_to_one(path in prop::collection::vec(0.0..=1.0f64, 20..300)) {
        let f = occupancy_fractions(&path, &Thresholds::default(), 10).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_reproducible(seed in any::<u64>(), u in 0.0..=1.0f64) {
        let p = SdeParams::new(0.2, 0.1, 0.3, 1.0).unwrap();
        let d = Drive::constant(u, 0.5);
        prop_assert_eq!(
            simulate_trajectory(&p, &d, 0.5, 50, seed).unwrap(),
            simulate_trajectory(&p, &d, 0.5, 50, seed).unwrap()
        );
    }
}

fn consolidation(alpha: f64) -> ConsolidationConfig {
    ConsolidationConfig {
        sde: SdeParams::new(alpha, 0.05, 0.2, 1.0).unwrap(),
        weights: UtilityWeights::default(),
        epsilon: EpsilonRule::DiameterFraction(0.1),
        delta_r: 0.25,
        thresholds: Thresholds::default(),
        k_neighbors: 3,
        td_scale: 10.0,
        gamma: 0.9,
        neighbor_target: NeighborTarget::States,
        switches: ConsolidationSwitches::default(),
    }
}

#[derive(Debug, Clone)]
enum Op {
    Insert { state: usize, action: usize, reward: i8 },
    Consolidate,
    Sample,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0usize..6, 0usize..2, -1i8..=1).prop_map(|(state, action, reward)| Op::Insert { state, action, reward }),
        2 => Just(Op::Consolidate),
        1 => Just(Op::Sample),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buffers_stay_disjoint_and_within_capacity(
        ops in prop::collection::vec(op(), 1..200), alpha in 1e-6..1.0f64, seed in any::<u64>(),
    ) {
        let caps = Capacities { liquid: 12, glass: 5, crystal: 2 };
        let mut b = PhaseBuffers::new(caps, 5.0).unwrap();
        let cfg = consolidation(alpha);
        let mut q = QTable::new(6, 2, 10.0);
        q.set(3, 1, 2.0).unwrap();
        let mut rng = stream(seed, "ops");
        let sampling = SamplingConfig { batch_size: 8, ..Default::default() };
        let mut step = 0;
        for o in ops {
            match o {
                Op::Insert { state, action, reward } => {
                    let e = Experience::new(vec![state as f64 / 5.0], state, action, reward as f64,
                        vec![((state + 1) % 6) as f64 / 5.0], (state + 1) % 6, false, step);
                    b.insert(e).unwrap();
                    step += 1;
                }
                Op::Consolidate => {
                    b.consolidate(&q, &cfg, &mut rng).unwrap();
                    let [l, g, c] = b.occupancy();
                    prop_assert!(l <= caps.liquid && g <= caps.glass && c <= caps.crystal);
                }
                Op::Sample => {
                    if !b.is_empty() {
                        let draws = stratified_sample(&b, &sampling, &mut rng).unwrap();
                        prop_assert_eq!(draws.len(), 8);
                        let max = draws.iter().map(|d| d.is_weight).fold(0.0, f64::max);
                        prop_assert!((max - 1.0).abs() < 1e-12);
                        prop_assert!(draws.iter().all(|d| d.is_weight > 0.0 && d.is_weight <= 1.0 + 1e-12));
                    }
                }
            }
            let mut ids: Vec<u64> = b.iter().map(|e| e.id).collect();
            let n = ids.len();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert!(b.iter().all(|e| (0.0..=1.0).contains(&e.c.value())));
        }
    }
}
