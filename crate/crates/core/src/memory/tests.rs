use super::*;
use crate::analysis::chi_square_p_value;
use crate::rng::stream;

fn exp(state: f64, action: usize, reward: f64, step: u64) -> Experience {
    Experience::new(vec![state, 0.0], 0, action, reward, vec![state, 0.0], 0, true, step)
}

fn config() -> ConsolidationConfig {
    ConsolidationConfig {
        sde: SdeParams::default(),
        weights: UtilityWeights::default(),
        epsilon: EpsilonRule::Absolute(0.05),
        delta_r: 0.25,
        thresholds: Thresholds::default(),
        k_neighbors: 10,
        td_scale: 10.0,
        gamma: 0.9,
        neighbor_target: NeighborTarget::States,
        switches: ConsolidationSwitches::default(),
    }
}

/// Utility pinned to 1: only the novelty weight is active and visits are
/// negligible against a huge Z.
fn unit_utility_config() -> ConsolidationConfig {
    ConsolidationConfig {
        weights: UtilityWeights::new(0.0, 1.0, 0.0).unwrap(),
        sde: SdeParams { sigma: 0.0, ..SdeParams::default() },
        ..config()
    }
}

fn buffers(total: usize) -> PhaseBuffers {
    PhaseBuffers::new(Capacities::split(total), 1e300).unwrap()
}

#[test]
fn insert_examples() {
    let mut b = buffers(160);
    b.insert(exp(0.0, 0, 0.0, 0)).unwrap();
    assert_eq!(b.occupancy(), [1, 0, 0]);
    b.insert(exp(0.0, 0, 0.0, 1)).unwrap();
    b.insert(exp(0.0, 0, 0.0, 2)).unwrap();
    assert_eq!(b.occupancy(), [3, 0, 0]);
    assert_eq!(b.novelty_table().count(0, 0), 3);

    let mut bad = exp(0.0, 0, 0.0, 0);
    bad.c = CrystallizationState::new(0.2).unwrap();
    assert_eq!(b.insert(bad), Err(AmcError::NonZeroInsert(0.2)));
}

#[test]
fn overflow_evicts_exactly_the_minimum_utility_member() {
    let caps = Capacities {
        liquid: 4,
        glass: 2,
        crystal: 1,
    };
    let mut b = PhaseBuffers::new(caps, 1e300).unwrap();
    // utility = w1·min(1, δ/10) with rewards as TD errors on a zero Q table
    let cfg = ConsolidationConfig {
        weights: UtilityWeights::new(1.0, 0.0, 0.0).unwrap(),
        switches: ConsolidationSwitches {
            crystallize: false,
            ..Default::default()
        },
        ..config()
    };
    for (i, r) in [5.0, 3.0, 0.5, 4.0, 2.0].iter().enumerate() {
        b.insert(exp(i as f64, 0, *r, i as u64)).unwrap();
    }
    let q = QTable::new(1, 1, 100.0);
    let rep = b.consolidate(&q, &cfg, &mut stream(1, "t")).unwrap();
    assert_eq!(rep.liquid_evictions, 1);
    let left: Vec<f64> = b.phase(Phase::Liquid).iter().map(|e| e.reward).collect();
    assert_eq!(left, vec![5.0, 3.0, 4.0, 2.0]);
}

#[test]
fn eviction_ties_go_to_the_oldest() {
    let caps = Capacities {
        liquid: 2,
        glass: 1,
        crystal: 1,
    };
    let mut b = PhaseBuffers::new(caps, 1e300).unwrap();
    let cfg = ConsolidationConfig {
        switches: ConsolidationSwitches {
            crystallize: false,
            ..Default::default()
        },
        ..config()
    };
    for step in [7, 3, 9] {
        b.insert(exp(step as f64, 0, 0.0, step)).unwrap();
    }
    b.consolidate(&QTable::new(1, 1, 10.0), &cfg, &mut stream(1, "t")).unwrap();
    let steps: Vec<u64> = b.phase(Phase::Liquid).iter().map(|e| e.insert_step).collect();
    assert_eq!(steps, vec![7, 9]);
}

#[test]
fn deterministic_recursion_and_promotion() {
    let cfg = unit_utility_config();
    let mut b = buffers(160);
    b.insert(exp(0.0, 0, 0.0, 0)).unwrap();
    let q = QTable::new(1, 1, 10.0);
    let alpha = cfg.sde.alpha;
    let first_above = (1..).find(|&n| 1.0 - (1.0 - alpha).powi(n) > 0.3).unwrap();
    for n in 1..=first_above {
        b.consolidate(&q, &cfg, &mut stream(1, "t")).unwrap();
        let e = b.iter().next().unwrap();
        let oracle = 1.0 - (1.0 - alpha).powi(n);
        assert!((e.c.value() - oracle).abs() < 1e-12, "step {n}");
        let expected = if n < first_above { Phase::Liquid } else { Phase::Glass };
        assert_eq!(b.phase_of(e.id), Some(expected), "step {n}");
    }
}

fn place(b: &mut PhaseBuffers, phase: Phase, e: Experience, c: f64) {
    let id = b.insert(e).unwrap();
    let mut moved = b.liquid.pop().unwrap();
    assert_eq!(moved.id, id);
    moved.c = CrystallizationState::new(c).unwrap();
    b.phase_mut(phase).push(moved);
}

#[test]
fn persistent_interference_evicts_crystal_on_the_twentieth_pass() {
    let mut b = buffers(160);
    place(&mut b, Phase::Crystal, exp(0.0, 0, 0.0, 0), 0.99);
    // negligible rates pin both states; only the counter moves
    let cfg = ConsolidationConfig {
        sde: SdeParams {
            alpha: 1e-9,
            beta: 1e-9,
            sigma: 0.0,
            dt: 1.0,
        },
        ..config()
    };
    b.insert(exp(0.0, 0, 1.0, 1)).unwrap();
    let q = QTable::new(1, 1, 10.0);
    let crystal_id = b.phase(Phase::Crystal)[0].id;
    for n in 1..=20 {
        let rep = b.consolidate(&q, &cfg, &mut stream(1, "t")).unwrap();
        if n < 20 {
            assert_eq!(b.phase_of(crystal_id), Some(Phase::Crystal));
            assert_eq!(b.phase(Phase::Crystal)[0].interference_count, n);
        } else {
            assert_eq!(rep.crystal_evictions, 1);
            assert_eq!(b.phase_of(crystal_id), None);
        }
    }
}

#[test]
fn interference_counter_resets_without_interference() {
    let mut b = buffers(160);
    place(&mut b, Phase::Crystal, exp(0.0, 0, 0.0, 0), 0.99);
    let cfg = config();
    let q = QTable::new(1, 1, 10.0);
    b.insert(exp(0.0, 0, 1.0, 1)).unwrap();
    for _ in 0..5 {
        b.consolidate(&q, &cfg, &mut stream(1, "t")).unwrap();
    }
    assert_eq!(b.phase(Phase::Crystal)[0].interference_count, 5);
    // remove the contradiction
    b.liquid.clear();
    b.consolidate(&q, &cfg, &mut stream(1, "t")).unwrap();
    assert_eq!(b.phase(Phase::Crystal)[0].interference_count, 0);
}

#[test]
fn hysteresis_band_keeps_glass() {
    let mut b = buffers(160);
    place(&mut b, Phase::Glass, exp(0.0, 0, 0.0, 0), 0.29);
    let frozen = ConsolidationConfig {
        switches: ConsolidationSwitches {
            crystallize: false,
            ..Default::default()
        },
        ..config()
    };
    let q = QTable::new(1, 1, 10.0);
    b.consolidate(&q, &frozen, &mut stream(1, "t")).unwrap();
    assert_eq!(b.occupancy(), [0, 1, 0]);
    b.glass[0].c = CrystallizationState::new(0.24).unwrap();
    let rep = b.consolidate(&q, &frozen, &mut stream(1, "t")).unwrap();
    assert_eq!(rep.demotions_gl, 1);
    assert_eq!(b.occupancy(), [1, 0, 0]);
}

#[test]
fn full_crystal_defers_promotion() {
    let caps = Capacities {
        liquid: 4,
        glass: 4,
        crystal: 1,
    };
    let mut b = PhaseBuffers::new(caps, 1e300).unwrap();
    place(&mut b, Phase::Crystal, exp(0.0, 0, 0.0, 0), 0.9);
    place(&mut b, Phase::Glass, exp(1.0, 0, 0.0, 1), 0.8);
    let frozen = ConsolidationConfig {
        switches: ConsolidationSwitches {
            crystallize: false,
            ..Default::default()
        },
        ..config()
    };
    let rep = b.consolidate(&QTable::new(1, 1, 10.0), &frozen, &mut stream(1, "t")).unwrap();
    assert_eq!(rep.deferred_promotions, 1);
    assert_eq!(b.occupancy(), [0, 1, 1]);
}

#[test]
fn no_thrash_with_zero_noise() {
    // U = 1, I = 0 drives c toward 1 monotonically: no glass↔liquid bouncing
    let mut b = buffers(160);
    let cfg = unit_utility_config();
    for i in 0..20 {
        place(&mut b, Phase::Glass, exp(i as f64, 0, 0.0, i), 0.26 + 0.001 * i as f64);
    }
    let q = QTable::new(1, 1, 10.0);
    let mut last: HashMap<u64, Phase> = b.iter().map(|e| (e.id, Phase::Glass)).collect();
    let mut changes: HashMap<u64, usize> = HashMap::new();
    for _ in 0..100 {
        b.consolidate(&q, &cfg, &mut stream(1, "t")).unwrap();
        for e in b.iter() {
            let p = b.phase_of(e.id).unwrap();
            if last[&e.id] != p {
                *changes.entry(e.id).or_default() += 1;
            }
            last.insert(e.id, p);
        }
    }
    // glass → crystal is the only move
    assert!(changes.values().all(|&n| n <= 1));
    assert_eq!(b.occupancy()[0], 0);
}

#[test]
fn effective_lr_examples() {
    assert_eq!(effective_lr(0.3, CrystallizationState::LIQUID), 0.3);
    assert_eq!(effective_lr(0.3, CrystallizationState::new(1.0).unwrap()), 0.0);
    let r = effective_lr(1.0, CrystallizationState::new(0.7).unwrap());
    assert!((r - 0.09).abs() < 1e-15);
}

#[test]
fn stratum_sizes_examples() {
    let with = |b| stratum_sizes(&SamplingConfig {
        batch_size: b,
        ..Default::default()
    });
    assert_eq!(with(20), [14, 5, 1]);
    assert_eq!(with(32), [22, 8, 2]);
    assert_eq!(with(1), [0, 0, 1]);
    for b in 1..200 {
        assert_eq!(with(b).iter().sum::<usize>(), b);
    }
}

#[test]
fn equal_priorities_give_unit_weights() {
    let mut b = buffers(160);
    for i in 0..10 {
        b.insert(exp(i as f64, 0, 0.0, i)).unwrap();
    }
    for i in 0..5 {
        place(&mut b, Phase::Glass, exp(i as f64, 0, 0.0, 20 + i), 0.5);
    }
    place(&mut b, Phase::Crystal, exp(0.0, 0, 0.0, 40), 0.9);
    let cfg = SamplingConfig {
        batch_size: 20,
        ..Default::default()
    };
    let batch = stratified_sample(&b, &cfg, &mut stream(3, "s")).unwrap();
    assert_eq!(batch.len(), 20);
    let per_phase = Phase::ALL.map(|p| batch.iter().filter(|s| s.phase == p).count());
    assert_eq!(per_phase, [14, 5, 1]);
    assert!(batch.iter().all(|s| (s.is_weight - 1.0).abs() < 1e-12));
}

#[test]
fn empty_phases_pass_their_quota_on() {
    let mut b = buffers(160);
    for i in 0..3 {
        b.insert(exp(i as f64, 0, 0.0, i)).unwrap();
    }
    let cfg = SamplingConfig {
        batch_size: 20,
        ..Default::default()
    };
    let batch = stratified_sample(&b, &cfg, &mut stream(3, "s")).unwrap();
    assert_eq!(batch.len(), 20);
    assert!(batch.iter().all(|s| s.phase == Phase::Liquid));

    let mut only_crystal = buffers(160);
    place(&mut only_crystal, Phase::Crystal, exp(0.0, 0, 0.0, 0), 0.9);
    let batch = stratified_sample(&only_crystal, &cfg, &mut stream(3, "s")).unwrap();
    assert_eq!(batch.len(), 20);

    assert_eq!(stratified_sample(&buffers(16), &cfg, &mut stream(3, "s")), Err(AmcError::EmptyBuffers));
}

#[test]
fn liquid_draws_follow_priority_law() {
    let mut b = buffers(160);
    for (i, d) in [1.0, 2.0].iter().enumerate() {
        b.insert(exp(i as f64, 0, 0.0, i as u64)).unwrap();
        b.liquid[i].td_error = *d;
    }
    let cfg = SamplingConfig {
        batch_size: 10,
        ..Default::default()
    };
    let mut counts = [0u64; 2];
    let mut rng = stream(5, "s");
    for _ in 0..10_000 {
        for s in stratified_sample(&b, &cfg, &mut rng).unwrap() {
            counts[s.index] += 1;
        }
    }
    let ratio = 2f64.powf(0.6);
    let p = [1.0 / (1.0 + ratio), ratio / (1.0 + ratio)];
    // three-sigma multinomial check on the larger share, plus chi-square
    let n = (counts[0] + counts[1]) as f64;
    let sd = (p[1] * p[0] / n).sqrt();
    assert!((counts[1] as f64 / n - p[1]).abs() < 3.0 * sd);
    assert!(chi_square_p_value(&counts, &p).unwrap() > 0.01);
}

#[test]
fn snapshot_round_trip() {
    let mut b = buffers(160);
    for i in 0..5 {
        b.insert(exp(i as f64, 0, i as f64, i)).unwrap();
    }
    b.consolidate(&QTable::new(1, 1, 10.0), &config(), &mut stream(1, "t")).unwrap();
    let json = b.to_snapshot_json().unwrap();
    assert_eq!(PhaseBuffers::from_snapshot_json(&json).unwrap(), b);
    let bumped = json.replacen("\"version\":1", "\"version\":99", 1);
    assert!(PhaseBuffers::from_snapshot_json(&bumped).is_err());
}
