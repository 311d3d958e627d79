use modeseq::metrics::{
    brier_min_fde, evaluate, mean_average_precision, min_displacement, miss_rate, EvalRecord, MetricsError,
};
use modeseq::scenario::Point;
use modeseq::training::MatchCriterion;
use proptest::prelude::*;

mod common;
use common::{brute_force_ap, matches_directly};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEPS: usize = 6;
const DT: f64 = 0.5;

fn truth() -> Vec<Point> {
    (1..=STEPS).map(|t| [3.0 * t as f64, 0.0]).collect()
}

fn shifted(dy: f64) -> Vec<Point> {
    truth().iter().map(|p| [p[0], p[1] + dy]).collect()
}

fn record(id: usize, modes: Vec<(f64, f64)>) -> EvalRecord {
    EvalRecord {
        scenario_id: id,
        trajectories: modes.iter().map(|&(dy, _)| shifted(dy)).collect(),
        confidences: modes.iter().map(|&(_, c)| c).collect(),
        truth: truth(),
        criterion: MatchCriterion::linear(DT),
    }
}

fn random_instance(rng: &mut ChaCha8Rng, tied: bool) -> Vec<EvalRecord> {
    let n = rng.gen_range(1..=5);
    (0..n)
        .map(|id| {
            let k = rng.gen_range(1..=4);
            let modes = (0..k)
                .map(|_| {
                    let dy = if rng.gen_bool(0.5) { rng.gen_range(-0.15..0.15) } else { rng.gen_range(1.0..4.0) };
                    let c = if tied { rng.gen_range(1..=4) as f64 / 4.0 } else { rng.gen() };
                    (dy, c)
                })
                .collect();
            record(id, modes)
        })
        .collect()
}

#[test]
fn map_equals_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..1500 {
        let records = random_instance(&mut rng, i % 2 == 0);
        let hard = mean_average_precision(&records, false).unwrap();
        let soft = mean_average_precision(&records, true).unwrap();
        assert!((hard - brute_force_ap(&records, false, DT)).abs() < 1e-9, "instance {i}");
        assert!((soft - brute_force_ap(&records, true, DT)).abs() < 1e-9, "instance {i}");
        assert!(soft >= hard);
    }
}

#[test]
fn duplicate_match_costs_map_but_not_soft_map() {
    // A trailing duplicate sits after the last hit, so the envelope ignores it.
    let records = vec![record(0, vec![(0.0, 0.9), (0.05, 0.8)])];
    assert_eq!(mean_average_precision(&records, true).unwrap(), 1.0);
    assert_eq!(mean_average_precision(&records, false).unwrap(), 1.0);
    // The duplicate only hurts when a later record's hit ranks below it.
    let records = vec![record(0, vec![(0.0, 0.9), (0.05, 0.8)]), record(1, vec![(0.0, 0.7)])];
    let hard = mean_average_precision(&records, false).unwrap();
    assert!((hard - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    assert_eq!(mean_average_precision(&records, true).unwrap(), 1.0);
}

#[test]
fn exact_and_hopeless_predictions() {
    let exact: Vec<EvalRecord> = (0..4).map(|i| record(i, vec![(0.0, 1.0), (9.0, 0.1)])).collect();
    let r = evaluate(&exact).unwrap();
    assert_eq!(r.miss_rate, 0.0);
    assert_eq!((r.map, r.soft_map), (1.0, 1.0));
    assert_eq!((r.min_ade, r.min_fde), (0.0, 0.0));
    assert_eq!(r.brier_min_fde, 0.0);
    let far: Vec<EvalRecord> = (0..4).map(|i| record(i, vec![(50.0, 0.5)])).collect();
    assert_eq!(miss_rate(&far).unwrap(), 1.0);
    assert_eq!(mean_average_precision(&far, true).unwrap(), 0.0);
}

#[test]
fn displacement_and_brier_values() {
    let r = vec![record(0, vec![(1.0, 0.0), (3.0, 0.5)])];
    assert_eq!(min_displacement(&r).unwrap(), (1.0, 1.0));
    assert_eq!(brier_min_fde(&r).unwrap(), 2.0);
    let r = vec![record(0, vec![(0.0, 1.0)])];
    assert_eq!(brier_min_fde(&r).unwrap(), 0.0);
}

#[test]
fn brier_matches_straight_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let records = random_instance(&mut rng, false);
        let mut expected = 0.0;
        for r in &records {
            let fde: Vec<f64> = r
                .trajectories
                .iter()
                .map(|t| {
                    let (p, y) = (t[STEPS - 1], r.truth[STEPS - 1]);
                    ((p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2)).sqrt()
                })
                .collect();
            let best = (0..fde.len()).fold(0, |b, k| if fde[k] < fde[b] { k } else { b });
            expected += fde[best] + (1.0 - r.confidences[best]).powi(2);
        }
        expected /= records.len() as f64;
        assert!((brier_min_fde(&records).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn miss_rate_matches_direct_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let records = random_instance(&mut rng, false);
        let misses = records
            .iter()
            .filter(|r| !(0..r.trajectories.len()).any(|k| matches_directly(r, k, DT)))
            .count();
        assert_eq!(miss_rate(&records).unwrap(), misses as f64 / records.len() as f64);
    }
}

#[test]
fn invalid_input_is_rejected() {
    assert!(matches!(miss_rate(&[]), Err(MetricsError::Empty)));
    let mut r = record(4, vec![(0.0, 0.5)]);
    r.confidences.push(0.1);
    assert!(matches!(evaluate(&[r]), Err(MetricsError::Record { id: 4, .. })));
    let mut r = record(5, vec![(0.0, 0.5)]);
    r.trajectories[0].pop();
    assert!(evaluate(&[r]).is_err());
}

proptest! {
    #[test]
    fn metrics_ignore_record_order_and_are_pure(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = random_instance(&mut rng, false);
        let a = evaluate(&records).unwrap();
        let mut reversed = records.clone();
        reversed.reverse();
        let b = evaluate(&reversed).unwrap();
        prop_assert_eq!(a.miss_rate, b.miss_rate);
        prop_assert!((a.map - b.map).abs() < 1e-12 && (a.soft_map - b.soft_map).abs() < 1e-12);
        prop_assert!((a.min_ade - b.min_ade).abs() < 1e-12 && (a.min_fde - b.min_fde).abs() < 1e-12);
        let again = evaluate(&records).unwrap();
        prop_assert_eq!(a.map.to_bits(), again.map.to_bits());
        prop_assert!(a.soft_map >= a.map);
    }

    #[test]
    fn extra_modes_never_hurt_min_metrics(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = random_instance(&mut rng, false);
        let more: Vec<EvalRecord> = records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.trajectories.push(shifted(rng.gen_range(-2.0..2.0)));
                r.confidences.push(rng.gen());
                r
            })
            .collect();
        let (a, b) = (evaluate(&records).unwrap(), evaluate(&more).unwrap());
        prop_assert!(b.min_ade <= a.min_ade && b.min_fde <= a.min_fde && b.miss_rate <= a.miss_rate);
    }
}
