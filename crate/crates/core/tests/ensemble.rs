use modeseq::ensemble::{fuse, ClassFactors, FusionConfig};
use modeseq::model::ScenePrediction;
use modeseq::scenario::{AgentClass, Point};
use modeseq::training::MatchCriterion;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEPS: usize = 8;

fn criterion() -> MatchCriterion {
    MatchCriterion::velocity_aware(9.0, 0.4, 0.5)
}

/// Modes fanned out by `spread` meters of lateral offset per step.
fn fan(rng: &mut ChaCha8Rng, modes: usize, spread: f64) -> ScenePrediction {
    let (s, c) = 0.4f64.sin_cos();
    ScenePrediction {
        trajectories: (0..modes)
            .map(|k| {
                let lateral = (k as f64 - modes as f64 / 2.0) * spread;
                (1..=STEPS)
                    .map(|t| {
                        let along = 4.5 * t as f64 + rng.gen_range(-0.01..0.01);
                        let side = lateral * t as f64;
                        [c * along - s * side, s * along + c * side]
                    })
                    .collect()
            })
            .collect(),
        confidences: (0..modes).map(|_| rng.gen_range(0.05..0.95)).collect(),
    }
}

fn in_hull(point: Point, members: &[Point]) -> bool {
    // Weighted means are bounded by the members' coordinate-wise extremes.
    (0..2).all(|d| {
        let lo = members.iter().map(|m| m[d]).fold(f64::INFINITY, f64::min);
        let hi = members.iter().map(|m| m[d]).fold(f64::NEG_INFINITY, f64::max);
        point[d] >= lo - 1e-9 && point[d] <= hi + 1e-9
    })
}

#[test]
fn single_model_without_overlap_is_only_reordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = fan(&mut rng, 6, 2.0);
        let out = fuse(std::slice::from_ref(&p), AgentClass::Vehicle, &criterion(), &FusionConfig::default()).unwrap();
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| p.confidences[b].total_cmp(&p.confidences[a]));
        assert_eq!(out.prediction.confidences, order.iter().map(|&k| p.confidences[k]).collect::<Vec<_>>());
        assert_eq!(out.prediction.trajectories, order.iter().map(|&k| p.trajectories[k].clone()).collect::<Vec<_>>());
    }
}

#[test]
fn duplicate_models_reproduce_their_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = fan(&mut rng, 6, 2.0);
        let out = fuse(&[p.clone(), p.clone()], AgentClass::Vehicle, &criterion(), &FusionConfig::default()).unwrap();
        assert_eq!(out.clusters.len(), 6);
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| p.confidences[b].total_cmp(&p.confidences[a]));
        for (i, &k) in order.iter().enumerate() {
            assert_eq!(out.prediction.confidences[i], p.confidences[k]);
            for (a, b) in out.prediction.trajectories[i].iter().zip(&p.trajectories[k]) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn two_close_modes_fuse_to_weighted_mean() {
    let a: Vec<Point> = (1..=STEPS).map(|t| [4.0 * t as f64, 0.0]).collect();
    let delta = [0.03, 0.02];
    let b: Vec<Point> = a.iter().map(|p| [p[0] + delta[0], p[1] + delta[1]]).collect();
    let p = ScenePrediction {
        trajectories: vec![a.clone(), b],
        confidences: vec![0.6, 0.2],
    };
    let c = MatchCriterion::velocity_aware(12.0, 0.0, 0.5);
    let out = fuse(&[p], AgentClass::Pedestrian, &c, &FusionConfig::default()).unwrap();
    assert_eq!(out.clusters.len(), 1);
    for (f, y) in out.prediction.trajectories[0].iter().zip(&a) {
        assert!((f[0] - (y[0] + 0.25 * delta[0])).abs() < 1e-12);
        assert!((f[1] - (y[1] + 0.25 * delta[1])).abs() < 1e-12);
    }
}

#[test]
fn class_factor_widens_the_thresholds() {
    let a: Vec<Point> = (1..=STEPS).map(|t| [4.0 * t as f64, 0.0]).collect();
    // 1.2x the unscaled lateral threshold at every step
    let base = MatchCriterion::velocity_aware(12.0, 0.0, 0.5);
    let b: Vec<Point> = a
        .iter()
        .enumerate()
        .map(|(i, p)| match base.thresholds(i + 1, STEPS).unwrap() {
            modeseq::training::Thresholds::LateralLongitudinal { lateral, .. } => [p[0], p[1] + 1.2 * lateral],
            _ => unreachable!(),
        })
        .collect();
    let p = ScenePrediction {
        trajectories: vec![a, b],
        confidences: vec![0.5, 0.4],
    };
    let wide = fuse(std::slice::from_ref(&p), AgentClass::Vehicle, &base, &FusionConfig::default()).unwrap();
    assert_eq!(wide.clusters.len(), 1);
    let narrow = FusionConfig {
        factors: ClassFactors {
            vehicle: 1.0,
            ..ClassFactors::default()
        },
        ..FusionConfig::default()
    };
    assert_eq!(fuse(&[p], AgentClass::Vehicle, &base, &narrow).unwrap().clusters.len(), 2);
}

proptest! {
    #[test]
    fn fused_points_stay_in_member_hulls(seed in 0u64..5000, models in 1usize..4, spread in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<ScenePrediction> = (0..models).map(|_| fan(&mut rng, 6, spread)).collect();
        let out = fuse(&preds, AgentClass::Cyclist, &criterion(), &FusionConfig::default()).unwrap();
        prop_assert!(out.prediction.confidences.len() <= 6);
        for (cluster, c) in out.clusters.iter().zip(&out.prediction.confidences) {
            prop_assert!(*c > 0.0 && *c <= 1.0);
            for t in 0..STEPS {
                let members: Vec<Point> = cluster.members.iter().map(|&(m, k)| preds[m].trajectories[k][t]).collect();
                prop_assert!(in_hull(cluster.fused[t], &members));
            }
        }
        prop_assert!(out.prediction.confidences.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn source_order_does_not_matter(seed in 0u64..5000, spread in 0.0f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds: Vec<ScenePrediction> = (0..3).map(|_| fan(&mut rng, 6, spread)).collect();
        let mut rev = preds.clone();
        rev.reverse();
        let a = fuse(&preds, AgentClass::Vehicle, &criterion(), &FusionConfig::default()).unwrap();
        let b = fuse(&rev, AgentClass::Vehicle, &criterion(), &FusionConfig::default()).unwrap();
        prop_assert_eq!(a.prediction.confidences.len(), b.prediction.confidences.len());
        for (x, y) in a.prediction.confidences.iter().zip(&b.prediction.confidences) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
