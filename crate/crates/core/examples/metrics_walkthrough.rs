//! Miss rate, minADE/minFDE, Brier-minFDE and (soft) mAP on three toy
//! records.

use modeseq::metrics::{average_precision, evaluate, EvalRecord};
use modeseq::scenario::Point;
use modeseq::training::MatchCriterion;

fn line(lateral: f64) -> Vec<Point> {
    (1..=6).map(|t| [3.0 * t as f64, lateral]).collect()
}

fn record(id: usize, modes: &[(f64, f64)]) -> EvalRecord {
    EvalRecord {
        scenario_id: id,
        trajectories: modes.iter().map(|&(l, _)| line(l)).collect(),
        confidences: modes.iter().map(|&(_, c)| c).collect(),
        truth: line(0.0),
        criterion: MatchCriterion::linear(0.5),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = vec![
        // Two modes match: the lower-ranked one is a duplicate.
        record(0, &[(0.05, 0.9), (0.0, 0.5), (3.0, 0.1)]),
        record(1, &[(2.5, 0.8), (0.1, 0.3)]),
        record(2, &[(4.0, 0.7), (-4.0, 0.2)]),
    ];
    for r in &records {
        println!("record {}: matches {:?}", r.scenario_id, r.matches()?);
    }
    println!("{}", evaluate(&records)?);

    // AP of a hand-ranked list: hit, miss, hit over three positives.
    println!("AP([hit, miss, hit], 3) = {:.4}", average_precision(&[true, false, true], 3));
    Ok(())
}
