//! EMTA against winner-take-all on a hand-built four-mode prediction.

use modeseq::scenario::Point;
use modeseq::training::{assign_labels, IgnoreVariant, MatchCriterion, Strategy};

fn straight(lateral: f64) -> Vec<Point> {
    (1..=10).map(|t| [3.0 * t as f64, lateral]).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = straight(0.0);
    // Mode 2 is closest, but mode 1 also matches and was decoded first.
    let modes = vec![straight(6.0), straight(0.02), straight(0.0), straight(-5.0)];
    let criterion = MatchCriterion::linear(0.5);

    for strategy in [Strategy::Emta, Strategy::Wta] {
        let a = assign_labels(&modes, &truth, &criterion, strategy, IgnoreVariant::None)?;
        println!("{:>4}: matches {:?}, positive {}, labels {:?}", strategy.as_str(), a.match_set, a.positive, a.labels);
    }
    for variant in [IgnoreVariant::OtherMatches, IgnoreVariant::EarlyMismatches] {
        let a = assign_labels(&modes, &truth, &criterion, Strategy::Emta, variant)?;
        println!("emta/{}: labels {:?}", variant.as_str(), a.labels);
    }
    Ok(())
}
