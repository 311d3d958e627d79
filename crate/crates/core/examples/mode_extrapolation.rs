//! Decode more modes than the model was trained with. Without
//! rearrangement the first K modes do not change, so min-over-modes metrics
//! can only improve as K' grows.
//!
//!     cargo run --release --example mode_extrapolation

use modeseq::metrics::evaluate;
use modeseq::scenario::{generate_dataset, DatasetSpec};
use modeseq::training::{eval_records, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = DatasetSpec::default();
    let train = generate_dataset(64, &spec, 3)?;
    let eval = generate_dataset(32, &spec, 4)?;
    let config = TrainConfig {
        hidden: 32,
        heads: 4,
        layers: 2,
        epochs: 2,
        rearrange: false,
        ..Default::default()
    };
    let mut trainer = Trainer::new(config.clone(), &train[0])?;
    trainer.fit(&train, None, 0, |_, _| Ok(()))?;

    let model = &trainer.model;
    let six = model.predict(&eval[0], 6, false)?;
    let twelve = model.predict(&eval[0], 12, false)?;
    assert_eq!(six.trajectories[..], twelve.trajectories[..6]);
    println!("first 6 of 12 modes equal the 6-mode decoding");

    for k in [6, 12, 18, 24] {
        let records = eval_records(model, &eval, k, false, config.match_family)?;
        let m = evaluate(&records)?;
        println!("K'={k:>2}  MR {:.3}  minADE {:.3}  minFDE {:.3}", m.miss_rate, m.min_ade, m.min_fde);
    }
    Ok(())
}
