//! Train a small model on generated forks and score it on held-out scenes.
//!
//!     cargo run --release --example train_and_evaluate -- [epochs]

use modeseq::scenario::{generate_dataset, DatasetSpec};
use modeseq::training::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let spec = DatasetSpec::default();
    let train = generate_dataset(96, &spec, 1)?;
    let eval = generate_dataset(32, &spec, 2)?;

    let config = TrainConfig {
        hidden: 32,
        heads: 4,
        layers: 2,
        epochs,
        batch_size: 16,
        ..Default::default()
    };
    let mut trainer = Trainer::new(config, &train[0])?;
    println!("{} parameters", trainer.model.params.num_scalars());
    trainer.fit(&train, Some(&eval), 1, |_, row| {
        println!("epoch {:>2}  loss {:.3}  reg {:.3}  conf {:.3}", row.epoch, row.train_loss, row.reg_loss, row.conf_loss);
        if let Some(m) = &row.metrics {
            println!("          {m}");
        }
        Ok(())
    })?;
    Ok(())
}
