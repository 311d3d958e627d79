//! Interrupt training after one epoch, round-trip through a checkpoint and
//! finish; the result matches an uninterrupted run.

use modeseq::checkpoint;
use modeseq::scenario::{generate_dataset, DatasetSpec, ForkConfig};
use modeseq::training::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = DatasetSpec {
        fork: ForkConfig {
            history_steps: 6,
            future_steps: 12,
            ..Default::default()
        },
        ..Default::default()
    };
    let data = generate_dataset(16, &spec, 9)?;
    let config = TrainConfig {
        hidden: 16,
        heads: 2,
        layers: 2,
        modes: 4,
        epochs: 3,
        batch_size: 4,
        ..Default::default()
    };

    let mut straight = Trainer::new(config.clone(), &data[0])?;
    straight.fit(&data, None, 0, |_, _| Ok(()))?;

    let mut first = Trainer::new(config, &data[0])?;
    let row = first.run_epoch(&data)?;
    first.log.push(row);
    let path = std::env::temp_dir().join("modeseq_example.mseq");
    checkpoint::save(&path, &first)?;
    let mut resumed = checkpoint::load(&path)?;
    resumed.fit(&data, None, 0, |_, _| Ok(()))?;

    let a = straight.log.last().unwrap().train_loss;
    let b = resumed.log.last().unwrap().train_loss;
    println!("uninterrupted {a:.9}  resumed {b:.9}  gap {:.1e}", (a - b).abs());
    Ok(())
}
