//! Compare the tape's gradients of the full training loss with central
//! differences on a tiny model.

use modeseq::model::Model;
use modeseq::numerics::gradcheck::{check_entries, strided_entries};
use modeseq::numerics::{ForwardCtx, ParamStore, Tape};
use modeseq::scenario::{generate_fork_scenario, ForkConfig};
use modeseq::training::{sample_loss, TrainConfig, TrainingError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = TrainConfig {
        hidden: 16,
        heads: 2,
        layers: 2,
        modes: 3,
        ..Default::default()
    };
    let fork = ForkConfig {
        history_steps: 5,
        future_steps: 10,
        ..Default::default()
    };
    let scene = generate_fork_scenario(7, &fork)?;
    let model = Model::new(config.model_config(5, 10), 7)?;

    let loss = |store: &ParamStore| -> Result<f64, TrainingError> {
        let mut m = model.clone();
        m.params = store.clone();
        let mut tape = Tape::new();
        let l = sample_loss(&m, &mut tape, &mut ForwardCtx::train(0.1, 1), &scene, &config)?;
        Ok(tape.value(l.total).data()[0])
    };
    let mut tape = Tape::new();
    let l = sample_loss(&model, &mut tape, &mut ForwardCtx::train(0.1, 1), &scene, &config)?;
    let analytic = tape.backward(l.total)?.param_grads(&model.params);

    let mut store = model.params.clone();
    let entries = strided_entries(&store, 8, 0);
    let report = check_entries(&mut store, &analytic, &entries, 1e-4, loss)?;
    println!(
        "{} of {} entries checked, max relative error {:.2e}",
        report.checked,
        store.num_scalars(),
        report.max_rel_error
    );
    if let Some((name, i, a, n)) = report.worst {
        println!("worst: {name}[{i}] analytic {a:.6e} numeric {n:.6e}");
    }
    Ok(())
}
