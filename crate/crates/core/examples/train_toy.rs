//! Trains the desk-scale model on 60 synthetic days and scores the last 15.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};
use matnet::eval::{AblationSpec, Forecasts};
use matnet::train::{fit, initialize, TrainConfig};
use matnet::ModelConfig;

fn main() -> anyhow::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        days: 60,
        ..SynthConfig::default()
    })?;
    let boundary = NaiveDate::from_ymd_opt(2012, 6, 15).unwrap();
    let split = prepare_dataset(
        &data.pv,
        &data.weather,
        &WindowConfig::default(),
        boundary,
        None,
    )?
    .split;

    let mut model = initialize(ModelConfig::toy(), 0)?;
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let outcome = fit(&mut model, &split.train, &cfg)?;
    for r in outcome.history.iter().step_by(25) {
        println!(
            "epoch {:>3}  train mse {:.5}  lr {:.1e}",
            r.epoch, r.train_mse, r.lr
        );
    }
    println!("best epoch {}", outcome.best.epoch);

    let report = Forecasts::compute(&model, &split.test, AblationSpec::ALL)?.report(false)?;
    print!("{}", report.summary("toy attention"));
    Ok(())
}
