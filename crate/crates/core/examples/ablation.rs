//! Scores a trained model with each non-empty subset of its three inputs.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};
use matnet::eval::{ablation_table, write_ablation_csv};
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
        epochs: 100,
        batch_size: 8,
        ..TrainConfig::default()
    };
    fit(&mut model, &split.train, &cfg)?;

    let rows = ablation_table(&model, &split.test, false)?;
    write_ablation_csv(&rows, std::io::stdout())?;
    Ok(())
}
