//! Compares the trained model against the persistence forecast with the
//! Diebold–Mariano test.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};
use matnet::eval::{diebold_mariano, AblationSpec, DmLoss, Forecasts};
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
    let forecasts = Forecasts::compute(&model, &split.test, AblationSpec::ALL)?;

    // Persistence: tomorrow looks like the last 24 observed hours.
    let persistence: Vec<f64> = split
        .test
        .iter()
        .flat_map(|s| s.inputs.pv.data().iter().zip(&s.target).map(|(p, y)| p - y))
        .collect();

    for loss in [DmLoss::Squared, DmLoss::Absolute] {
        let out = diebold_mariano(&forecasts.errors(), &persistence, loss, 24)?;
        println!(
            "{loss:?}: statistic {:?}, p-value {:.4}, fallback {}",
            out.statistic, out.p_value, out.variance_fallback
        );
    }
    Ok(())
}
