//! Trains every encoder kind on the same split and prints one metrics row
//! per kind.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};
use matnet::eval::{summary_header, summary_row, AblationSpec, Forecasts};
use matnet::model::EncoderKind;
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
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 8,
        ..TrainConfig::default()
    };

    print!("{}", summary_header());
    for kind in EncoderKind::ALL {
        let mut model = initialize(
            ModelConfig {
                encoder: kind,
                ..ModelConfig::toy()
            },
            0,
        )?;
        fit(&mut model, &split.train, &cfg)?;
        let report = Forecasts::compute(&model, &split.test, AblationSpec::ALL)?.report(false)?;
        print!("{}", summary_row(&kind.to_string(), &report.pooled));
    }
    Ok(())
}
