//! Writes plot data for the best and worst test days by MASE.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};
use matnet::eval::{rank_days, write_plot_csv, AblationSpec, Forecasts, RankBy};
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
    let report = forecasts.report(false)?;
    let ranked = rank_days(&report, RankBy::Mase, false);
    for (label, day) in [("best", ranked[0]), ("worst", *ranked.last().unwrap())] {
        println!("{label} day {day}");
        write_plot_csv(&forecasts.plot(day)?, std::io::stdout())?;
    }
    Ok(())
}
