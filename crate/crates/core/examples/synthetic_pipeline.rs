//! Generates a synthetic fleet, runs the preprocessing chain and prints the
//! shape of the resulting windows.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};

fn main() -> anyhow::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        days: 30,
        ..SynthConfig::default()
    })?;
    println!(
        "{} units, {} weather rows",
        data.pv.len(),
        data.weather.len()
    );

    let boundary = NaiveDate::from_ymd_opt(2012, 5, 22).unwrap();
    let prepared = prepare_dataset(
        &data.pv,
        &data.weather,
        &WindowConfig::default(),
        boundary,
        None,
    )?;
    let split = &prepared.split;
    println!(
        "train windows {}, test windows {}",
        split.train.len(),
        split.test.len()
    );

    let s = &split.train[0];
    println!(
        "first window forecasts {}: pv {:?}, weather history {:?}, weather forecast {:?}",
        s.day,
        s.inputs.pv.shape(),
        s.inputs.hw.shape(),
        s.inputs.fw.shape()
    );
    let peak = s.target.iter().cloned().fold(f64::MIN, f64::max);
    println!("target peak {peak:.3}");
    Ok(())
}
