//! Saves a briefly trained model and checks that the reloaded copy predicts
//! identically.

use chrono::NaiveDate;
use matnet::data::{generate_synthetic, prepare_dataset, SynthConfig, WindowConfig};
use matnet::train::{checkpoint_load, checkpoint_save, fit, initialize, TrainConfig};
use matnet::ModelConfig;

fn main() -> anyhow::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        days: 30,
        ..SynthConfig::default()
    })?;
    let boundary = NaiveDate::from_ymd_opt(2012, 5, 22).unwrap();
    let prepared = prepare_dataset(
        &data.pv,
        &data.weather,
        &WindowConfig::default(),
        boundary,
        None,
    )?;
    let split = &prepared.split;

    let config = ModelConfig::toy();
    let mut model = initialize(config.clone(), 1)?;
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 8,
        seed: 1,
        ..TrainConfig::default()
    };
    let outcome = fit(&mut model, &split.train, &cfg)?;
    let mut ckpt = outcome.checkpoint(&config);
    ckpt.scaler = Some(prepared.scaler.clone());

    let dir = std::env::temp_dir().join("matnet-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("toy.ckpt");
    checkpoint_save(&path, &ckpt)?;
    let restored = checkpoint_load(&path)?.model()?;

    let a = model.predict(&split.test[0].inputs)?;
    let b = restored.predict(&split.test[0].inputs)?;
    println!(
        "{} bytes written, predictions identical: {}",
        std::fs::metadata(&path)?.len(),
        a == b
    );
    Ok(())
}
