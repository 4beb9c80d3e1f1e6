//! Data ingestion and pre-processing: hourly resampling, peak-power
//! normalization, fleet averaging, weather encoding and sliding windows.

pub mod csvio;
pub mod series;
pub mod synth;
pub mod weather;
pub mod windows;

use chrono::NaiveDate;

pub use csvio::{load_pv_csv, load_weather_csv, save_pv_csv, save_weather_csv};
pub use series::{
    aggregate_mean, normalize_by_peak, resample_hourly, Cadence, PvSeries, TimeSeries,
};
pub use synth::{generate_synthetic, Regime, RegimeWeights, SynthConfig, SyntheticData};
pub use weather::{
    encode_weather, EncodedWeather, MinMaxScaler, WeatherDescription, WeatherRecord, WeatherSeries,
    DESCRIPTION_LEVELS, NUMERIC_WIDTH, WEATHER_WIDTH,
};
pub use windows::{
    build_windows, hour_day, split_by_date, window_count, write_samples, BranchInputs,
    DatasetSplit, SampleWindow, WindowConfig,
};

use crate::error::{Error, Result};

/// Output of [`prepare_dataset`].
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: DatasetSplit,
    pub scaler: MinMaxScaler,
    /// Fleet-averaged normalized hourly generation.
    pub fleet: TimeSeries,
}

/// Hourly, normalized, fleet-averaged generation from raw unit series.
pub fn fleet_series(units: &[PvSeries]) -> Result<TimeSeries> {
    if units.is_empty() {
        return Err(Error::Data("no PV units to process".into()));
    }
    let normalized = units
        .iter()
        .map(|u| {
            let hourly = match u.cadence()? {
                Cadence::HalfHourly => resample_hourly(u)?,
                Cadence::Hourly => u.clone(),
            };
            normalize_by_peak(&hourly)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_mean(&normalized)
}

/// Restricts weather to the timestamp range covered by `fleet`.
fn crop_weather(weather: &WeatherSeries, fleet: &TimeSeries) -> Result<WeatherSeries> {
    let (Some(first), Some(last)) = (fleet.entries.first(), fleet.entries.last()) else {
        return Err(Error::Data("empty PV series".into()));
    };
    let entries = weather
        .entries
        .iter()
        .filter(|r| r.timestamp >= first.0 && r.timestamp <= last.0)
        .cloned()
        .collect();
    WeatherSeries::new(entries)
}

/// Full pre-processing chain. The weather scaler is fitted on the rows that
/// feed training windows only; pass `scaler` to reuse a stored one instead.
pub fn prepare_dataset(
    units: &[PvSeries],
    weather: &WeatherSeries,
    window: &WindowConfig,
    boundary: NaiveDate,
    scaler: Option<&MinMaxScaler>,
) -> Result<PreparedData> {
    let fleet = fleet_series(units)?;
    let weather = crop_weather(weather, &fleet)?;
    let scaler = match scaler {
        Some(s) => s.clone(),
        None => {
            let times: Vec<_> = fleet.timestamps().collect();
            let extent = windows::training_row_extent(&times, window, boundary);
            if extent == 0 {
                return Err(Error::Data(format!(
                    "no training windows before {boundary}; cannot fit weather scaling"
                )));
            }
            MinMaxScaler::fit(weather.entries.iter().take(extent))?
        }
    };
    let encoded = encode_weather(&weather, &scaler);
    let samples = build_windows(&fleet, &encoded, window)?;
    Ok(PreparedData {
        split: split_by_date(samples, boundary),
        scaler,
        fleet,
    })
}
