//! Deterministic synthetic PV fleet and weather generator.
//!
//! Each day draws a sky regime. Clear-sky production is a half-sine over the
//! daylight hours with its peak bucket centred on solar noon, truncated to 0
//! at night; cloudy and rainy days attenuate it. Weather columns follow the
//! regime, and GHI is proportional to normalized production.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::series::PvSeries;
use super::weather::{WeatherDescription, WeatherRecord, WeatherSeries, NUMERIC_WIDTH};
use crate::error::{Error, Result};

const SOLAR_NOON: f64 = 12.5;
const BASE_HALF_DAYLIGHT: f64 = 6.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Clear,
    Cloudy,
    Rainy,
}

/// Relative frequencies of the daily sky regimes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeWeights {
    pub clear: f64,
    pub cloudy: f64,
    pub rainy: f64,
}

impl RegimeWeights {
    pub fn clear_only() -> Self {
        RegimeWeights {
            clear: 1.0,
            cloudy: 0.0,
            rainy: 0.0,
        }
    }
}

impl Default for RegimeWeights {
    fn default() -> Self {
        RegimeWeights {
            clear: 0.5,
            cloudy: 0.35,
            rainy: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub days: usize,
    pub start: NaiveDate,
    pub seed: u64,
    pub regimes: RegimeWeights,
    /// `(unit_id, capacity_kwp)` per simulated unit.
    pub units: Vec<(String, f64)>,
    /// Vary day length over the year.
    pub seasonal: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 92,
            start: NaiveDate::from_ymd_opt(2012, 5, 1).expect("valid date"),
            seed: 0,
            regimes: RegimeWeights::default(),
            units: vec![("33".into(), 1.5), ("47".into(), 2.2), ("73".into(), 3.0)],
            seasonal: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    /// Half-hourly generation per unit.
    pub pv: Vec<PvSeries>,
    /// Hourly weather stamped at the end of each hour, aligned with the
    /// hourly-resampled PV.
    pub weather: WeatherSeries,
    pub regimes: Vec<Regime>,
}

/// Half-length of daylight in hours for a calendar day.
pub fn half_daylight(day: NaiveDate, seasonal: bool) -> f64 {
    if !seasonal {
        return BASE_HALF_DAYLIGHT;
    }
    // longest day near 21 December (southern hemisphere)
    let phase = 2.0 * PI * (day.ordinal() as f64 - 355.0) / 365.25;
    BASE_HALF_DAYLIGHT + 1.25 * phase.cos()
}

/// Normalized clear-sky production per hour bucket `[h, h+1)`.
pub fn clear_sky_profile(half_daylight: f64) -> [f64; 24] {
    let mut out = [0.0; 24];
    for (h, slot) in out.iter_mut().enumerate() {
        let offset = h as f64 + 0.5 - SOLAR_NOON;
        if offset.abs() < half_daylight {
            *slot = (PI * (offset + half_daylight) / (2.0 * half_daylight))
                .sin()
                .max(0.0);
        }
    }
    out
}

fn draw_regime(rng: &mut impl Rng, w: &RegimeWeights) -> Regime {
    let total = w.clear + w.cloudy + w.rainy;
    let u = rng.gen::<f64>() * total;
    if u < w.clear {
        Regime::Clear
    } else if u < w.clear + w.cloudy {
        Regime::Cloudy
    } else {
        Regime::Rainy
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    if cfg.days < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 2 days, got {}",
            cfg.days
        )));
    }
    let w = cfg.regimes;
    if [w.clear, w.cloudy, w.rainy].iter().any(|v| !(*v >= 0.0))
        || w.clear + w.cloudy + w.rainy <= 0.0
    {
        return Err(Error::Config(format!("invalid regime weights {w:?}")));
    }
    if cfg.units.is_empty() || cfg.units.iter().any(|(_, c)| !(*c > 0.0)) {
        return Err(Error::Config(
            "synthetic units need positive capacities".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut unit_entries: Vec<Vec<(NaiveDateTime, f64)>> = vec![Vec::new(); cfg.units.len()];
    let mut weather = Vec::with_capacity(cfg.days * 24);
    let mut regimes = Vec::with_capacity(cfg.days);

    for d in 0..cfg.days {
        let day = cfg.start + Duration::days(d as i64);
        let midnight = day.and_hms_opt(0, 0, 0).expect("valid time");
        let regime = draw_regime(&mut rng, &cfg.regimes);
        regimes.push(regime);
        let season = half_daylight(day, cfg.seasonal) - BASE_HALF_DAYLIGHT;
        let profile = clear_sky_profile(half_daylight(day, cfg.seasonal));
        let day_factor = match regime {
            Regime::Clear => 1.0,
            Regime::Cloudy => rng.gen_range(0.45..0.8),
            Regime::Rainy => rng.gen_range(0.1..0.35),
        };

        for (h, &shape) in profile.iter().enumerate() {
            let atten = match regime {
                Regime::Clear => 1.0,
                Regime::Cloudy => day_factor * rng.gen_range(0.85..1.0),
                Regime::Rainy => day_factor * rng.gen_range(0.7..1.0),
            };
            let production = shape * atten;
            let hour_start = midnight + Duration::hours(h as i64);
            for (u, (_, cap)) in cfg.units.iter().enumerate() {
                let half = 0.5 * cap * production;
                unit_entries[u].push((hour_start, half));
                unit_entries[u].push((hour_start + Duration::minutes(30), half));
            }

            let clouds = round1(match regime {
                Regime::Clear => rng.gen_range(0.0..10.0),
                Regime::Cloudy => rng.gen_range(40.0..90.0),
                Regime::Rainy => rng.gen_range(85.0..100.0),
            });
            let rain = match regime {
                Regime::Rainy if rng.gen_bool(0.8) => round1(rng.gen_range(0.3..6.0)),
                _ => 0.0,
            };
            let humidity = round1(match regime {
                Regime::Clear => rng.gen_range(35.0..60.0),
                Regime::Cloudy => rng.gen_range(55.0..80.0),
                Regime::Rainy => rng.gen_range(85.0..98.0),
            });
            let pressure = round1(match regime {
                Regime::Clear => rng.gen_range(1015.0..1025.0),
                Regime::Cloudy => rng.gen_range(1008.0..1016.0),
                Regime::Rainy => rng.gen_range(998.0..1008.0),
            });
            let wind = round1(match regime {
                Regime::Clear => rng.gen_range(1.0..5.0),
                Regime::Cloudy => rng.gen_range(2.0..7.0),
                Regime::Rainy => rng.gen_range(4.0..11.0),
            });
            let gust = round1(wind * rng.gen_range(1.2..1.6));
            let wind_deg = rng.gen_range(0.0..360.0f64).floor();
            let temp = round1(291.0 + 4.0 * season + 6.0 * production + rng.gen_range(-0.5..0.5));
            let description = match regime {
                Regime::Clear if clouds < 5.0 => WeatherDescription::SkyIsClear,
                Regime::Clear => WeatherDescription::FewClouds,
                Regime::Cloudy if clouds < 50.0 => WeatherDescription::ScatteredClouds,
                Regime::Cloudy if clouds < 80.0 => WeatherDescription::BrokenClouds,
                Regime::Cloudy => WeatherDescription::OvercastClouds,
                Regime::Rainy if rain == 0.0 => WeatherDescription::OvercastClouds,
                Regime::Rainy if rain < 1.0 => WeatherDescription::LightRain,
                Regime::Rainy if rain < 4.0 => WeatherDescription::ModerateRain,
                Regime::Rainy => WeatherDescription::HeavyIntensityRain,
            };

            let mut numeric = [0.0; NUMERIC_WIDTH];
            numeric.copy_from_slice(&[
                temp,
                round1(temp - 0.3 * wind),
                pressure,
                humidity,
                round1(temp - (100.0 - humidity) / 5.0),
                wind,
                wind_deg,
                gust,
                clouds,
                rain,
                900.0 * shape * atten * atten,
                150.0 * shape * (0.5 + 0.5 * clouds / 100.0),
                1000.0 * production,
            ]);
            weather.push(WeatherRecord {
                timestamp: hour_start + Duration::hours(1),
                numeric,
                description,
            });
        }
    }

    let pv = cfg
        .units
        .iter()
        .zip(unit_entries)
        .map(|((id, cap), entries)| PvSeries::new(id.clone(), *cap, entries))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticData {
        pv,
        weather: WeatherSeries::new(weather)?,
        regimes,
    })
}
