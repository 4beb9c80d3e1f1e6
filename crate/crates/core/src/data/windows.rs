use std::io::{self, Write};

use chrono::{Duration, NaiveDate, NaiveDateTime};

use super::series::TimeSeries;
use super::weather::{EncodedWeather, WEATHER_WIDTH};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sliding-window parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    /// History length (the window width).
    pub step_in: usize,
    /// Distance between consecutive window starts.
    pub stride: usize,
    /// Forecast horizon.
    pub step_out: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            step_in: 24,
            stride: 24,
            step_out: 24,
        }
    }
}

/// The three model inputs: PV history, weather history and weather forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchInputs {
    /// `step_in × 1`
    pub pv: Tensor,
    /// `step_in × weather width`
    pub hw: Tensor,
    /// `step_out × weather width`
    pub fw: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    /// Day of the first forecast hour (see [`hour_day`]).
    pub day: NaiveDate,
    pub inputs: BranchInputs,
    pub target: Vec<f64>,
    pub target_times: Vec<NaiveDateTime>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    pub boundary: Option<NaiveDate>,
}

/// Day an hourly timestamp belongs to. Timestamps mark the end of their
/// hour, so midnight closes the previous day.
pub fn hour_day(t: NaiveDateTime) -> NaiveDate {
    (t - Duration::hours(1)).date()
}

/// `floor((n − step_in − step_out) / stride) + 1`, or 0 when too short.
pub fn window_count(n: usize, cfg: &WindowConfig) -> usize {
    let span = cfg.step_in + cfg.step_out;
    if n < span || cfg.stride == 0 {
        0
    } else {
        (n - span) / cfg.stride + 1
    }
}

fn check_config(cfg: &WindowConfig) -> Result<()> {
    if cfg.step_in == 0 || cfg.stride == 0 || cfg.step_out == 0 {
        return Err(Error::Config(format!(
            "window parameters must be at least 1, got {cfg:?}"
        )));
    }
    Ok(())
}

/// Slides over aligned PV and weather series. The forecast-weather rows of
/// each sample are the observed weather at the target timestamps.
pub fn build_windows(
    pv: &TimeSeries,
    weather: &EncodedWeather,
    cfg: &WindowConfig,
) -> Result<Vec<SampleWindow>> {
    check_config(cfg)?;
    if pv.len() != weather.len() {
        return Err(Error::Alignment(format!(
            "pv has {} hourly entries, weather has {}",
            pv.len(),
            weather.len()
        )));
    }
    if let Some((a, b)) = pv
        .timestamps()
        .zip(weather.timestamps.iter())
        .find(|(a, b)| a != *b)
    {
        return Err(Error::Alignment(format!(
            "pv timestamp {a} vs weather timestamp {b}"
        )));
    }
    if let Some((t, v)) = pv.entries.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
        return Err(Error::Data(format!(
            "normalized generation {v} at {t} outside [0, 1]"
        )));
    }

    let values: Vec<f64> = pv.values().collect();
    let count = window_count(pv.len(), cfg);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * cfg.stride;
        let split = start + cfg.step_in;
        let end = split + cfg.step_out;
        let target_times: Vec<NaiveDateTime> = pv.entries[split..end].iter().map(|e| e.0).collect();
        out.push(SampleWindow {
            day: hour_day(target_times[0]),
            inputs: BranchInputs {
                pv: Tensor::new(vec![cfg.step_in, 1], values[start..split].to_vec())?,
                hw: Tensor::new(
                    vec![cfg.step_in, WEATHER_WIDTH],
                    weather.rows(start, cfg.step_in).to_vec(),
                )?,
                fw: Tensor::new(
                    vec![cfg.step_out, WEATHER_WIDTH],
                    weather.rows(split, cfg.step_out).to_vec(),
                )?,
            },
            target: values[split..end].to_vec(),
            target_times,
        });
    }
    Ok(out)
}

/// Number of leading rows of a `len`-long hourly series that feed training
/// windows under [`split_by_date`].
pub(crate) fn training_row_extent(
    timestamps: &[NaiveDateTime],
    cfg: &WindowConfig,
    boundary: NaiveDate,
) -> usize {
    let span = cfg.step_in + cfg.step_out;
    (0..window_count(timestamps.len(), cfg))
        .map(|k| k * cfg.stride)
        .take_while(|&start| hour_day(timestamps[start + span - 1]) < boundary)
        .last()
        .map_or(0, |start| start + span)
}

/// Windows forecasting only days before `boundary` train and windows
/// forecasting only later days test. Windows whose targets straddle the
/// boundary (possible with a stride shorter than the horizon) are dropped.
pub fn split_by_date(samples: Vec<SampleWindow>, boundary: NaiveDate) -> DatasetSplit {
    let mut split = DatasetSplit {
        boundary: Some(boundary),
        ..DatasetSplit::default()
    };
    let mut dropped = 0;
    for s in samples {
        let last = s.target_times.last().map_or(s.day, |t| hour_day(*t));
        if last < boundary {
            split.train.push(s);
        } else if s.day >= boundary {
            split.test.push(s);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} windows whose targets straddle {boundary}");
    }
    split
}

/// Stable text serialization of samples (bit-exact float encoding).
pub fn write_samples<W: Write>(samples: &[SampleWindow], mut w: W) -> io::Result<()> {
    for s in samples {
        write!(w, "{}", s.day)?;
        for t in [&s.inputs.pv, &s.inputs.hw, &s.inputs.fw] {
            write!(w, "|{:?}", t.shape())?;
            for v in t.data() {
                write!(w, ",{:016x}", v.to_bits())?;
            }
        }
        write!(w, "|")?;
        for v in &s.target {
            write!(w, ",{:016x}", v.to_bits())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::weather::{encode_weather, MinMaxScaler, WeatherRecord, WeatherSeries};
    use crate::data::weather::{WeatherDescription, NUMERIC_WIDTH};
    use chrono::Duration;
    use proptest::prelude::*;

    fn fixture(n: usize) -> (TimeSeries, EncodedWeather) {
        let t0 = NaiveDate::from_ymd_opt(2012, 6, 1)
            .unwrap()
            .and_hms_opt(1, 0, 0)
            .unwrap();
        let times: Vec<_> = (0..n).map(|i| t0 + Duration::hours(i as i64)).collect();
        let pv = TimeSeries {
            entries: times.iter().map(|&t| (t, 0.5)).collect(),
        };
        let records = times
            .iter()
            .map(|&t| WeatherRecord {
                timestamp: t,
                numeric: [1.0; NUMERIC_WIDTH],
                description: WeatherDescription::Haze,
            })
            .collect();
        let ws = WeatherSeries::new(records).unwrap();
        let scaler = MinMaxScaler::fit(&ws.entries).unwrap();
        (pv, encode_weather(&ws, &scaler))
    }

    #[test]
    fn counts_match_examples() {
        let cfg = WindowConfig::default();
        assert_eq!(window_count(48, &cfg), 1);
        assert_eq!(window_count(72, &cfg), 2);
        assert_eq!(window_count(47, &cfg), 0);
        let (pv, w) = fixture(72);
        let samples = build_windows(&pv, &w, &cfg).unwrap();
        assert_eq!(samples.len(), 2);
        let s = &samples[1];
        assert_eq!(s.inputs.fw.shape(), &[24, 35]);
        assert_eq!(s.target_times[0], w.timestamps[48]);
        assert_eq!(s.inputs.fw.row(0), w.row(48));
    }

    #[test]
    fn misaligned_inputs_rejected() {
        let (pv, w) = fixture(48);
        let mut shifted = pv.clone();
        shifted.entries[3].0 += Duration::minutes(1);
        assert!(matches!(
            build_windows(&shifted, &w, &WindowConfig::default()),
            Err(Error::Alignment(_))
        ));
        let short = TimeSeries {
            entries: pv.entries[..40].to_vec(),
        };
        assert!(build_windows(&short, &w, &WindowConfig::default()).is_err());
    }

    #[test]
    fn split_examples() {
        let (pv, w) = fixture(24 * 5);
        let samples = build_windows(&pv, &w, &WindowConfig::default()).unwrap();
        let days: Vec<_> = samples.iter().map(|s| s.day).collect();
        let boundary = days[2];
        let split = split_by_date(samples, boundary);
        assert!(split.train.iter().all(|s| s.day < boundary));
        assert!(split.test.iter().all(|s| s.day >= boundary));
        assert_eq!(split.train.len() + split.test.len(), days.len());
        let empty = split_by_date(Vec::new(), boundary);
        assert!(empty.train.is_empty() && empty.test.is_empty());
    }

    #[test]
    fn midnight_closes_the_previous_day() {
        let t = NaiveDate::from_ymd_opt(2012, 7, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        assert_eq!(hour_day(t), NaiveDate::from_ymd_opt(2012, 6, 30).unwrap());
        assert_eq!(hour_day(t + Duration::hours(1)), t.date());
    }

    #[test]
    fn overlapping_windows_never_straddle() {
        let (pv, w) = fixture(24 * 6);
        let cfg = WindowConfig {
            stride: 5,
            ..WindowConfig::default()
        };
        let samples = build_windows(&pv, &w, &cfg).unwrap();
        let boundary = NaiveDate::from_ymd_opt(2012, 6, 4).unwrap();
        let total = samples.len();
        let split = split_by_date(samples, boundary);
        assert!(split.train.len() + split.test.len() < total);
        let train_times: std::collections::HashSet<_> = split
            .train
            .iter()
            .flat_map(|s| s.target_times.iter())
            .collect();
        for s in &split.test {
            assert!(s
                .target_times
                .iter()
                .all(|t| !train_times.contains(t) && hour_day(*t) >= boundary));
        }
        for s in &split.train {
            assert!(s.target_times.iter().all(|t| hour_day(*t) < boundary));
        }
        let times: Vec<_> = pv.timestamps().collect();
        let extent = training_row_extent(&times, &cfg, boundary);
        let last = split.train.last().unwrap().target_times.last().unwrap();
        assert_eq!(times[extent - 1], *last);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn count_formula_matches_enumeration(n in 0usize..400, stride in 1usize..50,
                                             step_in in 1usize..30, step_out in 1usize..30) {
            let cfg = WindowConfig { step_in, stride, step_out };
            let mut brute = 0;
            let mut start = 0;
            while start + step_in + step_out <= n {
                brute += 1;
                start += stride;
            }
            prop_assert_eq!(window_count(n, &cfg), brute);
        }
    }
}
