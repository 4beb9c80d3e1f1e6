//! Weather records and their 35-column model encoding.
//!
//! Column order of the encoded matrix is fixed so checkpoints stay portable:
//! the 13 numeric attributes in [`NUMERIC_COLUMNS`] order (min-max scaled),
//! followed by one-hot indicators for the 22 [`WeatherDescription`] levels in
//! [`WeatherDescription::ALL`] order.

use chrono::{Duration, NaiveDateTime};

use crate::error::{Error, Result};

pub const NUMERIC_COLUMNS: [&str; 13] = [
    "temperature",
    "feels_like",
    "pressure",
    "humidity",
    "dew_point",
    "wind_speed",
    "wind_deg",
    "wind_gust",
    "clouds_all",
    "rain_1h",
    "dni",
    "dhi",
    "ghi",
];
pub const NUMERIC_WIDTH: usize = NUMERIC_COLUMNS.len();
pub const DESCRIPTION_LEVELS: usize = 22;
pub const WEATHER_WIDTH: usize = NUMERIC_WIDTH + DESCRIPTION_LEVELS;

pub(crate) const HUMIDITY: usize = 3;
pub(crate) const CLOUDS: usize = 8;
pub(crate) const RAIN: usize = 9;
pub(crate) const IRRADIANCE: [usize; 3] = [10, 11, 12];

macro_rules! descriptions {
    ($($variant:ident => $label:literal),* $(,)?) => {
        /// Categorical weather condition levels.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum WeatherDescription { $($variant),* }

        impl WeatherDescription {
            pub const ALL: [WeatherDescription; DESCRIPTION_LEVELS] =
                [$(WeatherDescription::$variant),*];

            pub fn label(self) -> &'static str {
                match self { $(WeatherDescription::$variant => $label),* }
            }
        }
    };
}

descriptions! {
    ScatteredClouds => "scattered clouds",
    FewClouds => "few clouds",
    BrokenClouds => "broken clouds",
    OvercastClouds => "overcast clouds",
    SkyIsClear => "sky is clear",
    LightRain => "light rain",
    Thunderstorm => "thunderstorm",
    ModerateRain => "moderate rain",
    Fog => "fog",
    LightIntensityShowerRain => "light intensity shower rain",
    Mist => "mist",
    Haze => "haze",
    HeavyIntensityRain => "heavy intensity rain",
    LightIntensityDrizzle => "light intensity drizzle",
    ShowerRain => "shower rain",
    Smoke => "smoke",
    ThunderstormWithRain => "thunderstorm with rain",
    ProximitySqualls => "proximity squalls",
    VeryHeavyRain => "very heavy rain",
    LightIntensityDrizzleRain => "light intensity drizzle rain",
    RainAndDrizzle => "rain and drizzle",
    Drizzle => "drizzle",
}

impl WeatherDescription {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for WeatherDescription {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let needle = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.label().eq_ignore_ascii_case(needle))
            .ok_or_else(|| Error::Data(format!("unknown weather description '{s}'")))
    }
}

impl std::fmt::Display for WeatherDescription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeatherRecord {
    pub timestamp: NaiveDateTime,
    /// Values in [`NUMERIC_COLUMNS`] order.
    pub numeric: [f64; NUMERIC_WIDTH],
    pub description: WeatherDescription,
}

/// Hourly weather observations.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherSeries {
    pub entries: Vec<WeatherRecord>,
}

impl WeatherSeries {
    pub fn new(entries: Vec<WeatherRecord>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].timestamp == w[0].timestamp {
                return Err(Error::Data(format!(
                    "duplicate weather timestamp {}",
                    w[0].timestamp
                )));
            }
            if w[1].timestamp - w[0].timestamp != Duration::hours(1) {
                return Err(Error::Data(format!(
                    "weather timestamps must be hourly and increasing: {} then {}",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        for r in &entries {
            let n = &r.numeric;
            if let Some(i) = n.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "{} at {} is not finite",
                    NUMERIC_COLUMNS[i], r.timestamp
                )));
            }
            for i in [HUMIDITY, CLOUDS] {
                if !(0.0..=100.0).contains(&n[i]) {
                    return Err(Error::Data(format!(
                        "{} at {} outside [0, 100]: {}",
                        NUMERIC_COLUMNS[i], r.timestamp, n[i]
                    )));
                }
            }
            for i in IRRADIANCE.into_iter().chain([RAIN]) {
                if n[i] < 0.0 {
                    return Err(Error::Data(format!(
                        "{} at {} is negative: {}",
                        NUMERIC_COLUMNS[i], r.timestamp, n[i]
                    )));
                }
            }
        }
        Ok(WeatherSeries { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-column min-max scaling of the numeric attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    pub min: [f64; NUMERIC_WIDTH],
    pub max: [f64; NUMERIC_WIDTH],
}

impl MinMaxScaler {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a WeatherRecord>) -> Result<Self> {
        let mut min = [f64::INFINITY; NUMERIC_WIDTH];
        let mut max = [f64::NEG_INFINITY; NUMERIC_WIDTH];
        let mut seen = 0usize;
        for r in rows {
            for (i, &v) in r.numeric.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::Data("cannot fit weather scaler on zero rows".into()));
        }
        Ok(MinMaxScaler { min, max })
    }

    /// Constant columns map to 0.
    pub fn scale(&self, column: usize, value: f64) -> f64 {
        let span = self.max[column] - self.min[column];
        if span > 0.0 {
            (value - self.min[column]) / span
        } else {
            0.0
        }
    }
}

/// `T × 35` model-ready weather matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedWeather {
    pub timestamps: Vec<NaiveDateTime>,
    values: Vec<f64>,
}

impl EncodedWeather {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * WEATHER_WIDTH..(i + 1) * WEATHER_WIDTH]
    }

    pub fn rows(&self, start: usize, len: usize) -> &[f64] {
        &self.values[start * WEATHER_WIDTH..(start + len) * WEATHER_WIDTH]
    }
}

pub fn encode_weather(series: &WeatherSeries, scaler: &MinMaxScaler) -> EncodedWeather {
    let mut values = Vec::with_capacity(series.len() * WEATHER_WIDTH);
    for r in &series.entries {
        values.extend(
            r.numeric
                .iter()
                .enumerate()
                .map(|(i, &v)| scaler.scale(i, v)),
        );
        let mut onehot = [0.0; DESCRIPTION_LEVELS];
        onehot[r.description.index()] = 1.0;
        values.extend_from_slice(&onehot);
    }
    EncodedWeather {
        timestamps: series.entries.iter().map(|r| r.timestamp).collect(),
        values,
    }
}
