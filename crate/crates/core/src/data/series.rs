use chrono::{Duration, NaiveDateTime, Timelike};
use log::warn;

use crate::error::{Error, Result};

/// Sampling cadence of a PV series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cadence {
    HalfHourly,
    Hourly,
}

impl Cadence {
    pub fn step(self) -> Duration {
        match self {
            Cadence::HalfHourly => Duration::minutes(30),
            Cadence::Hourly => Duration::hours(1),
        }
    }
}

/// Raw generation of one PV unit, in kWh per sampling interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PvSeries {
    pub unit_id: String,
    pub capacity_kwp: f64,
    pub entries: Vec<(NaiveDateTime, f64)>,
}

impl PvSeries {
    /// Validates ordering, non-negative generation and positive capacity.
    pub fn new(
        unit_id: impl Into<String>,
        capacity_kwp: f64,
        entries: Vec<(NaiveDateTime, f64)>,
    ) -> Result<Self> {
        let unit_id = unit_id.into();
        if capacity_kwp.is_nan() || capacity_kwp <= 0.0 {
            return Err(Error::Data(format!(
                "unit {unit_id}: capacity must be positive, got {capacity_kwp}"
            )));
        }
        for w in entries.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(Error::Data(format!(
                    "unit {unit_id}: duplicate timestamp {}",
                    w[0].0
                )));
            }
            if w[1].0 < w[0].0 {
                return Err(Error::Data(format!(
                    "unit {unit_id}: timestamps not increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some((t, g)) = entries.iter().find(|(_, g)| !(*g >= 0.0)) {
            return Err(Error::Data(format!(
                "unit {unit_id}: negative or invalid generation {g} at {t}"
            )));
        }
        Ok(PvSeries {
            unit_id,
            capacity_kwp,
            entries,
        })
    }

    /// Cadence from the median spacing of consecutive timestamps.
    pub fn cadence(&self) -> Result<Cadence> {
        let mut gaps: Vec<i64> = self
            .entries
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).num_minutes())
            .collect();
        if gaps.is_empty() {
            return Err(Error::Data(format!(
                "unit {}: too few entries to detect cadence",
                self.unit_id
            )));
        }
        gaps.sort_unstable();
        match gaps[gaps.len() / 2] {
            30 => Ok(Cadence::HalfHourly),
            60 => Ok(Cadence::Hourly),
            other => Err(Error::Data(format!(
                "unit {}: unsupported median spacing of {other} minutes",
                self.unit_id
            ))),
        }
    }
}

/// A normalized hourly series (values in `[0, 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub entries: Vec<(NaiveDateTime, f64)>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.1)
    }
}

/// Sums half-hour pairs `(HH:00, HH:30)` into one entry stamped `HH+1:00`.
///
/// The input must be a gap-free half-hourly series starting on the hour and
/// ending on a half hour; any missing slot is reported, never imputed.
pub fn resample_hourly(series: &PvSeries) -> Result<PvSeries> {
    let half = Duration::minutes(30);
    let entries = &series.entries;
    for (t, _) in entries {
        if t.second() != 0 || t.nanosecond() != 0 || (t.minute() != 0 && t.minute() != 30) {
            return Err(Error::Data(format!(
                "unit {}: timestamp {t} is not on a half-hour boundary",
                series.unit_id
            )));
        }
    }
    if let Some((first, _)) = entries.first() {
        if first.minute() == 30 {
            return Err(Error::Gap((*first - half).to_string()));
        }
    }
    for w in entries.windows(2) {
        if w[1].0 - w[0].0 != half {
            return Err(Error::Gap((w[0].0 + half).to_string()));
        }
    }
    if let Some((last, _)) = entries.last() {
        if last.minute() == 0 {
            return Err(Error::Gap((*last + half).to_string()));
        }
    }
    let hourly = entries
        .chunks_exact(2)
        .map(|pair| (pair[0].0 + Duration::hours(1), pair[0].1 + pair[1].1))
        .collect();
    Ok(PvSeries {
        unit_id: series.unit_id.clone(),
        capacity_kwp: series.capacity_kwp,
        entries: hourly,
    })
}

/// Divides generation by the unit's peak power. Values above capacity are
/// clamped to 1 with a warning.
pub fn normalize_by_peak(series: &PvSeries) -> Result<TimeSeries> {
    let cap = series.capacity_kwp;
    if cap.is_nan() || cap <= 0.0 {
        return Err(Error::Data(format!(
            "unit {}: capacity must be positive, got {cap}",
            series.unit_id
        )));
    }
    let entries = series
        .entries
        .iter()
        .map(|&(t, p)| {
            let v = p / cap;
            if v > 1.0 {
                warn!(
                    "unit {}: generation {p} exceeds capacity {cap} at {t}, clamping",
                    series.unit_id
                );
                (t, 1.0)
            } else {
                (t, v)
            }
        })
        .collect();
    Ok(TimeSeries { entries })
}

/// Per-timestamp arithmetic mean of identically stamped series.
pub fn aggregate_mean(series: &[TimeSeries]) -> Result<TimeSeries> {
    let first = series
        .first()
        .ok_or_else(|| Error::Alignment("no series to aggregate".into()))?;
    for (k, s) in series.iter().enumerate().skip(1) {
        if s.len() != first.len() {
            return Err(Error::Alignment(format!(
                "series {k} has {} entries, series 0 has {}",
                s.len(),
                first.len()
            )));
        }
        if let Some((a, b)) = first.timestamps().zip(s.timestamps()).find(|(a, b)| a != b) {
            return Err(Error::Alignment(format!(
                "series {k} has timestamp {b} where series 0 has {a}"
            )));
        }
    }
    let n = series.len() as f64;
    let entries = (0..first.len())
        .map(|i| {
            let total: f64 = series.iter().map(|s| s.entries[i].1).sum();
            (first.entries[i].0, total / n)
        })
        .collect();
    Ok(TimeSeries { entries })
}
