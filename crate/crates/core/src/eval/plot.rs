use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub hour: usize,
    pub actual: f64,
    pub forecast: f64,
    pub previous_day: Option<f64>,
}

pub fn plot_rows(
    actual: &[f64],
    forecast: &[f64],
    previous_day: Option<&[f64]>,
) -> Result<Vec<PlotRow>> {
    if actual.len() != forecast.len() || previous_day.is_some_and(|p| p.len() != actual.len()) {
        return Err(Error::Contract("plot series differ in length".into()));
    }
    Ok((0..actual.len())
        .map(|h| PlotRow {
            hour: h,
            actual: actual[h],
            forecast: forecast[h],
            previous_day: previous_day.map(|p| p[h]),
        })
        .collect())
}

pub fn write_plot_csv<W: Write>(rows: &[PlotRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "hour,actual,forecast,previous_day")?;
    for r in rows {
        let prev = r.previous_day.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.hour, r.actual, r.forecast, prev)?;
    }
    Ok(())
}

/// Writes one day's actual, forecast and previous-day curves. A missing
/// previous day leaves that column empty.
pub fn export_plot_data(
    day: NaiveDate,
    actual: &[f64],
    forecast: &[f64],
    previous_day: Option<&[f64]>,
    path: &Path,
) -> Result<()> {
    if previous_day.is_none() {
        log::warn!("no previous-day actuals for {day}; leaving that column empty");
    }
    let rows = plot_rows(actual, forecast, previous_day)?;
    let mut buf = Vec::new();
    write_plot_csv(&rows, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
