//! CSV readers and writers for PV and weather files.
//!
//! PV: `timestamp,unit_id,capacity_kwp,generation_kwh`
//! Weather: `timestamp,temperature,feels_like,pressure,humidity,dew_point,
//! wind_speed,wind_deg,wind_gust,clouds_all,rain_1h,description,dni,dhi,ghi`

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use csv::StringRecord;

use super::series::PvSeries;
use super::weather::{WeatherRecord, WeatherSeries, NUMERIC_WIDTH, RAIN};
use crate::error::{Error, Result};

pub const PV_HEADER: [&str; 4] = ["timestamp", "unit_id", "capacity_kwp", "generation_kwh"];
pub const WEATHER_HEADER: [&str; 15] = [
    "timestamp",
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
    "description",
    "dni",
    "dhi",
    "ghi",
];
const TIMESTAMP_WRITE: &str = "%Y-%m-%dT%H:%M:%S";
const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_WRITE).to_string()
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(line, e.to_string())
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_err)?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            1,
            format!(
                "expected header {}, got {}",
                expected.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn field<'a>(rec: &'a StringRecord, i: usize, line: u64, name: &str) -> Result<&'a str> {
    rec.get(i)
        .map(str::trim)
        .ok_or_else(|| parse_err(line, format!("missing field '{name}'")))
}

fn number(rec: &StringRecord, i: usize, line: u64, name: &str) -> Result<f64> {
    let s = field(rec, i, line, name)?;
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("field '{name}' is not a number: '{s}'")))
}

fn timestamp(rec: &StringRecord, line: u64) -> Result<NaiveDateTime> {
    let s = field(rec, 0, line, "timestamp")?;
    parse_timestamp(s).ok_or_else(|| parse_err(line, format!("bad timestamp '{s}'")))
}

/// Reads PV records grouped by unit. `units` restricts to the listed ids.
pub fn read_pv_csv(reader: impl Read, units: Option<&[String]>) -> Result<Vec<PvSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(&mut rdr, &PV_HEADER)?;
    let mut grouped: BTreeMap<String, (f64, Vec<(NaiveDateTime, f64)>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = timestamp(&rec, line)?;
        let unit = field(&rec, 1, line, "unit_id")?.to_string();
        let cap = number(&rec, 2, line, "capacity_kwp")?;
        let gen = number(&rec, 3, line, "generation_kwh")?;
        if units.is_some_and(|u| !u.contains(&unit)) {
            continue;
        }
        let slot = grouped.entry(unit.clone()).or_insert((cap, Vec::new()));
        if slot.0 != cap {
            return Err(Error::Data(format!(
                "unit {unit}: capacity changes from {} to {cap} at line {line}",
                slot.0
            )));
        }
        slot.1.push((t, gen));
    }
    grouped
        .into_iter()
        .map(|(unit, (cap, mut entries))| {
            entries.sort_by_key(|e| e.0);
            PvSeries::new(unit, cap, entries)
        })
        .collect()
}

pub fn load_pv_csv(path: impl AsRef<Path>, units: Option<&[String]>) -> Result<Vec<PvSeries>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pv_csv(file, units)
}

/// Reads an hourly weather file. An empty `rain_1h` field means 0 mm.
pub fn read_weather_csv(reader: impl Read) -> Result<WeatherSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(&mut rdr, &WEATHER_HEADER)?;
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let t = timestamp(&rec, line)?;
        let mut numeric = [0.0; NUMERIC_WIDTH];
        // numeric columns sit at 1..=10 and 12..=14 in the file
        for (col, slot) in numeric.iter_mut().enumerate() {
            let file_idx = if col < 10 { col + 1 } else { col + 2 };
            let name = WEATHER_HEADER[file_idx];
            if col == RAIN && field(&rec, file_idx, line, name)?.is_empty() {
                continue;
            }
            *slot = number(&rec, file_idx, line, name)?;
        }
        let desc = field(&rec, 11, line, "description")?;
        let description = desc.parse().map_err(|_| {
            Error::Data(format!("line {line}: unknown weather description '{desc}'"))
        })?;
        entries.push(WeatherRecord {
            timestamp: t,
            numeric,
            description,
        });
    }
    entries.sort_by_key(|r| r.timestamp);
    WeatherSeries::new(entries)
}

pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<WeatherSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weather_csv(file)
}

pub fn write_pv_csv(w: impl Write, series: &[PvSeries]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Data(e.to_string());
    wtr.write_record(PV_HEADER).map_err(io)?;
    for s in series {
        for (t, g) in &s.entries {
            wtr.write_record([
                format_timestamp(t),
                s.unit_id.clone(),
                s.capacity_kwp.to_string(),
                g.to_string(),
            ])
            .map_err(io)?;
        }
    }
    wtr.flush().map_err(|e| Error::Data(e.to_string()))
}

/// Writes weather records; dry hours get an empty `rain_1h` field.
pub fn write_weather_csv(w: impl Write, series: &WeatherSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Data(e.to_string());
    wtr.write_record(WEATHER_HEADER).map_err(io)?;
    for r in &series.entries {
        let mut row = Vec::with_capacity(WEATHER_HEADER.len());
        row.push(format_timestamp(&r.timestamp));
        for (i, v) in r.numeric.iter().enumerate() {
            if i == 10 {
                row.push(r.description.label().to_string());
            }
            if i == RAIN && *v == 0.0 {
                row.push(String::new());
            } else {
                row.push(v.to_string());
            }
        }
        wtr.write_record(&row).map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::Data(e.to_string()))
}

pub fn save_pv_csv(path: impl AsRef<Path>, series: &[PvSeries]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pv_csv(std::io::BufWriter::new(file), series)
}

pub fn save_weather_csv(path: impl AsRef<Path>, series: &WeatherSeries) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weather_csv(std::io::BufWriter::new(file), series)
}
