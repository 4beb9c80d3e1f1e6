use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::NaiveDate;

use crate::error::{Error, Result};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Contract("metric of an empty series".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Contract(format!(
            "metric inputs differ in length: {} vs {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

fn abs_error_sum(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum()
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(abs_error_sum(y, yhat) / y.len() as f64)
}

pub fn wmape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let scale: f64 = y.iter().map(|v| v.abs()).sum();
    if scale == 0.0 {
        return Err(Error::UndefinedMetric("WMAPE with all-zero actuals".into()));
    }
    Ok(abs_error_sum(y, yhat) / scale)
}

/// MAE scaled by the in-sample one-step naïve MAE of `y` itself.
pub fn mase(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::UndefinedMetric(
            "MASE needs at least two points".into(),
        ));
    }
    let naive: f64 = y.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (y.len() - 1) as f64;
    if naive == 0.0 {
        return Err(Error::UndefinedMetric("MASE of a constant series".into()));
    }
    Ok(abs_error_sum(y, yhat) / y.len() as f64 / naive)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub wmape: f64,
    pub mase: f64,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(Metrics {
            rmse: rmse(y, yhat)?,
            mae: mae(y, yhat)?,
            wmape: wmape(y, yhat)?,
            mase: mase(y, yhat)?,
        })
    }
}

/// Per-day scores; WMAPE and MASE are absent when undefined for that day.
#[derive(Clone, Debug, PartialEq)]
pub struct DayMetrics {
    pub day: NaiveDate,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub wmape: Option<f64>,
    pub mase: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankBy {
    Rmse,
    Mae,
    Wmape,
    Mase,
}

impl std::str::FromStr for RankBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(RankBy::Rmse),
            "mae" => Ok(RankBy::Mae),
            "wmape" => Ok(RankBy::Wmape),
            "mase" => Ok(RankBy::Mase),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

impl DayMetrics {
    pub fn get(&self, by: RankBy) -> Option<f64> {
        match by {
            RankBy::Rmse => Some(self.rmse),
            RankBy::Mae => Some(self.mae),
            RankBy::Wmape => self.wmape,
            RankBy::Mase => self.mase,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Scores over the concatenation of every scored point.
    pub pooled: Metrics,
    pub days: Vec<DayMetrics>,
    pub n: usize,
}

/// Pools every horizon and scores each distinct day. With `daylight_only`,
/// points whose actual value is zero are dropped before scoring.
pub fn metrics_report(
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
    day_ids: &[NaiveDate],
    daylight_only: bool,
) -> Result<MetricsReport> {
    if predictions.len() != targets.len() || targets.len() != day_ids.len() {
        return Err(Error::Contract(format!(
            "report inputs differ in length: {} predictions, {} targets, {} day ids",
            predictions.len(),
            targets.len(),
            day_ids.len()
        )));
    }
    let mut by_day: BTreeMap<NaiveDate, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_y, mut all_p) = (Vec::new(), Vec::new());
    for ((p, y), day) in predictions.iter().zip(targets).zip(day_ids) {
        check_pair(y, p)?;
        let entry = by_day.entry(*day).or_default();
        for (&yv, &pv) in y.iter().zip(p) {
            if daylight_only && yv <= 0.0 {
                continue;
            }
            entry.0.push(yv);
            entry.1.push(pv);
            all_y.push(yv);
            all_p.push(pv);
        }
    }
    let pooled = Metrics::compute(&all_y, &all_p)?;
    let mut days = Vec::with_capacity(by_day.len());
    for (day, (y, p)) in by_day {
        if y.is_empty() {
            log::warn!("day {day} has no scored points");
            continue;
        }
        let undefined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(why)) => {
                log::warn!("day {day}: {why}");
                Ok(None)
            }
            Err(e) => Err(e),
        };
        days.push(DayMetrics {
            day,
            n: y.len(),
            rmse: rmse(&y, &p)?,
            mae: mae(&y, &p)?,
            wmape: undefined(wmape(&y, &p))?,
            mase: undefined(mase(&y, &p))?,
        });
    }
    Ok(MetricsReport {
        pooled,
        days,
        n: all_y.len(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// `day_id,rmse,mae,wmape,mase`, one row per day.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "day_id,rmse,mae,wmape,mase")?;
        for d in &self.days {
            writeln!(
                w,
                "{},{},{},{},{}",
                d.day,
                d.rmse,
                d.mae,
                opt(d.wmape),
                opt(d.mase)
            )?;
        }
        Ok(())
    }

    /// Mean of the defined per-day values of each metric.
    pub fn day_average(&self) -> [Option<f64>; 4] {
        [RankBy::Rmse, RankBy::Mae, RankBy::Wmape, RankBy::Mase].map(|by| {
            let vals: Vec<f64> = self.days.iter().filter_map(|d| d.get(by)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
    }

    /// Aligned text table with pooled and per-day-averaged rows.
    pub fn summary(&self, label: &str) -> String {
        let mut s = summary_header();
        s.push_str(&summary_row(label, &self.pooled));
        let avg = self.day_average();
        let cell = |v: Option<f64>| {
            v.map(|x| format!("{x:>8.4}"))
                .unwrap_or(format!("{:>8}", "-"))
        };
        let _ = writeln!(
            s,
            "{:<28}{}{}{}{}",
            format!("{label} (day mean)"),
            cell(avg[0]),
            cell(avg[1]),
            cell(avg[2]),
            cell(avg[3])
        );
        let _ = writeln!(s, "{} points over {} days", self.n, self.days.len());
        s
    }
}

pub fn summary_header() -> String {
    format!(
        "{:<28}{:>8}{:>8}{:>8}{:>8}\n",
        "model", "RMSE", "MAE", "WMAPE", "MASE"
    )
}

pub fn summary_row(label: &str, m: &Metrics) -> String {
    format!(
        "{:<28}{:>8.4}{:>8.4}{:>8.4}{:>8.4}\n",
        label, m.rmse, m.mae, m.wmape, m.mase
    )
}

/// Days ordered by a metric, ties broken by date. Days where the metric is
/// undefined go last.
pub fn rank_days(report: &MetricsReport, by: RankBy, descending: bool) -> Vec<NaiveDate> {
    let mut days: Vec<&DayMetrics> = report.days.iter().collect();
    days.sort_by(|a, b| {
        let (va, vb) = (a.get(by), b.get(by));
        let ord = match (va, vb) {
            (Some(x), Some(y)) => {
                let o = x.total_cmp(&y);
                if descending {
                    o.reverse()
                } else {
                    o
                }
            }
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        };
        ord.then(a.day.cmp(&b.day))
    });
    days.into_iter().map(|d| d.day).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(wmape(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(mase(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap(), 1.0);
        let y = [0.3, 0.9, 0.1];
        assert_eq!(
            Metrics::compute(&y, &y).unwrap(),
            Metrics {
                rmse: 0.0,
                mae: 0.0,
                wmape: 0.0,
                mase: 0.0
            }
        );
    }

    #[test]
    fn undefined_and_contract_errors() {
        assert!(matches!(
            wmape(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            mase(&[0.4; 5], &[0.0; 5]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(rmse(&[], &[]), Err(Error::Contract(_))));
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 7, d).unwrap()
    }

    #[test]
    fn report_pools_the_concatenation() {
        let y1: Vec<f64> = (0..24).map(|h| (h as f64 / 3.0).sin().abs()).collect();
        let y2: Vec<f64> = (0..24).map(|h| (h as f64 / 5.0).cos().abs()).collect();
        let p2: Vec<f64> = y2.iter().map(|v| v * 0.8 + 0.05).collect();
        let r = metrics_report(
            &[y1.clone(), p2.clone()],
            &[y1.clone(), y2.clone()],
            &[day(1), day(2)],
            false,
        )
        .unwrap();
        let all_y: Vec<f64> = y1.iter().chain(&y2).copied().collect();
        let all_p: Vec<f64> = y1.iter().chain(&p2).copied().collect();
        assert_eq!(r.pooled, Metrics::compute(&all_y, &all_p).unwrap());
        assert_eq!(r.days.len(), 2);
        assert_eq!(r.n, 48);
        assert_eq!(r.days[0].mase, Some(0.0));
        assert_eq!(rank_days(&r, RankBy::Mase, false), vec![day(1), day(2)]);
        assert_eq!(rank_days(&r, RankBy::Mase, true), vec![day(2), day(1)]);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn daylight_filter_and_undefined_day() {
        let y = vec![0.0, 0.0, 0.5, 0.7, 0.0];
        let p = vec![0.1, 0.2, 0.4, 0.7, 0.1];
        let r = metrics_report(&[p.clone()], &[y.clone()], &[day(3)], true).unwrap();
        assert_eq!(r.n, 2);
        assert!((r.pooled.mae - 0.05).abs() < 1e-15);
        let flat = metrics_report(
            &[p.clone(), p],
            &[y, vec![0.0; 5]],
            &[day(3), day(4)],
            false,
        )
        .unwrap();
        assert_eq!(flat.days[1].wmape, None);
        assert_eq!(flat.days[1].mase, None);
    }

    #[test]
    fn ties_break_by_date() {
        let y = vec![0.1, 0.5, 0.2];
        let r = metrics_report(
            &[y.clone(), y.clone(), y.clone()],
            &[y.clone(), y.clone(), y],
            &[day(9), day(2), day(5)],
            false,
        )
        .unwrap();
        assert_eq!(
            rank_days(&r, RankBy::Rmse, false),
            vec![day(2), day(5), day(9)]
        );
        assert_eq!(
            rank_days(&r, RankBy::Rmse, true),
            vec![day(2), day(5), day(9)]
        );
    }
}
