//! Error metrics with zero-target exclusion and the per-step, per-sensor and
//! weekday hour-of-day breakdowns.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// MAE, RMSE and MAPE (as a ratio) over the included entries of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    /// Entries with nonzero truth.
    pub included: usize,
    /// Entries dropped because the truth was zero.
    pub excluded: usize,
}

impl Metrics {
    pub fn excluded_zero_fraction(&self) -> f64 {
        let total = self.included + self.excluded;
        if total == 0 {
            0.0
        } else {
            self.excluded as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    abs: f64,
    sq: f64,
    pct: f64,
    included: usize,
    excluded: usize,
}

impl Acc {
    fn push(&mut self, pred: f64, truth: f64) {
        if truth == 0.0 {
            self.excluded += 1;
            return;
        }
        let e = pred - truth;
        self.abs += e.abs();
        self.sq += e * e;
        self.pct += (e / truth).abs();
        self.included += 1;
    }

    fn finish(&self) -> Option<Metrics> {
        if self.included == 0 {
            return None;
        }
        let n = self.included as f64;
        Some(Metrics {
            mae: self.abs / n,
            rmse: (self.sq / n).sqrt(),
            mape: self.pct / n,
            included: self.included,
            excluded: self.excluded,
        })
    }
}

/// Metrics over a test set; `None` marks a cell with no included entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_step: Vec<Option<Metrics>>,
    pub per_sensor: Vec<Option<Metrics>>,
    pub excluded_zero_fraction: f64,
}

fn check_pairs(preds: &[Matrix], truths: &[Matrix]) -> Result<(usize, usize)> {
    if preds.len() != truths.len() {
        return Err(Error::shape("compute_metrics", (preds.len(), 0), (truths.len(), 0)));
    }
    let shape = truths
        .first()
        .ok_or_else(|| Error::DegenerateEval("no samples to evaluate".into()))?
        .shape();
    for (p, t) in preds.iter().zip(truths) {
        if p.shape() != shape || t.shape() != shape {
            return Err(Error::shape("compute_metrics", shape, p.shape()));
        }
        if t.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Validation("truth volumes must be nonnegative".into()));
        }
    }
    Ok(shape)
}

/// `preds` and `truths` hold one `N×F` matrix per test sample.
pub fn compute_metrics(preds: &[Matrix], truths: &[Matrix]) -> Result<EvalReport> {
    let (n, f) = check_pairs(preds, truths)?;
    let mut overall = Acc::default();
    let mut steps = vec![Acc::default(); f];
    let mut sensors = vec![Acc::default(); n];
    for (p, t) in preds.iter().zip(truths) {
        for i in 0..n {
            for d in 0..f {
                let (pv, tv) = (p.get(i, d), t.get(i, d));
                overall.push(pv, tv);
                steps[d].push(pv, tv);
                sensors[i].push(pv, tv);
            }
        }
    }
    let overall = overall
        .finish()
        .ok_or_else(|| Error::DegenerateEval("every truth entry is zero".into()))?;
    Ok(EvalReport {
        excluded_zero_fraction: overall.excluded_zero_fraction(),
        overall,
        per_step: steps.iter().map(Acc::finish).collect(),
        per_sensor: sensors.iter().map(Acc::finish).collect(),
    })
}

/// UTC weekday, Monday = 0.
pub fn utc_weekday(timestamp: i64) -> u32 {
    // 1970-01-01 was a Thursday.
    (timestamp.div_euclid(86_400) + 3).rem_euclid(7) as u32
}

pub fn utc_hour(timestamp: i64) -> u32 {
    (timestamp.rem_euclid(86_400) / 3600) as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourRow {
    pub hour: u32,
    /// MAE at each of the table's steps.
    pub mae: [Option<f64>; 3],
    /// Mean nonzero observed volume across the table's steps.
    pub mean_volume: Option<f64>,
}

/// Weekday MAE by hour of day at forecast steps 1, 6 and F (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct HourWeekdayTable {
    pub steps: [usize; 3],
    pub rows: Vec<HourRow>,
}

/// `target_times[s][d]` is the epoch-second timestamp of step `d` of sample `s`.
pub fn per_hour_weekday_mae(preds: &[Matrix], truths: &[Matrix], target_times: &[Vec<i64>]) -> Result<HourWeekdayTable> {
    let (n, f) = check_pairs(preds, truths)?;
    if target_times.len() != truths.len() || target_times.iter().any(|t| t.len() != f) {
        return Err(Error::Contract("one timestamp per sample and forecast step required".into()));
    }
    let steps = [1, 6.min(f), f];
    let mut cells = vec![[Acc::default(); 3]; 24];
    let mut volume = vec![(0.0, 0usize); 24];
    let mut any_weekday = false;
    for ((p, t), times) in preds.iter().zip(truths).zip(target_times) {
        for (k, &step) in steps.iter().enumerate() {
            let ts = times[step - 1];
            if utc_weekday(ts) >= 5 {
                continue;
            }
            any_weekday = true;
            let h = utc_hour(ts) as usize;
            for i in 0..n {
                let tv = t.get(i, step - 1);
                cells[h][k].push(p.get(i, step - 1), tv);
                if tv != 0.0 {
                    volume[h].0 += tv;
                    volume[h].1 += 1;
                }
            }
        }
    }
    if !any_weekday {
        return Err(Error::DegenerateEval("no weekday targets".into()));
    }
    let rows = (0..24)
        .map(|h| HourRow {
            hour: h as u32,
            mae: [0, 1, 2].map(|k| cells[h][k].finish().map(|m| m.mae)),
            mean_volume: (volume[h].1 > 0).then(|| volume[h].0 / volume[h].1 as f64),
        })
        .collect();
    Ok(HourWeekdayTable { steps, rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "empty".to_string(), |v| v.to_string())
}

fn metrics_cells(m: &Option<Metrics>) -> String {
    match m {
        Some(m) => format!("{},{},{},{},{}", m.mae, m.rmse, m.mape, m.included, m.excluded_zero_fraction()),
        None => "empty,empty,empty,0,1".to_string(),
    }
}

impl EvalReport {
    /// `scope,step,mae,rmse,mape,included,excluded_zero_fraction`.
    pub fn write_report_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "scope,step,mae,rmse,mape,included,excluded_zero_fraction")?;
        writeln!(out, "overall,all,{}", metrics_cells(&Some(self.overall)))?;
        for (d, m) in self.per_step.iter().enumerate() {
            writeln!(out, "step,{},{}", d + 1, metrics_cells(m))?;
        }
        Ok(())
    }

    /// `sensor,mae,rmse,mape,included,excluded_zero_fraction`.
    pub fn write_per_sensor_csv<W: Write>(&self, sensor_ids: &[String], mut out: W) -> std::io::Result<()> {
        writeln!(out, "sensor,mae,rmse,mape,included,excluded_zero_fraction")?;
        for (i, m) in self.per_sensor.iter().enumerate() {
            let id = sensor_ids.get(i).map_or_else(|| i.to_string(), Clone::clone);
            writeln!(out, "{id},{}", metrics_cells(m))?;
        }
        Ok(())
    }
}

impl HourWeekdayTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let [a, b, c] = self.steps;
        writeln!(out, "hour,mae_step{a},mae_step{b},mae_step{c},mean_volume")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.hour,
                cell(r.mae[0]),
                cell(r.mae[1]),
                cell(r.mae[2]),
                cell(r.mean_volume)
            )?;
        }
        Ok(())
    }
}

/// Writes `report.csv`, `per_sensor.csv` and, when `hours` is given,
/// `per_hour_weekday.csv` into `dir`.
pub fn export_reports(dir: &Path, report: &EvalReport, sensor_ids: &[String], hours: Option<&HourWeekdayTable>) -> Result<()> {
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
        let path = dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to memory");
        std::fs::write(&path, buf).map_err(|e| Error::io(path, e))
    };
    write("report.csv", &|b| report.write_report_csv(b))?;
    write("per_sensor.csv", &|b| report.write_per_sensor_csv(sensor_ids, b))?;
    if let Some(h) = hours {
        write("per_hour_weekday.csv", &|b| h.write_csv(b))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::column(v).unwrap()
    }

    #[test]
    fn worked_example() {
        let r = compute_metrics(&[col(&[3.0, 6.0])], &[col(&[2.0, 4.0])]).unwrap();
        assert_eq!(r.overall.mae, 1.5);
        assert!((r.overall.rmse - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.overall.mape, 0.5);
    }

    #[test]
    fn zero_truth_excluded() {
        let r = compute_metrics(&[col(&[9.0, 6.0])], &[col(&[0.0, 4.0])]).unwrap();
        assert_eq!(r.overall.mae, 2.0);
        assert_eq!(r.overall.mape, 0.5);
        assert_eq!(r.excluded_zero_fraction, 0.5);
        assert_eq!(r.per_sensor[0], None);
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert!(matches!(
            compute_metrics(&[col(&[1.0])], &[col(&[0.0])]),
            Err(Error::DegenerateEval(_))
        ));
    }

    #[test]
    fn weekday_and_hour() {
        // 2018-01-01 was a Monday.
        assert_eq!(utc_weekday(1_514_764_800), 0);
        assert_eq!(utc_weekday(1_514_764_800 + 5 * 86_400), 5);
        assert_eq!(utc_hour(1_514_764_800 + 3 * 3600 + 59), 3);
        assert_eq!(utc_weekday(-1), 2);
    }

    #[test]
    fn sparse_hour_coverage() {
        let monday_3am = 1_514_764_800 + 3 * 3600;
        let p = Matrix::filled(1, 1, 5.0);
        let t = Matrix::filled(1, 1, 4.0);
        let table = per_hour_weekday_mae(&[p], &[t], &[vec![monday_3am]]).unwrap();
        assert_eq!(table.rows.iter().filter(|r| r.mae[0].is_some()).count(), 1);
        assert_eq!(table.rows[3].mae, [Some(1.0); 3]);
        assert_eq!(table.rows[3].mean_volume, Some(4.0));
    }

    #[test]
    fn weekend_only_is_degenerate() {
        let saturday = 1_514_764_800 + 5 * 86_400;
        assert!(matches!(
            per_hour_weekday_mae(&[Matrix::scalar(1.0)], &[Matrix::scalar(2.0)], &[vec![saturday]]),
            Err(Error::DegenerateEval(_))
        ));
    }

    #[test]
    fn report_csv_marks_empty() {
        let r = compute_metrics(
            &[Matrix::from_rows(&[[1.0, 1.0]]).unwrap()],
            &[Matrix::from_rows(&[[2.0, 0.0]]).unwrap()],
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_report_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("step,2,empty,empty,empty,0,1"), "{text}");
        assert!(text.starts_with("scope,step,mae,rmse,mape,included,excluded_zero_fraction\noverall,all,1,1,0.5,1,0.5\n"));
    }
}
