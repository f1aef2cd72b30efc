//! Series ingestion, moving-window samples, chronological splits, Z-score
//! normalization and a seeded synthetic generator.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{gaussian_adjacency, Adjacency};
use crate::tensor::Matrix;

/// Multi-sensor volume series: one row per interval, one column per sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    sensor_ids: Vec<String>,
    timestamps: Vec<i64>,
    values: Matrix,
}

impl TrafficSeries {
    pub fn new(sensor_ids: Vec<String>, timestamps: Vec<i64>, values: Matrix) -> Result<Self> {
        if values.cols() != sensor_ids.len() {
            return Err(Error::Validation(format!(
                "{} sensor ids for {} value columns",
                sensor_ids.len(),
                values.cols()
            )));
        }
        if values.rows() != timestamps.len() {
            return Err(Error::Validation(format!(
                "{} timestamps for {} value rows",
                timestamps.len(),
                values.rows()
            )));
        }
        if timestamps.len() < 2 {
            return Err(Error::InsufficientData("need at least two intervals".into()));
        }
        let interval = timestamps[1] - timestamps[0];
        for (i, w) in timestamps.windows(2).enumerate() {
            let step = w[1] - w[0];
            if step <= 0 {
                return Err(Error::Validation(format!("timestamps not increasing at row {}", i + 1)));
            }
            if step != interval {
                return Err(Error::Validation(format!("non-uniform spacing at row {}", i + 1)));
            }
        }
        if let Some(v) = values.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!("volume {v} is not a finite nonnegative number")));
        }
        Ok(TrafficSeries {
            sensor_ids,
            timestamps,
            values,
        })
    }

    pub fn sensor_ids(&self) -> &[String] {
        &self.sensor_ids
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Number of intervals, L.
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    /// Spacing between consecutive timestamps, in seconds.
    pub fn interval(&self) -> i64 {
        self.timestamps[1] - self.timestamps[0]
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<TrafficSeries> {
        if start >= end || end > self.len() {
            return Err(Error::Contract(format!(
                "slice {start}..{end} out of range for {} rows",
                self.len()
            )));
        }
        let n = self.n_sensors();
        let values = Matrix::new(end - start, n, self.values.data()[start * n..end * n].to_vec())?;
        TrafficSeries::new(self.sensor_ids.clone(), self.timestamps[start..end].to_vec(), values)
    }

    /// Writes the `timestamp,<id>,...` CSV layout.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "timestamp,{}", self.sensor_ids.join(","))?;
        for (r, ts) in self.timestamps.iter().enumerate() {
            write!(out, "{ts}")?;
            for v in self.values.row(r) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads `timestamp,<id1>,<id2>,...` with epoch-second timestamps.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn load_csv(path: &Path) -> Result<TrafficSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

pub fn parse_csv<R: std::io::Read>(input: R) -> Result<TrafficSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(Error::Parse { row: 1, msg: "no data rows".into() }),
        Some(r) => r.map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?,
    };
    if header.get(0) != Some("timestamp") {
        return Err(Error::Parse {
            row: 1,
            msg: "header must start with `timestamp`".into(),
        });
    }
    let sensor_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if sensor_ids.is_empty() {
        return Err(Error::Parse { row: 1, msg: "no sensor columns".into() });
    }
    if let Some(id) = sensor_ids.iter().find(|s| s.is_empty()) {
        return Err(Error::Parse { row: 1, msg: format!("empty sensor id {id:?}") });
    }

    let n = sensor_ids.len();
    let mut timestamps: Vec<i64> = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != n + 1 {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} cells, found {}", n + 1, rec.len()),
            });
        }
        let ts: i64 = rec[0].parse().map_err(|_| Error::Parse {
            row,
            msg: format!("timestamp {:?} is not an integer", &rec[0]),
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts == prev {
                return Err(Error::Parse { row, msg: format!("duplicate timestamp {ts}") });
            }
            if ts < prev {
                return Err(Error::Parse { row, msg: format!("timestamp {ts} goes backwards") });
            }
            if timestamps.len() >= 2 {
                let interval = timestamps[1] - timestamps[0];
                if ts - prev != interval {
                    return Err(Error::Parse {
                        row,
                        msg: format!("timestamp gap: expected {}, found {ts}", prev + interval),
                    });
                }
            }
        }
        for (c, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    msg: format!("missing value for sensor {}", sensor_ids[c]),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("value {cell:?} is not numeric"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    row,
                    msg: format!("volume {cell} must be finite and nonnegative"),
                });
            }
            values.push(v);
        }
        timestamps.push(ts);
    }
    if timestamps.is_empty() {
        return Err(Error::Parse { row: 2, msg: "no data rows".into() });
    }
    if timestamps.len() < 2 {
        return Err(Error::Parse {
            row: 2,
            msg: "need at least two data rows to establish spacing".into(),
        });
    }
    let values = Matrix::new(timestamps.len(), n, values)?;
    TrafficSeries::new(sensor_ids, timestamps, values)
}

/// One moving-window sample: history `x` (`N×T`) and target `y` (`N×F`)
/// taken from series rows `[start, start+T)` and `[start+T, start+T+F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Matrix,
    pub y: Matrix,
    pub start: usize,
}

impl Sample {
    /// Series row of the `d`-th forecast step (0-based).
    pub fn target_row(&self, d: usize) -> usize {
        self.start + self.x.cols() + d
    }
}

pub fn window_count(len: usize, input_steps: usize, forecast_steps: usize) -> Option<usize> {
    (len + 1).checked_sub(input_steps + forecast_steps)
}

/// Moving windows with step one.
pub fn make_windows(series: &TrafficSeries, input_steps: usize, forecast_steps: usize) -> Result<Vec<Sample>> {
    if input_steps == 0 || forecast_steps == 0 {
        return Err(Error::Validation("T and F must be positive".into()));
    }
    let count = window_count(series.len(), input_steps, forecast_steps)
        .filter(|&c| c > 0)
        .ok_or_else(|| {
            Error::InsufficientData(format!(
                "series has {} rows, windows need T+F = {}",
                series.len(),
                input_steps + forecast_steps
            ))
        })?;
    let v = series.values();
    let n = series.n_sensors();
    Ok((0..count)
        .map(|start| Sample {
            x: Matrix::from_fn(n, input_steps, |r, c| v.get(start + c, r)),
            y: Matrix::from_fn(n, forecast_steps, |r, c| v.get(start + input_steps + c, r)),
            start,
        })
        .collect())
}

/// Train/validation/test proportions; test takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            validation: 0.1,
        }
    }
}

/// Part sizes for `n` samples: train and validation rounded half up, test the remainder.
pub fn split_counts(n: usize, ratios: SplitRatios) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} samples cannot be split three ways")));
    }
    let ok = |r: f64| (0.0..=1.0).contains(&r);
    if !ok(ratios.train) || !ok(ratios.validation) || ratios.train + ratios.validation > 1.0 {
        return Err(Error::Validation(format!("invalid split ratios {ratios:?}")));
    }
    let round = |r: f64| ((r * n as f64) + 0.5).floor() as usize;
    let train = round(ratios.train).min(n);
    let validation = round(ratios.validation).min(n - train);
    Ok((train, validation, n - train - validation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet<T = Sample> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Contiguous prefix / middle / suffix split of time-ordered samples.
pub fn split_chronological<T>(samples: Vec<T>, ratios: SplitRatios) -> Result<SplitSet<T>> {
    let (n_train, n_val, _) = split_counts(samples.len(), ratios)?;
    let mut rest = samples;
    let mut tail = rest.split_off(n_train);
    let test = tail.split_off(n_val);
    Ok(SplitSet {
        train: rest,
        validation: tail,
        test,
    })
}

/// Z-score statistics fitted on training samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::DegenerateData(format!("invalid normalizer mean={mean} std={std}")));
        }
        Ok(Normalizer { mean, std })
    }

    /// Population mean and standard deviation over every `x` and `y` entry.
    pub fn fit(train: &[Sample]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("no training samples".into()));
        }
        let entries = || train.iter().flat_map(|s| s.x.data().iter().chain(s.y.data()));
        let count = entries().count() as f64;
        let mean = entries().sum::<f64>() / count;
        let var = entries().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        if var <= 0.0 {
            return Err(Error::DegenerateData("training data is constant".into()));
        }
        Normalizer::new(mean, var.sqrt())
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        m.map(|v| self.apply(v))
    }

    pub fn invert_matrix(&self, m: &Matrix) -> Matrix {
        m.map(|v| self.invert(v))
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_sensors: usize,
    pub n_steps: usize,
    /// Cycle length in intervals.
    pub period: usize,
    /// Marginal standard deviation of the additive noise, in volume units.
    pub noise_std: f64,
    /// Lag-one autocorrelation of the noise; 0 gives white noise.
    pub noise_ar: f64,
    /// Per-sensor base volumes are drawn uniformly from this range.
    pub base_range: (f64, f64),
    pub start_timestamp: i64,
    pub interval_seconds: i64,
    pub seed: u64,
}

impl SynthParams {
    pub fn new(n_sensors: usize, n_steps: usize, period: usize, noise_std: f64, seed: u64) -> Self {
        SynthParams {
            n_sensors,
            n_steps,
            period,
            noise_std,
            noise_ar: 0.0,
            base_range: (100.0, 500.0),
            // 2018-01-01T00:00:00Z
            start_timestamp: 1_514_764_800,
            interval_seconds: 3600,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.period < 2 {
            return Err(Error::Validation(format!("period must be at least 2, got {}", self.period)));
        }
        if self.n_sensors == 0 || self.n_steps < 2 {
            return Err(Error::Validation("need at least one sensor and two steps".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Validation("noise_std must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.noise_ar) {
            return Err(Error::Validation("noise_ar must lie in [0, 1)".into()));
        }
        let (lo, hi) = self.base_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation("base_range must satisfy 0 < lo <= hi".into()));
        }
        if self.interval_seconds <= 0 {
            return Err(Error::Validation("interval_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Seeded sinusoidal traffic.
///
/// Sensor `i` carries `base_i·(1 + sin(2πt/period + φ_i))`, averaged once over
/// its neighbors with row-normalized `coupling` weights, plus Gaussian AR(1)
/// noise with marginal standard deviation `noise_std`, clipped at zero.
pub fn synth_generate(params: &SynthParams, coupling: &Adjacency) -> Result<TrafficSeries> {
    params.validate()?;
    let n = params.n_sensors;
    if coupling.n() != n {
        return Err(Error::shape("synth_generate", (n, n), coupling.weights().shape()));
    }
    let row_sums = coupling.degrees();
    if let Some(i) = row_sums.iter().position(|&s| s <= 0.0) {
        return Err(Error::DegenerateDegree(i));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (lo, hi) = params.base_range;
    let bases: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    let phases: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let innovation = Normal::new(0.0, 1.0).expect("unit normal");
    let rho = params.noise_ar;
    let innovation_scale = params.noise_std * (1.0 - rho * rho).sqrt();

    let w = coupling.weights();
    let mut noise: Vec<f64> = (0..n).map(|_| params.noise_std * innovation.sample(&mut rng)).collect();
    let mut values = Vec::with_capacity(params.n_steps * n);
    let mut raw = vec![0.0; n];
    for t in 0..params.n_steps {
        if t > 0 {
            for e in noise.iter_mut() {
                *e = rho * *e + innovation_scale * innovation.sample(&mut rng);
            }
        }
        let cycle = std::f64::consts::TAU * (t % params.period) as f64 / params.period as f64;
        for i in 0..n {
            raw[i] = bases[i] * (1.0 + (cycle + phases[i]).sin());
        }
        for i in 0..n {
            let smoothed: f64 = w.row(i).iter().zip(&raw).map(|(c, r)| c * r).sum::<f64>() / row_sums[i];
            values.push((smoothed + noise[i]).max(0.0));
        }
    }

    let sensor_ids = (0..n).map(|i| format!("s{i:03}")).collect();
    let timestamps = (0..params.n_steps as i64)
        .map(|t| params.start_timestamp + t * params.interval_seconds)
        .collect();
    TrafficSeries::new(sensor_ids, timestamps, Matrix::new(params.n_steps, n, values)?)
}

/// Gaussian-kernel coupling for sensors dropped uniformly on a line of
/// length `n`, pruned at 0.1.
///
/// With fewer than three sensors the kernel width is undefined (all
/// off-diagonal distances coincide) and the sensors are left uncoupled.
pub fn line_coupling(n: usize, seed: u64) -> Result<Adjacency> {
    if n < 3 {
        return Ok(Adjacency::identity(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..n as f64)).collect();
    let dist = Matrix::from_fn(n, n, |i, j| (pos[i] - pos[j]).abs());
    gaussian_adjacency(&dist, 0.1)
}
