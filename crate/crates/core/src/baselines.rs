//! Non-graph baselines: historical average, per-sensor linear regression and
//! vector autoregression.

use nalgebra::DMatrix;

use crate::data::{Sample, TrafficSeries};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const SECONDS_PER_DAY: i64 = 86_400;

/// Diagonal jitter added to every normal-equation solve.
pub const RIDGE: f64 = 1e-8;

/// Time-of-day slot means, pooled over all days.
#[derive(Debug, Clone, PartialEq)]
pub struct HaModel {
    interval: i64,
    /// `S×N`, one row per slot of the day.
    slot_means: Matrix,
}

impl HaModel {
    pub fn new(interval: i64, slot_means: Matrix) -> Result<Self> {
        if interval <= 0 || SECONDS_PER_DAY % interval != 0 {
            return Err(Error::Validation(format!("interval {interval}s does not divide a day")));
        }
        let slots = (SECONDS_PER_DAY / interval) as usize;
        if slot_means.rows() != slots {
            return Err(Error::shape("HaModel::new", (slots, slot_means.cols()), slot_means.shape()));
        }
        Ok(HaModel { interval, slot_means })
    }

    pub fn interval(&self) -> i64 {
        self.interval
    }

    pub fn slot_means(&self) -> &Matrix {
        &self.slot_means
    }

    pub fn slot(&self, timestamp: i64) -> usize {
        (timestamp.rem_euclid(SECONDS_PER_DAY) / self.interval) as usize
    }

    /// `N×len(timestamps)`: column `j` holds every sensor's slot mean at `timestamps[j]`.
    pub fn predict(&self, timestamps: &[i64]) -> Matrix {
        let n = self.slot_means.cols();
        let mut out = Matrix::zeros(n, timestamps.len().max(1));
        for (j, &ts) in timestamps.iter().enumerate() {
            let row = self.slot_means.row(self.slot(ts));
            for (i, &v) in row.iter().enumerate() {
                out.set(i, j, v);
            }
        }
        out
    }
}

pub fn ha_fit(series: &TrafficSeries) -> Result<HaModel> {
    let interval = series.interval();
    if SECONDS_PER_DAY % interval != 0 {
        return Err(Error::Validation(format!("interval {interval}s does not divide a day")));
    }
    let slots = (SECONDS_PER_DAY / interval) as usize;
    let n = series.n_sensors();
    let mut sums = Matrix::zeros(slots, n);
    let mut counts = vec![0usize; slots];
    for (r, &ts) in series.timestamps().iter().enumerate() {
        let s = (ts.rem_euclid(SECONDS_PER_DAY) / interval) as usize;
        counts[s] += 1;
        for (i, &v) in series.values().row(r).iter().enumerate() {
            sums.set(s, i, sums.get(s, i) + v);
        }
    }
    if let Some(s) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateData(format!("no observations for time-of-day slot {s}")));
    }
    let means = Matrix::from_fn(slots, n, |s, i| sums.get(s, i) / counts[s] as f64);
    HaModel::new(interval, means)
}

/// Solves `(AᵀA + λI) W = AᵀB`.
fn ridge_solve(design: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = design.ncols();
    let gram = design.tr_mul(design) + DMatrix::<f64>::identity(k, k) * RIDGE;
    let rhs = design.tr_mul(target);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Fit("normal equations are singular".into()))?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("least-squares solution is not finite".into()));
    }
    Ok(w)
}

fn to_matrix(m: &DMatrix<f64>) -> Result<Matrix> {
    Matrix::new(m.nrows(), m.ncols(), (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect())
}

/// Per-sensor multi-output least squares from the sensor's own history.
#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    /// One `(T+1)×F` matrix per sensor; row 0 is the intercept.
    weights: Vec<Matrix>,
}

impl LrModel {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::Validation("LR model needs at least one sensor".into()))?
            .shape();
        if first.0 < 2 {
            return Err(Error::Validation("LR weights need an intercept and at least one lag".into()));
        }
        if let Some(w) = weights.iter().find(|w| w.shape() != first) {
            return Err(Error::shape("LrModel::new", first, w.shape()));
        }
        Ok(LrModel { weights })
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn input_steps(&self) -> usize {
        self.weights[0].rows() - 1
    }

    pub fn forecast_steps(&self) -> usize {
        self.weights[0].cols()
    }

    /// `N×T` history to `N×F` forecast.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let expected = (self.weights.len(), self.input_steps());
        if x.shape() != expected {
            return Err(Error::shape("lr_predict", expected, x.shape()));
        }
        let f = self.forecast_steps();
        let mut out = Matrix::zeros(x.rows(), f);
        for (i, w) in self.weights.iter().enumerate() {
            for d in 0..f {
                let v = w.get(0, d) + x.row(i).iter().enumerate().map(|(k, &xv)| xv * w.get(k + 1, d)).sum::<f64>();
                out.set(i, d, v);
            }
        }
        Ok(out)
    }
}

/// Fits the weights of one sensor.
pub fn lr_fit_sensor(train: &[Sample], sensor: usize) -> Result<Matrix> {
    let first = train
        .first()
        .ok_or_else(|| Error::InsufficientData("no training samples".into()))?;
    let (t, f) = (first.x.cols(), first.y.cols());
    if sensor >= first.x.rows() {
        return Err(Error::Contract(format!("sensor {sensor} out of range")));
    }
    let design = DMatrix::from_fn(train.len(), t + 1, |r, c| if c == 0 { 1.0 } else { train[r].x.get(sensor, c - 1) });
    let target = DMatrix::from_fn(train.len(), f, |r, c| train[r].y.get(sensor, c));
    to_matrix(&ridge_solve(&design, &target)?)
}

pub fn lr_fit(train: &[Sample]) -> Result<LrModel> {
    let n = train
        .first()
        .ok_or_else(|| Error::InsufficientData("no training samples".into()))?
        .x
        .rows();
    LrModel::new((0..n).map(|i| lr_fit_sensor(train, i)).collect::<Result<_>>()?)
}

/// `x_t = c + Σ_{i=1..p} C_i x_{t−i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    coefs: Vec<Matrix>,
    intercept: Matrix,
}

impl VarModel {
    pub fn new(coefs: Vec<Matrix>, intercept: Matrix) -> Result<Self> {
        let n = intercept.rows();
        if intercept.cols() != 1 {
            return Err(Error::shape("VarModel::new", (n, 1), intercept.shape()));
        }
        if coefs.is_empty() {
            return Err(Error::Validation("VAR lag order must be at least 1".into()));
        }
        if let Some(c) = coefs.iter().find(|c| c.shape() != (n, n)) {
            return Err(Error::shape("VarModel::new", (n, n), c.shape()));
        }
        Ok(VarModel { coefs, intercept })
    }

    pub fn lag(&self) -> usize {
        self.coefs.len()
    }

    pub fn n(&self) -> usize {
        self.intercept.rows()
    }

    /// `C_1..C_p`.
    pub fn coefs(&self) -> &[Matrix] {
        &self.coefs
    }

    pub fn intercept(&self) -> &Matrix {
        &self.intercept
    }

    /// Recursive forecast from `history` (`N×k`, oldest column first, `k ≥ p`).
    pub fn predict(&self, history: &Matrix, steps: usize) -> Result<Matrix> {
        let (n, p) = (self.n(), self.lag());
        if history.rows() != n {
            return Err(Error::shape("var_predict", (n, p), history.shape()));
        }
        if history.cols() < p {
            return Err(Error::Contract(format!("VAR({p}) needs {p} history columns, got {}", history.cols())));
        }
        if steps == 0 {
            return Err(Error::Contract("forecast horizon must be positive".into()));
        }
        // Most recent first.
        let mut lags: Vec<Vec<f64>> = (0..p).map(|i| history.col(history.cols() - 1 - i).into_data()).collect();
        let mut out = Matrix::zeros(n, steps);
        for d in 0..steps {
            let mut next = self.intercept.data().to_vec();
            for (c, lag) in self.coefs.iter().zip(&lags) {
                for (r, v) in next.iter_mut().enumerate() {
                    *v += c.row(r).iter().zip(lag).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            for (r, &v) in next.iter().enumerate() {
                out.set(r, d, v);
            }
            lags.rotate_right(1);
            lags[0] = next;
        }
        Ok(out)
    }
}

/// Least-squares VAR(p) over one or more contiguous `L×N` segments.
pub fn var_fit_segments(segments: &[&Matrix], p: usize) -> Result<VarModel> {
    if p == 0 {
        return Err(Error::Validation("VAR lag order must be at least 1".into()));
    }
    let n = segments
        .first()
        .ok_or_else(|| Error::InsufficientData("no segments".into()))?
        .cols();
    if let Some(s) = segments.iter().find(|s| s.cols() != n) {
        return Err(Error::shape("var_fit", (s.rows(), n), s.shape()));
    }
    let rows: usize = segments.iter().map(|s| s.rows().saturating_sub(p)).sum();
    if rows == 0 {
        return Err(Error::InsufficientData(format!("VAR({p}) needs more than {p} observations")));
    }
    let k = 1 + p * n;
    let mut design = DMatrix::<f64>::zeros(rows, k);
    let mut target = DMatrix::<f64>::zeros(rows, n);
    let mut r = 0;
    for s in segments {
        for t in p..s.rows() {
            design[(r, 0)] = 1.0;
            for i in 0..p {
                for (j, &v) in s.row(t - 1 - i).iter().enumerate() {
                    design[(r, 1 + i * n + j)] = v;
                }
            }
            for (j, &v) in s.row(t).iter().enumerate() {
                target[(r, j)] = v;
            }
            r += 1;
        }
    }
    let w = ridge_solve(&design, &target)?;
    // w is k×N; C_i[a][b] = w[1 + i·n + b][a].
    let intercept = Matrix::from_fn(n, 1, |a, _| w[(0, a)]);
    let coefs = (0..p)
        .map(|i| Matrix::from_fn(n, n, |a, b| w[(1 + i * n + b, a)]))
        .collect();
    VarModel::new(coefs, intercept)
}

pub fn var_fit(series: &TrafficSeries, p: usize) -> Result<VarModel> {
    var_fit_segments(&[series.values()], p)
}
