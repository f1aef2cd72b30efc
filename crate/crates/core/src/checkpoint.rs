//! Fitted forecasters and their plain-text checkpoint format.
//!
//! ```text
//! gcgrnn-checkpoint v1
//! kind gcgrnn
//! nodes 10
//! ...
//! tensor encoder.0.a_z 10 10
//! <one line of space-separated values per row>
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so saving and
//! loading is lossless and saving is byte-for-byte deterministic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::baselines::{HaModel, LrModel, VarModel};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelDims, ModelKind, SeqModel};
use crate::tensor::Matrix;

pub const HEADER: &str = "gcgrnn-checkpoint v1";

/// Any fitted model that maps an `N×T` history to an `N×F` forecast.
#[derive(Debug, Clone, PartialEq)]
pub enum Forecaster {
    /// Recurrent model operating on Z-scored volumes.
    Neural { model: SeqModel, normalizer: Normalizer },
    Ha { model: HaModel, input_steps: usize, forecast_steps: usize },
    Lr(LrModel),
    Var { model: VarModel, input_steps: usize, forecast_steps: usize },
}

impl Forecaster {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Forecaster::Neural { model, .. } => model.config().kind.name(),
            Forecaster::Ha { .. } => "ha",
            Forecaster::Lr(_) => "lr",
            Forecaster::Var { .. } => "var",
        }
    }

    pub fn nodes(&self) -> usize {
        match self {
            Forecaster::Neural { model, .. } => model.dims().nodes,
            Forecaster::Ha { model, .. } => model.slot_means().cols(),
            Forecaster::Lr(m) => m.weights().len(),
            Forecaster::Var { model, .. } => model.n(),
        }
    }

    pub fn input_steps(&self) -> usize {
        match self {
            Forecaster::Neural { model, .. } => model.dims().input_steps,
            Forecaster::Ha { input_steps, .. } | Forecaster::Var { input_steps, .. } => *input_steps,
            Forecaster::Lr(m) => m.input_steps(),
        }
    }

    pub fn forecast_steps(&self) -> usize {
        match self {
            Forecaster::Neural { model, .. } => model.dims().forecast_steps,
            Forecaster::Ha { forecast_steps, .. } | Forecaster::Var { forecast_steps, .. } => *forecast_steps,
            Forecaster::Lr(m) => m.forecast_steps(),
        }
    }

    /// Forecast in vehicles per interval. `target_times` are the timestamps of
    /// the `F` forecast steps; only the historical average uses them.
    pub fn predict(&self, x: &Matrix, target_times: &[i64]) -> Result<Matrix> {
        let expected = (self.nodes(), self.input_steps());
        if x.shape() != expected {
            return Err(Error::shape("predict", expected, x.shape()));
        }
        match self {
            Forecaster::Neural { model, normalizer } => {
                Ok(normalizer.invert_matrix(&model.forward(&normalizer.apply_matrix(x))?))
            }
            Forecaster::Ha { model, forecast_steps, .. } => {
                if target_times.len() != *forecast_steps {
                    return Err(Error::Contract(format!(
                        "{} target timestamps for {forecast_steps} forecast steps",
                        target_times.len()
                    )));
                }
                Ok(model.predict(target_times))
            }
            Forecaster::Lr(m) => m.predict(x),
            Forecaster::Var { model, forecast_steps, .. } => model.predict(x, *forecast_steps),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(HEADER.to_string());
        line(format!("kind {}", self.kind_name()));
        line(format!("nodes {}", self.nodes()));
        let hidden = match self {
            Forecaster::Neural { model, .. } => model.dims().hidden,
            _ => 0,
        };
        line(format!("hidden {hidden}"));
        line(format!("input_steps {}", self.input_steps()));
        line(format!("forecast_steps {}", self.forecast_steps()));
        let mut tensors: Vec<(String, &Matrix)> = Vec::new();
        match self {
            Forecaster::Neural { model, normalizer } => {
                line(format!("depth {}", model.config().depth));
                line(format!("share_encoder_decoder {}", model.config().share_encoder_decoder));
                line(format!("normalizer {} {}", normalizer.mean, normalizer.std));
                tensors = model.named_params();
            }
            Forecaster::Ha { model, .. } => {
                line(format!("interval {}", model.interval()));
                tensors.push(("slot_means".into(), model.slot_means()));
            }
            Forecaster::Lr(m) => {
                for (i, w) in m.weights().iter().enumerate() {
                    tensors.push((format!("lr.{i}"), w));
                }
            }
            Forecaster::Var { model, .. } => {
                line(format!("lag {}", model.lag()));
                tensors.push(("var.intercept".into(), model.intercept()));
                for (i, c) in model.coefs().iter().enumerate() {
                    tensors.push((format!("var.c{}", i + 1), c));
                }
            }
        }
        for (name, m) in tensors {
            let mut block = format!("tensor {name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                block.push('\n');
                for (c, v) in m.row(r).iter().enumerate() {
                    if c > 0 {
                        block.push(' ');
                    }
                    write!(block, "{v}").expect("writing to a String");
                }
            }
            line(block);
        }
        line("end".to_string());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Forecaster> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Forecaster::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Forecaster> {
        let mut parsed = Parsed::read(text)?;
        let kind = parsed.key("kind")?;
        let nodes: usize = parsed.num("nodes")?;
        let input_steps: usize = parsed.num("input_steps")?;
        let forecast_steps: usize = parsed.num("forecast_steps")?;
        let mut tensors = std::mem::take(&mut parsed.tensors);
        let mut take = |name: &str| {
            tensors.remove(name).ok_or_else(|| Error::Checkpoint {
                line: 0,
                msg: format!("missing tensor {name}"),
            })
        };
        let forecaster = match kind {
            "gcgrnn" | "seq2seq-rnn" => {
                let dims = ModelDims {
                    nodes,
                    hidden: parsed.num("hidden")?,
                    input_steps,
                    forecast_steps,
                };
                let mut config = ModelConfig::new(ModelKind::from_str(kind)?, dims);
                config.depth = parsed.num("depth")?;
                config.share_encoder_decoder = parsed.num("share_encoder_decoder")?;
                let (line, norm) = parsed.entry("normalizer")?;
                let stats: Vec<f64> = norm
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| Error::Checkpoint { line, msg: format!("bad number {v:?}") }))
                    .collect::<Result<_>>()?;
                let [mean, std] = stats[..] else {
                    return Err(Error::Checkpoint {
                        line,
                        msg: "normalizer needs mean and std".into(),
                    });
                };
                let mut model = SeqModel::zeros(config)?;
                let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
                for name in names {
                    model.set_param(&name, take(&name)?)?;
                }
                Forecaster::Neural {
                    model,
                    normalizer: Normalizer::new(mean, std)?,
                }
            }
            "ha" => Forecaster::Ha {
                model: HaModel::new(parsed.num("interval")?, take("slot_means")?)?,
                input_steps,
                forecast_steps,
            },
            "lr" => Forecaster::Lr(LrModel::new(
                (0..nodes).map(|i| take(&format!("lr.{i}"))).collect::<Result<_>>()?,
            )?),
            "var" => {
                let lag: usize = parsed.num("lag")?;
                let intercept = take("var.intercept")?;
                let coefs = (1..=lag).map(|i| take(&format!("var.c{i}"))).collect::<Result<_>>()?;
                Forecaster::Var {
                    model: VarModel::new(coefs, intercept)?,
                    input_steps,
                    forecast_steps,
                }
            }
            other => return Err(Error::UnsupportedModel(format!("checkpoint kind {other:?}"))),
        };
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Checkpoint {
                line: 0,
                msg: format!("unexpected tensor {name}"),
            });
        }
        if forecaster.nodes() != nodes
            || forecaster.input_steps() != input_steps
            || forecaster.forecast_steps() != forecast_steps
        {
            return Err(Error::Checkpoint {
                line: 0,
                msg: "tensor shapes disagree with the declared dimensions".into(),
            });
        }
        Ok(forecaster)
    }
}

struct Parsed<'a> {
    keys: BTreeMap<&'a str, (usize, &'a str)>,
    tensors: BTreeMap<String, Matrix>,
}

impl<'a> Parsed<'a> {
    fn read(text: &'a str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            _ => {
                return Err(Error::Checkpoint {
                    line: 1,
                    msg: format!("expected header {HEADER:?}"),
                })
            }
        }
        let mut keys = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        let mut ended = false;
        while let Some((no, l)) = lines.next() {
            if l == "end" {
                ended = true;
                break;
            }
            let (key, rest) = l.split_once(' ').ok_or_else(|| Error::Checkpoint {
                line: no,
                msg: format!("malformed line {l:?}"),
            })?;
            if key != "tensor" {
                if keys.insert(key, (no, rest)).is_some() {
                    return Err(Error::Checkpoint { line: no, msg: format!("duplicate key {key}") });
                }
                continue;
            }
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, r, c] = parts[..] else {
                return Err(Error::Checkpoint {
                    line: no,
                    msg: "expected `tensor <name> <rows> <cols>`".into(),
                });
            };
            let dim = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Checkpoint { line: no, msg: format!("bad dimension {s:?}") })
            };
            let (rows, cols) = (dim(r)?, dim(c)?);
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (rno, row) = lines.next().ok_or_else(|| Error::Checkpoint {
                    line: no,
                    msg: format!("tensor {name} is truncated"),
                })?;
                let before = data.len();
                for v in row.split_whitespace() {
                    data.push(v.parse::<f64>().map_err(|_| Error::Checkpoint {
                        line: rno,
                        msg: format!("bad number {v:?}"),
                    })?);
                }
                if data.len() - before != cols {
                    return Err(Error::Checkpoint {
                        line: rno,
                        msg: format!("expected {cols} values"),
                    });
                }
            }
            let m = Matrix::new(rows, cols, data).map_err(|_| Error::Checkpoint {
                line: no,
                msg: format!("tensor {name} has an empty dimension"),
            })?;
            if tensors.insert(name.to_string(), m).is_some() {
                return Err(Error::Checkpoint { line: no, msg: format!("duplicate tensor {name}") });
            }
        }
        if !ended {
            return Err(Error::Checkpoint {
                line: text.lines().count(),
                msg: "missing `end` line".into(),
            });
        }
        Ok(Parsed { keys, tensors })
    }

    fn entry(&self, key: &str) -> Result<(usize, &'a str)> {
        self.keys.get(key).copied().ok_or_else(|| Error::Checkpoint {
            line: 0,
            msg: format!("missing key {key}"),
        })
    }

    fn key(&self, key: &str) -> Result<&'a str> {
        Ok(self.entry(key)?.1)
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.entry(key)?;
        v.trim().parse().map_err(|_| Error::Checkpoint {
            line,
            msg: format!("bad value {v:?} for {key}"),
        })
    }
}
