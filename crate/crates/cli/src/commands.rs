use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gcgrnn::baselines::{ha_fit, lr_fit, var_fit};
use gcgrnn::checkpoint::Forecaster;
use gcgrnn::data::{
    line_coupling, load_csv, make_windows, split_chronological, synth_generate, Normalizer, Sample, SplitSet,
    TrafficSeries,
};
use gcgrnn::eval::{compute_metrics, export_reports, per_hour_weekday_mae};
use gcgrnn::graph::{export_filter, Adjacency};
use gcgrnn::model::{Cell, ModelConfig, ModelDims, ModelKind, SeqModel};
use gcgrnn::training;
use gcgrnn::{Error, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CouplingKind, Kind, RunConfig};
use crate::CliError;

struct Dataset {
    series: TrafficSeries,
    split: SplitSet,
    normalizer: Normalizer,
}

impl Dataset {
    /// Series rows spanned by the training samples, inputs and targets.
    fn train_rows(&self) -> Result<TrafficSeries, CliError> {
        let last = self.split.train.last().expect("split checked nonempty");
        let end = last.start + last.x.cols() + last.y.cols();
        Ok(self.series.slice(0, end)?)
    }

    fn target_times(&self, sample: &Sample) -> Vec<i64> {
        (0..sample.y.cols())
            .map(|d| self.series.timestamps()[sample.target_row(d)])
            .collect()
    }
}

fn synth_series(cfg: &RunConfig) -> Result<TrafficSeries, CliError> {
    let s = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("no [synth] section".into()))?;
    let coupling = match s.coupling {
        CouplingKind::Line => line_coupling(s.sensors, s.seed)?,
        CouplingKind::None => Adjacency::identity(s.sensors),
    };
    Ok(synth_generate(&s.params(), &coupling)?)
}

fn load_series(cfg: &RunConfig) -> Result<TrafficSeries, CliError> {
    cfg.check_inputs()?;
    match &cfg.data.csv {
        Some(path) => Ok(load_csv(path)?),
        None => synth_series(cfg),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let series = load_series(cfg)?;
    let samples = make_windows(&series, cfg.data.input_steps, cfg.data.forecast_steps)?;
    let split = split_chronological(samples, cfg.ratios())?;
    if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "split sizes {}/{}/{} leave a part empty",
            split.train.len(),
            split.validation.len(),
            split.test.len()
        ))
        .into());
    }
    let normalizer = Normalizer::fit(&split.train)?;
    Ok(Dataset {
        series,
        split,
        normalizer,
    })
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn synth(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let path = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.csv.clone())
        .ok_or_else(|| CliError::Config("no destination: pass --out or set [data] csv".into()))?;
    let series = synth_series(&cfg)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    series.save_csv(&path)?;
    println!(
        "wrote {} rows x {} sensors to {}",
        series.len(),
        series.n_sensors(),
        path.display()
    );
    Ok(())
}

pub fn prepare(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data = load_dataset(&cfg)?;
    let dir = output_dir(&cfg)?;
    let mut split = String::from("part,samples,first_start,last_start\n");
    for (name, part) in [
        ("train", &data.split.train),
        ("validation", &data.split.validation),
        ("test", &data.split.test),
    ] {
        let first = part.first().map_or(0, |s| s.start);
        let last = part.last().map_or(0, |s| s.start);
        writeln!(split, "{name},{},{first},{last}", part.len()).expect("writing to a String");
    }
    write_text(&dir.join("split.csv"), &split)?;
    write_text(
        &dir.join("normalizer.csv"),
        &format!("mean,std\n{},{}\n", data.normalizer.mean, data.normalizer.std),
    )?;
    println!(
        "{} rows x {} sensors -> {} train / {} validation / {} test samples; mean {:.3}, std {:.3}",
        data.series.len(),
        data.series.n_sensors(),
        data.split.train.len(),
        data.split.validation.len(),
        data.split.test.len(),
        data.normalizer.mean,
        data.normalizer.std
    );
    Ok(())
}

pub fn train(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data = load_dataset(&cfg)?;
    let dir = output_dir(&cfg)?;
    let (t, f) = (cfg.data.input_steps, cfg.data.forecast_steps);
    let forecaster = match cfg.model.kind {
        Kind::Gcgrnn | Kind::Seq2SeqRnn => {
            let kind = if cfg.model.kind == Kind::Gcgrnn {
                ModelKind::GraphConvGru
            } else {
                ModelKind::PlainGru
            };
            let dims = ModelDims {
                nodes: data.series.n_sensors(),
                hidden: cfg.model.hidden,
                input_steps: t,
                forecast_steps: f,
            };
            let mut mc = ModelConfig::new(kind, dims);
            mc.depth = cfg.model.depth;
            mc.share_encoder_decoder = cfg.model.share_encoder_decoder;
            mc.ddgf_init = cfg.model.ddgf_init.into();
            let tc = cfg.train_config();
            let model = SeqModel::init(mc, &mut ChaCha8Rng::seed_from_u64(tc.seed))?;
            log::info!("training {kind} with {} parameters", model.param_count());
            let (best, history) = training::train(model, &data.split, &data.normalizer, &tc)?;
            history.save_csv(&dir.join("history.csv"))?;
            let b = history.best().expect("at least one epoch");
            println!(
                "best epoch {} of {}: validation MAE {:.4}",
                b.epoch,
                history.records.len(),
                b.val_mae
            );
            Forecaster::Neural {
                model: best,
                normalizer: data.normalizer,
            }
        }
        Kind::Ha => Forecaster::Ha {
            model: ha_fit(&data.train_rows()?)?,
            input_steps: t,
            forecast_steps: f,
        },
        Kind::Lr => Forecaster::Lr(lr_fit(&data.split.train)?),
        Kind::Var => Forecaster::Var {
            model: var_fit(&data.train_rows()?, cfg.model.var_lag)?,
            input_steps: t,
            forecast_steps: f,
        },
    };
    let path = dir.join("checkpoint.txt");
    forecaster.save(&path)?;
    println!("wrote {} checkpoint to {}", forecaster.kind_name(), path.display());
    Ok(())
}

fn load_compatible(cfg: &RunConfig, data: &Dataset, checkpoint: &Path) -> Result<Forecaster, CliError> {
    let fc = Forecaster::load(checkpoint)?;
    let have = (fc.nodes(), fc.input_steps(), fc.forecast_steps());
    let want = (data.series.n_sensors(), cfg.data.input_steps, cfg.data.forecast_steps);
    if have != want {
        return Err(CliError::Config(format!(
            "checkpoint has N={} T={} F={} but the data and config have N={} T={} F={}",
            have.0, have.1, have.2, want.0, want.1, want.2
        )));
    }
    Ok(fc)
}

pub fn eval(config: &Path, checkpoint: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data = load_dataset(&cfg)?;
    let fc = load_compatible(&cfg, &data, checkpoint)?;
    let dir = output_dir(&cfg)?;
    let mut preds = Vec::with_capacity(data.split.test.len());
    let mut times = Vec::with_capacity(data.split.test.len());
    for s in &data.split.test {
        let ts = data.target_times(s);
        preds.push(fc.predict(&s.x, &ts)?);
        times.push(ts);
    }
    let truths: Vec<Matrix> = data.split.test.iter().map(|s| s.y.clone()).collect();
    let report = compute_metrics(&preds, &truths)?;
    let hours = match per_hour_weekday_mae(&preds, &truths, &times) {
        Ok(h) => Some(h),
        Err(Error::DegenerateEval(msg)) => {
            log::warn!("skipping per_hour_weekday.csv: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    export_reports(&dir, &report, data.series.sensor_ids(), hours.as_ref())?;
    let o = report.overall;
    println!(
        "{} test: MAE {:.4}, RMSE {:.4}, MAPE {:.2}% over {} entries ({:.2}% zero targets excluded)",
        fc.kind_name(),
        o.mae,
        o.rmse,
        100.0 * o.mape,
        o.included,
        100.0 * report.excluded_zero_fraction
    );
    Ok(())
}

pub fn predict(config: &Path, checkpoint: &Path, start: usize) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data = load_dataset(&cfg)?;
    let fc = load_compatible(&cfg, &data, checkpoint)?;
    let windows = make_windows(&data.series, cfg.data.input_steps, cfg.data.forecast_steps)?;
    let sample = windows.get(start).ok_or_else(|| {
        CliError::Config(format!("start {start} out of range; windows start at 0..={}", windows.len() - 1))
    })?;
    let ts = data.target_times(sample);
    let pred = fc.predict(&sample.x, &ts)?;
    let mut out = String::from("step,timestamp,sensor,truth,prediction\n");
    for (d, t) in ts.iter().enumerate() {
        for (i, id) in data.series.sensor_ids().iter().enumerate() {
            writeln!(out, "{},{t},{id},{},{}", d + 1, sample.y.get(i, d), pred.get(i, d)).expect("writing to a String");
        }
    }
    let dir = output_dir(&cfg)?;
    let path = dir.join(format!("predict_{start}.csv"));
    write_text(&path, &out)?;
    println!("wrote {} forecast rows to {}", ts.len() * data.series.n_sensors(), path.display());
    Ok(())
}

pub fn export_adjacency(checkpoint: &Path, out: Option<&Path>, cell: &str) -> Result<(), CliError> {
    let fc = Forecaster::load(checkpoint)?;
    let model = match &fc {
        Forecaster::Neural { model, .. } if model.config().kind == ModelKind::GraphConvGru => model,
        other => {
            return Err(Error::UnsupportedModel(format!(
                "{} checkpoints have no learned graph filters",
                other.kind_name()
            ))
            .into())
        }
    };
    let (part, layer) = cell
        .split_once('.')
        .and_then(|(p, l)| Some((p, l.parse::<usize>().ok()?)))
        .ok_or_else(|| CliError::Config(format!("cell {cell:?} is not `encoder.<k>` or `decoder.<k>`")))?;
    let cells = match part {
        "encoder" => model.encoder(),
        "decoder" => model.decoder(),
        _ => return Err(CliError::Config(format!("unknown cell group {part:?}"))),
    };
    let Some(Cell::Gcgru(p)) = cells.get(layer) else {
        return Err(CliError::Config(format!("model has no cell {cell}")));
    };
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    for (gate, filter) in ["z", "r", "h"].iter().zip(p.filters()) {
        export_filter(filter, &dir.join(format!("adjacency_{gate}.csv")))?;
    }
    println!(
        "wrote {n}x{n} filters adjacency_z/r/h.csv for {cell} to {}",
        dir.display(),
        n = model.dims().nodes
    );
    Ok(())
}
