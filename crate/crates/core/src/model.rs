//! GRU and graph-convolutional GRU cells assembled into an encoder-decoder.
//!
//! Signals are node-major: every matrix has one row per sensor. A step input
//! is `N×1` (one volume per sensor), hidden states are `N×H`.
//!
//! The encoder consumes the `T` history columns left to right starting from a
//! zero state. The decoder starts from the encoder's final state, receives a
//! zero "GO" column first and then its own previous prediction at each step.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{ddgf_conv_on, DdgfFilter, DdgfInit, FilterWeights};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Plain sequence-to-sequence GRU.
    PlainGru,
    /// GRU whose gate maps are data-driven graph convolutions.
    GraphConvGru,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PlainGru => "seq2seq-rnn",
            ModelKind::GraphConvGru => "gcgrnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq2seq-rnn" => Ok(ModelKind::PlainGru),
            "gcgrnn" => Ok(ModelKind::GraphConvGru),
            other => Err(Error::Validation(format!("unknown recurrent model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Sensors, N.
    pub nodes: usize,
    /// Hidden units, H.
    pub hidden: usize,
    /// History steps, T.
    pub input_steps: usize,
    /// Forecast steps, F.
    pub forecast_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub depth: usize,
    pub share_encoder_decoder: bool,
    pub ddgf_init: DdgfInit,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, dims: ModelDims) -> Self {
        ModelConfig {
            kind,
            dims,
            depth: 1,
            share_encoder_decoder: false,
            ddgf_init: DdgfInit::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.nodes == 0 || d.hidden == 0 || d.input_steps == 0 || d.forecast_steps == 0 {
            return Err(Error::Validation(format!(
                "model dimensions must be positive: N={} H={} T={} F={}",
                d.nodes, d.hidden, d.input_steps, d.forecast_steps
            )));
        }
        if self.depth == 0 {
            return Err(Error::Validation("depth must be at least 1".into()));
        }
        Ok(())
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Dense GRU weights; `W_•` are `(H+M)×H`, biases `1×H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

impl GruParams {
    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        let w = Matrix::zeros(hidden + input_width, hidden);
        let b = Matrix::zeros(1, hidden);
        GruParams {
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn init<R: Rng + ?Sized>(input_width: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = hidden + input_width;
        let mut p = GruParams::zeros(input_width, hidden);
        p.w_z = uniform_matrix(fan_in, hidden, fan_in, rng);
        p.w_r = uniform_matrix(fan_in, hidden, fan_in, rng);
        p.w_h = uniform_matrix(fan_in, hidden, fan_in, rng);
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_z.cols()
    }
}

/// Graph-convolutional GRU weights: one DDGF and one Θ per gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GcgruParams {
    pub a_z: DdgfFilter,
    pub a_r: DdgfFilter,
    pub a_h: DdgfFilter,
    pub theta_z: FilterWeights,
    pub theta_r: FilterWeights,
    pub theta_h: FilterWeights,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
}

impl GcgruParams {
    pub fn zeros(nodes: usize, input_width: usize, hidden: usize) -> Self {
        let a = DdgfFilter::new(Matrix::zeros(nodes, nodes)).expect("square");
        let theta = FilterWeights::new(Matrix::zeros(hidden + input_width, hidden));
        let b = Matrix::zeros(1, hidden);
        GcgruParams {
            a_z: a.clone(),
            a_r: a.clone(),
            a_h: a,
            theta_z: theta.clone(),
            theta_r: theta.clone(),
            theta_h: theta,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn init<R: Rng + ?Sized>(
        nodes: usize,
        input_width: usize,
        hidden: usize,
        scheme: DdgfInit,
        rng: &mut R,
    ) -> Self {
        let fan_in = hidden + input_width;
        let mut p = GcgruParams::zeros(nodes, input_width, hidden);
        p.a_z = DdgfFilter::init(nodes, scheme, rng);
        p.a_r = DdgfFilter::init(nodes, scheme, rng);
        p.a_h = DdgfFilter::init(nodes, scheme, rng);
        p.theta_z = FilterWeights::new(uniform_matrix(fan_in, hidden, fan_in, rng));
        p.theta_r = FilterWeights::new(uniform_matrix(fan_in, hidden, fan_in, rng));
        p.theta_h = FilterWeights::new(uniform_matrix(fan_in, hidden, fan_in, rng));
        p
    }

    pub fn filters(&self) -> [&DdgfFilter; 3] {
        [&self.a_z, &self.a_r, &self.a_h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Gru(GruParams),
    Gcgru(GcgruParams),
}

impl Cell {
    fn named_params(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            Cell::Gru(p) => vec![
                ("w_z", &p.w_z),
                ("w_r", &p.w_r),
                ("w_h", &p.w_h),
                ("b_z", &p.b_z),
                ("b_r", &p.b_r),
                ("b_h", &p.b_h),
            ],
            Cell::Gcgru(p) => vec![
                ("a_z", p.a_z.base()),
                ("a_r", p.a_r.base()),
                ("a_h", p.a_h.base()),
                ("theta_z", p.theta_z.matrix()),
                ("theta_r", p.theta_r.matrix()),
                ("theta_h", p.theta_h.matrix()),
                ("b_z", &p.b_z),
                ("b_r", &p.b_r),
                ("b_h", &p.b_h),
            ],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Cell::Gru(p) => vec![&mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.b_z, &mut p.b_r, &mut p.b_h],
            Cell::Gcgru(p) => vec![
                p.a_z.base_mut(),
                p.a_r.base_mut(),
                p.a_h.base_mut(),
                p.theta_z.matrix_mut(),
                p.theta_r.matrix_mut(),
                p.theta_h.matrix_mut(),
                &mut p.b_z,
                &mut p.b_r,
                &mut p.b_h,
            ],
        }
    }

    fn bind(&self, tape: &mut Tape) -> Result<BoundCell> {
        Ok(match self {
            Cell::Gru(p) => BoundCell::Gru {
                w: [tape.param(p.w_z.clone()), tape.param(p.w_r.clone()), tape.param(p.w_h.clone())],
                b: [tape.param(p.b_z.clone()), tape.param(p.b_r.clone()), tape.param(p.b_h.clone())],
            },
            Cell::Gcgru(p) => {
                let bases = [
                    tape.param(p.a_z.base().clone()),
                    tape.param(p.a_r.base().clone()),
                    tape.param(p.a_h.base().clone()),
                ];
                let theta = [
                    tape.param(p.theta_z.matrix().clone()),
                    tape.param(p.theta_r.matrix().clone()),
                    tape.param(p.theta_h.matrix().clone()),
                ];
                let b = [tape.param(p.b_z.clone()), tape.param(p.b_r.clone()), tape.param(p.b_h.clone())];
                let filters = [
                    tape.symmetrize(bases[0])?,
                    tape.symmetrize(bases[1])?,
                    tape.symmetrize(bases[2])?,
                ];
                BoundCell::Gcgru { filters, theta, b }
            }
        })
    }
}

/// A cell whose parameters live on a tape. Gate order is `[z, r, h]`.
#[derive(Debug, Clone, Copy)]
pub enum BoundCell {
    Gru { w: [Var; 3], b: [Var; 3] },
    Gcgru { filters: [Var; 3], theta: [Var; 3], b: [Var; 3] },
}

/// Node handles of one recurrent step.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub update: Var,
    pub reset: Var,
    pub candidate: Var,
    pub hidden: Var,
}

impl BoundCell {
    fn gate_map(&self, tape: &mut Tape, gate: usize, input: Var) -> Result<Var> {
        let pre = match self {
            BoundCell::Gru { w, .. } => tape.matmul(input, w[gate])?,
            BoundCell::Gcgru { filters, theta, .. } => ddgf_conv_on(tape, filters[gate], input, theta[gate])?,
        };
        let b = match self {
            BoundCell::Gru { b, .. } | BoundCell::Gcgru { b, .. } => b[gate],
        };
        tape.add_bias(pre, b)
    }

    /// One GRU step: update/reset gates, candidate state and the gated blend.
    pub fn step(&self, tape: &mut Tape, h_prev: Var, x: Var) -> Result<StepVars> {
        let hx = tape.concat_cols(h_prev, x)?;
        let z_pre = self.gate_map(tape, 0, hx)?;
        let update = tape.sigmoid(z_pre);
        let r_pre = self.gate_map(tape, 1, hx)?;
        let reset = tape.sigmoid(r_pre);
        let rh = tape.hadamard(reset, h_prev)?;
        let rhx = tape.concat_cols(rh, x)?;
        let c_pre = self.gate_map(tape, 2, rhx)?;
        let candidate = tape.tanh(c_pre);
        let hidden = tape.affine_combination(update, h_prev, candidate)?;
        Ok(StepVars {
            update,
            reset,
            candidate,
            hidden,
        })
    }
}

/// Linear read-out `ŷ = h · W_f`, no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub w_f: Matrix,
}

impl OutputLayer {
    pub fn new(w_f: Matrix) -> Result<Self> {
        if w_f.cols() != 1 {
            return Err(Error::shape("OutputLayer::new", w_f.shape(), (w_f.rows(), 1)));
        }
        Ok(OutputLayer { w_f })
    }
}

/// Gate values of one step evaluated outside training.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub update: Matrix,
    pub reset: Matrix,
    pub candidate: Matrix,
    pub hidden: Matrix,
}

fn trace_step(cell: &Cell, h_prev: &Matrix, x: &Matrix) -> Result<StepTrace> {
    let mut tape = Tape::new();
    let bound = cell.bind(&mut tape)?;
    let h = tape.constant(h_prev.clone());
    let x = tape.constant(x.clone());
    let s = bound.step(&mut tape, h, x)?;
    Ok(StepTrace {
        update: tape.value(s.update).clone(),
        reset: tape.value(s.reset).clone(),
        candidate: tape.value(s.candidate).clone(),
        hidden: tape.value(s.hidden).clone(),
    })
}

/// Full gate trace of a dense GRU step.
pub fn gru_trace(p: &GruParams, h_prev: &Matrix, x: &Matrix) -> Result<StepTrace> {
    trace_step(&Cell::Gru(p.clone()), h_prev, x)
}

pub fn gru_step(p: &GruParams, h_prev: &Matrix, x: &Matrix) -> Result<Matrix> {
    gru_trace(p, h_prev, x).map(|t| t.hidden)
}

/// Full gate trace of a graph-convolutional GRU step.
pub fn gcgru_trace(p: &GcgruParams, h_prev: &Matrix, x: &Matrix) -> Result<StepTrace> {
    if x.cols() != 1 {
        return Err(Error::shape("gcgru_step", h_prev.shape(), x.shape()));
    }
    trace_step(&Cell::Gcgru(p.clone()), h_prev, x)
}

pub fn gcgru_step(p: &GcgruParams, h_prev: &Matrix, x: &Matrix) -> Result<Matrix> {
    gcgru_trace(p, h_prev, x).map(|t| t.hidden)
}

pub fn project(out: &OutputLayer, h: &Matrix) -> Result<Matrix> {
    h.matmul(&out.w_f)
}

/// What the decoder receives after the GO step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderFeed {
    /// Its own previous prediction.
    Autoregressive,
    /// Always the zero column (diagnostic only).
    Zero,
}

/// Parameters of a model bound to a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    encoder: Vec<BoundCell>,
    decoder: Vec<BoundCell>,
    w_f: Var,
}

/// Encoder-decoder forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    config: ModelConfig,
    encoder: Vec<Cell>,
    /// Empty when the encoder cells are reused by the decoder.
    decoder: Vec<Cell>,
    output: OutputLayer,
}

impl SeqModel {
    fn build(config: ModelConfig, mut make_cell: impl FnMut(usize) -> Cell, w_f: Matrix) -> Result<Self> {
        config.validate()?;
        let encoder: Vec<Cell> = (0..config.depth).map(&mut make_cell).collect();
        let decoder: Vec<Cell> = if config.share_encoder_decoder {
            Vec::new()
        } else {
            (0..config.depth).map(&mut make_cell).collect()
        };
        Ok(SeqModel {
            config,
            encoder,
            decoder,
            output: OutputLayer::new(w_f)?,
        })
    }

    /// Every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let d = config.dims;
        SeqModel::build(
            config,
            |layer| {
                let width = if layer == 0 { 1 } else { d.hidden };
                match config.kind {
                    ModelKind::PlainGru => Cell::Gru(GruParams::zeros(width, d.hidden)),
                    ModelKind::GraphConvGru => Cell::Gcgru(GcgruParams::zeros(d.nodes, width, d.hidden)),
                }
            },
            Matrix::zeros(d.hidden.max(1), 1),
        )
    }

    /// Random initialization: weights uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let mut cells = Vec::new();
        let n_cells = if config.share_encoder_decoder { 1 } else { 2 } * config.depth;
        for i in 0..n_cells {
            let layer = i % config.depth;
            let width = if layer == 0 { 1 } else { d.hidden };
            cells.push(match config.kind {
                ModelKind::PlainGru => Cell::Gru(GruParams::init(width, d.hidden, rng)),
                ModelKind::GraphConvGru => {
                    Cell::Gcgru(GcgruParams::init(d.nodes, width, d.hidden, config.ddgf_init, rng))
                }
            });
        }
        let w_f = uniform_matrix(d.hidden, 1, d.hidden, rng);
        let mut cells = cells.into_iter();
        SeqModel::build(config, |_| cells.next().expect("cell count"), w_f)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    pub fn encoder(&self) -> &[Cell] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Cell] {
        if self.decoder.is_empty() {
            &self.encoder
        } else {
            &self.decoder
        }
    }

    pub fn output(&self) -> &OutputLayer {
        &self.output
    }

    /// Parameters with stable names, in the order used for gradients.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (prefix, cells) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (layer, cell) in cells.iter().enumerate() {
                for (name, m) in cell.named_params() {
                    out.push((format!("{prefix}.{layer}.{name}"), m));
                }
            }
        }
        out.push(("output.w_f".to_string(), &self.output.w_f));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for cell in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(cell.params_mut());
        }
        out.push(&mut self.output.w_f);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, m)| m.len()).sum()
    }

    /// Overwrites a named parameter, checking its shape.
    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let idx = self
            .named_params()
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Validation(format!("unknown parameter {name:?}")))?;
        let slot = self.params_mut().into_iter().nth(idx).expect("index from named_params");
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_param", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Registers every parameter on `tape` in [`named_params`](Self::named_params) order.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        let encoder = self.encoder.iter().map(|c| c.bind(tape)).collect::<Result<Vec<_>>>()?;
        let decoder = if self.decoder.is_empty() {
            encoder.clone()
        } else {
            self.decoder.iter().map(|c| c.bind(tape)).collect::<Result<Vec<_>>>()?
        };
        let w_f = tape.param(self.output.w_f.clone());
        Ok(BoundModel { encoder, decoder, w_f })
    }

    /// Builds the forward graph for history `x` (`N×T`) and returns the `N×F`
    /// prediction node.
    pub fn forward_on(&self, tape: &mut Tape, bound: &BoundModel, x: &Matrix, feed: DecoderFeed) -> Result<Var> {
        let d = self.config.dims;
        if x.shape() != (d.nodes, d.input_steps) {
            return Err(Error::shape("forward", (d.nodes, d.input_steps), x.shape()));
        }
        let zero_state = tape.constant(Matrix::zeros(d.nodes, d.hidden));
        let mut h = vec![zero_state; self.config.depth];

        for t in 0..d.input_steps {
            let mut input = tape.constant(x.col(t));
            for (layer, cell) in bound.encoder.iter().enumerate() {
                h[layer] = cell.step(tape, h[layer], input)?.hidden;
                input = h[layer];
            }
        }

        let go = tape.constant(Matrix::zeros(d.nodes, 1));
        let mut next_input = go;
        let mut outputs = Vec::with_capacity(d.forecast_steps);
        for _ in 0..d.forecast_steps {
            let mut input = next_input;
            for (layer, cell) in bound.decoder.iter().enumerate() {
                h[layer] = cell.step(tape, h[layer], input)?.hidden;
                input = h[layer];
            }
            let y = tape.matmul(input, bound.w_f)?;
            outputs.push(y);
            next_input = match feed {
                DecoderFeed::Autoregressive => y,
                DecoderFeed::Zero => go,
            };
        }
        tape.hstack(&outputs)
    }

    /// Forecast for one history window, `N×T → N×F`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_with(x, DecoderFeed::Autoregressive)
    }

    pub fn forward_with(&self, x: &Matrix, feed: DecoderFeed) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let y = self.forward_on(&mut tape, &bound, x, feed)?;
        Ok(tape.value(y).clone())
    }

    /// Masked MAE between `pred·scale + shift` and `target`, with gradients
    /// for every parameter in [`named_params`](Self::named_params) order.
    pub fn loss_and_grads(
        &self,
        x: &Matrix,
        target: &Matrix,
        mask: &Matrix,
        scale: f64,
        shift: f64,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let pred = self.forward_on(&mut tape, &bound, x, DecoderFeed::Autoregressive)?;
        let pred = tape.scale_shift(pred, scale, shift);
        let loss = tape.mae_loss(pred, target, mask)?;
        let value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss)?.into_param_grads();
        Ok((value, grads))
    }
}
