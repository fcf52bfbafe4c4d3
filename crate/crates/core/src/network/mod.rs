//! CNN-(Bi)GRU event detector: forward pass, reverse-mode gradients and
//! checkpoints.
//!
//! Pipeline per clip, for an input `V` of `D x T` log mel energies:
//!
//! 1. conv layers (same padding) -> ReLU -> max pool along frequency,
//! 2. stack channels and pooled bins into one `(D' * C) x T` sequence,
//! 3. forward and backward GRU, concatenated per frame,
//! 4. dense layer + sigmoid giving `M x T` event probabilities.

mod checkpoint;
mod conv;
mod gru;
mod params;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use gru::{gru_cell_forward, GateActivations, GruTrace};
pub use params::{ConvParams, GruParams, ModelConfig, ModelParams, Params, RecurrentMode, Tensor};

use conv::ConvShape;

use crate::error::{CsedError, Result};
use crate::features::FeatureMatrix;
use crate::tensor::{gemm, sigmoid, Matrix, Real, View};

/// Per-frame event probabilities, `M x T`, every entry in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    pub values: Matrix,
    pub hop_ms: u32,
}

impl Posteriorgram {
    pub fn n_events(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    /// Keep frames `start..end`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Posteriorgram {
        let m = self.n_events();
        let mut out = Matrix::zeros(m, end - start);
        for e in 0..m {
            out.row_mut(e).copy_from_slice(&self.values.row(e)[start..end]);
        }
        Posteriorgram {
            values: out,
            hop_ms: self.hop_ms,
        }
    }

    /// Concatenate along time.
    pub fn concat(parts: &[Posteriorgram]) -> Result<Posteriorgram> {
        let first = parts.first().ok_or(CsedError::EmptyInput("no posteriorgrams"))?;
        let m = first.n_events();
        if parts.iter().any(|p| p.n_events() != m || p.hop_ms != first.hop_ms) {
            return Err(CsedError::shape("posteriorgram parts disagree"));
        }
        let total: usize = parts.iter().map(Posteriorgram::frames).sum();
        let mut out = Matrix::zeros(m, total);
        for e in 0..m {
            let row = out.row_mut(e);
            let mut at = 0;
            for p in parts {
                row[at..at + p.frames()].copy_from_slice(p.values.row(e));
                at += p.frames();
            }
        }
        Ok(Posteriorgram {
            values: out,
            hop_ms: first.hop_ms,
        })
    }

    /// One row per frame, one column per label.
    pub fn write_csv(&self, path: &std::path::Path, labels: &[String]) -> Result<()> {
        use std::io::Write;
        let f = std::fs::File::create(path).map_err(|e| CsedError::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let io = |e| CsedError::io(path, e);
        writeln!(w, "time_s,{}", labels.join(",")).map_err(io)?;
        for t in 0..self.frames() {
            write!(w, "{:.3}", t as f64 * self.hop_ms as f64 / 1000.0).map_err(io)?;
            for e in 0..self.n_events() {
                write!(w, ",{:.6}", self.values[(e, t)]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Output of the convolutional front end.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput {
    /// Last pooled map, `[C][D'][T]`.
    pub feature_map: Vec<f64>,
    pub channels: usize,
    pub freq: usize,
    /// `(D' * C) x T`; row `c * D' + d`.
    pub concat: Matrix,
}

/// Recurrent states for a whole sequence; `units x T` each.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h_f: Matrix,
    pub h_b: Option<Matrix>,
    pub fwd: GruTrace<f64>,
    pub bwd: Option<GruTrace<f64>>,
}

impl HiddenState {
    /// Frame-major `[h_f; h_b]`, `T x F`.
    fn stacked(&self) -> Vec<f64> {
        stack_states(&self.fwd, self.bwd.as_ref())
    }
}

struct ConvLayerCache {
    shape: ConvShape,
    input: Vec<f64>,
    pre: Vec<f64>,
    argmax: Vec<u32>,
}

/// Everything the backward pass needs from one forward call.
pub struct ForwardCache {
    fingerprint: u64,
    config: ModelConfig,
    frames: usize,
    conv: Vec<ConvLayerCache>,
    concat: Vec<f64>,
    gru_fwd: Option<GruTrace<f64>>,
    gru_bwd: Option<GruTrace<f64>>,
    /// Dense-layer input, `T x F`.
    dense_in: Vec<f64>,
    y: Matrix,
}

impl ForwardCache {
    pub fn frames(&self) -> usize {
        self.frames
    }
}

fn check_input(v: &Matrix, cfg: &ModelConfig) -> Result<()> {
    if v.rows() != cfg.n_features {
        return Err(CsedError::shape(format!(
            "model expects {} feature rows, input has {}",
            cfg.n_features,
            v.rows()
        )));
    }
    if v.cols() == 0 {
        return Err(CsedError::EmptyInput("feature matrix has no frames"));
    }
    Ok(())
}

fn conv_shapes(cfg: &ModelConfig, frames: usize) -> Vec<ConvShape> {
    let dims = cfg.freq_dims();
    let mut c_in = 1;
    cfg.conv_channels
        .iter()
        .enumerate()
        .map(|(l, &c_out)| {
            let s = ConvShape {
                c_in,
                c_out,
                freq: dims[l],
                time: frames,
                kf: cfg.kernel.0,
                kt: cfg.kernel.1,
            };
            c_in = c_out;
            s
        })
        .collect()
}

fn stack_states<T: Real>(fwd: &GruTrace<T>, bwd: Option<&GruTrace<T>>) -> Vec<T> {
    let n = fwd.units;
    let width = n * if bwd.is_some() { 2 } else { 1 };
    let mut out = vec![T::zero(); fwd.frames * width];
    for t in 0..fwd.frames {
        out[t * width..t * width + n].copy_from_slice(fwd.h_at(t));
        if let Some(b) = bwd {
            out[t * width + n..(t + 1) * width].copy_from_slice(b.h_at(t));
        }
    }
    out
}

/// Dense layer + sigmoid on frame-major input `T x F`; returns `M x T`.
fn dense_forward<T: Real>(input: &[T], frames: usize, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (m, f) = (w.dims[0], w.dims[1]);
    let mut y = vec![T::zero(); m * frames];
    for (e, bias) in b.data.iter().enumerate() {
        y[e * frames..(e + 1) * frames].fill(*bias);
    }
    gemm(
        T::one(),
        View::row_major(&w.data, m, f),
        View::row_major(input, frames, f).t(),
        T::one(),
        &mut y,
    );
    // Saturated logits would round to exactly 0 or 1; keep outputs open.
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / (T::one() + T::one());
    for v in &mut y {
        *v = sigmoid(*v).max(lo).min(hi);
    }
    y
}

struct Trace<T> {
    conv: Vec<(ConvShape, Vec<T>, Vec<T>, Vec<u32>)>,
    concat: Vec<T>,
    fwd: Option<GruTrace<T>>,
    bwd: Option<GruTrace<T>>,
    dense_in: Vec<T>,
    y: Vec<T>,
}

/// Full forward pass in precision `T`; `input` is `D x frames` row-major.
fn forward_trace<T: Real>(cfg: &ModelConfig, p: &Params<T>, input: &[T], frames: usize, keep: bool) -> Trace<T> {
    let mut x = input.to_vec();
    let mut cols = Vec::new();
    let mut conv_trace = Vec::new();
    for (layer, s) in p.conv.iter().zip(conv_shapes(cfg, frames)) {
        let pre = conv::conv_forward(&x, s, &layer.kernel.data, &layer.bias.data, &mut cols);
        let (pooled, arg) = conv::relu_pool(&pre, s.c_out, s.freq, frames, cfg.pool_freq);
        let input = std::mem::replace(&mut x, pooled);
        if keep {
            conv_trace.push((s, input, pre, arg));
        }
    }
    let concat = x;
    let (fwd, bwd, dense_in) = match cfg.recurrent_mode {
        RecurrentMode::None => {
            let i = cfg.concat_dim();
            let mut d = vec![T::zero(); frames * i];
            for r in 0..i {
                for t in 0..frames {
                    d[t * i + r] = concat[r * frames + t];
                }
            }
            (None, None, d)
        }
        RecurrentMode::ForwardOnly => {
            let f = gru::run_direction(p.gru_fwd.as_ref().unwrap(), &concat, frames, false);
            let d = stack_states(&f, None);
            (Some(f), None, d)
        }
        RecurrentMode::Bidirectional => {
            let f = gru::run_direction(p.gru_fwd.as_ref().unwrap(), &concat, frames, false);
            let b = gru::run_direction(p.gru_bwd.as_ref().unwrap(), &concat, frames, true);
            let d = stack_states(&f, Some(&b));
            (Some(f), Some(b), d)
        }
    };
    let y = dense_forward(&dense_in, frames, &p.out_w, &p.out_b);
    Trace {
        conv: conv_trace,
        concat,
        fwd,
        bwd,
        dense_in,
        y,
    }
}

fn check_params<T: Real>(p: &Params<T>, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    p.check_shapes(cfg)
}

/// Convolutional front end alone.
pub fn conv_stack_forward(v: &FeatureMatrix, p: &ModelParams, cfg: &ModelConfig) -> Result<ConvOutput> {
    check_params(p, cfg)?;
    check_input(&v.values, cfg)?;
    let frames = v.frames();
    let mut x = v.values.as_slice().to_vec();
    let mut cols = Vec::new();
    for (layer, s) in p.conv.iter().zip(conv_shapes(cfg, frames)) {
        let pre = conv::conv_forward(&x, s, &layer.kernel.data, &layer.bias.data, &mut cols);
        x = conv::relu_pool(&pre, s.c_out, s.freq, frames, cfg.pool_freq).0;
    }
    let freq = *cfg.freq_dims().last().unwrap();
    let channels = cfg.conv_channels.last().copied().unwrap_or(1);
    Ok(ConvOutput {
        concat: Matrix::from_vec(channels * freq, frames, x.clone())?,
        feature_map: x,
        channels,
        freq,
    })
}

/// Recurrent layer over a concatenated conv sequence (`input x T`).
pub fn bigru_forward(concat: &Matrix, p: &ModelParams, cfg: &ModelConfig) -> Result<HiddenState> {
    let (fwd_p, bwd_p) = match (cfg.recurrent_mode, &p.gru_fwd, &p.gru_bwd) {
        (RecurrentMode::None, ..) => {
            return Err(CsedError::InvalidConfig("model has no recurrent layer".into()))
        }
        (_, Some(f), Some(b)) => (f, b),
        _ => return Err(CsedError::shape("recurrent parameters missing")),
    };
    if concat.rows() != fwd_p.input_dim() {
        return Err(CsedError::shape(format!(
            "GRU expects {} input rows, got {}",
            fwd_p.input_dim(),
            concat.rows()
        )));
    }
    let frames = concat.cols();
    let fwd = gru::run_direction(fwd_p, concat.as_slice(), frames, false);
    let bwd = (cfg.recurrent_mode == RecurrentMode::Bidirectional)
        .then(|| gru::run_direction(bwd_p, concat.as_slice(), frames, true));
    let to_units_by_time = |tr: &GruTrace<f64>| {
        Matrix::from_vec(tr.frames, tr.units, tr.h.clone()).map(|m| m.transpose())
    };
    Ok(HiddenState {
        h_f: to_units_by_time(&fwd)?,
        h_b: bwd.as_ref().map(to_units_by_time).transpose()?,
        fwd,
        bwd,
    })
}

/// Output layer: `y_t = sigmoid(W_o h_t + b_o)` for `h` of shape `F x T`.
pub fn dense_sigmoid_forward(h: &Matrix, out_w: &Tensor, out_b: &Tensor, hop_ms: u32) -> Result<Posteriorgram> {
    if out_w.dims.len() != 2 || out_w.dims[1] != h.rows() || out_b.len() != out_w.dims[0] {
        return Err(CsedError::shape(format!(
            "output layer {:?} cannot consume {} features",
            out_w.dims,
            h.rows()
        )));
    }
    let frames = h.cols();
    let frame_major = h.transpose();
    let y = dense_forward(frame_major.as_slice(), frames, out_w, out_b);
    Ok(Posteriorgram {
        values: Matrix::from_vec(out_w.dims[0], frames, y)?,
        hop_ms,
    })
}

impl HiddenState {
    /// Stacked states as an `F x T` matrix.
    pub fn concatenated(&self) -> Matrix {
        let frames = self.fwd.frames;
        let f = self.fwd.units * if self.bwd.is_some() { 2 } else { 1 };
        Matrix::from_vec(frames, f, self.stacked())
            .expect("consistent trace shapes")
            .transpose()
    }
}

/// Forward pass retaining every activation needed for [`model_backward`].
pub fn model_forward(v: &FeatureMatrix, p: &ModelParams, cfg: &ModelConfig) -> Result<(Posteriorgram, ForwardCache)> {
    check_params(p, cfg)?;
    check_input(&v.values, cfg)?;
    let frames = v.frames();
    let tr = forward_trace(cfg, p, v.values.as_slice(), frames, true);
    let y = Matrix::from_vec(cfg.n_events, frames, tr.y)?;
    let cache = ForwardCache {
        fingerprint: p.fingerprint(),
        config: cfg.clone(),
        frames,
        conv: tr
            .conv
            .into_iter()
            .map(|(shape, input, pre, argmax)| ConvLayerCache {
                shape,
                input,
                pre,
                argmax,
            })
            .collect(),
        concat: tr.concat,
        gru_fwd: tr.fwd,
        gru_bwd: tr.bwd,
        dense_in: tr.dense_in,
        y: y.clone(),
    };
    Ok((
        Posteriorgram {
            values: y,
            hop_ms: v.hop_ms,
        },
        cache,
    ))
}

/// Numeric precision for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Inference-only forward pass.
pub fn predict(v: &FeatureMatrix, p: &ModelParams, cfg: &ModelConfig, precision: Precision) -> Result<Posteriorgram> {
    check_params(p, cfg)?;
    check_input(&v.values, cfg)?;
    let frames = v.frames();
    let y: Vec<f64> = match precision {
        Precision::F64 => forward_trace(cfg, p, v.values.as_slice(), frames, false).y,
        Precision::F32 => {
            let p32: Params<f32> = p.cast();
            let x: Vec<f32> = v.values.as_slice().iter().map(|&x| x as f32).collect();
            forward_trace(cfg, &p32, &x, frames, false)
                .y
                .into_iter()
                .map(f64::from)
                .collect()
        }
    };
    Ok(Posteriorgram {
        values: Matrix::from_vec(cfg.n_events, frames, y)?,
        hop_ms: v.hop_ms,
    })
}

/// Predict a clip of any length by cutting it into `seq_len`-frame sequences
/// (the last one padded with `pad_value`) and joining the valid frames.
pub fn predict_clip(
    v: &FeatureMatrix,
    p: &ModelParams,
    cfg: &ModelConfig,
    precision: Precision,
    seq_len: usize,
    pad_value: f64,
) -> Result<Posteriorgram> {
    if v.frames() == 0 {
        return Err(CsedError::EmptyInput("clip has no frames"));
    }
    let parts = v
        .into_sequences(seq_len, pad_value)
        .iter()
        .map(|s| {
            let valid = s.mask.iter().filter(|&&m| m).count();
            predict(&s.features, p, cfg, precision).map(|y| y.slice_frames(0, valid))
        })
        .collect::<Result<Vec<_>>>()?;
    Posteriorgram::concat(&parts)
}

/// Reverse-mode gradients of a scalar loss w.r.t. every parameter, given
/// `d_y = dLoss/dY` (`M x T`).
pub fn model_backward(p: &ModelParams, cache: &ForwardCache, d_y: &Matrix) -> Result<ModelParams> {
    let cfg = &cache.config;
    if cache.fingerprint != p.fingerprint() {
        return Err(CsedError::CacheMismatch);
    }
    if d_y.rows() != cfg.n_events || d_y.cols() != cache.frames {
        return Err(CsedError::CacheMismatch);
    }
    let frames = cache.frames;
    let mut grad = ModelParams::zeros(cfg);

    // Through the sigmoid, laid out frame-major: T x M.
    let m = cfg.n_events;
    let mut d_logit = vec![0.0; frames * m];
    for e in 0..m {
        for t in 0..frames {
            let y = cache.y[(e, t)];
            d_logit[t * m + e] = d_y[(e, t)] * y * (1.0 - y);
        }
    }
    let f = cfg.dense_input_dim();
    gemm(
        1.0,
        View::row_major(&d_logit, frames, m).t(),
        View::row_major(&cache.dense_in, frames, f),
        0.0,
        &mut grad.out_w.data,
    );
    for t in 0..frames {
        for e in 0..m {
            grad.out_b.data[e] += d_logit[t * m + e];
        }
    }
    let mut d_dense_in = vec![0.0; frames * f];
    gemm(
        1.0,
        View::row_major(&d_logit, frames, m),
        View::row_major(&p.out_w.data, m, f),
        0.0,
        &mut d_dense_in,
    );

    let i = cfg.concat_dim();
    let mut d_concat = vec![0.0; i * frames];
    match cfg.recurrent_mode {
        RecurrentMode::None => {
            for r in 0..i {
                for t in 0..frames {
                    d_concat[r * frames + t] = d_dense_in[t * i + r];
                }
            }
        }
        mode => {
            let n = cfg.gru_units;
            let split = |offset: usize| -> Vec<f64> {
                let mut out = vec![0.0; frames * n];
                for t in 0..frames {
                    out[t * n..(t + 1) * n].copy_from_slice(&d_dense_in[t * f + offset..t * f + offset + n]);
                }
                out
            };
            let (fwd_p, fwd_tr) = (p.gru_fwd.as_ref().unwrap(), cache.gru_fwd.as_ref().unwrap());
            gru::backward_direction(
                fwd_p,
                fwd_tr,
                &cache.concat,
                &split(0),
                grad.gru_fwd.as_mut().unwrap(),
                &mut d_concat,
            );
            if mode == RecurrentMode::Bidirectional {
                let (bwd_p, bwd_tr) = (p.gru_bwd.as_ref().unwrap(), cache.gru_bwd.as_ref().unwrap());
                gru::backward_direction(
                    bwd_p,
                    bwd_tr,
                    &cache.concat,
                    &split(n),
                    grad.gru_bwd.as_mut().unwrap(),
                    &mut d_concat,
                );
            }
        }
    }

    let mut d_out = d_concat;
    for (l, layer) in cache.conv.iter().enumerate().rev() {
        let s = layer.shape;
        let d_pre = conv::relu_pool_backward(&d_out, &layer.pre, &layer.argmax, s.c_out, s.freq, frames, cfg.pool_freq);
        let (dk, db, d_in) = conv::conv_backward(&layer.input, s, &p.conv[l].kernel.data, &d_pre, l > 0);
        grad.conv[l].kernel.data = dk;
        grad.conv[l].bias.data = db;
        if let Some(d) = d_in {
            d_out = d;
        }
    }
    Ok(grad)
}
