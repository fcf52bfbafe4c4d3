use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CsedError, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentMode {
    /// Convolutional stack feeds the output layer directly.
    None,
    ForwardOnly,
    #[default]
    Bidirectional,
}

impl std::str::FromStr for RecurrentMode {
    type Err = CsedError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RecurrentMode::None),
            "forward_only" | "forward-only" | "gru" => Ok(RecurrentMode::ForwardOnly),
            "bidirectional" | "bigru" => Ok(RecurrentMode::Bidirectional),
            other => Err(CsedError::InvalidConfig(format!(
                "unknown recurrent mode `{other}` (none | forward_only | bidirectional)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input feature dimension (mel bands).
    pub n_features: usize,
    pub n_events: usize,
    /// Output channels of each convolution layer.
    pub conv_channels: Vec<usize>,
    /// Kernel extent as (frequency, time); both odd.
    pub kernel: (usize, usize),
    /// Max-pooling factor along frequency. Time is never pooled.
    pub pool_freq: usize,
    pub gru_units: usize,
    pub recurrent_mode: RecurrentMode,
}

impl ModelConfig {
    /// Three 128-channel 3x3 conv layers with 3x1 pooling and a 32-unit BiGRU.
    pub fn crnn(n_features: usize, n_events: usize) -> Self {
        ModelConfig {
            n_features,
            n_events,
            conv_channels: vec![128, 128, 128],
            kernel: (3, 3),
            pool_freq: 3,
            gru_units: 32,
            recurrent_mode: RecurrentMode::Bidirectional,
        }
    }

    pub fn conv_layers(&self) -> usize {
        self.conv_channels.len()
    }

    /// Frequency extent entering each conv layer, plus the final pooled extent.
    pub fn freq_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.n_features];
        for _ in &self.conv_channels {
            let last = *dims.last().unwrap();
            dims.push(last / self.pool_freq);
        }
        dims
    }

    /// Width of the concatenated per-frame conv features.
    pub fn concat_dim(&self) -> usize {
        let h = *self.freq_dims().last().unwrap();
        h * self.conv_channels.last().copied().unwrap_or(1)
    }

    pub fn dense_input_dim(&self) -> usize {
        match self.recurrent_mode {
            RecurrentMode::None => self.concat_dim(),
            RecurrentMode::ForwardOnly => self.gru_units,
            RecurrentMode::Bidirectional => 2 * self.gru_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CsedError::InvalidConfig(m));
        if self.n_features == 0 || self.n_events == 0 {
            return bad("feature and event counts must be positive".into());
        }
        if self.kernel.0 % 2 == 0 || self.kernel.1 % 2 == 0 {
            return bad(format!("kernel {:?} must have odd extents", self.kernel));
        }
        if self.pool_freq == 0 {
            return bad("pooling factor must be at least 1".into());
        }
        if self.conv_channels.contains(&0) {
            return bad("conv channel counts must be positive".into());
        }
        if self.recurrent_mode != RecurrentMode::None && self.gru_units == 0 {
            return bad("gru_units must be at least 1".into());
        }
        if self.concat_dim() == 0 {
            return bad(format!(
                "{} input bands vanish after {} pooling stages of {}",
                self.n_features,
                self.conv_layers(),
                self.pool_freq
            ));
        }
        Ok(())
    }
}

/// Dense row-major tensor with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor<T = f64> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| U::of_f64(x.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f64> {
    /// `[c_out, c_in, k_freq, k_time]`
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// One GRU direction: update gate `g`, reset gate `r`, candidate `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T = f64> {
    pub w_g: Tensor<T>,
    pub u_g: Tensor<T>,
    pub b_g: Tensor<T>,
    pub w_r: Tensor<T>,
    pub u_r: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_h: Tensor<T>,
}

impl<T: Real> GruParams<T> {
    pub fn zeros(input: usize, units: usize) -> Self {
        let w = || Tensor::zeros(&[units, input]);
        let u = || Tensor::zeros(&[units, units]);
        let b = || Tensor::zeros(&[units]);
        GruParams {
            w_g: w(),
            u_g: u(),
            b_g: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    pub fn units(&self) -> usize {
        self.b_g.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_g.dims[1]
    }

    fn named(&self) -> [(&'static str, &Tensor<T>); 9] {
        [
            ("w_g", &self.w_g),
            ("u_g", &self.u_g),
            ("b_g", &self.b_g),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 9] {
        [
            ("w_g", &mut self.w_g),
            ("u_g", &mut self.u_g),
            ("b_g", &mut self.b_g),
            ("w_r", &mut self.w_r),
            ("u_r", &mut self.u_r),
            ("b_r", &mut self.b_r),
            ("w_h", &mut self.w_h),
            ("u_h", &mut self.u_h),
            ("b_h", &mut self.b_h),
        ]
    }
}

/// All trainable tensors. Gradients use the same structure.
///
/// Both GRU directions are allocated whenever the model is recurrent; in
/// forward-only mode the backward direction is carried but never read.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f64> {
    pub conv: Vec<ConvParams<T>>,
    pub gru_fwd: Option<GruParams<T>>,
    pub gru_bwd: Option<GruParams<T>>,
    /// `[n_events, dense_input_dim]`
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

pub type ModelParams = Params<f64>;

impl<T: Real> Params<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (kf, kt) = cfg.kernel;
        let mut c_in = 1;
        let conv = cfg
            .conv_channels
            .iter()
            .map(|&c_out| {
                let p = ConvParams {
                    kernel: Tensor::zeros(&[c_out, c_in, kf, kt]),
                    bias: Tensor::zeros(&[c_out]),
                };
                c_in = c_out;
                p
            })
            .collect();
        let recurrent = cfg.recurrent_mode != RecurrentMode::None;
        let gru = || recurrent.then(|| GruParams::zeros(cfg.concat_dim(), cfg.gru_units));
        Params {
            conv,
            gru_fwd: gru(),
            gru_bwd: gru(),
            out_w: Tensor::zeros(&[cfg.n_events, cfg.dense_input_dim()]),
            out_b: Tensor::zeros(&[cfg.n_events]),
        }
    }

    /// Tensors in canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (l, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{l}.kernel"), &c.kernel));
            out.push((format!("conv{l}.bias"), &c.bias));
        }
        for (dir, gru) in [("gru_fwd", &self.gru_fwd), ("gru_bwd", &self.gru_bwd)] {
            if let Some(g) = gru {
                for (n, t) in g.named() {
                    out.push((format!("{dir}.{n}"), t));
                }
            }
        }
        out.push(("out.w".into(), &self.out_w));
        out.push(("out.b".into(), &self.out_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (l, c) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv{l}.kernel"), &mut c.kernel));
            out.push((format!("conv{l}.bias"), &mut c.bias));
        }
        for (dir, gru) in [("gru_fwd", &mut self.gru_fwd), ("gru_bwd", &mut self.gru_bwd)] {
            if let Some(g) = gru {
                for (n, t) in g.named_mut() {
                    out.push((format!("{dir}.{n}"), t));
                }
            }
        }
        out.push(("out.w".into(), &mut self.out_w));
        out.push(("out.b".into(), &mut self.out_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            conv: self
                .conv
                .iter()
                .map(|c| ConvParams {
                    kernel: c.kernel.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
            gru_fwd: self.gru_fwd.as_ref().map(cast_gru),
            gru_bwd: self.gru_bwd.as_ref().map(cast_gru),
            out_w: self.out_w.cast(),
            out_b: self.out_b.cast(),
        }
    }

    /// Check that every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let template = Params::<T>::zeros(cfg);
        let mine = self.named();
        let want = template.named();
        if mine.len() != want.len() {
            return Err(CsedError::shape(format!(
                "expected {} tensors, found {}",
                want.len(),
                mine.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in mine.iter().zip(&want) {
            if n1 != n2 || t1.dims != t2.dims || t1.data.len() != t2.data.len() {
                return Err(CsedError::shape(format!(
                    "tensor {n1} {:?} does not match expected {n2} {:?}",
                    t1.dims, t2.dims
                )));
            }
        }
        Ok(())
    }
}

fn cast_gru<T: Real, U: Real>(g: &GruParams<T>) -> GruParams<U> {
    GruParams {
        w_g: g.w_g.cast(),
        u_g: g.u_g.cast(),
        b_g: g.b_g.cast(),
        w_r: g.w_r.cast(),
        u_r: g.u_r.cast(),
        b_r: g.b_r.cast(),
        w_h: g.w_h.cast(),
        u_h: g.u_h.cast(),
        b_h: g.b_h.cast(),
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = ModelParams::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in p.named_mut() {
            let (fan_in, fan_out) = match t.dims.as_slice() {
                [_] => continue,
                [rows, cols] => (*cols, *rows),
                [c_out, c_in, kf, kt] => (c_in * kf * kt, c_out * kf * kt),
                other => unreachable!("tensor {name} has rank {}", other.len()),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut t.data {
                *x = rng.gen_range(-limit..limit);
            }
        }
        Ok(p)
    }

    /// FNV-1a hash over shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (_, t) in self.named() {
            for &d in &t.dims {
                feed(d as u64);
            }
            for x in &t.data {
                feed(x.to_bits());
            }
        }
        h
    }

    /// Largest absolute entry across all tensors.
    pub fn max_abs(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}
