//! Finite-difference verification of the full model gradient.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::decision::EventRoll;
use crate::error::Result;
use crate::eventgraph::{CooccurrenceGraph, EventVocabulary};
use crate::features::FeatureMatrix;
use crate::network::{model_backward, model_forward, ModelConfig, ModelParams, RecurrentMode};
use crate::objective::{total_loss, LossConfig, TrainingTarget};
use crate::tensor::Matrix;

/// Errors are relative to `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub frames: usize,
    pub alpha: f64,
    pub use_glr: bool,
    pub eps: f64,
    pub tol: f64,
    pub seed: u64,
    /// Scale one analytic gradient tensor by 1.01 (negative control).
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig {
                n_features: 8,
                n_events: 3,
                conv_channels: vec![2],
                kernel: (3, 3),
                pool_freq: 3,
                gru_units: 4,
                recurrent_mode: RecurrentMode::Bidirectional,
            },
            frames: 12,
            alpha: 0.1,
            use_glr: true,
            eps: 1e-5,
            tol: 1e-4,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub count: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err < self.tol)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tensors {
            let verdict = if t.max_rel_err < self.tol { "ok" } else { "FAIL" };
            writeln!(
                out,
                "{:<14} n={:<5} max_rel={:.3e} max_abs={:.3e} {verdict}",
                t.name, t.count, t.max_rel_err, t.max_abs_err
            )
            .unwrap();
        }
        writeln!(
            out,
            "{}: max relative error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err(),
            self.tol
        )
        .unwrap();
        out
    }
}

/// Central differences on the training objective of a random instance.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let m = &cfg.model;
    m.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (d, t, e) = (m.n_features, cfg.frames, m.n_events);
    let v: Vec<f64> = (0..d * t).map(|_| rng.sample(StandardNormal)).collect();
    let features = FeatureMatrix::new(Matrix::from_vec(d, t, v)?, 20)?;
    let vocab = EventVocabulary::new((0..e).map(|i| format!("event{i}")))?;
    let roll = EventRoll::from_activity(vocab.clone(), t, 20, (0..e * t).map(|_| rng.gen_range(0..2)).collect())?;
    let target = TrainingTarget::all_valid(roll);
    let mut counts = vec![vec![0u64; e]; e];
    for i in 0..e {
        for j in 0..i {
            let c = rng.gen_range(0..5);
            counts[i][j] = c;
            counts[j][i] = c;
        }
    }
    counts[0][e - 1] = counts[0][e - 1].max(1);
    counts[e - 1][0] = counts[0][e - 1];
    let graph = CooccurrenceGraph::from_counts(vocab, counts)?;
    let loss_cfg = LossConfig {
        alpha: cfg.alpha,
        use_glr: cfg.use_glr,
        ..Default::default()
    };

    let mut params = ModelParams::init(m, cfg.seed)?;
    for (_, p) in params.named_mut() {
        if p.dims.len() == 1 {
            p.data.iter_mut().for_each(|x| *x = rng.gen_range(-0.2..0.2));
        }
    }
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let (y, _) = model_forward(&features, p, m)?;
        Ok(total_loss(&y, &target, Some(graph.laplacian()), &loss_cfg)?.total)
    };
    let (y, cache) = model_forward(&features, &params, m)?;
    let loss = total_loss(&y, &target, Some(graph.laplacian()), &loss_cfg)?;
    let mut grads = model_backward(&params, &cache, &loss.d_y)?;
    if cfg.corrupt {
        if let Some((_, g)) = grads.named_mut().into_iter().find(|(_, g)| g.data.iter().any(|&x| x != 0.0)) {
            g.data.iter_mut().for_each(|x| *x *= 1.01);
        }
    }

    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let analytic = grads.named()[ti].1.data.clone();
        let mut check = TensorCheck {
            name,
            count: analytic.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for (k, &a) in analytic.iter().enumerate() {
            let orig = params.named()[ti].1.data[k];
            params.named_mut()[ti].1.data[k] = orig + cfg.eps;
            let up = loss_at(&params)?;
            params.named_mut()[ti].1.data[k] = orig - cfg.eps;
            let down = loss_at(&params)?;
            params.named_mut()[ti].1.data[k] = orig;
            let n = (up - down) / (2.0 * cfg.eps);
            let abs = (a - n).abs();
            check.max_abs_err = check.max_abs_err.max(abs);
            check.max_rel_err = check.max_rel_err.max(abs / a.abs().max(n.abs()).max(REL_FLOOR));
        }
        tensors.push(check);
    }
    Ok(GradcheckReport { tol: cfg.tol, tensors })
}
