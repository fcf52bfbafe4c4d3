//! Training objective (cross-entropy plus graph Laplacian term), Adam and the
//! training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{threshold, EventRoll, ThresholdConfig};
use crate::error::{CsedError, Result};
use crate::eventgraph::CooccurrenceGraph;
use crate::features::FeatureMatrix;
use crate::metrics::{score, SegmentConfig, SegmentScores};
use crate::network::{model_backward, model_forward, predict, ModelConfig, ModelParams, Posteriorgram, Precision};
use crate::tensor::Matrix;

const Y_CLAMP: f64 = 1e-12;

/// Reference roll plus per-frame validity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTarget {
    pub roll: EventRoll,
    pub mask: Vec<bool>,
}

impl TrainingTarget {
    pub fn new(roll: EventRoll, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != roll.frames() {
            return Err(CsedError::DimensionError {
                expected: roll.frames(),
                actual: mask.len(),
            });
        }
        Ok(TrainingTarget { roll, mask })
    }

    pub fn all_valid(roll: EventRoll) -> Self {
        let mask = vec![true; roll.frames()];
        TrainingTarget { roll, mask }
    }

    pub fn valid_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub use_glr: bool,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1e-5,
            use_glr: true,
            epochs: 150,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CsedError::InvalidConfig(m.into()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("invalid Adam hyperparameters");
        }
        Ok(())
    }

    /// Whether the graph term contributes at all. With `alpha == 0` it is
    /// skipped, so the result equals the cross-entropy-only objective bit for bit.
    pub fn glr_active(&self) -> bool {
        self.use_glr && self.alpha != 0.0
    }
}

fn check_shapes(y: &Posteriorgram, target: &TrainingTarget) -> Result<()> {
    if y.n_events() != target.roll.n_events() || y.frames() != target.roll.frames() {
        return Err(CsedError::shape(format!(
            "posteriorgram is {}x{}, target is {}x{}",
            y.n_events(),
            y.frames(),
            target.roll.n_events(),
            target.roll.frames()
        )));
    }
    Ok(())
}

/// Masked binary cross-entropy summed over events and valid frames, and its
/// gradient w.r.t. `Y`.
pub fn bce_loss(y: &Posteriorgram, target: &TrainingTarget) -> Result<(f64, Matrix)> {
    check_shapes(y, target)?;
    let (m, t) = (y.n_events(), y.frames());
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(m, t);
    for e in 0..m {
        for (k, &valid) in target.mask.iter().enumerate() {
            if !valid {
                continue;
            }
            let p = y.values[(e, k)].clamp(Y_CLAMP, 1.0 - Y_CLAMP);
            if target.roll.get(e, k) {
                loss -= p.ln();
                grad[(e, k)] = -1.0 / p;
            } else {
                loss -= (1.0 - p).ln();
                grad[(e, k)] = 1.0 / (1.0 - p);
            }
        }
    }
    Ok((loss, grad))
}

/// `alpha * v^T L v` with `v` the sum of `Y` over valid frames; the gradient
/// `alpha * 2 L v` is broadcast to every valid frame.
pub fn glr_term(y: &Posteriorgram, mask: &[bool], l: &Matrix, alpha: f64) -> Result<(f64, Matrix)> {
    let m = y.n_events();
    if l.rows() != m || l.cols() != m {
        return Err(CsedError::DimensionError {
            expected: m,
            actual: l.rows(),
        });
    }
    if mask.len() != y.frames() {
        return Err(CsedError::DimensionError {
            expected: y.frames(),
            actual: mask.len(),
        });
    }
    let v: Vec<f64> = (0..m)
        .map(|e| y.values.row(e).iter().zip(mask).filter(|(_, &ok)| ok).map(|(x, _)| x).sum())
        .collect();
    let lv = l.matvec(&v)?;
    let term = alpha * v.iter().zip(&lv).map(|(a, b)| a * b).sum::<f64>();
    let mut grad = Matrix::zeros(m, y.frames());
    for e in 0..m {
        let g = 2.0 * alpha * lv[e];
        for (x, &ok) in grad.row_mut(e).iter_mut().zip(mask) {
            if ok {
                *x = g;
            }
        }
    }
    Ok((term, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    pub glr: f64,
    pub total: f64,
    pub d_y: Matrix,
}

pub fn total_loss(y: &Posteriorgram, target: &TrainingTarget, l: Option<&Matrix>, cfg: &LossConfig) -> Result<LossBreakdown> {
    let (bce, mut d_y) = bce_loss(y, target)?;
    if !cfg.glr_active() {
        return Ok(LossBreakdown {
            bce,
            glr: 0.0,
            total: bce,
            d_y,
        });
    }
    let l = l.ok_or_else(|| CsedError::InvalidConfig("graph regularization needs a Laplacian".into()))?;
    let (glr, g) = glr_term(y, &target.mask, l, cfg.alpha)?;
    for (a, b) in d_y.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *a += b;
    }
    Ok(LossBreakdown {
        bce,
        glr,
        total: bce + glr,
        d_y,
    })
}

/// Adam with bias correction. Moments are stored in parameter-shaped buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &ModelConfig) -> Self {
        Adam {
            cfg,
            m: ModelParams::zeros(model),
            v: ModelParams::zeros(model),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Update `params` in place. A non-finite gradient leaves both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if let Some((name, _)) = grads.named().into_iter().find(|(_, g)| g.data.iter().any(|x| !x.is_finite())) {
            return Err(CsedError::Divergence(format!("non-finite gradient in {name}")));
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let mut ms = self.m.named_mut();
        let mut vs = self.v.named_mut();
        for (k, ((_, p), (_, g))) in params.named_mut().into_iter().zip(grads.named()).enumerate() {
            let (m, v) = (&mut ms[k].1.data, &mut vs[k].1.data);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// One fixed-length training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: FeatureMatrix,
    pub target: TrainingTarget,
}

/// Cut a clip into `seq_len`-frame examples, padding features with
/// `pad_value` and masking padded frames.
pub fn examples_from_clip(
    features: &FeatureMatrix,
    target: &TrainingTarget,
    seq_len: usize,
    pad_value: f64,
) -> Result<Vec<TrainingExample>> {
    if target.roll.frames() != features.frames() {
        return Err(CsedError::DimensionError {
            expected: features.frames(),
            actual: target.roll.frames(),
        });
    }
    features
        .into_sequences(seq_len, pad_value)
        .into_iter()
        .map(|s| {
            let valid = s.mask.iter().filter(|&&m| m).count();
            let part = target.roll.slice_frames(s.start_frame, s.start_frame + valid);
            let mut roll = EventRoll::zeros(part.labels().clone(), seq_len, part.hop_ms);
            let mut mask = vec![false; seq_len];
            for k in 0..valid {
                mask[k] = target.mask[s.start_frame + k];
                for e in 0..part.n_events() {
                    roll.set(e, k, part.get(e, k));
                }
            }
            Ok(TrainingExample {
                features: s.features,
                target: TrainingTarget::new(roll, mask)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce: f64,
    pub glr: f64,
    pub total: f64,
    pub val_f1: Option<f64>,
}

/// Per-epoch means over training examples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,bce,glr,total,val_f1\n");
        for r in &self.epochs {
            let f1 = r.val_f1.map(|f| format!("{f:.17e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.17e},{:.17e},{:.17e},{f1}\n", r.epoch, r.bce, r.glr, r.total));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CsedError::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| CsedError::io(path, e))
    }
}

/// Held-out examples scored once per epoch.
#[derive(Debug, Clone)]
pub struct Validation<'a> {
    pub examples: &'a [TrainingExample],
    pub threshold: ThresholdConfig,
    pub segments: SegmentConfig,
}

/// Segment-based scores of `params` on `examples`, valid frames only.
pub fn evaluate_examples(
    examples: &[TrainingExample],
    params: &ModelParams,
    cfg: &ModelConfig,
    thr: &ThresholdConfig,
    seg: &SegmentConfig,
) -> Result<SegmentScores> {
    let first = examples.first().ok_or(CsedError::EmptyCorpus)?;
    let mut total = SegmentScores::new(first.target.roll.labels().clone());
    for ex in examples {
        let valid = ex.target.valid_frames();
        let y = predict(&ex.features, params, cfg, Precision::F64)?.slice_frames(0, valid);
        let pred = threshold(&y, ex.target.roll.labels(), thr)?;
        total.merge(&score(&pred, &ex.target.roll.slice_frames(0, valid), seg)?)?;
    }
    Ok(total)
}

/// Stateful training loop; after an error the last good parameters remain
/// available through [`Trainer::params`].
#[derive(Debug, Clone)]
pub struct Trainer {
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    params: ModelParams,
    adam: Adam,
    history: TrainingHistory,
    best: Option<(f64, usize, ModelParams)>,
    shuffle: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, loss_cfg: LossConfig) -> Result<Self> {
        loss_cfg.validate()?;
        let params = ModelParams::init(&model_cfg, loss_cfg.seed)?;
        let mut shuffle = ChaCha8Rng::seed_from_u64(loss_cfg.seed);
        shuffle.set_stream(1);
        Ok(Trainer {
            adam: Adam::new(loss_cfg.adam, &model_cfg),
            model_cfg,
            loss_cfg,
            params,
            history: TrainingHistory::default(),
            best: None,
            shuffle,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn history(&self) -> &TrainingHistory {
        &self.history
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    /// Best parameters by validation F1 (earliest on ties), if validated.
    pub fn best(&self) -> Option<(f64, usize, &ModelParams)> {
        self.best.as_ref().map(|(f, e, p)| (*f, *e, p))
    }

    /// Forward, loss, backward and one Adam update on a single example.
    pub fn step(&mut self, ex: &TrainingExample, l: Option<&Matrix>) -> Result<LossBreakdown> {
        let (y, cache) = model_forward(&ex.features, &self.params, &self.model_cfg)?;
        let loss = total_loss(&y, &ex.target, l, &self.loss_cfg)?;
        if !loss.total.is_finite() {
            return Err(CsedError::Divergence(format!("loss became {}", loss.total)));
        }
        let grads = model_backward(&self.params, &cache, &loss.d_y)?;
        self.adam.step(&mut self.params, &grads)?;
        Ok(loss)
    }

    pub fn run_epoch(
        &mut self,
        examples: &[TrainingExample],
        graph: Option<&CooccurrenceGraph>,
        validation: Option<&Validation>,
    ) -> Result<EpochRecord> {
        if examples.is_empty() {
            return Err(CsedError::EmptyCorpus);
        }
        let l = self.laplacian(graph, examples)?;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.shuffle);
        let (mut bce, mut glr, mut total) = (0.0, 0.0, 0.0);
        for &k in &order {
            let loss = self.step(&examples[k], l)?;
            bce += loss.bce;
            glr += loss.glr;
            total += loss.total;
        }
        let n = examples.len() as f64;
        let epoch = self.history.epochs.len() + 1;
        let val_f1 = match validation {
            Some(v) if !v.examples.is_empty() => {
                let s = evaluate_examples(v.examples, &self.params, &self.model_cfg, &v.threshold, &v.segments)?;
                Some(s.overall.f1())
            }
            _ => None,
        };
        if let Some(f1) = val_f1 {
            if self.best.as_ref().map_or(true, |(b, _, _)| f1 > *b) {
                self.best = Some((f1, epoch, self.params.clone()));
            }
        }
        let rec = EpochRecord {
            epoch,
            bce: bce / n,
            glr: glr / n,
            total: total / n,
            val_f1,
        };
        log::info!(
            "epoch {epoch}: bce {:.6} glr {:.6e} total {:.6}{}",
            rec.bce,
            rec.glr,
            rec.total,
            val_f1.map(|f| format!(" val_f1 {f:.4}")).unwrap_or_default()
        );
        self.history.epochs.push(rec);
        Ok(rec)
    }

    fn laplacian<'g>(&self, graph: Option<&'g CooccurrenceGraph>, examples: &[TrainingExample]) -> Result<Option<&'g Matrix>> {
        if !self.loss_cfg.glr_active() {
            return Ok(None);
        }
        let g = graph.ok_or_else(|| CsedError::InvalidConfig("graph regularization needs a co-occurrence graph".into()))?;
        if g.vocab() != examples[0].target.roll.labels() {
            return Err(CsedError::InvalidConfig("graph labels differ from the training labels".into()));
        }
        Ok(Some(g.laplacian()))
    }

    /// Run the configured number of epochs.
    pub fn run(
        &mut self,
        examples: &[TrainingExample],
        graph: Option<&CooccurrenceGraph>,
        validation: Option<&Validation>,
    ) -> Result<()> {
        for _ in 0..self.loss_cfg.epochs {
            self.run_epoch(examples, graph, validation)?;
        }
        Ok(())
    }

    /// Best-by-validation parameters when validation ran, else the final ones.
    pub fn into_result(self) -> (ModelParams, TrainingHistory) {
        let params = self.best.map(|(_, _, p)| p).unwrap_or(self.params);
        (params, self.history)
    }
}

pub fn train(
    examples: &[TrainingExample],
    graph: Option<&CooccurrenceGraph>,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    validation: Option<&Validation>,
) -> Result<(ModelParams, TrainingHistory)> {
    let first = examples.first().ok_or(CsedError::EmptyCorpus)?;
    for ex in examples {
        if ex.features.dim() != model_cfg.n_features
            || ex.target.roll.n_events() != model_cfg.n_events
            || ex.target.roll.labels() != first.target.roll.labels()
        {
            return Err(CsedError::shape("training examples disagree with the model configuration"));
        }
    }
    let mut trainer = Trainer::new(model_cfg.clone(), loss_cfg.clone())?;
    trainer.run(examples, graph, validation)?;
    Ok(trainer.into_result())
}
