//! Posteriorgram to binary event roll.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedEvent, ClipAnnotation};
use crate::error::{CsedError, Result};
use crate::eventgraph::EventVocabulary;
use crate::network::Posteriorgram;
use crate::tensor::Matrix;

/// Binary class-by-frame activity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRoll {
    activity: Vec<u8>,
    frames: usize,
    pub hop_ms: u32,
    labels: EventVocabulary,
}

impl EventRoll {
    pub fn zeros(labels: EventVocabulary, frames: usize, hop_ms: u32) -> Self {
        EventRoll {
            activity: vec![0; labels.len() * frames],
            frames,
            hop_ms,
            labels,
        }
    }

    /// Row-major `M x T` activity; every entry must be 0 or 1.
    pub fn from_activity(labels: EventVocabulary, frames: usize, hop_ms: u32, activity: Vec<u8>) -> Result<Self> {
        if activity.len() != labels.len() * frames {
            return Err(CsedError::DimensionError {
                expected: labels.len() * frames,
                actual: activity.len(),
            });
        }
        if activity.iter().any(|&a| a > 1) {
            return Err(CsedError::shape("event roll entries must be 0 or 1"));
        }
        Ok(EventRoll {
            activity,
            frames,
            hop_ms,
            labels,
        })
    }

    pub fn n_events(&self) -> usize {
        self.labels.len()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> &EventVocabulary {
        &self.labels
    }

    pub fn duration_ms(&self) -> u64 {
        self.frames as u64 * self.hop_ms as u64
    }

    pub fn get(&self, event: usize, frame: usize) -> bool {
        self.activity[event * self.frames + frame] != 0
    }

    pub fn set(&mut self, event: usize, frame: usize, active: bool) {
        self.activity[event * self.frames + frame] = active as u8;
    }

    pub fn row(&self, event: usize) -> &[u8] {
        &self.activity[event * self.frames..(event + 1) * self.frames]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.activity
    }

    pub fn active_count(&self) -> usize {
        self.activity.iter().map(|&a| a as usize).sum()
    }

    /// Activity as a 0/1 real matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.n_events(),
            self.frames,
            self.activity.iter().map(|&a| a as f64).collect(),
        )
        .expect("roll dims are consistent")
    }

    /// Keep frames `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> EventRoll {
        let mut out = EventRoll::zeros(self.labels.clone(), end - start, self.hop_ms);
        for m in 0..self.n_events() {
            out.activity[m * (end - start)..(m + 1) * (end - start)].copy_from_slice(&self.row(m)[start..end]);
        }
        out
    }

    /// Maximal active runs as `(onset_s, offset_s, label)`, sorted by onset.
    pub fn intervals(&self) -> Vec<AnnotatedEvent> {
        let hop = self.hop_ms as f64 / 1000.0;
        let mut out = Vec::new();
        for m in 0..self.n_events() {
            let row = self.row(m);
            let mut t = 0;
            while t < row.len() {
                if row[t] == 0 {
                    t += 1;
                    continue;
                }
                let start = t;
                while t < row.len() && row[t] != 0 {
                    t += 1;
                }
                out.push(AnnotatedEvent {
                    onset: start as f64 * hop,
                    offset: t as f64 * hop,
                    label: self.labels.label(m).to_string(),
                });
            }
        }
        out.sort_by(|a, b| a.onset.total_cmp(&b.onset).then_with(|| a.label.cmp(&b.label)));
        out
    }

    pub fn to_annotation(&self, clip_id: &str) -> ClipAnnotation {
        ClipAnnotation {
            clip_id: clip_id.to_string(),
            scene: None,
            events: self.intervals(),
        }
    }

    /// Dense CSV: one row per event, label first, then one 0/1 column per frame.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for t in 0..self.frames {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
        for m in 0..self.n_events() {
            out.push_str(self.labels.label(m));
            for &a in self.row(m) {
                out.push(',');
                out.push(if a != 0 { '1' } else { '0' });
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| CsedError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| CsedError::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed,
    Adaptive,
}

impl FromStr for ThresholdMode {
    type Err = CsedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ThresholdMode::Fixed),
            "adaptive" => Ok(ThresholdMode::Adaptive),
            _ => Err(CsedError::InvalidConfig(format!("unknown threshold mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub mode: ThresholdMode,
    pub fixed_theta: f64,
    pub adaptive_low: f64,
    pub adaptive_ratio: f64,
    pub min_event_frames: usize,
    /// Odd median-filter length in frames; 1 disables smoothing.
    pub smoothing_window: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            mode: ThresholdMode::Fixed,
            fixed_theta: 0.5,
            adaptive_low: 0.2,
            adaptive_ratio: 0.5,
            min_event_frames: 1,
            smoothing_window: 1,
        }
    }
}

impl ThresholdConfig {
    pub fn adaptive() -> Self {
        ThresholdConfig {
            mode: ThresholdMode::Adaptive,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CsedError::InvalidConfig(m.into()));
        if !(self.fixed_theta > 0.0 && self.fixed_theta < 1.0) {
            return bad("fixed_theta must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.adaptive_low) {
            return bad("adaptive_low must lie in [0, 1)");
        }
        if !(self.adaptive_ratio > 0.0 && self.adaptive_ratio <= 1.0) {
            return bad("adaptive_ratio must lie in (0, 1]");
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return bad("smoothing_window must be odd");
        }
        if self.min_event_frames == 0 {
            return bad("min_event_frames must be at least 1");
        }
        Ok(())
    }

    /// Per-event thresholds for one clip.
    pub fn thresholds(&self, y: &Matrix) -> Vec<f64> {
        (0..y.rows())
            .map(|m| match self.mode {
                ThresholdMode::Fixed => self.fixed_theta,
                ThresholdMode::Adaptive => {
                    let peak = y.row(m).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    self.adaptive_low.max(self.adaptive_ratio * peak)
                }
            })
            .collect()
    }
}

pub fn threshold(y: &Posteriorgram, labels: &EventVocabulary, cfg: &ThresholdConfig) -> Result<EventRoll> {
    cfg.validate()?;
    if labels.len() != y.n_events() {
        return Err(CsedError::DimensionError {
            expected: labels.len(),
            actual: y.n_events(),
        });
    }
    let t = y.frames();
    let mut roll = EventRoll::zeros(labels.clone(), t, y.hop_ms);
    for (m, theta) in cfg.thresholds(&y.values).into_iter().enumerate() {
        let row = &mut roll.activity[m * t..(m + 1) * t];
        for (a, &p) in row.iter_mut().zip(y.values.row(m)) {
            *a = (p >= theta) as u8;
        }
        if cfg.smoothing_window > 1 {
            median_filter(row, cfg.smoothing_window);
        }
        if cfg.min_event_frames > 1 {
            remove_short_runs(row, cfg.min_event_frames);
        }
    }
    Ok(roll)
}

/// Centered binary median filter. Windows are truncated at the edges and a
/// tie keeps the original value.
fn median_filter(row: &mut [u8], window: usize) {
    let half = window / 2;
    let src = row.to_vec();
    for (t, a) in row.iter_mut().enumerate() {
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(src.len());
        let on: usize = src[lo..hi].iter().map(|&x| x as usize).sum();
        let n = hi - lo;
        *a = match (2 * on).cmp(&n) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => src[t],
        };
    }
}

fn remove_short_runs(row: &mut [u8], min_len: usize) {
    let mut t = 0;
    while t < row.len() {
        if row[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < row.len() && row[t] != 0 {
            t += 1;
        }
        if t - start < min_len {
            row[start..t].fill(0);
        }
    }
}
