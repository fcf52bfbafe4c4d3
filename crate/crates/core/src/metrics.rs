//! Segment-based F1 and error rate.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decision::EventRoll;
use crate::error::{CsedError, Result};
use crate::eventgraph::EventVocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub segment_ms: u32,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { segment_ms: 40 }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_ms == 0 {
            return Err(CsedError::InvalidConfig("segment_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

impl FromStr for Averaging {
    type Err = CsedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            _ => Err(CsedError::InvalidConfig(format!("unknown averaging `{s}`"))),
        }
    }
}

/// Binary `M x S` segment activity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRoll {
    pub n_events: usize,
    pub segments: usize,
    pub activity: Vec<u8>,
}

impl SegmentRoll {
    pub fn get(&self, event: usize, segment: usize) -> bool {
        self.activity[event * self.segments + segment] != 0
    }
}

/// An event is active in a segment when any of its active frames overlaps it.
/// Frame `t` spans `[t * hop, (t + 1) * hop)` ms.
pub fn to_segments(roll: &EventRoll, cfg: &SegmentConfig) -> Result<SegmentRoll> {
    cfg.validate()?;
    let seg = cfg.segment_ms as u64;
    let hop = roll.hop_ms as u64;
    let segments = roll.duration_ms().div_ceil(seg) as usize;
    let mut activity = vec![0u8; roll.n_events() * segments];
    for m in 0..roll.n_events() {
        for (t, &a) in roll.row(m).iter().enumerate() {
            if a == 0 {
                continue;
            }
            let (start, end) = (t as u64 * hop, (t as u64 + 1) * hop);
            let first = (start / seg) as usize;
            let last = (end.div_ceil(seg) as usize).min(segments);
            activity[m * segments + first..m * segments + last].fill(1);
        }
    }
    Ok(SegmentRoll {
        n_events: roll.n_events(),
        segments,
        activity,
    })
}

/// Raw segment counts. `s`, `d`, `i` follow the per-segment
/// substitution/deletion/insertion split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub s: u64,
    pub d: u64,
    pub i: u64,
    pub n: u64,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.s += o.s;
        self.d += o.d;
        self.i += o.i;
        self.n += o.n;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// `None` when the reference has no active entries.
    pub fn error_rate(&self) -> Option<f64> {
        (self.n > 0).then(|| (self.s + self.d + self.i) as f64 / self.n as f64)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Accumulated scores over one or more clips.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScores {
    pub labels: EventVocabulary,
    pub per_class: Vec<Counts>,
    pub overall: Counts,
}

impl SegmentScores {
    pub fn new(labels: EventVocabulary) -> Self {
        SegmentScores {
            per_class: vec![Counts::default(); labels.len()],
            labels,
            overall: Counts::default(),
        }
    }

    /// Add another clip's counts.
    pub fn merge(&mut self, o: &SegmentScores) -> Result<()> {
        if o.labels != self.labels {
            return Err(CsedError::MetricInputMismatch("vocabularies differ".into()));
        }
        for (a, b) in self.per_class.iter_mut().zip(&o.per_class) {
            a.add(b);
        }
        self.overall.add(&o.overall);
        Ok(())
    }

    pub fn f1(&self, avg: Averaging) -> f64 {
        match avg {
            Averaging::Micro => self.overall.f1(),
            Averaging::Macro => {
                // Classes absent from both reference and prediction are skipped.
                let seen: Vec<&Counts> = self.per_class.iter().filter(|c| c.tp + c.fp + c.fn_ > 0).collect();
                if seen.is_empty() {
                    0.0
                } else {
                    seen.iter().map(|c| c.f1()).sum::<f64>() / seen.len() as f64
                }
            }
        }
    }

    pub fn error_rate(&self, avg: Averaging) -> Option<f64> {
        match avg {
            Averaging::Micro => self.overall.error_rate(),
            Averaging::Macro => {
                let ers: Vec<f64> = self.per_class.iter().filter_map(Counts::error_rate).collect();
                (!ers.is_empty()).then(|| ers.iter().sum::<f64>() / ers.len() as f64)
            }
        }
    }

    pub fn to_json(&self, avg: Averaging) -> Value {
        let entry = |c: &Counts, f1: f64, er: Option<f64>| {
            json!({
                "f1": f1, "er": er, "precision": c.precision(), "recall": c.recall(),
                "tp": c.tp, "fp": c.fp, "fn": c.fn_, "s": c.s, "d": c.d, "i": c.i, "n": c.n,
            })
        };
        let per_class: serde_json::Map<String, Value> = self
            .labels
            .labels()
            .iter()
            .zip(&self.per_class)
            .map(|(l, c)| (l.clone(), entry(c, c.f1(), c.error_rate())))
            .collect();
        json!({
            "averaging": avg,
            "overall": entry(&self.overall, self.f1(avg), self.error_rate(avg)),
            "per_class": per_class,
        })
    }

    pub fn write_json(&self, path: &Path, avg: Averaging) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json(avg))?;
        std::fs::write(path, text + "\n").map_err(|e| CsedError::io(path, e))
    }

    /// One row per class plus a final `overall` row.
    pub fn write_csv(&self, path: &Path, avg: Averaging) -> Result<()> {
        let fmt_er = |e: Option<f64>| e.map(|x| format!("{x:.6}")).unwrap_or_default();
        let row = |name: &str, c: &Counts, f1: f64, er: Option<f64>| {
            format!(
                "{name},{},{},{},{},{},{},{},{:.6},{:.6},{f1:.6},{}\n",
                c.tp,
                c.fp,
                c.fn_,
                c.s,
                c.d,
                c.i,
                c.n,
                c.precision(),
                c.recall(),
                fmt_er(er)
            )
        };
        let mut out = String::from("class,tp,fp,fn,s,d,i,n,precision,recall,f1,er\n");
        for (l, c) in self.labels.labels().iter().zip(&self.per_class) {
            out.push_str(&row(l, c, c.f1(), c.error_rate()));
        }
        out.push_str(&row("overall", &self.overall, self.f1(avg), self.error_rate(avg)));
        let mut f = std::fs::File::create(path).map_err(|e| CsedError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| CsedError::io(path, e))
    }
}

pub fn score(pred: &EventRoll, reference: &EventRoll, cfg: &SegmentConfig) -> Result<SegmentScores> {
    if pred.labels() != reference.labels() {
        return Err(CsedError::MetricInputMismatch("vocabularies differ".into()));
    }
    if pred.frames() != reference.frames() || pred.hop_ms != reference.hop_ms {
        return Err(CsedError::MetricInputMismatch(format!(
            "durations differ: {} frames at {} ms vs {} frames at {} ms",
            pred.frames(),
            pred.hop_ms,
            reference.frames(),
            reference.hop_ms
        )));
    }
    let p = to_segments(pred, cfg)?;
    let r = to_segments(reference, cfg)?;
    Ok(score_segments(&p, &r, reference.labels().clone()))
}

fn score_segments(p: &SegmentRoll, r: &SegmentRoll, labels: EventVocabulary) -> SegmentScores {
    let mut out = SegmentScores::new(labels);
    for s in 0..r.segments {
        let (mut fn_seg, mut fp_seg) = (0u64, 0u64);
        for m in 0..r.n_events {
            let c = &mut out.per_class[m];
            match (p.get(m, s), r.get(m, s)) {
                (true, true) => c.tp += 1,
                (true, false) => {
                    c.fp += 1;
                    fp_seg += 1;
                }
                (false, true) => {
                    c.fn_ += 1;
                    fn_seg += 1;
                }
                (false, false) => {}
            }
            c.n += r.get(m, s) as u64;
        }
        let sub = fn_seg.min(fp_seg);
        out.overall.s += sub;
        out.overall.d += fn_seg - sub;
        out.overall.i += fp_seg - sub;
    }
    for c in &mut out.per_class {
        c.d = c.fn_;
        c.i = c.fp;
    }
    let (s, d, i) = (out.overall.s, out.overall.d, out.overall.i);
    out.overall = out.per_class.iter().fold(Counts::default(), |mut acc, c| {
        acc.add(c);
        acc
    });
    out.overall.s = s;
    out.overall.d = d;
    out.overall.i = i;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(m: usize) -> EventVocabulary {
        EventVocabulary::new((0..m).map(|i| format!("e{i}"))).unwrap()
    }

    fn roll(m: usize, hop: u32, bits: Vec<u8>) -> EventRoll {
        EventRoll::from_activity(vocab(m), bits.len() / m, hop, bits).unwrap()
    }

    #[test]
    fn frame_pairs_map_to_one_segment() {
        let r = roll(1, 20, vec![0, 0, 0, 1, 0, 0]);
        let s = to_segments(&r, &SegmentConfig::default()).unwrap();
        assert_eq!(s.activity, vec![0, 1, 0]);
        let empty = to_segments(&roll(2, 20, vec![0; 10]), &SegmentConfig::default()).unwrap();
        assert_eq!(empty.segments, 3);
        assert!(empty.activity.iter().all(|&a| a == 0));
    }

    #[test]
    fn frames_straddling_segments_activate_both() {
        // 30 ms frames over 40 ms segments: frame 1 covers 30..60 ms
        let r = roll(1, 30, vec![0, 1, 0, 0]);
        let s = to_segments(&r, &SegmentConfig::default()).unwrap();
        assert_eq!(s.activity, vec![1, 1, 0]);
    }

    /// Ten single-frame segments at 40 ms hop: ref active in 0..5, pred in
    /// 0..4 plus one extra segment.
    fn fixture(extra: usize, m: usize) -> (EventRoll, EventRoll) {
        let mut r = vec![0u8; 10 * m];
        let mut p = vec![0u8; 10 * m];
        r[..5].fill(1);
        p[..4].fill(1);
        p[extra] = 1;
        (roll(m, 40, p), roll(m, 40, r))
    }

    #[test]
    fn hand_counted_fixture() {
        let (p, r) = fixture(7, 1);
        let s = score(&p, &r, &SegmentConfig::default()).unwrap();
        let c = s.overall;
        assert_eq!((c.tp, c.fp, c.fn_, c.n), (4, 1, 1, 5));
        assert!((c.precision() - 0.8).abs() < 1e-12);
        assert!((c.recall() - 0.8).abs() < 1e-12);
        assert!((c.f1() - 0.8).abs() < 1e-12);
        // FP in segment 7 and FN in segment 4 are in different segments.
        assert_eq!((c.s, c.d, c.i), (0, 1, 1));
        assert!((c.error_rate().unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn substitution_fixture() {
        // Class 0 misses segment 4, class 1 fires falsely in segment 4.
        let mut r = vec![0u8; 20];
        let mut p = vec![0u8; 20];
        r[..5].fill(1);
        p[..4].fill(1);
        p[10 + 4] = 1;
        let s = score(&roll(2, 40, p), &roll(2, 40, r), &SegmentConfig::default()).unwrap();
        let c = s.overall;
        assert_eq!((c.tp, c.fp, c.fn_), (4, 1, 1));
        assert_eq!((c.s, c.d, c.i), (1, 0, 0));
        assert!((c.error_rate().unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(s.per_class[1].i, 1);
    }

    #[test]
    fn identity_and_empty_fixtures() {
        let r = roll(2, 20, vec![1, 1, 0, 0, 0, 1, 1, 0]);
        let s = score(&r, &r, &SegmentConfig::default()).unwrap();
        assert_eq!(s.f1(Averaging::Micro), 1.0);
        assert_eq!(s.error_rate(Averaging::Micro), Some(0.0));
        let empty = roll(2, 20, vec![0; 8]);
        let s = score(&empty, &r, &SegmentConfig::default()).unwrap();
        assert_eq!(s.f1(Averaging::Micro), 0.0);
        assert_eq!(s.error_rate(Averaging::Micro), Some(1.0));
        let s = score(&r, &empty, &SegmentConfig::default()).unwrap();
        assert_eq!(s.error_rate(Averaging::Micro), None);
    }

    #[test]
    fn f1_symmetric_er_not() {
        let (p, r) = fixture(7, 1);
        let mut p2 = p.clone();
        p2.set(0, 8, true);
        let a = score(&p2, &r, &SegmentConfig::default()).unwrap();
        let b = score(&r, &p2, &SegmentConfig::default()).unwrap();
        assert_eq!(a.f1(Averaging::Micro), b.f1(Averaging::Micro));
        assert_ne!(a.error_rate(Averaging::Micro), b.error_rate(Averaging::Micro));
    }

    #[test]
    fn mismatches_are_rejected() {
        let r = roll(2, 20, vec![0; 8]);
        let other = EventRoll::zeros(EventVocabulary::new(["x", "y"]).unwrap(), 4, 20);
        assert!(matches!(score(&r, &other, &SegmentConfig::default()), Err(CsedError::MetricInputMismatch(_))));
        let short = roll(2, 20, vec![0; 6]);
        assert!(matches!(score(&r, &short, &SegmentConfig::default()), Err(CsedError::MetricInputMismatch(_))));
    }

    #[test]
    fn macro_and_merge() {
        let (p, r) = fixture(7, 1);
        let mut total = score(&p, &r, &SegmentConfig::default()).unwrap();
        let once = total.clone();
        total.merge(&once).unwrap();
        assert_eq!(total.overall.tp, 8);
        assert_eq!(total.f1(Averaging::Micro), once.f1(Averaging::Micro));
        assert!((total.f1(Averaging::Macro) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn json_report_shape() {
        let (p, r) = fixture(7, 1);
        let s = score(&p, &r, &SegmentConfig::default()).unwrap();
        let v = s.to_json(Averaging::Micro);
        assert_eq!(v["overall"]["tp"], 4);
        assert_eq!(v["overall"]["fn"], 1);
        assert_eq!(v["per_class"]["e0"]["n"], 5);
        let dir = tempfile::tempdir().unwrap();
        s.write_csv(&dir.path().join("m.csv"), Averaging::Micro).unwrap();
        let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(text.lines().last().unwrap().starts_with("overall,4,1,1,0,1,1,5"));
    }

    proptest! {
        #[test]
        fn count_identities(m in 1usize..4, t in 1usize..30,
                            seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = roll(m, 20, (0..m * t).map(|_| rng.gen_range(0..2)).collect());
            let r = roll(m, 20, (0..m * t).map(|_| rng.gen_range(0..2)).collect());
            let sc = score(&p, &r, &SegmentConfig::default()).unwrap();
            let ps = to_segments(&p, &SegmentConfig::default()).unwrap();
            let rs = to_segments(&r, &SegmentConfig::default()).unwrap();
            let c = sc.overall;
            prop_assert_eq!(c.tp + c.fn_, rs.activity.iter().map(|&a| a as u64).sum::<u64>());
            prop_assert_eq!(c.tp + c.fp, ps.activity.iter().map(|&a| a as u64).sum::<u64>());
            prop_assert_eq!(c.s + c.d, c.fn_);
            prop_assert_eq!(c.s + c.i, c.fp);
            prop_assert!((0.0..=1.0).contains(&c.f1()));
        }
    }
}
