//! Annotations, target rolls and a seeded synthetic corpus.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::audio::write_wav;
use crate::decision::EventRoll;
use crate::error::{CsedError, Result};
use crate::eventgraph::EventVocabulary;
use crate::features::{hz_to_mel, mel_to_hz, Waveform};
use crate::objective::TrainingTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedEvent {
    pub onset: f64,
    pub offset: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipAnnotation {
    pub clip_id: String,
    pub scene: Option<String>,
    pub events: Vec<AnnotatedEvent>,
}

impl ClipAnnotation {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.label.as_str())
    }
}

/// Parse tab-separated `[audio_path] onset offset label` lines.
///
/// Without a path column every event belongs to `default_clip`. With one,
/// events are grouped by path in order of first appearance, and a line
/// holding only a path declares a clip with no events. Blank lines are
/// skipped.
pub fn parse_annotations(text: &str, default_clip: &str) -> Result<Vec<ClipAnnotation>> {
    let mut clips: Vec<ClipAnnotation> = Vec::new();
    let mut with_path: Option<bool> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |msg: String| CsedError::ParseError { line: line_no, msg };
        let this_has_path = match fields.len() {
            1 | 4 => true,
            3 => false,
            n => return Err(err(format!("expected 3 or 4 tab-separated fields, found {n}"))),
        };
        if *with_path.get_or_insert(this_has_path) != this_has_path {
            return Err(err("mixes lines with and without an audio path column".into()));
        }
        let clip_id = if this_has_path { fields[0].trim() } else { default_clip };
        if clip_id.is_empty() {
            return Err(err("empty audio path".into()));
        }
        let idx = match clips.iter().position(|c| c.clip_id == clip_id) {
            Some(k) => k,
            None => {
                clips.push(ClipAnnotation {
                    clip_id: clip_id.to_string(),
                    scene: None,
                    events: Vec::new(),
                });
                clips.len() - 1
            }
        };
        if fields.len() == 1 {
            continue;
        }
        let f = &fields[fields.len() - 3..];
        let time = |s: &str, what: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("bad {what} `{s}`")))
        };
        let onset = time(f[0], "onset")?;
        let offset = time(f[1], "offset")?;
        let label = f[2].trim();
        if label.is_empty() {
            return Err(err("empty label".into()));
        }
        if onset < 0.0 || offset <= onset {
            return Err(CsedError::InvalidInterval { line: line_no });
        }
        clips[idx].events.push(AnnotatedEvent {
            onset,
            offset,
            label: label.to_string(),
        });
    }
    Ok(clips)
}

/// Read an annotation file; three-column files take the file stem as clip id.
pub fn read_annotations(path: &Path) -> Result<Vec<ClipAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| CsedError::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
    parse_annotations(&text, stem)
}

/// Inverse of [`parse_annotations`]. Times are written with six decimals.
/// Without the path column only a single clip can be represented.
pub fn format_annotations(clips: &[ClipAnnotation], with_path: bool) -> Result<String> {
    if !with_path && clips.len() > 1 {
        return Err(CsedError::InvalidConfig(
            "several clips need the audio path column".into(),
        ));
    }
    let mut out = String::new();
    for c in clips {
        if with_path && c.events.is_empty() {
            writeln!(out, "{}", c.clip_id).unwrap();
        }
        for e in &c.events {
            if with_path {
                write!(out, "{}\t", c.clip_id).unwrap();
            }
            writeln!(out, "{:.6}\t{:.6}\t{}", e.onset, e.offset, e.label).unwrap();
        }
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, clips: &[ClipAnnotation], with_path: bool) -> Result<()> {
    let text = format_annotations(clips, with_path)?;
    std::fs::write(path, text).map_err(|e| CsedError::io(path, e))
}

/// Frame `t` of class `m` is active when its center `(t + 0.5) * hop` lies in
/// `[onset, offset)` of some event of class `m`. Frames whose center is past
/// `duration_s` are masked out.
pub fn event_roll_from_annotation(
    ann: &ClipAnnotation,
    vocab: &EventVocabulary,
    hop_ms: u32,
    frames: usize,
    duration_s: Option<f64>,
) -> Result<TrainingTarget> {
    let hop = hop_ms as f64 / 1000.0;
    let mut roll = EventRoll::zeros(vocab.clone(), frames, hop_ms);
    for e in &ann.events {
        let m = vocab.index_of(&e.label)?;
        let first = ((e.onset / hop) - 0.5).ceil().max(0.0) as usize;
        for t in first..frames {
            let c = (t as f64 + 0.5) * hop;
            if c >= e.offset {
                break;
            }
            if c >= e.onset {
                roll.set(m, t, true);
            }
        }
    }
    let mask = (0..frames)
        .map(|t| duration_s.is_none_or(|d| (t as f64 + 0.5) * hop < d))
        .collect();
    TrainingTarget::new(roll, mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub a: String,
    pub b: String,
    pub probability: f64,
}

impl std::str::FromStr for PairSpec {
    type Err = CsedError;

    /// `a:b:p`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || CsedError::InvalidConfig(format!("pair `{s}` is not label:label:probability"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(PairSpec {
            a: parts[0].to_string(),
            b: parts[1].to_string(),
            probability: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub clip_seconds: f64,
    pub labels: Vec<String>,
    /// Whenever `a` is placed, `b` is co-placed overlapping it with this probability.
    pub pairs: Vec<PairSpec>,
    /// Expected number of independently placed events per class per clip.
    pub event_rate: f64,
    pub min_event_s: f64,
    pub max_event_s: f64,
    pub min_snr_db: f64,
    pub max_snr_db: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_clips: 250,
            val_clips: 0,
            test_clips: 50,
            clip_seconds: 10.0,
            labels: ["a", "b", "c", "d", "e", "f"].map(String::from).to_vec(),
            pairs: Vec::new(),
            event_rate: 0.5,
            min_event_s: 0.5,
            max_event_s: 3.0,
            min_snr_db: 10.0,
            max_snr_db: 20.0,
            sample_rate: 44_100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl SynthConfig {
    pub fn vocabulary(&self) -> Result<EventVocabulary> {
        EventVocabulary::new(self.labels.iter().cloned())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CsedError::InvalidSynthConfig(m));
        let vocab = self.vocabulary()?;
        if vocab.len() < 2 {
            return bad("at least two event classes are required".into());
        }
        if self.n_clips == 0 || self.val_clips + self.test_clips > self.n_clips {
            return bad("split sizes exceed the number of clips".into());
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return bad("clip_seconds must be positive".into());
        }
        if !(self.min_event_s > 0.0 && self.min_event_s <= self.max_event_s) {
            return bad("event duration range is empty".into());
        }
        if self.max_event_s > self.clip_seconds {
            return bad(format!(
                "events up to {} s do not fit in {} s clips",
                self.max_event_s, self.clip_seconds
            ));
        }
        if !(self.event_rate >= 0.0 && self.event_rate.is_finite()) {
            return bad("event_rate must be non-negative".into());
        }
        if self.min_snr_db > self.max_snr_db || !self.min_snr_db.is_finite() || !self.max_snr_db.is_finite() {
            return bad("SNR range is empty".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        for p in &self.pairs {
            if !(0.0..=1.0).contains(&p.probability) {
                return bad(format!("pair probability {} is outside [0, 1]", p.probability));
            }
            if p.a == p.b {
                return bad(format!("pair {}:{} repeats a class", p.a, p.b));
            }
            vocab.index_of(&p.a)?;
            vocab.index_of(&p.b)?;
        }
        Ok(())
    }

    pub fn split_of(&self, k: usize) -> Split {
        let train = self.n_clips - self.val_clips - self.test_clips;
        if k < train {
            Split::Train
        } else if k < train + self.val_clips {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn clip_id(k: usize) -> String {
        format!("clip_{k:04}")
    }

    /// Tone frequency of class `m`, evenly spaced on the mel scale.
    pub fn class_frequency(&self, m: usize) -> f64 {
        let top = (0.4 * self.sample_rate as f64).min(6000.0);
        let (lo, hi) = (hz_to_mel(400.0), hz_to_mel(top));
        let n = self.labels.len().max(2) - 1;
        mel_to_hz(lo + (hi - lo) * m as f64 / n as f64)
    }

    fn rng(&self, k: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 * k as u64 + stream);
        rng
    }

    /// Event placements of clip `k`.
    pub fn plan_clip(&self, k: usize) -> Result<ClipAnnotation> {
        let vocab = self.vocabulary()?;
        let mut rng = self.rng(k, 0);
        let mut events = Vec::new();
        let duration = |rng: &mut ChaCha8Rng| {
            if self.max_event_s > self.min_event_s {
                rng.gen_range(self.min_event_s..self.max_event_s)
            } else {
                self.min_event_s
            }
        };
        let mut primary = Vec::new();
        if self.event_rate > 0.0 {
            let poisson = Poisson::new(self.event_rate).expect("rate is positive");
            for m in 0..vocab.len() {
                let n = poisson.sample(&mut rng) as usize;
                for _ in 0..n {
                    let d = duration(&mut rng);
                    let onset = rng.gen_range(0.0..=self.clip_seconds - d);
                    primary.push((m, onset, onset + d));
                }
            }
        }
        for &(m, onset, offset) in &primary {
            events.push((m, onset, offset));
            for p in self.pairs.iter().filter(|p| p.a == vocab.label(m)) {
                if !rng.gen_bool(p.probability) {
                    continue;
                }
                let d = duration(&mut rng);
                let shift = rng.gen_range(-d / 2.0..(offset - onset) / 2.0);
                let start = (onset + shift).clamp(0.0, self.clip_seconds - d);
                events.push((vocab.index_of(&p.b)?, start, start + d));
            }
        }
        // Round to the annotation file resolution so plans survive a text round trip.
        let round = |x: f64| (x * 1e6).round() / 1e6;
        let mut events: Vec<AnnotatedEvent> = events
            .into_iter()
            .map(|(m, on, off)| AnnotatedEvent {
                onset: round(on),
                offset: round(off),
                label: vocab.label(m).to_string(),
            })
            .collect();
        events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then_with(|| a.label.cmp(&b.label)));
        Ok(ClipAnnotation {
            clip_id: SynthConfig::clip_id(k),
            scene: Some("synthetic".into()),
            events,
        })
    }

    /// Audio for clip `k` with the given placements: one sine burst per
    /// event at its class frequency, raised-cosine 10 ms ramps, plus white
    /// noise at a per-clip SNR relative to a 0.75-amplitude tone.
    pub fn render_clip(&self, k: usize, ann: &ClipAnnotation) -> Result<Waveform> {
        let vocab = self.vocabulary()?;
        let mut rng = self.rng(k, 1);
        let sr = self.sample_rate as f64;
        let n = (self.clip_seconds * sr).round() as usize;
        let mut samples = vec![0.0; n];
        let ramp = (0.01 * sr) as usize;
        for e in &ann.events {
            let f = self.class_frequency(vocab.index_of(&e.label)?);
            let amp = rng.gen_range(0.5..1.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let start = (e.onset * sr).round() as usize;
            let end = ((e.offset * sr).round() as usize).min(n);
            let len = end.saturating_sub(start);
            for (i, s) in samples[start..end].iter_mut().enumerate() {
                let edge = i.min(len - 1 - i);
                let env = if edge < ramp {
                    0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
                } else {
                    1.0
                };
                let t = (start + i) as f64 / sr;
                *s += amp * env * (std::f64::consts::TAU * f * t + phase).sin();
            }
        }
        let snr = if self.max_snr_db > self.min_snr_db {
            rng.gen_range(self.min_snr_db..self.max_snr_db)
        } else {
            self.min_snr_db
        };
        let std = 0.75 / 2f64.sqrt() / 10f64.powf(snr / 20.0);
        let noise = Normal::new(0.0, std).expect("finite noise level");
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
        Waveform::new(samples, self.sample_rate)
    }
}

/// Placements for every clip; audio is rendered on demand with
/// [`SynthCorpus::render`] to keep memory flat.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub clips: Vec<ClipAnnotation>,
}

impl SynthCorpus {
    pub fn render(&self, k: usize) -> Result<Waveform> {
        self.config.render_clip(k, &self.clips[k])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ClipAnnotation)> {
        self.clips
            .iter()
            .enumerate()
            .filter(move |(k, _)| self.config.split_of(*k) == split)
    }
}

pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let clips = (0..cfg.n_clips).map(|k| cfg.plan_clip(k)).collect::<Result<_>>()?;
    Ok(SynthCorpus {
        config: cfg.clone(),
        clips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub id: String,
    /// Relative to the manifest directory.
    pub audio: PathBuf,
    pub scene: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub labels: Vec<String>,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub seed: u64,
    /// Annotation file per split, relative to the manifest directory.
    pub annotations: Vec<(Split, PathBuf)>,
    pub clips: Vec<ManifestClip>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CsedError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CsedError::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| CsedError::io(path, e))
    }

    /// Annotations of one split keyed by clip id (audio paths in the file
    /// are mapped back to ids).
    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<(ManifestClip, ClipAnnotation)>> {
        let Some((_, file)) = self.annotations.iter().find(|(s, _)| *s == split) else {
            return Ok(Vec::new());
        };
        let anns = read_annotations(&dir.join(file))?;
        self.clips
            .iter()
            .filter(|c| c.split == split)
            .map(|c| {
                let key = c.audio.to_string_lossy();
                let mut ann = anns
                    .iter()
                    .find(|a| a.clip_id == key)
                    .cloned()
                    .unwrap_or_else(|| ClipAnnotation {
                        clip_id: key.to_string(),
                        scene: None,
                        events: Vec::new(),
                    });
                ann.clip_id = c.id.clone();
                ann.scene = c.scene.clone();
                Ok((c.clone(), ann))
            })
            .collect()
    }
}

/// Write WAVs, per-split annotation files and `manifest.json` under `dir`.
pub fn write_corpus(cfg: &SynthConfig, dir: &Path) -> Result<Manifest> {
    let corpus = synthesize_corpus(cfg)?;
    let audio_dir = dir.join("audio");
    let meta_dir = dir.join("meta");
    for d in [&audio_dir, &meta_dir] {
        std::fs::create_dir_all(d).map_err(|e| CsedError::io(d, e))?;
    }
    let mut clips = Vec::new();
    let mut per_split: Vec<(Split, Vec<ClipAnnotation>)> =
        [Split::Train, Split::Val, Split::Test].map(|s| (s, Vec::new())).to_vec();
    for (k, ann) in corpus.clips.iter().enumerate() {
        let audio = PathBuf::from("audio").join(format!("{}.wav", ann.clip_id));
        write_wav(&dir.join(&audio), &corpus.render(k)?)?;
        let split = cfg.split_of(k);
        let mut keyed = ann.clone();
        keyed.clip_id = audio.to_string_lossy().into_owned();
        per_split.iter_mut().find(|(s, _)| *s == split).unwrap().1.push(keyed);
        clips.push(ManifestClip {
            id: ann.clip_id.clone(),
            audio,
            scene: ann.scene.clone(),
            split,
        });
    }
    let mut annotations = Vec::new();
    for (split, anns) in per_split {
        if anns.is_empty() {
            continue;
        }
        let rel = PathBuf::from("meta").join(format!("{}.tsv", split.name()));
        write_annotations(&dir.join(&rel), &anns, true)?;
        annotations.push((split, rel));
    }
    let manifest = Manifest {
        labels: cfg.labels.clone(),
        sample_rate: cfg.sample_rate,
        clip_seconds: cfg.clip_seconds,
        seed: cfg.seed,
        annotations,
        clips,
    };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventgraph::build_cooccurrence;
    use proptest::prelude::*;

    #[test]
    fn parses_three_columns() {
        let clips = parse_annotations("0.00\t1.50\tcar\n", "x").unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].clip_id, "x");
        assert_eq!(
            clips[0].events,
            vec![AnnotatedEvent {
                onset: 0.0,
                offset: 1.5,
                label: "car".into()
            }]
        );
    }

    #[test]
    fn groups_four_columns_by_path() {
        let text = "a.wav\t0.5\t1.0\t dog \nb.wav\n\na.wav\t2\t3\tcar\r\n";
        let clips = parse_annotations(text, "x").unwrap();
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[0].events.len(), 2);
        assert_eq!(clips[0].events[0].label, "dog");
        assert!(clips[1].events.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mixed = "a.wav\t0\t1\tcar\n0\t1\tdog\n";
        assert!(matches!(parse_annotations(mixed, "x"), Err(CsedError::ParseError { line: 2, .. })));
        assert!(matches!(parse_annotations("0\tx\tcar", "x"), Err(CsedError::ParseError { line: 1, .. })));
        assert!(matches!(parse_annotations("0\t1", "x"), Err(CsedError::ParseError { .. })));
        assert!(matches!(
            parse_annotations("\n1.0\t1.0\tcar", "x"),
            Err(CsedError::InvalidInterval { line: 2 })
        ));
        assert!(matches!(parse_annotations("2\t1\tcar", "x"), Err(CsedError::InvalidInterval { .. })));
    }

    #[test]
    fn write_then_parse() {
        let text = "a.wav\t0.100000\t1.250000\tcar\nb.wav\na.wav\t3.000000\t4.000000\tbrakes squeaking\n";
        let clips = parse_annotations(text, "x").unwrap();
        let out = format_annotations(&clips, true).unwrap();
        assert_eq!(parse_annotations(&out, "x").unwrap(), clips);
        assert!(format_annotations(&clips, false).is_err());
    }

    #[test]
    fn frame_centre_rule() {
        let vocab = EventVocabulary::new(["car", "dog"]).unwrap();
        let ann = parse_annotations("0.0\t0.1\tcar\n0.05\t0.2\tdog\n", "x").unwrap();
        let target = event_roll_from_annotation(&ann[0], &vocab, 20, 12, Some(0.2)).unwrap();
        let roll = &target.roll;
        assert_eq!(roll.row(0), &[1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(roll.row(1), &[0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(target.mask.iter().filter(|&&m| m).count(), 10);
        let empty = ClipAnnotation {
            clip_id: "x".into(),
            scene: None,
            events: vec![],
        };
        assert_eq!(event_roll_from_annotation(&empty, &vocab, 20, 5, None).unwrap().roll.active_count(), 0);
        let unknown = parse_annotations("0\t1\tcat", "x").unwrap();
        assert!(matches!(
            event_roll_from_annotation(&unknown[0], &vocab, 20, 5, None),
            Err(CsedError::UnknownEvent(_))
        ));
    }

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_clips: 40,
            test_clips: 10,
            clip_seconds: 4.0,
            max_event_s: 1.5,
            sample_rate: 8000,
            pairs: vec!["a:b:1.0".parse().unwrap()],
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn forced_pair_always_co_occurs() {
        let corpus = synthesize_corpus(&small(3)).unwrap();
        let mut with_a = 0;
        for c in &corpus.clips {
            let labels: Vec<&str> = c.labels().collect();
            if labels.contains(&"a") {
                with_a += 1;
                assert!(labels.contains(&"b"));
            }
        }
        assert!(with_a > 5);
        let vocab = corpus.config.vocabulary().unwrap();
        let g = build_cooccurrence(corpus.clips.iter().map(|c| c.labels()), &vocab).unwrap();
        assert_eq!(g.adjacency()[(0, 1)], 1.0);
    }

    #[test]
    fn forced_partner_overlaps_in_time() {
        let corpus = synthesize_corpus(&small(4)).unwrap();
        for c in &corpus.clips {
            for a in c.events.iter().filter(|e| e.label == "a") {
                assert!(c
                    .events
                    .iter()
                    .any(|b| b.label == "b" && b.onset < a.offset && a.onset < b.offset));
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig { n_clips: 3, test_clips: 0, ..small(9) };
        let a = synthesize_corpus(&cfg).unwrap();
        let b = synthesize_corpus(&cfg).unwrap();
        assert_eq!(a.clips, b.clips);
        let wa = a.render(1).unwrap();
        let wb = b.render(1).unwrap();
        assert!(wa.samples.iter().zip(&wb.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
        let other = synthesize_corpus(&SynthConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.clips, other.clips);
    }

    #[test]
    fn independent_pairs_match_product_rate() {
        // P(both present) = P(a)^2 with P(a) = 1 - exp(-rate)
        let cfg = SynthConfig {
            n_clips: 200,
            test_clips: 0,
            pairs: vec![],
            ..small(11)
        };
        let corpus = synthesize_corpus(&cfg).unwrap();
        let p = 1.0 - (-cfg.event_rate).exp();
        let expected = 200.0 * p * p;
        let sigma = (200.0 * p * p * (1.0 - p * p)).sqrt();
        let both = corpus
            .clips
            .iter()
            .filter(|c| c.labels().any(|l| l == "c") && c.labels().any(|l| l == "d"))
            .count() as f64;
        assert!((both - expected).abs() < 3.0 * sigma, "{both} vs {expected}");
    }

    #[test]
    fn infeasible_configs() {
        for cfg in [
            SynthConfig { max_event_s: 5.0, ..small(1) },
            SynthConfig { labels: vec!["a".into()], pairs: vec![], ..small(1) },
            SynthConfig { pairs: vec!["a:z:1".parse().unwrap()], ..small(1) },
            SynthConfig { pairs: vec!["a:b:1.5".parse().unwrap()], ..small(1) },
            SynthConfig { test_clips: 41, ..small(1) },
        ] {
            assert!(synthesize_corpus(&cfg).is_err());
        }
        assert!(matches!(
            synthesize_corpus(&SynthConfig { max_event_s: 5.0, ..small(1) }),
            Err(CsedError::InvalidSynthConfig(_))
        ));
    }

    #[test]
    fn corpus_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_clips: 4, test_clips: 1, val_clips: 1, ..small(2) };
        let m = write_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(m.clips.len(), 4);
        let back = Manifest::read(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
        let train = back.load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(train.len(), 2);
        let planned = cfg.plan_clip(0).unwrap();
        assert_eq!(train[0].1.events, planned.events);
        let w = crate::audio::read_wav(&dir.path().join(&train[0].0.audio)).unwrap();
        assert_eq!(w.samples.len(), 32_000);
    }

    proptest! {
        #[test]
        fn roll_intervals_recover_annotations(seed in 0u64..500) {
            let cfg = small(seed);
            let ann = cfg.plan_clip(0).unwrap();
            let vocab = cfg.vocabulary().unwrap();
            let target = event_roll_from_annotation(&ann, &vocab, 20, 200, Some(4.0)).unwrap();
            for label in vocab.labels() {
                // Merge overlapping events of one class before comparing.
                let mut spans: Vec<(f64, f64)> = ann.events.iter()
                    .filter(|e| &e.label == label).map(|e| (e.onset, e.offset)).collect();
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged: Vec<(f64, f64)> = Vec::new();
                for s in spans {
                    match merged.last_mut() {
                        Some(last) if s.0 <= last.1 => last.1 = last.1.max(s.1),
                        _ => merged.push(s),
                    }
                }
                // Gaps under two hops may or may not leave an inactive frame.
                if merged.windows(2).any(|w| w[1].0 - w[0].1 < 0.04) {
                    continue;
                }
                let got: Vec<(f64, f64)> = target.roll.intervals().into_iter()
                    .filter(|e| &e.label == label).map(|e| (e.onset, e.offset)).collect();
                prop_assert_eq!(got.len(), merged.len());
                for (g, w) in got.iter().zip(&merged) {
                    prop_assert!((g.0 - w.0).abs() <= 0.02 + 1e-9);
                    prop_assert!((g.1 - w.1).abs() <= 0.02 + 1e-9);
                }
            }
        }
    }
}
