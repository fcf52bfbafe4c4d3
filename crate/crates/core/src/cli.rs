//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::audio::read_wav;
use crate::corpus::{
    event_roll_from_annotation, read_annotations, write_annotations, write_corpus, ClipAnnotation, Manifest,
    PairSpec, Split, SynthConfig,
};
use crate::decision::{threshold, ThresholdConfig, ThresholdMode};
use crate::error::{CsedError, Result};
use crate::eventgraph::{build_cooccurrence, build_cooccurrence_frames, CooccurrenceGraph, EventVocabulary};
use crate::features::{FeatureConfig, FeatureMatrix, LogMelExtractor, Window, SEQUENCE_FRAMES};
use crate::gradcheck::{gradcheck, GradcheckConfig};
use crate::metrics::{score, Averaging, SegmentConfig, SegmentScores};
use crate::network::{predict_clip, Checkpoint, CheckpointHeader, ModelConfig, Precision, RecurrentMode};
use crate::objective::{examples_from_clip, AdamConfig, LossConfig, Trainer, TrainingExample, Validation};

#[derive(Debug, Parser)]
#[command(name = "csed", version, about = "Polyphonic sound event detection with co-occurrence graph regularization")]
pub struct Cli {
    /// key=value file whose keys mirror the long flags; flags given on the
    /// command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a tone-burst corpus with controlled co-occurrence.
    Synth(SynthArgs),
    /// Build the co-occurrence graph from annotations.
    BuildGraph(BuildGraphArgs),
    /// Extract log mel energies from a WAV file.
    Features(FeaturesArgs),
    /// Train a model on the train split of a corpus manifest.
    Train(TrainArgs),
    /// Run a trained model on audio or features.
    Predict(PredictArgs),
    /// Score predicted annotations against reference annotations.
    Evaluate(EvaluateArgs),
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Total clips; the last `val-clips + test-clips` are held out.
    #[arg(long, default_value_t = 250)]
    pub clips: usize,
    #[arg(long, default_value_t = 0)]
    pub val_clips: usize,
    #[arg(long, default_value_t = 50)]
    pub test_clips: usize,
    #[arg(long, default_value_t = 10.0)]
    pub clip_seconds: f64,
    #[arg(long, value_delimiter = ',', default_value = "a,b,c,d,e,f")]
    pub labels: Vec<String>,
    /// Forced co-occurrence as label:label:probability (repeatable).
    #[arg(long = "pairs", value_name = "A:B:P")]
    pub pairs: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub event_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub min_event_s: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max_event_s: f64,
    #[arg(long, default_value_t = 10.0)]
    pub min_snr_db: f64,
    #[arg(long, default_value_t = 20.0)]
    pub max_snr_db: f64,
    #[arg(long, default_value_t = 44_100)]
    pub sample_rate: u32,
    #[arg(long, env = "CSED_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    Clip,
    Frame,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Annotation file (repeatable).
    #[arg(long = "annotations", value_name = "TSV")]
    pub annotations: Vec<PathBuf>,
    /// Corpus manifest; uses the annotations of `--split`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Vocabulary order; defaults to the manifest labels or the sorted label union.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, value_enum, default_value_t = GranularityArg::Clip)]
    pub granularity: GranularityArg,
    /// Frame hop for `--granularity frame`.
    #[arg(long, default_value_t = 20)]
    pub hop_ms: u32,
    /// Graph JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional adjacency CSV output.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    #[arg(long, default_value_t = 44_100)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 64)]
    pub n_mels: usize,
    #[arg(long, default_value_t = 40)]
    pub frame_ms: u32,
    #[arg(long, default_value_t = 20)]
    pub hop_ms: u32,
    /// FFT length; defaults to the next power of two above the frame length.
    #[arg(long)]
    pub fft_size: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub fmin_hz: f64,
    /// Upper filterbank edge; defaults to Nyquist.
    #[arg(long)]
    pub fmax_hz: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub log_floor: f64,
    #[arg(long, value_enum, default_value_t = WindowArg::Hann)]
    pub window: WindowArg,
}

impl FeatureArgs {
    pub fn config(&self) -> FeatureConfig {
        FeatureConfig {
            sample_rate: self.sample_rate,
            n_mels: self.n_mels,
            frame_len_ms: self.frame_ms,
            hop_ms: self.hop_ms,
            fft_size: self.fft_size,
            fmin_hz: self.fmin_hz,
            fmax_hz: self.fmax_hz,
            log_floor: self.log_floor,
            window: match self.window {
                WindowArg::Hann => Window::Hann,
                WindowArg::Rectangular => Window::Rectangular,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub audio: PathBuf,
    /// Binary CSF1 output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV copy.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    pub threshold_mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub adaptive_low: f64,
    #[arg(long, default_value_t = 0.5)]
    pub adaptive_ratio: f64,
    #[arg(long, default_value_t = 1)]
    pub min_event_frames: usize,
    /// Odd median-filter length in frames (1 = off).
    #[arg(long, default_value_t = 1)]
    pub smoothing_window: usize,
}

impl ThresholdArgs {
    pub fn config(&self) -> ThresholdConfig {
        ThresholdConfig {
            mode: match self.threshold_mode {
                ModeArg::Fixed => ThresholdMode::Fixed,
                ModeArg::Adaptive => ThresholdMode::Adaptive,
            },
            fixed_theta: self.theta,
            adaptive_low: self.adaptive_low,
            adaptive_ratio: self.adaptive_ratio,
            min_event_frames: self.min_event_frames,
            smoothing_window: self.smoothing_window,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RecurrentArg {
    None,
    Forward,
    Bidirectional,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Graph JSON from `build-graph`; required unless `--no-glr` or `--alpha 0`.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Regularization weight.
    #[arg(long, default_value_t = 1e-5)]
    pub alpha: f64,
    /// Train with cross-entropy only.
    #[arg(long, overrides_with = "glr")]
    pub no_glr: bool,
    /// Keep graph regularization on (the default).
    #[arg(long, overrides_with = "no_glr")]
    pub glr: bool,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    #[arg(long, value_delimiter = ',', default_value = "128,128,128")]
    pub conv_channels: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub kernel_freq: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel_time: usize,
    #[arg(long, default_value_t = 3)]
    pub pool_freq: usize,
    #[arg(long, default_value_t = 32)]
    pub gru_units: usize,
    #[arg(long, value_enum, default_value_t = RecurrentArg::Bidirectional)]
    pub recurrent: RecurrentArg,
    #[arg(long, default_value_t = SEQUENCE_FRAMES)]
    pub sequence_frames: usize,
    #[arg(long, env = "CSED_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Save the epoch with the best validation F1 instead of the last one.
    #[arg(long)]
    pub keep_best: bool,
    /// Thresholding for validation F1.
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long, default_value_t = 40)]
    pub segment_ms: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One WAV file.
    #[arg(long, conflicts_with_all = ["features", "manifest"])]
    pub audio: Option<PathBuf>,
    /// One CSF1 feature file.
    #[arg(long, conflicts_with = "manifest")]
    pub features: Option<PathBuf>,
    /// Every clip of `--split` in a corpus manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Event list TSV output.
    #[arg(long)]
    pub out_events: PathBuf,
    /// Posteriorgram CSV (single input only).
    #[arg(long)]
    pub out_posteriors: Option<PathBuf>,
    /// Dense event roll CSV (single input only).
    #[arg(long)]
    pub out_roll: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Vocabulary; defaults to the labels of the reference file.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long, default_value_t = 40)]
    pub segment_ms: u32,
    /// Time resolution of the intermediate event rolls.
    #[arg(long, default_value_t = 20)]
    pub hop_ms: u32,
    /// Clip duration; defaults to the latest offset in either file.
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long, value_enum, default_value_t = AveragingArg::Micro)]
    pub averaging: AveragingArg,
    /// JSON report output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub no_glr: bool,
    #[arg(long, default_value_t = 12)]
    pub frames: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = RecurrentArg::Bidirectional)]
    pub recurrent: RecurrentArg,
    #[arg(long, env = "CSED_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Perturb one analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub corrupt: bool,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CsedError::ParseError {
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CsedError::ParseError {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Insert config-file entries as flags right after the subcommand name, so
/// that flags on the command line (which come later) override them.
fn inject_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config");
    let inline = args.iter().position(|a| a.to_string_lossy().starts_with("--config="));
    let path = match (pos, inline) {
        (Some(p), _) => match args.get(p + 1) {
            Some(v) => PathBuf::from(v),
            None => return Ok(args),
        },
        (None, Some(p)) => PathBuf::from(&args[p].to_string_lossy()["--config=".len()..]),
        (None, None) => return Ok(args),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CsedError::io(&path, e))?;
    let entries = parse_config_file(&text)?;

    let cmd = Cli::command();
    let Some((sub_idx, sub)) = args
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a).map(|s| (i, s.clone())))
    else {
        return Ok(args);
    };
    let known: BTreeSet<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(String::from))
        .collect();
    let flags: BTreeSet<String> = sub
        .get_arguments()
        .filter(|a| !a.get_action().takes_values())
        .filter_map(|a| a.get_long().map(String::from))
        .collect();
    let mut injected = Vec::new();
    for (key, value) in entries {
        if !known.contains(&key) {
            let used_elsewhere = cmd
                .get_subcommands()
                .any(|s| s.get_arguments().any(|a| a.get_long() == Some(key.as_str())));
            if used_elsewhere {
                continue;
            }
            return Err(CsedError::InvalidConfig(format!("unknown config key `{key}`")));
        }
        if flags.contains(&key) {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                _ => return Err(CsedError::InvalidConfig(format!("`{key}` expects true or false"))),
            }
        } else {
            injected.push(OsString::from(format!("--{key}={value}")));
        }
    }
    let mut out = args;
    out.splice(sub_idx + 1..sub_idx + 1, injected);
    Ok(out)
}

/// Parse arguments and run; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match inject_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code().max(1);
        }
    };
    let cmd = Cli::command().args_override_self(true);
    let cli = match cmd.try_get_matches_from(args).and_then(|m| {
        use clap::FromArgMatches;
        Cli::from_arg_matches(&m)
    }) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_target(false).try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::BuildGraph(a) => cmd_build_graph(&a),
        Command::Features(a) => cmd_features(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_clips: a.clips,
        val_clips: a.val_clips,
        test_clips: a.test_clips,
        clip_seconds: a.clip_seconds,
        labels: a.labels.clone(),
        pairs: a.pairs.iter().map(|p| p.parse()).collect::<Result<Vec<PairSpec>>>()?,
        event_rate: a.event_rate,
        min_event_s: a.min_event_s,
        max_event_s: a.max_event_s,
        min_snr_db: a.min_snr_db,
        max_snr_db: a.max_snr_db,
        sample_rate: a.sample_rate,
        seed: a.seed,
    };
    cfg.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| CsedError::io(&a.out, e))?;
    let m = write_corpus(&cfg, &a.out)?;
    log::info!("wrote {} clips to {}", m.clips.len(), a.out.display());
    Ok(())
}

pub fn cmd_build_graph(a: &BuildGraphArgs) -> Result<()> {
    let mut clips: Vec<ClipAnnotation> = Vec::new();
    let mut labels = a.labels.clone();
    if let Some(mp) = &a.manifest {
        let m = Manifest::read(mp)?;
        clips.extend(m.load_split(&manifest_dir(mp), a.split.into())?.into_iter().map(|(_, ann)| ann));
        if labels.is_empty() {
            labels = m.labels.clone();
        }
    }
    for p in &a.annotations {
        clips.extend(read_annotations(p)?);
    }
    if clips.is_empty() {
        return Err(CsedError::EmptyCorpus);
    }
    let vocab = if labels.is_empty() {
        EventVocabulary::from_sorted_union(clips.iter().flat_map(|c| c.labels()))?
    } else {
        EventVocabulary::new(labels)?
    };
    let graph = match a.granularity {
        GranularityArg::Clip => build_cooccurrence(clips.iter().map(|c| c.labels()), &vocab)?,
        GranularityArg::Frame => {
            let hop = a.hop_ms as f64 / 1000.0;
            let rolls = clips
                .iter()
                .map(|c| {
                    let end = c.events.iter().map(|e| e.offset).fold(0.0, f64::max);
                    let frames = (end / hop).ceil() as usize;
                    event_roll_from_annotation(c, &vocab, a.hop_ms, frames, None).map(|t| (t.roll, frames))
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(&[u8], usize)> = rolls.iter().map(|(r, f)| (r.as_slice(), *f)).collect();
            build_cooccurrence_frames(&refs, &vocab)?
        }
    };
    graph.write_json(&a.out)?;
    if let Some(p) = &a.csv_out {
        graph.write_csv(p)?;
    }
    Ok(())
}

fn extract(path: &Path, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let w = read_wav(path)?;
    if w.sample_rate != cfg.sample_rate {
        return Err(CsedError::InvalidAudio(format!(
            "{} is sampled at {} Hz, features expect {} Hz",
            path.display(),
            w.sample_rate,
            cfg.sample_rate
        )));
    }
    LogMelExtractor::new(cfg, w.sample_rate)?.log_mel(&w)
}

pub fn cmd_features(a: &FeaturesArgs) -> Result<()> {
    let f = extract(&a.audio, &a.features.config())?;
    f.write_binary(&a.out)?;
    if let Some(p) = &a.csv_out {
        f.write_csv(p)?;
    }
    Ok(())
}

fn load_examples(
    manifest: &Manifest,
    dir: &Path,
    split: Split,
    vocab: &EventVocabulary,
    fcfg: &FeatureConfig,
    seq_len: usize,
) -> Result<Vec<TrainingExample>> {
    let ext = LogMelExtractor::new(fcfg, fcfg.sample_rate)?;
    let mut out = Vec::new();
    for (clip, ann) in manifest.load_split(dir, split)? {
        let path = dir.join(&clip.audio);
        let w = read_wav(&path)?;
        if w.sample_rate != fcfg.sample_rate {
            return Err(CsedError::InvalidAudio(format!(
                "{} is sampled at {} Hz, features expect {} Hz",
                path.display(),
                w.sample_rate,
                fcfg.sample_rate
            )));
        }
        let f = ext.log_mel(&w)?;
        let target = event_roll_from_annotation(&ann, vocab, fcfg.hop_ms, f.frames(), Some(w.duration_s()))?;
        out.extend(examples_from_clip(&f, &target, seq_len, fcfg.log_floor.ln())?);
    }
    Ok(out)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let loss_cfg = LossConfig {
        alpha: a.alpha,
        use_glr: !a.no_glr,
        epochs: a.epochs,
        adam: AdamConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.adam_eps,
        },
        seed: a.seed,
    };
    loss_cfg.validate()?;
    let fcfg = a.features.config();
    fcfg.validate(fcfg.sample_rate)?;
    let thr = a.threshold.config();
    thr.validate()?;
    let seg = SegmentConfig { segment_ms: a.segment_ms };
    seg.validate()?;
    if a.sequence_frames == 0 {
        return Err(CsedError::InvalidConfig("sequence_frames must be positive".into()));
    }
    let manifest = Manifest::read(&a.manifest)?;
    let vocab = EventVocabulary::new(manifest.labels.clone())?;
    let graph = if loss_cfg.glr_active() {
        let p = a.graph.as_ref().ok_or_else(|| {
            CsedError::InvalidConfig("graph regularization is on; pass --graph, --no-glr or --alpha 0".into())
        })?;
        let g = CooccurrenceGraph::read_json(p)?;
        if g.vocab() != &vocab {
            return Err(CsedError::InvalidConfig("graph labels differ from the manifest labels".into()));
        }
        Some(g)
    } else {
        None
    };
    let model_cfg = ModelConfig {
        n_features: fcfg.n_mels,
        n_events: vocab.len(),
        conv_channels: a.conv_channels.clone(),
        kernel: (a.kernel_freq, a.kernel_time),
        pool_freq: a.pool_freq,
        gru_units: a.gru_units,
        recurrent_mode: match a.recurrent {
            RecurrentArg::None => RecurrentMode::None,
            RecurrentArg::Forward => RecurrentMode::ForwardOnly,
            RecurrentArg::Bidirectional => RecurrentMode::Bidirectional,
        },
    };
    model_cfg.validate()?;

    let dir = manifest_dir(&a.manifest);
    let train = load_examples(&manifest, &dir, Split::Train, &vocab, &fcfg, a.sequence_frames)?;
    if train.is_empty() {
        return Err(CsedError::EmptyCorpus);
    }
    let val = load_examples(&manifest, &dir, Split::Val, &vocab, &fcfg, a.sequence_frames)?;
    log::info!("{} training and {} validation sequences", train.len(), val.len());
    let validation = (!val.is_empty()).then(|| Validation {
        examples: &val,
        threshold: thr.clone(),
        segments: seg,
    });

    let header = CheckpointHeader {
        model: model_cfg.clone(),
        labels: vocab.labels().to_vec(),
        features: fcfg,
    };
    let mut trainer = Trainer::new(model_cfg, loss_cfg)?;
    let outcome = trainer.run(&train, graph.as_ref(), validation.as_ref());
    let save = |params, trainer: &Trainer| -> Result<()> {
        Checkpoint {
            header: header.clone(),
            params,
        }
        .save(&a.out)?;
        if let Some(h) = &a.history {
            trainer.history().write_csv(h)?;
        }
        Ok(())
    };
    match outcome {
        Ok(()) => {
            let best = trainer.best().filter(|_| a.keep_best).map(|(_, _, p)| p.clone());
            let params = best.unwrap_or_else(|| trainer.params().clone());
            save(params, &trainer)
        }
        Err(e @ CsedError::Divergence(_)) => {
            log::warn!("saving last good parameters to {}", a.out.display());
            save(trainer.params().clone(), &trainer)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.model)?;
    let vocab = EventVocabulary::new(ck.header.labels.clone())?;
    let fcfg = &ck.header.features;
    let thr = a.threshold.config();
    thr.validate()?;
    let precision = match a.precision {
        PrecisionArg::F64 => Precision::F64,
        PrecisionArg::F32 => Precision::F32,
    };
    let run = |f: &FeatureMatrix| {
        predict_clip(f, &ck.params, &ck.header.model, precision, SEQUENCE_FRAMES, fcfg.log_floor.ln())
    };
    if let Some(mp) = &a.manifest {
        if a.out_posteriors.is_some() || a.out_roll.is_some() {
            return Err(CsedError::InvalidConfig("posteriorgram and roll outputs need a single input".into()));
        }
        let manifest = Manifest::read(mp)?;
        let dir = manifest_dir(mp);
        let mut anns = Vec::new();
        for c in manifest.clips.iter().filter(|c| c.split == a.split.into()) {
            let y = run(&extract(&dir.join(&c.audio), fcfg)?)?;
            let mut ann = threshold(&y, &vocab, &thr)?.to_annotation(&c.audio.to_string_lossy());
            ann.scene = c.scene.clone();
            anns.push(ann);
        }
        return write_annotations(&a.out_events, &anns, true);
    }
    let (features, name) = match (&a.audio, &a.features) {
        (Some(p), None) => (extract(p, fcfg)?, p),
        (None, Some(p)) => (FeatureMatrix::read_binary(p)?, p),
        _ => return Err(CsedError::InvalidConfig("pass one of --audio, --features or --manifest".into())),
    };
    let y = run(&features)?;
    let roll = threshold(&y, &vocab, &thr)?;
    let id = name.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write_annotations(&a.out_events, &[roll.to_annotation(&id)], false)?;
    if let Some(p) = &a.out_posteriors {
        y.write_csv(p, vocab.labels())?;
    }
    if let Some(p) = &a.out_roll {
        roll.write_csv(p)?;
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let seg = SegmentConfig { segment_ms: a.segment_ms };
    seg.validate()?;
    if a.hop_ms == 0 {
        return Err(CsedError::InvalidConfig("hop_ms must be positive".into()));
    }
    let pred = read_annotations(&a.pred)?;
    let reference = read_annotations(&a.reference)?;
    let vocab = if a.labels.is_empty() {
        EventVocabulary::from_sorted_union(reference.iter().flat_map(|c| c.labels()))
            .map_err(|_| CsedError::MetricInputMismatch("reference has no events; pass --labels".into()))?
    } else {
        EventVocabulary::new(a.labels.clone())?
    };
    for c in &pred {
        if !reference.iter().any(|r| r.clip_id == c.clip_id) && !(pred.len() == 1 && reference.len() == 1) {
            return Err(CsedError::MetricInputMismatch(format!("clip `{}` has no reference", c.clip_id)));
        }
        if let Some(l) = c.labels().find(|l| !vocab.contains(l)) {
            return Err(CsedError::MetricInputMismatch(format!("predicted label `{l}` is not in the vocabulary")));
        }
    }
    let empty = |id: &str| ClipAnnotation {
        clip_id: id.to_string(),
        scene: None,
        events: Vec::new(),
    };
    let hop = a.hop_ms as f64 / 1000.0;
    let mut total = SegmentScores::new(vocab.clone());
    for r in &reference {
        // Three-column files name clips after the file, so a lone pair always matches.
        let p = if pred.len() == 1 && reference.len() == 1 {
            pred[0].clone()
        } else {
            pred.iter().find(|p| p.clip_id == r.clip_id).cloned().unwrap_or_else(|| empty(&r.clip_id))
        };
        let end = a
            .duration_s
            .unwrap_or_else(|| r.events.iter().chain(&p.events).map(|e| e.offset).fold(0.0, f64::max));
        let frames = ((end / hop) - 1e-9).ceil().max(0.0) as usize;
        let rr = event_roll_from_annotation(r, &vocab, a.hop_ms, frames, None)?.roll;
        let pr = event_roll_from_annotation(&p, &vocab, a.hop_ms, frames, None)?.roll;
        total.merge(&score(&pr, &rr, &seg)?)?;
    }
    let avg = match a.averaging {
        AveragingArg::Micro => Averaging::Micro,
        AveragingArg::Macro => Averaging::Macro,
    };
    match &a.out {
        Some(p) => total.write_json(p, avg)?,
        None => println!("{}", serde_json::to_string_pretty(&total.to_json(avg))?),
    }
    if let Some(p) = &a.csv_out {
        total.write_csv(p, avg)?;
    }
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut cfg = GradcheckConfig {
        alpha: a.alpha,
        use_glr: !a.no_glr,
        frames: a.frames,
        eps: a.eps,
        tol: a.tol,
        seed: a.seed,
        corrupt: a.corrupt,
        ..Default::default()
    };
    cfg.model.recurrent_mode = match a.recurrent {
        RecurrentArg::None => RecurrentMode::None,
        RecurrentArg::Forward => RecurrentMode::ForwardOnly,
        RecurrentArg::Bidirectional => RecurrentMode::Bidirectional,
    };
    let report = gradcheck(&cfg)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| CsedError::io(p, e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CsedError::GradientCheckFailed {
            max_rel_err: report.max_rel_err(),
            tol: report.tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let kv = parse_config_file("# run\nepochs = 3\nno_glr=true # off\n\nalpha=0\n").unwrap();
        assert_eq!(
            kv,
            vec![
                ("epochs".to_string(), "3".to_string()),
                ("no-glr".to_string(), "true".to_string()),
                ("alpha".to_string(), "0".to_string())
            ]
        );
        assert!(matches!(parse_config_file("epochs 3"), Err(CsedError::ParseError { line: 1, .. })));
    }

    #[test]
    fn config_entries_precede_command_line_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "epochs=3\nno-glr=true\nclips=9\n").unwrap();
        let args: Vec<OsString> = ["csed", "--config", cfg.to_str().unwrap(), "train", "--epochs", "7"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = inject_config(args).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&s[4..], &["--epochs=3", "--no-glr", "--epochs", "7"]);
        std::fs::write(&cfg, "bogus=1\n").unwrap();
        let args: Vec<OsString> = ["csed", "--config", cfg.to_str().unwrap(), "train"].iter().map(OsString::from).collect();
        assert!(inject_config(args).is_err());
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for needle in ["[default: 0.00001]", "[default: 150]", "[default: 0.001]", "[default: 128,128,128]"] {
            assert!(help.contains(needle), "missing {needle}");
        }
        Cli::command().debug_assert();
    }
}
