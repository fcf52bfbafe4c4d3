//! Log mel-band energy front end.
//!
//! Waveforms are cut into left-aligned frames of `frame_len_ms` every
//! `hop_ms`, windowed, transformed with a real FFT, projected onto a
//! triangular mel filterbank and log-compressed with a floor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CsedError, Result};
use crate::tensor::Matrix;

/// Frames per training sequence (10 s at a 20 ms hop).
pub const SEQUENCE_FRAMES: usize = 500;

const CSF_MAGIC: &[u8; 4] = b"CSF1";

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let w = Waveform {
            samples,
            sample_rate,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(CsedError::InvalidAudio("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(CsedError::EmptyInput("waveform has no samples"));
        }
        if let Some(i) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(CsedError::InvalidAudio(format!("sample {i} is not finite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    /// No tapering; used to check bin placement.
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub frame_len_ms: u32,
    pub hop_ms: u32,
    /// `None` selects the next power of two at or above the frame length.
    pub fft_size: Option<usize>,
    pub fmin_hz: f64,
    /// `None` selects the Nyquist frequency.
    pub fmax_hz: Option<f64>,
    pub log_floor: f64,
    pub window: Window,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 44_100,
            n_mels: 64,
            frame_len_ms: 40,
            hop_ms: 20,
            fft_size: None,
            fmin_hz: 0.0,
            fmax_hz: None,
            log_floor: 1e-10,
            window: Window::Hann,
        }
    }
}

impl FeatureConfig {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_len_ms, sample_rate)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.hop_ms, sample_rate)
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.frame_samples(sample_rate).next_power_of_two())
    }

    pub fn fft_bins(&self, sample_rate: u32) -> usize {
        self.fft_len(sample_rate) / 2 + 1
    }

    pub fn fmax(&self, sample_rate: u32) -> f64 {
        self.fmax_hz.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |m: String| Err(CsedError::InvalidConfig(m));
        if sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if self.hop_ms == 0 || self.hop_ms > self.frame_len_ms {
            return bad(format!(
                "hop ({} ms) must be in 1..=frame length ({} ms)",
                self.hop_ms, self.frame_len_ms
            ));
        }
        let frame = self.frame_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if frame == 0 || hop == 0 {
            return bad("frame or hop rounds to zero samples".into());
        }
        if self.fft_len(sample_rate) < frame {
            return bad(format!(
                "fft size {} is shorter than the {frame}-sample frame",
                self.fft_len(sample_rate)
            ));
        }
        let fmax = self.fmax(sample_rate);
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax && fmax <= sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({fmax}) <= nyquist",
                self.fmin_hz
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log floor must be a positive finite value".into());
        }
        Ok(())
    }
}

fn ms_to_samples(ms: u32, sample_rate: u32) -> usize {
    (ms as f64 * sample_rate as f64 / 1000.0).round() as usize
}

/// Number of analysis frames for a signal of `len` samples.
///
/// Only complete frames are counted; a signal shorter than one frame yields a
/// single zero-padded frame.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if len == 0 {
        0
    } else if len <= frame {
        1
    } else {
        1 + (len - frame) / hop
    }
}

/// Log mel-band energies, `D x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub hop_ms: u32,
}

impl FeatureMatrix {
    pub fn new(values: Matrix, hop_ms: u32) -> Result<Self> {
        if values.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(CsedError::InvalidAudio("feature matrix contains non-finite values".into()));
        }
        Ok(FeatureMatrix { values, hop_ms })
    }

    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    /// Cut into fixed-length sequences.
    ///
    /// The last (or only) sequence is padded with `pad_value` and carries a
    /// mask with `false` on padded frames.
    pub fn into_sequences(&self, len: usize, pad_value: f64) -> Vec<Sequence> {
        assert!(len > 0);
        let (d, t) = (self.dim(), self.frames());
        let n = t.div_ceil(len).max(1);
        (0..n)
            .map(|k| {
                let start = k * len;
                let valid = t.saturating_sub(start).min(len);
                let mut values = Matrix::filled(d, len, pad_value);
                for r in 0..d {
                    values.row_mut(r)[..valid]
                        .copy_from_slice(&self.values.row(r)[start..start + valid]);
                }
                let mut mask = vec![false; len];
                mask[..valid].fill(true);
                Sequence {
                    features: FeatureMatrix {
                        values,
                        hop_ms: self.hop_ms,
                    },
                    mask,
                    start_frame: start,
                }
            })
            .collect()
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| CsedError::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.encode(&mut w).map_err(|e| CsedError::io(path, e))?;
        w.flush().map_err(|e| CsedError::io(path, e))
    }

    pub fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CSF_MAGIC)?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.frames() as u32).to_le_bytes())?;
        w.write_all(&self.hop_ms.to_le_bytes())?;
        for x in self.values.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| CsedError::io(path, e))?;
        let mut r = BufReader::new(f);
        let fmt = |msg: &str| CsedError::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != CSF_MAGIC {
            return Err(fmt("missing CSF1 magic"));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut word).map_err(|_| fmt("truncated header"))?;
            Ok(u32::from_le_bytes(word))
        };
        let d = next_u32(&mut r)? as usize;
        let t = next_u32(&mut r)? as usize;
        let hop_ms = next_u32(&mut r)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| CsedError::io(path, e))?;
        if bytes.len() != d * t * 8 {
            return Err(fmt("payload length does not match header"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMatrix::new(Matrix::from_vec(d, t, data)?, hop_ms)
    }

    /// One row per frame, one column per band.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| CsedError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let header: Vec<String> = (0..self.dim()).map(|d| format!("mel{d}")).collect();
        let io = |e| CsedError::io(path, e);
        writeln!(w, "frame,{}", header.join(",")).map_err(io)?;
        for t in 0..self.frames() {
            write!(w, "{t}").map_err(io)?;
            for d in 0..self.dim() {
                write!(w, ",{}", self.values[(d, t)]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// A fixed-length slice of a feature matrix with its frame-validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub features: FeatureMatrix,
    pub mask: Vec<bool>,
    /// Index of the first frame in the source matrix.
    pub start_frame: usize,
}

fn window(kind: Window, n: usize) -> Vec<f64> {
    match kind {
        // Periodic Hann.
        Window::Hann => (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect(),
        Window::Rectangular => vec![1.0; n],
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale, `n_mels x fft_bins`.
pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Result<Matrix> {
    cfg.validate(sample_rate)?;
    let n_fft = cfg.fft_len(sample_rate);
    let bins = n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax(sample_rate));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;

    let mut fb = Matrix::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            *w = rise.min(fall).max(0.0);
        }
        if row.iter().all(|&w| w <= 0.0) {
            return Err(CsedError::DegenerateFilterbank { band: m });
        }
    }
    Ok(fb)
}

/// Reusable STFT + filterbank state for one configuration and sample rate.
pub struct LogMelExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    frame: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Matrix,
}

impl LogMelExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        let filterbank = mel_filterbank(cfg, sample_rate)?;
        let frame = cfg.frame_samples(sample_rate);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_len(sample_rate));
        Ok(LogMelExtractor {
            cfg: cfg.clone(),
            sample_rate,
            frame,
            hop: cfg.hop_samples(sample_rate),
            window: window(cfg.window, frame),
            fft,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        w.validate()?;
        if w.sample_rate != self.sample_rate {
            return Err(CsedError::InvalidAudio(format!(
                "expected {} Hz audio, got {} Hz",
                self.sample_rate, w.sample_rate
            )));
        }
        Ok(())
    }

    /// Squared-magnitude spectrogram, `fft_bins x T`.
    pub fn power(&self, w: &Waveform) -> Result<Matrix> {
        self.check_rate(w)?;
        let n_fft = self.fft.len();
        let bins = n_fft / 2 + 1;
        let frames = frame_count(w.samples.len(), self.frame, self.hop);
        let mut out = Matrix::zeros(bins, frames);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * self.hop;
            buf.fill(Complex::new(0.0, 0.0));
            for (i, (b, win)) in buf.iter_mut().zip(&self.window).enumerate() {
                if let Some(&x) = w.samples.get(start + i) {
                    b.re = x * win;
                }
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf[..bins].iter().enumerate() {
                out[(k, t)] = c.norm_sqr();
            }
        }
        Ok(out)
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let power = self.power(w)?;
        let mut mel = self.filterbank.matmul(&power)?;
        let floor = self.cfg.log_floor;
        for x in mel.as_mut_slice() {
            *x = x.max(floor).ln();
        }
        FeatureMatrix::new(mel, self.cfg.hop_ms)
    }
}

pub fn stft_power(w: &Waveform, cfg: &FeatureConfig) -> Result<Matrix> {
    w.validate()?;
    LogMelExtractor::new(cfg, w.sample_rate)?.power(w)
}

pub fn log_mel_energy(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    w.validate()?;
    LogMelExtractor::new(cfg, w.sample_rate)?.log_mel(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(N^2) DFT of a windowed, zero-padded frame.
    fn naive_power(samples: &[f64], win: &[f64], n_fft: usize) -> Vec<f64> {
        let mut frame = vec![0.0; n_fft];
        for (i, w) in win.iter().enumerate() {
            frame[i] = samples.get(i).copied().unwrap_or(0.0) * w;
        }
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn small_cfg() -> FeatureConfig {
        FeatureConfig {
            sample_rate: 16_000,
            n_mels: 16,
            frame_len_ms: 32,
            hop_ms: 16,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn zero_waveform_gives_zero_power_and_floor_features() {
        let cfg = small_cfg();
        let w = Waveform::new(vec![0.0; 4000], 16_000).unwrap();
        let p = stft_power(&w, &cfg).unwrap();
        assert!(p.as_slice().iter().all(|&x| x == 0.0));
        let f = log_mel_energy(&w, &cfg).unwrap();
        assert!(f.values.as_slice().iter().all(|&x| x == cfg.log_floor.ln()));
    }

    #[test]
    fn impulse_matches_naive_dft() {
        let cfg = small_cfg();
        let frame = cfg.frame_samples(16_000);
        let mut s = vec![0.0; frame * 2];
        s[3] = 1.0;
        s[frame + 17] = -0.5;
        let w = Waveform::new(s.clone(), 16_000).unwrap();
        let p = stft_power(&w, &cfg).unwrap();
        let win = window(Window::Hann, frame);
        let hop = cfg.hop_samples(16_000);
        for t in 0..p.cols() {
            let oracle = naive_power(&s[t * hop..], &win, cfg.fft_len(16_000));
            let peak = oracle.iter().cloned().fold(0.0, f64::max);
            for (k, want) in oracle.iter().enumerate() {
                assert!((p[(k, t)] - want).abs() <= 1e-9 * peak.max(1e-300));
            }
        }
    }

    #[test]
    fn bin_centred_sine_is_concentrated_with_rectangular_window() {
        let cfg = FeatureConfig {
            window: Window::Rectangular,
            ..small_cfg()
        };
        let n = cfg.fft_len(16_000);
        assert_eq!(n, cfg.frame_samples(16_000));
        let bin = 37;
        let s: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * bin as f64 * i as f64 / n as f64).sin())
            .collect();
        let p = stft_power(&Waveform::new(s, 16_000).unwrap(), &cfg).unwrap();
        let peak = p[(bin, 0)];
        for k in 0..p.rows() {
            if k != bin {
                assert!(p[(k, 0)] < 1e-10 * peak, "leak at bin {k}");
            }
        }
    }

    #[test]
    fn single_mel_band_spans_the_range() {
        let cfg = FeatureConfig {
            n_mels: 1,
            ..small_cfg()
        };
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        assert_eq!(fb.rows(), 1);
        let row = fb.row(0);
        assert_eq!(row[0], 0.0);
        assert!(row.last().unwrap().abs() < 1e-12);
        assert!(row.iter().cloned().fold(0.0, f64::max) > 0.9);
    }

    #[test]
    fn default_filterbank_rows_are_ordered_and_positive() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg, 44_100).unwrap();
        assert_eq!((fb.rows(), fb.cols()), (64, 1025));
        let mut last_center = -1.0;
        for m in 0..fb.rows() {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!(sum > 0.0);
            let center = row.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>() / sum;
            assert!(center > last_center);
            last_center = center;
        }
    }

    #[test]
    fn flat_spectrum_yields_row_sums() {
        let cfg = small_cfg();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        let flat = Matrix::filled(fb.cols(), 1, 1.0);
        let out = fb.matmul(&flat).unwrap();
        for m in 0..fb.rows() {
            let mut direct = 0.0;
            for k in 0..fb.cols() {
                direct += fb[(m, k)] * 1.0;
            }
            assert!((out[(m, 0)] - direct).abs() < 1e-12);
            assert!((direct - fb.row(m).iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_mels_is_degenerate() {
        let cfg = FeatureConfig {
            n_mels: 200,
            frame_len_ms: 4,
            hop_ms: 2,
            ..FeatureConfig::default()
        };
        assert!(matches!(
            mel_filterbank(&cfg, 8_000),
            Err(CsedError::DegenerateFilterbank { .. })
        ));
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let cfg = small_cfg();
        let s: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.37).sin() * 0.3 + (i as f64 * 0.011).cos() * 0.1).collect();
        let a = log_mel_energy(&Waveform::new(s.clone(), 16_000).unwrap(), &cfg).unwrap();
        let doubled: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
        let b = log_mel_energy(&Waveform::new(doubled, 16_000).unwrap(), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        let mut checked = 0;
        for (x, y) in a.values.as_slice().iter().zip(b.values.as_slice()) {
            if *x > floor + 1e-6 {
                assert!((y - x - 4f64.ln()).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn ten_seconds_pads_to_one_full_sequence() {
        let cfg = FeatureConfig {
            n_mels: 8,
            ..FeatureConfig::default()
        };
        let w = Waveform::new(vec![0.01; 441_000], 44_100).unwrap();
        let f = log_mel_energy(&w, &cfg).unwrap();
        assert_eq!(f.frames(), 1 + (441_000 - 1764) / 882);
        let seqs = f.into_sequences(SEQUENCE_FRAMES, cfg.log_floor.ln());
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].features.frames(), 500);
        assert_eq!(seqs[0].mask.iter().filter(|m| **m).count(), f.frames());
    }

    #[test]
    fn long_clips_split_into_chunks() {
        let m = Matrix::from_vec(2, 7, (0..14).map(f64::from).collect()).unwrap();
        let f = FeatureMatrix::new(m, 20).unwrap();
        let seqs = f.into_sequences(3, -1.0);
        assert_eq!(seqs.len(), 3);
        assert_eq!(seqs[2].mask, vec![true, false, false]);
        assert_eq!(seqs[2].features.values.row(1), &[13.0, -1.0, -1.0]);
        assert_eq!(seqs[1].start_frame, 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            Waveform::new(vec![], 16_000),
            Err(CsedError::EmptyInput(_))
        ));
        assert!(matches!(
            Waveform::new(vec![0.0, f64::NAN], 16_000),
            Err(CsedError::InvalidAudio(_))
        ));
        let bad = FeatureConfig {
            hop_ms: 50,
            ..FeatureConfig::default()
        };
        assert!(bad.validate(44_100).is_err());
    }

    #[test]
    fn csf_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_vec(3, 2, vec![1.5, -2.0, 0.1, 1e-300, -0.0, 7.0]).unwrap();
        let f = FeatureMatrix::new(m, 20).unwrap();
        let p = dir.path().join("x.csf");
        f.write_binary(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"CSF1");
        assert_eq!(bytes.len(), 16 + 6 * 8);
        let g = FeatureMatrix::read_binary(&p).unwrap();
        assert_eq!(f.values.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   g.values.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(g.hop_ms, 20);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn frame_count_formula(len in 1usize..20_000, frame in 1usize..2048, hop_frac in 0.05f64..1.0) {
                let hop = ((frame as f64 * hop_frac) as usize).max(1);
                let t = frame_count(len, frame, hop);
                if len >= frame {
                    prop_assert_eq!(t, 1 + (len - frame) / hop);
                    // Every counted frame lies fully inside the signal.
                    prop_assert!((t - 1) * hop + frame <= len);
                    prop_assert!(t * hop + frame > len);
                } else {
                    prop_assert_eq!(t, 1);
                }
            }

            #[test]
            fn features_are_finite(seed in 0u64..1000, len in 100usize..3000, gain in 1e-6f64..1e3) {
                let cfg = FeatureConfig { sample_rate: 8_000, n_mels: 8, frame_len_ms: 32, hop_ms: 16, ..FeatureConfig::default() };
                let s: Vec<f64> = (0..len).map(|i| gain * ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - gain).collect();
                let f = log_mel_energy(&Waveform::new(s, 8_000).unwrap(), &cfg).unwrap();
                prop_assert!(f.values.as_slice().iter().all(|x| x.is_finite()));
            }
        }
    }
}
