//! Mel-spectrogram features aligned to video frames.
//!
//! Conventions: 16 kHz mono input, periodic Hann window of 1280 samples,
//! hop 160, no padding (frames lie fully inside the signal), power
//! spectrum, 20 triangular HTK-mel bands spanning 0–8000 Hz with unit peak,
//! and `ln(x + 1e-6)` compression.

use std::fmt::Write as _;
use std::io::{Read, Seek};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kv::fmt_f64;

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_FFT: usize = 1280;
pub const HOP: usize = 160;
pub const N_MELS: usize = 20;
pub const F_MIN: f64 = 0.0;
pub const F_MAX: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-6;
pub const DEFAULT_WINDOW: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip { samples, sample_rate }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// `W × 20` log-mel context centred on one video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureFrame {
    pub frame_index: usize,
    /// Row-major `window × N_MELS`.
    pub mel: Vec<f64>,
    pub window: usize,
    pub log_scaled: bool,
}

/// Log-mel matrix with one row of [`N_MELS`] values per STFT step.
pub type MelMatrix = Vec<[f64; N_MELS]>;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// The 22 edge frequencies of the filterbank: band `b` rises from
/// `edges[b]`, peaks at `edges[b + 1]` and falls to `edges[b + 2]`.
pub fn mel_edges() -> [f64; N_MELS + 2] {
    let (m0, m1) = (hz_to_mel(F_MIN), hz_to_mel(F_MAX));
    let mut e = [0.0; N_MELS + 2];
    for (i, x) in e.iter_mut().enumerate() {
        *x = mel_to_hz(m0 + (m1 - m0) * i as f64 / (N_MELS + 1) as f64);
    }
    e
}

pub fn mel_band_centers() -> [f64; N_MELS] {
    let e = mel_edges();
    let mut c = [0.0; N_MELS];
    c.copy_from_slice(&e[1..N_MELS + 1]);
    c
}

struct FrontEnd {
    window: Vec<f64>,
    /// `N_MELS × (N_FFT/2 + 1)` triangular weights.
    filters: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

const N_BINS: usize = N_FFT / 2 + 1;

fn front_end() -> &'static FrontEnd {
    static FE: OnceLock<FrontEnd> = OnceLock::new();
    FE.get_or_init(|| {
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        let edges = mel_edges();
        let mut filters = vec![0.0; N_MELS * N_BINS];
        for b in 0..N_MELS {
            let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
            for k in 0..N_BINS {
                let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                let w = if f >= l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f <= r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                filters[b * N_BINS + k] = w;
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        FrontEnd { window, filters, fft }
    })
}

/// Number of STFT steps for `len` samples under the no-padding convention.
pub fn num_mel_steps(len: usize) -> usize {
    if len < N_FFT {
        0
    } else {
        (len - N_FFT) / HOP + 1
    }
}

pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelMatrix> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "expected {SAMPLE_RATE} Hz, got {} Hz",
            clip.sample_rate
        )));
    }
    if clip.samples.len() < N_FFT {
        return Err(Error::Audio(format!(
            "clip of {} samples is shorter than one {N_FFT}-sample window",
            clip.samples.len()
        )));
    }
    if let Some(i) = clip.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("audio sample {i}")));
    }
    let fe = front_end();
    let steps = num_mel_steps(clip.samples.len());
    let mut out = Vec::with_capacity(steps);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex::new(0.0, 0.0); fe.fft.get_inplace_scratch_len()];
    let mut power = vec![0.0; N_BINS];
    for s in 0..steps {
        let frame = &clip.samples[s * HOP..s * HOP + N_FFT];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&fe.window) {
            *b = Complex::new(x * w, 0.0);
        }
        fe.fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let mut row = [0.0; N_MELS];
        for (b, r) in row.iter_mut().enumerate() {
            let e: f64 = fe.filters[b * N_BINS..(b + 1) * N_BINS]
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            *r = (e + LOG_FLOOR).ln();
        }
        out.push(row);
    }
    Ok(out)
}

/// Existing mel step (of `steps`) whose window centre is nearest to `time`
/// seconds. Step `c` is centred at `(c · HOP + N_FFT / 2) / SAMPLE_RATE`.
pub fn nearest_mel_step(time: f64, steps: usize) -> i64 {
    let c = ((time * SAMPLE_RATE as f64 - (N_FFT / 2) as f64) / HOP as f64).round() as i64;
    c.clamp(0, steps.saturating_sub(1) as i64)
}

/// One feature frame per video frame: `round(duration · fps)` frames, frame
/// `t` centred on the mel step nearest to time `(t + 0.5) / fps`, padded
/// with the log floor where the context runs off the matrix.
pub fn align_frames(
    mel: &[[f64; N_MELS]],
    fps: f64,
    clip_duration: f64,
    window: usize,
) -> Result<Vec<AudioFeatureFrame>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps {fps} must be positive")));
    }
    if window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("context window {window} must be odd")));
    }
    if !(clip_duration >= 0.0 && clip_duration.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad duration {clip_duration}")));
    }
    let count = num_video_frames(clip_duration, fps);
    let half = (window / 2) as i64;
    let floor = LOG_FLOOR.ln();
    let mut frames = Vec::with_capacity(count);
    for t in 0..count {
        let c = nearest_mel_step((t as f64 + 0.5) / fps, mel.len());
        let mut data = Vec::with_capacity(window * N_MELS);
        for r in c - half..=c + half {
            if r >= 0 && (r as usize) < mel.len() {
                data.extend_from_slice(&mel[r as usize]);
            } else {
                data.extend(std::iter::repeat_n(floor, N_MELS));
            }
        }
        frames.push(AudioFeatureFrame {
            frame_index: t,
            mel: data,
            window,
            log_scaled: true,
        });
    }
    Ok(frames)
}

pub fn num_video_frames(duration: f64, fps: f64) -> usize {
    (duration * fps).round() as usize
}

/// Full front end: mel spectrogram then frame alignment over the clip's
/// own duration.
pub fn clip_features(clip: &AudioClip, fps: f64, window: usize) -> Result<Vec<AudioFeatureFrame>> {
    let mel = mel_spectrogram(clip)?;
    align_frames(&mel, fps, clip.duration(), window)
}

/// Linear-interpolation resampling.
pub fn resample_linear(samples: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let n_out = ((samples.len() as f64) * to as f64 / from as f64).round() as usize;
    let ratio = from as f64 / to as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            if j + 1 >= samples.len() {
                samples[samples.len() - 1]
            } else {
                let f = pos - j as f64;
                samples[j] * (1.0 - f) + samples[j + 1] * f
            }
        })
        .collect()
}

/// Decodes 16-bit PCM mono WAV data, resampling to 16 kHz if needed.
pub fn decode_wav<R: Read + Seek>(reader: R) -> Result<AudioClip> {
    let mut wav = hound::WavReader::new(reader).map_err(|e| Error::Audio(e.to_string()))?;
    let spec = wav.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!("expected mono, got {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "expected 16-bit PCM, got {} bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if spec.sample_rate == 0 {
        return Err(Error::Audio("sample rate 0".into()));
    }
    let samples = wav
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Audio(e.to_string()))?;
    if spec.sample_rate != SAMPLE_RATE {
        log::warn!(
            "resampling {} Hz audio to {SAMPLE_RATE} Hz by linear interpolation",
            spec.sample_rate
        );
        let resampled = resample_linear(&samples, spec.sample_rate, SAMPLE_RATE);
        return Ok(AudioClip::new(resampled, SAMPLE_RATE));
    }
    Ok(AudioClip::new(samples, spec.sample_rate))
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(std::io::BufReader::new(f))
}

/// Writes 16-bit PCM mono; samples are clipped to `[-1, 1)`.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::Audio(e.to_string()))?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| Error::Audio(e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::Audio(e.to_string()))
}

/// Line-delimited feature export: a `# features window=W bands=20
/// log_scaled=1` header, then one `frame_index,v0,...` line per frame.
pub fn features_to_text(frames: &[AudioFeatureFrame]) -> String {
    let window = frames.first().map_or(DEFAULT_WINDOW, |f| f.window);
    let log_scaled = frames.first().is_none_or(|f| f.log_scaled);
    let mut s = format!(
        "# features window={window} bands={N_MELS} log_scaled={}\n",
        u8::from(log_scaled)
    );
    for f in frames {
        let _ = write!(s, "{}", f.frame_index);
        for v in &f.mel {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn parse_features(text: &str) -> Result<Vec<AudioFeatureFrame>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Empty("feature file".into()))?;
    let header = header
        .strip_prefix("# features")
        .ok_or_else(|| Error::parse(1, "missing '# features' header"))?;
    let mut window = None;
    let mut bands = None;
    let mut log_scaled = true;
    for tok in header.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("bad header token {tok:?}")))?;
        let n: usize = v
            .parse()
            .map_err(|_| Error::parse(1, format!("bad header value {v:?}")))?;
        match k {
            "window" => window = Some(n),
            "bands" => bands = Some(n),
            "log_scaled" => log_scaled = n != 0,
            _ => {}
        }
    }
    let window = window.ok_or_else(|| Error::parse(1, "header lacks window"))?;
    if bands != Some(N_MELS) {
        return Err(Error::parse(1, format!("expected bands={N_MELS}")));
    }
    if window == 0 || window % 2 == 0 || window > 4096 {
        return Err(Error::parse(1, format!("bad window {window}")));
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let idx: usize = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, "bad frame index"))?;
        let mel = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(i + 1, "bad number"))?;
        if mel.len() != window * N_MELS {
            return Err(Error::parse(
                i + 1,
                format!("expected {} values, got {}", window * N_MELS, mel.len()),
            ));
        }
        if mel.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(i + 1, "non-finite feature"));
        }
        frames.push(AudioFeatureFrame {
            frame_index: idx,
            mel,
            window,
            log_scaled,
        });
    }
    Ok(frames)
}
