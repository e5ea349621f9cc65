//! Animation CSV files, dataset manifests and the synthetic corpus.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::{self, AudioClip, AudioFeatureFrame, SAMPLE_RATE};
use crate::codec::{AnimVector, ATTRIBUTE_NAMES, BLINK_ATTRIBUTE, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::kv::fmt_f64;
use crate::rng::Philox;
use crate::sampler::AnimSequence;

pub const DEFAULT_FPS: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedAnimation {
    pub sequence: AnimSequence,
    /// Rows discarded because they held a non-finite value.
    pub dropped: usize,
}

/// Reads an OpenFace-style CSV: a header row naming columns (surrounding
/// whitespace ignored), one row per frame. Columns other than the 23
/// attributes are ignored and `#` lines are skipped, except that a comment
/// carrying `fps=<v>` supplies the frame rate when `fps` is `None`.
pub fn parse_animation_csv(text: &str, fps: Option<f64>) -> Result<LoadedAnimation> {
    let mut header: Option<Vec<usize>> = None;
    let mut comment_fps = None;
    let mut frames = Vec::new();
    let mut dropped = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            for tok in c.split_whitespace() {
                if let Some(v) = tok.strip_prefix("fps=") {
                    comment_fps = v.parse::<f64>().ok();
                }
            }
            continue;
        }
        let Some(cols) = &header else {
            let names: Vec<&str> = line.split(',').map(str::trim).collect();
            let mut idx = Vec::with_capacity(NUM_ATTRIBUTES);
            let mut missing = Vec::new();
            for want in ATTRIBUTE_NAMES {
                match names.iter().position(|n| *n == want) {
                    Some(p) => idx.push(p),
                    None => missing.push(want.to_string()),
                }
            }
            if !missing.is_empty() {
                return Err(Error::MissingColumns(missing));
            }
            header = Some(idx);
            continue;
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let mut v = [0.0; NUM_ATTRIBUTES];
        for (a, &c) in cols.iter().enumerate() {
            let f = fields
                .get(c)
                .ok_or_else(|| Error::parse(i + 1, format!("row has {} fields", fields.len())))?;
            v[a] = f
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad number {f:?} in {}", ATTRIBUTE_NAMES[a])))?;
        }
        if v.iter().all(|x: &f64| x.is_finite()) {
            frames.push(AnimVector(v));
        } else {
            dropped += 1;
        }
    }
    if header.is_none() {
        return Err(Error::Empty("animation file has no header".into()));
    }
    if frames.is_empty() {
        return Err(Error::Empty("animation file has no usable rows".into()));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} animation rows with non-finite values");
    }
    let fps = fps.or(comment_fps).unwrap_or(DEFAULT_FPS);
    Ok(LoadedAnimation {
        sequence: AnimSequence::new(frames, fps)?,
        dropped,
    })
}

pub fn load_animation_csv(path: &Path, fps: Option<f64>) -> Result<LoadedAnimation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_animation_csv(&text, fps)
}

/// Writes `frame,<23 attribute columns>` with exact float round-tripping.
/// `preamble` lines are emitted first as `#` comments.
pub fn animation_to_csv(seq: &AnimSequence, preamble: &[String]) -> String {
    let mut s = String::new();
    for p in preamble {
        let _ = writeln!(s, "# {p}");
    }
    s.push_str("frame");
    for n in ATTRIBUTE_NAMES {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (t, f) in seq.frames.iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in &f.0 {
            s.push(',');
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

pub fn save_animation_csv(path: &Path, seq: &AnimSequence, preamble: &[String]) -> Result<()> {
    fs::write(path, animation_to_csv(seq, preamble)).map_err(|e| Error::io(path, e))
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub clip_id: String,
    pub audio: PathBuf,
    pub animation: PathBuf,
    pub fps: f64,
}

/// Manifest lines are `clip_id,audio_path,animation_path,fps`; an optional
/// first line starting with `clip_id` is a header. Relative paths resolve
/// against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (out.is_empty() && line.starts_with("clip_id")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let fps: f64 = f[3]
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad fps {:?}", f[3])))?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::parse(i + 1, format!("fps {fps} must be positive")));
        }
        out.push(DatasetRecord {
            clip_id: f[0].to_string(),
            audio: base.join(f[1]),
            animation: base.join(f[2]),
            fps,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("manifest".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub clip_id: String,
    pub audio: Vec<AudioFeatureFrame>,
    pub animation: AnimSequence,
    pub dropped: usize,
}

/// Pairs aligned audio features with an animation track, refusing to
/// truncate either side.
pub fn pair_clip(
    clip_id: &str,
    audio: &AudioClip,
    animation: AnimSequence,
    window: usize,
) -> Result<LoadedClip> {
    let features = audio::clip_features(audio, animation.fps, window)?;
    if features.len() != animation.len() {
        return Err(Error::FrameMismatch {
            clip: clip_id.to_string(),
            anim: animation.len(),
            audio: features.len(),
        });
    }
    Ok(LoadedClip {
        clip_id: clip_id.to_string(),
        audio: features,
        animation,
        dropped: 0,
    })
}

pub fn load_record(rec: &DatasetRecord, window: usize) -> Result<LoadedClip> {
    let clip = audio::read_wav(&rec.audio)?;
    let anim = load_animation_csv(&rec.animation, Some(rec.fps))?;
    let mut c = pair_clip(&rec.clip_id, &clip, anim.sequence, window)?;
    c.dropped = anim.dropped;
    Ok(c)
}

pub fn load_manifest(path: &Path, window: usize) -> Result<Vec<LoadedClip>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)?
        .iter()
        .map(|r| load_record(r, window))
        .collect()
}

/// Parameters of the synthetic talking-head process.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    /// Blinks per second.
    pub blink_rate: f64,
    /// Length of each rectangular blink pulse, frames.
    pub blink_frames: usize,
    /// Standard deviation of the per-frame pose velocity increment
    /// (radians for rotation, normalized units for translation, scaled by
    /// [`TRANSLATION_SCALE`]).
    pub pose_sigma: f64,
    /// Mean talking and pausing spell lengths, seconds.
    pub talk_mean: f64,
    pub pause_mean: f64,
    /// Standard deviation of the per-frame noise on mouth AUs.
    pub mouth_noise: f64,
}

pub const TRANSLATION_SCALE: f64 = 1.0;
pub const POSE_DAMPING: f64 = 0.97;
/// Pull of the pose toward neutral per frame; keeps clips stationary.
pub const POSE_RESTORE: f64 = 0.01;
/// Resting level of the non-mouth AUs.
pub const FACE_BASE: f64 = 0.5;
pub const ROTATION_LIMIT: f64 = 0.6;
pub const TRANSLATION_LIMIT: f64 = 1.0;
pub const DEFAULT_BLINK_FRAMES: usize = 2;
/// Mouth attributes (AU10 through AU26) and how strongly each follows the
/// speech envelope.
const MOUTH_GAINS: [(usize, f64); 9] = [
    (7, 0.6),
    (8, 0.4),
    (9, 0.3),
    (10, 0.3),
    (11, 0.8),
    (12, 0.5),
    (13, 0.4),
    (14, 2.0),
    (15, 1.6),
];

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            duration: 60.0,
            fps: DEFAULT_FPS,
            blink_rate: 0.35,
            blink_frames: DEFAULT_BLINK_FRAMES,
            pose_sigma: 0.003,
            talk_mean: 2.0,
            pause_mean: 0.8,
            mouth_noise: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.blink_frames == 0 {
            return bad("blink pulses need at least one frame");
        }
        if !(self.blink_rate > 0.0 && self.blink_rate.is_finite()) {
            return bad("blink rate must be > 0");
        }
        if !(self.pose_sigma >= 0.0 && self.pose_sigma.is_finite()) {
            return bad("pose sigma must be >= 0");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be > 0");
        }
        if !(self.duration.is_finite() && self.duration * SAMPLE_RATE as f64 >= audio::N_FFT as f64) {
            return bad("duration shorter than one analysis window");
        }
        if !(self.talk_mean > 0.0 && self.pause_mean > 0.0) {
            return bad("spell lengths must be > 0");
        }
        if !(self.mouth_noise >= 0.0 && self.mouth_noise.is_finite()) {
            return bad("mouth noise must be >= 0");
        }
        Ok(())
    }
}

/// A synthetic clip plus the latent quantities that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub audio: AudioClip,
    pub animation: AnimSequence,
    pub talking: Vec<bool>,
    /// Frame indices where a blink pulse begins.
    pub blink_onsets: Vec<usize>,
}

/// Samples audio and animation from the synthetic process.
///
/// A two-state Markov chain switches between talking and pausing. While
/// talking the envelope follows a syllable-rate oscillation; the audio is
/// band-limited noise scaled by that envelope and the mouth AUs track a
/// smoothed copy of it. Blinks are rectangular AU45 pulses whose onsets
/// form a Poisson process independent of the audio. Head pose integrates
/// a damped, weakly mean-reverting velocity driven by Gaussian increments
/// and is clipped.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticClip> {
    spec.validate()?;
    let n_samples = (spec.duration * SAMPLE_RATE as f64).round() as usize;
    let n_frames = audio::num_video_frames(n_samples as f64 / SAMPLE_RATE as f64, spec.fps);
    let dt = 1.0 / spec.fps;

    let mut state_rng = Philox::with_stream(spec.seed, 1);
    let mut talking = Vec::with_capacity(n_frames);
    let mut envelope = Vec::with_capacity(n_frames);
    let mut is_talking = state_rng.next_f64() < spec.talk_mean / (spec.talk_mean + spec.pause_mean);
    let mut remaining = state_rng.next_exponential(1.0) * if is_talking { spec.talk_mean } else { spec.pause_mean };
    let mut phase = 0.0f64;
    let mut syllable_rate = 4.0;
    for _ in 0..n_frames {
        while remaining <= 0.0 {
            is_talking = !is_talking;
            let mean = if is_talking { spec.talk_mean } else { spec.pause_mean };
            remaining += state_rng.next_exponential(1.0) * mean;
            syllable_rate = 3.0 + 2.0 * state_rng.next_f64();
        }
        remaining -= dt;
        phase += std::f64::consts::PI * syllable_rate * dt;
        talking.push(is_talking);
        envelope.push(if is_talking { 0.25 + 0.75 * phase.sin().abs() } else { 0.02 });
    }
    let mut smooth = Vec::with_capacity(n_frames);
    let mut acc = envelope.first().copied().unwrap_or(0.0);
    for &e in &envelope {
        acc = 0.5 * acc + 0.5 * e;
        smooth.push(acc);
    }

    // band-limited noise: difference of two one-pole low-passes of white noise
    let mut noise_rng = Philox::with_stream(spec.seed, 2);
    let (mut fast, mut slow) = (0.0, 0.0);
    let (a_fast, a_slow) = (0.6, 0.05);
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let w = noise_rng.next_normal();
        fast += a_fast * (w - fast);
        slow += a_slow * (w - slow);
        let pos = i as f64 / SAMPLE_RATE as f64 * spec.fps - 0.5;
        let env = interp(&smooth, pos);
        samples.push((0.4 * env * (fast - slow)).clamp(-1.0, 1.0));
    }

    let mut frames = vec![AnimVector([0.0; NUM_ATTRIBUTES]); n_frames];
    let mut face_rng = Philox::with_stream(spec.seed, 3);
    for a in 0..7 {
        let mut ar = 0.0;
        for f in frames.iter_mut() {
            ar = 0.95 * ar + 0.05 * face_rng.next_normal();
            f.0[a] = (FACE_BASE + ar).max(0.0);
        }
    }
    for (t, f) in frames.iter_mut().enumerate() {
        for &(a, gain) in &MOUTH_GAINS {
            f.0[a] = (gain * smooth[t] + spec.mouth_noise * face_rng.next_normal()).max(0.0);
        }
    }

    let mut blink_rng = Philox::with_stream(spec.seed, 4);
    let mut blink_onsets = Vec::new();
    let mut time = blink_rng.next_exponential(spec.blink_rate);
    while time < n_frames as f64 * dt {
        let onset = (time * spec.fps) as usize;
        let amp = 1.8 + 0.4 * blink_rng.next_f64();
        for f in frames.iter_mut().skip(onset).take(spec.blink_frames) {
            f.0[BLINK_ATTRIBUTE] = f.0[BLINK_ATTRIBUTE].max(amp);
        }
        blink_onsets.push(onset);
        time += blink_rng.next_exponential(spec.blink_rate);
    }

    let mut pose_rng = Philox::with_stream(spec.seed, 5);
    let mut pos = [0.0; 6];
    let mut vel = [0.0; 6];
    for f in frames.iter_mut() {
        for k in 0..6 {
            let (scale, limit) = if k < 3 {
                (1.0, ROTATION_LIMIT)
            } else {
                (TRANSLATION_SCALE, TRANSLATION_LIMIT)
            };
            vel[k] = POSE_DAMPING * vel[k] - POSE_RESTORE * pos[k] + spec.pose_sigma * scale * pose_rng.next_normal();
            pos[k] = (pos[k] + vel[k]).clamp(-limit, limit);
            if pos[k].abs() == limit {
                vel[k] = 0.0;
            }
            f.0[17 + k] = pos[k];
        }
    }

    Ok(SyntheticClip {
        audio: AudioClip::new(samples, SAMPLE_RATE),
        animation: AnimSequence::new(frames, spec.fps)?,
        talking,
        blink_onsets,
    })
}

fn interp(v: &[f64], pos: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let p = pos.clamp(0.0, (v.len() - 1) as f64);
    let i = p.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let f = p - i as f64;
    v[i] * (1.0 - f) + v[i + 1] * f
}

/// Independent synthetic clips with seeds `base_seed + i`, paired with
/// their audio features.
pub fn synthetic_corpus(spec: &SyntheticSpec, clips: usize, window: usize) -> Result<Vec<LoadedClip>> {
    (0..clips)
        .map(|i| {
            let s = SyntheticSpec {
                seed: spec.seed.wrapping_add(i as u64),
                ..spec.clone()
            };
            let clip = generate_synthetic(&s)?;
            pair_clip(&format!("synth{:03}", s.seed), &clip.audio, clip.animation, window)
        })
        .collect()
}
