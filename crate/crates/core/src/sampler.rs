//! Autoregressive top-k generation of animation sequences.

use crate::audio::AudioFeatureFrame;
use crate::codec::{AnimCode, AnimVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::model::{Decoder, MappingModel};
use crate::rng::Philox;
use crate::tensor;

/// Time-ordered animation frames with their frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AnimSequence {
    pub frames: Vec<AnimVector>,
    pub fps: f64,
}

impl AnimSequence {
    pub fn new(frames: Vec<AnimVector>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("animation sequence".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps {fps} must be positive")));
        }
        if let Some(i) = frames.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFinite(format!("frame {i}")));
        }
        Ok(AnimSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// Values of one attribute over time.
    pub fn track(&self, attribute: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.0[attribute]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Frames to generate; `None` means one per audio frame.
    pub length: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 10,
            temperature: 1.0,
            seed: 0,
            length: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k < 1 || self.k > d {
            return Err(Error::InvalidArgument(format!("k = {} must lie in [1, {d}]", self.k)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Draws one index from the `k` most probable entries of `dist`.
///
/// Survivors are the `k` largest probabilities (ties to the lower index).
/// Each survivor is reweighted to `(p / p_max)^(1/temperature)`, and the
/// draw walks survivors in ascending index order until the running sum
/// exceeds `u · total`. `k = 1` returns the argmax.
pub fn top_k_sample(dist: &[f64], k: usize, temperature: f64, u: f64) -> Result<usize> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if dist.is_empty() {
        return Err(Error::Empty("distribution".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidArgument("distribution has negative or non-finite mass".into()));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("distribution sums to {sum}")));
    }
    let k = k.min(dist.len());
    let mut order: Vec<usize> = (0..dist.len()).collect();
    let by_prob = |a: &usize, b: &usize| dist[*b].total_cmp(&dist[*a]).then(a.cmp(b));
    if k < dist.len() {
        order.select_nth_unstable_by(k - 1, by_prob);
        order.truncate(k);
    }
    if k == 1 {
        return Ok(order[0]);
    }
    order.sort_unstable();
    let p_max = order.iter().map(|&i| dist[i]).fold(0.0, f64::max);
    let inv_t = 1.0 / temperature;
    let weights: Vec<f64> = order
        .iter()
        .map(|&i| if dist[i] > 0.0 { (dist[i] / p_max).powf(inv_t) } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = order[0];
    for (&i, &w) in order.iter().zip(&weights) {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if acc > target {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// Generated codes and their dequantized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub codes: Vec<AnimCode>,
    pub sequence: AnimSequence,
}

/// How the context window is evaluated at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// Reuse cached keys/values while the window grows; rebuild only when
    /// the window slides.
    Incremental,
    /// Recompute the whole window from scratch at every step.
    Recompute,
}

/// Generates one frame per audio frame (or `cfg.length`).
pub fn generate(model: &MappingModel, audio: &[AudioFeatureFrame], fps: f64, cfg: &SamplerConfig) -> Result<Generated> {
    generate_with(model, audio, fps, cfg, ContextMode::Incremental)
}

/// Frame `t` is predicted from the codes of frames `t−τ..t−1` (the start
/// code stands in for frame `−1` while `t < τ`); the token holding the code
/// of frame `f − 1` carries the audio of frame `f`. Uniform draws come from
/// one Philox stream keyed by the seed, 23 per frame in attribute order.
pub fn generate_with(
    model: &MappingModel,
    audio: &[AudioFeatureFrame],
    fps: f64,
    cfg: &SamplerConfig,
    mode: ContextMode,
) -> Result<Generated> {
    let d = model.config.d;
    let tau = model.config.tau;
    cfg.validate(d)?;
    let length = cfg.length.unwrap_or(audio.len());
    if length == 0 {
        return Err(Error::InvalidArgument("requested length is 0".into()));
    }
    if audio.len() < length {
        return Err(Error::InvalidArgument(format!(
            "{} audio frames cannot drive {length} generated frames",
            audio.len()
        )));
    }
    let mut rng = Philox::with_stream(cfg.seed, 0x7361_6d70);
    let mut dec = Decoder::new(model);
    let sos = model.sos_code();
    let mut codes: Vec<AnimCode> = Vec::with_capacity(length);
    let mut logits = vec![0.0; NUM_ATTRIBUTES * d];

    for t in 0..length {
        let incremental = mode == ContextMode::Incremental && t < tau;
        if incremental {
            let prev = if t == 0 { sos } else { codes[t - 1] };
            dec.push(&prev, &audio[t])?;
        } else {
            dec.reset();
            let start = t.saturating_sub(tau);
            for f in start..=t {
                let prev = if f == 0 { sos } else { codes[f - 1] };
                if f == start && t >= tau {
                    continue;
                }
                dec.push(&prev, &audio[f])?;
            }
        }
        dec.logits(&mut logits);
        let mut c = [0usize; NUM_ATTRIBUTES];
        for (a, row) in logits.chunks_mut(d).enumerate() {
            tensor::softmax_row(row)?;
            c[a] = top_k_sample(row, cfg.k, cfg.temperature, rng.next_f64())?;
        }
        codes.push(AnimCode(c));
    }
    let frames = codes
        .iter()
        .map(|c| model.codec.dequantize(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Generated {
        codes,
        sequence: AnimSequence::new(frames, fps)?,
    })
}

/// Fraction of (frame, attribute) codes on which two runs differ.
pub fn code_disagreement(a: &[AnimCode], b: &[AnimCode]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("code runs of length {} and {}", a.len(), b.len())));
    }
    let diff: usize = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.0.iter().zip(&y.0).filter(|(p, q)| p != q).count())
        .sum();
    Ok(diff as f64 / (a.len() * NUM_ATTRIBUTES) as f64)
}

/// Mean of [`code_disagreement`] over all unordered pairs.
pub fn mean_pairwise_disagreement(runs: &[Vec<AnimCode>]) -> Result<f64> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two runs".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            total += code_disagreement(&runs[i], &runs[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_is_argmax() {
        let mut d2 = vec![0.0; 10];
        d2[7] = 0.6;
        d2[2] = 0.4;
        for i in 0..50 {
            let u = i as f64 / 50.0;
            assert_eq!(top_k_sample(&d2, 1, 1.0, u).unwrap(), 7);
        }
    }

    #[test]
    fn support_restricted_to_top_k() {
        let mut dist = vec![0.0; 20];
        dist[0] = 0.5;
        dist[1] = 0.5;
        let mut g = Philox::new(3);
        let mut counts = [0usize; 20];
        for _ in 0..10_000 {
            counts[top_k_sample(&dist, 2, 1.0, g.next_f64()).unwrap()] += 1;
        }
        assert_eq!(counts[0] + counts[1], 10_000);
        assert!((counts[0] as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn ties_break_to_lower_index() {
        let dist = vec![0.25; 4];
        // k = 2 keeps indices 0 and 1
        for i in 0..20 {
            let s = top_k_sample(&dist, 2, 1.0, i as f64 / 20.0).unwrap();
            assert!(s < 2);
        }
        assert_eq!(top_k_sample(&dist, 1, 1.0, 0.9).unwrap(), 0);
    }

    #[test]
    fn temperature_sharpens() {
        let dist = vec![0.6, 0.4];
        // with T -> 0 the weights collapse onto the mode
        let s = top_k_sample(&dist, 2, 1e-3, 0.99).unwrap();
        assert_eq!(s, 0);
        // u just above 0.6 picks index 1 at T = 1
        assert_eq!(top_k_sample(&dist, 2, 1.0, 0.61).unwrap(), 1);
    }

    #[test]
    fn invalid_arguments() {
        let dist = vec![0.5, 0.5];
        assert!(top_k_sample(&dist, 0, 1.0, 0.5).is_err());
        assert!(top_k_sample(&dist, 1, 0.0, 0.5).is_err());
        assert!(top_k_sample(&[0.5, 0.6], 1, 1.0, 0.5).is_err());
        assert!(top_k_sample(&[1.5, -0.5], 1, 1.0, 0.5).is_err());
    }

    #[test]
    fn disagreement_counts() {
        let a = vec![AnimCode([0; NUM_ATTRIBUTES]); 2];
        let mut b = a.clone();
        b[1].0[3] = 9;
        assert_eq!(code_disagreement(&a, &b).unwrap(), 1.0 / 46.0);
        assert_eq!(mean_pairwise_disagreement(&[a.clone(), a.clone(), a]).unwrap(), 0.0);
    }
}
