//! Sequence-level metrics: blink rate, temporal smoothness, sample
//! diversity and held-out perplexity.

use crate::codec::NUM_ATTRIBUTES;
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvRecord};
use crate::model::MappingModel;
use crate::sampler::AnimSequence;
use crate::train::{batch_nll, TrainingBatch};

/// Hysteresis thresholds as fractions of the track's value range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlinkThresholds {
    pub rise: f64,
    pub fall: f64,
    /// Tracks whose range does not exceed this are treated as flat.
    pub min_range: f64,
}

impl Default for BlinkThresholds {
    fn default() -> Self {
        BlinkThresholds {
            rise: 0.6,
            fall: 0.3,
            min_range: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlinkRate {
    pub blinks: usize,
    pub per_second: f64,
}

impl BlinkRate {
    /// No blink at all: the eyes never move.
    pub fn is_static(&self) -> bool {
        self.blinks == 0
    }
}

/// Counts blinks in an AU45 track: a blink starts when the value rises
/// above `min + rise·range` and ends once it drops below
/// `min + fall·range`. A blink still open at the end of the track counts.
pub fn eye_blink_rate(track: &[f64], fps: f64, th: &BlinkThresholds) -> Result<BlinkRate> {
    if track.len() < 2 {
        return Err(Error::InvalidArgument("blink track needs >= 2 frames".into()));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidArgument(format!("fps {fps} must be positive")));
    }
    let duration = track.len() as f64 / fps;
    let lo = track.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = track.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > th.min_range) {
        return Ok(BlinkRate {
            blinks: 0,
            per_second: 0.0,
        });
    }
    let (rise, fall) = (lo + th.rise * range, lo + th.fall * range);
    let mut closed = false;
    let mut blinks = 0;
    for &v in track {
        if !closed && v > rise {
            closed = true;
            blinks += 1;
        } else if closed && v < fall {
            closed = false;
        }
    }
    Ok(BlinkRate {
        blinks,
        per_second: blinks as f64 / duration,
    })
}

/// Mean absolute second difference per attribute.
pub fn smoothness(seq: &AnimSequence) -> Result<Vec<f64>> {
    let n = seq.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "smoothness needs >= 3 frames, got {n}"
        )));
    }
    let mut out = vec![0.0; NUM_ATTRIBUTES];
    for t in 1..n - 1 {
        let (p, c, f) = (&seq.frames[t - 1].0, &seq.frames[t].0, &seq.frames[t + 1].0);
        for a in 0..NUM_ATTRIBUTES {
            out[a] += (f[a] - 2.0 * c[a] + p[a]).abs();
        }
    }
    out.iter_mut().for_each(|v| *v /= (n - 2) as f64);
    Ok(out)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean over unordered pairs and frames of the frame-wise L1 distance.
pub fn diversity(samples: &[AnimSequence]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("diversity needs >= 2 samples".into()));
    }
    let len = samples[0].len();
    if samples.iter().any(|s| s.len() != len) {
        return Err(Error::Shape("samples differ in length".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let mut d = 0.0;
            for (x, y) in samples[i].frames.iter().zip(&samples[j].frames) {
                d += x.0.iter().zip(&y.0).map(|(p, q)| (p - q).abs()).sum::<f64>();
            }
            total += d / len as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// `exp` of the mean teacher-forced cross-entropy per attribute per step.
pub fn heldout_perplexity(model: &MappingModel, data: &[TrainingBatch]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for b in data {
        let (s, k) = batch_nll(model, b)?;
        total += s;
        n += k;
    }
    if n == 0 {
        return Err(Error::Empty("perplexity dataset".into()));
    }
    Ok((total / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub ebr: f64,
    pub smoothness: Vec<f64>,
    pub diversity: f64,
    pub perplexity: f64,
}

impl MetricReport {
    pub fn smoothness_mean(&self) -> f64 {
        mean(&self.smoothness)
    }

    pub fn csv_header() -> &'static str {
        "ebr,smoothness,diversity,perplexity"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            fmt_f64(self.ebr),
            fmt_f64(self.smoothness_mean()),
            fmt_f64(self.diversity),
            fmt_f64(self.perplexity)
        )
    }

    pub fn to_record(&self) -> KvRecord {
        let mut r = KvRecord::new();
        r.set("ebr", fmt_f64(self.ebr));
        r.set("smoothness", fmt_f64(self.smoothness_mean()));
        for (a, v) in self.smoothness.iter().enumerate() {
            r.set(format!("smoothness.{}", crate::codec::ATTRIBUTE_NAMES[a]), fmt_f64(*v));
        }
        r.set("diversity", fmt_f64(self.diversity));
        r.set("perplexity", fmt_f64(self.perplexity));
        r
    }
}
