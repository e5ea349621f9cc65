//! Teacher-forced training over sliding windows of at most `τ` frames.

use crate::audio::AudioFeatureFrame;
use crate::autodiff::Graph;
use crate::codec::{AnimCode, CodecSpec, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::model::{Decoder, MappingModel};
use crate::optim::{Adam, AdamConfig};
use crate::rng::Philox;
use crate::sampler::AnimSequence;
use crate::tensor;

/// One training window. `inputs[j]` is the code of the frame before
/// `targets[j]` (or the start-of-sequence code), and `audio[j]` is the
/// audio context of the frame `targets[j]` describes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub audio: Vec<AudioFeatureFrame>,
    pub inputs: Vec<AnimCode>,
    pub targets: Vec<AnimCode>,
    /// Index of the frame `targets[0]` refers to.
    pub first_target: usize,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Default stride between consecutive windows: `max(1, τ / 2)`.
pub fn default_stride(tau: usize) -> usize {
    (tau / 2).max(1)
}

/// Cuts a sequence into windows of `w = min(τ, len − 1)` targets.
///
/// Windows target frames `[s, s + w)` for `s = 0, stride, 2·stride, …` while
/// `s + w ≤ len`, plus a final window ending at the last frame when the
/// stride does not land there. The window at `s = 0` is fed the
/// start-of-sequence code in place of the (nonexistent) previous frame.
pub fn make_training_windows(
    anim: &AnimSequence,
    audio: &[AudioFeatureFrame],
    codec: &CodecSpec,
    tau: usize,
    stride: usize,
) -> Result<Vec<TrainingBatch>> {
    let codes = anim
        .frames
        .iter()
        .map(|v| codec.quantize(v))
        .collect::<Result<Vec<_>>>()?;
    windows_from_codes(&codes, audio, codec.d(), tau, stride)
}

pub fn windows_from_codes(
    codes: &[AnimCode],
    audio: &[AudioFeatureFrame],
    d: usize,
    tau: usize,
    stride: usize,
) -> Result<Vec<TrainingBatch>> {
    let len = codes.len();
    if len < 2 {
        return Err(Error::InvalidArgument(format!(
            "sequence of {len} frames is too short to train on"
        )));
    }
    if audio.len() != len {
        return Err(Error::FrameMismatch {
            clip: "training sequence".into(),
            anim: len,
            audio: audio.len(),
        });
    }
    if tau == 0 || stride == 0 {
        return Err(Error::InvalidArgument("tau and stride must be positive".into()));
    }
    let w = tau.min(len - 1);
    let mut starts: Vec<usize> = (0..=len - w).step_by(stride).collect();
    if *starts.last().expect("non-empty") != len - w {
        starts.push(len - w);
    }
    let sos = AnimCode([d; NUM_ATTRIBUTES]);
    Ok(starts
        .into_iter()
        .map(|s| {
            let inputs = if s == 0 {
                std::iter::once(sos).chain(codes[..w - 1].iter().copied()).collect()
            } else {
                codes[s - 1..s + w - 1].to_vec()
            };
            TrainingBatch {
                audio: audio[s..s + w].to_vec(),
                inputs,
                targets: codes[s..s + w].to_vec(),
                first_target: s,
            }
        })
        .collect())
}

fn flat_targets(batch: &TrainingBatch) -> Vec<usize> {
    batch.targets.iter().flat_map(|c| c.0).collect()
}

/// Mean cross-entropy (nats per attribute per step) under teacher forcing,
/// via the inference path.
pub fn batch_loss(model: &MappingModel, batch: &TrainingBatch) -> Result<f64> {
    let (sum, n) = batch_nll(model, batch)?;
    Ok(sum / n as f64)
}

/// Summed negative log-likelihood and the number of terms.
pub fn batch_nll(model: &MappingModel, batch: &TrainingBatch) -> Result<(f64, usize)> {
    let d = model.config.d;
    if batch.inputs.len() != batch.targets.len() {
        return Err(Error::Shape("inputs and targets differ in length".into()));
    }
    let mut dec = Decoder::new(model);
    let mut logits = vec![0.0; NUM_ATTRIBUTES * d];
    let mut total = 0.0;
    for ((a, c), t) in batch.audio.iter().zip(&batch.inputs).zip(&batch.targets) {
        dec.push(c, a)?;
        dec.logits(&mut logits);
        for (row, &k) in logits.chunks(d).zip(&t.0) {
            if k >= d {
                return Err(Error::OutOfRange { index: k, limit: d });
            }
            total += tensor::log_sum_exp(row) - row[k];
        }
    }
    Ok((total, batch.len() * NUM_ATTRIBUTES))
}

/// Default bound on the global gradient norm.
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MappingModel,
    optimizer: Adam,
    clip_norm: Option<f64>,
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Vec<f64>>], max: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

impl Trainer {
    /// Trainer with gradient clipping at [`DEFAULT_CLIP_NORM`].
    pub fn new(model: MappingModel, config: AdamConfig) -> Self {
        let optimizer = Adam::new(config, model.params());
        Trainer {
            model,
            optimizer,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }

    /// `None` disables clipping.
    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.optimizer.steps_taken()
    }

    /// Loss and parameter gradients for one batch without updating.
    pub fn loss_and_grads(model: &MappingModel, batch: &TrainingBatch) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut g = Graph::new();
        let vars = model.register(&mut g);
        let logits = model.forward_tape(&mut g, &vars, &batch.audio, &batch.inputs)?;
        let d = model.config.d;
        let rows = batch.len() * NUM_ATTRIBUTES;
        let logits = g.reshape(logits, vec![rows, d])?;
        let loss = g.cross_entropy(logits, &flat_targets(batch))?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss {value}")));
        }
        let mut grads = g.backward(loss)?;
        Ok((value, vars.into_iter().map(|v| grads.take(v)).collect()))
    }

    /// One Adam step on `batch`; returns the pre-update loss.
    pub fn train_step(&mut self, batch: &TrainingBatch) -> Result<f64> {
        let (loss, mut grads) = Self::loss_and_grads(&self.model, batch)?;
        if let Some(max) = self.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        self.optimizer.step(self.model.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Runs `steps` updates, visiting windows in a seeded shuffled order
    /// that is redrawn each pass. Returns the per-step losses.
    pub fn fit(&mut self, windows: &[TrainingBatch], steps: usize, seed: u64) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Err(Error::Empty("training windows".into()));
        }
        let mut rng = Philox::with_stream(seed, 0x7368_7566);
        let mut order: Vec<usize> = Vec::new();
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            if order.is_empty() {
                order = (0..windows.len()).collect();
                for i in (1..order.len()).rev() {
                    let j = rng.below(i + 1);
                    order.swap(i, j);
                }
            }
            let w = order.pop().expect("refilled");
            losses.push(self.train_step(&windows[w])?);
        }
        Ok(losses)
    }
}
