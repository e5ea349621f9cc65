//! The audio-conditioned mapping network.
//!
//! Each token fuses the embedding of the previous frame's 23 codes (a sum
//! of per-attribute tables with a reserved start-of-sequence row) with a
//! linear embedding of the audio context of the frame being predicted. A
//! stack of masked attention blocks follows, and 23 independent linear
//! heads emit `D` logits each.

use crate::attention::{
    add_sinusoidal, attention_block_row, attention_block_tape, AttentionBlockParams,
    AttentionMask, BlockCache, BlockShape, BlockVars, MaskKind, RowScratch, ScoreConvention,
    SlopeScheme, BLOCK_PARAM_NAMES,
};
use crate::audio::{AudioFeatureFrame, DEFAULT_WINDOW, N_MELS};
use crate::autodiff::{Graph, Var};
use crate::codec::{AnimCode, CodecSpec, DEFAULT_D, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tensor::{self, Tensor};

pub const DEFAULT_TAU: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub tau: usize,
    pub d: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub mask: MaskKind,
    pub slopes: SlopeScheme,
    pub convention: ScoreConvention,
    /// Sinusoidal position encodings on the input tokens.
    pub positional: bool,
    /// Mel rows of audio context per frame.
    pub audio_window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tau: DEFAULT_TAU,
            d: DEFAULT_D,
            width: 128,
            heads: 4,
            layers: 4,
            ff_width: 512,
            mask: MaskKind::TemporallyBiased,
            slopes: SlopeScheme::Geometric,
            convention: ScoreConvention::Literal,
            positional: false,
            audio_window: DEFAULT_WINDOW,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.tau == 0 {
            return bad("tau must be >= 1".into());
        }
        if self.d == 0 || self.width == 0 || self.heads == 0 || self.layers == 0 || self.ff_width == 0 {
            return bad("d, width, heads, layers and ff_width must be positive".into());
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if self.audio_window % 2 == 0 {
            return bad(format!("audio window {} must be odd", self.audio_window));
        }
        if let SlopeScheme::Fixed(v) = self.slopes {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("slope {v} must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape {
            heads: self.heads,
            head_dim: self.width / self.heads,
            ff_width: self.ff_width,
        }
    }

    pub fn head_slopes(&self) -> Vec<f64> {
        match self.mask {
            MaskKind::VanillaCausal => Vec::new(),
            MaskKind::TemporallyBiased => self.slopes.slopes(self.heads),
        }
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_window * N_MELS
    }

    /// Rows in the animation embedding table: `D` codes plus the
    /// start-of-sequence row, per attribute.
    pub fn anim_vocab(&self) -> usize {
        NUM_ATTRIBUTES * (self.d + 1)
    }
}

/// Scalar standardization applied to log-mel inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AudioNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for AudioNorm {
    fn default() -> Self {
        AudioNorm { mean: 0.0, std: 1.0 }
    }
}

impl AudioNorm {
    pub fn fit(frames: &[AudioFeatureFrame]) -> Result<Self> {
        let n: usize = frames.iter().map(|f| f.mel.len()).sum();
        if n == 0 {
            return Err(Error::Empty("audio frames for normalization".into()));
        }
        let mean = frames.iter().flat_map(|f| &f.mel).sum::<f64>() / n as f64;
        let var = frames
            .iter()
            .flat_map(|f| &f.mel)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        Ok(AudioNorm {
            mean,
            std: var.sqrt().max(1e-6),
        })
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingModel {
    pub config: ModelConfig,
    pub codec: CodecSpec,
    pub audio_norm: AudioNorm,
    pub audio_w: Tensor,
    pub audio_b: Tensor,
    pub anim_embed: Tensor,
    pub blocks: Vec<AttentionBlockParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl MappingModel {
    pub fn new(config: ModelConfig, codec: CodecSpec, audio_norm: AudioNorm, seed: u64) -> Result<Self> {
        config.validate()?;
        if codec.d() != config.d {
            return Err(Error::InvalidArgument(format!(
                "codec has D={} but model expects D={}",
                codec.d(),
                config.d
            )));
        }
        let mut rng = Philox::with_stream(seed, 0x696e_6974);
        let w = config.width;
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let data = (0..rows * cols).map(|_| rng.next_normal() * std).collect();
            Tensor::matrix(rows, cols, data).expect("positive dims")
        };
        let audio_w = normal(config.audio_dim(), w, 1.0 / (config.audio_dim() as f64).sqrt());
        let anim_embed = normal(config.anim_vocab(), w, 1.0 / (NUM_ATTRIBUTES as f64).sqrt());
        let head_w = normal(w, NUM_ATTRIBUTES * config.d, 0.02);
        let mut block_rng = Philox::with_stream(seed, 0x626c_6b73);
        let blocks = (0..config.layers)
            .map(|_| AttentionBlockParams::init(config.block_shape(), &mut block_rng))
            .collect();
        Ok(MappingModel {
            audio_b: Tensor::zeros(&[w]),
            head_b: Tensor::zeros(&[NUM_ATTRIBUTES * config.d]),
            config,
            codec,
            audio_norm,
            audio_w,
            anim_embed,
            blocks,
            head_w,
        })
    }

    /// Input code for the start-of-sequence token.
    pub fn sos_code(&self) -> AnimCode {
        AnimCode([self.config.d; NUM_ATTRIBUTES])
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "audio_embed.weight".to_string(),
            "audio_embed.bias".to_string(),
            "anim_embed.weight".to_string(),
        ];
        for l in 0..self.blocks.len() {
            names.extend(BLOCK_PARAM_NAMES.iter().map(|n| format!("layers.{l}.{n}")));
        }
        names.push("heads.weight".into());
        names.push("heads.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.audio_w, &self.audio_b, &self.anim_embed];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.push(&self.head_w);
        v.push(&self.head_b);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.audio_w, &mut self.audio_b, &mut self.anim_embed];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.head_w);
        v.push(&mut self.head_b);
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Rebuilds a model from tensors in [`MappingModel::param_names`] order.
    pub fn from_params(
        config: ModelConfig,
        codec: CodecSpec,
        audio_norm: AudioNorm,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        if codec.d() != config.d {
            return Err(Error::Format("codec D differs from model D".into()));
        }
        let expected = 5 + 10 * config.layers;
        if tensors.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let audio_w = next();
        let audio_b = next();
        let anim_embed = next();
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let t: Vec<Tensor> = (0..10).map(|_| next()).collect();
            blocks.push(AttentionBlockParams::from_tensors(config.block_shape(), t)?);
        }
        let head_w = next();
        let head_b = next();
        let w = config.width;
        let checks: [(&str, &Tensor, Vec<usize>); 5] = [
            ("audio_embed.weight", &audio_w, vec![config.audio_dim(), w]),
            ("audio_embed.bias", &audio_b, vec![w]),
            ("anim_embed.weight", &anim_embed, vec![config.anim_vocab(), w]),
            ("heads.weight", &head_w, vec![w, NUM_ATTRIBUTES * config.d]),
            ("heads.bias", &head_b, vec![NUM_ATTRIBUTES * config.d]),
        ];
        for (name, t, shape) in checks {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(MappingModel {
            config,
            codec,
            audio_norm,
            audio_w,
            audio_b,
            anim_embed,
            blocks,
            head_w,
            head_b,
        })
    }

    fn check_inputs(&self, audio: &[AudioFeatureFrame], inputs: &[AnimCode]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Empty("model input".into()));
        }
        if inputs.len() > self.config.tau {
            return Err(Error::InvalidArgument(format!(
                "input length {} exceeds tau = {}",
                inputs.len(),
                self.config.tau
            )));
        }
        if audio.len() != inputs.len() {
            return Err(Error::Shape(format!(
                "{} audio frames for {} code frames",
                audio.len(),
                inputs.len()
            )));
        }
        for f in audio {
            self.check_audio_frame(f)?;
        }
        for c in inputs {
            self.check_input_code(c)?;
        }
        Ok(())
    }

    fn check_audio_frame(&self, f: &AudioFeatureFrame) -> Result<()> {
        if f.mel.len() != self.config.audio_dim() {
            return Err(Error::Shape(format!(
                "audio frame has {} values, model expects {}",
                f.mel.len(),
                self.config.audio_dim()
            )));
        }
        Ok(())
    }

    fn check_input_code(&self, c: &AnimCode) -> Result<()> {
        if let Some(&bad) = c.0.iter().find(|&&k| k > self.config.d) {
            return Err(Error::OutOfRange {
                index: bad,
                limit: self.config.d + 1,
            });
        }
        Ok(())
    }

    fn embedding_rows(&self, c: &AnimCode) -> Vec<usize> {
        let stride = self.config.d + 1;
        c.0.iter().enumerate().map(|(a, &k)| a * stride + k).collect()
    }

    /// Tape forward. `vars` must be the model parameters registered on `g`
    /// in [`MappingModel::params`] order. Returns `T′ × (23·D)` logits.
    pub fn forward_tape(
        &self,
        g: &mut Graph,
        vars: &[Var],
        audio: &[AudioFeatureFrame],
        inputs: &[AnimCode],
    ) -> Result<Var> {
        self.check_inputs(audio, inputs)?;
        let t = inputs.len();
        let cfg = &self.config;
        let audio_in: Vec<f64> = audio
            .iter()
            .flat_map(|f| f.mel.iter().map(|&v| self.audio_norm.apply(v)))
            .collect();
        let audio_in = g.constant(Tensor::matrix(t, cfg.audio_dim(), audio_in)?);
        let au = g.matmul(audio_in, vars[0])?;
        let au = g.add_bias(au, vars[1])?;
        let idx = inputs.iter().map(|c| self.embedding_rows(c)).collect();
        let an = g.embedding(vars[2], idx)?;
        let mut x = g.add(an, au)?;
        if cfg.positional {
            let mut pe = Tensor::zeros(&[t, cfg.width]);
            for (i, row) in pe.data_mut().chunks_mut(cfg.width).enumerate() {
                add_sinusoidal(row, i);
            }
            x = g.add_const(x, &pe)?;
        }
        let mask = AttentionMask::build(t, cfg.mask, &cfg.head_slopes())?;
        for l in 0..cfg.layers {
            let bv = BlockVars::from_slice(cfg.block_shape(), &vars[3 + 10 * l..13 + 10 * l]);
            x = attention_block_tape(g, x, &bv, &mask, cfg.convention)?.0;
        }
        let n = vars.len();
        let logits = g.matmul(x, vars[n - 2])?;
        g.add_bias(logits, vars[n - 1])
    }

    /// Registers all parameters on `g` as trainable leaves.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params().into_iter().map(|t| g.param(t.clone())).collect()
    }

    /// Inference forward: logits of shape `[T′, 23, D]`.
    pub fn forward(&self, audio: &[AudioFeatureFrame], inputs: &[AnimCode]) -> Result<Tensor> {
        self.check_inputs(audio, inputs)?;
        let mut dec = Decoder::new(self);
        let n = NUM_ATTRIBUTES * self.config.d;
        let mut out = Vec::with_capacity(inputs.len() * n);
        let mut row = vec![0.0; n];
        for (a, c) in audio.iter().zip(inputs) {
            dec.push(c, a)?;
            dec.logits(&mut row);
            out.extend_from_slice(&row);
        }
        Tensor::new(vec![inputs.len(), NUM_ATTRIBUTES, self.config.d], out)
    }

    /// Per-attribute categorical distributions, `[T′, 23, D]`.
    pub fn probabilities(&self, audio: &[AudioFeatureFrame], inputs: &[AnimCode]) -> Result<Tensor> {
        let mut logits = self.forward(audio, inputs)?;
        for row in logits.data_mut().chunks_mut(self.config.d) {
            tensor::softmax_row(row)?;
        }
        Ok(logits)
    }
}

/// Row-at-a-time forward with per-layer key/value caches. Rows pushed so
/// far form the current context; [`Decoder::reset`] starts a new one.
#[derive(Debug)]
pub struct Decoder<'m> {
    model: &'m MappingModel,
    slopes: Vec<f64>,
    caches: Vec<BlockCache>,
    scratch: RowScratch,
    x: Vec<f64>,
    y: Vec<f64>,
    audio_buf: Vec<f64>,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m MappingModel) -> Self {
        let w = model.config.width;
        Decoder {
            model,
            slopes: model.config.head_slopes(),
            caches: vec![BlockCache::default(); model.config.layers],
            scratch: RowScratch::default(),
            x: vec![0.0; w],
            y: vec![0.0; w],
            audio_buf: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.caches[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reset(&mut self) {
        self.caches.iter_mut().for_each(BlockCache::clear);
    }

    /// Appends one token and runs it through every layer.
    pub fn push(&mut self, code: &AnimCode, audio: &AudioFeatureFrame) -> Result<()> {
        let m = self.model;
        let cfg = &m.config;
        if self.len() >= cfg.tau {
            return Err(Error::InvalidArgument(format!("context already holds tau = {} rows", cfg.tau)));
        }
        m.check_audio_frame(audio)?;
        m.check_input_code(code)?;
        let w = cfg.width;
        let pos = self.len();

        // anim embedding: sum of table rows in attribute order
        self.x.iter_mut().for_each(|v| *v = 0.0);
        let table = m.anim_embed.data();
        for r in m.embedding_rows(code) {
            for (o, &v) in self.x.iter_mut().zip(&table[r * w..(r + 1) * w]) {
                *o += v;
            }
        }
        self.audio_buf.clear();
        self.audio_buf.extend(audio.mel.iter().map(|&v| m.audio_norm.apply(v)));
        tensor::row_matmul(&self.audio_buf, m.audio_w.data(), w, &mut self.y);
        for (v, b) in self.y.iter_mut().zip(m.audio_b.data()) {
            *v += b;
        }
        for (a, b) in self.x.iter_mut().zip(&self.y) {
            *a += b;
        }
        if cfg.positional {
            add_sinusoidal(&mut self.x, pos);
        }
        for (l, block) in m.blocks.iter().enumerate() {
            attention_block_row(
                block,
                &self.x,
                cfg.mask,
                &self.slopes,
                cfg.convention,
                &mut self.caches[l],
                &mut self.scratch,
                &mut self.y,
                None,
            )?;
            std::mem::swap(&mut self.x, &mut self.y);
        }
        Ok(())
    }

    /// Logits (`23·D`) of the most recently pushed row.
    pub fn logits(&self, out: &mut [f64]) {
        let n = NUM_ATTRIBUTES * self.model.config.d;
        tensor::row_matmul(&self.x, self.model.head_w.data(), n, out);
        for (v, b) in out.iter_mut().zip(self.model.head_b.data()) {
            *v += b;
        }
    }
}
