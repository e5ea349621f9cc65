//! Causal and temporally-biased attention masks, and the masked multi-head
//! attention + feed-forward block.
//!
//! The block is implemented twice over the same kernels: once on the
//! autodiff tape for training, once row by row with a key/value cache for
//! generation. Both produce bit-identical rows.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    VanillaCausal,
    TemporallyBiased,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::VanillaCausal => "vanilla",
            MaskKind::TemporallyBiased => "tbm",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(MaskKind::VanillaCausal),
            "tbm" => Ok(MaskKind::TemporallyBiased),
            _ => Err(Error::InvalidArgument(format!("unknown mask {s:?} (tbm|vanilla)"))),
        }
    }
}

/// Per-head slope schedule for the temporally-biased mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeScheme {
    /// `slope_h = 2^(-8h/H)` for `h = 1..=H`.
    Geometric,
    Fixed(f64),
}

impl SlopeScheme {
    pub fn slopes(&self, heads: usize) -> Vec<f64> {
        match *self {
            SlopeScheme::Geometric => (1..=heads)
                .map(|h| 2f64.powf(-8.0 * h as f64 / heads as f64))
                .collect(),
            SlopeScheme::Fixed(v) => vec![v; heads],
        }
    }
}

impl fmt::Display for SlopeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlopeScheme::Geometric => f.write_str("geometric"),
            SlopeScheme::Fixed(v) => write!(f, "fixed:{v:?}"),
        }
    }
}

impl FromStr for SlopeScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "geometric" {
            return Ok(SlopeScheme::Geometric);
        }
        if let Some(v) = s.strip_prefix("fixed:") {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad slope {v:?}")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("slope {v} must be >= 0")));
            }
            return Ok(SlopeScheme::Fixed(v));
        }
        Err(Error::InvalidArgument(format!(
            "unknown slope scheme {s:?} (geometric|fixed:<v>)"
        )))
    }
}

/// Where the mask enters relative to the `1/√N_k` scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreConvention {
    /// `(QKᵀ + M) / √N_k`
    Literal,
    /// `QKᵀ / √N_k + M`
    Additive,
}

impl fmt::Display for ScoreConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreConvention::Literal => "literal",
            ScoreConvention::Additive => "additive",
        })
    }
}

impl FromStr for ScoreConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(ScoreConvention::Literal),
            "additive" => Ok(ScoreConvention::Additive),
            _ => Err(Error::InvalidArgument(format!(
                "unknown score convention {s:?} (literal|additive)"
            ))),
        }
    }
}

/// Additive attention mask. Future positions are `-inf`; past positions
/// carry `-slope_h · (i − j)` for the biased kind and `0` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    t: usize,
    kind: MaskKind,
    slopes: Vec<f64>,
}

impl AttentionMask {
    pub fn build(t: usize, kind: MaskKind, slopes: &[f64]) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidArgument("mask length must be >= 1".into()));
        }
        if let Some(s) = slopes.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("slope {s} must be >= 0")));
        }
        let slopes = match kind {
            MaskKind::VanillaCausal => Vec::new(),
            MaskKind::TemporallyBiased => {
                if slopes.is_empty() {
                    return Err(Error::InvalidArgument(
                        "temporally-biased mask needs one slope per head".into(),
                    ));
                }
                slopes.to_vec()
            }
        };
        Ok(AttentionMask { t, kind, slopes })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Number of heads the mask is defined for; vanilla masks serve any.
    pub fn heads(&self) -> Option<usize> {
        match self.kind {
            MaskKind::VanillaCausal => None,
            MaskKind::TemporallyBiased => Some(self.slopes.len()),
        }
    }

    /// Mask value for query `i`, key `j` under head `h`.
    #[inline]
    pub fn entry(&self, h: usize, i: usize, j: usize) -> f64 {
        mask_entry(self.kind, &self.slopes, h, i, j)
    }

    pub fn matrix(&self, h: usize) -> Tensor {
        let t = self.t;
        let mut data = Vec::with_capacity(t * t);
        for i in 0..t {
            for j in 0..t {
                data.push(self.entry(h, i, j));
            }
        }
        Tensor::matrix(t, t, data).expect("square mask")
    }
}

#[inline]
fn mask_entry(kind: MaskKind, slopes: &[f64], h: usize, i: usize, j: usize) -> f64 {
    if j > i {
        f64::NEG_INFINITY
    } else {
        match kind {
            MaskKind::VanillaCausal => 0.0,
            // subtracting from +0.0 keeps slope 0 bitwise equal to the vanilla mask
            MaskKind::TemporallyBiased => 0.0 - slopes[h] * (i - j) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub heads: usize,
    pub head_dim: usize,
    pub ff_width: usize,
}

impl BlockShape {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Parameters of one attention + feed-forward block. Projections are
/// `width × width` without bias; the feed-forward is
/// `W2 · GELU(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlockParams {
    pub shape: BlockShape,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
}

/// Field order used by [`AttentionBlockParams::tensors`] and checkpoints.
pub const BLOCK_PARAM_NAMES: [&str; 10] = [
    "attn.wq", "attn.wk", "attn.wv", "attn.wo", "ln.gamma", "ln.beta", "ff.w1", "ff.b1", "ff.w2",
    "ff.b2",
];

impl AttentionBlockParams {
    pub fn init(shape: BlockShape, rng: &mut Philox) -> Self {
        let w = shape.width();
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let data = (0..rows * cols).map(|_| rng.next_normal() * std).collect();
            Tensor::matrix(rows, cols, data).expect("positive dims")
        };
        let proj = 1.0 / (w as f64).sqrt();
        AttentionBlockParams {
            shape,
            wq: normal(w, w, proj),
            wk: normal(w, w, proj),
            wv: normal(w, w, proj),
            wo: normal(w, w, proj),
            ln_gamma: Tensor::filled(&[w], 1.0),
            ln_beta: Tensor::zeros(&[w]),
            ff_w1: normal(w, shape.ff_width, proj),
            ff_b1: Tensor::zeros(&[shape.ff_width]),
            ff_w2: normal(shape.ff_width, w, 1.0 / (shape.ff_width as f64).sqrt()),
            ff_b2: Tensor::zeros(&[w]),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.wq, &self.wk, &self.wv, &self.wo, &self.ln_gamma, &self.ln_beta, &self.ff_w1,
            &self.ff_b1, &self.ff_w2, &self.ff_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.ln_gamma,
            &mut self.ln_beta,
            &mut self.ff_w1,
            &mut self.ff_b1,
            &mut self.ff_w2,
            &mut self.ff_b2,
        ]
    }

    pub fn from_tensors(shape: BlockShape, t: Vec<Tensor>) -> Result<Self> {
        let [wq, wk, wv, wo, ln_gamma, ln_beta, ff_w1, ff_b1, ff_w2, ff_b2]: [Tensor; 10] = t
            .try_into()
            .map_err(|_| Error::Shape("attention block needs 10 tensors".into()))?;
        let p = AttentionBlockParams {
            shape,
            wq,
            wk,
            wv,
            wo,
            ln_gamma,
            ln_beta,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.shape.width();
        let f = self.shape.ff_width;
        let expect: [&[usize]; 10] = [
            &[w, w], &[w, w], &[w, w], &[w, w], &[w], &[w], &[w, f], &[f], &[f, w], &[w],
        ];
        for ((t, e), name) in self.tensors().iter().zip(expect).zip(BLOCK_PARAM_NAMES) {
            if t.shape() != e {
                return Err(Error::Shape(format!(
                    "{name}: expected {e:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn to_vars(&self, g: &mut Graph) -> BlockVars {
        let v: Vec<Var> = self.tensors().iter().map(|t| g.param((*t).clone())).collect();
        BlockVars::from_slice(self.shape, &v)
    }
}

/// Tape handles for one block's parameters, in [`BLOCK_PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub shape: BlockShape,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
}

impl BlockVars {
    pub fn from_slice(shape: BlockShape, v: &[Var]) -> Self {
        BlockVars {
            shape,
            wq: v[0],
            wk: v[1],
            wv: v[2],
            wo: v[3],
            ln_gamma: v[4],
            ln_beta: v[5],
            ff_w1: v[6],
            ff_b1: v[7],
            ff_w2: v[8],
            ff_b2: v[9],
        }
    }
}

fn check_mask(mask: &AttentionMask, t: usize, heads: usize) -> Result<()> {
    if mask.len() != t {
        return Err(Error::Shape(format!("mask is {0}x{0}, input has {t} rows", mask.len())));
    }
    if let Some(h) = mask.heads() {
        if h != heads {
            return Err(Error::Shape(format!("mask has {h} slopes for {heads} heads")));
        }
    }
    Ok(())
}

/// Block forward on the tape. Returns `(output, per-head attention weights)`.
pub fn attention_block_tape(
    g: &mut Graph,
    x: Var,
    p: &BlockVars,
    mask: &AttentionMask,
    convention: ScoreConvention,
) -> Result<(Var, Vec<Var>)> {
    let shape = p.shape;
    let (t, width) = (g.value(x).rows(), g.value(x).cols());
    if width != shape.width() {
        return Err(Error::Shape(format!(
            "input width {width} != heads·head_dim {}",
            shape.width()
        )));
    }
    check_mask(mask, t, shape.heads)?;
    let q = g.matmul(x, p.wq)?;
    let k = g.matmul(x, p.wk)?;
    let v = g.matmul(x, p.wv)?;
    let inv_sqrt = 1.0 / (shape.head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(shape.heads);
    let mut weights = Vec::with_capacity(shape.heads);
    for h in 0..shape.heads {
        let off = h * shape.head_dim;
        let qh = g.slice_cols(q, off, shape.head_dim)?;
        let kh = g.slice_cols(k, off, shape.head_dim)?;
        let vh = g.slice_cols(v, off, shape.head_dim)?;
        let s = g.matmul_nt(qh, kh)?;
        let m = mask.matrix(h);
        let s = match convention {
            ScoreConvention::Literal => {
                let s = g.add_const(s, &m)?;
                g.scale(s, inv_sqrt)?
            }
            ScoreConvention::Additive => {
                let s = g.scale(s, inv_sqrt)?;
                g.add_const(s, &m)?
            }
        };
        let a = g.softmax_rows(s)?;
        weights.push(a);
        heads.push(g.matmul(a, vh)?);
    }
    let cat = g.concat_cols(&heads)?;
    let o = g.matmul(cat, p.wo)?;
    let r = g.add(x, o)?;
    let y = g.layer_norm(r, p.ln_gamma, p.ln_beta)?;
    let f = g.matmul(y, p.ff_w1)?;
    let f = g.add_bias(f, p.ff_b1)?;
    let f = g.gelu(f)?;
    let f = g.matmul(f, p.ff_w2)?;
    let f = g.add_bias(f, p.ff_b2)?;
    Ok((g.add(y, f)?, weights))
}

/// Cached keys and values of the rows processed so far.
#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    keys: Vec<f64>,
    values: Vec<f64>,
    rows: usize,
}

impl BlockCache {
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn clear(&mut self) {
        self.keys.clear();
        self.values.clear();
        self.rows = 0;
    }
}

/// Scratch buffers reused across rows.
#[derive(Debug, Default)]
pub struct RowScratch {
    q: Vec<f64>,
    kv: Vec<f64>,
    scores: Vec<f64>,
    cat: Vec<f64>,
    head_out: Vec<f64>,
    o: Vec<f64>,
    r: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
}

/// Forward of the next row `i = cache.len()` given its input `x`. Appends
/// the row's key and value to `cache` and writes the block output to `out`.
/// When `weights_out` is given it receives each head's attention row.
pub fn attention_block_row(
    p: &AttentionBlockParams,
    x: &[f64],
    mask_kind: MaskKind,
    slopes: &[f64],
    convention: ScoreConvention,
    cache: &mut BlockCache,
    scratch: &mut RowScratch,
    out: &mut [f64],
    mut weights_out: Option<&mut Vec<Vec<f64>>>,
) -> Result<()> {
    let shape = p.shape;
    let w = shape.width();
    let dk = shape.head_dim;
    if x.len() != w || out.len() != w {
        return Err(Error::Shape(format!("row width {} != {w}", x.len())));
    }
    if mask_kind == MaskKind::TemporallyBiased && slopes.len() != shape.heads {
        return Err(Error::Shape(format!(
            "{} slopes for {} heads",
            slopes.len(),
            shape.heads
        )));
    }
    let s = scratch;
    let i = cache.rows;
    s.q.resize(w, 0.0);
    s.kv.resize(w, 0.0);
    tensor::row_matmul(x, p.wq.data(), w, &mut s.q);
    tensor::row_matmul(x, p.wk.data(), w, &mut s.kv);
    cache.keys.extend_from_slice(&s.kv);
    tensor::row_matmul(x, p.wv.data(), w, &mut s.kv);
    cache.values.extend_from_slice(&s.kv);
    cache.rows += 1;

    let inv_sqrt = 1.0 / (dk as f64).sqrt();
    s.cat.clear();
    s.cat.resize(w, 0.0);
    for h in 0..shape.heads {
        let off = h * dk;
        let qh = &s.q[off..off + dk];
        s.scores.clear();
        for j in 0..=i {
            let kh = &cache.keys[j * w + off..j * w + off + dk];
            let dot = tensor::dot(qh, kh);
            let m = mask_entry(mask_kind, slopes, h, i, j);
            s.scores.push(match convention {
                ScoreConvention::Literal => (dot + m) * inv_sqrt,
                ScoreConvention::Additive => dot * inv_sqrt + m,
            });
        }
        tensor::softmax_row(&mut s.scores)?;
        s.head_out.clear();
        s.head_out.resize(dk, 0.0);
        for (j, &a) in s.scores.iter().enumerate() {
            tensor::axpy(&mut s.head_out, a, &cache.values[j * w + off..j * w + off + dk]);
        }
        s.cat[off..off + dk].copy_from_slice(&s.head_out);
        if let Some(wo) = weights_out.as_deref_mut() {
            wo.push(s.scores.clone());
        }
    }
    s.o.resize(w, 0.0);
    tensor::row_matmul(&s.cat, p.wo.data(), w, &mut s.o);
    s.r.resize(w, 0.0);
    for j in 0..w {
        s.r[j] = x[j] + s.o[j];
    }
    tensor::layer_norm_row(&s.r, p.ln_gamma.data(), p.ln_beta.data(), out);
    let fw = shape.ff_width;
    s.f1.resize(fw, 0.0);
    tensor::row_matmul(out, p.ff_w1.data(), fw, &mut s.f1);
    for (v, b) in s.f1.iter_mut().zip(p.ff_b1.data()) {
        *v = tensor::gelu(*v + b);
    }
    s.f2.resize(w, 0.0);
    tensor::row_matmul(&s.f1, p.ff_w2.data(), w, &mut s.f2);
    for j in 0..w {
        out[j] += s.f2[j] + p.ff_b2.data()[j];
    }
    Ok(())
}

/// Inference forward over a whole `T × width` input. Returns the output
/// rows and per-head attention weight matrices (`T × T`, zeros above the
/// diagonal).
pub fn attention_block(
    x: &Tensor,
    p: &AttentionBlockParams,
    mask: &AttentionMask,
    convention: ScoreConvention,
) -> Result<(Tensor, Vec<Tensor>)> {
    let t = x.rows();
    let w = p.shape.width();
    if x.cols() != w {
        return Err(Error::Shape(format!("input width {} != {w}", x.cols())));
    }
    check_mask(mask, t, p.shape.heads)?;
    let mut cache = BlockCache::default();
    let mut scratch = RowScratch::default();
    let mut out = vec![0.0; t * w];
    let mut weights = vec![vec![0.0; t * t]; p.shape.heads];
    let mut row_w = Vec::new();
    for i in 0..t {
        row_w.clear();
        attention_block_row(
            p,
            x.row(i),
            mask.kind(),
            mask.slopes(),
            convention,
            &mut cache,
            &mut scratch,
            &mut out[i * w..(i + 1) * w],
            Some(&mut row_w),
        )?;
        for (h, r) in row_w.iter().enumerate() {
            weights[h][i * t..i * t + r.len()].copy_from_slice(r);
        }
    }
    let weights = weights
        .into_iter()
        .map(|d| Tensor::matrix(t, t, d))
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::matrix(t, w, out)?, weights))
}

/// Fixed sinusoidal position encoding for position `pos`, added in place.
pub fn add_sinusoidal(row: &mut [f64], pos: usize) {
    let w = row.len();
    for (k, v) in row.iter_mut().enumerate() {
        let i = (k / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / w as f64);
        *v += if k % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_block(seed: u64) -> AttentionBlockParams {
        let shape = BlockShape {
            heads: 2,
            head_dim: 3,
            ff_width: 8,
        };
        AttentionBlockParams::init(shape, &mut Philox::new(seed))
    }

    fn random_input(seed: u64, t: usize, w: usize) -> Tensor {
        let mut g = Philox::new(seed);
        Tensor::matrix(t, w, (0..t * w).map(|_| g.next_normal()).collect()).unwrap()
    }

    #[test]
    fn single_frame_mask() {
        for kind in [MaskKind::VanillaCausal, MaskKind::TemporallyBiased] {
            let m = AttentionMask::build(1, kind, &[0.3]).unwrap();
            assert_eq!(m.matrix(0).data(), &[0.0]);
        }
    }

    #[test]
    fn biased_row_instantiation() {
        let m = AttentionMask::build(3, MaskKind::TemporallyBiased, &[0.5]).unwrap();
        let mat = m.matrix(0);
        assert_eq!(mat.row(2), &[-1.0, -0.5, 0.0]);
        assert_eq!(mat.row(0)[1], f64::NEG_INFINITY);
        assert_eq!(mat.row(1)[2], f64::NEG_INFINITY);
    }

    #[test]
    fn future_is_always_masked() {
        for t in 2..6 {
            for kind in [MaskKind::VanillaCausal, MaskKind::TemporallyBiased] {
                let m = AttentionMask::build(t, kind, &[0.1, 2.0]).unwrap();
                for h in 0..2 {
                    assert_eq!(m.entry(h, 0, 1), f64::NEG_INFINITY);
                }
            }
        }
    }

    #[test]
    fn negative_slope_rejected() {
        assert!(AttentionMask::build(3, MaskKind::TemporallyBiased, &[-0.1]).is_err());
        assert!(AttentionMask::build(0, MaskKind::VanillaCausal, &[]).is_err());
        assert!("fixed:-1".parse::<SlopeScheme>().is_err());
    }

    #[test]
    fn geometric_slopes() {
        let s = SlopeScheme::Geometric.slopes(4);
        assert_eq!(s, vec![0.25, 0.0625, 0.015625, 0.00390625]);
        assert_eq!("fixed:0.5".parse::<SlopeScheme>().unwrap(), SlopeScheme::Fixed(0.5));
        assert_eq!(SlopeScheme::Fixed(0.5).to_string(), "fixed:0.5");
    }

    #[test]
    fn tape_and_row_paths_agree() {
        let p = small_block(1);
        let x = random_input(2, 7, 6);
        for kind in [MaskKind::VanillaCausal, MaskKind::TemporallyBiased] {
            for conv in [ScoreConvention::Literal, ScoreConvention::Additive] {
                let mask = AttentionMask::build(7, kind, &[0.3, 0.05]).unwrap();
                let (rows, w_rows) = attention_block(&x, &p, &mask, conv).unwrap();
                let mut g = Graph::new();
                let vars = p.to_vars(&mut g);
                let xv = g.constant(x.clone());
                let (y, w_tape) = attention_block_tape(&mut g, xv, &vars, &mask, conv).unwrap();
                assert_eq!(g.value(y), &rows);
                for h in 0..2 {
                    assert_eq!(g.value(w_tape[h]), &w_rows[h]);
                }
            }
        }
    }

    #[test]
    fn t1_attends_to_itself() {
        let p = small_block(3);
        let x = random_input(4, 1, 6);
        let mask = AttentionMask::build(1, MaskKind::TemporallyBiased, &[0.3, 0.1]).unwrap();
        let (_, w) = attention_block(&x, &p, &mask, ScoreConvention::Literal).unwrap();
        assert_eq!(w[0].data(), &[1.0]);
    }

    #[test]
    fn mask_length_mismatch_errors() {
        let p = small_block(5);
        let x = random_input(6, 4, 6);
        let mask = AttentionMask::build(3, MaskKind::VanillaCausal, &[]).unwrap();
        assert!(attention_block(&x, &p, &mask, ScoreConvention::Literal).is_err());
        let mask = AttentionMask::build(4, MaskKind::TemporallyBiased, &[0.1]).unwrap();
        assert!(attention_block(&x, &p, &mask, ScoreConvention::Literal).is_err());
    }
}
