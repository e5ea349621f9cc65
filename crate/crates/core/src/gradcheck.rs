//! Central finite-difference gradient checking against the tape.

use crate::attention::{
    attention_block_tape, AttentionBlockParams, AttentionMask, BlockShape, BlockVars, MaskKind,
    ScoreConvention, SlopeScheme,
};
use crate::audio::{AudioFeatureFrame, N_MELS};
use crate::autodiff::{Graph, Var};
use crate::codec::{AnimCode, CodecSpec, NUM_ATTRIBUTES};
use crate::model::{AudioNorm, MappingModel, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::Philox;
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; tensors at or below this
    /// size are checked exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            coords_per_param: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordinateCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if g.value(loss).len() != 1 {
        return Err(Error::Shape("grad_check needs a scalar function".into()));
    }
    Ok((g, vars, loss))
}

/// Compares the tape gradient of the scalar `f` with
/// `(f(x+h) − f(x−h)) / 2h` on a seeded subsample of coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&cfg.step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            cfg.step
        )));
    }
    let (g, vars, loss) = evaluate(&f, params)?;
    let grads = g.backward(loss)?;
    let mut rng = Philox::with_stream(cfg.seed, 0x6772_6164);

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]);
        let coords: Vec<usize> = if p.len() <= cfg.coords_per_param {
            (0..p.len()).collect()
        } else {
            (0..cfg.coords_per_param).map(|_| rng.below(p.len())).collect()
        };
        for idx in coords {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + cfg.step;
            let (gp, _, lp) = evaluate(&f, &work)?;
            work[pi].data_mut()[idx] = orig - cfg.step;
            let (gm, _, lm) = evaluate(&f, &work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * cfg.step);
            let rel = relative_error(analytic[idx], numeric);
            report.checked += 1;
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(CoordinateCheck {
                    param: pi,
                    index: idx,
                    analytic: analytic[idx],
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Checks the full mapping-model loss on a random `len`-step window with
/// a start-of-sequence first input. Attribute ranges are `[0, 1]` and
/// audio features are standard normal.
pub fn model_grad_check(
    config: ModelConfig,
    len: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let codec = CodecSpec::new(config.d, [(0.0, 1.0); NUM_ATTRIBUTES])?;
    let model = MappingModel::new(config, codec, AudioNorm::default(), seed)?;
    let mut rng = Philox::with_stream(seed, 0x6d6f_6463);
    let width = model.config.audio_window;
    let audio: Vec<AudioFeatureFrame> = (0..len)
        .map(|i| AudioFeatureFrame {
            frame_index: i,
            mel: (0..width * N_MELS).map(|_| rng.next_normal()).collect(),
            window: width,
            log_scaled: true,
        })
        .collect();
    let d = model.config.d;
    let mut random_code = || {
        let mut c = [0; NUM_ATTRIBUTES];
        c.iter_mut().for_each(|k| *k = rng.below(d));
        AnimCode(c)
    };
    let mut inputs: Vec<AnimCode> = (0..len).map(|_| random_code()).collect();
    inputs[0] = model.sos_code();
    let targets: Vec<usize> = (0..len).flat_map(|_| random_code().0).collect();
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    grad_check(
        |g, vars| {
            let logits = model.forward_tape(g, vars, &audio, &inputs)?;
            let logits = g.reshape(logits, vec![len * NUM_ATTRIBUTES, d])?;
            g.cross_entropy(logits, &targets)
        },
        &params,
        cfg,
    )
}

/// Reduces `y` to a scalar through a fixed pseudo-random weighting, so
/// every output coordinate contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, y: Var, salt: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let n = g.value(y).len();
    let mut rng = Philox::with_stream(salt, 0x7773_756d);
    let w = Tensor::new(shape, (0..n).map(|_| rng.next_normal()).collect())?;
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn random_matrix(rng: &mut Philox, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * rng.next_normal()).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Grad checks for every differentiable tape op plus one attention block
/// under each mask kind. Returns `(op name, report)` pairs.
pub fn op_suite(cfg: &GradCheckConfig) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = Philox::with_stream(cfg.seed, 0x6f70_7321);
    let a = random_matrix(&mut rng, 3, 4, 1.0);
    let b = random_matrix(&mut rng, 4, 5, 1.0);
    let c = random_matrix(&mut rng, 3, 4, 1.0);
    let row = random_matrix(&mut rng, 1, 4, 1.0);
    // keep relu inputs away from the kink at 0
    let away: Vec<f64> = (0..12)
        .map(|_| {
            let v = rng.next_normal();
            v.signum() * (v.abs() + 0.1)
        })
        .collect();
    let away = Tensor::matrix(3, 4, away)?;
    let table = random_matrix(&mut rng, 6, 4, 1.0);
    let mask_const = random_matrix(&mut rng, 3, 4, 1.0);
    let targets = vec![1usize, 3, 0];

    let mut cases: Vec<(&'static str, Vec<Tensor>, OpFn)> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 1)
        })),
        ("matmul_nt", vec![a.clone(), c.clone()], Box::new(|g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            weighted_sum(g, y, 2)
        })),
        ("add", vec![a.clone(), c.clone()], Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, 3)
        })),
        ("add_bias", vec![a.clone(), row.clone()], Box::new(|g, v| {
            let y = g.add_bias(v[0], v[1])?;
            weighted_sum(g, y, 4)
        })),
        ("add_const", vec![a.clone()], Box::new(move |g, v| {
            let y = g.add_const(v[0], &mask_const)?;
            weighted_sum(g, y, 5)
        })),
        ("scale", vec![a.clone()], Box::new(|g, v| {
            let y = g.scale(v[0], -0.7)?;
            weighted_sum(g, y, 6)
        })),
        ("mul", vec![a.clone(), c.clone()], Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, 7)
        })),
        ("slice_cols", vec![a.clone()], Box::new(|g, v| {
            let y = g.slice_cols(v[0], 1, 2)?;
            weighted_sum(g, y, 8)
        })),
        ("concat_cols", vec![a.clone(), c.clone()], Box::new(|g, v| {
            let y = g.concat_cols(&[v[0], v[1], v[0]])?;
            weighted_sum(g, y, 9)
        })),
        ("layer_norm", vec![a.clone(), row.clone(), row.clone()], Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(g, y, 10)
        })),
        ("gelu", vec![a.clone()], Box::new(|g, v| {
            let y = g.gelu(v[0])?;
            weighted_sum(g, y, 11)
        })),
        ("relu", vec![away], Box::new(|g, v| {
            let y = g.relu(v[0])?;
            weighted_sum(g, y, 12)
        })),
        ("softmax_rows", vec![a.clone()], Box::new(|g, v| {
            let y = g.softmax_rows(v[0])?;
            weighted_sum(g, y, 13)
        })),
        ("embedding", vec![table], Box::new(|g, v| {
            let y = g.embedding(v[0], vec![vec![0, 2], vec![5], vec![2, 2, 1]])?;
            weighted_sum(g, y, 14)
        })),
        ("reshape", vec![a.clone()], Box::new(|g, v| {
            let y = g.reshape(v[0], vec![2, 6])?;
            weighted_sum(g, y, 15)
        })),
        ("cross_entropy", vec![a.clone()], Box::new(move |g, v| g.cross_entropy(v[0], &targets))),
        ("sum", vec![a], Box::new(|g, v| g.sum(v[0]))),
    ];

    let shape = BlockShape { heads: 2, head_dim: 3, ff_width: 8 };
    let t = 5;
    for (name, kind) in [
        ("attention_block_vanilla", MaskKind::VanillaCausal),
        ("attention_block_tbm", MaskKind::TemporallyBiased),
    ] {
        let block = AttentionBlockParams::init(shape, &mut rng);
        let mut params = vec![random_matrix(&mut rng, t, shape.width(), 1.0)];
        params.extend(block.tensors().into_iter().cloned());
        let mask = AttentionMask::build(t, kind, &SlopeScheme::Geometric.slopes(shape.heads))?;
        cases.push((name, params, Box::new(move |g, v| {
            let p = BlockVars::from_slice(shape, &v[1..]);
            let (y, _) = attention_block_tape(g, v[0], &p, &mask, ScoreConvention::Literal)?;
            weighted_sum(g, y, 16)
        })));
    }

    cases
        .into_iter()
        .map(|(name, params, f)| Ok((name, grad_check(f, &params, cfg)?)))
        .collect()
}
