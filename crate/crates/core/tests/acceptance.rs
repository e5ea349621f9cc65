//! Acceptance suite. Each criterion prints one `criterion N: PASS|FAIL`
//! line with its measurements and wall time.
//!
//! Run headless with
//! `cargo test --release -p audio2anim --test acceptance -- --nocapture`.
//!
//! Criteria run one at a time behind a shared lock so wall times are not
//! inflated by each other. Criteria 6 and 8 share one set of trained
//! models; its training time is charged to both budgets.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use audio2anim::attention::{
    attention_block, AttentionBlockParams, AttentionMask, BlockShape, MaskKind, ScoreConvention,
    SlopeScheme,
};
use audio2anim::audio::{
    self, mel_band_centers, mel_edges, mel_spectrogram, num_mel_steps, AudioClip,
    AudioFeatureFrame, HOP, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE,
};
use audio2anim::checkpoint;
use audio2anim::codec::{
    AnimCode, AnimVector, CodecSpec, BLINK_ATTRIBUTE, DEFAULT_D, DEFAULT_MARGIN, NUM_ATTRIBUTES,
};
use audio2anim::data::{generate_synthetic, pair_clip, LoadedClip, SyntheticSpec};
use audio2anim::gradcheck::{model_grad_check, op_suite, GradCheckConfig};
use audio2anim::metrics::{self, eye_blink_rate, heldout_perplexity, BlinkThresholds};
use audio2anim::model::{AudioNorm, MappingModel, ModelConfig};
use audio2anim::optim::AdamConfig;
use audio2anim::rng::Philox;
use audio2anim::sampler::{generate, mean_pairwise_disagreement, SamplerConfig};
use audio2anim::sweep::{run_d_sweep, SWEEP_DS};
use audio2anim::tensor::Tensor;
use audio2anim::train::{batch_loss, default_stride, make_training_windows, Trainer, TrainingBatch};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

struct Check {
    passed: bool,
    detail: String,
}

impl Check {
    fn new() -> Self {
        Check { passed: true, detail: String::new() }
    }

    fn expect(&mut self, ok: bool, what: impl AsRef<str>) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(what.as_ref());
        if !ok {
            self.detail.push_str(" [failed]");
            self.passed = false;
        }
    }
}

/// Prints the criterion line and fails the test when a property or the
/// time budget is missed.
fn finish(n: u32, name: &str, mut check: Check, elapsed: Duration, budget: Duration) {
    let secs = elapsed.as_secs_f64();
    check.expect(elapsed < budget, format!("{secs:.1}s of {}s budget", budget.as_secs()));
    println!(
        "criterion {n}: {} {name}: {}",
        if check.passed { "PASS" } else { "FAIL" },
        check.detail
    );
    assert!(check.passed, "criterion {n} ({name}) failed: {}", check.detail);
}

fn synthetic_clip(seed: u64, duration: f64) -> LoadedClip {
    let spec = SyntheticSpec { seed, duration, ..Default::default() };
    let clip = generate_synthetic(&spec).expect("synthetic clip");
    pair_clip(&format!("synthetic-{seed}"), &clip.audio, clip.animation, audio::DEFAULT_WINDOW)
        .expect("aligned clip")
}

fn frames_of(clips: &[LoadedClip]) -> Vec<AnimVector> {
    clips.iter().flat_map(|c| c.animation.frames.iter().copied()).collect()
}

fn audio_of(clips: &[LoadedClip]) -> Vec<AudioFeatureFrame> {
    clips.iter().flat_map(|c| c.audio.iter().cloned()).collect()
}

fn windows_of(clips: &[LoadedClip], codec: &CodecSpec, tau: usize, stride: usize) -> Vec<TrainingBatch> {
    clips
        .iter()
        .flat_map(|c| make_training_windows(&c.animation, &c.audio, codec, tau, stride).expect("windows"))
        .collect()
}

fn random_audio(rng: &mut Philox, len: usize, window: usize) -> Vec<AudioFeatureFrame> {
    (0..len)
        .map(|i| AudioFeatureFrame {
            frame_index: i,
            mel: (0..window * N_MELS).map(|_| -4.0 + 2.0 * rng.next_normal()).collect(),
            window,
            log_scaled: true,
        })
        .collect()
}

fn random_codes(rng: &mut Philox, len: usize, d: usize) -> Vec<AnimCode> {
    (0..len)
        .map(|_| {
            let mut c = [0; NUM_ATTRIBUTES];
            c.iter_mut().for_each(|k| *k = rng.below(d));
            AnimCode(c)
        })
        .collect()
}

fn small_model(mask: MaskKind, seed: u64) -> MappingModel {
    let config = ModelConfig {
        tau: 16,
        d: 20,
        width: 32,
        heads: 4,
        layers: 2,
        ff_width: 64,
        mask,
        ..Default::default()
    };
    let codec = CodecSpec::new(20, [(-1.0, 1.0); NUM_ATTRIBUTES]).unwrap();
    MappingModel::new(config, codec, AudioNorm { mean: -4.0, std: 2.0 }, seed).unwrap()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_01_codec_correctness() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = Philox::new(11);
    let mut ranges = [(0.0, 0.0); NUM_ATTRIBUTES];
    for r in ranges.iter_mut() {
        let lo = -3.0 + 2.0 * rng.next_f64();
        *r = (lo, lo + 0.1 + 4.0 * rng.next_f64());
    }
    for d in SWEEP_DS {
        let codec = CodecSpec::new(d, ranges).unwrap();
        let mut worst_ratio: f64 = 0.0;
        let mut mismatches = 0;
        for _ in 0..10_000 {
            let mut v = [0.0; NUM_ATTRIBUTES];
            for (a, x) in v.iter_mut().enumerate() {
                let (lo, hi) = ranges[a];
                *x = lo + (hi - lo) * rng.next_f64();
            }
            let v = AnimVector(v);
            let code = codec.quantize(&v).unwrap();
            let back = codec.dequantize(&code).unwrap();
            for a in 0..NUM_ATTRIBUTES {
                let half = 0.5 * (ranges[a].1 - ranges[a].0) / d as f64;
                worst_ratio = worst_ratio.max((back.0[a] - v.0[a]).abs() / half);
                // exhaustive nearest midpoint, ties to the lower index
                let (lo, hi) = ranges[a];
                let w = (hi - lo) / d as f64;
                let mut best = 0;
                let mut best_dist = f64::INFINITY;
                for k in 0..d {
                    let dist = (v.0[a] - (lo + (k as f64 + 0.5) * w)).abs();
                    if dist < best_dist {
                        best = k;
                        best_dist = dist;
                    }
                }
                if best != code.0[a] {
                    mismatches += 1;
                }
            }
        }
        check.expect(
            worst_ratio <= 1.0 + 1e-9,
            format!("D={d} max err/half-width {worst_ratio:.6}"),
        );
        check.expect(mismatches == 0, format!("D={d} argmin mismatches {mismatches}"));
    }
    finish(1, "codec correctness", check, start.elapsed(), Duration::from_secs(10));
}

#[test]
fn criterion_02_resolution_trend() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let fit: Vec<LoadedClip> = (100..104).map(|s| synthetic_clip(s, 60.0)).collect();
    let eval: Vec<LoadedClip> = (200..202).map(|s| synthetic_clip(s, 60.0)).collect();
    let rows = run_d_sweep(&frames_of(&fit), &frames_of(&eval), &SWEEP_DS, DEFAULT_MARGIN, None).unwrap();
    let rmse: Vec<String> = rows.iter().map(|r| format!("D={}:{:.5}", r.d, r.rmse)).collect();
    check.expect(true, format!("held-out RMSE {}", rmse.join(" ")));
    let upto_500: Vec<f64> = rows.iter().filter(|r| r.d <= 500).map(|r| r.rmse).collect();
    let decreasing = upto_500.windows(2).all(|w| w[1] < w[0]);
    check.expect(decreasing, "strictly decreasing through D=500");
    let r500 = rows.iter().find(|r| r.d == 500).unwrap().rmse;
    let r750 = rows.iter().find(|r| r.d == 750).unwrap().rmse;
    let rel = (r750 - r500).abs() / r500;
    check.expect(rel < 0.10, format!("500->750 relative change {:.2}%", 100.0 * rel));
    finish(2, "resolution trend", check, start.elapsed(), Duration::from_secs(60));
}

#[test]
fn criterion_03_gradient_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let cfg = GradCheckConfig::default();
    let ops = op_suite(&cfg).unwrap();
    let worst = ops.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = ops.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| *n).collect();
    check.expect(
        failing.is_empty(),
        format!("{} ops, worst rel err {worst:.2e}, failing {failing:?}", ops.len()),
    );
    for mask in [MaskKind::TemporallyBiased, MaskKind::VanillaCausal] {
        let config = ModelConfig {
            tau: 8,
            d: 11,
            width: 32,
            heads: 2,
            layers: 2,
            ff_width: 64,
            mask,
            audio_window: 3,
            ..Default::default()
        };
        let report = model_grad_check(config, 8, 5, &cfg).unwrap();
        check.expect(
            report.passed(),
            format!(
                "{mask} model (width 32, 2 layers, T'=8): {} coords, worst rel err {:.2e}",
                report.checked, report.max_rel_error
            ),
        );
    }
    finish(3, "gradient fidelity", check, start.elapsed(), Duration::from_secs(120));
}

#[test]
fn criterion_04_causality_and_masks() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();

    let mut rng = Philox::new(4);
    let mut violations = 0;
    for probe in 0..100 {
        let mask = if probe % 2 == 0 { MaskKind::TemporallyBiased } else { MaskKind::VanillaCausal };
        let model = small_model(mask, probe);
        let d = model.config.d;
        let t = 4 + rng.below(13);
        let cut = rng.below(t - 1);
        let window = model.config.audio_window;
        let audio = random_audio(&mut rng, t, window);
        let codes = random_codes(&mut rng, t, d);
        let mut audio2 = audio.clone();
        let mut codes2 = codes.clone();
        for i in cut + 1..t {
            audio2[i].mel.iter_mut().for_each(|v| *v += rng.next_normal());
            codes2[i] = random_codes(&mut rng, 1, d)[0];
        }
        let a = model.forward(&audio, &codes).unwrap();
        let b = model.forward(&audio2, &codes2).unwrap();
        let row = NUM_ATTRIBUTES * d;
        if a.data()[..(cut + 1) * row] != b.data()[..(cut + 1) * row] {
            violations += 1;
        }
        // the training path must agree with itself the same way
        let tape = |au: &[AudioFeatureFrame], co: &[AnimCode]| {
            let mut g = audio2anim::autodiff::Graph::new();
            let vars = model.register(&mut g);
            let out = model.forward_tape(&mut g, &vars, au, co).unwrap();
            g.value(out).data()[..(cut + 1) * row].to_vec()
        };
        if tape(&audio, &codes) != tape(&audio2, &codes2) {
            violations += 1;
        }
    }
    check.expect(violations == 0, format!("100 future-perturbation probes, {violations} violations"));

    let shape = BlockShape { heads: 4, head_dim: 4, ff_width: 32 };
    let t = 24;
    let block = AttentionBlockParams::init(shape, &mut rng);
    let x = Tensor::matrix(t, shape.width(), (0..t * shape.width()).map(|_| rng.next_normal()).collect())
        .unwrap();
    let slopes = SlopeScheme::Geometric.slopes(shape.heads);
    let mut worst_sum: f64 = 0.0;
    for kind in [MaskKind::TemporallyBiased, MaskKind::VanillaCausal] {
        for conv in [ScoreConvention::Literal, ScoreConvention::Additive] {
            let mask = AttentionMask::build(t, kind, &slopes).unwrap();
            let (_, weights) = attention_block(&x, &block, &mask, conv).unwrap();
            for w in &weights {
                for i in 0..t {
                    let s: f64 = w.row(i).iter().sum();
                    worst_sum = worst_sum.max((s - 1.0).abs());
                }
            }
        }
    }
    check.expect(worst_sum <= 1e-12, format!("max |row sum - 1| {worst_sum:.1e}"));

    let zero = AttentionMask::build(t, MaskKind::TemporallyBiased, &[0.0; 4]).unwrap();
    let vanilla = AttentionMask::build(t, MaskKind::VanillaCausal, &[]).unwrap();
    let mut identical = true;
    for conv in [ScoreConvention::Literal, ScoreConvention::Additive] {
        let (ya, wa) = attention_block(&x, &block, &zero, conv).unwrap();
        let (yb, wb) = attention_block(&x, &block, &vanilla, conv).unwrap();
        identical &= ya.data() == yb.data() && wa == wb;
        let bits = |m: &AttentionMask, h| m.matrix(h).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        identical &= (0..4).all(|h| bits(&zero, h) == bits(&vanilla, 0));
    }
    check.expect(identical, "slope-0 TBM bitwise equals vanilla");

    // identical rows give identical scores, so the mask alone shapes the weights
    let row: Vec<f64> = (0..shape.width()).map(|_| rng.next_normal()).collect();
    let uniform = Tensor::matrix(t, shape.width(), row.repeat(t)).unwrap();
    let tbm = AttentionMask::build(t, MaskKind::TemporallyBiased, &slopes).unwrap();
    let mut monotone = true;
    for conv in [ScoreConvention::Literal, ScoreConvention::Additive] {
        let (_, weights) = attention_block(&uniform, &block, &tbm, conv).unwrap();
        for w in &weights {
            for i in 1..t {
                let r = w.row(i);
                // distance i - j grows as j falls
                monotone &= (1..=i).all(|j| r[j] > r[j - 1]);
            }
        }
    }
    check.expect(monotone, "uniform-content TBM weights strictly decrease with distance");
    finish(4, "causality and masks", check, start.elapsed(), Duration::from_secs(60));
}

#[test]
fn criterion_05_trainability() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let clip = synthetic_clip(7, 8.0);
    check.expect(clip.animation.len() == 200, format!("{} frames", clip.animation.len()));
    let config = ModelConfig::default();
    let codec = CodecSpec::fit(&clip.animation.frames, DEFAULT_D, DEFAULT_MARGIN).unwrap();
    let norm = AudioNorm::fit(&clip.audio).unwrap();
    let windows = make_training_windows(&clip.animation, &clip.audio, &codec, config.tau, default_stride(config.tau))
        .unwrap();
    let model = MappingModel::new(config, codec, norm, 0).unwrap();
    let mean_loss = |m: &MappingModel| {
        windows.iter().map(|w| batch_loss(m, w).unwrap()).sum::<f64>() / windows.len() as f64
    };
    let initial = mean_loss(&model);
    let ln_d = (DEFAULT_D as f64).ln();
    check.expect(
        (initial - ln_d).abs() <= 0.5,
        format!("untrained loss {initial:.4} vs ln(D) {ln_d:.4}"),
    );
    let mut trainer = Trainer::new(model, AdamConfig::default());
    let losses = trainer.fit(&windows, 2000, 0).unwrap();
    let last = losses.iter().rev().take(50).sum::<f64>() / 50.0;
    let final_loss = mean_loss(&trainer.model);
    check.expect(
        final_loss < 0.5,
        format!("mean loss after 2000 steps {final_loss:.4} (last-50 step mean {last:.4})"),
    );
    finish(5, "trainability", check, start.elapsed(), Duration::from_secs(600));
}

// ---------------------------------------------------------------------------
// Shared ablation corpus and models for criteria 6 and 8.

const ABLATION_SEEDS: u64 = 3;
const ABLATION_TRAIN_CLIPS: std::ops::Range<u64> = 100..180;
const ABLATION_HELDOUT_CLIPS: std::ops::Range<u64> = 200..202;
const ABLATION_STEPS: usize = 10_000;
const GENERATED_FRAMES: usize = 750;
const SAMPLES_PER_MODEL: u64 = 3;

fn ablation_config(mask: MaskKind) -> ModelConfig {
    ModelConfig {
        tau: 50,
        d: 50,
        width: 64,
        heads: 4,
        layers: 2,
        ff_width: 256,
        mask,
        ..Default::default()
    }
}

struct Ablation {
    /// `(tbm, vanilla)` per seed.
    models: Vec<(MappingModel, MappingModel)>,
    heldout: Vec<LoadedClip>,
    heldout_windows: Vec<TrainingBatch>,
    train_time: Duration,
}

fn ablation() -> &'static Ablation {
    static CELL: OnceLock<Ablation> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let train: Vec<LoadedClip> = ABLATION_TRAIN_CLIPS.map(|s| synthetic_clip(s, 60.0)).collect();
        let heldout: Vec<LoadedClip> = ABLATION_HELDOUT_CLIPS.map(|s| synthetic_clip(s, 60.0)).collect();
        let base = ablation_config(MaskKind::TemporallyBiased);
        let codec = CodecSpec::fit(&frames_of(&train), base.d, DEFAULT_MARGIN).unwrap();
        let norm = AudioNorm::fit(&audio_of(&train)).unwrap();
        let windows = windows_of(&train, &codec, base.tau, default_stride(base.tau));
        let heldout_windows = windows_of(&heldout, &codec, base.tau, base.tau);
        let fit = |mask, seed| {
            let model = MappingModel::new(ablation_config(mask), codec.clone(), norm, seed).unwrap();
            let mut trainer = Trainer::new(model, AdamConfig::default());
            trainer.fit(&windows, ABLATION_STEPS, seed).unwrap();
            trainer.model
        };
        let models = (0..ABLATION_SEEDS)
            .map(|seed| (fit(MaskKind::TemporallyBiased, seed), fit(MaskKind::VanillaCausal, seed)))
            .collect();
        Ablation { models, heldout, heldout_windows, train_time: start.elapsed() }
    })
}

/// Mean smoothness of sampled sequences on the first held-out clip.
fn generated_smoothness(model: &MappingModel, audio: &[AudioFeatureFrame]) -> f64 {
    let mut total = 0.0;
    for seed in 0..SAMPLES_PER_MODEL {
        let cfg = SamplerConfig { seed, length: Some(GENERATED_FRAMES), ..Default::default() };
        let g = generate(model, audio, 25.0, &cfg).unwrap();
        total += metrics::mean(&metrics::smoothness(&g.sequence).unwrap());
    }
    total / SAMPLES_PER_MODEL as f64
}

#[test]
fn criterion_06_mask_ablation() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let ab = ablation();
    let trained_here = start.elapsed();
    let audio = &ab.heldout[0].audio;
    let (mut ppl_wins, mut smooth_wins) = (0, 0);
    for (seed, (tbm, vanilla)) in ab.models.iter().enumerate() {
        let pt = heldout_perplexity(tbm, &ab.heldout_windows).unwrap();
        let pv = heldout_perplexity(vanilla, &ab.heldout_windows).unwrap();
        let st = generated_smoothness(tbm, audio);
        let sv = generated_smoothness(vanilla, audio);
        ppl_wins += usize::from(pt <= pv);
        smooth_wins += usize::from(st <= sv);
        check.expect(
            true,
            format!("seed {seed}: perplexity tbm {pt:.3} vanilla {pv:.3}, smoothness tbm {st:.5} vanilla {sv:.5}"),
        );
    }
    let gt = metrics::mean(&metrics::smoothness(&ab.heldout[0].animation).unwrap());
    check.expect(true, format!("ground-truth smoothness {gt:.5}"));
    check.expect(ppl_wins >= 2, format!("tbm perplexity <= vanilla in {ppl_wins}/3 seeds"));
    check.expect(smooth_wins >= 2, format!("tbm smoothness <= vanilla in {smooth_wins}/3 seeds"));
    // training is charged in full even when another criterion built the models
    let elapsed = start.elapsed() - trained_here + ab.train_time;
    finish(6, "mask ablation", check, elapsed, Duration::from_secs(1800));
}

#[test]
fn criterion_07_diversity() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let train: Vec<LoadedClip> = (100..102).map(|s| synthetic_clip(s, 60.0)).collect();
    let config = ablation_config(MaskKind::TemporallyBiased);
    let codec = CodecSpec::fit(&frames_of(&train), config.d, DEFAULT_MARGIN).unwrap();
    let norm = AudioNorm::fit(&audio_of(&train)).unwrap();
    let windows = windows_of(&train, &codec, config.tau, default_stride(config.tau));
    let model = MappingModel::new(config, codec, norm, 0).unwrap();
    let mut trainer = Trainer::new(model, AdamConfig::default());
    trainer.fit(&windows, 1000, 0).unwrap();
    let model = trainer.model;
    let audio = synthetic_clip(200, 12.0).audio;

    let runs = |k: usize| -> Vec<Vec<AnimCode>> {
        (0..10)
            .map(|seed| generate(&model, &audio, 25.0, &SamplerConfig { k, seed, ..Default::default() }).unwrap().codes)
            .collect()
    };
    let mut by_k = Vec::new();
    for k in [1, 5, 10, 50] {
        by_k.push((k, mean_pairwise_disagreement(&runs(k)).unwrap()));
    }
    let summary: Vec<String> = by_k.iter().map(|(k, d)| format!("k={k}:{:.4}", d)).collect();
    check.expect(true, format!("disagreement {}", summary.join(" ")));
    check.expect(by_k[0].1 == 0.0, "k=1 exactly 0");
    check.expect(by_k[2].1 >= 0.01, "k=10 >= 1%");
    check.expect(by_k.windows(2).all(|w| w[1].1 >= w[0].1), "non-decreasing in k");
    finish(7, "diversity", check, start.elapsed(), Duration::from_secs(300));
}

#[test]
fn criterion_08_blink_rate() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let ab = ablation();
    let trained_here = start.elapsed();
    let th = BlinkThresholds::default();
    let gt: Vec<f64> = ab
        .heldout
        .iter()
        .map(|c| eye_blink_rate(&c.animation.track(BLINK_ATTRIBUTE), 25.0, &th).unwrap().per_second)
        .collect();
    check.expect(true, format!("ground-truth EBR {gt:.3?}"));
    let (mut sampled, mut argmax) = (Vec::new(), Vec::new());
    for (tbm, _) in &ab.models {
        for clip in &ab.heldout {
            for seed in 0..SAMPLES_PER_MODEL {
                let g = generate(tbm, &clip.audio, 25.0, &SamplerConfig { seed, ..Default::default() }).unwrap();
                sampled.push(eye_blink_rate(&g.sequence.track(BLINK_ATTRIBUTE), 25.0, &th).unwrap().per_second);
            }
            let g = generate(tbm, &clip.audio, 25.0, &SamplerConfig { k: 1, ..Default::default() }).unwrap();
            argmax.push(eye_blink_rate(&g.sequence.track(BLINK_ATTRIBUTE), 25.0, &th).unwrap().per_second);
        }
    }
    let mean_sampled = metrics::mean(&sampled);
    let mean_argmax = metrics::mean(&argmax);
    check.expect(
        (0.2..=0.5).contains(&mean_sampled),
        format!("sampled EBR {mean_sampled:.3}/s over {} sequences", sampled.len()),
    );
    check.expect(
        mean_argmax < 0.1,
        format!("argmax EBR {mean_argmax:.3}/s (near-static means < 0.1/s)"),
    );
    let elapsed = start.elapsed() - trained_here + ab.train_time;
    finish(8, "blink rate", check, elapsed, Duration::from_secs(1800));
}

#[test]
fn criterion_09_audio_front_end() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = Philox::new(9);
    let mut wrong = 0;
    for _ in 0..50 {
        let len = rng.below(5 * SAMPLE_RATE as usize);
        // count full windows by walking the hop grid
        let mut expected = 0;
        let mut s = 0;
        while s + N_FFT <= len {
            expected += 1;
            s += HOP;
        }
        let clip = AudioClip::new(vec![0.0; len], SAMPLE_RATE);
        let got = if len < N_FFT { 0 } else { mel_spectrogram(&clip).unwrap().len() };
        if got != expected || num_mel_steps(len) != expected {
            wrong += 1;
        }
    }
    check.expect(wrong == 0, format!("frame count wrong on {wrong}/50 lengths"));

    let sine: Vec<f64> = (0..SAMPLE_RATE as usize)
        .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / SAMPLE_RATE as f64).sin())
        .collect();
    let mel = mel_spectrogram(&AudioClip::new(sine, SAMPLE_RATE)).unwrap();
    // the band whose centre lies closest to 1 kHz on the mel scale
    let centers = mel_band_centers();
    let expected_band = (0..N_MELS)
        .min_by(|&a, &b| {
            let da = (audio::hz_to_mel(centers[a]) - audio::hz_to_mel(1000.0)).abs();
            let db = (audio::hz_to_mel(centers[b]) - audio::hz_to_mel(1000.0)).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    let edges = mel_edges();
    let mut off = 0;
    for row in &mel {
        let peak = (0..N_MELS).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        if peak != expected_band {
            off += 1;
        }
    }
    check.expect(
        off == 0,
        format!(
            "1 kHz peak in band {expected_band} ({:.0}-{:.0} Hz) on {}/{} steps",
            edges[expected_band],
            edges[expected_band + 2],
            mel.len() - off,
            mel.len()
        ),
    );

    let silence = mel_spectrogram(&AudioClip::new(vec![0.0; 8000], SAMPLE_RATE)).unwrap();
    let floor = LOG_FLOOR.ln();
    check.expect(
        silence.iter().flatten().all(|&v| v == floor),
        format!("silence equals ln({LOG_FLOOR:e}) everywhere"),
    );
    finish(9, "audio front end", check, start.elapsed(), Duration::from_secs(10));
}

#[test]
fn criterion_10_reproducibility() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let mut rng = Philox::new(10);
    let model = small_model(MaskKind::TemporallyBiased, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let audio = random_audio(&mut rng, 40, model.config.audio_window);
    let tau = model.config.tau;
    let codes = random_codes(&mut rng, tau, model.config.d);
    let bits = |m: &MappingModel| m.forward(&audio[..tau], &codes).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check.expect(bits(&model) == bits(&loaded), "checkpoint round trip gives bit-identical logits");
    check.expect(
        checkpoint::model_hash(&model) == checkpoint::model_hash(&loaded),
        format!("model hash {}", checkpoint::model_hash(&model)),
    );

    let cfg = SamplerConfig { seed: 42, ..Default::default() };
    let a = generate(&loaded, &audio, 25.0, &cfg).unwrap();
    let b = generate(&loaded, &audio, 25.0, &cfg).unwrap();
    let same_frames = a
        .sequence
        .frames
        .iter()
        .zip(&b.sequence.frames)
        .all(|(x, y)| x.0.iter().zip(&y.0).all(|(p, q)| p.to_bits() == q.to_bits()));
    check.expect(a.codes == b.codes && same_frames, "seeded generation bit-identical across runs");
    check.expect(
        true,
        "headless: cargo test --release -p audio2anim --test acceptance -- --nocapture",
    );
    finish(10, "reproducibility", check, start.elapsed(), Duration::from_secs(60));
}
