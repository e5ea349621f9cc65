use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use audio2anim::audio::{self, AudioFeatureFrame};
use audio2anim::checkpoint;
use audio2anim::codec::{AnimVector, CodecSpec, BLINK_ATTRIBUTE};
use audio2anim::config::Settings;
use audio2anim::data::{self, LoadedClip, SyntheticSpec};
use audio2anim::gradcheck::{model_grad_check, op_suite, GradCheckConfig};
use audio2anim::kv::{fmt_f64, KvRecord};
use audio2anim::metrics::{self, MetricReport};
use audio2anim::model::{AudioNorm, MappingModel, ModelConfig};
use audio2anim::sampler::{self, AnimSequence, SamplerConfig};
use audio2anim::sweep::{self, SWEEP_DS};
use audio2anim::train::{self, TrainingBatch, Trainer};

/// Probabilistic audio-to-facial-animation toolkit.
#[derive(Parser)]
#[command(name = "audio2anim", version)]
struct Cli {
    /// Flat key=value settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (WAV + animation CSV + manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Validate a manifest and export aligned features and animation.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit a codec on the animation of a manifest.
    FitCodec {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a mapping model and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional `step,loss` log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sample an animation sequence for a WAV file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long, default_value_t = data::DEFAULT_FPS)]
        fps: f64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Metric report (CSV) for a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Sampled sequences per clip.
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[command(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Codec resolution sweep (CSV).
    DSweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Clips to measure on; defaults to the fitting manifest.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_DS)]
        ds: Vec<usize>,
        /// Also train a model per D for this many steps and report
        /// held-out perplexity.
        #[arg(long, default_value_t = 0)]
        train_steps: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Finite-difference check of the model gradients.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        len: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Print the resolved settings.
    ShowConfig {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// `--set key=value`, for any settings key.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Default)]
struct ModelArgs {
    /// Attention mask: tbm | vanilla.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    ff_width: Option<usize>,
    /// geometric | fixed:<slope>
    #[arg(long)]
    slope_scheme: Option<String>,
    /// literal | additive
    #[arg(long)]
    convention: Option<String>,
    #[arg(long)]
    positional: Option<bool>,
    #[arg(long)]
    audio_window: Option<usize>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Args, Default)]
struct SampleArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Frames to generate; defaults to one per audio frame.
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args, Default)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    blink_rate: Option<f64>,
    #[arg(long)]
    blink_frames: Option<usize>,
    #[arg(long)]
    pose_sigma: Option<f64>,
    #[arg(long)]
    clips: Option<usize>,
}

fn put<T: ToString>(rec: &mut KvRecord, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        rec.set(key, v.to_string());
    }
}

fn put_f64(rec: &mut KvRecord, key: &str, v: Option<f64>) {
    if let Some(v) = v {
        rec.set(key, fmt_f64(v));
    }
}

impl ModelArgs {
    fn apply(&self, r: &mut KvRecord) {
        put(r, "model.mask", &self.mask);
        put(r, "model.tau", &self.tau);
        put(r, "model.d", &self.d);
        put(r, "model.width", &self.width);
        put(r, "model.heads", &self.heads);
        put(r, "model.layers", &self.layers);
        put(r, "model.ff_width", &self.ff_width);
        put(r, "model.slopes", &self.slope_scheme);
        put(r, "model.convention", &self.convention);
        put(r, "model.positional", &self.positional.map(u8::from));
        put(r, "model.audio_window", &self.audio_window);
    }
}

impl TrainArgs {
    fn apply(&self, r: &mut KvRecord) {
        put(r, "train.steps", &self.steps);
        put(r, "train.seed", &self.seed);
        put_f64(r, "train.lr", self.lr);
        put(r, "train.stride", &self.stride);
        put_f64(r, "codec.margin", self.margin);
    }
}

impl SampleArgs {
    fn apply(&self, r: &mut KvRecord) {
        put(r, "sample.k", &self.k);
        put_f64(r, "sample.temperature", self.temperature);
        put(r, "sample.seed", &self.seed);
        put(r, "sample.length", &self.length);
    }
}

impl SynthArgs {
    fn apply(&self, r: &mut KvRecord) {
        put(r, "synth.seed", &self.seed);
        put_f64(r, "synth.duration", self.duration);
        put_f64(r, "synth.fps", self.fps);
        put_f64(r, "synth.blink_rate", self.blink_rate);
        put(r, "synth.blink_frames", &self.blink_frames);
        put_f64(r, "synth.pose_sigma", self.pose_sigma);
        put(r, "synth.clips", &self.clips);
    }
}

/// Resolves defaults, then the config file, then `--set`, then the
/// dedicated flags filled in by `fill`.
fn settings(config: Option<&Path>, overrides: &Overrides, fill: impl FnOnce(&mut KvRecord)) -> Result<Settings> {
    let file = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            KvRecord::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => KvRecord::new(),
    };
    let mut flags = KvRecord::new();
    for s in &overrides.set {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {s:?}");
        };
        flags.set(k.trim(), v.trim());
    }
    fill(&mut flags);
    Ok(Settings::resolve(&file, &flags)?)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn frames_of(clips: &[LoadedClip]) -> Vec<AnimVector> {
    clips.iter().flat_map(|c| c.animation.frames.iter().copied()).collect()
}

fn windows(clips: &[LoadedClip], codec: &CodecSpec, tau: usize, stride: usize) -> audio2anim::Result<Vec<TrainingBatch>> {
    let mut out = Vec::new();
    for c in clips {
        out.extend(train::make_training_windows(&c.animation, &c.audio, codec, tau, stride)?);
    }
    Ok(out)
}

fn train_model(clips: &[LoadedClip], s: &Settings, mut on_loss: impl FnMut(usize, f64)) -> Result<MappingModel> {
    let codec = CodecSpec::fit(&frames_of(clips), s.model.d, s.train.margin)?;
    let audio: Vec<AudioFeatureFrame> = clips.iter().flat_map(|c| c.audio.iter().cloned()).collect();
    let norm = AudioNorm::fit(&audio)?;
    let model = MappingModel::new(s.model.clone(), codec.clone(), norm, s.train.seed)?;
    let stride = s.train.stride.unwrap_or_else(|| train::default_stride(s.model.tau));
    let wins = windows(clips, &codec, s.model.tau, stride)?;
    log::info!(
        "training {} parameters on {} windows for {} steps",
        model.num_parameters(),
        wins.len(),
        s.train.steps
    );
    let mut trainer = Trainer::new(model, s.adam()).with_clip_norm(s.train.clip_norm);
    let losses = trainer.fit(&wins, s.train.steps, s.train.seed)?;
    for (i, l) in losses.iter().enumerate() {
        on_loss(i, *l);
    }
    Ok(trainer.model)
}

/// Non-overlapping evaluation windows (plus the tail).
fn eval_windows(model: &MappingModel, clips: &[LoadedClip]) -> audio2anim::Result<Vec<TrainingBatch>> {
    windows(clips, &model.codec, model.config.tau, model.config.tau)
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth { out, synth, overrides } => {
            let s = settings(config, &overrides, |r| synth.apply(r))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut manifest = String::from("clip_id,audio,animation,fps\n");
            for i in 0..s.synth_clips {
                let spec = SyntheticSpec {
                    seed: s.synth.seed.wrapping_add(i as u64),
                    ..s.synth.clone()
                };
                let clip = data::generate_synthetic(&spec)?;
                let id = format!("clip{i:03}");
                audio::write_wav(&out.join(format!("{id}.wav")), &clip.audio)?;
                data::save_animation_csv(
                    &out.join(format!("{id}.csv")),
                    &clip.animation,
                    &[format!("fps={} seed={}", fmt_f64(spec.fps), spec.seed)],
                )?;
                manifest.push_str(&format!("{id},{id}.wav,{id}.csv,{}\n", fmt_f64(spec.fps)));
                println!("{id},{},{}", clip.animation.len(), clip.blink_onsets.len());
            }
            fs::write(out.join("manifest.csv"), manifest)?;
        }
        Command::Ingest { manifest, out, overrides } => {
            let s = settings(config, &overrides, |_| {})?;
            let clips = data::load_manifest(&manifest, s.model.audio_window)?;
            fs::create_dir_all(&out)?;
            println!("clip_id,frames,dropped");
            for c in &clips {
                fs::write(out.join(format!("{}.features", c.clip_id)), audio::features_to_text(&c.audio))?;
                data::save_animation_csv(
                    &out.join(format!("{}.csv", c.clip_id)),
                    &c.animation,
                    &[format!("fps={}", fmt_f64(c.animation.fps))],
                )?;
                println!("{},{},{}", c.clip_id, c.animation.len(), c.dropped);
            }
        }
        Command::FitCodec { manifest, out, d, margin, overrides } => {
            let s = settings(config, &overrides, |r| {
                put(r, "model.d", &d);
                put_f64(r, "codec.margin", margin);
            })?;
            let text = fs::read_to_string(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let mut frames = Vec::new();
            for rec in data::parse_manifest(&text, base)? {
                frames.extend(data::load_animation_csv(&rec.animation, Some(rec.fps))?.sequence.frames);
            }
            let codec = CodecSpec::fit(&frames, s.model.d, s.train.margin)?;
            fs::write(&out, codec.to_text())?;
        }
        Command::Train { manifest, checkpoint: ckpt, log, model, train, overrides } => {
            let s = settings(config, &overrides, |r| {
                model.apply(r);
                train.apply(r);
            })?;
            let clips = data::load_manifest(&manifest, s.model.audio_window)?;
            let mut log_text = String::from("step,loss\n");
            let trained = train_model(&clips, &s, |i, l| {
                log_text.push_str(&format!("{},{}\n", i + 1, fmt_f64(l)));
                if (i + 1) % 100 == 0 {
                    log::info!("step {} loss {l:.4}", i + 1);
                }
            })?;
            if let Some(p) = log {
                fs::write(&p, log_text)?;
            }
            checkpoint::save(&trained, &ckpt)?;
            println!("checkpoint={} model={}", ckpt.display(), checkpoint::model_hash(&trained));
        }
        Command::Generate { checkpoint: ckpt, audio: wav, fps, out, sample, overrides } => {
            let s = settings(config, &overrides, |r| sample.apply(r))?;
            let model = checkpoint::load(&ckpt)?;
            let clip = audio::read_wav(&wav)?;
            let feats = audio::clip_features(&clip, fps, model.config.audio_window)?;
            let g = sampler::generate(&model, &feats, fps, &s.sample)?;
            let header = format!(
                "fps={} seed={} k={} temperature={} model={}",
                fmt_f64(fps),
                s.sample.seed,
                s.sample.k,
                fmt_f64(s.sample.temperature),
                checkpoint::model_hash(&model)
            );
            write_out(out.as_deref(), &data::animation_to_csv(&g.sequence, &[header]))?;
        }
        Command::Eval { checkpoint: ckpt, manifest, samples, sample, overrides } => {
            if samples < 2 {
                bail!("--samples must be >= 2 to measure diversity");
            }
            let s = settings(config, &overrides, |r| sample.apply(r))?;
            let model = checkpoint::load(&ckpt)?;
            let clips = data::load_manifest(&manifest, model.config.audio_window)?;
            let report = evaluate(&model, &clips, &s, samples)?;
            println!("{}\n{}", MetricReport::csv_header(), report.csv_row());
        }
        Command::DSweep { manifest, eval_manifest, ds, train_steps, model, overrides } => {
            let s = settings(config, &overrides, |r| model.apply(r))?;
            let fit = data::load_manifest(&manifest, s.model.audio_window)?;
            let eval = match &eval_manifest {
                Some(p) => data::load_manifest(p, s.model.audio_window)?,
                None => fit.clone(),
            };
            let mut perplexity = |codec: &CodecSpec| -> audio2anim::Result<f64> {
                let cfg = Settings {
                    model: ModelConfig { d: codec.d(), ..s.model.clone() },
                    train: audio2anim::config::TrainSettings { steps: train_steps, ..s.train.clone() },
                    ..s.clone()
                };
                let m = train_model(&fit, &cfg, |_, _| {}).map_err(|e| audio2anim::Error::InvalidArgument(e.to_string()))?;
                let w = eval_windows(&m, &eval)?;
                metrics::heldout_perplexity(&m, &w)
            };
            let rows = sweep::run_d_sweep(
                &frames_of(&fit),
                &frames_of(&eval),
                &ds,
                s.train.margin,
                if train_steps > 0 { Some(&mut perplexity) } else { None },
            )?;
            print!("{}", sweep::sweep_csv(&rows));
        }
        Command::GradCheck { seed, len, width, layers, tolerance } => {
            let cfg = ModelConfig {
                tau: len.max(1),
                d: 11,
                width,
                heads: 2,
                layers,
                ff_width: 2 * width,
                audio_window: 3,
                ..ModelConfig::default()
            };
            let gc = GradCheckConfig { tolerance, seed, ..GradCheckConfig::default() };
            let mut failed = Vec::new();
            for (name, r) in op_suite(&gc)? {
                println!("op={name} checked={} max_rel_error={:e} passed={}", r.checked, r.max_rel_error, r.passed());
                if !r.passed() {
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                bail!("gradient check failed for ops {failed:?}");
            }
            let report = model_grad_check(cfg, len, seed, &gc)?;
            println!(
                "model checked={} max_rel_error={:e} tolerance={:e} passed={}",
                report.checked,
                report.max_rel_error,
                report.tolerance,
                report.passed()
            );
            if !report.passed() {
                bail!("gradient check failed: {:?}", report.worst);
            }
        }
        Command::ShowConfig { model, overrides } => {
            let s = settings(config, &overrides, |r| model.apply(r))?;
            print!("{}", settings_record(&s).to_text());
        }
    }
    Ok(())
}

fn settings_record(s: &Settings) -> KvRecord {
    let mut r = KvRecord::new();
    checkpoint::config_to_record(&s.model, &mut r);
    r.set("train.steps", s.train.steps);
    r.set("train.seed", s.train.seed);
    r.set("train.lr", fmt_f64(s.train.learning_rate));
    r.set("train.stride", s.train.stride.map_or("auto".into(), |v| v.to_string()));
    r.set("codec.margin", fmt_f64(s.train.margin));
    r.set("train.clip", fmt_f64(s.train.clip_norm.unwrap_or(0.0)));
    r.set("sample.k", s.sample.k);
    r.set("sample.temperature", fmt_f64(s.sample.temperature));
    r.set("sample.seed", s.sample.seed);
    r.set("sample.length", s.sample.length.map_or("auto".into(), |v| v.to_string()));
    r.set("synth.seed", s.synth.seed);
    r.set("synth.duration", fmt_f64(s.synth.duration));
    r.set("synth.fps", fmt_f64(s.synth.fps));
    r.set("synth.blink_rate", fmt_f64(s.synth.blink_rate));
    r.set("synth.blink_frames", s.synth.blink_frames);
    r.set("synth.pose_sigma", fmt_f64(s.synth.pose_sigma));
    r.set("synth.clips", s.synth_clips);
    r.set("blink.rise", fmt_f64(s.blink.rise));
    r.set("blink.fall", fmt_f64(s.blink.fall));
    r
}

fn evaluate(model: &MappingModel, clips: &[LoadedClip], s: &Settings, samples: usize) -> Result<MetricReport> {
    let mut ebr = Vec::new();
    let mut smooth = vec![0.0; audio2anim::codec::NUM_ATTRIBUTES];
    let mut diversity = Vec::new();
    let mut n_seq = 0.0;
    for c in clips {
        let mut seqs: Vec<AnimSequence> = Vec::with_capacity(samples);
        for j in 0..samples {
            let cfg = SamplerConfig {
                seed: s.sample.seed.wrapping_add(j as u64),
                ..s.sample
            };
            let g = sampler::generate(model, &c.audio, c.animation.fps, &cfg)?;
            let rate = metrics::eye_blink_rate(&g.sequence.track(BLINK_ATTRIBUTE), g.sequence.fps, &s.blink)?;
            ebr.push(rate.per_second);
            for (acc, v) in smooth.iter_mut().zip(metrics::smoothness(&g.sequence)?) {
                *acc += v;
            }
            n_seq += 1.0;
            seqs.push(g.sequence);
        }
        diversity.push(metrics::diversity(&seqs)?);
    }
    smooth.iter_mut().for_each(|v| *v /= n_seq);
    Ok(MetricReport {
        ebr: metrics::mean(&ebr),
        smoothness: smooth,
        diversity: metrics::mean(&diversity),
        perplexity: metrics::heldout_perplexity(model, &eval_windows(model, clips)?)?,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
