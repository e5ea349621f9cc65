//! Layered run settings: built-in defaults, then a config file, then
//! command-line flags.
//!
//! The config file is a flat `key = value` text (see [`crate::kv`]).
//! Recognized keys, with defaults, are listed by [`default_record`];
//! unknown keys are rejected. `auto` for `train.stride` means `tau / 2`
//! and for `sample.length` means one frame per audio frame.

use crate::checkpoint::config_to_record;
use crate::codec::DEFAULT_MARGIN;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvRecord};
use crate::metrics::BlinkThresholds;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::sampler::SamplerConfig;
use crate::train::DEFAULT_CLIP_NORM;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub stride: Option<usize>,
    pub margin: f64,
    /// Global gradient-norm bound; `None` when `train.clip = 0`.
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub sample: SamplerConfig,
    pub synth: SyntheticSpec,
    pub synth_clips: usize,
    pub blink: BlinkThresholds,
}

pub fn default_record() -> KvRecord {
    let mut r = KvRecord::new();
    config_to_record(&ModelConfig::default(), &mut r);
    r.set("train.steps", 2000);
    r.set("train.seed", 0);
    r.set("train.lr", fmt_f64(AdamConfig::default().lr));
    r.set("train.stride", "auto");
    r.set("train.clip", fmt_f64(DEFAULT_CLIP_NORM));
    r.set("codec.margin", fmt_f64(DEFAULT_MARGIN));
    let s = SamplerConfig::default();
    r.set("sample.k", s.k);
    r.set("sample.temperature", fmt_f64(s.temperature));
    r.set("sample.seed", s.seed);
    r.set("sample.length", "auto");
    let y = SyntheticSpec::default();
    r.set("synth.seed", y.seed);
    r.set("synth.duration", fmt_f64(y.duration));
    r.set("synth.fps", fmt_f64(y.fps));
    r.set("synth.blink_rate", fmt_f64(y.blink_rate));
    r.set("synth.blink_frames", y.blink_frames);
    r.set("synth.pose_sigma", fmt_f64(y.pose_sigma));
    r.set("synth.clips", 1);
    let b = BlinkThresholds::default();
    r.set("blink.rise", fmt_f64(b.rise));
    r.set("blink.fall", fmt_f64(b.fall));
    r
}

fn auto<T: std::str::FromStr>(rec: &KvRecord, key: &str) -> Result<Option<T>> {
    match rec.require(key)? {
        "auto" => Ok(None),
        _ => rec.parsed(key),
    }
}

impl Settings {
    /// Merges the layers, later ones winning, and parses the result.
    pub fn resolve(file: &KvRecord, flags: &KvRecord) -> Result<Self> {
        let mut merged = default_record();
        for layer in [file, flags] {
            for (k, v) in layer.iter() {
                if merged.get(k).is_none() {
                    return Err(Error::InvalidArgument(format!("unknown setting {k:?}")));
                }
                merged.set(k, v);
            }
        }
        Self::from_record(&merged)
    }

    pub fn from_record(r: &KvRecord) -> Result<Self> {
        let model = crate::checkpoint::config_from_record(r)?;
        let train = TrainSettings {
            steps: r.require_parsed("train.steps")?,
            seed: r.require_parsed("train.seed")?,
            learning_rate: r.require_parsed("train.lr")?,
            stride: auto(r, "train.stride")?,
            margin: r.require_parsed("codec.margin")?,
            clip_norm: match r.require_parsed::<f64>("train.clip")? {
                c if c > 0.0 => Some(c),
                0.0 => None,
                c => return Err(Error::InvalidArgument(format!("train.clip {c} must be >= 0"))),
            },
        };
        if !(train.learning_rate > 0.0) || !(train.margin >= 0.0) || train.stride == Some(0) {
            return Err(Error::InvalidArgument("bad training settings".into()));
        }
        let sample = SamplerConfig {
            k: r.require_parsed("sample.k")?,
            temperature: r.require_parsed("sample.temperature")?,
            seed: r.require_parsed("sample.seed")?,
            length: auto(r, "sample.length")?,
        };
        sample.validate(model.d)?;
        let synth = SyntheticSpec {
            seed: r.require_parsed("synth.seed")?,
            duration: r.require_parsed("synth.duration")?,
            fps: r.require_parsed("synth.fps")?,
            blink_rate: r.require_parsed("synth.blink_rate")?,
            blink_frames: r.require_parsed("synth.blink_frames")?,
            pose_sigma: r.require_parsed("synth.pose_sigma")?,
            ..SyntheticSpec::default()
        };
        synth.validate()?;
        let blink = BlinkThresholds {
            rise: r.require_parsed("blink.rise")?,
            fall: r.require_parsed("blink.fall")?,
            ..BlinkThresholds::default()
        };
        if !(0.0 <= blink.fall && blink.fall <= blink.rise && blink.rise <= 1.0) {
            return Err(Error::InvalidArgument("blink thresholds need 0 <= fall <= rise <= 1".into()));
        }
        Ok(Settings {
            model,
            train,
            sample,
            synth,
            synth_clips: r.require_parsed("synth.clips")?,
            blink,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let s = Settings::resolve(&KvRecord::new(), &KvRecord::new()).unwrap();
        assert_eq!(s.model, ModelConfig::default());
        assert_eq!(s.train.stride, None);
        assert_eq!(s.sample.length, None);
        assert_eq!(s.sample.k, 10);
    }

    #[test]
    fn precedence_matrix() {
        for (in_file, in_flag, expect) in [
            (false, false, 50),
            (true, false, 20),
            (false, true, 30),
            (true, true, 30),
        ] {
            let mut file = KvRecord::new();
            let mut flags = KvRecord::new();
            if in_file {
                file.set("model.tau", 20);
            }
            if in_flag {
                flags.set("model.tau", 30);
            }
            assert_eq!(Settings::resolve(&file, &flags).unwrap().model.tau, expect);
        }
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut f = KvRecord::new();
        f.set("model.taw", 3);
        assert!(Settings::resolve(&f, &KvRecord::new()).is_err());
        let mut f = KvRecord::new();
        f.set("sample.k", 0);
        assert!(Settings::resolve(&f, &KvRecord::new()).is_err());
        let mut f = KvRecord::new();
        f.set("model.mask", "causal");
        assert!(Settings::resolve(&f, &KvRecord::new()).is_err());
    }
}
