//! Replays the checked-in fuzz corpus through the same entry points and
//! properties as the fuzz targets, so regressions show up in plain
//! `cargo test`.

use std::fs;
use std::path::{Path, PathBuf};

use audio2anim::codec::CodecSpec;
use audio2anim::config::Settings;
use audio2anim::kv::KvRecord;
use audio2anim::{audio, checkpoint, data};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn text(bytes: &[u8]) -> Option<&str> {
    std::str::from_utf8(bytes).ok()
}

#[test]
fn checkpoint_seeds() {
    let mut accepted = 0;
    for (path, bytes) in seeds("checkpoint") {
        if let Ok(model) = checkpoint::from_bytes(&bytes) {
            assert_eq!(checkpoint::to_bytes(&model), bytes, "{}", path.display());
            accepted += 1;
        }
    }
    assert!(accepted > 0);
}

#[test]
fn animation_csv_seeds() {
    for (path, bytes) in seeds("animation_csv") {
        let Some(t) = text(&bytes) else { continue };
        if let Ok(loaded) = data::parse_animation_csv(t, None) {
            let out = data::animation_to_csv(&loaded.sequence, &[]);
            let again = data::parse_animation_csv(&out, Some(loaded.sequence.fps)).unwrap();
            assert_eq!(again.sequence.frames, loaded.sequence.frames, "{}", path.display());
        }
    }
}

#[test]
fn wav_seeds() {
    for (_, bytes) in seeds("wav") {
        if let Ok(clip) = audio::decode_wav(std::io::Cursor::new(&bytes)) {
            assert!(clip.samples.iter().all(|s| s.is_finite()));
        }
    }
}

#[test]
fn feature_seeds() {
    for (path, bytes) in seeds("features") {
        let Some(t) = text(&bytes) else { continue };
        if let Ok(frames) = audio::parse_features(t) {
            let out = audio::features_to_text(&frames);
            assert_eq!(audio::parse_features(&out).unwrap(), frames, "{}", path.display());
        }
    }
}

#[test]
fn settings_seeds() {
    for (_, bytes) in seeds("settings") {
        let Some(t) = text(&bytes) else { continue };
        if let Ok(rec) = KvRecord::parse(t) {
            let _ = Settings::resolve(&rec, &KvRecord::new());
        }
    }
}

#[test]
fn codec_seeds() {
    for (path, bytes) in seeds("codec") {
        let Some(t) = text(&bytes) else { continue };
        if let Ok(spec) = CodecSpec::parse(t) {
            assert_eq!(CodecSpec::parse(&spec.to_text()).unwrap(), spec, "{}", path.display());
        }
    }
}

#[test]
fn manifest_seeds() {
    for (_, bytes) in seeds("manifest") {
        if let Some(t) = text(&bytes) {
            let _ = data::parse_manifest(t, Path::new("."));
        }
    }
}
