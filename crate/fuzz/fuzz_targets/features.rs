#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(frames) = audio2anim::audio::parse_features(text) {
            let out = audio2anim::audio::features_to_text(&frames);
            assert_eq!(audio2anim::audio::parse_features(&out).unwrap(), frames);
        }
    }
});
