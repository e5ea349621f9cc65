#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = audio2anim::audio::decode_wav(std::io::Cursor::new(data)) {
        assert!(clip.samples.iter().all(|s| s.is_finite()));
    }
});
