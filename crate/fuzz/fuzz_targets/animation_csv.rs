#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(loaded) = audio2anim::data::parse_animation_csv(text, None) {
            let out = audio2anim::data::animation_to_csv(&loaded.sequence, &[]);
            let again = audio2anim::data::parse_animation_csv(&out, Some(loaded.sequence.fps)).unwrap();
            assert_eq!(again.sequence.frames, loaded.sequence.frames);
        }
    }
});
