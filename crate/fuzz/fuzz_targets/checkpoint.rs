#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = audio2anim::checkpoint::from_bytes(data) {
        // anything accepted must serialize back to the same bytes
        assert_eq!(audio2anim::checkpoint::to_bytes(&model), data);
    }
});
