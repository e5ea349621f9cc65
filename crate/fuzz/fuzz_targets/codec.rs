#![no_main]

use audio2anim::codec::CodecSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = CodecSpec::parse(text) {
            assert_eq!(CodecSpec::parse(&spec.to_text()).unwrap(), spec);
        }
    }
});
