#![no_main]

use audio2anim::config::Settings;
use audio2anim::kv::KvRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rec) = KvRecord::parse(text) {
            let _ = Settings::resolve(&rec, &KvRecord::new());
        }
    }
});
