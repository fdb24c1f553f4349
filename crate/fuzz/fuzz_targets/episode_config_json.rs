#![no_main]

use libfuzzer_sys::fuzz_target;
use pda_core::simgen::EpisodeConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = EpisodeConfig::from_json(text) {
        assert_eq!(EpisodeConfig::from_json(&config.to_json()).unwrap(), config);
    }
});
