#![no_main]

use libfuzzer_sys::fuzz_target;
use pda_cli::ablate::SweepSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = SweepSpec::from_json(text) {
        assert!(!spec.rows().is_empty());
        let again = SweepSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(again, spec);
    }
});
