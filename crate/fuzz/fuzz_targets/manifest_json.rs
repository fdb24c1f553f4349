#![no_main]

use libfuzzer_sys::fuzz_target;
use pda_cli::manifest::RunManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(manifest) = serde_json::from_slice::<RunManifest>(data) {
        let text = serde_json::to_vec(&manifest).unwrap();
        assert_eq!(serde_json::from_slice::<RunManifest>(&text).unwrap(), manifest);
    }
});
