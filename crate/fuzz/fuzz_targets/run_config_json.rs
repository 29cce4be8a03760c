#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = driftplace::experiment::RunConfig::from_json(text) {
            let again = driftplace::experiment::RunConfig::from_json(&config.to_json()).expect("round trip");
            assert_eq!(again, config);
        }
    }
});
