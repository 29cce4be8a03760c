#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(field) = driftplace::ocean::parse_field_csv(text) {
            let again = driftplace::ocean::field_to_csv(&field).expect("parsed fields are regular");
            assert_eq!(driftplace::ocean::parse_field_csv(&again).expect("round trip"), field);
        }
    }
});
