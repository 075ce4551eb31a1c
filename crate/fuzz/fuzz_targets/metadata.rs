#![no_main]

use dwafm::data::SeriesMeta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    let Ok(s) = std::str::from_utf8(bytes) else { return };
    if let Ok(meta) = SeriesMeta::from_json_str(s) {
        let again = SeriesMeta::from_json_str(&meta.to_json_string()).expect("round trip");
        assert_eq!(meta, again);
        let _ = meta.calendar();
    }
});
