#![no_main]

use dwafm::model::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    let Ok(s) = std::str::from_utf8(bytes) else { return };
    if let Ok(m) = Manifest::from_toml_str(s) {
        let again = Manifest::from_toml_str(&m.to_toml_string()).expect("manifest reloads");
        assert_eq!(m.params, again.params);
    }
});
