#![no_main]

use dwafm::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    let Ok(s) = std::str::from_utf8(bytes) else { return };
    if let Ok(cfg) = RunConfig::from_toml_str(s) {
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).expect("snapshot reloads");
        assert_eq!(cfg, again);
    }
});
