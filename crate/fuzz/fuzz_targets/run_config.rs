#![no_main]

use libfuzzer_sys::fuzz_target;
use photodet_core::config::{load, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::parse(text) else { return };
    if let Ok(resolved) = cfg.resolve_in(text) {
        // The written form must resolve to the same configuration.
        let again = load(&resolved.to_config().to_toml()).expect("resolved config reloads");
        assert_eq!(again.to_config(), resolved.to_config());
    }
});
