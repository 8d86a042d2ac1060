#![no_main]

use dynlearn::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for parsed in [RunConfig::from_toml_str(text), RunConfig::from_json_str(text)] {
        if let Ok(cfg) = parsed {
            let _ = cfg.gen_spec();
            let _ = cfg.hash();
            assert!(RunConfig::from_json_str(&cfg.to_json()).is_ok());
        }
    }
});
