#![no_main]

use libfuzzer_sys::fuzz_target;
use obslab::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    match RunConfig::from_json(text) {
        Ok(cfg) => {
            // Anything accepted must survive a round trip and resolve to a scenario.
            let again = serde_json::to_string(&cfg).unwrap();
            assert_eq!(RunConfig::from_json(&again).unwrap(), cfg);
            let _ = cfg.scenario_spec();
        }
        Err(e) => assert_eq!(e.exit_code(), 2, "{e}"),
    }
});
