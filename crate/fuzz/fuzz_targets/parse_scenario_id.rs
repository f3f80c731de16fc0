#![no_main]

use libfuzzer_sys::fuzz_target;
use obslab::scenarios::ScenarioId;

fuzz_target!(|text: &str| {
    if let Ok(id) = text.parse::<ScenarioId>() {
        assert_eq!(id.to_string().to_lowercase(), text.to_lowercase());
    }
});
