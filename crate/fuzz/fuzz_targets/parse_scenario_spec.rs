#![no_main]

use libfuzzer_sys::fuzz_target;
use obslab::scenarios::ScenarioSpec;

fuzz_target!(|text: &str| {
    if let Ok(spec) = ScenarioSpec::from_json(text) {
        assert!(spec.dt > 0.0);
        assert!(!spec.profiles.is_empty());
        let again = serde_json::to_string(&spec).unwrap();
        assert_eq!(ScenarioSpec::from_json(&again).unwrap(), spec);
    }
});
