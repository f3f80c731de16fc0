#![no_main]

use libfuzzer_sys::fuzz_target;
use obslab::model::{CalibState, STATE_DIM};

fuzz_target!(|data: &[u8]| {
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    match CalibState::unpack(&values) {
        Ok(state) => {
            assert_eq!(values.len(), STATE_DIM);
            let packed = state.to_array();
            for (a, b) in packed.iter().zip(&values) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        Err(_) => assert_ne!(values.len(), STATE_DIM),
    }
});
