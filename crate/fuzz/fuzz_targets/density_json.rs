#![no_main]

use libfuzzer_sys::fuzz_target;
use unlinkability::linkability::profile_from_densities;
use unlinkability::DensityPair;

fuzz_target!(|data: &[u8]| {
    let Ok(dp) = serde_json::from_slice::<DensityPair>(data) else {
        return;
    };
    for omega in [1e-4, 1.0] {
        if let Ok(p) = profile_from_densities(&dp, omega) {
            assert!((0.0..=1.0).contains(&p.d_sys));
            assert!(p.d_local.iter().all(|d| (0.0..=1.0).contains(d)));
        }
    }
});
