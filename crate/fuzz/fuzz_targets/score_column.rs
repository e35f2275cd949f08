#![no_main]

use libfuzzer_sys::fuzz_target;
use unlinkability::score::parse_score_column;
use unlinkability::{Label, ScoreSet};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(values) = parse_score_column(text, Label::Mated) else {
        return;
    };
    assert!(values.iter().all(|v| v.is_finite()));
    // Whatever parses must survive a write/parse cycle unchanged.
    if let Ok(set) = ScoreSet::new(values.clone(), values.clone(), "fuzz") {
        let mut out = Vec::new();
        set.write_column(Label::Mated, &mut out).unwrap();
        let again = parse_score_column(std::str::from_utf8(&out).unwrap(), Label::Mated).unwrap();
        assert!(again.iter().map(|v| v.to_bits()).eq(values.iter().map(|v| v.to_bits())));
    }
});
