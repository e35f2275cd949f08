#![no_main]

use libfuzzer_sys::fuzz_target;
use unlinkability::score::parse_labeled_csv;
use unlinkability::ScoreSet;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(scores) = parse_labeled_csv(text) {
        if let Ok(set) = ScoreSet::from_labeled(scores, "fuzz") {
            let csv = set.to_labeled_csv_string();
            let back = ScoreSet::from_labeled(parse_labeled_csv(&csv).unwrap(), "fuzz").unwrap();
            assert_eq!(back.to_labeled_csv_string(), csv);
        }
    }
});
