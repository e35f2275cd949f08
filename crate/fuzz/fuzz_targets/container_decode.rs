#![no_main]

use libfuzzer_sys::fuzz_target;
use unlinkability::container::TemplateDatabase;

fuzz_target!(|data: &[u8]| {
    if let Ok(db) = TemplateDatabase::decode(data) {
        assert_eq!(db.encode().unwrap(), data);
    }
});
