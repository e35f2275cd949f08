#![no_main]

use libfuzzer_sys::fuzz_target;
use unlinkability::protocol::ProtocolConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for json in [false, true] {
        if let Ok(cfg) = ProtocolConfig::parse(text, json) {
            let _ = cfg.validate();
        }
    }
});
