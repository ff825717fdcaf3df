#![no_main]

use hbrick::FlowKey;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(k) = FlowKey::decode(data) {
        assert_eq!(FlowKey::decode(&k.encode()).unwrap(), k);
    }
});
