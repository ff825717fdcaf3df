#![no_main]

use hbrick::FlowKey;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(k) = text.parse::<FlowKey>() {
        assert_eq!(k.to_string().parse::<FlowKey>().unwrap(), k);
    }
});
