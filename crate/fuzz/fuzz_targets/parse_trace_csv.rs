#![no_main]

use std::io::Cursor;

use hbrick::traces::{format_line, parse_line, TraceReader};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for rec in TraceReader::new(Cursor::new(data)) {
        let Ok(rec) = rec else { break };
        let line = format_line(&rec);
        assert_eq!(parse_line(&line, 1).unwrap(), Some((rec.key, rec.size)));
    }
});
