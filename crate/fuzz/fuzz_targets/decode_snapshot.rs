#![no_main]

use hbrick::CountMinSketch;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sk) = CountMinSketch::from_snapshot(data) {
        let again = CountMinSketch::from_snapshot(&sk.to_snapshot()).unwrap();
        assert_eq!(again, sk);
    }
});
