#![no_main]

use dynlearn::learning::TransitionDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ds) = TransitionDataset::read_csv(data) else {
        return;
    };
    // anything accepted must survive a write/read round trip unchanged
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).expect("accepted dataset writes");
    let back = TransitionDataset::read_csv(buf.as_slice()).expect("written dataset reads");
    assert_eq!(back, ds);
});
