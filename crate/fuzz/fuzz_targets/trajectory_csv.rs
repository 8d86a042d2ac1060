#![no_main]

use dynlearn::plants::{read_trajectories_csv, write_trajectories_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(trajs) = read_trajectories_csv(data) else {
        return;
    };
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, &trajs).expect("accepted trajectories write");
    let back = read_trajectories_csv(buf.as_slice()).expect("written trajectories read");
    assert_eq!(back.len(), trajs.len());
});
