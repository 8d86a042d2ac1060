#![no_main]

use dynlearn::learning::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ckpt) = Checkpoint::from_json(text) {
        let model = ckpt.to_model().expect("validated checkpoint builds");
        let again = Checkpoint::new(&model, ckpt.training.clone());
        assert_eq!(Checkpoint::from_json(&again.to_json().unwrap()).unwrap(), again);
    }
});
