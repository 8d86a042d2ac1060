//! Replays the fuzz corpus seeds, and random mutations of them, through the
//! properties the fuzz targets check. Runs on stable without libFuzzer.

use std::path::{Path, PathBuf};

use proptest::prelude::*;

use dynlearn::config::RunConfig;
use dynlearn::learning::{Checkpoint, TransitionDataset};
use dynlearn::plants::{read_trajectories_csv, write_trajectories_csv};

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn dataset_csv(data: &[u8]) -> bool {
    let Ok(ds) = TransitionDataset::read_csv(data) else {
        return false;
    };
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    assert_eq!(TransitionDataset::read_csv(buf.as_slice()).unwrap(), ds);
    true
}

fn checkpoint_json(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else {
        return false;
    };
    let Ok(ckpt) = Checkpoint::from_json(text) else {
        return false;
    };
    let again = Checkpoint::new(&ckpt.to_model().unwrap(), ckpt.training.clone());
    assert_eq!(Checkpoint::from_json(&again.to_json().unwrap()).unwrap(), again);
    true
}

fn config(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else {
        return false;
    };
    let mut any = false;
    for cfg in [RunConfig::from_toml_str(text), RunConfig::from_json_str(text)].into_iter().flatten() {
        let _ = cfg.gen_spec();
        assert!(RunConfig::from_json_str(&cfg.to_json()).is_ok());
        any = true;
    }
    any
}

fn trajectory_csv(data: &[u8]) -> bool {
    let Ok(trajs) = read_trajectories_csv(data) else {
        return false;
    };
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, &trajs).unwrap();
    assert_eq!(read_trajectories_csv(buf.as_slice()).unwrap().len(), trajs.len());
    true
}

const TARGETS: [(&str, fn(&[u8]) -> bool); 4] = [
    ("dataset_csv", dataset_csv),
    ("checkpoint_json", checkpoint_json),
    ("config", config),
    ("trajectory_csv", trajectory_csv),
];

#[test]
fn seeds_are_accepted() {
    for (name, check) in TARGETS {
        let seeds = corpus(name);
        assert!(!seeds.is_empty(), "{name} has no seeds");
        for (i, seed) in seeds.iter().enumerate() {
            assert!(check(seed), "{name} seed {i} rejected");
        }
    }
}

#[derive(Clone, Debug)]
enum Edit {
    Flip(usize, u8),
    Delete(usize, usize),
    Insert(usize, Vec<u8>),
    Truncate(usize),
}

fn edit() -> impl Strategy<Value = Edit> {
    prop_oneof![
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Edit::Flip(i, b)),
        (any::<usize>(), 1usize..16).prop_map(|(i, n)| Edit::Delete(i, n)),
        (any::<usize>(), prop::collection::vec(prop::sample::select(b"0123456789.,-e\n\"{}[]=:NaInf ".to_vec()), 1..8))
            .prop_map(|(i, b)| Edit::Insert(i, b)),
        any::<usize>().prop_map(Edit::Truncate),
    ]
}

fn apply(seed: &[u8], edits: &[Edit]) -> Vec<u8> {
    let mut v = seed.to_vec();
    for e in edits {
        let at = |i: usize, len: usize| if len == 0 { 0 } else { i % len };
        match e {
            Edit::Flip(i, b) if !v.is_empty() => {
                let k = at(*i, v.len());
                v[k] = *b;
            }
            Edit::Delete(i, n) if !v.is_empty() => {
                let k = at(*i, v.len());
                let end = (k + n).min(v.len());
                v.drain(k..end);
            }
            Edit::Insert(i, bytes) => {
                let k = at(*i, v.len() + 1);
                v.splice(k..k, bytes.iter().copied());
            }
            Edit::Truncate(i) => {
                let k = at(*i, v.len() + 1);
                v.truncate(k);
            }
            _ => {}
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mutated_seeds_never_panic(target in 0usize..4, pick in any::<usize>(), edits in prop::collection::vec(edit(), 1..6)) {
        let (name, check) = TARGETS[target];
        let seeds = corpus(name);
        let input = apply(&seeds[pick % seeds.len()], &edits);
        check(&input);
    }
}
