//! Replays the checked-in fuzz corpus, plus every truncation and a sweep of
//! byte flips of each seed, through the binary decoders.

use std::path::PathBuf;

use pda_core::io::{
    decode_items, decode_memory, decode_memory_header, decode_params, decode_split_header, encode_items, encode_memory,
    encode_params,
};
use pda_core::simgen::EpisodeConfig;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn variants(seed: &[u8]) -> impl Iterator<Item = Vec<u8>> + '_ {
    let cuts = (0..seed.len()).map(|n| seed[..n].to_vec());
    let flips = (0..seed.len()).flat_map(move |i| {
        [0x01u8, 0x80, 0xff].into_iter().map(move |m| {
            let mut v = seed.to_vec();
            v[i] ^= m;
            v
        })
    });
    std::iter::once(seed.to_vec()).chain(cuts).chain(flips)
}

fn check_memory(data: &[u8]) -> bool {
    let header = decode_memory_header(data);
    match decode_memory(data) {
        Ok(memory) => {
            assert_eq!(header.unwrap().slots_per_class, memory.slots_per_class());
            assert_eq!(encode_memory(&memory), data);
            true
        }
        Err(_) => false,
    }
}

fn check_params(data: &[u8]) -> bool {
    match decode_params(data) {
        Ok(file) => {
            assert_eq!(encode_params(&file.params, file.aligner.as_ref()), data);
            true
        }
        Err(_) => false,
    }
}

fn check_episode(data: &[u8]) -> bool {
    let header = decode_split_header(data);
    match decode_items(data) {
        Ok((h, items)) => {
            assert_eq!(header.unwrap(), h);
            assert_eq!(encode_items(&items, h.num_classes, (h.channels, h.height, h.width)).unwrap(), data);
            true
        }
        Err(_) => false,
    }
}

fn replay(target: &str, check: fn(&[u8]) -> bool) {
    let mut valid_seeds = 0;
    for (_, seed) in corpus(target) {
        if check(&seed) {
            valid_seeds += 1;
        }
        for v in variants(&seed).skip(1) {
            check(&v);
        }
    }
    assert!(valid_seeds > 0, "{target} corpus has no valid seed");
}

#[test]
fn memory_corpus() {
    replay("memory_file", check_memory);
}

#[test]
fn params_corpus() {
    replay("params_file", check_params);
}

#[test]
fn episode_corpus() {
    replay("episode_file", check_episode);
}

#[test]
fn episode_config_corpus() {
    let mut valid = 0;
    for (_, seed) in corpus("episode_config_json") {
        for v in variants(&seed) {
            let Ok(text) = std::str::from_utf8(&v) else { continue };
            if let Ok(config) = EpisodeConfig::from_json(text) {
                assert_eq!(EpisodeConfig::from_json(&config.to_json()).unwrap(), config);
                valid += 1;
            }
        }
    }
    assert!(valid > 0);
}
