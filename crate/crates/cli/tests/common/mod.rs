#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_MODEL: &[&str] = &[
    "--n-layers", "1", "--n-heads", "2", "--d-model", "16", "--d-ff", "32", "--max-seq-len", "64",
];

pub fn ctglab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctglab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ctglab")
}

/// Runs and asserts success, returning stderr for diagnostics.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ctglab(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "ctglab {args:?} failed ({:?}):\n{stderr}", out.status.code());
    stderr
}

/// Runs, expecting the given exit code; returns stderr.
pub fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = ctglab(dir, args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "ctglab {args:?}:\n{stderr}");
    stderr
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

pub fn csv_rows(path: impl AsRef<Path>) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path.as_ref()).unwrap();
    r.deserialize().map(|row| row.unwrap()).collect()
}

const SUBJECTS: &[&str] = &[
    "the farmer", "a young girl", "the old sailor", "my brother", "the teacher", "a small dog", "the king",
    "our neighbour", "the doctor", "a tired soldier", "the baker", "her mother", "the children", "a stranger",
    "the captain", "his friend", "the cat", "a merchant", "the queen", "the students",
];
const VERBS: &[&str] = &[
    "walked to", "looked at", "found", "carried", "painted", "visited", "remembered", "cleaned", "watched",
    "opened", "followed", "built", "sold", "bought", "left", "repaired", "described", "forgot", "reached",
    "crossed",
];
const OBJECTS: &[&str] = &[
    "the river", "a wooden box", "the market", "the red door", "an old map", "the garden", "a letter",
    "the bridge", "the tall tower", "a silver coin", "the village", "the forest", "a broken cart", "the harbour",
    "the library", "a green field", "the castle", "a quiet road", "the kitchen", "the mountain",
];
const TAILS: &[&str] = &[
    "in the morning", "before the rain", "after dinner", "with great care", "without a word", "at night",
    "during the storm", "for the first time", "once again", "near the sea", "in winter", "on a cold day",
];
const LINKS: &[&str] = &["and then", "but", "because", "so", "while", "although"];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let mut s = format!(
        "{} {} {}",
        SUBJECTS.choose(rng).unwrap(),
        VERBS.choose(rng).unwrap(),
        OBJECTS.choose(rng).unwrap()
    );
    if rng.random_bool(0.5) {
        s.push(' ');
        s.push_str(TAILS.choose(rng).unwrap());
    }
    if rng.random_bool(0.3) {
        s = format!(
            "{s} {} {} {} {}",
            LINKS.choose(rng).unwrap(),
            SUBJECTS.choose(rng).unwrap(),
            VERBS.choose(rng).unwrap(),
            OBJECTS.choose(rng).unwrap()
        );
    }
    let mut c = s.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    format!("{first}{}.", c.as_str())
}

/// Seeded toy-English text of at least `bytes` bytes in blank-line-separated paragraphs.
pub fn toy_english(bytes: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(bytes + 1024);
    while out.len() < bytes {
        let n = rng.random_range(4..10);
        let para: Vec<String> = (0..n).map(|_| sentence(&mut rng)).collect();
        out.push_str(&para.join(" "));
        out.push_str("\n\n");
    }
    out
}

/// Ingests `text` into `dir/name` and returns the corpus path.
pub fn ingest(dir: &Path, name: &str, text: &str) -> PathBuf {
    let input = dir.join(format!("{name}.txt"));
    std::fs::write(&input, text).unwrap();
    ok(dir, &["ingest", "--input", input.to_str().unwrap(), "--out", name]);
    dir.join(name)
}

/// Trains a one-layer width-16 model for `steps` steps.
pub fn tiny_train(dir: &Path, corpus: &str, out: &str, steps: usize, extra: &[&str]) {
    let steps = steps.to_string();
    let mut args = vec![
        "train", "--corpus", corpus, "--out", out, "--max-steps", &steps, "--seq-len", "32", "--batch-size", "2",
        "--log-every", "0",
    ];
    args.extend_from_slice(TINY_MODEL);
    args.extend_from_slice(extra);
    ok(dir, &args);
}
