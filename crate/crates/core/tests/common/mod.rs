#![allow(dead_code)]

use std::path::Path;
use std::process::ExitCode;

use driftscope::events::{delta_time_channel, StepSeries};
use driftscope::lds::LdSystem;
use driftscope::seqmodel::{ModelConfig, ModelParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One event per step with a random feature, value and gap.
pub fn random_steps(n_features: usize, t_len: usize, seed: u64) -> StepSeries {
    let mut rng = rng(seed);
    let dim = 2 * n_features + 1;
    let mut x = vec![0.0; t_len * dim];
    let mut feats = Vec::new();
    let mut times = Vec::new();
    let mut now = 0.0;
    for t in 0..t_len {
        let f = rng.random_range(0..n_features);
        let gap = rng.random_range(0.0..7200.0);
        now += gap;
        x[t * dim + f] = rng.random_range(-2.0..2.0);
        x[t * dim + n_features + f] = 1.0;
        x[t * dim + 2 * n_features] = delta_time_channel(gap);
        feats.push(f);
        times.push(now);
    }
    let raw = (0..t_len).map(|t| x[t * dim + feats[t]]).collect();
    StepSeries::from_parts(n_features, x, feats, times, raw).unwrap()
}

/// Initialized parameters with a random, non-zero output head.
pub fn random_params(hidden: usize, dim: usize, seed: u64, attention: bool) -> ModelParams {
    let config = ModelConfig { hidden_size: hidden, attention_head: attention, seed, ..Default::default() };
    let mut p = ModelParams::init(&config, dim).unwrap();
    let mut rng = rng(seed ^ 0x5eed);
    for w in p.w_out.iter_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    p.b_out = rng.random_range(-0.5..0.5);
    for b in p.b.iter_mut() {
        *b += rng.random_range(-0.2..0.2);
    }
    p
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random system with `n, d <= 5`, spectral radius near 1, and a random
/// PSD form half of the time.
pub fn random_system(seed: u64) -> (LdSystem, Vec<DVector<f64>>) {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=5);
    let d = rng.random_range(1..=5);
    let t_len = rng.random_range(1..=20);
    let a = random_matrix(&mut rng, n, n, 1.0 / (n as f64).sqrt());
    let b = random_matrix(&mut rng, n, d, 1.0);
    let h0 = random_vector(&mut rng, n, 1.0);
    let q = if rng.random_bool(0.5) {
        let m = random_matrix(&mut rng, n, n, 1.0);
        Some(m.transpose() * &m)
    } else {
        None
    };
    let x = (0..t_len).map(|_| random_vector(&mut rng, d, 1.0)).collect();
    (LdSystem::new(a, b, h0, q).unwrap(), x)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn cli(args: &[&str]) {
    let mut full = vec!["driftscope"];
    full.extend_from_slice(args);
    let code = driftscope::cli::main_with_args(full.iter().copied());
    assert_eq!(code, ExitCode::SUCCESS, "driftscope {}", args.join(" "));
}

/// Small seeded gen-data, train, explain, evaluate run; returns the
/// results CSV bytes.
pub fn seeded_pipeline(dir: &Path) -> Vec<u8> {
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let out = dir.to_string_lossy().into_owned();
    cli(&[
        "gen-data",
        "--seed",
        "11",
        "--n-episodes",
        "240",
        "--train-fraction",
        "0.5",
        "--validation-fraction",
        "0.2",
        "--out-dir",
        &out,
    ]);
    cli(&[
        "train",
        "--seed",
        "11",
        "--events",
        &d("events.jsonl"),
        "--hidden-size",
        "8",
        "--max-epochs",
        "4",
        "--learning-rate",
        "0.01",
        "--attention-head",
        "--bins-per-feature",
        "5",
        "--out-dir",
        &out,
    ]);
    cli(&[
        "explain",
        "--seed",
        "11",
        "--events",
        &d("events.jsonl"),
        "--checkpoint",
        &d("checkpoint.json"),
        "--bins",
        &d("bins.json"),
        "--truth",
        &d("truth.jsonl"),
        "--methods",
        "all",
        "--k",
        "3",
        "--m",
        "16",
        "--out-dir",
        &out,
    ]);
    cli(&[
        "evaluate",
        "--seed",
        "11",
        "--explanations",
        &d("explanations.csv"),
        "--truth",
        &d("truth.jsonl"),
        "--k",
        "1,3",
        "--out-dir",
        &out,
    ]);
    std::fs::read(dir.join("results.csv")).unwrap()
}

pub const GOLDEN_RESULTS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/results.csv");

/// Compare against the committed golden file; `DRIFTSCOPE_BLESS=1`
/// rewrites it.
pub fn check_golden(bytes: &[u8]) -> bool {
    if std::env::var("DRIFTSCOPE_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(Path::new(GOLDEN_RESULTS).parent().unwrap()).unwrap();
        std::fs::write(GOLDEN_RESULTS, bytes).unwrap();
        return true;
    }
    match std::fs::read(GOLDEN_RESULTS) {
        Ok(golden) => golden == bytes,
        Err(_) => false,
    }
}
