//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use prefcluster::ratings_io::{self, RawRatingMatrix};
use prefcluster::rbm::RbmParams;
use prefcluster::synth::{self, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Environment variable pointing at a converted Jester ratings file
/// (delimited text). When present, the paper-number criteria run on it;
/// otherwise they run on the synthetic surrogate corpus.
pub const JESTER_ENV: &str = "PREFCLUSTER_JESTER_CSV";
/// Set to "1" when the Jester file carries a leading rated-count column.
pub const JESTER_COUNT_ENV: &str = "PREFCLUSTER_JESTER_COUNT_COLUMN";
/// Set to "1" to run criterion 1 on the full matrix instead of the
/// 10,000-user subsample.
pub const JESTER_FULL_ENV: &str = "PREFCLUSTER_JESTER_FULL";

pub struct Corpus {
    pub path: PathBuf,
    pub description: String,
}

fn subsample(raw: &RawRatingMatrix, n: usize, seed: u64) -> RawRatingMatrix {
    if n >= raw.n_users() {
        return raw.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, raw.n_users(), n);
    let mut values = Vec::with_capacity(n * raw.n_jokes());
    for idx in picked.iter() {
        values.extend_from_slice(raw.row(idx));
    }
    RawRatingMatrix::from_values(n, raw.n_jokes(), values).expect("subsample is valid")
}

/// Materialize a ratings file for the paper-number criteria: the real
/// Jester data when the env var is set (subsampled to `n_users` unless the
/// full run is requested), otherwise a synthetic corpus in the same regime.
pub fn paper_corpus(dir: &Path, n_users: usize, seed: u64, allow_full: bool) -> Corpus {
    let path = dir.join(format!("ratings-{seed}.csv"));
    if let Ok(jester) = std::env::var(JESTER_ENV) {
        let has_count = std::env::var(JESTER_COUNT_ENV).is_ok_and(|v| v == "1");
        let file = std::fs::File::open(&jester)
            .unwrap_or_else(|e| panic!("{JESTER_ENV}={jester}: {e}"));
        let raw = ratings_io::load_ratings(std::io::BufReader::new(file), has_count)
            .expect("Jester file parses");
        let full = allow_full && std::env::var(JESTER_FULL_ENV).is_ok_and(|v| v == "1");
        let (matrix, description) = if full {
            let desc = format!("jester full ({} users)", raw.n_users());
            (raw, desc)
        } else {
            (
                subsample(&raw, n_users, seed),
                format!("jester subsample ({n_users} users, seed {seed})"),
            )
        };
        let out = std::fs::File::create(&path).unwrap();
        ratings_io::write_raw_matrix(&matrix, std::io::BufWriter::new(out), false).unwrap();
        return Corpus { path, description };
    }

    let corpus = synth::generate(&SynthConfig {
        n_users,
        n_jokes: 100,
        seed: 900 + seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let out = std::fs::File::create(&path).unwrap();
    ratings_io::write_raw_matrix(&corpus, std::io::BufWriter::new(out), false).unwrap();
    Corpus {
        path,
        description: format!("synthetic surrogate ({n_users} users, seed {})", 900 + seed),
    }
}

/// Exact distribution of a tiny RBM by enumerating every joint state.
pub struct TinyRbmOracle {
    n_visible: usize,
    n_hidden: usize,
    /// Unnormalized probability per (v, h) state, indexed by bit patterns.
    weights: Vec<f64>,
    partition: f64,
}

impl TinyRbmOracle {
    pub fn new(params: &RbmParams) -> Self {
        let nv = params.n_visible();
        let nh = params.n_hidden();
        assert!(nv + nh <= 20, "oracle enumerates 2^(nv+nh) states");
        let mut weights = Vec::with_capacity(1 << (nv + nh));
        let mut partition = 0.0;
        for state in 0..(1u32 << (nv + nh)) {
            let v: Vec<f64> = (0..nv).map(|i| ((state >> i) & 1) as f64).collect();
            let h: Vec<f64> = (0..nh).map(|j| ((state >> (nv + j)) & 1) as f64).collect();
            let mut energy = 0.0;
            for i in 0..nv {
                energy += params.visible_bias()[i] * v[i];
            }
            for j in 0..nh {
                energy += params.hidden_bias()[j] * h[j];
                for i in 0..nv {
                    energy += params.weight(j, i) * h[j] * v[i];
                }
            }
            let w = energy.exp();
            weights.push(w);
            partition += w;
        }
        Self {
            n_visible: nv,
            n_hidden: nh,
            weights,
            partition,
        }
    }

    fn state_bits(&self, state: u32) -> (u32, u32) {
        let v = state & ((1 << self.n_visible) - 1);
        let h = state >> self.n_visible;
        (v, h)
    }

    /// Exact P(h_j = 1 | v) for a fully observed visible pattern.
    pub fn hidden_conditional(&self, v_bits: u32, j: usize) -> f64 {
        let mut on = 0.0;
        let mut total = 0.0;
        for state in 0..self.weights.len() as u32 {
            let (v, h) = self.state_bits(state);
            if v != v_bits {
                continue;
            }
            total += self.weights[state as usize];
            if (h >> j) & 1 == 1 {
                on += self.weights[state as usize];
            }
        }
        on / total
    }

    /// Exact P(v_i = 1 | h) for a hidden pattern.
    pub fn visible_conditional(&self, h_bits: u32, i: usize) -> f64 {
        let mut on = 0.0;
        let mut total = 0.0;
        for state in 0..self.weights.len() as u32 {
            let (v, h) = self.state_bits(state);
            if h != h_bits {
                continue;
            }
            total += self.weights[state as usize];
            if (v >> i) & 1 == 1 {
                on += self.weights[state as usize];
            }
        }
        on / total
    }

    /// Exact marginal P(v_i = 1).
    pub fn visible_marginal(&self, i: usize) -> f64 {
        let mut on = 0.0;
        for state in 0..self.weights.len() as u32 {
            let (v, _) = self.state_bits(state);
            if (v >> i) & 1 == 1 {
                on += self.weights[state as usize];
            }
        }
        on / self.partition
    }
}
