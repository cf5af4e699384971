//! Hopkins statistic for cluster-tendency testing.
//!
//! The statistic compares nearest-neighbor distances of real data points
//! against those of uniform points drawn in the data's bounding box:
//! h = sum(w) / (sum(u) + sum(w)), where w are real-to-nearest-other-row
//! distances and u are uniform-to-nearest-row distances. Under this
//! orientation, values near 0 indicate clusterable data and values near 0.5
//! indicate a uniform cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one Hopkins test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopkinsResult {
    /// Statistic in [0, 1]; low means clusterable.
    pub h: f64,
    /// Number of sampled rows / uniform probes.
    pub m: usize,
    pub seed: u64,
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Nearest-neighbor distance from `point` to any row, optionally skipping
/// one index (itself). Exact brute-force scan.
fn nearest_distance(point: &[f64], data: &[Vec<f64>], skip: Option<usize>) -> f64 {
    let mut best = f64::INFINITY;
    for (idx, row) in data.iter().enumerate() {
        if Some(idx) == skip {
            continue;
        }
        let d = squared_distance(point, row);
        if d < best {
            best = d;
        }
    }
    best.sqrt()
}

/// Default sample size: a tenth of the rows, capped at 500.
pub fn default_sample_size(n_rows: usize) -> usize {
    ((n_rows as f64 * 0.1).ceil() as usize).clamp(1, 500)
}

/// Compute the Hopkins statistic on an n x d real matrix with m sampled
/// rows and m uniform probes, deterministic per seed.
pub fn hopkins(data: &[Vec<f64>], m: usize, seed: u64) -> Result<HopkinsResult> {
    let n = data.len();
    if n == 0 || data[0].is_empty() {
        return Err(Error::Shape("hopkins requires a non-empty matrix".into()));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().position(|r| r.len() != d) {
        return Err(Error::Shape(format!(
            "ragged rows: row 0 has {d} columns, row {bad} has {}",
            data[bad].len()
        )));
    }
    if m == 0 {
        return Err(Error::Sampling("sample size m must be positive".into()));
    }
    if m >= n {
        return Err(Error::Sampling(format!(
            "sample size m = {m} must be smaller than the {n} data rows"
        )));
    }

    // Per-dimension bounding box. Individual flat dimensions are fine (the
    // uniform probe takes the constant); only a fully collapsed box -- all
    // rows identical -- is degenerate.
    let mut lo = data[0].clone();
    let mut hi = data[0].clone();
    for row in &data[1..] {
        for (i, &v) in row.iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    if lo == hi {
        return Err(Error::Degenerate(
            "all rows are identical; the bounding box has zero volume".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = rand::seq::index::sample(&mut rng, n, m);

    let mut w_sum = 0.0;
    for idx in sampled.iter() {
        w_sum += nearest_distance(&data[idx], data, Some(idx));
    }

    let mut probe = vec![0.0; d];
    let mut u_sum = 0.0;
    for _ in 0..m {
        for i in 0..d {
            probe[i] = lo[i] + rng.random::<f64>() * (hi[i] - lo[i]);
        }
        u_sum += nearest_distance(&probe, data, None);
    }

    let denom = u_sum + w_sum;
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "all nearest-neighbor distances are zero".into(),
        ));
    }
    Ok(HopkinsResult {
        h: w_sum / denom,
        m,
        seed,
    })
}
