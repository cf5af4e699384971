//! k-Means (Lloyd) and k-Modes clustering with Cao or random initialization,
//! plus elbow-based selection of k.
//!
//! k-Modes follows the four-step loop: seed k centroids from data points,
//! assign by matching dissimilarity, update each centroid to the column-wise
//! mode of its members, repeat until the centroids stop changing. On binary
//! data the matching dissimilarity coincides with squared Euclidean
//! distance, which keeps the WCSS elbow reading coherent across both
//! algorithms.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings_io::BinaryRatingMatrix;
use crate::seeds::indexed_seed;

/// Version tag of the persisted cluster-model file.
pub const MODEL_FORMAT: &str = "prefcluster-model-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    KMeans,
    KModes,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::KMeans => "kmeans",
            Algorithm::KModes => "kmodes",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Algorithm::KMeans),
            "kmodes" => Ok(Algorithm::KModes),
            other => Err(Error::Config(format!(
                "unknown algorithm {other:?} (expected kmeans or kmodes)"
            ))),
        }
    }
}

/// Centroid seeding strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Density, then density x distance: deterministic on a given dataset.
    Cao,
    /// k distinct data rows drawn without replacement.
    Random,
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Init::Cao => "cao",
            Init::Random => "random",
        })
    }
}

impl FromStr for Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cao" => Ok(Init::Cao),
            "random" => Ok(Init::Random),
            other => Err(Error::Config(format!(
                "unknown init {other:?} (expected cao or random)"
            ))),
        }
    }
}

/// A fitted clustering: algorithm tag, centroids, final cost, iterations.
///
/// Centroids are stored as reals; for k-modes every entry is exactly 0.0 or
/// 1.0. `final_cost` is WCSS for k-means and the total matching
/// dissimilarity for k-modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub algorithm: Algorithm,
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub final_cost: f64,
    pub n_iter: usize,
    pub seed: u64,
}

impl ClusterModel {
    /// k-modes centroids as binary rows; errors if any entry is fractional.
    pub fn binary_centroids(&self) -> Result<Vec<Vec<i8>>> {
        self.centroids
            .iter()
            .map(|c| {
                c.iter()
                    .map(|&v| {
                        if v == 0.0 {
                            Ok(0i8)
                        } else if v == 1.0 {
                            Ok(1i8)
                        } else {
                            Err(Error::Config(format!(
                                "centroid entry {v} is not binary"
                            )))
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Cost after every assign+update round of a single fit; used to check the
/// monotone-descent contract.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub round_costs: Vec<f64>,
}

/// Per-k costs for the elbow method. `ks` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    pub costs: Vec<f64>,
}

/// Count of positions where two binary vectors differ (simple matching /
/// Hamming dissimilarity).
pub fn matching_dissimilarity(x: &[i8], y: &[i8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "vectors have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    for v in x.iter().chain(y) {
        if !matches!(v, 0 | 1) {
            return Err(Error::Analysis(format!(
                "matching dissimilarity requires entries in {{0, 1}}, found {v}"
            )));
        }
    }
    Ok(matching_unchecked(x, y))
}

#[inline]
fn matching_unchecked(x: &[i8], y: &[i8]) -> usize {
    x.iter().zip(y).filter(|(a, b)| a != b).count()
}

/// Sum of squared per-coordinate differences.
pub fn squared_euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "vectors have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(sq_euclidean_unchecked(x, y))
}

#[inline]
fn sq_euclidean_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Argmin label per row under matching dissimilarity; exact ties go to the
/// lowest cluster index.
pub fn assign_matching(centroids: &[Vec<i8>], data: &BinaryRatingMatrix) -> Result<Vec<usize>> {
    if centroids.is_empty() {
        return Err(Error::Config("assignment needs at least one centroid".into()));
    }
    for c in centroids {
        if c.len() != data.n_jokes() {
            return Err(Error::Shape(format!(
                "centroid width {} does not match data width {}",
                c.len(),
                data.n_jokes()
            )));
        }
    }
    if data.has_missing() {
        return Err(Error::Analysis(
            "matching assignment requires data with no missing entries".into(),
        ));
    }
    Ok(data
        .rows()
        .map(|row| {
            let mut best = usize::MAX;
            let mut label = 0;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = matching_unchecked(row, centroid);
                if d < best {
                    best = d;
                    label = c;
                }
            }
            label
        })
        .collect())
}

/// Argmin label per row under squared Euclidean distance; exact ties go to
/// the lowest cluster index.
pub fn assign_euclidean(centroids: &[Vec<f64>], data: &[Vec<f64>]) -> Result<Vec<usize>> {
    if centroids.is_empty() {
        return Err(Error::Config("assignment needs at least one centroid".into()));
    }
    let d = data.first().map_or(0, Vec::len);
    for c in centroids {
        if c.len() != d {
            return Err(Error::Shape(format!(
                "centroid width {} does not match data width {d}",
                c.len()
            )));
        }
    }
    Ok(data
        .iter()
        .map(|row| {
            let mut best = f64::INFINITY;
            let mut label = 0;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = sq_euclidean_unchecked(row, centroid);
                if dist < best {
                    best = dist;
                    label = c;
                }
            }
            label
        })
        .collect())
}

/// Within-cluster sum of squares for the given assignment.
pub fn wcss(data: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> Result<f64> {
    if labels.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            data.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in data.iter().zip(labels) {
        let centroid = centroids.get(label).ok_or_else(|| {
            Error::Shape(format!("label {label} out of range for {} centroids", centroids.len()))
        })?;
        total += squared_euclidean(row, centroid)?;
    }
    Ok(total)
}

/// Cao initialization on binary rows: the densest row first, then rows
/// maximizing density x distance-to-nearest-chosen-centroid. Fully
/// deterministic; argmax ties go to the lowest row index.
pub fn cao_init(rows: &[&[i8]], k: usize) -> Result<Vec<Vec<i8>>> {
    let n = rows.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must be in 1..={n}")));
    }
    let d = rows[0].len();

    let mut ones = vec![0usize; d];
    for row in rows {
        for (a, &v) in row.iter().enumerate() {
            if !matches!(v, 0 | 1) {
                return Err(Error::Analysis(format!(
                    "cao initialization requires entries in {{0, 1}}, found {v}"
                )));
            }
            ones[a] += usize::from(v == 1);
        }
    }

    // density(x) = (1 / (n * d)) * sum over columns of the number of rows
    // sharing x's value there.
    let density: Vec<f64> = rows
        .iter()
        .map(|row| {
            let share: usize = row
                .iter()
                .enumerate()
                .map(|(a, &v)| if v == 1 { ones[a] } else { n - ones[a] })
                .sum();
            share as f64 / (n * d) as f64
        })
        .collect();

    let first = argmax_f64(&density);
    let mut chosen: Vec<usize> = vec![first];
    while chosen.len() < k {
        let scores: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let min_dist = chosen
                    .iter()
                    .map(|&c| matching_unchecked(row, rows[c]))
                    .min()
                    .expect("at least one centroid chosen");
                density[r] * min_dist as f64
            })
            .collect();
        chosen.push(argmax_f64(&scores));
    }

    Ok(chosen.into_iter().map(|r| rows[r].to_vec()).collect())
}

fn argmax_f64(values: &[f64]) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    idx
}

fn random_row_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, n, k).into_vec()
}

/// Fit k-modes on binary data, best of `n_restarts` seeded runs.
///
/// Data must contain no missing entries. With Cao initialization the fit is
/// deterministic, so a single run stands in for all restarts.
pub fn kmodes_fit(
    data: &BinaryRatingMatrix,
    k: usize,
    init: Init,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
) -> Result<ClusterModel> {
    kmodes_fit_traced(data, k, init, seed, max_iter, n_restarts).map(|(m, _)| m)
}

/// [`kmodes_fit`] that also returns the winning run's per-round cost trace.
pub fn kmodes_fit_traced(
    data: &BinaryRatingMatrix,
    k: usize,
    init: Init,
    seed: u64,
    max_iter: usize,
    n_restarts: usize,
) -> Result<(ClusterModel, FitTrace)> {
    let rows: Vec<&[i8]> = data.rows().collect();
    if data.has_missing() {
        return Err(Error::Analysis(
            "k-modes requires data with no missing entries".into(),
        ));
    }
    validate_fit_args(rows.len(), k, max_iter, n_restarts)?;

    let restarts = if init == Init::Cao { 1 } else { n_restarts };
    let mut best: Option<(ClusterModel, FitTrace)> = None;
    for r in 0..restarts {
        let run_seed = indexed_seed(seed, r as u64);
        let centroids = match init {
            Init::Cao => cao_init(&rows, k)?,
            Init::Random => random_row_indices(rows.len(), k, run_seed)
                .into_iter()
                .map(|i| rows[i].to_vec())
                .collect(),
        };
        let (model, trace) = kmodes_single(&rows, centroids, max_iter)?;
        if best.as_ref().is_none_or(|(b, _)| model.final_cost < b.final_cost) {
            best = Some((model, trace));
        }
    }
    let (mut model, trace) = best.expect("at least one restart");
    model.seed = seed;
    Ok((model, trace))
}

fn validate_fit_args(n: usize, k: usize, max_iter: usize, n_restarts: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} must be in 1..={n}")));
    }
    if max_iter == 0 {
        return Err(Error::Config("max_iter must be positive".into()));
    }
    if n_restarts == 0 {
        return Err(Error::Config("n_restarts must be positive".into()));
    }
    Ok(())
}

fn kmodes_single(
    rows: &[&[i8]],
    mut centroids: Vec<Vec<i8>>,
    max_iter: usize,
) -> Result<(ClusterModel, FitTrace)> {
    let n = rows.len();
    let d = rows[0].len();
    let k = centroids.len();
    let mut labels = vec![0usize; n];
    let mut prev_labels: Option<Vec<usize>> = None;
    let mut round_costs = Vec::new();
    let mut n_iter = 0;

    for _ in 0..max_iter {
        n_iter += 1;

        for (idx, row) in rows.iter().enumerate() {
            let mut best = usize::MAX;
            let mut label = 0;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = matching_unchecked(row, centroid);
                if dist < best {
                    best = dist;
                    label = c;
                }
            }
            labels[idx] = label;
        }

        // Column-wise mode per cluster; a 0/1 tie keeps the current
        // centroid's value for stability.
        let mut one_counts = vec![vec![0usize; d]; k];
        let mut sizes = vec![0usize; k];
        for (idx, row) in rows.iter().enumerate() {
            let c = labels[idx];
            sizes[c] += 1;
            for (a, &v) in row.iter().enumerate() {
                one_counts[c][a] += usize::from(v == 1);
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if sizes[c] == 0 {
                // Empty cluster: reseed with the point farthest from the
                // centroid it just had.
                let far = (0..n)
                    .max_by_key(|&i| (matching_unchecked(rows[i], &centroids[c]), usize::MAX - i))
                    .expect("non-empty data");
                new_centroids[c] = rows[far].to_vec();
                continue;
            }
            for a in 0..d {
                let ones = one_counts[c][a];
                let zeros = sizes[c] - ones;
                new_centroids[c][a] = match ones.cmp(&zeros) {
                    std::cmp::Ordering::Greater => 1,
                    std::cmp::Ordering::Less => 0,
                    std::cmp::Ordering::Equal => centroids[c][a],
                };
            }
        }

        let cost: usize = rows
            .iter()
            .zip(&labels)
            .map(|(row, &c)| matching_unchecked(row, &new_centroids[c]))
            .sum();
        round_costs.push(cost as f64);

        // Plain fixpoint, or a stagnated state where only empty clusters
        // keep getting reseeded (a reseed that duplicates an existing
        // centroid can never win members under the lowest-index tie rule).
        let stagnated = prev_labels.as_deref() == Some(&labels)
            && (0..k).all(|c| sizes[c] == 0 || new_centroids[c] == centroids[c]);
        let converged = new_centroids == centroids || stagnated;
        prev_labels = Some(labels.clone());
        centroids = new_centroids;
        if converged {
            break;
        }
    }

    let final_cost = *round_costs.last().expect("at least one round");
    Ok((
        ClusterModel {
            algorithm: Algorithm::KModes,
            k,
            centroids: centroids
                .into_iter()
                .map(|c| c.into_iter().map(f64::from).collect())
                .collect(),
            final_cost,
            n_iter,
            seed: 0,
        },
        FitTrace { round_costs },
    ))
}

/// Fit k-means (Lloyd) on real-valued data, best of `n_restarts` seeded
/// runs. `Init::Cao` requires the data to be 0/1-valued.
pub fn kmeans_fit(
    data: &[Vec<f64>],
    k: usize,
    init: Init,
    seed: u64,
    max_iter: usize,
    tol: f64,
    n_restarts: usize,
) -> Result<ClusterModel> {
    kmeans_fit_traced(data, k, init, seed, max_iter, tol, n_restarts).map(|(m, _)| m)
}

/// [`kmeans_fit`] that also returns the winning run's per-round cost trace.
pub fn kmeans_fit_traced(
    data: &[Vec<f64>],
    k: usize,
    init: Init,
    seed: u64,
    max_iter: usize,
    tol: f64,
    n_restarts: usize,
) -> Result<(ClusterModel, FitTrace)> {
    validate_fit_args(data.len(), k, max_iter, n_restarts)?;
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::Config(format!("tol must be finite and >= 0, got {tol}")));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().position(|r| r.len() != d) {
        return Err(Error::Shape(format!(
            "ragged rows: row 0 has {d} columns, row {bad} has {}",
            data[bad].len()
        )));
    }

    let restarts = if init == Init::Cao { 1 } else { n_restarts };
    let mut best: Option<(ClusterModel, FitTrace)> = None;
    for r in 0..restarts {
        let run_seed = indexed_seed(seed, r as u64);
        let centroids: Vec<Vec<f64>> = match init {
            Init::Cao => {
                let binary = binary_rows_from_real(data)?;
                let refs: Vec<&[i8]> = binary.iter().map(Vec::as_slice).collect();
                cao_init(&refs, k)?
                    .into_iter()
                    .map(|c| c.into_iter().map(f64::from).collect())
                    .collect()
            }
            Init::Random => random_row_indices(data.len(), k, run_seed)
                .into_iter()
                .map(|i| data[i].clone())
                .collect(),
        };
        let (model, trace) = kmeans_single(data, centroids, max_iter, tol);
        if best.as_ref().is_none_or(|(b, _)| model.final_cost < b.final_cost) {
            best = Some((model, trace));
        }
    }
    let (mut model, trace) = best.expect("at least one restart");
    model.seed = seed;
    Ok((model, trace))
}

fn binary_rows_from_real(data: &[Vec<f64>]) -> Result<Vec<Vec<i8>>> {
    data.iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if v == 0.0 {
                        Ok(0i8)
                    } else if v == 1.0 {
                        Ok(1i8)
                    } else {
                        Err(Error::Config(format!(
                            "cao initialization requires 0/1-valued data, found {v}"
                        )))
                    }
                })
                .collect()
        })
        .collect()
}

fn kmeans_single(
    data: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> (ClusterModel, FitTrace) {
    let n = data.len();
    let d = data[0].len();
    let k = centroids.len();
    let mut labels = vec![0usize; n];
    let mut prev_labels: Option<Vec<usize>> = None;
    let mut round_costs = Vec::new();
    let mut n_iter = 0;

    for _ in 0..max_iter {
        n_iter += 1;

        for (idx, row) in data.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut label = 0;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = sq_euclidean_unchecked(row, centroid);
                if dist < best {
                    best = dist;
                    label = c;
                }
            }
            labels[idx] = label;
        }

        let mut sums = vec![vec![0.0f64; d]; k];
        let mut sizes = vec![0usize; k];
        for (idx, row) in data.iter().enumerate() {
            let c = labels[idx];
            sizes[c] += 1;
            for (a, &v) in row.iter().enumerate() {
                sums[c][a] += v;
            }
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if sizes[c] == 0 {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        sq_euclidean_unchecked(&data[i], &centroids[c])
                            .partial_cmp(&sq_euclidean_unchecked(&data[j], &centroids[c]))
                            .expect("finite distances")
                            .then(j.cmp(&i))
                    })
                    .expect("non-empty data");
                new_centroids[c] = data[far].clone();
                continue;
            }
            for a in 0..d {
                new_centroids[c][a] = sums[c][a] / sizes[c] as f64;
            }
        }

        let cost: f64 = data
            .iter()
            .zip(&labels)
            .map(|(row, &c)| sq_euclidean_unchecked(row, &new_centroids[c]))
            .sum();
        round_costs.push(cost);

        let movement = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(old, new)| sq_euclidean_unchecked(old, new).sqrt())
            .fold(0.0f64, f64::max);
        let nonempty_movement = (0..k)
            .filter(|&c| sizes[c] > 0)
            .map(|c| sq_euclidean_unchecked(&centroids[c], &new_centroids[c]).sqrt())
            .fold(0.0f64, f64::max);
        let stagnated =
            prev_labels.as_deref() == Some(&labels) && nonempty_movement <= tol;
        prev_labels = Some(labels.clone());
        centroids = new_centroids;
        if movement <= tol || stagnated {
            break;
        }
    }

    let final_cost = *round_costs.last().expect("at least one round");
    (
        ClusterModel {
            algorithm: Algorithm::KMeans,
            k,
            centroids,
            final_cost,
            n_iter,
            seed: 0,
        },
        FitTrace { round_costs },
    )
}

/// Shared knobs for elbow sweeps.
#[derive(Debug, Clone, Copy)]
pub struct ElbowOptions {
    pub init: Init,
    pub max_iter: usize,
    pub tol: f64,
    pub n_restarts: usize,
}

fn validate_ks(ks: &[usize], n: usize) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::Config("elbow sweep needs at least one k".into()));
    }
    if !ks.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config("ks must be strictly increasing".into()));
    }
    if ks[0] == 0 || *ks.last().unwrap() > n {
        return Err(Error::Config(format!(
            "every k must be in 1..={n}, got {ks:?}"
        )));
    }
    Ok(())
}

/// Matching-cost elbow sweep with k-modes; each k gets a freshly derived
/// seed.
pub fn elbow_curve_kmodes(
    data: &BinaryRatingMatrix,
    ks: &[usize],
    seed: u64,
    opts: &ElbowOptions,
) -> Result<ElbowCurve> {
    validate_ks(ks, data.n_users())?;
    let mut costs = Vec::with_capacity(ks.len());
    for &k in ks {
        let model = kmodes_fit(
            data,
            k,
            opts.init,
            indexed_seed(seed, k as u64),
            opts.max_iter,
            opts.n_restarts,
        )?;
        costs.push(model.final_cost);
    }
    Ok(ElbowCurve {
        ks: ks.to_vec(),
        costs,
    })
}

/// WCSS elbow sweep with k-means; each k gets a freshly derived seed.
pub fn elbow_curve_kmeans(
    data: &[Vec<f64>],
    ks: &[usize],
    seed: u64,
    opts: &ElbowOptions,
) -> Result<ElbowCurve> {
    validate_ks(ks, data.len())?;
    let mut costs = Vec::with_capacity(ks.len());
    for &k in ks {
        let model = kmeans_fit(
            data,
            k,
            opts.init,
            indexed_seed(seed, k as u64),
            opts.max_iter,
            opts.tol,
            opts.n_restarts,
        )?;
        costs.push(model.final_cost);
    }
    Ok(ElbowCurve {
        ks: ks.to_vec(),
        costs,
    })
}

/// Pick the elbow: the interior k maximizing the second difference
/// (cost(prev) - cost(k)) - (cost(k) - cost(next)); ties go to the smallest
/// k. Needs a curve of length >= 3.
pub fn detect_elbow(curve: &ElbowCurve) -> Result<usize> {
    if curve.ks.len() != curve.costs.len() {
        return Err(Error::Shape(format!(
            "curve has {} ks but {} costs",
            curve.ks.len(),
            curve.costs.len()
        )));
    }
    if curve.ks.len() < 3 {
        return Err(Error::Config(format!(
            "elbow detection needs at least 3 points, got {}",
            curve.ks.len()
        )));
    }
    let mut best_k = curve.ks[1];
    let mut best = f64::NEG_INFINITY;
    for i in 1..curve.ks.len() - 1 {
        let drop_in = curve.costs[i - 1] - curve.costs[i];
        let drop_out = curve.costs[i] - curve.costs[i + 1];
        let second_diff = drop_in - drop_out;
        if second_diff > best {
            best = second_diff;
            best_k = curve.ks[i];
        }
    }
    Ok(best_k)
}

/// Second differences per interior k, for reporting flat profiles.
pub fn second_differences(curve: &ElbowCurve) -> Vec<(usize, f64)> {
    (1..curve.ks.len().saturating_sub(1))
        .map(|i| {
            (
                curve.ks[i],
                (curve.costs[i - 1] - curve.costs[i]) - (curve.costs[i] - curve.costs[i + 1]),
            )
        })
        .collect()
}

/// Export the curve as two-column delimited text (k, cost) for plotting.
pub fn write_elbow_csv(curve: &ElbowCurve, mut out: impl Write) -> Result<()> {
    for (k, cost) in curve.ks.iter().zip(&curve.costs) {
        writeln!(out, "{k},{cost}")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(flatten)]
    model: ClusterModel,
}

/// Persist a fitted model as versioned JSON.
pub fn save_model(model: &ClusterModel, out: impl io::Write) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        model: model.clone(),
    };
    serde_json::to_writer(out, &file)?;
    Ok(())
}

/// Load a model persisted by [`save_model`], checking the format tag.
pub fn load_model(source: impl io::Read) -> Result<ClusterModel> {
    let file: ModelFile = serde_json::from_reader(source)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format {
            expected: MODEL_FORMAT.into(),
            found: file.format,
        });
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(rows: &[Vec<i8>]) -> BinaryRatingMatrix {
        BinaryRatingMatrix::from_rows(rows).unwrap()
    }

    /// Brute-force optimal 2-partition cost: enumerate every labeling,
    /// score each cluster at its best binary centroid.
    fn brute_force_kmodes_cost(rows: &[Vec<i8>], k: usize) -> usize {
        assert!(k == 2, "oracle written for k = 2");
        let n = rows.len();
        let d = rows[0].len();
        let mut best = usize::MAX;
        for mask in 0..(1u32 << n) {
            let mut cost = 0;
            for side in 0..2 {
                let members: Vec<&Vec<i8>> = (0..n)
                    .filter(|&i| ((mask >> i) & 1) as usize == side)
                    .map(|i| &rows[i])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                for a in 0..d {
                    let ones = members.iter().filter(|r| r[a] == 1).count();
                    cost += ones.min(members.len() - ones);
                }
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn matching_examples() {
        assert_eq!(matching_dissimilarity(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0);
        assert_eq!(matching_dissimilarity(&[0, 1, 1], &[0, 0, 1]).unwrap(), 1);
        let x: Vec<i8> = vec![0; 100];
        let y: Vec<i8> = vec![1; 100];
        assert_eq!(matching_dissimilarity(&x, &y).unwrap(), 100);
        assert!(matches!(
            matching_dissimilarity(&[0, 1], &[0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            matching_dissimilarity(&[0, -1], &[0, 1]),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn squared_euclidean_examples() {
        assert_eq!(squared_euclidean(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(squared_euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        // On binary vectors the two metrics coincide.
        let x = [0.0, 1.0, 1.0, 0.0];
        let y = [1.0, 1.0, 0.0, 0.0];
        let xi: Vec<i8> = x.iter().map(|&v| v as i8).collect();
        let yi: Vec<i8> = y.iter().map(|&v| v as i8).collect();
        assert_eq!(
            squared_euclidean(&x, &y).unwrap(),
            matching_dissimilarity(&xi, &yi).unwrap() as f64
        );
    }

    #[test]
    fn assign_tie_goes_to_lowest_index() {
        let data = binary(&[vec![0, 1]]);
        // Equidistant from both centroids.
        let centroids = vec![vec![0i8, 0], vec![1i8, 1]];
        assert_eq!(assign_matching(&centroids, &data).unwrap(), vec![0]);

        let real = vec![vec![0.0, 1.0]];
        let rc = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(assign_euclidean(&rc, &real).unwrap(), vec![0]);
    }

    #[test]
    fn assign_exact_match_and_single_cluster() {
        let data = binary(&[vec![1, 1], vec![0, 0]]);
        let centroids = vec![vec![0i8, 0], vec![0i8, 1], vec![1i8, 1]];
        assert_eq!(assign_matching(&centroids, &data).unwrap(), vec![2, 0]);
        assert_eq!(
            assign_matching(&centroids[..1].to_vec(), &data).unwrap(),
            vec![0, 0]
        );
    }

    #[test]
    fn cao_picks_densest_then_density_times_distance() {
        let rows_owned = vec![vec![0i8, 0], vec![0, 0], vec![0, 0], vec![1, 1]];
        let rows: Vec<&[i8]> = rows_owned.iter().map(Vec::as_slice).collect();
        // density(0,0) = 6/8, density(1,1) = 2/8
        assert_eq!(cao_init(&rows, 1).unwrap(), vec![vec![0, 0]]);
        assert_eq!(cao_init(&rows, 2).unwrap(), vec![vec![0, 0], vec![1, 1]]);
    }

    #[test]
    fn cao_on_identical_rows_returns_that_row() {
        let rows_owned = vec![vec![1i8, 0, 1]; 4];
        let rows: Vec<&[i8]> = rows_owned.iter().map(Vec::as_slice).collect();
        assert_eq!(cao_init(&rows, 1).unwrap(), vec![vec![1, 0, 1]]);
    }

    #[test]
    fn kmodes_recovers_the_planted_two_clusters() {
        let rows = vec![vec![0i8, 0, 0], vec![0, 0, 1], vec![1, 1, 1], vec![1, 1, 0]];
        let oracle = brute_force_kmodes_cost(&rows, 2);
        assert_eq!(oracle, 2);

        let data = binary(&rows);
        let model = kmodes_fit(&data, 2, Init::Cao, 5, 100, 8).unwrap();
        assert_eq!(model.final_cost, oracle as f64);
        let centroids = model.binary_centroids().unwrap();
        let labels = assign_matching(&centroids, &data).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn kmodes_degenerate_ks() {
        let rows = vec![vec![0i8, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        let data = binary(&rows);
        let every_point = kmodes_fit(&data, 4, Init::Random, 3, 50, 4).unwrap();
        assert_eq!(every_point.final_cost, 0.0);

        let single = kmodes_fit(&data, 1, Init::Cao, 3, 50, 1).unwrap();
        // Column-wise mode of all rows; both columns tie 2-2 and keep the
        // initial centroid's values.
        assert_eq!(single.k, 1);
        assert_eq!(single.final_cost, 4.0);
    }

    #[test]
    fn kmodes_rejects_bad_inputs() {
        let data = binary(&[vec![0, 1], vec![1, 0]]);
        assert!(matches!(
            kmodes_fit(&data, 3, Init::Cao, 1, 10, 1),
            Err(Error::Config(_))
        ));
        let missing = binary(&[vec![0, -1], vec![1, 0]]);
        assert!(matches!(
            kmodes_fit(&missing, 1, Init::Cao, 1, 10, 1),
            Err(Error::Analysis(_))
        ));
    }

    #[test]
    fn kmodes_survives_duplicate_seed_rows() {
        // k exceeds the number of distinct rows; empty-cluster repair has to
        // kick in and the fit must still terminate.
        let data = binary(&[vec![0, 0], vec![0, 0], vec![1, 1]]);
        let model = kmodes_fit(&data, 3, Init::Random, 9, 50, 4).unwrap();
        assert_eq!(model.k, 3);
        assert_eq!(model.final_cost, 0.0);
    }

    #[test]
    fn kmeans_two_separated_pairs() {
        let data = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let model = kmeans_fit(&data, 2, Init::Random, 11, 100, 1e-9, 8).unwrap();
        let mut centers: Vec<f64> = model.centroids.iter().map(|c| c[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] - 0.05).abs() < 1e-12, "{centers:?}");
        assert!((centers[1] - 10.05).abs() < 1e-12, "{centers:?}");
    }

    #[test]
    fn kmeans_zero_cost_cases() {
        let data = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = kmeans_fit(&data, 2, Init::Random, 1, 50, 1e-6, 4).unwrap();
        assert_eq!(m.final_cost, 0.0);

        let same = vec![vec![2.0, 2.0]; 5];
        let m = kmeans_fit(&same, 2, Init::Random, 1, 50, 1e-6, 4).unwrap();
        assert_eq!(m.final_cost, 0.0);
    }

    #[test]
    fn wcss_examples() {
        let data = vec![vec![0.0], vec![2.0]];
        let centroids = vec![vec![1.0]];
        assert_eq!(wcss(&data, &[0, 0], &centroids).unwrap(), 2.0);
        assert_eq!(
            wcss(&data, &[0, 1], &vec![vec![0.0], vec![2.0]]).unwrap(),
            0.0
        );
        let single = vec![vec![5.0]];
        assert_eq!(wcss(&single, &[0], &vec![vec![5.0]]).unwrap(), 0.0);
    }

    #[test]
    fn elbow_curve_includes_zero_cost_at_k_equals_n() {
        let data = binary(&[vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let opts = ElbowOptions {
            init: Init::Random,
            max_iter: 50,
            tol: 1e-6,
            n_restarts: 8,
        };
        let curve = elbow_curve_kmodes(&data, &[1, 2, 3, 4], 3, &opts).unwrap();
        assert_eq!(curve.ks, vec![1, 2, 3, 4]);
        assert_eq!(*curve.costs.last().unwrap(), 0.0);

        let short = elbow_curve_kmodes(&data, &[2], 3, &opts).unwrap();
        assert_eq!(short.costs.len(), 1);
    }

    #[test]
    fn detect_elbow_hand_computed_cases() {
        let curve = ElbowCurve {
            ks: vec![1, 2, 3, 4, 5],
            costs: vec![100.0, 80.0, 30.0, 28.0, 27.0],
        };
        // Second differences: -30 at k=2, 48 at k=3, 1 at k=4.
        assert_eq!(detect_elbow(&curve).unwrap(), 3);

        let geometric = ElbowCurve {
            ks: vec![1, 2, 3, 4, 5],
            costs: vec![100.0, 50.0, 25.0, 12.5, 6.25],
        };
        // 25 at k=2, 12.5 at k=3, 6.25 at k=4.
        assert_eq!(detect_elbow(&geometric).unwrap(), 2);

        let flat = ElbowCurve {
            ks: vec![1, 2, 3, 4, 5],
            costs: vec![10.0; 5],
        };
        assert_eq!(detect_elbow(&flat).unwrap(), 2);

        let short = ElbowCurve {
            ks: vec![1, 2],
            costs: vec![5.0, 1.0],
        };
        assert!(matches!(detect_elbow(&short), Err(Error::Config(_))));
    }

    #[test]
    fn model_file_round_trips() {
        let data = binary(&[vec![0, 0, 0], vec![0, 0, 1], vec![1, 1, 1], vec![1, 1, 0]]);
        let model = kmodes_fit(&data, 2, Init::Cao, 5, 100, 8).unwrap();
        let mut buf = Vec::new();
        save_model(&model, &mut buf).unwrap();
        assert_eq!(load_model(&buf[..]).unwrap(), model);
    }

    #[test]
    fn load_model_rejects_wrong_format() {
        let doc = r#"{"format":"prefcluster-model-v9","algorithm":"kmodes","k":1,
            "centroids":[[0.0]],"final_cost":0.0,"n_iter":1,"seed":0}"#;
        assert!(matches!(load_model(doc.as_bytes()), Err(Error::Format { .. })));
    }

    #[test]
    fn elbow_csv_is_two_columns() {
        let curve = ElbowCurve {
            ks: vec![1, 2],
            costs: vec![12.5, 3.0],
        };
        let mut buf = Vec::new();
        write_elbow_csv(&curve, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf), "1,12.5\n2,3\n");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn random_binary(n: usize, d: usize, seed: u64) -> BinaryRatingMatrix {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<i8>> = (0..n)
                .map(|_| (0..d).map(|_| i8::from(rng.random::<bool>())).collect())
                .collect();
            binary(&rows)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn kmodes_descends_and_terminates(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.random_range(4..30);
                let d = rng.random_range(2..10);
                let k = rng.random_range(1..=n.min(5));
                let data = random_binary(n, d, seed.wrapping_add(1));
                let (model, trace) =
                    kmodes_fit_traced(&data, k, Init::Random, seed, 200, 1).unwrap();
                for w in trace.round_costs.windows(2) {
                    prop_assert!(w[1] <= w[0], "cost rose: {:?}", trace.round_costs);
                }
                prop_assert!(model.n_iter < 200, "did not reach a fixpoint");
            }

            #[test]
            fn kmeans_descends(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.random_range(4..30);
                let d = rng.random_range(1..6);
                let k = rng.random_range(1..=n.min(4));
                let data: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..d).map(|_| rng.random::<f64>() * 10.0).collect())
                    .collect();
                let (_, trace) =
                    kmeans_fit_traced(&data, k, Init::Random, seed, 100, 1e-9, 1).unwrap();
                for w in trace.round_costs.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-9, "WCSS rose: {:?}", trace.round_costs);
                }
            }

            #[test]
            fn assignment_is_per_point_optimal(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.random_range(2..20);
                let d = rng.random_range(1..8);
                let k = rng.random_range(1..5usize);
                let data = random_binary(n, d, seed.wrapping_add(2));
                let centroids: Vec<Vec<i8>> = (0..k)
                    .map(|_| (0..d).map(|_| i8::from(rng.random::<bool>())).collect())
                    .collect();
                let labels = assign_matching(&centroids, &data).unwrap();
                for (idx, row) in data.rows().enumerate() {
                    let mine = matching_unchecked(row, &centroids[labels[idx]]);
                    for c in &centroids {
                        prop_assert!(matching_unchecked(row, c) >= mine);
                    }
                }
            }

            #[test]
            fn mode_update_is_optimal_among_binary_centroids(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.random_range(1..12);
                let d = rng.random_range(1..8);
                let data = random_binary(n, d, seed.wrapping_add(3));
                let rows: Vec<&[i8]> = data.rows().collect();

                // Column-wise mode (ties resolved either way are optimal).
                let mode: Vec<i8> = (0..d)
                    .map(|a| {
                        let ones = rows.iter().filter(|r| r[a] == 1).count();
                        i8::from(2 * ones > n)
                    })
                    .collect();
                let mode_cost: usize =
                    rows.iter().map(|r| matching_unchecked(r, &mode)).sum();
                for candidate in 0..(1u32 << d) {
                    let c: Vec<i8> = (0..d).map(|a| ((candidate >> a) & 1) as i8).collect();
                    let cost: usize = rows.iter().map(|r| matching_unchecked(r, &c)).sum();
                    prop_assert!(cost >= mode_cost);
                }
            }
        }
    }
}
