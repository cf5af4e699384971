//! Synthetic rating-corpus generator.
//!
//! Builds a raw rating matrix in the shape the pipeline ingests: a handful
//! of planted preference archetypes, per-user taste noise, ratings on the
//! 0.01 grid, and a configurable share of 99-sentinel missing cells. Used by
//! the demo corpus and the no-external-data test paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ratings_io::RawRatingMatrix;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_jokes: usize,
    pub n_archetypes: usize,
    /// Probability that a (user, joke) rating is missing.
    pub missing_fraction: f64,
    /// Probability that a user's taste for one joke deviates from their
    /// archetype; this is the irreducible noise floor of the corpus.
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_jokes: 100,
            n_archetypes: 3,
            missing_fraction: 0.3,
            flip_probability: 0.17,
            seed: 0,
        }
    }
}

/// Ground truth behind a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// Archetype like-patterns, n_archetypes x n_jokes over {0, 1}.
    pub archetypes: Vec<Vec<i8>>,
    /// Generating archetype per user.
    pub user_archetype: Vec<usize>,
}

/// Generate a corpus along with its ground truth.
pub fn generate_with_truth(config: &SynthConfig) -> Result<(RawRatingMatrix, SynthTruth)> {
    if config.n_users == 0 || config.n_jokes == 0 || config.n_archetypes == 0 {
        return Err(Error::Config(
            "n_users, n_jokes and n_archetypes must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.missing_fraction)
        || !(0.0..=0.5).contains(&config.flip_probability)
    {
        return Err(Error::Config(
            "missing_fraction must be in [0, 1) and flip_probability in [0, 0.5]".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let archetypes = plant_archetypes(config.n_archetypes, config.n_jokes, &mut rng)?;

    // Mildly imbalanced archetype weights, normalized.
    let weights: Vec<f64> = (0..config.n_archetypes)
        .map(|t| 1.0 - 0.12 * t as f64)
        .collect();
    let total: f64 = weights.iter().sum();

    let mut user_archetype = Vec::with_capacity(config.n_users);
    let mut values = Vec::with_capacity(config.n_users * config.n_jokes);
    for _ in 0..config.n_users {
        let mut pick = rng.random::<f64>() * total;
        let mut archetype = config.n_archetypes - 1;
        for (t, w) in weights.iter().enumerate() {
            if pick < *w {
                archetype = t;
                break;
            }
            pick -= w;
        }
        user_archetype.push(archetype);

        for j in 0..config.n_jokes {
            if rng.random::<f64>() < config.missing_fraction {
                values.push(99.0);
                continue;
            }
            let flipped = rng.random::<f64>() < config.flip_probability;
            let likes = (archetypes[archetype][j] == 1) != flipped;
            // Ratings live on the 0.01 grid: likes in [7.00, 10.00],
            // dislikes in [-10.00, 6.99].
            let steps = if likes {
                rng.random_range(700..=1000)
            } else {
                rng.random_range(-1000..=699)
            };
            values.push(steps as f64 / 100.0);
        }
    }

    let matrix = RawRatingMatrix::from_values(config.n_users, config.n_jokes, values)?;
    Ok((
        matrix,
        SynthTruth {
            archetypes,
            user_archetype,
        },
    ))
}

/// Generate a corpus, discarding the ground truth.
pub fn generate(config: &SynthConfig) -> Result<RawRatingMatrix> {
    generate_with_truth(config).map(|(m, _)| m)
}

/// Draw archetype like-patterns that are pairwise distinct by at least a
/// fifth of the columns.
fn plant_archetypes<R: Rng>(
    n_archetypes: usize,
    n_jokes: usize,
    rng: &mut R,
) -> Result<Vec<Vec<i8>>> {
    let min_distance = (n_jokes / 5).max(1);
    for _ in 0..200 {
        let candidate: Vec<Vec<i8>> = (0..n_archetypes)
            .map(|_| {
                (0..n_jokes)
                    .map(|_| i8::from(rng.random::<f64>() < 0.4))
                    .collect()
            })
            .collect();
        let separated = (0..n_archetypes).all(|s| {
            (s + 1..n_archetypes).all(|t| {
                let dist: usize = candidate[s]
                    .iter()
                    .zip(&candidate[t])
                    .filter(|(a, b)| a != b)
                    .count();
                dist >= min_distance
            })
        });
        if separated {
            return Ok(candidate);
        }
    }
    Err(Error::Config(format!(
        "could not plant {n_archetypes} archetypes over {n_jokes} jokes with pairwise distance >= {min_distance}"
    )))
}
