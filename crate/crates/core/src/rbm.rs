//! Bernoulli restricted Boltzmann machine trained by contrastive divergence,
//! with missing-entry masking.
//!
//! Visible units are the per-joke like/dislike bits of one user; missing
//! ratings (-1) are masked out of every sufficient statistic and re-clamped
//! at each Gibbs step, so the sentinel never acts as a fake rating. A single
//! deterministic mean-field pass produces imputations; from those the two
//! downstream datasets are assembled: D1 (every cell model-generated) and
//! D2 (observed cells kept, missing cells filled in).

use std::io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings_io::{BinaryRatingMatrix, MISSING};

/// Version tag of the persisted model file.
pub const RBM_FORMAT: &str = "prefcluster-rbm-v1";

const WEIGHT_INIT_STDDEV: f64 = 0.01;

/// Weights and biases of a Bernoulli RBM.
///
/// `W` is stored row-major as n_hidden x n_visible; `a` biases the visible
/// units, `b` the hidden units. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    n_visible: usize,
    n_hidden: usize,
    w: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl RbmParams {
    /// Assemble parameters from raw parts, validating shapes and finiteness.
    pub fn from_parts(
        n_visible: usize,
        n_hidden: usize,
        w: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::Config(format!(
                "RBM dimensions must be positive, got {n_visible} visible, {n_hidden} hidden"
            )));
        }
        if w.len() != n_hidden * n_visible || a.len() != n_visible || b.len() != n_hidden {
            return Err(Error::Shape(format!(
                "inconsistent RBM parameter shapes: |W|={}, |a|={}, |b|={} for {n_hidden}x{n_visible}",
                w.len(),
                a.len(),
                b.len()
            )));
        }
        let params = Self {
            n_visible,
            n_hidden,
            w,
            a,
            b,
        };
        params.check_finite()?;
        Ok(params)
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    /// Weight between hidden unit `j` and visible unit `i`.
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.w[j * self.n_visible + i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.a
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.b
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.w.iter().chain(&self.a).chain(&self.b).all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite(
                "RBM parameters contain NaN or infinity".into(),
            ))
        }
    }
}

/// Training hyperparameters. The defaults are CLI-overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_hidden: usize,
    /// Gibbs steps per contrastive-divergence update.
    pub cd_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_hidden: 100,
            cd_k: 1,
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, n_train_users: usize) -> Result<()> {
        if self.n_hidden == 0 || self.cd_k == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "n_hidden, cd_k, epochs and batch_size must all be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size > n_train_users {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} training users",
                self.batch_size, n_train_users
            )));
        }
        Ok(())
    }
}

/// Per-epoch mean absolute gap between the chain's first reconstruction
/// probabilities and the data, over observed entries. Entries are in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub reconstruction_error: Vec<f64>,
}

/// The two imputed datasets derived from one trained model.
///
/// `d1` is fully model-generated (every cell a prediction); `d2` keeps every
/// observed cell and fills only the missing ones. Neither contains -1.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDatasets {
    pub d1: BinaryRatingMatrix,
    pub d2: BinaryRatingMatrix,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fresh parameters: weights drawn from N(0, 0.01), biases zero.
/// Deterministic per seed.
pub fn init_rbm(n_visible: usize, n_hidden: usize, seed: u64) -> Result<RbmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_from_rng(n_visible, n_hidden, &mut rng)
}

fn init_from_rng<R: Rng>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Result<RbmParams> {
    if n_visible == 0 || n_hidden == 0 {
        return Err(Error::Config(format!(
            "RBM dimensions must be positive, got {n_visible} visible, {n_hidden} hidden"
        )));
    }
    let normal = Normal::new(0.0, WEIGHT_INIT_STDDEV).expect("valid stddev");
    let w = (0..n_hidden * n_visible)
        .map(|_| normal.sample(rng))
        .collect();
    Ok(RbmParams {
        n_visible,
        n_hidden,
        w,
        a: vec![0.0; n_visible],
        b: vec![0.0; n_hidden],
    })
}

fn check_visible_len(params: &RbmParams, len: usize) -> Result<()> {
    if len != params.n_visible {
        return Err(Error::Shape(format!(
            "visible vector has length {len}, model expects {}",
            params.n_visible
        )));
    }
    Ok(())
}

/// P(h_j = 1 | v) for a visible vector over {1, 0, -1}; positions marked
/// missing contribute nothing to the activation.
pub fn hidden_probs(params: &RbmParams, v: &[i8]) -> Result<Vec<f64>> {
    check_visible_len(params, v.len())?;
    let values: Vec<f64> = v.iter().map(|&x| if x == 1 { 1.0 } else { 0.0 }).collect();
    let observed: Vec<bool> = v.iter().map(|&x| x != MISSING).collect();
    Ok(hidden_probs_masked_unchecked(params, &values, &observed))
}

/// Masked hidden conditional on arbitrary real-valued visible states.
///
/// Only positions with `observed[i]` true enter the activation; the value
/// stored at a masked position is irrelevant. This is the primitive the
/// Gibbs chain runs on.
pub fn hidden_probs_masked(
    params: &RbmParams,
    values: &[f64],
    observed: &[bool],
) -> Result<Vec<f64>> {
    check_visible_len(params, values.len())?;
    if observed.len() != values.len() {
        return Err(Error::Shape(format!(
            "mask length {} does not match value length {}",
            observed.len(),
            values.len()
        )));
    }
    Ok(hidden_probs_masked_unchecked(params, values, observed))
}

fn hidden_probs_masked_unchecked(params: &RbmParams, values: &[f64], observed: &[bool]) -> Vec<f64> {
    let nv = params.n_visible;
    (0..params.n_hidden)
        .map(|j| {
            let row = &params.w[j * nv..(j + 1) * nv];
            let mut act = params.b[j];
            for i in 0..nv {
                if observed[i] {
                    act += row[i] * values[i];
                }
            }
            sigmoid(act)
        })
        .collect()
}

/// P(v_i = 1 | h) for a binary hidden vector.
pub fn visible_probs(params: &RbmParams, h: &[u8]) -> Result<Vec<f64>> {
    let activations: Vec<f64> = h.iter().map(|&x| x as f64).collect();
    visible_probs_real(params, &activations)
}

/// Visible conditional driven by real-valued hidden activations (used both
/// by the Gibbs chain and by the mean-field prediction pass).
pub fn visible_probs_real(params: &RbmParams, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != params.n_hidden {
        return Err(Error::Shape(format!(
            "hidden vector has length {}, model expects {}",
            h.len(),
            params.n_hidden
        )));
    }
    let nv = params.n_visible;
    let mut acts = params.a.clone();
    for (j, &hj) in h.iter().enumerate() {
        if hj == 0.0 {
            continue;
        }
        let row = &params.w[j * nv..(j + 1) * nv];
        for i in 0..nv {
            acts[i] += row[i] * hj;
        }
    }
    Ok(acts.into_iter().map(sigmoid).collect())
}

/// Bernoulli draw of the hidden layer given a visible vector over {1, 0, -1}.
pub fn sample_hidden<R: Rng>(params: &RbmParams, v: &[i8], rng: &mut R) -> Result<Vec<u8>> {
    let probs = hidden_probs(params, v)?;
    Ok(probs
        .iter()
        .map(|&p| u8::from(rng.random::<f64>() < p))
        .collect())
}

/// Bernoulli draw of the visible layer given a binary hidden vector.
pub fn sample_visible<R: Rng>(params: &RbmParams, h: &[u8], rng: &mut R) -> Result<Vec<u8>> {
    let probs = visible_probs(params, h)?;
    Ok(probs
        .iter()
        .map(|&p| u8::from(rng.random::<f64>() < p))
        .collect())
}

/// One CD-k parameter update from a mini-batch of visible vectors over
/// {1, 0, -1}.
///
/// Positions that are -1 in a sample are excluded from both the positive and
/// the negative statistics and are never resampled into the chain, so the
/// chain stays clamped to "missing" there. The applied delta is
/// lr * (positive - negative) / |batch|.
pub fn cd_update<R: Rng>(
    params: &mut RbmParams,
    batch: &[&[i8]],
    k: usize,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    cd_update_stats(params, batch, k, lr, rng).map(|_| ())
}

/// Like [`cd_update`], additionally reporting (sum of |first reconstruction
/// probability - data value| over observed cells, number of observed cells).
fn cd_update_stats<R: Rng>(
    params: &mut RbmParams,
    batch: &[&[i8]],
    k: usize,
    lr: f64,
    rng: &mut R,
) -> Result<(f64, usize)> {
    if batch.is_empty() {
        return Err(Error::Config("cd_update requires a non-empty batch".into()));
    }
    if k == 0 {
        return Err(Error::Config("cd_update requires k >= 1 Gibbs steps".into()));
    }
    let nv = params.n_visible;
    let nh = params.n_hidden;
    for sample in batch {
        check_visible_len(params, sample.len())?;
    }

    let mut dw = vec![0.0f64; nh * nv];
    let mut da = vec![0.0f64; nv];
    let mut db = vec![0.0f64; nh];
    let mut recon_abs_err = 0.0f64;
    let mut recon_cells = 0usize;

    let mut values = vec![0.0f64; nv];
    let mut observed = vec![false; nv];
    let mut hidden = vec![0.0f64; nh];

    for sample in batch {
        for i in 0..nv {
            observed[i] = sample[i] != MISSING;
            values[i] = if sample[i] == 1 { 1.0 } else { 0.0 };
        }

        // Positive phase, clamped to the data.
        let ph0 = hidden_probs_masked_unchecked(params, &values, &observed);
        for i in 0..nv {
            if observed[i] {
                da[i] += values[i];
            }
        }
        for j in 0..nh {
            db[j] += ph0[j];
            if ph0[j] != 0.0 {
                let drow = &mut dw[j * nv..(j + 1) * nv];
                for i in 0..nv {
                    if observed[i] && values[i] == 1.0 {
                        drow[i] += ph0[j];
                    }
                }
            }
        }

        // Gibbs chain: h ~ P(h|v), then k rounds of v ~ P(v|h), h ~ P(h|v),
        // re-clamping missing positions throughout.
        for j in 0..nh {
            hidden[j] = f64::from(rng.random::<f64>() < ph0[j]);
        }
        let mut ph_last = ph0.clone();
        for step in 0..k {
            for i in 0..nv {
                if !observed[i] {
                    continue;
                }
                let mut act = params.a[i];
                for j in 0..nh {
                    if hidden[j] != 0.0 {
                        act += params.w[j * nv + i];
                    }
                }
                let q = sigmoid(act);
                if step == 0 {
                    recon_abs_err += (q - values[i]).abs();
                    recon_cells += 1;
                }
                values[i] = f64::from(rng.random::<f64>() < q);
            }
            ph_last = hidden_probs_masked_unchecked(params, &values, &observed);
            if step + 1 < k {
                for j in 0..nh {
                    hidden[j] = f64::from(rng.random::<f64>() < ph_last[j]);
                }
            }
        }

        // Negative phase from the end of the chain.
        for i in 0..nv {
            if observed[i] {
                da[i] -= values[i];
            }
        }
        for j in 0..nh {
            db[j] -= ph_last[j];
            if ph_last[j] != 0.0 {
                let drow = &mut dw[j * nv..(j + 1) * nv];
                for i in 0..nv {
                    if observed[i] && values[i] == 1.0 {
                        drow[i] -= ph_last[j];
                    }
                }
            }
        }
    }

    let scale = lr / batch.len() as f64;
    for (w, d) in params.w.iter_mut().zip(&dw) {
        *w += scale * d;
    }
    for (a, d) in params.a.iter_mut().zip(&da) {
        *a += scale * d;
    }
    for (b, d) in params.b.iter_mut().zip(&db) {
        *b += scale * d;
    }
    params.check_finite()?;

    Ok((recon_abs_err, recon_cells))
}

/// Split `n` items into consecutive mini-batch ranges of at most
/// `batch_size`; the final batch may be short.
fn minibatch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n)
        .step_by(batch_size)
        .map(|start| start..(start + batch_size).min(n))
        .collect()
}

/// Train a fresh model on the given rows: `epochs` passes of shuffled
/// mini-batch CD-k updates. Deterministic per `config.seed`.
pub fn train(config: &TrainConfig, train_data: &BinaryRatingMatrix) -> Result<(RbmParams, TrainHistory)> {
    let n = train_data.n_users();
    config.validate(n)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_from_rng(train_data.n_jokes(), config.n_hidden, &mut rng)?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut err_sum = 0.0;
        let mut cells = 0usize;
        for range in minibatch_ranges(n, config.batch_size) {
            let batch: Vec<&[i8]> = order[range].iter().map(|&r| train_data.row(r)).collect();
            let (e, c) = cd_update_stats(
                &mut params,
                &batch,
                config.cd_k,
                config.learning_rate,
                &mut rng,
            )?;
            err_sum += e;
            cells += c;
        }
        history.push(if cells == 0 { 0.0 } else { err_sum / cells as f64 });
    }

    Ok((
        params,
        TrainHistory {
            reconstruction_error: history,
        },
    ))
}

/// Deterministic mean-field imputation of one user vector.
///
/// One pass: hidden means from the observed entries, then visible
/// probabilities driven by those means. `binary[i]` is 1 iff
/// `probs[i] >= 0.5` (ties round up).
pub fn predict(params: &RbmParams, v: &[i8]) -> Result<(Vec<f64>, Vec<u8>)> {
    let h_mean = hidden_probs(params, v)?;
    let probs = visible_probs_real(params, &h_mean)?;
    let binary = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok((probs, binary))
}

/// Mean absolute error of the thresholded predictions over the observed
/// cells of `test_data`; for binary data this is the misclassification rate.
pub fn evaluate_mae(params: &RbmParams, test_data: &BinaryRatingMatrix) -> Result<f64> {
    if test_data.n_jokes() != params.n_visible {
        return Err(Error::Shape(format!(
            "test data has {} columns, model expects {}",
            test_data.n_jokes(),
            params.n_visible
        )));
    }
    let mut wrong = 0usize;
    let mut observed = 0usize;
    for row in test_data.rows() {
        let (_, binary) = predict(params, row)?;
        for (i, &actual) in row.iter().enumerate() {
            if actual == MISSING {
                continue;
            }
            observed += 1;
            if i8::try_from(binary[i]).expect("0 or 1") != actual {
                wrong += 1;
            }
        }
    }
    if observed == 0 {
        return Err(Error::Evaluation(
            "test data has no observed cells to score".into(),
        ));
    }
    Ok(wrong as f64 / observed as f64)
}

/// Build the two imputed datasets for the full matrix.
///
/// `d1[i][j]` is the model's prediction for every cell; `d2[i][j]` keeps the
/// observed value and falls back to the prediction only where the cell was
/// missing.
pub fn build_d1_d2(params: &RbmParams, full_data: &BinaryRatingMatrix) -> Result<ImputedDatasets> {
    if full_data.n_jokes() != params.n_visible {
        return Err(Error::Shape(format!(
            "data has {} columns, model expects {}",
            full_data.n_jokes(),
            params.n_visible
        )));
    }
    let n = full_data.n_users();
    let d = full_data.n_jokes();
    let mut d1 = Vec::with_capacity(n * d);
    let mut d2 = Vec::with_capacity(n * d);
    for row in full_data.rows() {
        let (_, binary) = predict(params, row)?;
        for (i, &actual) in row.iter().enumerate() {
            let predicted = binary[i] as i8;
            d1.push(predicted);
            d2.push(if actual == MISSING { predicted } else { actual });
        }
    }
    Ok(ImputedDatasets {
        d1: BinaryRatingMatrix::from_values(n, d, d1)?,
        d2: BinaryRatingMatrix::from_values(n, d, d2)?,
    })
}

#[derive(Serialize, Deserialize)]
struct RbmFile {
    format: String,
    n_visible: usize,
    n_hidden: usize,
    w: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    config: TrainConfig,
}

/// Persist parameters plus the training config as versioned JSON. Values
/// round-trip exactly (serde_json emits shortest-exact decimal floats).
pub fn save_rbm(params: &RbmParams, config: &TrainConfig, out: impl io::Write) -> Result<()> {
    let file = RbmFile {
        format: RBM_FORMAT.to_string(),
        n_visible: params.n_visible,
        n_hidden: params.n_hidden,
        w: params.w.clone(),
        a: params.a.clone(),
        b: params.b.clone(),
        config: config.clone(),
    };
    serde_json::to_writer(out, &file)?;
    Ok(())
}

/// Load a model persisted by [`save_rbm`], checking the format tag.
pub fn load_rbm(source: impl io::Read) -> Result<(RbmParams, TrainConfig)> {
    let file: RbmFile = serde_json::from_reader(source)?;
    if file.format != RBM_FORMAT {
        return Err(Error::Format {
            expected: RBM_FORMAT.into(),
            found: file.format,
        });
    }
    let params = RbmParams::from_parts(file.n_visible, file.n_hidden, file.w, file.a, file.b)?;
    Ok((params, file.config))
}
