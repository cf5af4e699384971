//! Pipeline orchestration: the one-shot runner, the per-stage functions the
//! CLI subcommands share with it, artifact persistence, and the run
//! manifest.
//!
//! Every stage draws its seed from the master seed via
//! [`crate::seeds::stage_seed`], and every intermediate result is persisted
//! as a versioned artifact so stages can be re-run in isolation with outputs
//! identical to the one-shot run.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, OverlapMetric, OverlapReport, PreferencePattern, TieTolerance,
};
use crate::clusterability::{self, HopkinsResult};
use crate::clustering::{
    self, Algorithm, ClusterModel, ElbowCurve, ElbowOptions, Init,
};
use crate::error::{Error, Result};
use crate::ratings_io::{self, BinaryRatingMatrix, UserSplit};
use crate::rbm::{self, RbmParams, TrainConfig, TrainHistory};
use crate::seeds::stage_seed;

/// Version tag of the manifest file.
pub const MANIFEST_FORMAT: &str = "prefcluster-manifest-v1";
/// Version tag of the split file.
pub const SPLIT_FORMAT: &str = "prefcluster-split-v1";
/// Version tag of the elbow summary file.
pub const ELBOW_FORMAT: &str = "prefcluster-elbow-v1";

/// Artifact filenames inside the output directory.
pub mod files {
    pub const BINARIZED: &str = "binarized.csv";
    pub const SPLIT: &str = "split.json";
    pub const RBM: &str = "rbm.json";
    pub const D1: &str = "d1.csv";
    pub const D2: &str = "d2.csv";
    pub const HOPKINS: &str = "hopkins.json";
    pub const ELBOW_CSV: &str = "elbow.csv";
    pub const ELBOW_JSON: &str = "elbow.json";
    pub const MODEL: &str = "model.json";
    pub const PREFERENCES_CSV: &str = "preferences.csv";
    pub const PREFERENCES_SVG: &str = "preferences.svg";
    pub const OVERLAP_MATCHING: &str = "overlap-matching.json";
    pub const OVERLAP_SQUARED_EUCLIDEAN: &str = "overlap-squared-euclidean.json";
    pub const MANIFEST: &str = "manifest.json";
}

/// Stage names used for seed derivation and error reporting.
pub const STAGES: [&str; 5] = ["split", "rbm", "hopkins", "elbow", "cluster"];

/// Full configuration of one pipeline run. Field names mirror the CLI flags
/// (kebab-case there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub has_count_column: bool,
    pub test_fraction: f64,
    pub n_hidden: usize,
    pub cd_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hopkins sample size; `None` means min(ceil(0.1 n), 500).
    pub hopkins_m: Option<usize>,
    pub elbow_ks: Vec<usize>,
    pub algorithm: Algorithm,
    pub init: Init,
    /// Cluster count override; `None` uses the detected elbow.
    pub k: Option<usize>,
    pub n_restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub master_seed: u64,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output_dir: output_dir.into(),
            has_count_column: false,
            test_fraction: 0.2,
            n_hidden: 100,
            cd_k: 1,
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 100,
            hopkins_m: None,
            elbow_ks: (1..=5).collect(),
            algorithm: Algorithm::KModes,
            init: Init::Cao,
            k: None,
            n_restarts: 8,
            max_iter: 100,
            tol: 1e-6,
            master_seed: 42,
        }
    }

    /// Training config with the stage-derived seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_hidden: self.n_hidden,
            cd_k: self.cd_k,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: stage_seed(self.master_seed, "rbm"),
        }
    }

    pub fn elbow_options(&self) -> ElbowOptions {
        ElbowOptions {
            init: self.init,
            max_iter: self.max_iter,
            tol: self.tol,
            n_restarts: self.n_restarts,
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Derived per-stage seeds, echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub split: u64,
    pub rbm: u64,
    pub hopkins: u64,
    pub elbow: u64,
    pub cluster: u64,
}

impl StageSeeds {
    pub fn derive(master: u64) -> Self {
        Self {
            split: stage_seed(master, "split"),
            rbm: stage_seed(master, "rbm"),
            hopkins: stage_seed(master, "hopkins"),
            elbow: stage_seed(master, "elbow"),
            cluster: stage_seed(master, "cluster"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub n_users: usize,
    pub n_jokes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub missing_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmSummary {
    pub test_mae: f64,
    pub reconstruction_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowSummary {
    pub ks: Vec<usize>,
    pub costs: Vec<f64>,
    pub detected_k: usize,
    /// Second differences per interior k, so flat profiles stay visible.
    pub second_differences: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub algorithm: Algorithm,
    pub init: Init,
    pub k: usize,
    pub final_cost: f64,
    pub n_iter: usize,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    /// Mean like-fraction per cluster, a quick fingerprint of the full
    /// pattern artifact.
    pub mean_preference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummaries {
    /// Absent when the fitted centroids are fractional (k-means), where the
    /// matching metric is undefined.
    pub matching: Option<OverlapReport>,
    pub squared_euclidean: OverlapReport,
}

/// Numeric outputs per stage; a stage that did not run stays `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageResults {
    pub ingest: Option<IngestSummary>,
    pub rbm: Option<RbmSummary>,
    pub hopkins: Option<HopkinsResult>,
    pub elbow: Option<ElbowSummary>,
    pub cluster: Option<ClusterSummary>,
    pub preferences: Option<PreferenceSummary>,
    pub overlap: Option<OverlapSummaries>,
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub status: String,
    pub config: PipelineConfig,
    pub seeds: StageSeeds,
    pub results: StageResults,
    pub timings_secs: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(config: PipelineConfig) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "incomplete".to_string(),
            seeds: StageSeeds::derive(config.master_seed),
            config,
            results: StageResults::default(),
            timings_secs: BTreeMap::new(),
        }
    }
}

fn open_artifact(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create_artifact(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    format: String,
    #[serde(flatten)]
    split: UserSplit,
}

pub fn save_split(split: &UserSplit, path: &Path) -> Result<()> {
    let out = create_artifact(path)?;
    serde_json::to_writer(out, &SplitFile {
        format: SPLIT_FORMAT.to_string(),
        split: split.clone(),
    })?;
    Ok(())
}

pub fn load_split(path: &Path) -> Result<UserSplit> {
    let file: SplitFile = serde_json::from_reader(open_artifact(path)?)?;
    if file.format != SPLIT_FORMAT {
        return Err(Error::Format {
            expected: SPLIT_FORMAT.into(),
            found: file.format,
        });
    }
    Ok(file.split)
}

#[derive(Serialize, Deserialize)]
struct ElbowFile {
    format: String,
    ks: Vec<usize>,
    costs: Vec<f64>,
    detected_k: usize,
    seed: u64,
}

pub fn save_elbow(summary: &ElbowSummary, seed: u64, path: &Path) -> Result<()> {
    let out = create_artifact(path)?;
    serde_json::to_writer(out, &ElbowFile {
        format: ELBOW_FORMAT.to_string(),
        ks: summary.ks.clone(),
        costs: summary.costs.clone(),
        detected_k: summary.detected_k,
        seed,
    })?;
    Ok(())
}

pub fn load_elbow(path: &Path) -> Result<(ElbowCurve, usize)> {
    let file: ElbowFile = serde_json::from_reader(open_artifact(path)?)?;
    if file.format != ELBOW_FORMAT {
        return Err(Error::Format {
            expected: ELBOW_FORMAT.into(),
            found: file.format,
        });
    }
    Ok((
        ElbowCurve {
            ks: file.ks,
            costs: file.costs,
        },
        file.detected_k,
    ))
}

pub fn load_binary_matrix(path: &Path) -> Result<BinaryRatingMatrix> {
    ratings_io::read_binary_matrix(open_artifact(path)?)
}

pub fn save_binary_matrix(matrix: &BinaryRatingMatrix, path: &Path) -> Result<()> {
    ratings_io::write_binary_matrix(matrix, create_artifact(path)?)
}

pub fn load_rbm_file(path: &Path) -> Result<(RbmParams, TrainConfig)> {
    rbm::load_rbm(open_artifact(path)?)
}

pub fn load_model_file(path: &Path) -> Result<ClusterModel> {
    clustering::load_model(open_artifact(path)?)
}

/// Outcome of the ingest stage.
pub struct IngestOutput {
    pub binarized: BinaryRatingMatrix,
    pub split: UserSplit,
    pub summary: IngestSummary,
}

/// Load, binarize and split the input; writes `binarized.csv` and
/// `split.json`.
pub fn stage_ingest(config: &PipelineConfig) -> Result<IngestOutput> {
    let raw = ratings_io::load_ratings(open_artifact(&config.input)?, config.has_count_column)?;
    let binarized = ratings_io::binarize(&raw);
    let split = ratings_io::split_users(
        &binarized,
        config.test_fraction,
        stage_seed(config.master_seed, "split"),
    )?;
    save_binary_matrix(&binarized, &config.artifact(files::BINARIZED))?;
    save_split(&split, &config.artifact(files::SPLIT))?;
    let summary = IngestSummary {
        n_users: binarized.n_users(),
        n_jokes: binarized.n_jokes(),
        n_train: split.train_rows.len(),
        n_test: split.test_rows.len(),
        missing_cells: binarized.count_missing(),
    };
    Ok(IngestOutput {
        binarized,
        split,
        summary,
    })
}

/// Train the RBM on the train rows and score MAE on the test rows; writes
/// `rbm.json`.
pub fn stage_train_rbm(
    config: &PipelineConfig,
    binarized: &BinaryRatingMatrix,
    split: &UserSplit,
) -> Result<(RbmParams, TrainHistory, f64)> {
    let train_config = config.train_config();
    let train_data = binarized.select_rows(&split.train_rows)?;
    let (params, history) = rbm::train(&train_config, &train_data)?;
    let test_data = binarized.select_rows(&split.test_rows)?;
    let mae = rbm::evaluate_mae(&params, &test_data)?;
    rbm::save_rbm(&params, &train_config, create_artifact(&config.artifact(files::RBM))?)?;
    Ok((params, history, mae))
}

/// Impute the full matrix into D1 and D2; writes `d1.csv` and `d2.csv`.
pub fn stage_impute(
    config: &PipelineConfig,
    params: &RbmParams,
    binarized: &BinaryRatingMatrix,
) -> Result<rbm::ImputedDatasets> {
    let datasets = rbm::build_d1_d2(params, binarized)?;
    save_binary_matrix(&datasets.d1, &config.artifact(files::D1))?;
    save_binary_matrix(&datasets.d2, &config.artifact(files::D2))?;
    Ok(datasets)
}

/// Hopkins statistic on D1; writes `hopkins.json`.
pub fn stage_hopkins(config: &PipelineConfig, d1: &BinaryRatingMatrix) -> Result<HopkinsResult> {
    let n = d1.n_users();
    let m = config
        .hopkins_m
        .unwrap_or_else(|| clusterability::default_sample_size(n).min(n.saturating_sub(1)));
    let result = clusterability::hopkins(
        &d1.to_real_rows(),
        m,
        stage_seed(config.master_seed, "hopkins"),
    )?;
    serde_json::to_writer_pretty(
        create_artifact(&config.artifact(files::HOPKINS))?,
        &result,
    )?;
    Ok(result)
}

/// Cost sweep over the configured ks on D1; writes `elbow.csv` and
/// `elbow.json`.
pub fn stage_elbow(config: &PipelineConfig, d1: &BinaryRatingMatrix) -> Result<ElbowSummary> {
    let seed = stage_seed(config.master_seed, "elbow");
    let opts = config.elbow_options();
    let curve = match config.algorithm {
        Algorithm::KModes => clustering::elbow_curve_kmodes(d1, &config.elbow_ks, seed, &opts)?,
        Algorithm::KMeans => {
            clustering::elbow_curve_kmeans(&d1.to_real_rows(), &config.elbow_ks, seed, &opts)?
        }
    };
    let detected_k = clustering::detect_elbow(&curve)?;
    let summary = ElbowSummary {
        ks: curve.ks.clone(),
        costs: curve.costs.clone(),
        detected_k,
        second_differences: clustering::second_differences(&curve),
    };
    clustering::write_elbow_csv(&curve, create_artifact(&config.artifact(files::ELBOW_CSV))?)?;
    save_elbow(&summary, seed, &config.artifact(files::ELBOW_JSON))?;
    Ok(summary)
}

/// Fit the configured algorithm on D1 with the given k; writes `model.json`.
pub fn stage_cluster(
    config: &PipelineConfig,
    d1: &BinaryRatingMatrix,
    k: usize,
) -> Result<ClusterModel> {
    let seed = stage_seed(config.master_seed, "cluster");
    let model = match config.algorithm {
        Algorithm::KModes => clustering::kmodes_fit(
            d1,
            k,
            config.init,
            seed,
            config.max_iter,
            config.n_restarts,
        )?,
        Algorithm::KMeans => clustering::kmeans_fit(
            &d1.to_real_rows(),
            k,
            config.init,
            seed,
            config.max_iter,
            config.tol,
            config.n_restarts,
        )?,
    };
    clustering::save_model(&model, create_artifact(&config.artifact(files::MODEL))?)?;
    Ok(model)
}

/// Assign D2 rows to the fitted centroids under the model's native metric.
pub fn assign_d2(model: &ClusterModel, d2: &BinaryRatingMatrix) -> Result<Vec<usize>> {
    match model.algorithm {
        Algorithm::KModes => {
            let centroids = model.binary_centroids()?;
            clustering::assign_matching(&centroids, d2)
        }
        Algorithm::KMeans => clustering::assign_euclidean(&model.centroids, &d2.to_real_rows()),
    }
}

/// Preference patterns of the D2 assignment; writes `preferences.csv` and
/// `preferences.svg`.
pub fn stage_preferences(
    config: &PipelineConfig,
    model: &ClusterModel,
    d2: &BinaryRatingMatrix,
) -> Result<PreferencePattern> {
    let labels = assign_d2(model, d2)?;
    let pattern = analysis::preference_patterns(&labels, d2, model.k)?;
    analysis::emit_pattern_chart(
        &pattern,
        create_artifact(&config.artifact(files::PREFERENCES_CSV))?,
        create_artifact(&config.artifact(files::PREFERENCES_SVG))?,
    )?;
    Ok(pattern)
}

/// Overlap test of D2 against the fitted centroids, once per metric; writes
/// one JSON report per metric. The matching report is skipped (with `None`)
/// when the centroids are fractional.
pub fn stage_overlap(
    config: &PipelineConfig,
    model: &ClusterModel,
    d2: &BinaryRatingMatrix,
) -> Result<OverlapSummaries> {
    let data = d2.to_real_rows();
    let matching = if model.binary_centroids().is_ok() {
        let report = analysis::overlap_test(
            &model.centroids,
            &data,
            OverlapMetric::Matching,
            TieTolerance::default_for(OverlapMetric::Matching),
        )?;
        analysis::save_overlap(
            &report,
            create_artifact(&config.artifact(files::OVERLAP_MATCHING))?,
        )?;
        Some(report)
    } else {
        None
    };
    let squared = analysis::overlap_test(
        &model.centroids,
        &data,
        OverlapMetric::SquaredEuclidean,
        TieTolerance::default_for(OverlapMetric::SquaredEuclidean),
    )?;
    analysis::save_overlap(
        &squared,
        create_artifact(&config.artifact(files::OVERLAP_SQUARED_EUCLIDEAN))?,
    )?;
    Ok(OverlapSummaries {
        matching,
        squared_euclidean: squared,
    })
}

/// Run the whole pipeline: load, binarize, split, train, score, impute,
/// test clusterability, sweep the elbow, fit, analyze. Artifacts and the
/// manifest land in the configured output directory.
///
/// On a stage failure the partial manifest is still written, with `status`
/// naming the failed stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    fs::create_dir_all(&config.output_dir)?;
    let mut manifest = RunManifest::new(config.clone());

    let outcome = run_stages(config, &mut manifest);
    match outcome {
        Ok(()) => manifest.status = "complete".to_string(),
        Err(ref e) => manifest.status = format!("failed: {e}"),
    }
    let manifest_write = serde_json::to_writer_pretty(
        create_artifact(&config.artifact(files::MANIFEST))?,
        &manifest,
    );
    outcome?;
    manifest_write?;
    Ok(manifest)
}

fn run_stages(config: &PipelineConfig, manifest: &mut RunManifest) -> Result<()> {
    let mut clock = StageClock::default();

    let ingest = clock
        .time("ingest", || stage_ingest(config))
        .map_err(|e| e.in_stage("ingest"))?;
    manifest.results.ingest = Some(ingest.summary.clone());
    manifest.timings_secs.extend(clock.drain());

    let (params, history, mae) = clock
        .time("train-rbm", || {
            stage_train_rbm(config, &ingest.binarized, &ingest.split)
        })
        .map_err(|e| e.in_stage("train-rbm"))?;
    manifest.results.rbm = Some(RbmSummary {
        test_mae: mae,
        reconstruction_error: history.reconstruction_error.clone(),
    });
    manifest.timings_secs.extend(clock.drain());

    let datasets = clock
        .time("impute", || stage_impute(config, &params, &ingest.binarized))
        .map_err(|e| e.in_stage("impute"))?;
    manifest.timings_secs.extend(clock.drain());

    let hopkins = clock
        .time("hopkins", || stage_hopkins(config, &datasets.d1))
        .map_err(|e| e.in_stage("hopkins"))?;
    manifest.results.hopkins = Some(hopkins);
    manifest.timings_secs.extend(clock.drain());

    let elbow = clock
        .time("elbow", || stage_elbow(config, &datasets.d1))
        .map_err(|e| e.in_stage("elbow"))?;
    let detected_k = elbow.detected_k;
    manifest.results.elbow = Some(elbow);
    manifest.timings_secs.extend(clock.drain());

    let k = config.k.unwrap_or(detected_k);
    let model = clock
        .time("cluster", || stage_cluster(config, &datasets.d1, k))
        .map_err(|e| e.in_stage("cluster"))?;
    let labels = assign_d2(&model, &datasets.d2).map_err(|e| e.in_stage("cluster"))?;
    let mut cluster_sizes = vec![0usize; model.k];
    for &l in &labels {
        cluster_sizes[l] += 1;
    }
    manifest.results.cluster = Some(ClusterSummary {
        algorithm: model.algorithm,
        init: config.init,
        k: model.k,
        final_cost: model.final_cost,
        n_iter: model.n_iter,
        cluster_sizes,
    });
    manifest.timings_secs.extend(clock.drain());

    let pattern = clock
        .time("preferences", || stage_preferences(config, &model, &datasets.d2))
        .map_err(|e| e.in_stage("preferences"))?;
    manifest.results.preferences = Some(PreferenceSummary {
        mean_preference: pattern
            .values
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect(),
    });
    manifest.timings_secs.extend(clock.drain());

    let overlap = clock
        .time("overlap", || stage_overlap(config, &model, &datasets.d2))
        .map_err(|e| e.in_stage("overlap"))?;
    manifest.results.overlap = Some(overlap);
    manifest.timings_secs.extend(clock.drain());

    Ok(())
}

#[derive(Default)]
struct StageClock {
    entries: Vec<(String, f64)>,
}

impl StageClock {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.entries
            .push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn drain(&mut self) -> impl Iterator<Item = (String, f64)> + '_ {
        self.entries.drain(..)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_are_derived_from_the_documented_names() {
        let seeds = StageSeeds::derive(7);
        assert_eq!(seeds.split, stage_seed(7, "split"));
        assert_eq!(seeds.cluster, stage_seed(7, "cluster"));
    }

    #[test]
    fn split_file_round_trips_and_checks_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let split = UserSplit {
            train_rows: vec![0, 2, 3],
            test_rows: vec![1],
            seed: 9,
        };
        save_split(&split, &path).unwrap();
        assert_eq!(load_split(&path).unwrap(), split);

        fs::write(&path, r#"{"format":"prefcluster-split-v9","train_rows":[],"test_rows":[],"seed":0}"#).unwrap();
        assert!(matches!(load_split(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn elbow_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("elbow.json");
        let summary = ElbowSummary {
            ks: vec![1, 2, 3],
            costs: vec![10.0, 4.0, 3.5],
            detected_k: 2,
            second_differences: vec![(2, 5.5)],
        };
        save_elbow(&summary, 3, &path).unwrap();
        let (curve, detected) = load_elbow(&path).unwrap();
        assert_eq!(curve.ks, summary.ks);
        assert_eq!(curve.costs, summary.costs);
        assert_eq!(detected, 2);
    }
}
