//! Command-line front end: one subcommand per pipeline stage, a one-shot
//! `pipeline` runner, and a synthetic-corpus generator.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use prefcluster::clustering::{Algorithm, Init};
use prefcluster::error::{Error, Result};
use prefcluster::pipeline::{self, files, PipelineConfig};
use prefcluster::ratings_io;
use prefcluster::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "prefcluster", version, about = "Joke-reader segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage end to end and write a run manifest.
    Pipeline(PipelineArgs),
    /// Load raw ratings, binarize them, and split users into train/test.
    Ingest(IngestArgs),
    /// Train the imputation model and report its test MAE.
    TrainRbm(TrainRbmArgs),
    /// Build the imputed datasets D1 and D2 from the trained model.
    Impute(DirArgs),
    /// Test cluster tendency of D1 with the Hopkins statistic.
    Hopkins(HopkinsArgs),
    /// Sweep cluster counts on D1 and detect the elbow.
    Elbow(ElbowArgs),
    /// Fit the clustering model on D1.
    Cluster(ClusterArgs),
    /// Compute and chart per-cluster preference patterns on D2.
    Preferences(DirArgs),
    /// Run the cluster-overlap test on D2 under both metrics.
    Overlap(DirArgs),
    /// Generate a synthetic rating corpus with planted archetypes.
    Synth(SynthArgs),
}

fn parse_algorithm(s: &str) -> Result<Algorithm> {
    Algorithm::from_str(s)
}

fn parse_init(s: &str) -> Result<Init> {
    Init::from_str(s)
}

#[derive(Args)]
struct PipelineArgs {
    /// Input ratings file (delimited text, one user per row).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for artifacts and the manifest.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Treat the leading field of each row as a rated-count column.
    #[arg(long)]
    has_count_column: bool,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    n_hidden: Option<usize>,
    #[arg(long)]
    cd_k: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hopkins sample size (default: min(ceil(0.1 n), 500)).
    #[arg(long)]
    hopkins_m: Option<usize>,
    /// Comma-separated cluster counts for the elbow sweep.
    #[arg(long, value_delimiter = ',')]
    elbow_ks: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    #[arg(long, value_parser = parse_init)]
    init: Option<Init>,
    /// Cluster count override; otherwise the detected elbow is used.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Key-value config file (`key = value`, keys named like these flags);
    /// explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    has_count_column: bool,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    master_seed: u64,
}

#[derive(Args)]
struct TrainRbmArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_hidden: usize,
    #[arg(long, default_value_t = 1)]
    cd_k: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    #[arg(long, default_value_t = 42)]
    master_seed: u64,
}

#[derive(Args)]
struct DirArgs {
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct HopkinsArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    hopkins_m: Option<usize>,
    #[arg(long, default_value_t = 42)]
    master_seed: u64,
    /// Print the result as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ElbowArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    elbow_ks: Vec<usize>,
    #[arg(long, value_parser = parse_algorithm, default_value = "kmodes")]
    algorithm: Algorithm,
    #[arg(long, value_parser = parse_init, default_value = "cao")]
    init: Init,
    #[arg(long, default_value_t = 8)]
    n_restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 42)]
    master_seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    output_dir: PathBuf,
    /// Cluster count; without it the detected elbow from `elbow` is used.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_algorithm, default_value = "kmodes")]
    algorithm: Algorithm,
    #[arg(long, value_parser = parse_init, default_value = "cao")]
    init: Init,
    #[arg(long, default_value_t = 8)]
    n_restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 42)]
    master_seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Output ratings file.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_users: usize,
    #[arg(long, default_value_t = 100)]
    n_jokes: usize,
    #[arg(long, default_value_t = 3)]
    archetypes: usize,
    #[arg(long, default_value_t = 0.3)]
    missing_fraction: f64,
    #[arg(long, default_value_t = 0.17)]
    flip_probability: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix each row with a rated-count column.
    #[arg(long)]
    count_column: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Usage problems exit with 2, stage failures with 1.
enum CliError {
    Usage(String),
    Stage(Error),
}

struct UsageError(String);

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

fn run(command: Command) -> std::result::Result<(), CliError> {
    let outcome = match command {
        Command::Pipeline(args) => {
            let config = merge_pipeline_config(&args)?;
            run_pipeline_and_report(&config)
        }
        Command::Ingest(args) => cmd_ingest(args),
        Command::TrainRbm(args) => cmd_train_rbm(args),
        Command::Impute(args) => cmd_impute(args),
        Command::Hopkins(args) => cmd_hopkins(args),
        Command::Elbow(args) => cmd_elbow(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Preferences(args) => cmd_preferences(args),
        Command::Overlap(args) => cmd_overlap(args),
        Command::Synth(args) => cmd_synth(args),
    };
    outcome.map_err(CliError::Stage)
}

/// Build the pipeline config from defaults, then the config file, then
/// explicit flags.
fn merge_pipeline_config(args: &PipelineArgs) -> std::result::Result<PipelineConfig, UsageError> {
    let file_values = match &args.config {
        Some(path) => parse_config_file(path).map_err(|e| UsageError(e.to_string()))?,
        None => HashMap::new(),
    };

    fn from_file<T: FromStr>(
        map: &HashMap<String, String>,
        key: &str,
    ) -> std::result::Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        match map.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| UsageError(format!("config key {key}: {e}"))),
            None => Ok(None),
        }
    }

    let input = args
        .input
        .clone()
        .or_else(|| file_values.get("input").map(PathBuf::from))
        .ok_or_else(|| UsageError("--input is required (flag or config file)".into()))?;
    let output_dir = args
        .output_dir
        .clone()
        .or_else(|| file_values.get("output-dir").map(PathBuf::from))
        .ok_or_else(|| UsageError("--output-dir is required (flag or config file)".into()))?;

    let mut config = PipelineConfig::new(input, output_dir);
    config.has_count_column =
        args.has_count_column || from_file(&file_values, "has-count-column")?.unwrap_or(false);

    macro_rules! merge {
        ($field:ident, $key:literal) => {
            if let Some(v) = args.$field.clone().or(from_file(&file_values, $key)?) {
                config.$field = v;
            }
        };
    }
    merge!(test_fraction, "test-fraction");
    merge!(n_hidden, "n-hidden");
    merge!(cd_k, "cd-k");
    merge!(learning_rate, "learning-rate");
    merge!(epochs, "epochs");
    merge!(batch_size, "batch-size");
    merge!(n_restarts, "n-restarts");
    merge!(max_iter, "max-iter");
    merge!(tol, "tol");
    merge!(master_seed, "master-seed");
    merge!(algorithm, "algorithm");
    merge!(init, "init");
    if let Some(v) = args.hopkins_m.or(from_file(&file_values, "hopkins-m")?) {
        config.hopkins_m = Some(v);
    }
    if let Some(v) = args.k.or(from_file(&file_values, "k")?) {
        config.k = Some(v);
    }
    if let Some(ks) = args.elbow_ks.clone() {
        config.elbow_ks = ks;
    } else if let Some(raw) = file_values.get("elbow-ks") {
        let ks: std::result::Result<Vec<usize>, _> =
            raw.split(',').map(|s| s.trim().parse()).collect();
        config.elbow_ks = ks.map_err(|e| UsageError(format!("config key elbow-ks: {e}")))?;
    }

    let known_keys = [
        "input", "output-dir", "has-count-column", "test-fraction", "n-hidden", "cd-k",
        "learning-rate", "epochs", "batch-size", "hopkins-m", "elbow-ks", "algorithm", "init",
        "k", "n-restarts", "max-iter", "tol", "master-seed",
    ];
    for key in file_values.keys() {
        if !known_keys.contains(&key.as_str()) {
            return Err(UsageError(format!("config file has unknown key {key:?}")));
        }
    }

    Ok(config)
}

/// `key = value` lines, `#` comments, blank lines ignored.
fn parse_config_file(path: &PathBuf) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected `key = value`, got {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn run_pipeline_and_report(config: &PipelineConfig) -> Result<()> {
    let manifest = pipeline::run_pipeline(config)?;
    let r = &manifest.results;
    if let Some(ingest) = &r.ingest {
        println!(
            "ingest: {} users x {} jokes, {} train / {} test, {} missing cells",
            ingest.n_users, ingest.n_jokes, ingest.n_train, ingest.n_test, ingest.missing_cells
        );
    }
    if let Some(rbm) = &r.rbm {
        println!("train-rbm: test MAE = {:.4}", rbm.test_mae);
    }
    if let Some(h) = &r.hopkins {
        println!("hopkins: h = {:.5e} (m = {}, seed = {})", h.h, h.m, h.seed);
    }
    if let Some(elbow) = &r.elbow {
        println!(
            "elbow: detected k = {} over ks {:?} with costs {:?}",
            elbow.detected_k, elbow.ks, elbow.costs
        );
    }
    if let Some(cluster) = &r.cluster {
        println!(
            "cluster: {} k = {} cost = {} after {} iterations, sizes {:?}",
            cluster.algorithm, cluster.k, cluster.final_cost, cluster.n_iter, cluster.cluster_sizes
        );
    }
    if let Some(overlap) = &r.overlap {
        match &overlap.matching {
            Some(m) => println!("overlap (matching): {} pair(s) {:?}", m.pair_count(), m.pairs),
            None => println!("overlap (matching): skipped, centroids are fractional"),
        }
        let s = &overlap.squared_euclidean;
        println!(
            "overlap (squared_euclidean): {} pair(s) {:?}",
            s.pair_count(),
            s.pairs
        );
    }
    println!(
        "manifest: {}",
        config.output_dir.join(files::MANIFEST).display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let mut config = PipelineConfig::new(args.input, args.output_dir);
    config.has_count_column = args.has_count_column;
    config.test_fraction = args.test_fraction;
    config.master_seed = args.master_seed;
    fs::create_dir_all(&config.output_dir)?;
    let out = pipeline::stage_ingest(&config).map_err(|e| e.in_stage("ingest"))?;
    println!(
        "ingest: {} users x {} jokes, {} train / {} test, {} missing cells",
        out.summary.n_users,
        out.summary.n_jokes,
        out.summary.n_train,
        out.summary.n_test,
        out.summary.missing_cells
    );
    Ok(())
}

fn cmd_train_rbm(args: TrainRbmArgs) -> Result<()> {
    let mut config = PipelineConfig::new("", &args.output_dir);
    config.n_hidden = args.n_hidden;
    config.cd_k = args.cd_k;
    config.learning_rate = args.learning_rate;
    config.epochs = args.epochs;
    config.batch_size = args.batch_size;
    config.master_seed = args.master_seed;
    let binarized = pipeline::load_binary_matrix(&args.output_dir.join(files::BINARIZED))
        .map_err(|e| e.in_stage("train-rbm"))?;
    let split = pipeline::load_split(&args.output_dir.join(files::SPLIT))
        .map_err(|e| e.in_stage("train-rbm"))?;
    let (_, history, mae) = pipeline::stage_train_rbm(&config, &binarized, &split)
        .map_err(|e| e.in_stage("train-rbm"))?;
    println!(
        "train-rbm: test MAE = {:.4}, final reconstruction error = {:.4}",
        mae,
        history.reconstruction_error.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_impute(args: DirArgs) -> Result<()> {
    let config = PipelineConfig::new("", &args.output_dir);
    let binarized = pipeline::load_binary_matrix(&args.output_dir.join(files::BINARIZED))
        .map_err(|e| e.in_stage("impute"))?;
    let (params, _) = pipeline::load_rbm_file(&args.output_dir.join(files::RBM))
        .map_err(|e| e.in_stage("impute"))?;
    let datasets = pipeline::stage_impute(&config, &params, &binarized)
        .map_err(|e| e.in_stage("impute"))?;
    println!(
        "impute: D1 and D2 written ({} users x {} jokes)",
        datasets.d1.n_users(),
        datasets.d1.n_jokes()
    );
    Ok(())
}

fn cmd_hopkins(args: HopkinsArgs) -> Result<()> {
    let mut config = PipelineConfig::new("", &args.output_dir);
    config.hopkins_m = args.hopkins_m;
    config.master_seed = args.master_seed;
    let d1 = pipeline::load_binary_matrix(&args.output_dir.join(files::D1))
        .map_err(|e| e.in_stage("hopkins"))?;
    let result = pipeline::stage_hopkins(&config, &d1).map_err(|e| e.in_stage("hopkins"))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        println!(
            "hopkins: h = {:.5e} (m = {}, seed = {})",
            result.h, result.m, result.seed
        );
    }
    Ok(())
}

fn cmd_elbow(args: ElbowArgs) -> Result<()> {
    let mut config = PipelineConfig::new("", &args.output_dir);
    config.elbow_ks = args.elbow_ks;
    config.algorithm = args.algorithm;
    config.init = args.init;
    config.n_restarts = args.n_restarts;
    config.max_iter = args.max_iter;
    config.tol = args.tol;
    config.master_seed = args.master_seed;
    let d1 = pipeline::load_binary_matrix(&args.output_dir.join(files::D1))
        .map_err(|e| e.in_stage("elbow"))?;
    let summary = pipeline::stage_elbow(&config, &d1).map_err(|e| e.in_stage("elbow"))?;
    for (k, cost) in summary.ks.iter().zip(&summary.costs) {
        println!("k = {k}: cost = {cost}");
    }
    for (k, d2) in &summary.second_differences {
        println!("second difference at k = {k}: {d2}");
    }
    println!("detected elbow: k = {}", summary.detected_k);
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let mut config = PipelineConfig::new("", &args.output_dir);
    config.algorithm = args.algorithm;
    config.init = args.init;
    config.n_restarts = args.n_restarts;
    config.max_iter = args.max_iter;
    config.tol = args.tol;
    config.master_seed = args.master_seed;
    let d1 = pipeline::load_binary_matrix(&args.output_dir.join(files::D1))
        .map_err(|e| e.in_stage("cluster"))?;
    let k = match args.k {
        Some(k) => k,
        None => {
            let (_, detected) = pipeline::load_elbow(&args.output_dir.join(files::ELBOW_JSON))
                .map_err(|e| e.in_stage("cluster"))?;
            detected
        }
    };
    let model = pipeline::stage_cluster(&config, &d1, k).map_err(|e| e.in_stage("cluster"))?;
    println!(
        "cluster: {} k = {} cost = {} after {} iterations",
        model.algorithm, model.k, model.final_cost, model.n_iter
    );
    Ok(())
}

fn cmd_preferences(args: DirArgs) -> Result<()> {
    let config = PipelineConfig::new("", &args.output_dir);
    let model = pipeline::load_model_file(&args.output_dir.join(files::MODEL))
        .map_err(|e| e.in_stage("preferences"))?;
    let d2 = pipeline::load_binary_matrix(&args.output_dir.join(files::D2))
        .map_err(|e| e.in_stage("preferences"))?;
    let pattern = pipeline::stage_preferences(&config, &model, &d2)
        .map_err(|e| e.in_stage("preferences"))?;
    println!(
        "preferences: {} clusters x {} items, sizes {:?}",
        pattern.k, pattern.n_items, pattern.cluster_sizes
    );
    Ok(())
}

fn cmd_overlap(args: DirArgs) -> Result<()> {
    let config = PipelineConfig::new("", &args.output_dir);
    let model = pipeline::load_model_file(&args.output_dir.join(files::MODEL))
        .map_err(|e| e.in_stage("overlap"))?;
    let d2 = pipeline::load_binary_matrix(&args.output_dir.join(files::D2))
        .map_err(|e| e.in_stage("overlap"))?;
    let summaries =
        pipeline::stage_overlap(&config, &model, &d2).map_err(|e| e.in_stage("overlap"))?;
    match &summaries.matching {
        Some(m) => println!("overlap (matching): {} pair(s) {:?}", m.pair_count(), m.pairs),
        None => println!("overlap (matching): skipped, centroids are fractional"),
    }
    println!(
        "overlap (squared_euclidean): {} pair(s) {:?}",
        summaries.squared_euclidean.pair_count(),
        summaries.squared_euclidean.pairs
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_users: args.n_users,
        n_jokes: args.n_jokes,
        n_archetypes: args.archetypes,
        missing_fraction: args.missing_fraction,
        flip_probability: args.flip_probability,
        seed: args.seed,
    };
    let matrix = synth::generate(&config)?;
    if let Some(parent) = args.output.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let out = fs::File::create(&args.output)?;
    ratings_io::write_raw_matrix(&matrix, std::io::BufWriter::new(out), args.count_column)?;
    println!(
        "synth: wrote {} users x {} jokes to {}",
        matrix.n_users(),
        matrix.n_jokes(),
        args.output.display()
    );
    Ok(())
}
