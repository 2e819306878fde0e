//! Reproducible runs driven by [`Settings`].
//!
//! Every command writes into the `out` directory and leaves a
//! `manifest.json` there with the resolved settings and the SHA-256 of each
//! input file. Training logs carry wall-clock seconds; every other artifact
//! is a pure function of the settings and inputs.

pub mod settings;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{init_model, seeded_rng, CovariateMatrix, Hyperparameters, ModelState, PriorInit};
use crate::em::{thread_pool, train, StopMetric, TrainConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, PredictionRule};
use crate::exposure::CovariateSettings;
use crate::ingest::layout::{self, read_dataset, write_dataset, DatasetDir};
use crate::ingest::{
    cluster_locations, filter_and_binarize, load_covariates, load_interactions, load_locations, split,
    RecordFormat, SplitProportions,
};
use crate::synthetic::{
    recovery_report, sample_dataset, write_tsv, ExposureProcess, GroundTruth, ObservationMode, SyntheticSpec,
};
use crate::wmf::{wmf_fit, WmfConfig};

pub use settings::Settings;

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS: &str = "metrics.jsonl";
pub const GRID: &str = "grid.jsonl";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_USERS: &str = "eval_users.tsv";
pub const TRUTH: &str = "ground_truth.json";
pub const INTERACTIONS: &str = "interactions.tsv";
pub const RECOVERY: &str = "recovery.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Train,
    Evaluate,
    Synth,
    Recover,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Synth => "synth",
            Command::Recover => "recover",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Command::Ingest,
            Command::Train,
            Command::Evaluate,
            Command::Synth,
            Command::Recover,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::config("command", format!("unknown command `{s}`")))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Wmf,
    Fixed,
    PerItem,
    Covariate,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wmf" => Ok(Variant::Wmf),
            "expomf-fixed" => Ok(Variant::Fixed),
            "expomf-peritem" => Ok(Variant::PerItem),
            "expomf-covariate" => Ok(Variant::Covariate),
            other => Err(Error::config(
                "variant",
                format!("`{other}` is not one of wmf, expomf-fixed, expomf-peritem, expomf-covariate"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub settings: Settings,
}

impl RunConfig {
    pub fn new(command: Command, settings: Settings) -> Self {
        Self { command, settings }
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self
            .settings
            .path("out")
            .ok_or_else(|| Error::config("out", "an output directory is required"))?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(out)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    settings: &'a BTreeMap<String, String>,
    grid: &'a BTreeMap<String, Vec<String>>,
    inputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(config: &RunConfig, out: &Path, inputs: &[PathBuf]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for path in inputs {
        hashes.insert(path.display().to_string(), sha256_file(path)?);
    }
    let manifest = Manifest {
        command: config.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: config.settings.get("seed")?,
        settings: config.settings.values(),
        grid: config.settings.grid(),
        inputs: hashes,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&out.join(MANIFEST), text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn say(sink: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    sink.write_all(text.as_ref().as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Execute one command, writing a short human-readable summary to `sink`.
pub fn run(config: &RunConfig, sink: &mut dyn Write) -> Result<()> {
    match config.command {
        Command::Ingest => run_ingest(config, sink),
        Command::Train => run_train(config, sink),
        Command::Evaluate => run_evaluate(config, sink),
        Command::Synth => run_synth(config, sink),
        Command::Recover => run_recover(config, sink),
    }
}

fn run_ingest(config: &RunConfig, sink: &mut dyn Write) -> Result<()> {
    let s = &config.settings;
    let input = s.existing_path("input")?;
    let format = match s.raw("format") {
        "auto" => RecordFormat::from_path(&input),
        "tsv" => RecordFormat::Tsv,
        "csv" => RecordFormat::Csv,
        other => return Err(Error::config("format", format!("expected auto, tsv or csv, got `{other}`"))),
    };
    let covariate_path = s.path("covariates").map(|_| s.existing_path("covariates")).transpose()?;
    let location_path = s.path("locations").map(|_| s.existing_path("locations")).transpose()?;
    let proportions = SplitProportions {
        train: s.get("split_train")?,
        test: s.get("split_test")?,
        validation: s.get("split_validation")?,
    };
    let seed: u64 = s.get("seed")?;
    let (min_u, min_i): (usize, usize) = (s.get("min_user_items")?, s.get("min_item_users")?);
    if min_u == 0 || min_i == 0 {
        return Err(Error::config("min_user_items", "activity thresholds must be at least 1"));
    }
    let out = config.out_dir()?;

    let raw = load_interactions(&input, format)?;
    let matrix = filter_and_binarize(&raw, min_u, min_i)?;
    let data = split(&matrix, proportions, seed)?;
    let items = matrix.item_ids();
    let covariates = covariate_path.as_ref().map(|p| load_covariates(p, items)).transpose()?;
    let locations = location_path.as_ref().map(|p| load_locations(p, items)).transpose()?;
    write_dataset(&out, &data, covariates.as_ref(), locations.as_deref())?;

    let inputs: Vec<PathBuf> = [Some(input), covariate_path, location_path].into_iter().flatten().collect();
    write_manifest(config, &out, &inputs)?;
    say(
        sink,
        format!(
            "ingested {} users x {} items: train {}, validation {}, test {} -> {}\n",
            data.n_users(),
            data.n_items(),
            data.train.nnz(),
            data.validation.nnz(),
            data.test.nnz(),
            out.display()
        ),
    )
}

fn hyperparameters(s: &Settings) -> Result<Hyperparameters> {
    let hyper = Hyperparameters {
        k: s.get("k")?,
        lambda_theta: s.get("lambda_theta")?,
        lambda_beta: s.get("lambda_beta")?,
        lambda_y: s.get("lambda_y")?,
        alpha1: s.get("alpha1")?,
        alpha2: s.get("alpha2")?,
        init_scale: s.get("init_scale")?,
        seed: s.get("seed")?,
    };
    hyper.validate()?;
    Ok(hyper)
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let stop_metric = match s.raw("stop_metric") {
        "ndcg" => StopMetric::ValidationNdcg,
        "objective" => StopMetric::MarginalLogPosterior,
        other => return Err(Error::config("stop_metric", format!("expected ndcg or objective, got `{other}`"))),
    };
    let cfg = TrainConfig {
        max_iters: s.get("max_iters")?,
        stop_metric,
        patience: s.get("patience")?,
        ndcg_truncation: s.get("ndcg_k")?,
        threads: s.get("threads")?,
        log_objective: s.flag("log_objective")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Covariates for the covariate variant, plus the files they came from.
///
/// Explicit `covariates` / `locations` settings win over files in the
/// dataset directory; topic-style covariates win over locations.
fn resolve_covariates(s: &Settings, dir: &Path, dataset: &DatasetDir) -> Result<(CovariateMatrix, Vec<PathBuf>)> {
    let items = dataset.data.train.item_ids();
    if s.path("covariates").is_some() {
        let path = s.existing_path("covariates")?;
        return Ok((load_covariates(&path, items)?, vec![path]));
    }
    let n_clusters: usize = s.get("n_clusters")?;
    let seed: u64 = s.get("seed")?;
    if s.path("locations").is_some() {
        let path = s.existing_path("locations")?;
        let coords = load_locations(&path, items)?;
        return Ok((cluster_locations(&coords, n_clusters, seed)?, vec![path]));
    }
    if let Some(x) = &dataset.covariates {
        return Ok((x.clone(), vec![dir.join(layout::COVARIATES)]));
    }
    if let Some(coords) = &dataset.locations {
        return Ok((
            cluster_locations(coords, n_clusters, seed)?,
            vec![dir.join(layout::LOCATIONS)],
        ));
    }
    Err(missing_covariates())
}

fn missing_covariates() -> Error {
    Error::config(
        "covariates",
        "variant expomf-covariate needs a covariates or locations file",
    )
}

fn initial_state(s: &Settings, dataset: &DatasetDir, covariates: Option<&CovariateMatrix>) -> Result<ModelState> {
    let (n_users, n_items) = (dataset.data.n_users(), dataset.data.n_items());
    let variant: Variant = s.raw("variant").parse()?;
    let hyper = hyperparameters(s)?;
    let prior = match variant {
        Variant::Wmf => return wmf_config(s)?.init_state(n_users, n_items),
        Variant::Fixed => PriorInit::Fixed { mu: s.get("fixed_mu")? },
        Variant::PerItem => PriorInit::PerItem {
            initial_mu: s.get("init_mu")?,
        },
        Variant::Covariate => PriorInit::Covariate {
            covariates: covariates
                .cloned()
                .ok_or_else(|| Error::config("covariates", "variant expomf-covariate needs covariates"))?,
            settings: CovariateSettings {
                step_size: s.get("step_size")?,
                batch_size: s.get("batch_size")?,
                epochs_per_m_step: s.get("epochs")?,
                use_bias: s.flag("use_bias")?,
            },
            initial_mu: s.get("init_mu")?,
        },
    };
    init_model(n_users, n_items, &hyper, prior)
}

fn wmf_config(s: &Settings) -> Result<WmfConfig> {
    let cfg = WmfConfig {
        k: s.get("k")?,
        lambda_theta: s.get("lambda_theta")?,
        lambda_beta: s.get("lambda_beta")?,
        c0: s.get("c0")?,
        c1: s.get("c1")?,
        max_iters: s.get("max_iters")?,
        init_scale: s.get("init_scale")?,
        seed: s.get("seed")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn fit(s: &Settings, dataset: &DatasetDir, covariates: Option<&CovariateMatrix>) -> Result<TrainOutcome> {
    let cfg = train_config(s)?;
    if s.raw("variant") == "wmf" {
        return wmf_fit(&dataset.data, &wmf_config(s)?, &cfg);
    }
    train(initial_state(s, dataset, covariates)?, &dataset.data, &cfg)
}

fn best_value(outcome: &TrainOutcome) -> f64 {
    outcome
        .log
        .iter()
        .find(|r| r.iteration == outcome.best_iteration)
        .and_then(|r| r.validation_ndcg.or(r.marginal_log_posterior))
        .unwrap_or(f64::NEG_INFINITY)
}

fn dataset_inputs(dir: &Path) -> Vec<PathBuf> {
    [layout::USERS, layout::ITEMS, layout::TRAIN, layout::VALIDATION, layout::TEST]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

#[derive(Serialize)]
struct GridRecord<'a> {
    point: BTreeMap<&'a str, &'a str>,
    best_iteration: u64,
    score: f64,
}

fn run_train(config: &RunConfig, sink: &mut dyn Write) -> Result<()> {
    let s = &config.settings;
    let dir = s.existing_path("data")?;
    let variant: Variant = s.raw("variant").parse()?;
    let points = s.expand_grid()?;
    for p in &points {
        train_config(p)?;
        if variant == Variant::Wmf {
            wmf_config(p)?;
        } else {
            hyperparameters(p)?;
        }
    }
    if variant == Variant::Covariate
        && s.path("covariates").is_none()
        && s.path("locations").is_none()
        && !dir.join(layout::COVARIATES).exists()
        && !dir.join(layout::LOCATIONS).exists()
    {
        return Err(missing_covariates());
    }
    let dataset = read_dataset(&dir)?;
    let mut inputs = dataset_inputs(&dir);
    let covariates = if variant == Variant::Covariate {
        let (x, from) = resolve_covariates(s, &dir, &dataset)?;
        inputs.extend(from);
        Some(x)
    } else {
        None
    };
    let out = config.out_dir()?;

    let mut best: Option<(f64, TrainOutcome)> = None;
    let mut grid_log = String::new();
    for point in &points {
        let outcome = fit(point, &dataset, covariates.as_ref())?;
        let score = best_value(&outcome);
        if points.len() > 1 {
            let record = GridRecord {
                point: s.grid().keys().map(|k| (k.as_str(), point.raw(k))).collect(),
                best_iteration: outcome.best_iteration,
                score,
            };
            grid_log.push_str(&serde_json::to_string(&record).expect("record serializes"));
            grid_log.push('\n');
            say(sink, format!("grid {:?} -> {score:.6}\n", record.point))?;
        }
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, outcome));
        }
    }
    let (score, outcome) = best.expect("at least one grid point");
    if points.len() > 1 {
        write_file(&out.join(GRID), grid_log.as_bytes())?;
    }
    save_checkpoint(&outcome.state, out.join(CHECKPOINT))?;
    let log: String = outcome.log.iter().map(|r| r.to_json_line() + "\n").collect();
    write_file(&out.join(METRICS), log.as_bytes())?;
    write_manifest(config, &out, &inputs)?;
    say(
        sink,
        format!(
            "trained {} (K = {}) for {} iterations; best iteration {} with {} = {score:.6} -> {}\n",
            s.raw("variant"),
            outcome.state.hyper.k,
            outcome.log.len() - 1,
            outcome.best_iteration,
            s.raw("stop_metric"),
            out.join(CHECKPOINT).display()
        ),
    )
}

fn checkpoint_path(s: &Settings) -> Result<PathBuf> {
    if s.path("checkpoint").is_some() {
        return s.existing_path("checkpoint");
    }
    let fallback = s.path("out").unwrap_or_default().join(CHECKPOINT);
    if fallback.exists() {
        Ok(fallback)
    } else {
        Err(Error::config(
            "checkpoint",
            format!("not set and {} does not exist", fallback.display()),
        ))
    }
}

fn eval_config(s: &Settings) -> Result<EvalConfig> {
    let rule = match s.raw("rule") {
        "auto" => None,
        other => Some(PredictionRule::parse(other).ok_or_else(|| {
            Error::config("rule", format!("expected auto, dot or exposure_weighted, got `{other}`"))
        })?),
    };
    Ok(EvalConfig {
        recall_ks: s.list("recall_ks")?,
        ndcg_k: s.get("ndcg_k")?,
        map_k: s.get("map_k")?,
        rule,
    })
}

fn run_evaluate(config: &RunConfig, sink: &mut dyn Write) -> Result<()> {
    let s = &config.settings;
    let dir = s.existing_path("data")?;
    let ckpt = checkpoint_path(s)?;
    let cfg = eval_config(s)?;
    let pool = thread_pool(s.get("threads")?)?;
    let dataset = read_dataset(&dir)?;
    let state = load_checkpoint(&ckpt)?;
    let out = config.out_dir()?;
    let report = pool.install(|| evaluate(&state, &dataset.data, &cfg))?;

    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&out.join(EVAL_JSON), json.as_bytes())?;
    write_file(&out.join(EVAL_USERS), report.users_table().as_bytes())?;
    let mut inputs = dataset_inputs(&dir);
    inputs.push(ckpt);
    write_manifest(config, &out, &inputs)?;
    say(sink, report.grid())
}

fn synthetic_spec(s: &Settings) -> Result<SyntheticSpec> {
    let seed: u64 = s.get("seed")?;
    let n_users: usize = s.get("synth.users")?;
    let n_items: usize = s.get("synth.items")?;
    let exposure = match s.raw("synth.exposure") {
        "constant" => ExposureProcess::Constant { mu: s.get("synth.mu")? },
        "popularity" => ExposureProcess::Popularity {
            alpha1: s.get("synth.alpha1")?,
            alpha2: s.get("synth.alpha2")?,
        },
        "regions" => {
            // regions get their own stream so changing them leaves θ, β intact
            let mut rng = seeded_rng(seed.wrapping_add(0x5EED));
            ExposureProcess::separated_regions(
                n_users,
                n_items,
                s.get("synth.regions")?,
                s.get("synth.home_mu")?,
                s.get("synth.away_mu")?,
                &mut rng,
            )?
        }
        other => {
            return Err(Error::config(
                "synth.exposure",
                format!("expected constant, popularity or regions, got `{other}`"),
            ))
        }
    };
    let observation = match s.raw("synth.observation") {
        "gaussian" => ObservationMode::Gaussian,
        "binarized" => ObservationMode::Binarized {
            density: s.get("synth.density")?,
        },
        other => {
            return Err(Error::config(
                "synth.observation",
                format!("expected gaussian or binarized, got `{other}`"),
            ))
        }
    };
    let spec = SyntheticSpec {
        n_users,
        n_items,
        k: s.get("synth.k")?,
        lambda_theta: s.get("synth.lambda_theta")?,
        lambda_beta: s.get("synth.lambda_beta")?,
        lambda_y: s.get("synth.lambda_y")?,
        exposure,
        observation,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn run_synth(config: &RunConfig, sink: &mut dyn Write) -> Result<()> {
    let s = &config.settings;
    let spec = synthetic_spec(s)?;
    let proportions = SplitProportions {
        train: s.get("split_train")?,
        test: s.get("split_test")?,
        validation: s.get("split_validation")?,
    };
    let out = config.out_dir()?;
    let sample = sample_dataset(&spec)?;
    let data = split(&sample.y, proportions, spec.seed)?;
    let covariates = sample.truth.covariates();
    write_dataset(&out, &data, covariates.as_ref(), None)?;
    write_tsv(&sample.y, out.join(INTERACTIONS))?;
    sample.truth.save_json(out.join(TRUTH))?;
    write_manifest(config, &out, &[])?;
    say(
        sink,
        format!(
            "sampled {} x {} ({} nonzeros, {} exposed pairs) -> {}\n",
            spec.n_users,
            spec.n_items,
            sample.y.nnz(),
            sample.truth.exposed.len(),
            out.display()
        ),
    )
}

fn run_recover(config: &RunConfig, sink: &mut dyn Write) -> Result<()> {
    let s = &config.settings;
    let dir = s.existing_path("data")?;
    let truth_path = dir.join(TRUTH);
    if !truth_path.exists() {
        return Err(Error::config("data", format!("{} has no {TRUTH}", dir.display())));
    }
    let ckpt = checkpoint_path(s)?;
    let pool = thread_pool(s.get("threads")?)?;
    let dataset = read_dataset(&dir)?;
    let truth = GroundTruth::load_json(&truth_path)?;
    let state = load_checkpoint(&ckpt)?;
    let out = config.out_dir()?;
    let report = pool.install(|| recovery_report(&state, &truth, &dataset.data))?;
    let json = report.to_json() + "\n";
    write_file(&out.join(RECOVERY), json.as_bytes())?;
    let mut inputs = dataset_inputs(&dir);
    inputs.extend([truth_path, ckpt]);
    write_manifest(config, &out, &inputs)?;
    say(sink, json)
}
