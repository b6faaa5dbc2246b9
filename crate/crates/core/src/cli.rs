//! The `bioid` command line.
//!
//! Settings come from [`RunConfig`] defaults, then an optional `--config`
//! file, then flags. The file is either a JSON object or `key = value`
//! lines, where `key` is a dotted path into the config and `value` is a JSON
//! literal or a bare string:
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 7
//! keys = ["acc", "acc+gyro"]
//! train.hyperparams.max_epochs = 40
//! synth.n_users = 6
//! ```
//!
//! Exit codes: 0 success or MATCHED, 1 UNMATCHED (`match` only), 2 usage or
//! configuration error, 3 data error, 4 missing model.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{
    activity_breakdown, group_similarity, placement_sweep, score_pairs, threshold_sweep, write_histogram_csv,
    write_table_csv, AnalysisError, GroupStats, MetricsReport, ReportConfig, SweepConfig,
};
use crate::dataset::{coverable_keys, leave_users_out, load_dir, prepare_all, Dataset};
use crate::encoder::EncoderError;
use crate::matcher::MatcherError;
use crate::pairs::{build_labeled_pairs, LabeledPairConfig, PairError, PairLabel};
use crate::registry::{
    bundle_file_name, load_bundle, train_bundle, Registry, RegistryError, TrainConfig,
};
use crate::signal::synth::{synth_generate, SynthConfig};
use crate::signal::{write_recording, DevicePlacement, Recording, SensorSet, SignalError, Window};
use crate::simulate::{find_recording, simulate, DeviceStream, Pacing, SimulationError};

#[derive(Debug, Parser)]
#[command(name = "bioid", version, about = "Time-bound bio-IDs for multi-device wearables")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON or `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root for every output; inputs default to subdirectories of it.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Decision threshold on the match probability.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Comma-separated sensor-set keys, e.g. `acc,acc+gyro`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sensors: Vec<SensorSet>,
    /// Comma-separated pair of placements, e.g. `left_ear,right_ear`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub placements: Vec<DevicePlacement>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Repeat for more log detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-device dataset.
    GenData,
    /// Train one model bundle per sensor-set key.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Similarity groups, placement table, threshold sweep and activity
    /// breakdown on the held-out users.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Decide whether two window files come from one wearer at one time.
    Match {
        bundle: PathBuf,
        window_a: PathBuf,
        window_b: PathBuf,
    },
    /// Dump embeddings of every window to CSV.
    Embed {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Replay two devices of one wearer through select, embed and match.
    Simulate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Wearer of both devices; defaults to the first held-out user.
        #[arg(long)]
        user: Option<String>,
        /// Hand the second device to this user mid-session.
        #[arg(long)]
        swap_user: Option<String>,
        /// Session time of the handoff in seconds; defaults to mid-session.
        #[arg(long)]
        swap_at: Option<f64>,
        /// Run unthrottled instead of one window per window duration.
        #[arg(long)]
        fast: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    /// Recording directory; `<out_dir>/data` when unset.
    pub data_dir: Option<PathBuf>,
    /// Bundle directory; `<out_dir>/models` when unset.
    pub models_dir: Option<PathBuf>,
    /// Keys to train or evaluate; every coverable key when empty.
    pub keys: Vec<SensorSet>,
    pub train: TrainConfig,
    /// Users, last in sorted order, withheld from training for evaluation.
    pub test_users: usize,
    pub threshold: f64,
    pub sweep_thresholds: Vec<f64>,
    pub n_pairs: usize,
    pub impostor_ratio: f64,
    pub placements: Option<(DevicePlacement, DevicePlacement)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            data_dir: None,
            models_dir: None,
            keys: Vec::new(),
            train: TrainConfig::default(),
            test_users: 3,
            threshold: 0.5,
            sweep_thresholds: crate::analysis::default_thresholds(),
            n_pairs: 2000,
            impostor_ratio: 0.5,
            placements: None,
        }
    }
}

impl RunConfig {
    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.models_dir.clone().unwrap_or_else(|| self.out_dir.join("models"))
    }

    /// Applies a settings file over the current values.
    pub fn merge_file(&self, path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        self.merge_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn merge_str(&self, text: &str) -> Result<Self, String> {
        let mut base = serde_json::to_value(self).map_err(|e| e.to_string())?;
        if text.trim_start().starts_with('{') {
            let patch: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
            merge_json(&mut base, patch);
        } else {
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, raw) = line
                    .split_once('=')
                    .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
                let raw = raw.trim();
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
                set_path(&mut base, key.trim(), value).map_err(|e| format!("line {}: {e}", n + 1))?;
            }
        }
        serde_json::from_value(base).map_err(|e| e.to_string())
    }

    fn apply_flags(&mut self, args: &CommonArgs) -> Result<(), CliError> {
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if let Some(d) = &args.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(t) = args.threshold {
            self.threshold = t;
        }
        if !args.sensors.is_empty() {
            self.keys = args.sensors.clone();
        }
        match args.placements.as_slice() {
            [] => {}
            [a, b] => self.placements = Some((*a, *b)),
            other => return Err(CliError::Usage(format!("--placements takes two values, got {}", other.len()))),
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Usage(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| format!("`{}` is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    MissingModel(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::MissingModel(_) => 4,
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::InvalidConfig(_) | SignalError::WrongDuration { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::ShapeMismatch(_) | EncoderError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MatcherError> for CliError {
    fn from(e: MatcherError) -> Self {
        match e {
            MatcherError::Encoder(e) => e.into(),
            MatcherError::ShapeMismatch(_) | MatcherError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PairError> for CliError {
    fn from(e: PairError) -> Self {
        match e {
            PairError::InvalidRequest(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NoOverlap { .. } | RegistryError::NoTrainedModel(_) => CliError::MissingModel(e.to_string()),
            RegistryError::Encoder(e) => e.into(),
            RegistryError::Matcher(e) => e.into(),
            RegistryError::Pairs(e) => e.into(),
            RegistryError::Signal(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::MissingModel(_) => CliError::MissingModel(e.to_string()),
            AnalysisError::Pairs(e) => e.into(),
            AnalysisError::Matcher(e) => e.into(),
            AnalysisError::Encoder(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Registry(e) => e.into(),
            SimulationError::Signal(e) => e.into(),
            SimulationError::Encoder(e) => e.into(),
            SimulationError::Matcher(e) => e.into(),
            SimulationError::MissingRecording { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_error(dir))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_error(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = create_file(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Data(e.to_string()))?;
    f.write_all(b"\n").map_err(io_error(path))
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.common.config {
        config = config.merge_file(path)?;
    }
    config.apply_flags(&cli.common)?;
    let force = cli.common.force;
    match &cli.command {
        Command::GenData => cmd_gen_data(&config, force).map(|_| 0),
        Command::Train { data } => cmd_train(&with_dirs(&config, data, &None), force).map(|_| 0),
        Command::Eval { data, models } => cmd_eval(&with_dirs(&config, data, models)).map(|_| 0),
        Command::Match { bundle, window_a, window_b } => {
            let decision = cmd_match(bundle, window_a, window_b, config.threshold)?;
            Ok(if decision == PairLabel::Matched { 0 } else { 1 })
        }
        Command::Embed { data, models } => cmd_embed(&with_dirs(&config, data, models)).map(|_| 0),
        Command::Simulate { data, models, user, swap_user, swap_at, fast } => {
            let sim = SimulateArgs {
                user: user.clone(),
                swap_user: swap_user.clone(),
                swap_at: *swap_at,
                pacing: if *fast { Pacing::Fast } else { Pacing::RealTime },
            };
            cmd_simulate(&with_dirs(&config, data, models), &sim).map(|_| 0)
        }
    }
}

fn with_dirs(config: &RunConfig, data: &Option<PathBuf>, models: &Option<PathBuf>) -> RunConfig {
    let mut c = config.clone();
    if data.is_some() {
        c.data_dir = data.clone();
    }
    if models.is_some() {
        c.models_dir = models.clone();
    }
    c
}

/// Writes the synthetic dataset as CSV recordings with JSON sidecars.
pub fn cmd_gen_data(config: &RunConfig, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let recordings = synth_generate(&config.synth, config.seed)?;
    let dir = config.data_dir();
    if !force && dir.join("synth_config.json").exists() {
        return Err(CliError::Usage(format!("{} already holds a dataset; pass --force to overwrite", dir.display())));
    }
    create_dir(&dir)?;
    let mut paths = Vec::with_capacity(recordings.len());
    for r in &recordings {
        let path = dir.join(format!("{}.csv", r.device_id));
        write_recording(r, &path)?;
        paths.push(path);
    }
    write_json(&dir.join("synth_config.json"), &config.synth)?;
    let users: std::collections::BTreeSet<_> = recordings.iter().map(|r| &r.user_id).collect();
    println!(
        "wrote {} recordings ({} users x {} devices, {} s) to {}",
        recordings.len(),
        users.len(),
        config.synth.devices.len(),
        config.synth.duration_s,
        dir.display()
    );
    Ok(paths)
}

fn load_prepared(config: &RunConfig) -> Result<Vec<Recording>, CliError> {
    let dir = config.data_dir();
    if !dir.is_dir() {
        return Err(CliError::Data(format!("dataset directory {} not found", dir.display())));
    }
    Ok(prepare_all(&load_dir(&dir)?)?)
}

/// Sorted users split into (train, test).
fn user_split(prepared: &[Recording], n_test: usize) -> Result<(Vec<String>, Vec<String>), CliError> {
    let mut users: Vec<String> = prepared.iter().map(|r| r.user_id.clone()).collect();
    users.sort();
    users.dedup();
    if users.len() <= n_test {
        return Err(CliError::Data(format!("{} users cannot hold out {n_test} for testing", users.len())));
    }
    Ok(leave_users_out(&users, n_test))
}

fn keys_for(config: &RunConfig, prepared: &[Recording]) -> Vec<SensorSet> {
    if config.keys.is_empty() {
        coverable_keys(prepared)
    } else {
        config.keys.clone()
    }
}

/// Trains every key on the training users and writes bundles plus loss logs.
pub fn cmd_train(config: &RunConfig, force: bool) -> Result<Registry, CliError> {
    let prepared = load_prepared(config)?;
    let (train_users, test_users) = user_split(&prepared, config.test_users)?;
    let train: Vec<Recording> = prepared.iter().filter(|r| train_users.contains(&r.user_id)).cloned().collect();
    let keys = keys_for(config, &prepared);
    let dir = config.models_dir();
    if !force {
        if let Some(k) = keys.iter().find(|k| dir.join(bundle_file_name(k)).exists()) {
            return Err(CliError::Usage(format!(
                "bundle for {k} already exists in {}; pass --force to retrain",
                dir.display()
            )));
        }
    }
    create_dir(&dir)?;
    write_json(&dir.join("split.json"), &serde_json::json!({ "train": train_users, "test": test_users }))?;
    let mut registry = Registry::default();
    for key in &keys {
        let dataset = Dataset::from_prepared(&train, key)?;
        log::info!("training {key}: {} windows on {} devices", dataset.len(), dataset.devices().len());
        let (bundle, logs) = train_bundle(&dataset, &config.train, config.seed)?;
        let stem = key.to_string();
        let path = dir.join(bundle_file_name(key));
        crate::registry::save_bundle(&bundle, &path)?;
        let loss = dir.join(format!("{stem}.encoder_loss.csv"));
        logs.encoder.write_csv(create_file(&loss)?).map_err(csv_error(&loss))?;
        let mloss = dir.join(format!("{stem}.matcher_loss.csv"));
        logs.matcher.write_csv(create_file(&mloss)?).map_err(csv_error(&mloss))?;
        println!(
            "{key}: best epoch {} of {}, saved {}",
            logs.encoder.best_epoch,
            logs.encoder.epochs.len(),
            path.display()
        );
        registry.logs.insert(key.clone(), logs);
        registry.insert(bundle);
    }
    Ok(registry)
}

fn load_registry(config: &RunConfig) -> Result<Registry, CliError> {
    let dir = config.models_dir();
    if !dir.is_dir() {
        return Err(CliError::MissingModel(format!("no model directory at {}", dir.display())));
    }
    let reg = Registry::load_dir(&dir)?;
    if reg.is_empty() {
        return Err(CliError::MissingModel(format!("no bundles in {}", dir.display())));
    }
    Ok(reg)
}

/// Per-key group statistics, as written to `groups.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyGroups {
    pub key: SensorSet,
    pub groups: Vec<GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_users: Vec<String>,
    pub groups: Vec<KeyGroups>,
    pub placement_table: Vec<MetricsReport>,
    pub threshold_sweep: Vec<MetricsReport>,
    pub activity: Vec<MetricsReport>,
}

/// Evaluates every requested key on the held-out users and writes reports
/// under `<out_dir>/reports`.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalReport, CliError> {
    let registry = load_registry(config)?;
    let prepared = load_prepared(config)?;
    let (_, test_users) = user_split(&prepared, config.test_users)?;
    let test: Vec<Recording> = prepared.iter().filter(|r| test_users.contains(&r.user_id)).cloned().collect();
    let keys = if config.keys.is_empty() { registry.keys() } else { config.keys.clone() };
    if let Some(k) = keys.iter().find(|k| registry.get(k).is_none()) {
        return Err(CliError::MissingModel(format!("no trained model for {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let datasets: Vec<Dataset> = keys.iter().map(|k| Dataset::from_prepared(&test, k)).collect::<Result<_, _>>()?;
    let out = config.out_dir.join("reports");
    create_dir(&out)?;

    let mut groups = Vec::new();
    for (key, ds) in keys.iter().zip(&datasets) {
        let stats = group_similarity(ds, &registry.get(key).unwrap().encoder, config.n_pairs, &mut rng)?;
        let path = out.join(format!("{key}.histogram.csv"));
        write_histogram_csv(&stats, create_file(&path)?).map_err(csv_error(&path))?;
        groups.push(KeyGroups { key: key.clone(), groups: stats });
    }

    let sweep = SweepConfig {
        sensor_sets: keys.clone(),
        n_pairs: config.n_pairs,
        impostor_ratio: config.impostor_ratio,
        threshold: config.threshold,
    };
    let mut table = placement_sweep(&datasets, &registry, &sweep, &mut rng)?;
    if let Some((a, b)) = config.placements {
        table.retain(|r| r.config.placements.is_none_or(|p| p == (a, b) || p == (b, a)));
    }
    let path = out.join("table.csv");
    write_table_csv(&table, create_file(&path)?).map_err(csv_error(&path))?;

    let mut sweep_reports = Vec::new();
    let mut activity = Vec::new();
    for (key, ds) in keys.iter().zip(&datasets) {
        let bundle = registry.get(key).unwrap();
        let pair_config = LabeledPairConfig { placements: config.placements, ..LabeledPairConfig::new(config.n_pairs, config.impostor_ratio) };
        let pairs = build_labeled_pairs(ds, key, &pair_config, &mut rng)?;
        let scores = score_pairs(&bundle.matcher, &bundle.encoder, &pairs)?;
        let base = ReportConfig { sensors: key.clone(), placements: config.placements, activity: None, threshold: config.threshold };
        sweep_reports.extend(threshold_sweep(&scores, &base, &config.sweep_thresholds)?);
        match activity_breakdown(ds, &bundle.matcher, &bundle.encoder, &pair_config, config.threshold, &mut rng) {
            Ok(r) => activity.extend(r),
            Err(AnalysisError::MissingActivityLabels) => log::warn!("{key}: no activity labels, skipping breakdown"),
            Err(e) => return Err(e.into()),
        }
    }
    let path = out.join("threshold_sweep.csv");
    write_table_csv(&sweep_reports, create_file(&path)?).map_err(csv_error(&path))?;
    let path = out.join("activity.csv");
    write_table_csv(&activity, create_file(&path)?).map_err(csv_error(&path))?;
    write_json(&out.join("groups.json"), &groups)?;

    let report = EvalReport { test_users, groups, placement_table: table, threshold_sweep: sweep_reports, activity };
    write_json(&out.join("report.json"), &report)?;
    for r in &report.placement_table {
        let place = r.config.placements.map_or("randomized".to_string(), |(a, b)| format!("{a}+{b}"));
        println!("{:<14} {:<20} TPR {:.3} FPR {:.3} FNR {:.3}", r.config.sensors, place, r.tpr, r.fpr, r.fnr);
    }
    println!("reports written to {}", out.display());
    Ok(report)
}

/// Matches two window files with one bundle.
pub fn cmd_match(bundle: &Path, window_a: &Path, window_b: &Path, threshold: f64) -> Result<PairLabel, CliError> {
    if !bundle.exists() {
        return Err(CliError::MissingModel(format!("no bundle at {}", bundle.display())));
    }
    let bundle = load_bundle(bundle)?;
    let wa = Window::load_json(window_a)?;
    let wb = Window::load_json(window_b)?;
    let ea = bundle.encoder.embed(&wa)?;
    let eb = bundle.encoder.embed(&wb)?;
    let decision = bundle.matcher.decide(&ea.values, &eb.values, threshold)?;
    let word = match decision.label {
        PairLabel::Matched => "MATCHED",
        PairLabel::Unmatched => "UNMATCHED",
    };
    println!("{word} probability={:.4} threshold={threshold}", decision.probability);
    Ok(decision.label)
}

/// Writes one embedding CSV per key under `<out_dir>/embeddings`.
pub fn cmd_embed(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let registry = load_registry(config)?;
    let prepared = load_prepared(config)?;
    let keys = if config.keys.is_empty() { registry.keys() } else { config.keys.clone() };
    let out = config.out_dir.join("embeddings");
    create_dir(&out)?;
    let mut paths = Vec::new();
    for key in &keys {
        let bundle = registry.get(key).ok_or_else(|| CliError::MissingModel(format!("no trained model for {key}")))?;
        let ds = Dataset::from_prepared(&prepared, key)?;
        let windows: Vec<&Window> = ds.windows.iter().collect();
        let emb = bundle.encoder.embed_all(&windows)?;
        let path = out.join(format!("{key}.csv"));
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        let mut header: Vec<String> =
            ["user_id", "device_id", "placement", "start_time", "activity"].map(String::from).to_vec();
        header.extend((0..bundle.encoder.embedding_dim()).map(|i| format!("e{i}")));
        w.write_record(&header).map_err(csv_error(&path))?;
        for (win, e) in windows.iter().zip(&emb) {
            let mut row = vec![
                win.meta.user_id.clone(),
                win.meta.device_id.clone(),
                win.meta.placement.to_string(),
                win.meta.start_time.to_string(),
                win.meta.activity.map(|a| a.as_str().to_string()).unwrap_or_default(),
            ];
            row.extend(e.values.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_error(&path))?;
        }
        w.flush().map_err(io_error(&path))?;
        println!("{key}: {} embeddings -> {}", emb.len(), path.display());
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub user: Option<String>,
    pub swap_user: Option<String>,
    pub swap_at: Option<f64>,
    pub pacing: Pacing,
}

/// Replays two devices and writes `events.csv` and `summary.json` under
/// `<out_dir>/simulation`.
pub fn cmd_simulate(config: &RunConfig, args: &SimulateArgs) -> Result<crate::simulate::SimulationLog, CliError> {
    let registry = load_registry(config)?;
    let prepared = load_prepared(config)?;
    let (_, test_users) = user_split(&prepared, config.test_users)?;
    let user = args.user.clone().unwrap_or_else(|| test_users[0].clone());
    let (pa, pb) = config.placements.unwrap_or((DevicePlacement::LeftEar, DevicePlacement::RightEar));
    let a = DeviceStream::from_recording(find_recording(&prepared, &user, pa)?)?;
    let mut b = DeviceStream::from_recording(find_recording(&prepared, &user, pb)?)?;
    if let Some(other) = &args.swap_user {
        let next = find_recording(&prepared, other, pb)?;
        let at = match args.swap_at {
            Some(t) => t,
            None => {
                let (t0, t1) = b.recording.span().unwrap_or((0.0, 0.0));
                (t0 + t1) / 2.0
            }
        };
        b = b.handoff(next, at)?;
    }
    let log = simulate(&registry, &a, &b, config.threshold, args.pacing)?;
    let out = config.out_dir.join("simulation");
    create_dir(&out)?;
    let path = out.join("events.csv");
    log.write_csv(create_file(&path)?).map_err(csv_error(&path))?;
    write_json(&out.join("summary.json"), &log.summary)?;
    let s = &log.summary;
    println!(
        "{} <-> {} with model {}: {}/{} windows MATCHED ({:.1}%), accuracy {:.1}%",
        log.device_a,
        log.device_b,
        s.key,
        s.matched,
        s.windows,
        100.0 * s.match_rate,
        100.0 * s.accuracy
    );
    if let Some(t) = s.swap_at {
        match s.flip_latency {
            Some(k) => println!("handoff at {t:.0} s detected after {k} window(s)"),
            None => println!("handoff at {t:.0} s never detected"),
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_config_overrides_nested_fields() {
        let text = "# c\nseed = 7\nkeys = [\"acc\", \"acc+gyro\"]\ntrain.hyperparams.max_epochs = 3\nout_dir = runs/a\n";
        let c = RunConfig::default().merge_str(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.keys, vec!["acc".parse().unwrap(), "acc+gyro".parse().unwrap()]);
        assert_eq!(c.train.hyperparams.max_epochs, 3);
        assert_eq!(c.out_dir, PathBuf::from("runs/a"));
        assert_eq!(c.train.hyperparams.batch_size, 64);
    }

    #[test]
    fn json_config_merges_partially() {
        let c = RunConfig::default().merge_str(r#"{"synth": {"n_users": 4}, "threshold": 0.7}"#).unwrap();
        assert_eq!(c.synth.n_users, 4);
        assert_eq!(c.synth.duration_s, 600.0);
        assert_eq!(c.threshold, 0.7);
    }

    #[test]
    fn malformed_config_is_rejected() {
        assert!(RunConfig::default().merge_str("seed 7").is_err());
        assert!(RunConfig::default().merge_str("seed = \"x\"").is_err());
        assert!(RunConfig::default().merge_str("seed.inner = 1").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let cli = Cli::try_parse_from(["bioid", "--seed", "9", "--sensors", "acc,gyro", "--placements", "head,wrist", "gen-data"]).unwrap();
        let mut c = RunConfig::default().merge_str("seed = 1").unwrap();
        c.apply_flags(&cli.common).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.keys.len(), 2);
        assert_eq!(c.placements, Some((DevicePlacement::Head, DevicePlacement::Wrist)));
        let bad = Cli::try_parse_from(["bioid", "--placements", "head", "gen-data"]).unwrap();
        assert_eq!(c.apply_flags(&bad.common).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(CliError::from(SignalError::InvalidConfig("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(SignalError::EmptyChannel("acc_x".into())).exit_code(), 3);
        let set: SensorSet = "acc".parse().unwrap();
        assert_eq!(CliError::from(RegistryError::NoTrainedModel(set.clone())).exit_code(), 4);
        assert_eq!(CliError::from(AnalysisError::MissingModel(set)).exit_code(), 4);
        assert_eq!(CliError::from(EncoderError::ShapeMismatch("x".into())).exit_code(), 2);
    }
}
