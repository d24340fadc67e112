//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! runtime and numeric failures, 3 when a verification check fails.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

use crate::dataset::{
    build_split, load_records, resolve_samples, synth_clusters, DatasetError, FeatureRecord,
    Manifest, OneShotTask, Sample, SplitSpec, SynthConfig, Target,
};
use crate::mining::MinerRule;
use crate::model::{EmbedderModel, ModelConfig, ModelError, Variant};
use crate::oneshot::{evaluate, random_baseline, write_embeddings_csv, OneShotError, RunReport};
use crate::trainer::{train_with, TrainError};
use crate::verify::{run_all, VerifyOptions};

/// Most problems listed in one validation report.
const MAX_LISTED_PROBLEMS: usize = 20;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} verification check(s) failed")]
    Verification(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        CliError::Validation(vec![message.into()])
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::invalid(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numerics(_) => CliError::Runtime(e.to_string()),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<OneShotError> for CliError {
    fn from(e: OneShotError) -> Self {
        match e {
            OneShotError::Model(m) => m.into(),
            OneShotError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::invalid(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::invalid(e.to_string()),
            TrainError::Model(m) => m.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "oneshot-dml",
    version,
    about = "One-shot recognition with deep metric learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic clustered dataset with segmentation maps.
    Synth(SynthArgs),
    /// Partition records into train, support and query sets.
    Split(SplitArgs),
    /// Train one model per task from a run configuration.
    Train(TrainArgs),
    /// Evaluate checkpoints (or the random baseline) on a task manifest.
    Eval(EvalArgs),
    /// Report the uniform random baseline on a task manifest.
    Baseline(BaselineArgs),
    /// Run the built-in oracle checks.
    Verify(VerifyArgs),
    /// Write embeddings of every manifest entry as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for records.jsonl, segmaps/ and split.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings as JSON; flags override individual fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sep: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_sem: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    /// Draw class means in random directions instead of on coordinate axes.
    #[arg(long)]
    pub random_means: bool,
    /// Comma-separated label per class.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Number of leading classes marked seen in split.json (default 60%).
    #[arg(long)]
    pub seen_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Built-in protocol: CAT-6:6, CAT-6:4, LEV-7:3 or LEV-6:4.
    #[arg(
        long,
        conflicts_with = "split_file",
        required_unless_present = "split_file"
    )]
    pub split: Option<String>,
    /// JSON split specification.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Support-selection seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One checkpoint for every task, or one per task in manifest order.
    #[arg(long, required_unless_present = "random_baseline")]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// Report JSON path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Embeddings CSV path; level tasks get the dimension appended.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Report uniform random guessing instead of a model.
    #[arg(long)]
    pub random_baseline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Check the miner against the oracle of the flipped inequalities.
    #[arg(long)]
    pub flip_miner_inequalities: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub corrupt_gradient: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// Task position in the manifest.
    #[arg(long, default_value_t = 0)]
    pub task: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one parsed command and returns its console summary.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Verify(a) => cmd_verify(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn base_dir(records: &Path) -> &Path {
    records.parent().unwrap_or(Path::new(""))
}

fn load_split(name: Option<&str>, file: Option<&Path>) -> Result<SplitSpec, CliError> {
    let spec = match (name, file) {
        (_, Some(file)) => {
            let spec: SplitSpec = read_json(file)?;
            spec.validate()?;
            spec
        }
        (Some(name), None) => build_split(name)?,
        (None, None) => return Err(CliError::invalid("a split name or split file is required")),
    };
    Ok(spec)
}

/// Resolves features and semantic vectors for every record, collecting
/// every failure.
fn load_samples(
    records: &[FeatureRecord],
    base: &Path,
    config: &ModelConfig,
) -> Result<Vec<Sample>, Vec<String>> {
    let with_sem = config.variant.branches().sem;
    let mut samples = Vec::with_capacity(records.len());
    let mut problems = Vec::new();
    for r in records {
        match resolve_samples(
            vec![r.clone()],
            base,
            config.d_img,
            config.d_body,
            config.n_sem,
            with_sem,
        ) {
            Ok(mut s) => samples.append(&mut s),
            Err(e) => problems.push(e.to_string()),
        }
    }
    if problems.is_empty() {
        Ok(samples)
    } else {
        Err(problems)
    }
}

fn truncate_problems(mut problems: Vec<String>) -> Vec<String> {
    if problems.len() > MAX_LISTED_PROBLEMS {
        let extra = problems.len() - MAX_LISTED_PROBLEMS;
        problems.truncate(MAX_LISTED_PROBLEMS);
        problems.push(format!("and {extra} more"));
    }
    problems
}

fn cmd_synth(a: SynthArgs) -> Result<String, CliError> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { cfg.$field = v; })* };
    }
    apply!(
        n_classes,
        per_class,
        dim,
        sep,
        noise_std,
        seed,
        n_sem,
        distractors
    );
    if a.random_means {
        cfg.orthogonal_means = false;
    }
    if let Some(labels) = a.labels.clone() {
        cfg.label_names = Some(labels);
    }
    let seen = a.seen_classes.unwrap_or((cfg.n_classes * 6).div_ceil(10));
    if seen == 0 || seen >= cfg.n_classes {
        return Err(CliError::invalid(format!(
            "seen_classes must lie in 1..{}, got {seen}",
            cfg.n_classes
        )));
    }
    let data = synth_clusters(&cfg)?;
    let spec = cfg.split(
        "synthetic",
        (0..seen).collect(),
        (seen..cfg.n_classes).collect(),
        cfg.seed,
    )?;
    data.write(&a.out)?;
    write_file(&a.out.join("split.json"), &to_json(&spec))?;
    Ok(format!(
        "wrote {} records over {} classes to {}\n",
        data.records.len(),
        cfg.n_classes,
        a.out.display()
    ))
}

fn cmd_split(a: SplitArgs) -> Result<String, CliError> {
    let mut spec = load_split(a.split.as_deref(), a.split_file.as_deref())?;
    if let Some(seed) = a.seed {
        spec = spec.with_seed(seed);
    }
    let records = load_records(&a.records)?;
    let manifest = Manifest::build(&records, &spec)?;
    write_file(&a.out, &to_json(&manifest))?;
    let mut out = String::new();
    for t in &manifest.tasks {
        let _ = writeln!(
            out,
            "{} {}: {} train, {} support, {} query",
            spec.name,
            t.target,
            t.train.len(),
            t.support.len(),
            t.query.len()
        );
    }
    Ok(out)
}

fn task_suffix(target: Target) -> String {
    match target {
        Target::Categorical => String::new(),
        Target::Level(d) => format!("-{d}"),
    }
}

fn cmd_train(a: TrainArgs) -> Result<String, CliError> {
    let raw: serde_json::Value = read_json(&a.config)?;
    let lr_explicit = a.lr.is_some() || raw.get("train").and_then(|t| t.get("lr")).is_some();
    let mut cfg = RunConfig::load(&a.config).map_err(CliError::invalid)?;
    if let Some(v) = a.records {
        cfg.records = v;
    }
    if let Some(v) = a.split {
        cfg.split = Some(v);
        cfg.split_file = None;
        cfg.manifest = None;
    }
    if let Some(v) = a.manifest {
        cfg.manifest = Some(v);
    }
    if let Some(v) = a.out_dir {
        cfg.out_dir = v;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    cfg.train.seed = cfg.seed;

    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let records = load_records(&cfg.records)?;
    let manifest = match &cfg.manifest {
        Some(path) => read_json::<Manifest>(path)?,
        None => {
            let mut spec = load_split(cfg.split.as_deref(), cfg.split_file.as_deref())?;
            if let Some(seed) = cfg.support_seed {
                spec = spec.with_seed(seed);
            }
            Manifest::build(&records, &spec)?
        }
    };
    if !lr_explicit {
        if let Some(protocol) = manifest.split.protocol() {
            cfg.train.lr = protocol.learning_rate();
        }
    }
    let tasks = manifest.resolve(&records)?;
    let samples = load_samples(&records, base_dir(&cfg.records), &cfg.model_config(1))
        .map_err(|p| CliError::Validation(truncate_problems(p)))?;

    let mut out = String::new();
    write_file(&cfg.out_dir.join("manifest.json"), &to_json(&manifest))?;
    write_file(&cfg.out_dir.join("config.json"), &to_json(&cfg))?;
    for task in &tasks {
        let suffix = task_suffix(task.target);
        let mut model = EmbedderModel::init(cfg.model_config(task.seen_classes.len()), cfg.seed)?;
        let out_dir = cfg.out_dir.clone();
        let every = cfg.checkpoint_every;
        let history = train_with(&mut model, task, &samples, &cfg.train, |epoch, m| {
            if every > 0 && (epoch + 1) % every == 0 {
                let path = out_dir.join(format!("checkpoint{suffix}-epoch{}.json", epoch + 1));
                m.save(&path).map_err(|e| TrainError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::other(e.to_string()),
                })?;
            }
            Ok(())
        })?;
        let ckpt = cfg.out_dir.join(format!("checkpoint{suffix}.json"));
        model.save(&ckpt)?;
        write_file(
            &cfg.out_dir.join(format!("history{suffix}.csv")),
            &history.to_csv(),
        )?;
        let last = history.rows.last();
        let _ = writeln!(
            out,
            "{} {}: {} steps, final combined loss {}, checkpoint {}",
            manifest.split.name,
            task.target,
            history.rows.len(),
            last.map_or("n/a".to_string(), |r| format!("{:.6}", r.combined)),
            ckpt.display()
        );
    }
    Ok(out)
}

fn load_tasks(
    manifest_path: &Path,
    records_path: &Path,
) -> Result<(Manifest, Vec<FeatureRecord>, Vec<OneShotTask>), CliError> {
    let manifest: Manifest = read_json(manifest_path)?;
    manifest.split.validate()?;
    let records = load_records(records_path)?;
    let tasks = manifest.resolve(&records)?;
    Ok((manifest, records, tasks))
}

fn emit_report(report: &RunReport, out: Option<&Path>) -> Result<String, CliError> {
    let json = report.to_json();
    match out {
        Some(path) => {
            write_file(path, &json)?;
            Ok(format!(
                "{} {}: accuracy {:.4}, report {}\n",
                report.split,
                report.method,
                report.accuracy,
                path.display()
            ))
        }
        None => Ok(json),
    }
}

fn cmd_eval(a: EvalArgs) -> Result<String, CliError> {
    let (manifest, records, tasks) = load_tasks(&a.manifest, &a.records)?;
    if a.random_baseline {
        let reports = tasks
            .iter()
            .map(|t| random_baseline(t, &manifest.split, a.seed))
            .collect();
        return emit_report(
            &RunReport::new(&manifest.split.name, "random", reports),
            a.out.as_deref(),
        );
    }
    if a.checkpoint.len() != 1 && a.checkpoint.len() != tasks.len() {
        return Err(CliError::invalid(format!(
            "{} checkpoints for {} tasks; give one, or one per task",
            a.checkpoint.len(),
            tasks.len()
        )));
    }
    let models = a
        .checkpoint
        .iter()
        .map(|p| EmbedderModel::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sample_sets = Vec::with_capacity(models.len());
    for m in &models {
        sample_sets.push(
            load_samples(&records, base_dir(&a.records), m.config())
                .map_err(|p| CliError::Validation(truncate_problems(p)))?,
        );
    }

    let mut reports = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let k = if models.len() == 1 { 0 } else { i };
        reports.push(evaluate(
            task,
            &sample_sets[k],
            &models[k],
            &manifest.split,
        )?);
    }
    let variant = models[0].config().variant.name();
    let summary = emit_report(
        &RunReport::new(&manifest.split.name, variant, reports),
        a.out.as_deref(),
    )?;
    if let Some(path) = &a.embeddings {
        for (i, task) in tasks.iter().enumerate() {
            let k = if models.len() == 1 { 0 } else { i };
            let items: Vec<_> = task.support.iter().chain(&task.query).collect();
            let z = models[k].embed_samples(items.iter().map(|it| &sample_sets[k][it.index]))?;
            let rows = items
                .iter()
                .map(|it| (records[it.index].id.clone(), it.class));
            write_embeddings_csv(&suffixed(path, &task_suffix(task.target)), rows, &z)?;
        }
    }
    Ok(summary)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn cmd_baseline(a: BaselineArgs) -> Result<String, CliError> {
    let (manifest, _, tasks) = load_tasks(&a.manifest, &a.records)?;
    let reports = tasks
        .iter()
        .map(|t| random_baseline(t, &manifest.split, a.seed))
        .collect();
    emit_report(
        &RunReport::new(&manifest.split.name, "random", reports),
        a.out.as_deref(),
    )
}

fn cmd_verify(a: VerifyArgs) -> Result<String, CliError> {
    let options = VerifyOptions {
        seed: a.seed,
        rule: if a.flip_miner_inequalities {
            MinerRule::Flipped
        } else {
            MinerRule::Informative
        },
        corrupt_gradient: a.corrupt_gradient,
        ..VerifyOptions::default()
    };
    let outcomes = run_all(&options);
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    for o in &outcomes {
        println!("{o}");
    }
    if failed > 0 {
        return Err(CliError::Verification(failed));
    }
    Ok(format!("all {} checks passed\n", outcomes.len()))
}

fn cmd_export(a: ExportArgs) -> Result<String, CliError> {
    let (_, records, tasks) = load_tasks(&a.manifest, &a.records)?;
    let task = tasks.get(a.task).ok_or_else(|| {
        CliError::invalid(format!(
            "manifest has {} tasks, asked for task {}",
            tasks.len(),
            a.task
        ))
    })?;
    let model = EmbedderModel::load(&a.checkpoint)?;
    let samples = load_samples(&records, base_dir(&a.records), model.config())
        .map_err(|p| CliError::Validation(truncate_problems(p)))?;
    let items: Vec<_> = task
        .train
        .iter()
        .chain(&task.support)
        .chain(&task.query)
        .collect();
    let z = model.embed_samples(items.iter().map(|it| &samples[it.index]))?;
    write_embeddings_csv(
        &a.out,
        items
            .iter()
            .map(|it| (records[it.index].id.clone(), it.class)),
        &z,
    )?;
    Ok(format!(
        "wrote {} embeddings to {}\n",
        items.len(),
        a.out.display()
    ))
}
