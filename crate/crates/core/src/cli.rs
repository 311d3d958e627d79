//! Command-line interface: `gen`, `train`, `eval` and `ensemble`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::ensemble::{fuse, ClassFactors, EnsembleError, FusionConfig};
use crate::metrics::{evaluate, write_report_csv, EvalRecord, MetricsReport};
use crate::model::{Model, ScenePrediction};
use crate::plot::line_panels_svg;
use crate::prediction::{read_predictions, write_predictions, PredictionRecord};
use crate::scenario::{generate_dataset, read_dataset, write_dataset, AgentClass, DatasetSpec, ForkConfig, Scenario};
use crate::training::{
    eval_records, global_criterion, IgnoreVariant, MatchCriterion, Strategy, Trainer, TrainingError, LOG_COLUMNS,
};

#[derive(Parser, Debug)]
#[command(name = "modeseq", version, about = "Sequential multimodal trajectory prediction")]
pub struct Cli {
    /// Random seed (gen: dataset seed; train: overrides the config seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic fork dataset.
    Gen(GenArgs),
    /// Train a model from a `key = value` config file.
    Train(TrainArgs),
    /// Decode a dataset with a checkpoint and score the predictions.
    Eval(EvalArgs),
    /// Fuse prediction files from several models.
    Ensemble(EnsembleArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub branches: usize,
    /// Comma-separated branch probabilities, one per branch.
    #[arg(long, default_value = "0.6,0.3,0.1")]
    pub priors: String,
    #[arg(long, default_value_t = 11)]
    pub history: usize,
    #[arg(long, default_value_t = 30)]
    pub future: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step_duration: f64,
    #[arg(long, default_value_t = 2)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    #[arg(long, default_value = "vehicle")]
    pub class: AgentClass,
    /// File name inside the output directory.
    #[arg(long, default_value = "dataset.jsonl")]
    pub file: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub ignore_variant: Option<IgnoreVariant>,
    #[arg(long)]
    pub rearrange: Option<bool>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    pub until_epoch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated mode counts to decode.
    #[arg(long, default_value = "6")]
    pub modes: String,
    /// Decode without re-ordering modes between layers.
    #[arg(long)]
    pub no_rearrange: bool,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Threshold factors, e.g. `vehicle=1.5,pedestrian=1.4,cyclist=1.4`.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long, default_value_t = 6)]
    pub max_modes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub step_duration: f64,
    #[arg(long, default_value = "fused.jsonl")]
    pub file: String,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Divergence { .. } => CliError::Numeric(e.to_string()),
            TrainingError::Numerics(ref n) if n.to_string().contains("non-finite") => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn run_from<I, T>(args: I, stdout: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                let _ = write!(stdout, "{}", e.render());
                return Err(CliError::Usage(String::new()));
            }
            _ => return Err(usage(e.render())),
        },
    };
    run(cli, stdout)
}

pub fn run(cli: Cli, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let threads = cli.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(usage)?;
    fs::create_dir_all(&cli.out).map_err(|e| usage(format!("cannot create {}: {e}", cli.out.display())))?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed.unwrap_or(0), &cli.out, stdout),
        Command::Train(a) => cmd_train(a, cli.seed, &cli.out, stdout),
        Command::Eval(a) => cmd_eval(a, &cli.out, stdout),
        Command::Ensemble(a) => cmd_ensemble(a, &cli.out, stdout),
    })
}

fn say(stdout: &mut dyn Write, text: impl std::fmt::Display) {
    let _ = writeln!(stdout, "{text}");
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| usage(format!("{flag}: cannot parse `{v}`"))))
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_gen(args: &GenArgs, seed: u64, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let priors: Vec<f64> = parse_list("--priors", &args.priors)?;
    if priors.len() != args.branches {
        return Err(usage(format!(
            "--priors: {} values for {} branches",
            priors.len(),
            args.branches
        )));
    }
    let total: f64 = priors.iter().sum();
    if priors.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(usage(format!("--priors must be non-negative and sum to 1 (sum is {total})")));
    }
    let spec = DatasetSpec {
        fork: ForkConfig {
            branches: args.branches,
            branch_priors: priors.clone(),
            num_neighbors: args.neighbors,
            history_steps: args.history,
            future_steps: args.future,
            step_duration: args.step_duration,
            noise_std: args.noise,
            agent_class: args.class,
            ..ForkConfig::default()
        },
        ..DatasetSpec::default()
    };
    let data = generate_dataset(args.count, &spec, seed).map_err(usage)?;
    let path = out.join(&args.file);
    write_dataset(&path, &data).map_err(usage)?;
    let mut counts = vec![0usize; args.branches];
    for s in &data {
        counts[s.latent_branch.index] += 1;
    }
    say(stdout, format!("wrote {} scenarios to {}", data.len(), path.display()));
    say(stdout, "branch  prior  frequency");
    for (b, (&c, p)) in counts.iter().zip(&priors).enumerate() {
        let freq = if data.is_empty() { 0.0 } else { c as f64 / data.len() as f64 };
        say(stdout, format!("{b:>6}  {p:.3}  {freq:.3}"));
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<Vec<Scenario>, CliError> {
    read_dataset(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn log_text(trainer: &Trainer) -> String {
    let c = &trainer.config;
    let mut s = format!(
        "# strategy={} ignore_variant={} rearrange={} seed={}\n{LOG_COLUMNS}\n",
        c.strategy.as_str(),
        c.ignore_variant.as_str(),
        c.rearrange,
        c.seed
    );
    for row in &trainer.log {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}

pub const CHECKPOINT_FILE: &str = "checkpoint.mseq";
pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_ECHO_FILE: &str = "config.txt";

pub fn cmd_train(args: &TrainArgs, seed: Option<u64>, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| usage(format!("{}: {e}", args.config.display())))?;
    let mut config = RunConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", args.config.display())))?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    if let Some(s) = args.strategy {
        config.train.strategy = s;
    }
    if let Some(v) = args.ignore_variant {
        config.train.ignore_variant = v;
    }
    if let Some(r) = args.rearrange {
        config.train.rearrange = r;
    }
    config.validate().map_err(usage)?;
    let train = load_data(&config.train_data)?;
    if train.is_empty() {
        return Err(usage(format!("{}: empty training set", config.train_data.display())));
    }
    let eval = match &config.eval_data {
        Some(p) => Some(load_data(p)?),
        None => None,
    };
    write_file(&out.join(CONFIG_ECHO_FILE), &config.to_text())?;

    let ckpt = out.join(CHECKPOINT_FILE);
    let mut trainer = if args.resume {
        let t = checkpoint::load(&ckpt).map_err(|e| usage(format!("{}: {e}", ckpt.display())))?;
        if t.config != config.train {
            return Err(usage("--resume: checkpoint was trained with a different configuration"));
        }
        t
    } else {
        Trainer::new(config.train.clone(), &train[0])?
    };
    let stop = args.until_epoch.unwrap_or(usize::MAX).min(trainer.config.epochs);
    let log_path = out.join(LOG_FILE);
    while trainer.epoch < stop {
        let mut row = trainer.run_epoch(&train)?;
        let last = trainer.epoch == trainer.config.epochs;
        let due = last || (config.eval_every > 0 && trainer.epoch % config.eval_every == 0);
        if let (Some(eval), true) = (&eval, due) {
            let c = &trainer.config;
            let records = eval_records(&trainer.model, eval, c.modes, c.rearrange, c.match_family)?;
            row.metrics = Some(evaluate(&records).map_err(usage)?);
        }
        say(
            stdout,
            format!(
                "epoch {:>3}  loss {:.4}  reg {:.4}  conf {:.4}{}",
                row.epoch,
                row.train_loss,
                row.reg_loss,
                row.conf_loss,
                row.metrics.map(|m| format!("  {m}")).unwrap_or_default()
            ),
        );
        trainer.log.push(row);
        checkpoint::save(&ckpt, &trainer).map_err(usage)?;
        write_file(&log_path, &log_text(&trainer))?;
    }
    write_file(&log_path, &log_text(&trainer))?;
    Ok(())
}

/// Prediction records for `scenarios`, ids by position.
pub fn predict_records(model: &Model, scenarios: &[Scenario], modes: usize, rearrange: bool) -> Result<Vec<PredictionRecord>, TrainingError> {
    scenarios
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            let p = model.predict(s, modes, rearrange)?;
            let focal = s.focal();
            Ok(PredictionRecord {
                scenario_id: id,
                trajectories: p.trajectories,
                confidences: p.confidences,
                agent_class: s.agent_class,
                focal_speed: Some(focal.last_speed()),
                focal_heading: Some(focal.last_heading()),
            })
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let modes: Vec<usize> = parse_list("--modes", &args.modes)?;
    if modes.iter().any(|&k| k < 1) {
        return Err(usage("--modes: every mode count must be at least 1"));
    }
    let trainer = checkpoint::load(&args.checkpoint).map_err(|e| usage(format!("{}: {e}", args.checkpoint.display())))?;
    let data = load_data(&args.data)?;
    if data.is_empty() {
        return Err(usage(format!("{}: empty dataset", args.data.display())));
    }
    for (i, s) in data.iter().enumerate() {
        trainer
            .model
            .check_scenario(s)
            .map_err(|e| usage(format!("scenario {i}: {e}")))?;
    }
    let rearrange = trainer.config.rearrange && !args.no_rearrange;
    let mut rows: Vec<(usize, MetricsReport)> = Vec::new();
    for &k in &modes {
        let preds = predict_records(&trainer.model, &data, k, rearrange)?;
        let path = out.join(format!("predictions_k{k}.jsonl"));
        write_predictions(&path, &preds).map_err(usage)?;
        let records: Vec<EvalRecord> = preds
            .into_iter()
            .zip(&data)
            .map(|(p, s)| EvalRecord {
                scenario_id: p.scenario_id,
                trajectories: p.trajectories,
                confidences: p.confidences,
                truth: s.future.clone(),
                criterion: global_criterion(s, trainer.config.match_family, trainer.model.config.step_duration),
            })
            .collect();
        let report = evaluate(&records).map_err(usage)?;
        say(stdout, format!("K'={k:<3} {report}"));
        rows.push((k, report));
    }
    let mut csv = Vec::new();
    write_report_csv(&mut csv, &rows).map_err(usage)?;
    write_file(&out.join("metrics.csv"), &String::from_utf8(csv).expect("ascii csv"))?;
    let xs: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let svg = line_panels_svg(
        &xs,
        &[
            ("MR", rows.iter().map(|r| r.1.miss_rate).collect()),
            ("minFDE (m)", rows.iter().map(|r| r.1.min_fde).collect()),
        ],
    );
    write_file(&out.join("metrics_vs_modes.svg"), &svg)?;
    let summary: String = rows.iter().map(|(k, r)| format!("K'={k}: {r}\n")).collect();
    write_file(&out.join("summary.txt"), &summary)?;
    Ok(())
}

fn parse_factors(text: &str) -> Result<ClassFactors, CliError> {
    let mut f = ClassFactors::default();
    for part in text.split(',') {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| usage(format!("--classes: expected `class=factor`, got `{part}`")))?;
        let class: AgentClass = name.trim().parse().map_err(|e| usage(format!("--classes: {e}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| usage(format!("--classes: bad factor `{value}`")))?;
        if !(value > 0.0) {
            return Err(usage("--classes: factors must be positive"));
        }
        match class {
            AgentClass::Vehicle => f.vehicle = value,
            AgentClass::Pedestrian => f.pedestrian = value,
            AgentClass::Cyclist => f.cyclist = value,
        }
    }
    Ok(f)
}

pub fn cmd_ensemble(args: &EnsembleArgs, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let factors = match &args.classes {
        Some(t) => parse_factors(t)?,
        None => ClassFactors::default(),
    };
    if args.max_modes == 0 || !(args.step_duration > 0.0) {
        return Err(usage("--max-modes and --step-duration must be positive"));
    }
    let config = FusionConfig {
        factors,
        max_modes: args.max_modes,
    };
    let mut files = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let records = read_predictions(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut by_id = BTreeMap::new();
        for r in records {
            let id = r.scenario_id;
            if by_id.insert(id, r).is_some() {
                return Err(usage(format!("{}: scenario id {id} appears twice", path.display())));
            }
        }
        files.push(by_id);
    }
    for (path, f) in args.inputs.iter().zip(&files).skip(1) {
        if let Some(id) = files[0].keys().find(|id| !f.contains_key(id)) {
            return Err(usage(format!("scenario id {id} missing from {}", path.display())));
        }
        if let Some(id) = f.keys().find(|id| !files[0].contains_key(id)) {
            return Err(usage(format!("scenario id {id} missing from {}", args.inputs[0].display())));
        }
    }
    let mut fused = Vec::with_capacity(files[0].len());
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for (&id, first) in &files[0] {
        let members: Vec<&PredictionRecord> = files.iter().map(|f| &f[&id]).collect();
        if members.iter().any(|r| r.agent_class != first.agent_class) {
            return Err(usage(format!("scenario id {id}: agent classes disagree")));
        }
        let (speed, heading) = match (first.focal_speed, first.focal_heading) {
            (Some(v), Some(h)) => (v, h),
            _ => return Err(usage(format!("scenario id {id}: record lacks focal_speed/focal_heading"))),
        };
        let criterion = MatchCriterion::velocity_aware(speed, heading, args.step_duration);
        let preds: Vec<ScenePrediction> = members
            .iter()
            .map(|r| ScenePrediction {
                trajectories: r.trajectories.clone(),
                confidences: r.confidences.clone(),
            })
            .collect();
        let output = fuse(&preds, first.agent_class, &criterion, &config).map_err(|e| match e {
            EnsembleError::Horizon { .. } => usage(format!("scenario id {id}: {e}")),
            other => usage(format!("scenario id {id}: {other}")),
        })?;
        for c in &output.clusters {
            *histogram.entry(c.members.len()).or_default() += 1;
        }
        fused.push(PredictionRecord {
            scenario_id: id,
            trajectories: output.prediction.trajectories,
            confidences: output.prediction.confidences,
            ..first.clone()
        });
    }
    let path = out.join(&args.file);
    write_predictions(&path, &fused).map_err(usage)?;
    say(stdout, format!("fused {} scenarios from {} models into {}", fused.len(), files.len(), path.display()));
    say(stdout, "cluster size  count");
    for (size, count) in histogram {
        say(stdout, format!("{size:>12}  {count}"));
    }
    Ok(())
}
