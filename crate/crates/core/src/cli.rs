//! The `noisy-label` command-line tool.
//!
//! Every subcommand prints `key = value` lines. Floats are printed in the
//! shortest form that parses back to the same value. Commands that write
//! files also write a JSON manifest next to them recording the resolved
//! configuration, the tool version, seeds, timestamps and output paths.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calculus::{
    grid_search_bernoulli, logit_shift, mle_flipped_bernoulli, noisy_decision_threshold, propagate_priors,
    threshold_from_priors, ClassPriors, NoiseParams,
};
use crate::chart;
use crate::experiments::{self, EfficiencyGridConfig, Experiment, FlipRatioGridConfig, ResultRow};
use crate::mlp::{self, Activation, Architecture, EarlyStop, Examples, LabelSource, TrainConfig};
use crate::seeds;
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "noisy-label", version, about = "Binary classification with mislabeled training data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decision thresholds implied by flip rates and class priors.
    Threshold(ThresholdArgs),
    /// Draw a labeled dataset from a random Gaussian-mixture problem.
    Gen(GenArgs),
    /// Train a network on the observed labels of a dataset.
    Train(TrainArgs),
    /// Score a trained network on a dataset.
    Eval(EvalArgs),
    /// Accuracy versus noise level and training size.
    Fig2(GridArgs),
    /// Accuracy versus flip ratio, with and without threshold correction.
    Fig3(GridArgs),
    /// Estimate a coin's bias from flipped tosses.
    Bernoulli(BernoulliArgs),
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Probability that a clean 1 is observed as 0.
    #[arg(long, default_value_t = 0.0)]
    pub gamma1: f64,
    /// Probability that a clean 0 is observed as 1.
    #[arg(long, default_value_t = 0.0)]
    pub gamma0: f64,
    /// Clean class-1 prior of the training data.
    #[arg(long, default_value_t = 0.5)]
    pub prior: f64,
    /// Class-1 prior of the evaluation data; defaults to `--prior`.
    #[arg(long)]
    pub eval_prior: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub size: usize,
    /// Seed of the problem instance; sample and flip seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    /// Clean class-1 prior.
    #[arg(long, default_value_t = 0.5)]
    pub prior: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma0: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV; the observed labels are the targets.
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// Output model file.
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// TOML file with network and optimiser settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Labels {
    Clean,
    Observed,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).multiple(true).args(["threshold", "gamma1", "gamma0", "prior", "eval_prior"])))]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Explicit probability threshold.
    #[arg(long, conflicts_with_all = ["gamma1", "gamma0", "prior", "eval_prior"])]
    pub threshold: Option<f64>,
    /// Flip rates the model was trained under; the threshold is derived
    /// from them and the priors.
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// Clean class-1 prior of the training data (default 0.5).
    #[arg(long)]
    pub prior: Option<f64>,
    /// Class-1 prior of the evaluation data (default `--prior`).
    #[arg(long)]
    pub eval_prior: Option<f64>,
    /// Labels to score against.
    #[arg(long, value_enum, default_value_t = Labels::Clean)]
    pub labels: Labels,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// TOML grid configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct BernoulliArgs {
    /// Heads probability of the clean coin.
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma0: f64,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step of the likelihood grid search.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

/// Network and optimiser settings of the `train` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            hidden_sizes: arch.hidden_sizes,
            activation: arch.hidden_activation,
            train: TrainConfig::default(),
        }
    }
}

impl TrainFileConfig {
    fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: 2,
            hidden_sizes: self.hidden_sizes.clone(),
            hidden_activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &str, config: &impl Serialize, seed: Option<u64>, started: u64, outputs: Vec<PathBuf>) -> anyhow::Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            seed,
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            outputs,
        })
    }

    fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Dotted paths of keys in `given` that do not occur in `template`.
fn unknown_keys(given: &toml::Table, template: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in given {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match template.get(key) {
            None => out.push(path),
            Some(toml::Value::Table(t)) => {
                if let toml::Value::Table(g) = value {
                    unknown_keys(g, t, &path, out);
                }
            }
            Some(_) => {}
        }
    }
}

/// Reads a TOML config. `template` must have every optional field set so
/// that all accepted keys appear in it.
fn load_config<T: Serialize + DeserializeOwned + Default>(path: Option<&Path>, template: &T) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let given: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let schema = match toml::Value::try_from(template)? {
        toml::Value::Table(t) => t,
        _ => unreachable!("configs serialize to tables"),
    };
    let mut unknown = Vec::new();
    unknown_keys(&given, &schema, "", &mut unknown);
    if !unknown.is_empty() {
        bail!("{}: unknown configuration keys: {}", path.display(), unknown.join(", "));
    }
    toml::from_str(&text).with_context(|| format!("invalid configuration in {}", path.display()))
}

fn train_template() -> TrainFileConfig {
    let mut t = TrainFileConfig::default();
    t.train.early_stop = Some(EarlyStop { tolerance: 0.0, patience: 1 });
    t
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Threshold(a) => cmd_threshold(&a, out),
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Fig2(a) => cmd_grid(Experiment::Fig2, &a, out),
        Command::Fig3(a) => cmd_grid(Experiment::Fig3, &a, out),
        Command::Bernoulli(a) => cmd_bernoulli(&a, out),
    }
}

pub fn cmd_threshold(a: &ThresholdArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let noise = NoiseParams::new(a.gamma1, a.gamma0)?;
    let clean = ClassPriors::new(a.prior)?;
    let eval = ClassPriors::new(a.eval_prior.unwrap_or(a.prior))?;
    let noisy = propagate_priors(&clean, &noise);
    let delta = logit_shift(&noisy, &eval)?;
    let mlp_threshold = threshold_from_priors(&eval, &noisy)?;
    writeln!(out, "basic_threshold = {}", noisy_decision_threshold(&noise))?;
    writeln!(out, "noisy_prior_p1 = {}", noisy.p1())?;
    writeln!(out, "noisy_prior_p0 = {}", noisy.p0())?;
    writeln!(out, "eval_prior_p1 = {}", eval.p1())?;
    writeln!(out, "logit_shift = {}", delta.value())?;
    writeln!(out, "mlp_threshold = {mlp_threshold}")?;
    Ok(())
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let started = now_ms();
    let noise = NoiseParams::new(a.gamma1, a.gamma0)?;
    let priors = ClassPriors::new(a.prior)?;
    let problem = synth::make_random_problem(a.seed, a.separation)?.with_priors(priors);
    let clean = synth::sample_dataset(&problem, a.size, seeds::derive(a.seed, &[1]))?;
    let data = synth::flip_labels(&clean, &noise, seeds::derive(a.seed, &[2]));
    synth::write_dataset(&a.out, &data)?;

    let manifest_path = sidecar(&a.out);
    let config = serde_json::json!({
        "size": a.size,
        "seed": a.seed,
        "separation": a.separation,
        "prior": a.prior,
        "gamma1": a.gamma1,
        "gamma0": a.gamma0,
    });
    RunManifest::new("gen", &config, Some(a.seed), started, vec![a.out.clone(), manifest_path.clone()])?
        .write(&manifest_path)?;

    writeln!(out, "samples = {}", data.len())?;
    writeln!(out, "clean_ones = {}", data.iter().filter(|s| s.y_clean == 1).count())?;
    writeln!(out, "observed_ones = {}", data.iter().filter(|s| s.z_observed == 1).count())?;
    if !data.is_empty() {
        writeln!(out, "bayes_accuracy = {}", synth::bayes_accuracy(&problem, &data)?)?;
    }
    writeln!(out, "output = {}", a.out.display())?;
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<TrainFileConfig> {
    let mut cfg = load_config(a.config.as_deref(), &train_template())?;
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.init_seed {
        cfg.train.init_seed = v;
    }
    cfg.architecture().validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let started = now_ms();
    let cfg = resolve_train_config(a)?;
    if a.print_config {
        write!(out, "{}", toml::to_string(&cfg)?)?;
        return Ok(());
    }
    let (data_path, model_path) = (a.data.as_ref().unwrap(), a.out.as_ref().unwrap());
    let samples = synth::read_dataset(data_path)?;
    if samples.is_empty() {
        bail!("{}: dataset has no rows", data_path.display());
    }
    let data = Examples::from_samples(&samples, LabelSource::Observed);
    let report = mlp::train(&data, &cfg.architecture(), &cfg.train)?;
    mlp::save(&report.params, model_path)?;

    let manifest_path = sidecar(model_path);
    let config = serde_json::json!({ "data": data_path, "network": cfg });
    RunManifest::new("train", &config, Some(cfg.train.init_seed), started, vec![model_path.clone(), manifest_path.clone()])?
        .write(&manifest_path)?;

    writeln!(out, "samples = {}", data.len())?;
    writeln!(out, "epochs = {}", report.epoch_losses.len())?;
    writeln!(out, "final_loss = {}", report.epoch_losses.last().copied().unwrap_or(f64::NAN))?;
    writeln!(out, "stopped_early = {}", report.stopped_early)?;
    writeln!(out, "output = {}", model_path.display())?;
    Ok(())
}

fn eval_threshold(a: &EvalArgs) -> anyhow::Result<f64> {
    if let Some(t) = a.threshold {
        if !(0.0..=1.0).contains(&t) {
            bail!("threshold {t} is outside [0, 1]");
        }
        return Ok(t);
    }
    let noise = NoiseParams::new(a.gamma1.unwrap_or(0.0), a.gamma0.unwrap_or(0.0))?;
    let clean = ClassPriors::new(a.prior.unwrap_or(0.5))?;
    let eval = ClassPriors::new(a.eval_prior.unwrap_or(clean.p1()))?;
    Ok(threshold_from_priors(&eval, &propagate_priors(&clean, &noise))?)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let threshold = eval_threshold(a)?;
    let params = mlp::load(&a.model)?;
    let samples = synth::read_dataset(&a.data)?;
    if samples.is_empty() {
        bail!("{}: dataset has no rows", a.data.display());
    }
    let source = match a.labels {
        Labels::Clean => LabelSource::Clean,
        Labels::Observed => LabelSource::Observed,
    };
    let data = Examples::from_samples(&samples, source);
    let decisions = mlp::classify_all(&params, &data, threshold)?;
    let confusion = mlp::Confusion::from_decisions(&decisions, &data);
    writeln!(out, "threshold = {threshold}")?;
    writeln!(out, "samples = {}", confusion.total())?;
    writeln!(out, "accuracy = {}", confusion.accuracy())?;
    writeln!(out, "true_positive = {}", confusion.true_pos)?;
    writeln!(out, "false_positive = {}", confusion.false_pos)?;
    writeln!(out, "true_negative = {}", confusion.true_neg)?;
    writeln!(out, "false_negative = {}", confusion.false_neg)?;
    Ok(())
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => bail!("--jobs must be at least 1"),
        Some(j) => Ok(rayon::ThreadPoolBuilder::new().num_threads(j).build()?.install(f)),
    }
}

pub fn cmd_grid(experiment: Experiment, a: &GridArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let started = now_ms();
    let (rows, config, seed): (Vec<ResultRow>, serde_json::Value, u64) = match experiment {
        Experiment::Fig2 => {
            let cfg: EfficiencyGridConfig = load_config(a.config.as_deref(), &EfficiencyGridConfig::default())?;
            if a.print_config {
                write!(out, "{}", toml::to_string(&cfg)?)?;
                return Ok(());
            }
            cfg.validate()?;
            let rows = with_jobs(a.jobs, || experiments::run_efficiency_grid(&cfg))??;
            (rows, serde_json::to_value(&cfg)?, cfg.base_seed)
        }
        Experiment::Fig3 => {
            let cfg: FlipRatioGridConfig = load_config(a.config.as_deref(), &FlipRatioGridConfig::default())?;
            if a.print_config {
                write!(out, "{}", toml::to_string(&cfg)?)?;
                return Ok(());
            }
            cfg.validate()?;
            let rows = with_jobs(a.jobs, || experiments::run_flip_ratio_grid(&cfg))??;
            (rows, serde_json::to_value(&cfg)?, cfg.base_seed)
        }
    };
    let summary = experiments::summarize(&rows)?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let name = experiment.name();
    let paths = [
        a.out_dir.join(format!("{name}_results.csv")),
        a.out_dir.join(format!("{name}_summary.csv")),
        a.out_dir.join(format!("{name}.svg")),
        a.out_dir.join(format!("{name}_manifest.json")),
    ];
    let contents = [
        experiments::results_csv(&rows),
        experiments::summary_csv(&summary),
        chart::summary_chart(experiment, &summary).to_svg(),
    ];
    for (path, text) in paths.iter().zip(&contents) {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    RunManifest::new(name, &config, Some(seed), started, paths.to_vec())?.write(&paths[3])?;

    write!(out, "{}", contents[1])?;
    for p in &paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}

pub fn cmd_bernoulli(a: &BernoulliArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let noise = NoiseParams::new(a.gamma1, a.gamma0)?;
    let tosses = synth::flipped_coin_tosses(a.p, &noise, a.count, a.seed)?;
    let est = mle_flipped_bernoulli(&tosses, &noise)?;
    let grid = grid_search_bernoulli(&tosses, &noise, a.step)?;
    writeln!(out, "count = {}", a.count)?;
    writeln!(out, "observed_ones = {}", tosses.iter().filter(|&&t| t).count())?;
    writeln!(out, "p_tilde_hat = {}", est.noisy)?;
    writeln!(out, "p_hat = {}", est.clean)?;
    writeln!(out, "p_grid = {grid}")?;
    Ok(())
}
