//! Simulation grids.
//!
//! Two studies are provided:
//!
//! * the efficiency grid varies total noise (split evenly between the
//!   classes) and training-set size, with equal priors everywhere so the
//!   corrected threshold stays at 1/2;
//! * the flip-ratio grid varies total noise and the ratio `gamma0 / gamma1`
//!   at a fixed training size, and scores every network twice: with the
//!   prior-corrected threshold and with a plain 1/2.
//!
//! Every run index `r` gets its own seed `derive(base_seed, [r])`, which fixes
//! the problem instance, the test set and the training draw for that run.
//! All cells share these per-run draws, so differences between cells come
//! from the noise and size settings rather than from different problems.
//! Within a run the training sets of different sizes are prefixes of one
//! another.
//!
//! Cells are independent and run on the current rayon pool; results are
//! emitted in grid order, so the output does not depend on the pool size.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{noisy_decision_threshold, propagate_priors, threshold_from_priors, ClassPriors, NoiseParams};
use crate::error::{Error, Result};
use crate::mlp::{self, Activation, Architecture, Examples, LabelSource, LrSchedule, TrainConfig};
use crate::seeds;
use crate::synth::{self, ProblemInstance};

// seed tags within a run
const TAG_TEST: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_FLIP: u64 = 3;
const TAG_INIT: u64 = 4;

/// Network and optimiser settings shared by every cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    /// Small training sets are run for more epochs so that every network
    /// receives at least this many updates.
    pub min_updates: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![15, 15],
            activation: Activation::Tanh,
            epochs: 20,
            min_updates: 2000,
            batch_size: 32,
            learning_rate: 0.05,
            lr_schedule: LrSchedule::Linear,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl TrainSettings {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: 2,
            hidden_sizes: self.hidden_sizes.clone(),
            hidden_activation: self.activation,
        }
    }

    /// Training config for a set of `train_size` examples.
    pub fn config_for(&self, train_size: usize, init_seed: u64) -> TrainConfig {
        let batches = train_size.div_ceil(self.batch_size.max(1)).max(1);
        TrainConfig {
            epochs: self.epochs.max(self.min_updates.div_ceil(batches)),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_schedule: self.lr_schedule,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            init_seed,
            early_stop: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        self.config_for(1, 0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencyGridConfig {
    /// Total noise levels `n`; each is split as `gamma1 = gamma0 = n / 2`.
    pub noise_levels: Vec<f64>,
    pub training_sizes: Vec<usize>,
    pub runs: usize,
    pub test_size: usize,
    pub separation_scale: f64,
    pub base_seed: u64,
    pub train: TrainSettings,
}

impl Default for EfficiencyGridConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.0, 0.2, 0.4, 0.8],
            training_sizes: vec![200, 2000, 20000],
            runs: 10,
            test_size: 10_000,
            separation_scale: 2.0,
            base_seed: 2024,
            train: TrainSettings::default(),
        }
    }
}

impl EfficiencyGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.is_empty() || self.training_sizes.is_empty() {
            return Err(Error::Config("noise_levels and training_sizes must be non-empty".into()));
        }
        for &n in &self.noise_levels {
            if !(0.0..1.0).contains(&n) {
                return Err(Error::Config(format!("noise level {n} is outside [0, 1)")));
            }
            NoiseParams::symmetric(n).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.training_sizes.contains(&0) {
            return Err(Error::Config("training sizes must be at least 1".into()));
        }
        validate_common(self.runs, self.test_size, self.separation_scale)?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlipRatioGridConfig {
    pub noise_levels: Vec<f64>,
    /// Values of `gamma0 / gamma1`.
    pub flip_ratios: Vec<f64>,
    pub train_size: usize,
    pub runs: usize,
    pub test_size: usize,
    pub separation_scale: f64,
    pub base_seed: u64,
    pub train: TrainSettings,
}

impl Default for FlipRatioGridConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.1, 0.4],
            flip_ratios: vec![1.0, 2.0, 4.0, 8.0],
            train_size: 10_000,
            runs: 20,
            test_size: 10_000,
            separation_scale: 2.0,
            base_seed: 2024,
            train: TrainSettings::default(),
        }
    }
}

impl FlipRatioGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.is_empty() || self.flip_ratios.is_empty() {
            return Err(Error::Config("noise_levels and flip_ratios must be non-empty".into()));
        }
        for &n in &self.noise_levels {
            for &r in &self.flip_ratios {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Config(format!("flip ratio {r} must be positive")));
                }
                NoiseParams::from_ratio(n, r).map_err(|e| {
                    Error::Config(format!("noise level {n} with flip ratio {r}: {e}"))
                })?;
            }
        }
        if self.train_size == 0 {
            return Err(Error::Config("train_size must be at least 1".into()));
        }
        validate_common(self.runs, self.test_size, self.separation_scale)?;
        self.train.validate()
    }
}

fn validate_common(runs: usize, test_size: usize, separation_scale: f64) -> Result<()> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if test_size == 0 {
        return Err(Error::Config("test_size must be at least 1".into()));
    }
    if !(separation_scale > 0.0 && separation_scale.is_finite()) {
        return Err(Error::Config(format!("separation_scale must be positive, got {separation_scale}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fig2,
    Fig3,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Fig2 => "fig2",
            Experiment::Fig3 => "fig3",
        }
    }
}

/// One trained network scored on one run's clean test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub n: f64,
    pub gamma1: f64,
    pub gamma0: f64,
    pub ratio: f64,
    pub train_size: usize,
    pub run: usize,
    /// Threshold of the corrected condition.
    pub threshold: f64,
    pub acc_corrected: f64,
    /// Accuracy at the uncorrected threshold 1/2.
    pub acc_naive: f64,
    pub bayes_ceiling: f64,
    pub seed: u64,
}

/// Draws shared by every cell of one run.
struct RunContext {
    seed: u64,
    problem: ProblemInstance,
    test: Examples,
    ceiling: f64,
    /// Clean training draw of the largest size used; cells take prefixes.
    train: Vec<synth::LabeledSample>,
}

fn run_contexts(base_seed: u64, runs: usize, test_size: usize, max_train: usize, separation: f64) -> Result<Vec<RunContext>> {
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let seed = seeds::derive(base_seed, &[run as u64]);
            let problem = synth::make_random_problem(seed, separation)?;
            let test_samples = synth::sample_dataset(&problem, test_size, seeds::derive(seed, &[TAG_TEST]))?;
            let ceiling = synth::bayes_accuracy(&problem, &test_samples)?;
            let train = synth::sample_dataset(&problem, max_train, seeds::derive(seed, &[TAG_TRAIN]))?;
            Ok(RunContext {
                seed,
                problem,
                test: Examples::from_samples(&test_samples, LabelSource::Clean),
                ceiling,
                train,
            })
        })
        .collect()
}

struct Cell {
    experiment: Experiment,
    noise: NoiseParams,
    n: f64,
    ratio: f64,
    train_size: usize,
    run: usize,
    threshold: f64,
}

fn evaluate(cell: &Cell, ctx: &RunContext, settings: &TrainSettings) -> Result<ResultRow> {
    debug_assert_eq!(ctx.problem.clean_priors, ClassPriors::equal());
    let flipped = synth::flip_labels(&ctx.train[..cell.train_size], &cell.noise, seeds::derive(ctx.seed, &[TAG_FLIP]));
    let data = Examples::from_samples(&flipped, LabelSource::Observed);
    let cfg = settings.config_for(cell.train_size, seeds::derive(ctx.seed, &[TAG_INIT]));
    let report = mlp::train(&data, &settings.architecture(), &cfg)?;
    Ok(ResultRow {
        experiment: cell.experiment,
        n: cell.n,
        gamma1: cell.noise.gamma1(),
        gamma0: cell.noise.gamma0(),
        ratio: cell.ratio,
        train_size: cell.train_size,
        run: cell.run,
        threshold: cell.threshold,
        acc_corrected: mlp::accuracy(&report.params, &ctx.test, cell.threshold)?,
        acc_naive: mlp::accuracy(&report.params, &ctx.test, 0.5)?,
        bayes_ceiling: ctx.ceiling,
        seed: ctx.seed,
    })
}

/// Accuracy versus training size for symmetric noise.
///
/// The corrected threshold is `(1 - gamma1 + gamma0) / 2`, which is exactly
/// 1/2 here; the ratio column is reported as 1.
pub fn run_efficiency_grid(cfg: &EfficiencyGridConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let max_train = *cfg.training_sizes.iter().max().unwrap();
    let contexts = run_contexts(cfg.base_seed, cfg.runs, cfg.test_size, max_train, cfg.separation_scale)?;

    let mut cells = Vec::new();
    for &n in &cfg.noise_levels {
        let noise = NoiseParams::symmetric(n)?;
        for &train_size in &cfg.training_sizes {
            for run in 0..cfg.runs {
                cells.push(Cell {
                    experiment: Experiment::Fig2,
                    noise,
                    n,
                    ratio: 1.0,
                    train_size,
                    run,
                    threshold: noisy_decision_threshold(&noise),
                });
            }
        }
    }
    run_cells(&cells, &contexts, &cfg.train)
}

/// Accuracy versus flip ratio, with and without the prior correction.
pub fn run_flip_ratio_grid(cfg: &FlipRatioGridConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let contexts = run_contexts(cfg.base_seed, cfg.runs, cfg.test_size, cfg.train_size, cfg.separation_scale)?;
    let clean = ClassPriors::equal();

    let mut cells = Vec::new();
    for &n in &cfg.noise_levels {
        for &ratio in &cfg.flip_ratios {
            let noise = NoiseParams::from_ratio(n, ratio)?;
            let threshold = threshold_from_priors(&clean, &propagate_priors(&clean, &noise))?;
            for run in 0..cfg.runs {
                cells.push(Cell {
                    experiment: Experiment::Fig3,
                    noise,
                    n,
                    ratio,
                    train_size: cfg.train_size,
                    run,
                    threshold,
                });
            }
        }
    }
    run_cells(&cells, &contexts, &cfg.train)
}

fn run_cells(cells: &[Cell], contexts: &[RunContext], settings: &TrainSettings) -> Result<Vec<ResultRow>> {
    cells
        .par_iter()
        .map(|cell| evaluate(cell, &contexts[cell.run], settings))
        .collect()
}

/// Per-cell aggregates over runs. Standard errors use the sample standard
/// deviation and are 0 for a single run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub experiment: Experiment,
    pub n: f64,
    pub ratio: f64,
    pub train_size: usize,
    pub runs: usize,
    pub mean_corrected: f64,
    pub se_corrected: f64,
    pub mean_naive: f64,
    pub se_naive: f64,
    pub mean_ceiling: f64,
    /// Mean and standard error of the per-run difference corrected - naive.
    pub mean_gain: f64,
    pub se_gain: f64,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    // shifted by the first value so that identical inputs give it back exactly
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Groups rows by `(experiment, n, ratio, train_size)`, in ascending order.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<CellSummary>> {
    if rows.is_empty() {
        return Err(Error::domain("no result rows to summarize"));
    }
    type Key = (Experiment, u64, u64, usize);
    let key = |r: &ResultRow| -> Key {
        // bit patterns of non-negative floats sort like the floats
        (r.experiment, r.n.to_bits(), r.ratio.to_bits(), r.train_size)
    };
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(key(r)).or_default().push(r);
    }
    Ok(groups
        .into_values()
        .map(|g| {
            let col = |f: fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_corrected, se_corrected) = mean_se(&col(|r| r.acc_corrected));
            let (mean_naive, se_naive) = mean_se(&col(|r| r.acc_naive));
            let (mean_ceiling, _) = mean_se(&col(|r| r.bayes_ceiling));
            let (mean_gain, se_gain) = mean_se(&col(|r| r.acc_corrected - r.acc_naive));
            CellSummary {
                experiment: g[0].experiment,
                n: g[0].n,
                ratio: g[0].ratio,
                train_size: g[0].train_size,
                runs: g.len(),
                mean_corrected,
                se_corrected,
                mean_naive,
                se_naive,
                mean_ceiling,
                mean_gain,
                se_gain,
            }
        })
        .collect())
}

pub const RESULTS_HEADER: &str =
    "experiment,n,gamma1,gamma0,ratio,train_size,run,threshold,acc_corrected,acc_naive,bayes_ceiling,seed";
pub const SUMMARY_HEADER: &str =
    "experiment,n,ratio,train_size,mean_corrected,se_corrected,mean_naive,se_naive,mean_ceiling";

/// Results table as CSV text. Floats use the shortest representation that
/// parses back to the same value.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment.name(),
            r.n,
            r.gamma1,
            r.gamma0,
            r.ratio,
            r.train_size,
            r.run,
            r.threshold,
            r.acc_corrected,
            r.acc_naive,
            r.bayes_ceiling,
            r.seed
        )
        .unwrap();
    }
    s
}

pub fn summary_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for c in cells {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.experiment.name(),
            c.n,
            c.ratio,
            c.train_size,
            c.mean_corrected,
            c.se_corrected,
            c.mean_naive,
            c.se_naive,
            c.mean_ceiling
        )
        .unwrap();
    }
    s
}
