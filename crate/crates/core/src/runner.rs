//! Experiment driver: config file, per-(method, seed) simulation, output
//! files and parameter sweeps.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{BaselineConfig, Dapo, Grpo};
use crate::env::{EnvConfig, EnvError, Population};
use crate::metrics::{self, BudgetLedger, MetricsError, StepMetrics};
use crate::scheduler::{PilotCommit, SchedulerConfig};
use crate::step::{self, Allocator, Method, StepError, StepEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Grpo,
    Dapo,
    Pc,
    #[default]
    Compare,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Grpo => vec![Method::Grpo],
            MethodChoice::Dapo => vec![Method::Dapo],
            MethodChoice::Pc => vec![Method::Pc],
            MethodChoice::Compare => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetPolicy {
    /// Peak mean success of the GRPO run under the same seed.
    #[default]
    GrpoPeak,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: MethodChoice,
    pub max_steps: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Reject Pilot-Commit configs whose `n_pilot + n_commit` differs from
    /// the baselines' `n`.
    pub require_matched_budget: bool,
    pub target: TargetPolicy,
    pub env: EnvConfig,
    pub scheduler: SchedulerConfig,
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: MethodChoice::Compare,
            max_steps: 300,
            seeds: vec![1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs"),
            require_matched_budget: false,
            target: TargetPolicy::GrpoPeak,
            env: EnvConfig::default(),
            scheduler: SchedulerConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("{method} seed {seed} step {step}: {source}")]
    Step {
        method: Method,
        seed: u64,
        step: u64,
        source: StepError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("serialize: {0}")]
    Serialize(String),
}

impl RunError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        RunError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, RunError::Parse(_) | RunError::InvalidConfig { .. })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, RunError> {
        toml::to_string(self).map_err(|e| RunError::Serialize(e.to_string()))
    }

    /// Short SHA-256 of the serialized config. The output directory is
    /// left out so relocated runs share a digest.
    pub fn digest(&self) -> String {
        let text = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        }
        .to_toml()
        .unwrap_or_default();
        let hash = Sha256::digest(text.as_bytes());
        hex::encode(&hash[..8])
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.env.validate().map_err(|e| match e {
            EnvError::InvalidConfig { field, reason } => RunError::invalid(format!("env.{field}"), reason),
            other => RunError::invalid("env", other.to_string()),
        })?;
        self.scheduler
            .validate()
            .map_err(|e| RunError::invalid(format!("scheduler.{}", e.field), e.reason))?;
        self.baseline
            .validate()
            .map_err(|e| RunError::invalid(format!("baseline.{}", e.field), e.reason))?;
        if self.seeds.is_empty() {
            return Err(RunError::invalid("seeds", "at least one seed is required"));
        }
        if let TargetPolicy::Fixed { value } = self.target {
            if !value.is_finite() {
                return Err(RunError::invalid("target.value", "must be finite"));
            }
        }
        let methods = self.method.methods();
        let pool = self.env.population_size;
        if methods.contains(&Method::Pc) && pool < self.scheduler.b_g() {
            return Err(RunError::invalid(
                "env.population_size",
                format!("{pool} is smaller than the pilot batch {}", self.scheduler.b_g()),
            ));
        }
        if methods.contains(&Method::Dapo) && pool < self.baseline.b_g() {
            return Err(RunError::invalid(
                "env.population_size",
                format!("{pool} is smaller than the DAPO batch {}", self.baseline.b_g()),
            ));
        }
        if pool < self.baseline.b_t {
            return Err(RunError::invalid(
                "env.population_size",
                format!("{pool} is smaller than the training batch {}", self.baseline.b_t),
            ));
        }
        if self.require_matched_budget {
            let total = self.scheduler.n_pilot + self.scheduler.n_commit;
            if total != self.baseline.n {
                return Err(RunError::invalid(
                    "scheduler.n_commit",
                    format!("n_pilot + n_commit = {total} but baseline.n = {}", self.baseline.n),
                ));
            }
        }
        Ok(())
    }

    fn allocator(&self, method: Method, seed: u64) -> Result<Box<dyn Allocator + Send>, RunError> {
        Ok(match method {
            Method::Grpo => Box::new(
                Grpo::new(self.baseline.clone(), seed)
                    .map_err(|e| RunError::invalid(format!("baseline.{}", e.field), e.reason))?,
            ),
            Method::Dapo => Box::new(
                Dapo::new(self.baseline.clone(), seed)
                    .map_err(|e| RunError::invalid(format!("baseline.{}", e.field), e.reason))?,
            ),
            Method::Pc => Box::new(
                PilotCommit::new(self.scheduler.clone(), seed)
                    .map_err(|e| RunError::invalid(format!("scheduler.{}", e.field), e.reason))?,
            ),
        })
    }
}

/// Full record of one (method, seed) simulation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub series: Vec<StepMetrics>,
    pub ledger: BudgetLedger,
    pub events: Vec<StepEvent>,
    /// Step at which the active pool ran out, if it did.
    pub exhausted_at: Option<u64>,
    /// Independent count of every Bernoulli draw the environment served.
    pub env_draws: u64,
    pub initial_success: f64,
}

impl RunResult {
    pub fn peak_success(&self) -> Option<f64> {
        metrics::peak_success(&self.series)
    }

    pub fn final_success(&self) -> Option<f64> {
        self.series.last().map(|m| m.mean_success)
    }
}

/// Drives `allocator` for up to `max_steps` steps, recording metrics after
/// each update. Pool exhaustion stops the run without failing it.
pub fn simulate(
    allocator: &mut dyn Allocator,
    pop: &mut Population,
    max_steps: u64,
    seed: u64,
) -> Result<RunResult, RunError> {
    let mut ledger = BudgetLedger::new();
    let mut series = Vec::new();
    let mut events = Vec::new();
    let mut exhausted_at = None;
    let initial_success = if pop.is_empty() { 0.0 } else { pop.mean_success()? };

    for step in 0..max_steps {
        let event = match allocator.step(pop, &mut ledger, step) {
            Ok(event) => event,
            Err(e) if e.is_exhaustion() => {
                exhausted_at = Some(step);
                break;
            }
            Err(source) => {
                return Err(RunError::Step {
                    method: allocator.method(),
                    seed,
                    step,
                    source,
                })
            }
        };
        series.push(StepMetrics {
            step,
            mean_success: pop.mean_success()?,
            mean_reward_std: metrics::mean_group_std(&event.trained)?,
            sampled_cumulative: ledger.sampled_total,
            trained_cumulative: ledger.trained_total,
            buffer_size: allocator.buffer_len(),
            evictions_cumulative: pop.evicted_count(),
            extra_rounds: ledger.last().map_or(0, |e| e.extra_rounds),
        });
        events.push(event);
    }

    Ok(RunResult {
        method: allocator.method(),
        seed,
        series,
        ledger,
        events,
        exhausted_at,
        env_draws: pop.draw_count(),
        initial_success,
    })
}

/// Runs one method on a fresh population built from `config.env` with its
/// seed replaced by `seed`.
pub fn run_method(config: &ExperimentConfig, method: Method, seed: u64) -> Result<RunResult, RunError> {
    let env = EnvConfig {
        seed,
        ..config.env.clone()
    };
    let mut pop = Population::new(&env)?;
    let mut allocator = config.allocator(method, seed)?;
    simulate(allocator.as_mut(), &mut pop, config.max_steps, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub config_digest: String,
    pub target: Option<f64>,
    pub rollouts_to_target: Option<u64>,
    pub initial_success: f64,
    pub peak_success: Option<f64>,
    pub final_success: Option<f64>,
    pub steps_completed: u64,
    pub exhausted_at_step: Option<u64>,
    pub sampled_total: u64,
    pub trained_total: u64,
    pub mean_sampled_per_step: f64,
    pub extra_round_step_fraction: f64,
    pub evictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub peak_success: Option<f64>,
    /// Seed-averaged cumulative sampled rollouts at the target.
    pub rollouts_to_target: Option<f64>,
}

/// Head-to-head comparison on the seed-averaged series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub target: Option<f64>,
    pub methods: Vec<MethodAggregate>,
    pub grpo_over_pc: Option<f64>,
    pub dapo_over_pc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_digest: String,
    pub target_policy: TargetPolicy,
    pub runs: Vec<RunSummary>,
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub runs: Vec<RunResult>,
}

impl ExperimentOutcome {
    pub fn run(&self, method: Method, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.method == method && r.seed == seed)
    }

    pub fn runs_of(&self, method: Method) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.method == method)
    }
}

fn summarize(run: &RunResult, digest: &str, target: Option<f64>) -> RunSummary {
    let steps = run.series.len() as u64;
    RunSummary {
        method: run.method,
        seed: run.seed,
        config_digest: digest.to_owned(),
        target,
        rollouts_to_target: target.and_then(|t| metrics::rollouts_to_target(&run.series, t)),
        initial_success: run.initial_success,
        peak_success: run.peak_success(),
        final_success: run.final_success(),
        steps_completed: steps,
        exhausted_at_step: run.exhausted_at,
        sampled_total: run.ledger.sampled_total,
        trained_total: run.ledger.trained_total,
        mean_sampled_per_step: if steps == 0 {
            0.0
        } else {
            run.series.last().map_or(0, |m| m.sampled_cumulative) as f64 / steps as f64
        },
        extra_round_step_fraction: if steps == 0 {
            0.0
        } else {
            run.series.iter().filter(|m| m.extra_rounds > 0).count() as f64 / steps as f64
        },
        evictions: run.series.last().map_or(0, |m| m.evictions_cumulative),
    }
}

/// Runs every (method, seed) pair, one thread per run. GRPO reference runs
/// are added when the target policy needs them.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutcome, RunError> {
    config.validate()?;
    let mut methods = config.method.methods();
    let needs_reference = matches!(config.target, TargetPolicy::GrpoPeak) && !methods.contains(&Method::Grpo);
    if needs_reference {
        methods.insert(0, Method::Grpo);
    }
    let jobs: Vec<(Method, u64)> = config
        .seeds
        .iter()
        .flat_map(|&seed| methods.iter().map(move |&m| (m, seed)))
        .collect();

    let results: Vec<Result<RunResult, RunError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(method, seed)| scope.spawn(move || run_method(config, method, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let mut runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let digest = config.digest();
    let target_for = |seed: u64, runs: &[RunResult]| -> Option<f64> {
        match config.target {
            TargetPolicy::Fixed { value } => Some(value),
            TargetPolicy::GrpoPeak => runs
                .iter()
                .find(|r| r.method == Method::Grpo && r.seed == seed)
                .and_then(RunResult::peak_success),
        }
    };
    let summaries: Vec<RunSummary> = runs
        .iter()
        .filter(|r| !(needs_reference && r.method == Method::Grpo))
        .map(|r| summarize(r, &digest, target_for(r.seed, &runs)))
        .collect();

    let comparison = (config.method == MethodChoice::Compare).then(|| compare(config, &runs));
    if needs_reference {
        runs.retain(|r| r.method != Method::Grpo);
    }

    Ok(ExperimentOutcome {
        report: ExperimentReport {
            config_digest: digest,
            target_policy: config.target,
            runs: summaries,
            comparison,
        },
        runs,
    })
}

fn compare(config: &ExperimentConfig, runs: &[RunResult]) -> Comparison {
    let averaged = |method: Method| {
        let series: Vec<&[StepMetrics]> = runs
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.series.as_slice())
            .collect();
        metrics::average_series(&series)
    };
    let grpo = averaged(Method::Grpo);
    let target = match config.target {
        TargetPolicy::Fixed { value } => Some(value),
        TargetPolicy::GrpoPeak => metrics::averaged_peak(&grpo),
    };
    let methods: Vec<MethodAggregate> = Method::ALL
        .iter()
        .map(|&method| {
            let avg = averaged(method);
            MethodAggregate {
                method,
                peak_success: metrics::averaged_peak(&avg),
                rollouts_to_target: target.and_then(|t| metrics::averaged_rollouts_to_target(&avg, t)),
            }
        })
        .collect();
    let at = |m: Method| methods.iter().find(|a| a.method == m).and_then(|a| a.rollouts_to_target);
    Comparison {
        target,
        grpo_over_pc: metrics::efficiency_ratio(at(Method::Grpo), at(Method::Pc)),
        dapo_over_pc: metrics::efficiency_ratio(at(Method::Dapo), at(Method::Pc)),
        methods,
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `<method>_seed<seed>.csv`, `<method>_seed<seed>_events.csv` and
/// `summary.json` under `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for run in &outcome.runs {
        let stem = format!("{}_seed{}", run.method, run.seed);
        let path = dir.join(format!("{stem}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        metrics::write_metrics_csv(&run.series, io::BufWriter::new(file))?;
        let path = dir.join(format!("{stem}_events.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        step::write_events_csv(&run.events, io::BufWriter::new(file))?;
    }
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&outcome.report).map_err(|e| RunError::Serialize(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, RunError> {
    let outcome = execute(config)?;
    write_outputs(&outcome, &config.output_dir)?;
    Ok(outcome)
}

fn fmt_opt(v: Option<f64>, scale: f64, suffix: &str) -> String {
    v.map_or_else(|| "never".to_owned(), |x| format!("{:.3}{suffix}", x / scale))
}

/// Plain-text efficiency table for the terminal.
pub fn render_report(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("config {}\n", report.config_digest));
    out.push_str(&format!(
        "{:<6} {:>6} {:>10} {:>10} {:>14} {:>8} {:>9}\n",
        "method", "seed", "peak", "final", "to_target(M)", "steps", "evicted"
    ));
    for r in &report.runs {
        out.push_str(&format!(
            "{:<6} {:>6} {:>10} {:>10} {:>14} {:>8} {:>9}\n",
            r.method,
            r.seed,
            r.peak_success.map_or("-".into(), |p| format!("{p:.4}")),
            r.final_success.map_or("-".into(), |p| format!("{p:.4}")),
            fmt_opt(r.rollouts_to_target.map(|x| x as f64), 1e6, ""),
            r.steps_completed,
            r.evictions,
        ));
    }
    if let Some(c) = &report.comparison {
        out.push_str(&format!(
            "\ntarget {}  (seed-averaged)\n",
            c.target.map_or("-".into(), |t| format!("{t:.4}"))
        ));
        for m in &c.methods {
            out.push_str(&format!(
                "{:<6} to_target {:>10}\n",
                m.method,
                fmt_opt(m.rollouts_to_target, 1e6, "M")
            ));
        }
        let ratio = |r: Option<f64>| r.map_or_else(|| "N/A".to_owned(), |x| format!("{x:.2}x"));
        out.push_str(&format!(
            "GRPO/PC {}   DAPO/PC {}\n",
            ratio(c.grpo_over_pc),
            ratio(c.dapo_over_pc)
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `n_pilot` values; `n_commit` follows from the cost mode.
    Split,
    PLower,
    PUpper,
    PSolve,
    MaxAge,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Split => "split",
            SweepAxis::PLower => "p_lower",
            SweepAxis::PUpper => "p_upper",
            SweepAxis::PSolve => "p_solve",
            SweepAxis::MaxAge => "d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// `n_pilot + n_commit` held fixed.
    #[default]
    EqualTraining,
    /// `b_g * n_pilot + b_t * n_commit` held fixed.
    EqualSampling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub mode: CostMode,
    /// Held-fixed total; defaults to the value implied by the base config.
    pub total: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub n_pilot: usize,
    pub n_commit: usize,
    pub sampled_per_step: u64,
    pub report: Option<ExperimentReport>,
    pub error: Option<String>,
}

/// Solves for `n_commit` given `n_pilot` under the held-fixed cost.
pub fn resolve_split(
    base: &SchedulerConfig,
    n_pilot: usize,
    mode: CostMode,
    total: Option<u64>,
) -> Result<(usize, usize), String> {
    match mode {
        CostMode::EqualTraining => {
            let total = total.unwrap_or((base.n_pilot + base.n_commit) as u64) as usize;
            if n_pilot == 0 || n_pilot > total {
                return Err(format!("n_pilot {n_pilot} infeasible for n_pilot + n_commit = {total}"));
            }
            Ok((n_pilot, total - n_pilot))
        }
        CostMode::EqualSampling => {
            let total = total.unwrap_or(base.sampled_per_step());
            let pilot_cost = (base.b_g() * n_pilot) as u64;
            if n_pilot == 0 || pilot_cost > total {
                return Err(format!("pilot cost {pilot_cost} exceeds sampling budget {total}"));
            }
            let rest = total - pilot_cost;
            if !rest.is_multiple_of(base.b_t as u64) {
                return Err(format!(
                    "no integer n_commit: ({total} - {pilot_cost}) is not a multiple of b_t = {}",
                    base.b_t
                ));
            }
            Ok((n_pilot, (rest / base.b_t as u64) as usize))
        }
    }
}

fn sweep_config(base: &ExperimentConfig, spec: &SweepSpec, value: f64) -> Result<ExperimentConfig, String> {
    let mut cfg = base.clone();
    let s = &mut cfg.scheduler;
    let as_count = |v: f64| -> Result<usize, String> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(format!("{v} is not a non-negative integer"))
        }
    };
    match spec.axis {
        SweepAxis::Split => {
            let (p, c) = resolve_split(s, as_count(value)?, spec.mode, spec.total)?;
            s.n_pilot = p;
            s.n_commit = c;
        }
        SweepAxis::PLower => s.p_lower = value,
        SweepAxis::PUpper => s.p_upper = value,
        SweepAxis::PSolve => s.p_solve = value,
        SweepAxis::MaxAge => s.max_age_d = as_count(value)? as u64,
    }
    cfg.output_dir = base
        .output_dir
        .join(format!("sweep_{}_{}", spec.axis.as_str(), value));
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// One experiment per sweep value. Infeasible values are reported in place.
pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec, write: bool) -> Result<Vec<SweepPoint>, RunError> {
    let mut points = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let mut point = SweepPoint {
            axis: spec.axis,
            value,
            n_pilot: base.scheduler.n_pilot,
            n_commit: base.scheduler.n_commit,
            sampled_per_step: base.scheduler.sampled_per_step(),
            report: None,
            error: None,
        };
        match sweep_config(base, spec, value) {
            Ok(cfg) => {
                point.n_pilot = cfg.scheduler.n_pilot;
                point.n_commit = cfg.scheduler.n_commit;
                point.sampled_per_step = cfg.scheduler.sampled_per_step();
                let outcome = if write { run_experiment(&cfg)? } else { execute(&cfg)? };
                point.report = Some(outcome.report);
            }
            Err(reason) => point.error = Some(reason),
        }
        points.push(point);
    }
    if write {
        fs::create_dir_all(&base.output_dir).map_err(io_err(&base.output_dir))?;
        let path = base.output_dir.join(format!("sweep_{}.json", spec.axis.as_str()));
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        let text = serde_json::to_string_pretty(&points).map_err(|e| RunError::Serialize(e.to_string()))?;
        writeln!(file, "{text}").map_err(io_err(&path))?;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            max_steps: 5,
            seeds: vec![3],
            env: EnvConfig {
                population_size: 512,
                ..EnvConfig::default()
            },
            scheduler: SchedulerConfig {
                b_t: 16,
                ..SchedulerConfig::default()
            },
            baseline: BaselineConfig {
                b_t: 16,
                ..BaselineConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_matches_documented_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.scheduler.p_lower, 0.125);
        assert_eq!(c.scheduler.p_upper, 0.75);
        assert_eq!(c.scheduler.p_solve, 1.0);
        assert_eq!(c.scheduler.max_age_d, 4);
        assert_eq!(c.scheduler.oversample_s, 3);
        assert_eq!(c.scheduler.b_t, 128);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = quick();
        c.target = TargetPolicy::Fixed { value: 0.61 };
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_field_is_named() {
        let err = ExperimentConfig::from_toml("[scheduler]\np_lower = 0.9\n").unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("scheduler.p_lower"), "{err}");

        let err = ExperimentConfig::from_toml("[env]\nlearning_rate = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("env.learning_rate"), "{err}");

        let err = ExperimentConfig::from_toml("[scheduler]\nbogus = 1\n").unwrap_err();
        assert!(err.is_config_error());

        let err = ExperimentConfig::from_toml("seeds = []\n").unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
    }

    #[test]
    fn matched_budget_flag() {
        let mut c = quick();
        c.require_matched_budget = true;
        assert!(c.validate().is_ok());
        c.scheduler.n_commit = 40;
        assert!(c.validate().unwrap_err().to_string().contains("n_commit"));
    }

    #[test]
    fn zero_steps_never_reaches_target() {
        let c = ExperimentConfig {
            max_steps: 0,
            ..quick()
        };
        let out = execute(&c).unwrap();
        assert_eq!(out.report.runs.len(), 3);
        for r in &out.report.runs {
            assert_eq!(r.rollouts_to_target, None);
            assert_eq!(r.steps_completed, 0);
        }
        assert!(out.runs.iter().all(|r| r.series.is_empty()));
    }

    #[test]
    fn single_method_uses_grpo_reference_target() {
        let c = ExperimentConfig {
            method: MethodChoice::Pc,
            ..quick()
        };
        let out = execute(&c).unwrap();
        assert_eq!(out.report.runs.len(), 1);
        assert_eq!(out.runs.len(), 1);
        assert_eq!(out.report.runs[0].method, Method::Pc);
        assert!(out.report.runs[0].target.is_some());
        assert!(out.report.comparison.is_none());
    }

    #[test]
    fn split_resolution() {
        let base = SchedulerConfig::default();
        assert_eq!(resolve_split(&base, 8, CostMode::EqualTraining, None), Ok((8, 56)));
        assert_eq!(resolve_split(&base, 16, CostMode::EqualSampling, Some(12_288)), Ok((16, 48)));
        assert_eq!(resolve_split(&base, 8, CostMode::EqualSampling, None), Ok((8, 72)));
        assert!(resolve_split(&base, 40, CostMode::EqualSampling, None).is_err());
        assert!(resolve_split(&base, 65, CostMode::EqualTraining, None).is_err());
        // 12_288 - 384 * 5 = 10_368 = 81 * 128, feasible; 12_290 is not
        assert!(resolve_split(&base, 5, CostMode::EqualSampling, Some(12_290)).is_err());
    }
}
