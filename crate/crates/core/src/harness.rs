//! Benchmark runner: trains DCM and BDCM on a built-in model, scores
//! generated interventional samples of the outcome against SCM ground truth
//! with MMD, and writes raw and summary tables.
//!
//! Intervened values live in normalized space; ground truth is drawn at the
//! corresponding raw value and normalized with the training transform.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::diffusion::{
    make_schedule, sample_bdcm_at, sample_dcm, train_bdcm, train_dcm, DiffusionError, TrainConfig,
    TrainedCausalModel,
};
use crate::metrics::{mmd, Bandwidth, KernelSpec, MetricsError};
use crate::rng;
use crate::scm::{mean, sample_interventional, sample_observational, std_dev, BuiltinScm, ColumnTransform, Intervention, ScmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Dcm,
    Bdcm,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Dcm, Method::Bdcm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dcm => "dcm",
            Method::Bdcm => "bdcm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dcm" => Ok(Method::Dcm),
            "bdcm" => Ok(Method::Bdcm),
            _ => Err(HarnessError::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },
    #[error("seed {seed}{}{}: {source}", .value.map(|v| format!(", value {v}")).unwrap_or_default(), .method.map(|m| format!(", {m}")).unwrap_or_default())]
    Run {
        seed: u64,
        value: Option<f64>,
        method: Option<Method>,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn context<T, E: Into<HarnessError>>(
    r: Result<T, E>,
    seed: u64,
    value: Option<f64>,
    method: Option<Method>,
) -> Result<T, HarnessError> {
    r.map_err(|e| HarnessError::Run {
        seed,
        value,
        method,
        source: Box::new(e.into()),
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scm: BuiltinScm,
    pub cause: usize,
    pub outcome: usize,
    pub n_train: usize,
    pub n_generate: usize,
    pub n_values: usize,
    pub value_range: (f64, f64),
    /// Seeds the intervened-value draw; independent of the run seeds.
    pub value_seed: u64,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub kernel: KernelSpec,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Full-scale protocol for `scm`.
    pub fn new(scm: BuiltinScm) -> Self {
        let (cause, outcome) = scm.query();
        ExperimentConfig {
            scm,
            cause,
            outcome,
            n_train: 1000,
            n_generate: 500,
            n_values: 10,
            value_range: (-3.0, 3.0),
            value_seed: 0,
            seeds: (0..5).collect(),
            train: TrainConfig::default(),
            kernel: KernelSpec::default(),
            out_dir: None,
        }
    }

    /// Smaller, faster protocol: 100 epochs, 500 training rows, 3 seeds,
    /// 5 intervened values.
    pub fn reduced(scm: BuiltinScm) -> Self {
        let mut cfg = Self::new(scm);
        cfg.train.epochs = 100;
        cfg.n_train = 500;
        cfg.seeds = (0..3).collect();
        cfg.n_values = 5;
        cfg
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.n_train < 2 || self.n_generate < 2 || self.n_values == 0 || self.seeds.is_empty() {
            return bad("sample counts, value count and seed list must be positive");
        }
        let (lo, hi) = self.value_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("value range needs low < high");
        }
        let d = self.scm.dag().node_count();
        if self.cause == self.outcome || !(1..=d).contains(&self.cause) || !(1..=d).contains(&self.outcome) {
            return bad("cause and outcome must be distinct nodes of the model");
        }
        Ok(())
    }

    /// The intervened values (normalized space), drawn once per experiment.
    pub fn intervened_values(&self) -> Vec<f64> {
        let mut r = rng::stream(self.value_seed, &[rng::TAG_VALUES]);
        let (lo, hi) = self.value_range;
        (0..self.n_values).map(|_| r.random_range(lo..hi)).collect()
    }

    /// Applies `key = value` overrides from a flat config text.
    pub fn apply_overrides(&mut self, text: &str) -> Result<(), HarnessError> {
        for (line, key, value) in parse_config(text)? {
            let err = |message: String| HarnessError::ConfigSyntax { line, message };
            let num = |v: &str| -> Result<f64, HarnessError> {
                v.parse().map_err(|_| err(format!("{key}: expected a number, got {v:?}")))
            };
            let int = |v: &str| -> Result<usize, HarnessError> {
                v.parse().map_err(|_| err(format!("{key}: expected an integer, got {v:?}")))
            };
            match key.as_str() {
                "scm" => {
                    let scm: BuiltinScm = value.parse().map_err(|e: ScmError| err(e.to_string()))?;
                    let (c, o) = scm.query();
                    self.scm = scm;
                    self.cause = c;
                    self.outcome = o;
                }
                "cause" => self.cause = int(&value)?,
                "outcome" => self.outcome = int(&value)?,
                "n_train" => self.n_train = int(&value)?,
                "n_generate" => self.n_generate = int(&value)?,
                "values" => self.n_values = int(&value)?,
                "value_low" => self.value_range.0 = num(&value)?,
                "value_high" => self.value_range.1 = num(&value)?,
                "value_seed" => self.value_seed = int(&value)? as u64,
                "seeds" => self.seeds = (0..int(&value)? as u64).collect(),
                "epochs" => self.train.epochs = int(&value)?,
                "batch_size" => self.train.batch_size = int(&value)?,
                "learning_rate" => self.train.learning_rate = num(&value)?,
                "steps" => self.train.steps = int(&value)?,
                "hidden" => {
                    self.train.hidden = value
                        .split(',')
                        .map(|v| int(v.trim()))
                        .collect::<Result<_, _>>()?
                }
                "bandwidth" => {
                    self.kernel.bandwidth = match value.as_str() {
                        "median" => Bandwidth::MedianHeuristic,
                        v => Bandwidth::Fixed(num(v)?),
                    }
                }
                "out" => self.out_dir = Some(PathBuf::from(value)),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment. Returns
/// `(line number, key, value)` in file order.
pub fn parse_config(text: &str) -> Result<Vec<(usize, String, String)>, HarnessError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::ConfigSyntax {
            line: i + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(HarnessError::ConfigSyntax {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMmd {
    pub seed: u64,
    pub value: f64,
    pub mmd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub example: BuiltinScm,
    pub mmd_mean: f64,
    /// Population standard deviation over all (seed, value) pairs.
    pub mmd_std: f64,
    pub raw: Vec<RawMmd>,
}

impl ResultRow {
    fn from_raw(method: Method, example: BuiltinScm, raw: Vec<RawMmd>) -> Self {
        let xs: Vec<f64> = raw.iter().map(|r| r.mmd).collect();
        ResultRow {
            method,
            example,
            mmd_mean: mean(&xs),
            mmd_std: std_dev(&xs),
            raw,
        }
    }
}

/// Both samplers trained on one seed's data.
#[derive(Debug, Clone)]
pub struct SeedModels {
    pub seed: u64,
    pub dcm: TrainedCausalModel,
    pub bdcm: TrainedCausalModel,
    /// Reads of masked training columns; zero unless something leaks.
    pub masked_reads: usize,
}

impl SeedModels {
    pub fn model(&self, method: Method) -> &TrainedCausalModel {
        match method {
            Method::Dcm => &self.dcm,
            Method::Bdcm => &self.bdcm,
        }
    }

    fn transform(&self, node: usize) -> ColumnTransform {
        self.dcm.normalization()[node - 1].expect("observed columns are normalized")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub rows: Vec<ResultRow>,
    pub values: Vec<f64>,
    pub models: Vec<SeedModels>,
}

/// Generates training data for `seed`, normalizes it and trains both samplers.
pub fn train_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedModels, HarnessError> {
    config.validate()?;
    let scm = config.scm.scm();
    let dag = scm.dag().clone();
    let raw = context(sample_observational(&scm, config.n_train, rng::derive(seed, &[rng::TAG_DATA])), seed, None, None)?;
    let data = context(raw.normalize(), seed, None, None)?;
    let schedule = context(make_schedule(config.train.steps), seed, None, None)?;
    let train = TrainConfig {
        seed: rng::derive(seed, &[rng::TAG_TRAIN]),
        ..config.train.clone()
    };
    let dcm = context(train_dcm(&data, &dag, &schedule, &train), seed, None, Some(Method::Dcm))?;
    let iv = Intervention::new(config.cause, 0.0);
    let bdcm = context(train_bdcm(&data, &dag, iv, &schedule, &train), seed, None, Some(Method::Bdcm))?;
    Ok(SeedModels {
        seed,
        dcm,
        bdcm,
        masked_reads: raw.masked_reads() + data.masked_reads(),
    })
}

/// Outcome samples (normalized) from `method` under `do(cause = value)`.
pub fn generate_outcome(
    config: &ExperimentConfig,
    models: &SeedModels,
    method: Method,
    value: f64,
    n: usize,
    sample_seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let out = match method {
        Method::Dcm => sample_dcm(&models.dcm, Intervention::new(config.cause, value), n, sample_seed)?,
        Method::Bdcm => sample_bdcm_at(&models.bdcm, value, n, sample_seed)?,
    };
    Ok(out.column(config.outcome)?.to_vec())
}

/// Ground-truth outcome samples under `do(cause = value)` with `value` in
/// normalized space, returned normalized.
pub fn ground_truth_outcome(
    config: &ExperimentConfig,
    models: &SeedModels,
    value: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    let cause_tr = models.transform(config.cause);
    let outcome_tr = models.transform(config.outcome);
    let iv = Intervention::new(config.cause, cause_tr.invert(value));
    let ys = sample_interventional(&config.scm.scm(), iv, config.outcome, n, seed)?;
    Ok(ys.into_iter().map(|y| outcome_tr.apply(y)).collect())
}

fn score_seed(
    config: &ExperimentConfig,
    models: &SeedModels,
    values: &[f64],
) -> Result<BTreeMap<Method, Vec<RawMmd>>, HarnessError> {
    let seed = models.seed;
    let mut raw: BTreeMap<Method, Vec<RawMmd>> = BTreeMap::new();
    for (k, &value) in values.iter().enumerate() {
        let truth_seed = rng::derive(seed, &[rng::TAG_TRUTH, k as u64]);
        let truth = context(
            ground_truth_outcome(config, models, value, config.n_generate, truth_seed),
            seed,
            Some(value),
            None,
        )?;
        let gen_seed = rng::derive(seed, &[rng::TAG_GENERATE, k as u64]);
        for method in Method::ALL {
            let generated = context(
                generate_outcome(config, models, method, value, config.n_generate, gen_seed),
                seed,
                Some(value),
                Some(method),
            )?;
            let score = context(mmd(&generated, &truth, &config.kernel), seed, Some(value), Some(method))?;
            raw.entry(method).or_default().push(RawMmd { seed, value, mmd: score });
        }
    }
    Ok(raw)
}

/// Runs the protocol and returns one row per method.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    Ok(run_experiment_detailed(config)?.rows)
}

/// Like [`run_experiment`], also returning the trained models.
pub fn run_experiment_detailed(config: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    config.validate()?;
    let values = config.intervened_values();
    let per_seed: Vec<(SeedModels, BTreeMap<Method, Vec<RawMmd>>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let models = train_seed(config, seed)?;
            let raw = score_seed(config, &models, &values)?;
            if let Some(dir) = &config.out_dir {
                let seed_dir = dir.join(config.scm.name()).join(format!("seed_{seed}"));
                for (method, rows) in &raw {
                    write_raw(&seed_dir.join(format!("raw_{method}.csv")), rows)?;
                }
            }
            Ok((models, raw))
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut rows = Vec::new();
    for method in Method::ALL {
        let raw = per_seed.iter().flat_map(|(_, r)| r[&method].iter().copied()).collect();
        rows.push(ResultRow::from_raw(method, config.scm, raw));
    }
    if let Some(dir) = &config.out_dir {
        write_summary(&dir.join(config.scm.name()).join("summary.csv"), &rows)?;
    }
    Ok(ExperimentRun {
        rows,
        values,
        models: per_seed.into_iter().map(|(m, _)| m).collect(),
    })
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

/// `value,mmd` per intervened value.
pub fn write_raw(path: &Path, rows: &[RawMmd]) -> Result<(), HarnessError> {
    let mut f = create(path)?;
    let mut body = String::from("value,mmd\n");
    for r in rows {
        body.push_str(&format!("{},{}\n", r.value, r.mmd));
    }
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Reads a file written by [`write_raw`] as `(value, mmd)` pairs.
pub fn read_raw(path: &Path) -> Result<Vec<(f64, f64)>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .skip(1)
        .enumerate()
        .map(|(i, line)| {
            let parsed = line
                .split_once(',')
                .and_then(|(v, m)| Some((v.parse().ok()?, m.parse().ok()?)));
            parsed.ok_or_else(|| HarnessError::ConfigSyntax {
                line: i + 2,
                message: format!("bad raw row {line:?} in {}", path.display()),
            })
        })
        .collect()
}

/// `example,method,mmd_mean,mmd_std,count`, one line per row.
pub fn write_summary(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let mut f = create(path)?;
    let mut body = String::from("example,method,mmd_mean,mmd_std,count\n");
    for r in rows {
        body.push_str(&format!("{},{},{},{},{}\n", r.example, r.method, r.mmd_mean, r.mmd_std, r.raw.len()));
    }
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Writes a shared-bin histogram of two samples as
/// `bin_left,method,truth` rows. Bins span the pooled range.
pub fn emit_histogram(method: &[f64], truth: &[f64], bins: usize, path: &Path) -> Result<(), HarnessError> {
    if method.is_empty() || truth.is_empty() || bins == 0 {
        return Err(HarnessError::Config("histogram needs samples and at least one bin".into()));
    }
    let (lo, hi) = method
        .iter()
        .chain(truth)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in xs {
            c[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        c
    };
    let (cm, ct) = (count(method), count(truth));
    let mut body = String::from("bin_left,method,truth\n");
    for b in 0..bins {
        body.push_str(&format!("{},{},{}\n", lo + b as f64 * width, cm[b], ct[b]));
    }
    let mut f = create(path)?;
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Generated and ground-truth outcome samples at one value for the first
/// configured seed.
pub fn histogram_samples(
    config: &ExperimentConfig,
    method: Method,
    value: f64,
) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let seed = config.seeds[0];
    let models = train_seed(config, seed)?;
    let generated = context(
        generate_outcome(config, &models, method, value, config.n_generate, rng::derive(seed, &[rng::TAG_GENERATE])),
        seed,
        Some(value),
        Some(method),
    )?;
    let truth = context(
        ground_truth_outcome(config, &models, value, config.n_generate, rng::derive(seed, &[rng::TAG_TRUTH])),
        seed,
        Some(value),
        None,
    )?;
    Ok((generated, truth))
}

/// Sample size of each ground-truth arm in [`ate_report`].
pub const ORACLE_ATE_SAMPLES: usize = 100_000;

/// `ATE(x, 0)` in normalized outcome units: the method's estimate from
/// generated samples (both arms share a sampling seed) and the SCM oracle's.
pub fn ate_report(config: &ExperimentConfig, method: Method, x_value: f64) -> Result<(f64, f64), HarnessError> {
    config.validate()?;
    let seed = config.seeds[0];
    let models = train_seed(config, seed)?;
    ate_from_models(config, &models, method, x_value)
}

pub fn ate_from_models(
    config: &ExperimentConfig,
    models: &SeedModels,
    method: Method,
    x_value: f64,
) -> Result<(f64, f64), HarnessError> {
    let seed = models.seed;
    let gen_seed = rng::derive(seed, &[rng::TAG_GENERATE]);
    let arm = |v: f64| {
        context(
            generate_outcome(config, models, method, v, config.n_generate, gen_seed),
            seed,
            Some(v),
            Some(method),
        )
    };
    let estimate = mean(&arm(x_value)?) - mean(&arm(0.0)?);
    let truth_seed = rng::derive(seed, &[rng::TAG_TRUTH]);
    let oracle_arm = |v: f64| {
        context(
            ground_truth_outcome(config, models, v, ORACLE_ATE_SAMPLES, truth_seed),
            seed,
            Some(v),
            None,
        )
    };
    let oracle = mean(&oracle_arm(x_value)?) - mean(&oracle_arm(0.0)?);
    Ok((estimate, oracle))
}
