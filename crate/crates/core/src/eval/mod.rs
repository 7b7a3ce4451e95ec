//! Experiment harness: height-labelled datasets, train/test splits, RMSE
//! benchmarking of every interpolator against held-out samples.
//!
//! Per seed, `M` samples are drawn at every involved height. The union of the
//! draws at the training heights is the training set; the samples at the test
//! height that were not drawn form the test set, so the test set for a seed
//! does not depend on which heights are used for training.

mod io;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    emit_results, load_samples_csv, read_samples_csv, results_to_csv, results_to_json,
    write_samples_csv, ResultFormat, AGGREGATE_HEADER, RESULT_HEADER, SAMPLE_HEADER,
};
pub use stats::{median, quantile, rmse};

use crate::channel::{
    detrend, synthesize_dataset, Channel, ChannelError, GroundReflection, Sample, TwoRayParams,
    ZigZag,
};
use crate::correlation::{
    empirical_correlation, fit_correlation_model, residual_variance, BinningOptions,
    CorrelationError, CorrelationModel,
};
use crate::geo::{GeoPoint, LocalFrame};
use crate::kriging::{
    fit_gaussian_transform, KrigingConfig, KrigingError, KrigingPredictor, Method, Mode,
    NeighborSelector, Observation,
};
use crate::matcomp::{matrix_completion_pipeline, CompletionParams, MatcompError};
use crate::par::Execution;

/// Survey altitudes by label.
pub const HEIGHT_LABELS: [(char, f64); 4] = [('A', 50.0), ('B', 70.0), ('C', 90.0), ('D', 110.0)];

/// Samples further than this from every labelled altitude are ignored.
pub const HEIGHT_TOLERANCE_M: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown height label `{0}`")]
    UnknownLabel(char),
    #[error("no samples at height {0}")]
    MissingHeight(char),
    #[error("need more than {m} samples at height {label}, have {have}")]
    InsufficientSamples { label: char, have: usize, m: usize },
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("a channel model is required for {0}")]
    MissingChannel(&'static str),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Kriging(#[from] KrigingError),
    #[error(transparent)]
    Matcomp(#[from] MatcompError),
}

impl EvalError {
    /// 3 for solver non-convergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Correlation(CorrelationError::NoConvergence(_))
            | EvalError::Matcomp(MatcompError::NoConvergence(_)) => 3,
            _ => 2,
        }
    }
}

pub fn label_height(label: char) -> Result<f64, EvalError> {
    HEIGHT_LABELS
        .iter()
        .find(|(l, _)| *l == label)
        .map(|(_, h)| *h)
        .ok_or(EvalError::UnknownLabel(label))
}

/// Parses a label set such as `"CD"`; the result is sorted and deduplicated.
pub fn parse_labels(s: &str) -> Result<Vec<char>, EvalError> {
    let mut labels = Vec::new();
    for c in s.trim().chars() {
        let c = c.to_ascii_uppercase();
        label_height(c)?;
        labels.push(c);
    }
    if labels.is_empty() {
        return Err(EvalError::InvalidConfig("empty height label set".into()));
    }
    labels.sort_unstable();
    labels.dedup();
    Ok(labels)
}

fn height_label(h: f64) -> Option<char> {
    HEIGHT_LABELS
        .iter()
        .map(|(l, nominal)| (*l, (h - nominal).abs()))
        .filter(|(_, d)| *d <= HEIGHT_TOLERANCE_M)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| l)
}

/// Buckets samples by nearest labelled altitude, keeping file order.
pub fn group_by_height(samples: &[Sample]) -> BTreeMap<char, Vec<Sample>> {
    let mut out: BTreeMap<char, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        if let Some(l) = height_label(s.location.height_m) {
            out.entry(l).or_default().push(*s);
        }
    }
    out
}

/// Concatenates the per-height sets named by `labels`, in label order.
pub fn mix_heights(by_label: &BTreeMap<char, Vec<Sample>>, labels: &str) -> Result<Vec<Sample>, EvalError> {
    let mut out = Vec::new();
    for l in parse_labels(labels)? {
        out.extend_from_slice(by_label.get(&l).ok_or(EvalError::MissingHeight(l))?);
    }
    Ok(out)
}

/// Uniform `m`-subset without replacement. Both parts keep input order.
pub fn split_train_test(samples: &[Sample], m: usize, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), EvalError> {
    let idx = split_indices(samples.len(), m, seed).ok_or(EvalError::InsufficientSamples {
        label: '?',
        have: samples.len(),
        m,
    })?;
    let mut in_train = vec![false; samples.len()];
    for &i in &idx {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = samples.iter().zip(&in_train).partition(|(_, t)| **t);
    Ok((train.into_iter().map(|(s, _)| *s).collect(), test.into_iter().map(|(s, _)| *s).collect()))
}

fn split_indices(n: usize, m: usize, seed: u64) -> Option<Vec<usize>> {
    if m == 0 || m >= n {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Independent sub-seed `stream` of a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const SCENE_STREAM: u64 = 0;

fn split_stream(label: char) -> u64 {
    1 + (label as u64 - 'A' as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Kriging(Method),
    Matcomp,
    PathlossBaseline,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 6] = [
        EvalMethod::Kriging(Method::Ok),
        EvalMethod::Kriging(Method::Sk),
        EvalMethod::Kriging(Method::TgOk),
        EvalMethod::Kriging(Method::TgSk),
        EvalMethod::Matcomp,
        EvalMethod::PathlossBaseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EvalMethod::Kriging(m) => m.name(),
            EvalMethod::Matcomp => "matcomp",
            EvalMethod::PathlossBaseline => "pathloss_baseline",
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matcomp" => Ok(EvalMethod::Matcomp),
            "pathloss_baseline" => Ok(EvalMethod::PathlossBaseline),
            other => other.parse::<Method>().map(EvalMethod::Kriging),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: EvalMethod,
    /// Training samples drawn per height.
    pub m: usize,
    /// Neighborhood for the Kriging methods. Matrix completion uses
    /// `completion.local_n` instead.
    pub selector: NeighborSelector,
    pub train_heights: String,
    pub test_height: char,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    pub completion: CompletionParams,
    pub grid_m: f64,
    pub nugget_ratio: f64,
}

impl ExperimentConfig {
    pub fn new(method: EvalMethod, m: usize, selector: NeighborSelector, train_heights: &str, test_height: char) -> Self {
        Self {
            method,
            m,
            selector,
            train_heights: train_heights.to_string(),
            test_height,
            seeds: (0..20).collect(),
            mode: Mode::Residual,
            completion: CompletionParams::default(),
            grid_m: 5.0,
            nugget_ratio: crate::kriging::DEFAULT_NUGGET_RATIO,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.m == 0 {
            return Err(EvalError::InvalidConfig("M must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::InvalidConfig("no seeds".into()));
        }
        parse_labels(&self.train_heights)?;
        label_height(self.test_height)?;
        match self.method {
            EvalMethod::Kriging(_) => self.selector.validate()?,
            EvalMethod::Matcomp => {
                self.completion.validate()?;
                if !(self.grid_m > 0.0 && self.grid_m.is_finite()) {
                    return Err(MatcompError::InvalidSpacing(self.grid_m).into());
                }
            }
            EvalMethod::PathlossBaseline => {}
        }
        Ok(())
    }

    /// Every label the experiment touches: training heights plus test height.
    pub fn labels(&self) -> Result<Vec<char>, EvalError> {
        let mut l = parse_labels(&self.train_heights)?;
        l.push(self.test_height.to_ascii_uppercase());
        l.sort_unstable();
        l.dedup();
        Ok(l)
    }

    /// Neighborhood column of the result table.
    pub fn r_or_n(&self) -> String {
        match self.method {
            EvalMethod::Kriging(_) => match self.selector {
                NeighborSelector::FixedRadius(r) => format!("R={r}"),
                NeighborSelector::NearestN(n) => format!("N={n}"),
            },
            EvalMethod::Matcomp => format!("N={}", self.completion.local_n),
            EvalMethod::PathlossBaseline => "-".into(),
        }
    }
}

/// Synthetic survey: a zig-zag flown at the labelled altitudes over a
/// two-ray channel with a correlated (optionally skewed) shadowing field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub trajectory: ZigZag,
    pub params: TwoRayParams,
    pub model: CorrelationModel,
    /// Skewness shape of the shadowing marginal; 0 keeps it Gaussian.
    pub skew: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let corner = GeoPoint::new(35.7275, -78.696, 0.0).expect("valid corner");
        let bs = LocalFrame::new(corner).from_local_xy(-100.0, -100.0, 10.0);
        Self {
            trajectory: ZigZag {
                corner,
                north_extent_m: 785.0,
                east_extent_m: 455.0,
                line_spacing_m: 65.0,
                sample_spacing_m: 10.0,
                heights_m: HEIGHT_LABELS.iter().map(|(_, h)| *h).collect(),
            },
            params: TwoRayParams {
                wavelength_m: 0.23,
                tx_power_db: 30.0,
                ground: GroundReflection::default(),
                bs,
            },
            model: CorrelationModel { a: 0.6, p1: 0.03, p2: 0.004, q: 0.03, sigma_w_sq: 16.0 },
            skew: 0.0,
        }
    }
}

impl SceneSpec {
    /// Synthesizes the survey at the given labels only.
    pub fn generate(&self, labels: &[char], seed: u64) -> Result<Vec<Sample>, EvalError> {
        let mut traj = self.trajectory.clone();
        traj.heights_m = labels.iter().map(|l| label_height(*l)).collect::<Result<_, _>>()?;
        let channel = Channel::isotropic(self.params);
        Ok(synthesize_dataset(&traj, &channel, &self.model, self.skew, seed)?)
    }
}

pub enum DataSource {
    Samples { samples: Vec<Sample>, channel: Option<Channel> },
    Synthetic(SceneSpec),
}

/// Per-height data and the correlation models fitted to it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub by_label: BTreeMap<char, Vec<Sample>>,
    pub channel: Option<Channel>,
    pub model: CorrelationModel,
    /// Normal-score domain model for the trans-Gaussian methods.
    pub model_y: Option<CorrelationModel>,
}

/// Groups `samples` by height and fits the correlation model to all of them
/// in the working domain of `mode`; with `fit_y` also fits the normal-score
/// domain model.
pub fn prepare_scene(
    samples: &[Sample],
    channel: Option<&Channel>,
    mode: Mode,
    fit_y: bool,
) -> Result<Scene, EvalError> {
    let working: Vec<Sample> = match mode {
        Mode::Residual => detrend(samples, channel.ok_or(EvalError::MissingChannel("residual mode"))?)?,
        Mode::Raw => samples.iter().map(|s| Sample { shadow_db: Some(s.rsrp_db), ..*s }).collect(),
    };
    let model = fit_model(&working)?;
    let model_y = if fit_y {
        let values: Vec<f64> = working.iter().map(|s| s.shadow_db.expect("set above")).collect();
        let tg = fit_gaussian_transform(&values)?;
        let y: Vec<Sample> = working
            .iter()
            .zip(&values)
            .map(|(s, v)| Sample { shadow_db: Some(tg.forward(*v)), ..*s })
            .collect();
        Some(fit_model(&y)?)
    } else {
        None
    };
    Ok(Scene {
        by_label: group_by_height(samples),
        channel: channel.cloned(),
        model,
        model_y,
    })
}

fn fit_model(samples: &[Sample]) -> Result<CorrelationModel, EvalError> {
    let sill = residual_variance(samples)?;
    if !(sill > 0.0) {
        return Err(CorrelationError::ZeroVariance.into());
    }
    let bins = empirical_correlation(samples, &BinningOptions::default())?;
    Ok(fit_correlation_model(&bins, sill)?.model)
}

/// Training and test sets of one seed; see the module docs.
pub fn seed_split(scene: &Scene, config: &ExperimentConfig, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), EvalError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let train_labels = parse_labels(&config.train_heights)?;
    let test_label = config.test_height.to_ascii_uppercase();
    for label in config.labels()? {
        let data = scene.by_label.get(&label).ok_or(EvalError::MissingHeight(label))?;
        let (tr, te) = split_train_test(data, config.m, derive_seed(seed, split_stream(label))).map_err(|_| {
            EvalError::InsufficientSamples { label, have: data.len(), m: config.m }
        })?;
        if train_labels.contains(&label) {
            train.extend(tr);
        }
        if label == test_label {
            test = te;
        }
    }
    Ok((train, test))
}

/// Test-set RMSE of one seed and whether every solver converged.
pub fn run_seed(scene: &Scene, config: &ExperimentConfig, seed: u64, exec: Execution) -> Result<(f64, bool), EvalError> {
    let (train, test) = seed_split(scene, config, seed)?;
    let targets: Vec<GeoPoint> = test.iter().map(|s| s.location).collect();
    let truths: Vec<f64> = test.iter().map(|s| s.rsrp_db).collect();
    let channel = scene.channel.as_ref();
    let trend = |p: &GeoPoint| -> Result<f64, EvalError> {
        match config.mode {
            Mode::Residual => Ok(channel.ok_or(EvalError::MissingChannel("residual mode"))?.mean_rsrp_db(p)?),
            Mode::Raw => Ok(0.0),
        }
    };
    let (predictions, converged) = match config.method {
        EvalMethod::PathlossBaseline => {
            let ch = channel.ok_or(EvalError::MissingChannel("the pathloss baseline"))?;
            let p = targets.iter().map(|t| ch.mean_rsrp_db(t)).collect::<Result<Vec<_>, _>>()?;
            (p, true)
        }
        EvalMethod::Kriging(method) => {
            let kc = KrigingConfig {
                method,
                selector: config.selector,
                mode: config.mode,
                nugget_ratio: config.nugget_ratio,
            };
            let predictor = KrigingPredictor::new(&train, kc, &scene.model, scene.model_y.as_ref(), channel)?;
            let p = exec
                .map(&targets, |t| predictor.predict_or_mean(t).map(|p| p.value))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            (p, true)
        }
        EvalMethod::Matcomp => {
            let obs = train
                .iter()
                .map(|s| Ok(Observation { location: s.location, value: s.rsrp_db - trend(&s.location)? }))
                .collect::<Result<Vec<_>, EvalError>>()?;
            let mut params = config.completion;
            params.nugget_ratio = config.nugget_ratio;
            let out = matrix_completion_pipeline(&obs, &targets, config.grid_m, &params, &scene.model, exec)?;
            let p = out
                .predictions
                .iter()
                .zip(&targets)
                .map(|(v, t)| Ok(v + trend(t)?))
                .collect::<Result<Vec<_>, EvalError>>()?;
            (p, out.converged)
        }
    };
    Ok((rmse(&predictions, &truths)?, converged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedRmse {
    pub seed: u64,
    pub rmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R_or_N")]
    pub r_or_n: String,
    pub train_heights: String,
    pub test_height: String,
    pub mode: String,
    pub seeds: Vec<SeedRmse>,
    pub median_rmse_db: f64,
    pub q1_rmse_db: f64,
    pub q3_rmse_db: f64,
    /// False if any matrix completion stopped at its iteration cap.
    pub converged: bool,
}

impl ResultRow {
    pub fn rmses(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.rmse_db).collect()
    }
}

/// Seed-specific synthetic scene at `labels`, prepared for `config`.
pub fn synthetic_scene(spec: &SceneSpec, config: &ExperimentConfig, labels: &[char], seed: u64) -> Result<Scene, EvalError> {
    let samples = spec.generate(labels, derive_seed(seed, SCENE_STREAM))?;
    scene_for(config, &samples, Some(&Channel::isotropic(spec.params)))
}

fn scene_for(config: &ExperimentConfig, samples: &[Sample], channel: Option<&Channel>) -> Result<Scene, EvalError> {
    match config.method {
        EvalMethod::PathlossBaseline => Ok(Scene {
            by_label: group_by_height(samples),
            channel: channel.cloned(),
            model: CorrelationModel { a: 1.0, p1: 0.0, p2: 0.0, q: 0.0, sigma_w_sq: 1.0 },
            model_y: None,
        }),
        EvalMethod::Kriging(m) => prepare_scene(samples, channel, config.mode, m.is_trans_gaussian()),
        EvalMethod::Matcomp => prepare_scene(samples, channel, config.mode, false),
    }
}

/// Runs every seed of `config`. A synthetic source is regenerated per seed
/// (scene seed derived from the run seed); a fixed dataset is prepared once.
pub fn run_experiment(config: &ExperimentConfig, source: &DataSource, exec: Execution) -> Result<ResultRow, EvalError> {
    config.validate()?;
    let results = match source {
        DataSource::Samples { samples, channel } => {
            let scene = scene_for(config, samples, channel.as_ref())?;
            exec.map(&config.seeds, |&seed| run_seed(&scene, config, seed, exec))
        }
        DataSource::Synthetic(spec) => {
            let labels = config.labels()?;
            exec.map(&config.seeds, |&seed| {
                let scene = synthetic_scene(spec, config, &labels, seed)?;
                run_seed(&scene, config, seed, exec)
            })
        }
    };
    aggregate(config, results)
}

/// Runs `config` with `scenes[i]` as the data of `config.seeds[i]`.
pub fn run_on_scenes(config: &ExperimentConfig, scenes: &[Scene], exec: Execution) -> Result<ResultRow, EvalError> {
    config.validate()?;
    if scenes.len() != config.seeds.len() {
        return Err(EvalError::InvalidConfig(format!(
            "{} scenes for {} seeds",
            scenes.len(),
            config.seeds.len()
        )));
    }
    let pairs: Vec<(u64, &Scene)> = config.seeds.iter().copied().zip(scenes).collect();
    let results = exec.map(&pairs, |(seed, scene)| run_seed(scene, config, *seed, exec));
    aggregate(config, results)
}

fn aggregate(config: &ExperimentConfig, results: Vec<Result<(f64, bool), EvalError>>) -> Result<ResultRow, EvalError> {
    let mut seeds = Vec::with_capacity(results.len());
    let mut converged = true;
    for (seed, r) in config.seeds.iter().zip(results) {
        let (rmse_db, ok) = r?;
        converged &= ok;
        seeds.push(SeedRmse { seed: *seed, rmse_db });
    }
    let v: Vec<f64> = seeds.iter().map(|s| s.rmse_db).collect();
    Ok(ResultRow {
        method: config.method.name().into(),
        m: config.m,
        r_or_n: config.r_or_n(),
        train_heights: parse_labels(&config.train_heights)?.into_iter().collect(),
        test_height: config.test_height.to_ascii_uppercase().to_string(),
        mode: config.mode.to_string(),
        median_rmse_db: median(&v),
        q1_rmse_db: quantile(&v, 0.25),
        q3_rmse_db: quantile(&v, 0.75),
        seeds,
        converged,
    })
}
