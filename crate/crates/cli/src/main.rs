use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use remap::channel::{detrend, load_antenna_pattern, Channel, GroundReflection, Sample, TwoRayParams};
use remap::correlation::{empirical_correlation, fit_correlation_model, residual_variance, BinningOptions};
use remap::eval::{
    emit_results, group_by_height, label_height, load_samples_csv, parse_labels, run_experiment,
    write_samples_csv, DataSource, EvalError, EvalMethod, ExperimentConfig, ResultFormat, ResultRow,
    SceneSpec,
};
use remap::geo::GeoPoint;
use remap::kriging::{Method, Mode, NeighborSelector};
use remap::matcomp::CompletionParams;
use remap::par::Execution;

#[derive(Parser)]
#[command(name = "remap", version, about = "3D radio environment maps from sparse UAV measurements")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic survey as a sample CSV.
    Synth(SynthArgs),
    /// Fit the 3D correlation model to a dataset and print it as JSON.
    FitCorr(FitArgs),
    /// Benchmark one Kriging variant.
    Krige(ExperimentArgs),
    /// Benchmark the matrix-completion pipeline.
    Matcomp(ExperimentArgs),
    /// Benchmark several methods on identical splits.
    Bench(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputKind {
    Csv,
    Synth,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ResultFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ResultFormat::Csv,
            FormatArg::Json => ResultFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Residual,
    Raw,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Residual => Mode::Residual,
            ModeArg::Raw => Mode::Raw,
        }
    }
}

/// Base station and antenna settings for CSV input.
#[derive(Args, Clone)]
struct ChannelArgs {
    #[arg(long, allow_negative_numbers = true)]
    bs_lat: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    bs_lon: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    bs_height_m: f64,
    #[arg(long, default_value_t = 30.0)]
    tx_power_db: f64,
    #[arg(long, default_value_t = 0.23)]
    wavelength_m: f64,
    /// Base-station antenna pattern file.
    #[arg(long)]
    bs_pattern: Option<PathBuf>,
    /// UAV antenna pattern file.
    #[arg(long)]
    uav_pattern: Option<PathBuf>,
}

impl ChannelArgs {
    /// `None` when no base station location was given.
    fn channel(&self) -> anyhow::Result<Option<Channel>> {
        let (lat, lon) = match (self.bs_lat, self.bs_lon) {
            (Some(lat), Some(lon)) => (lat, lon),
            (None, None) => return Ok(None),
            _ => bail!("--bs-lat and --bs-lon go together"),
        };
        let params = TwoRayParams {
            wavelength_m: self.wavelength_m,
            tx_power_db: self.tx_power_db,
            ground: GroundReflection::default(),
            bs: GeoPoint::new(lat, lon, self.bs_height_m)?,
        };
        params.validate()?;
        let mut channel = Channel::isotropic(params);
        if let Some(p) = &self.bs_pattern {
            channel.bs_pattern = load_antenna_pattern(p)?;
        }
        if let Some(p) = &self.uav_pattern {
            channel.uav_pattern = load_antenna_pattern(p)?;
        }
        Ok(Some(channel))
    }
}

#[derive(Args, Clone)]
struct SourceArgs {
    #[arg(long, value_enum, default_value_t = InputKind::Synth)]
    input: InputKind,
    /// Sample CSV for `--input csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Skewness shape of synthetic shadowing.
    #[arg(long, default_value_t = 0.0)]
    skew: f64,
    #[command(flatten)]
    channel: ChannelArgs,
}

impl SourceArgs {
    fn source(&self) -> anyhow::Result<DataSource> {
        match self.input {
            InputKind::Synth => {
                Ok(DataSource::Synthetic(SceneSpec { skew: self.skew, ..SceneSpec::default() }))
            }
            InputKind::Csv => {
                let path = self.data.as_ref().ok_or_else(|| anyhow!("--input csv needs --data"))?;
                Ok(DataSource::Samples {
                    samples: load_samples_csv(path)?,
                    channel: self.channel.channel()?,
                })
            }
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    skew: f64,
    /// Height labels to fly.
    #[arg(long, default_value = "ABCD")]
    heights: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Scene seed for `--input synth`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Residual)]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Method, or a comma-separated list for `bench`.
    #[arg(long)]
    method: Option<String>,
    /// Training samples per height.
    #[arg(long, default_value_t = 250)]
    m: usize,
    #[arg(long, conflicts_with = "nearest_n")]
    radius_m: Option<f64>,
    /// Nearest-N neighborhood (also the local Kriging size for matrix completion).
    #[arg(long)]
    nearest_n: Option<usize>,
    #[arg(long, default_value = "D")]
    train_heights: String,
    #[arg(long, default_value_t = 'D')]
    test_height: char,
    /// Seed list: `0..20`, `3` or `1,4,9`.
    #[arg(long, alias = "seed", default_value = "0..20")]
    seeds: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Residual)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1000.0)]
    tv: f64,
    #[arg(long, default_value_t = 10.0)]
    tlambda: f64,
    #[arg(long, default_value_t = 600)]
    niter: usize,
    #[arg(long, default_value_t = 5.0)]
    grid_m: f64,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed `{x}`")))
        .collect()
}

impl ExperimentArgs {
    fn config(&self, method: EvalMethod) -> anyhow::Result<ExperimentConfig> {
        let selector = match (self.radius_m, self.nearest_n) {
            (Some(r), _) => NeighborSelector::FixedRadius(r),
            (None, Some(n)) => NeighborSelector::NearestN(n),
            (None, None) => NeighborSelector::FixedRadius(100.0),
        };
        let mut cfg = ExperimentConfig::new(method, self.m, selector, &self.train_heights, self.test_height);
        cfg.seeds = parse_seeds(&self.seeds)?;
        cfg.mode = self.mode.into();
        cfg.completion = CompletionParams {
            alpha: self.alpha,
            t_v: self.tv,
            t_lambda: self.tlambda,
            n_iter: self.niter,
            local_n: self.nearest_n.unwrap_or(CompletionParams::default().local_n),
            ..CompletionParams::default()
        };
        cfg.grid_m = self.grid_m;
        Ok(cfg)
    }

    fn methods(&self, default: &[EvalMethod]) -> anyhow::Result<Vec<EvalMethod>> {
        match &self.method {
            None => Ok(default.to_vec()),
            Some(list) => list
                .split(',')
                .map(|m| m.trim().parse::<EvalMethod>().map_err(|e| anyhow!(e)))
                .collect(),
        }
    }
}

fn run_rows(args: &ExperimentArgs, methods: &[EvalMethod]) -> anyhow::Result<()> {
    let source = args.source.source()?;
    let rows = methods
        .iter()
        .map(|m| run_experiment(&args.config(*m)?, &source, Execution::Parallel).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<Vec<ResultRow>>>()?;
    emit_results(&rows, &args.out, args.format.into())?;
    for r in &rows {
        if !r.converged {
            eprintln!("warning: {} hit the matrix-completion iteration cap", r.method);
        }
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let labels = parse_labels(&args.heights)?;
    let spec = SceneSpec { skew: args.skew, ..SceneSpec::default() };
    let samples = spec.generate(&labels, args.seed)?;
    let file = fs::File::create(&args.out).with_context(|| args.out.display().to_string())?;
    write_samples_csv(std::io::BufWriter::new(file), &samples)?;
    Ok(())
}

fn fit_corr(args: &FitArgs) -> anyhow::Result<()> {
    let (samples, channel) = match args.source.source()? {
        DataSource::Samples { samples, channel } => (samples, channel),
        DataSource::Synthetic(spec) => {
            let labels: Vec<char> = "ABCD".chars().collect();
            (spec.generate(&labels, args.seed)?, Some(Channel::isotropic(spec.params)))
        }
    };
    let working: Vec<Sample> = match Mode::from(args.mode) {
        Mode::Residual => {
            let ch = channel.as_ref().ok_or(EvalError::MissingChannel("residual mode"))?;
            detrend(&samples, ch)?
        }
        Mode::Raw => samples.iter().map(|s| Sample { shadow_db: Some(s.rsrp_db), ..*s }).collect(),
    };
    let bins = empirical_correlation(&working, &BinningOptions::default())?;
    let fit = fit_correlation_model(&bins, residual_variance(&working)?)?;
    let mut counts = serde_json::Map::new();
    for (label, v) in group_by_height(&samples) {
        counts.insert(format!("{label} ({} m)", label_height(label)?), v.len().into());
    }
    let out = serde_json::json!({
        "model": fit.model,
        "rms_residual": fit.rms_residual,
        "weighted_sse": fit.weighted_sse,
        "iterations": fit.iterations,
        "bins": bins.entries.len(),
        "samples_per_height": counts,
    });
    let text = serde_json::to_string_pretty(&out)? + "\n";
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| p.display().to_string())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::FitCorr(a) => fit_corr(a),
        Command::Krige(a) => {
            let methods = a.methods(&[EvalMethod::Kriging(Method::Ok)])?;
            if methods.iter().any(|m| !matches!(m, EvalMethod::Kriging(_))) {
                bail!("krige takes ok, sk, tg_ok or tg_sk");
            }
            run_rows(a, &methods)
        }
        Command::Matcomp(a) => {
            if a.method.as_deref().is_some_and(|m| m != "matcomp") {
                bail!("matcomp does not take --method");
            }
            run_rows(a, &[EvalMethod::Matcomp])
        }
        Command::Bench(a) => run_rows(a, &a.methods(&EvalMethod::ALL)?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<EvalError>())
        .map(|e| e.exit_code() as u8)
        .unwrap_or(2)
}

fn set_threads(n: usize) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = set_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
