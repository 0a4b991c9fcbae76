//! The `cmos` command line.
//!
//! Every subcommand reads a [`RunConfig`] (JSON file via `--config`, defaults
//! otherwise), applies flag overrides, and writes its outputs with fixed file
//! names under `--out`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, prepare, split_len, Dataset, PreparedData, SplitSpec};
use crate::error::CmosError;
use crate::eval::{
    averaging_theorem_fuzz, evaluate, export_interpretability, gradient_check, run_ablation,
    AblationVariant, MetricsReport,
};
use crate::model::{Checkpoint, CmosConfig, PeriodicityInjection};
use crate::periodicity::estimate_period;
use crate::synth::{add_burst_noise, add_gaussian_noise, chunk_vs_point_experiment, gen_sine, BurstExperiment, BurstSpec};
use crate::train::{multi_seed_runs, summarize, SeedRun, TrainConfig};

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// `auto` (ETT-style for `ETT*` names), `ett` or `standard`.
    pub split: String,
    pub lookback: usize,
    pub horizon: usize,
    pub chunk_size: usize,
    pub experts: usize,
    pub kernel_size: usize,
    pub eps: f64,
    pub pi: bool,
    /// Detected with the ACF on the train split when absent.
    pub pi_period: Option<usize>,
    pub pi_inclusive: bool,
    pub max_lag: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub lookback_grid: Vec<usize>,
    pub chunk_grid: Vec<usize>,
    pub experts_grid: Vec<usize>,
    pub lr_grid: Vec<f64>,
    pub variants: Vec<AblationVariant>,
    pub out: PathBuf,
    pub deterministic: bool,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            split: "auto".into(),
            lookback: 96,
            horizon: 96,
            chunk_size: 8,
            experts: 4,
            kernel_size: 8,
            eps: 1e-5,
            pi: true,
            pi_period: None,
            pi_inclusive: false,
            max_lag: 100,
            train: TrainConfig::default(),
            lookback_grid: vec![96, 336, 720],
            chunk_grid: vec![2, 4, 8, 24],
            experts_grid: vec![2, 4, 8],
            lr_grid: vec![2e-5, 5e-5, 8e-5, 8e-4],
            variants: AblationVariant::ALL.to_vec(),
            out: PathBuf::from("cmos_out"),
            deterministic: false,
            svg: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        if !path.exists() {
            return Err(CmosError::FileNotFound(path.to_path_buf()).into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        self.split_spec("x")?;
        if self.lookback_grid.is_empty() || self.chunk_grid.is_empty() || self.experts_grid.is_empty() || self.lr_grid.is_empty() {
            bail!("invalid config: search grids must be nonempty");
        }
        Ok(())
    }

    pub fn split_spec(&self, dataset_name: &str) -> anyhow::Result<SplitSpec> {
        Ok(match self.split.as_str() {
            "auto" => SplitSpec::for_dataset(dataset_name),
            "ett" => SplitSpec::ett(),
            "standard" => SplitSpec::standard(),
            other => bail!("invalid config: unknown split style '{other}' (auto, ett, standard)"),
        })
    }

    fn dataset_path(&self) -> anyhow::Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("no dataset given (use --dataset or the config's \"dataset\")"))
    }

    pub fn model_config(&self, lookback: usize, chunk_size: usize, experts: usize, channels: usize) -> CmosConfig {
        let mut cfg = CmosConfig::new(lookback, self.horizon, chunk_size, experts, self.kernel_size, channels).with_eps(self.eps);
        if self.pi {
            cfg.injection = self.pi_period.map(|period| PeriodicityInjection {
                period,
                inclusive: self.pi_inclusive,
            });
        }
        cfg
    }
}

#[derive(Debug, Parser)]
#[command(name = "cmos", version, about = "Chunk-wise correlation mixing forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration over the seed list.
    Train(CommonArgs),
    /// Search lookback, chunk size, expert count and learning rate by validation MSE.
    Grid(CommonArgs),
    /// Score a checkpoint on the test split.
    Evaluate(CheckpointArgs),
    /// Train every ablation variant with the same seeds.
    Ablate(AblateArgs),
    /// Dominant period by autocorrelation on the train split.
    Period(CommonArgs),
    /// Generate a synthetic dataset or run the burst-noise comparison.
    Synth(SynthArgs),
    /// Export correlation matrices and mixing allocations of a checkpoint.
    Inspect(CheckpointArgs),
    /// Run the averaging-inequality fuzz suite and the gradient check.
    Theorem(TheoremArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub experts: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long, overrides_with = "no_pi")]
    pub pi: bool,
    #[arg(long, overrides_with = "pi")]
    pub no_pi: bool,
    #[arg(long)]
    pub pi_inclusive: bool,
    #[arg(long)]
    pub pi_period: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single worker thread.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// auto, ett or standard.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Also write SVG heatmaps of the correlation matrices.
    #[arg(long)]
    pub svg: bool,
}

impl CommonArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if let Some(d) = &self.dataset {
            rc.dataset = Some(d.clone());
        }
        set!(self.horizon, rc.horizon);
        set!(self.lookback, rc.lookback);
        set!(self.chunk_size, rc.chunk_size);
        set!(self.experts, rc.experts);
        set!(self.kernel_size, rc.kernel_size);
        set!(self.seeds, rc.train.seeds);
        set!(self.out, rc.out);
        set!(self.epochs, rc.train.epochs);
        set!(self.lr, rc.train.lr);
        set!(self.batch_size, rc.train.batch_size);
        set!(self.split, rc.split);
        set!(self.max_lag, rc.max_lag);
        if self.pi {
            rc.pi = true;
        }
        if self.no_pi {
            rc.pi = false;
        }
        if self.pi_inclusive {
            rc.pi_inclusive = true;
        }
        if self.pi_period.is_some() {
            rc.pi_period = self.pi_period;
        }
        if self.patience.is_some() {
            rc.train.patience = self.patience;
        }
        if self.deterministic {
            rc.deterministic = true;
        }
        if self.svg {
            rc.svg = true;
        }
        rc.validate()?;
        Ok(rc)
    }
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated subset of full, no_chunk, no_cormix, no_pi, one_bus, private_line.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// sine, gaussian or burst.
    #[arg(long, default_value = "burst")]
    pub kind: String,
    #[arg(long, default_value_t = 4000)]
    pub length: usize,
    #[arg(long, default_value_t = 24.0)]
    pub period: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gpd_scale: f64,
    #[arg(long, default_value_t = 0.2)]
    pub gpd_shape: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path, or output directory with `--chunk-vs-point`.
    #[arg(long)]
    pub out: PathBuf,
    /// Run the chunk-level versus point-level burst-noise comparison instead.
    #[arg(long)]
    pub chunk_vs_point: bool,
    /// Burst experiment JSON overriding the default construction.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Worker-thread count: `CMOS_THREADS` when set, 1 in deterministic mode.
fn configure_threads(deterministic: bool) {
    let from_env = std::env::var("CMOS_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    let threads = if deterministic { Some(1) } else { from_env };
    if let Some(n) = threads {
        // only the first call in a process can size the global pool
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

struct Loaded {
    raw: Dataset,
    name: String,
    spec: SplitSpec,
}

fn load(rc: &RunConfig) -> anyhow::Result<Loaded> {
    let path = rc.dataset_path()?;
    let raw = load_csv(path, None)?;
    let name = dataset_name(path);
    let spec = rc.split_spec(&name)?;
    Ok(Loaded { raw, name, spec })
}

/// Fills `pi_period` from the ACF of the train split when PI is on and no
/// period was given.
fn resolve_period(rc: &mut RunConfig, loaded: &Loaded) -> anyhow::Result<()> {
    if !rc.pi || rc.pi_period.is_some() {
        return Ok(());
    }
    let est = estimate_period(&loaded.raw, train_len(loaded), rc.max_lag)?;
    log::info!("detected period {} (acf {:.4})", est.period, est.acf_value);
    rc.pi_period = Some(est.period);
    Ok(())
}

/// Length of the train split, which does not depend on `L` or `H`.
fn train_len(loaded: &Loaded) -> usize {
    split_len(loaded.spec.train_ratio, loaded.raw.len())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn history_csv(runs: &[SeedRun]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr,seed\n");
    for r in runs {
        for e in &r.fit.history.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr, r.fit.seed);
        }
    }
    out
}

fn best_run(runs: &[SeedRun]) -> &SeedRun {
    runs.iter()
        .min_by(|a, b| {
            let va = a.fit.history.best_val_loss.unwrap_or(f64::INFINITY);
            let vb = b.fit.history.best_val_loss.unwrap_or(f64::INFINITY);
            va.total_cmp(&vb)
        })
        .expect("at least one seed")
}

fn checkpoint_of(run: &SeedRun, cfg: &CmosConfig) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        seed: run.fit.seed,
        epoch: run.fit.history.best_epoch.unwrap_or(0),
        val_loss: run.fit.history.best_val_loss.unwrap_or(f64::NAN),
        params: run.fit.params.clone(),
    }
}

/// Writes `config.json`, `history.csv`, `model.ckpt`, `metrics.json` and the
/// interpretability exports for one trained configuration.
fn write_run_outputs(
    dir: &Path,
    rc: &RunConfig,
    variant: &str,
    loaded_name: &str,
    cfg: &CmosConfig,
    data: &PreparedData,
    runs: &[SeedRun],
) -> anyhow::Result<MetricsReport> {
    create_dir(dir)?;
    write(&dir.join("config.json"), serde_json::to_string_pretty(rc)?)?;
    write(&dir.join("history.csv"), history_csv(runs))?;
    let best = best_run(runs);
    checkpoint_of(best, cfg).save(&dir.join("model.ckpt"))?;
    let report = MetricsReport::new(loaded_name, variant, cfg, &rc.train, &summarize(runs));
    write(&dir.join("metrics.json"), report.to_json()?)?;
    export_interpretability(&best.fit.params, cfg, data, dir, rc.svg)?;
    Ok(report)
}

fn cmd_train(args: &CommonArgs) -> anyhow::Result<()> {
    let mut rc = args.resolve()?;
    configure_threads(rc.deterministic);
    let loaded = load(&rc)?;
    resolve_period(&mut rc, &loaded)?;
    let cfg = rc.model_config(rc.lookback, rc.chunk_size, rc.experts, loaded.raw.n_channels());
    cfg.validate()?;
    let data = prepare(&loaded.raw, &loaded.spec, rc.lookback, rc.horizon)?;
    let runs = multi_seed_runs(&data, &cfg, &rc.train)?;
    let report = write_run_outputs(&rc.out, &rc, "full", &loaded.name, &cfg, &data, &runs)?;
    println!(
        "mse={:.6} (±{:.6}) mae={:.6} (±{:.6}) params={}",
        report.mean_mse, report.std_mse, report.mean_mae, report.std_mae, report.param_count.total
    );
    Ok(())
}

/// Why a grid cell cannot run, if it cannot.
fn grid_skip_reason(lookback: usize, horizon: usize, chunk: usize, period: Option<usize>) -> Option<String> {
    if lookback % chunk != 0 {
        return Some(format!("S={chunk} does not divide L={lookback}"));
    }
    if horizon % chunk != 0 {
        return Some(format!("S={chunk} does not divide H={horizon}"));
    }
    if let Some(p) = period {
        if p % chunk != 0 {
            return Some(format!("S={chunk} does not divide period {p}"));
        }
        if p > lookback {
            return Some(format!("period {p} exceeds L={lookback}"));
        }
    }
    None
}

fn cmd_grid(args: &CommonArgs) -> anyhow::Result<()> {
    let mut rc = args.resolve()?;
    configure_threads(rc.deterministic);
    let loaded = load(&rc)?;
    resolve_period(&mut rc, &loaded)?;
    let period = if rc.pi { rc.pi_period } else { None };
    create_dir(&rc.out)?;

    let mut table = String::from("lookback,chunk_size,experts,lr,mean_val_mse,status\n");
    let mut best: Option<(f64, RunConfig, CmosConfig, PreparedData, Vec<SeedRun>)> = None;
    for &lookback in &rc.lookback_grid {
        let data = match prepare(&loaded.raw, &loaded.spec, lookback, rc.horizon) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("skipping L={lookback}: {e}");
                let _ = writeln!(table, "{lookback},,,,,skipped: {e}");
                continue;
            }
        };
        for &chunk in &rc.chunk_grid {
            if let Some(reason) = grid_skip_reason(lookback, rc.horizon, chunk, period) {
                log::warn!("skipping L={lookback} S={chunk}: {reason}");
                let _ = writeln!(table, "{lookback},{chunk},,,,skipped: {reason}");
                continue;
            }
            for &experts in &rc.experts_grid {
                let cfg = rc.model_config(lookback, chunk, experts, loaded.raw.n_channels());
                if let Err(e) = cfg.validate() {
                    log::warn!("skipping L={lookback} S={chunk} K={experts}: {e}");
                    let _ = writeln!(table, "{lookback},{chunk},{experts},,,skipped: {e}");
                    continue;
                }
                for &lr in &rc.lr_grid {
                    let mut cell = rc.clone();
                    cell.lookback = lookback;
                    cell.chunk_size = chunk;
                    cell.experts = experts;
                    cell.train.lr = lr;
                    let runs = multi_seed_runs(&data, &cfg, &cell.train)?;
                    let vals: Vec<f64> = runs
                        .iter()
                        .map(|r| r.fit.history.best_val_loss.unwrap_or(f64::INFINITY))
                        .collect();
                    let val = vals.iter().sum::<f64>() / vals.len() as f64;
                    log::info!("L={lookback} S={chunk} K={experts} lr={lr:e}: val mse {val:.6}");
                    let _ = writeln!(table, "{lookback},{chunk},{experts},{lr},{val},ok");
                    if best.as_ref().is_none_or(|b| val < b.0) {
                        best = Some((val, cell, cfg.clone(), data.clone(), runs));
                    }
                }
            }
        }
    }
    write(&rc.out.join("grid.csv"), &table)?;
    let Some((val, cell, cfg, data, runs)) = best else {
        bail!("every grid cell was skipped");
    };
    let report = write_run_outputs(&rc.out, &cell, "full", &loaded.name, &cfg, &data, &runs)?;
    println!(
        "best L={} S={} K={} lr={:e} val_mse={val:.6} test_mse={:.6} test_mae={:.6}",
        cell.lookback, cell.chunk_size, cell.experts, cell.train.lr, report.mean_mse, report.mean_mae
    );
    Ok(())
}

fn load_checkpoint_data(args: &CheckpointArgs) -> anyhow::Result<(RunConfig, Loaded, Checkpoint, PreparedData)> {
    let rc = args.common.resolve()?;
    configure_threads(rc.deterministic);
    let ck = Checkpoint::load(&args.checkpoint)?;
    let loaded = load(&rc)?;
    if ck.config.channels != loaded.raw.n_channels() {
        bail!(
            "checkpoint expects {} channels, dataset has {}",
            ck.config.channels,
            loaded.raw.n_channels()
        );
    }
    let data = prepare(&loaded.raw, &loaded.spec, ck.config.lookback, ck.config.horizon)?;
    Ok((rc, loaded, ck, data))
}

fn cmd_evaluate(args: &CheckpointArgs) -> anyhow::Result<()> {
    let (rc, loaded, ck, data) = load_checkpoint_data(args)?;
    let m = evaluate(&ck.params, &ck.config, &data, crate::data::Split::Test)?;
    let summary = crate::train::SeedSummary::from_outcomes(vec![crate::train::SeedOutcome {
        seed: ck.seed,
        mse: m.mse,
        mae: m.mae,
        best_epoch: Some(ck.epoch),
        best_val_loss: Some(ck.val_loss),
    }]);
    let report = MetricsReport::new(&loaded.name, "checkpoint", &ck.config, &rc.train, &summary);
    create_dir(&rc.out)?;
    write(&rc.out.join("metrics.json"), report.to_json()?)?;
    println!("{}", report.to_json()?);
    Ok(())
}

fn cmd_inspect(args: &CheckpointArgs) -> anyhow::Result<()> {
    let (rc, _, ck, data) = load_checkpoint_data(args)?;
    let export = export_interpretability(&ck.params, &ck.config, &data, &rc.out, rc.svg)?;
    for f in &export.matrix_files {
        println!("{}", f.display());
    }
    if let Some(f) = &export.allocation_file {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> anyhow::Result<()> {
    let mut rc = args.common.resolve()?;
    if let Some(names) = &args.variants {
        rc.variants = names
            .iter()
            .map(|n| AblationVariant::parse(n).ok_or_else(|| anyhow::anyhow!("unknown variant '{n}'")))
            .collect::<anyhow::Result<_>>()?;
    }
    configure_threads(rc.deterministic);
    let loaded = load(&rc)?;
    resolve_period(&mut rc, &loaded)?;
    let base = rc.model_config(rc.lookback, rc.chunk_size, rc.experts, loaded.raw.n_channels());
    base.validate()?;
    let data = prepare(&loaded.raw, &loaded.spec, rc.lookback, rc.horizon)?;
    create_dir(&rc.out)?;
    write(&rc.out.join("config.json"), serde_json::to_string_pretty(&rc)?)?;
    let mut table = String::from("variant,mean_mse,std_mse,mean_mae,std_mae,param_count\n");
    for v in &rc.variants {
        let result = run_ablation(&data, &base, *v, &rc.train)?;
        let report = MetricsReport::new(&loaded.name, v.name(), &result.config, &rc.train, &result.summary);
        let dir = rc.out.join(v.name());
        create_dir(&dir)?;
        write(&dir.join("metrics.json"), report.to_json()?)?;
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            v.name(),
            report.mean_mse,
            report.std_mse,
            report.mean_mae,
            report.std_mae,
            report.param_count.total
        );
    }
    write(&rc.out.join("ablation.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_period(args: &CommonArgs) -> anyhow::Result<()> {
    let rc = args.resolve()?;
    let loaded = load(&rc)?;
    let est = estimate_period(&loaded.raw, train_len(&loaded), rc.max_lag)?;
    println!("p={}", est.period);
    println!("acf_value={}", est.acf_value);
    print!("{}", est.candidates_csv());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    if args.chunk_vs_point {
        let mut exp = match &args.config {
            Some(p) => {
                if !p.exists() {
                    return Err(CmosError::FileNotFound(p.clone()).into());
                }
                serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?
            }
            None => BurstExperiment::default(),
        };
        if let Some(s) = &args.seeds {
            exp.train.seeds = s.clone();
        }
        if let Some(e) = args.epochs {
            exp.train.epochs = e;
        }
        let result = chunk_vs_point_experiment(&exp)?;
        create_dir(&args.out)?;
        write(&args.out.join("experiment.json"), serde_json::to_string_pretty(&exp)?)?;
        write(&args.out.join("chunk_vs_point.json"), serde_json::to_string_pretty(&result)?)?;
        println!("variant,mean_mse,mean_mae");
        println!("chunk,{},{}", result.chunk.mean_mse, result.chunk.mean_mae);
        println!("point,{},{}", result.point.mean_mse, result.point.mean_mae);
        return Ok(());
    }
    let phases: Vec<f64> = (0..args.channels)
        .map(|n| 2.0 * std::f64::consts::PI * n as f64 / args.channels.max(1) as f64)
        .collect();
    let base = gen_sine(args.length, args.period, args.amplitude, &phases)?;
    let ds = match args.kind.as_str() {
        "sine" => base,
        "gaussian" => add_gaussian_noise(&base, 0.0, args.noise_sigma, args.seed)?,
        "burst" => {
            let spec = BurstSpec {
                threshold: args.threshold,
                scale: args.gpd_scale,
                shape: args.gpd_shape,
                lambda: args.lambda,
            };
            add_burst_noise(&base, &spec, args.seed)?
        }
        other => bail!("unknown synth kind '{other}' (sine, gaussian, burst)"),
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    ds.write_csv(&args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_theorem(args: &TheoremArgs) -> anyhow::Result<()> {
    let fuzz = averaging_theorem_fuzz(args.trials, 16, args.seed);
    println!(
        "averaging: trials={} violations={} equality_cases={} characterization_mismatches={}",
        fuzz.trials, fuzz.violations, fuzz.equality_trials, fuzz.equality_mismatches
    );
    let grad = gradient_check(args.instances, args.seed)?;
    println!(
        "gradient: instances={} parameters={} max_rel_error={:e}",
        grad.instances, grad.parameters_checked, grad.max_rel_error
    );
    if fuzz.violations > 0 || fuzz.equality_mismatches > 0 {
        bail!("averaging inequality check failed");
    }
    if grad.max_rel_error >= 1e-4 {
        bail!("gradient check failed: {}", grad.worst);
    }
    Ok(())
}

/// Parses `argv` and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Period(a) => cmd_period(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Theorem(a) => cmd_theorem(a),
    }
}
