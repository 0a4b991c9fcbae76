//! Test metrics, ablation variants, parameter accounting, noise-sensitivity
//! checks and interpretability exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{PreparedData, Split, WindowBatch};
use crate::error::{CmosError, Result};
use crate::model::{forward, loss, loss_and_grad, ChannelStrategy, CmosConfig, CmosParams};
use crate::train::{multi_seed, SeedSummary, TrainConfig};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// Error at each lead time `1..=H`.
    pub mse_by_step: Vec<f64>,
    pub mae_by_step: Vec<f64>,
    pub windows: usize,
}

impl Metrics {
    /// Unweighted mean over several horizons.
    pub fn average(runs: &[Metrics]) -> Option<(f64, f64)> {
        if runs.is_empty() {
            return None;
        }
        let n = runs.len() as f64;
        Some((
            runs.iter().map(|m| m.mse).sum::<f64>() / n,
            runs.iter().map(|m| m.mae).sum::<f64>() / n,
        ))
    }
}

/// MSE/MAE over every stride-1 window of `split`, on the standardized scale.
pub fn evaluate(params: &CmosParams, cfg: &CmosConfig, data: &PreparedData, split: Split) -> Result<Metrics> {
    evaluate_batched(params, cfg, data, split, EVAL_BATCH)
}

/// [`evaluate`] with an explicit batch size; the result does not depend on it.
pub fn evaluate_batched(
    params: &CmosParams,
    cfg: &CmosConfig,
    data: &PreparedData,
    split: Split,
    batch_size: usize,
) -> Result<Metrics> {
    let h = cfg.horizon;
    let mut se = vec![0.0; h];
    let mut ae = vec![0.0; h];
    let mut windows = 0usize;
    for batch in data.batches(split, batch_size)? {
        let fc = forward(&batch, params, cfg)?;
        for (pred, truth) in fc.prediction.chunks(h).zip(batch.target.chunks(h)) {
            for step in 0..h {
                let d = pred[step] - truth[step];
                se[step] += d * d;
                ae[step] += d.abs();
            }
        }
        windows += batch.batch_size();
    }
    let per_step = (windows * cfg.channels) as f64;
    let mse_by_step: Vec<f64> = se.iter().map(|v| v / per_step).collect();
    let mae_by_step: Vec<f64> = ae.iter().map(|v| v / per_step).collect();
    Ok(Metrics {
        mse: se.iter().sum::<f64>() / (per_step * h as f64),
        mae: ae.iter().sum::<f64>() / (per_step * h as f64),
        mse_by_step,
        mae_by_step,
        windows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub correlation_part: usize,
    pub aggregators_part: usize,
    pub allocator_part: usize,
    pub bias_part: usize,
    /// Correlation + aggregators + allocator; biases excluded.
    pub total: usize,
    pub total_with_bias: usize,
}

pub fn count_params(cfg: &CmosConfig) -> ParamCount {
    let per_matrix = cfg.in_chunks() * cfg.out_chunks();
    let (correlation_part, aggregators_part, allocator_part, bias_part) = match cfg.strategy {
        ChannelStrategy::CorrelationMixing => (
            cfg.experts * per_matrix,
            cfg.channels * cfg.kernel_size,
            cfg.summary_len() * cfg.experts,
            cfg.experts * cfg.horizon,
        ),
        ChannelStrategy::PrivateLine => (cfg.channels * per_matrix, 0, 0, cfg.channels * cfg.horizon),
    };
    let total = correlation_part + aggregators_part + allocator_part;
    ParamCount {
        correlation_part,
        aggregators_part,
        allocator_part,
        bias_part,
        total,
        total_with_bias: total + bias_part,
    }
}

/// Output variance of a linear model under isotropic Gaussian input noise:
/// `σ²·‖θ‖²`.
pub fn noise_sensitivity(theta: &[f64], sigma: f64) -> f64 {
    sigma * sigma * theta.iter().map(|t| t * t).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingCheck {
    /// `θ* = Σαᵢθᵢ / Σαᵢ`
    pub averaged: f64,
    /// `θ*²`
    pub lhs: f64,
    /// `Σθᵢ²`
    pub rhs: f64,
    pub holds: bool,
    /// `lhs == rhs` up to rounding.
    pub equality: bool,
}

/// Relative slack for rounding in the weighted mean.
const AVERAGING_RTOL: f64 = 1e-12;

/// Compares the squared weighted mean of `theta` with its squared norm.
pub fn check_averaging_theorem(theta: &[f64], alpha: &[f64]) -> Result<AveragingCheck> {
    if theta.len() != alpha.len() || theta.is_empty() {
        return Err(CmosError::ShapeMismatch(format!(
            "{} weights for {} coefficients",
            alpha.len(),
            theta.len()
        )));
    }
    if alpha.iter().any(|a| !(*a >= 0.0)) {
        return Err(CmosError::InvalidConfig("averaging weights must be nonnegative".into()));
    }
    let total: f64 = alpha.iter().sum();
    if total == 0.0 {
        return Err(CmosError::ZeroWeights);
    }
    let averaged = theta.iter().zip(alpha).map(|(t, a)| t * a).sum::<f64>() / total;
    let lhs = averaged * averaged;
    let rhs: f64 = theta.iter().map(|t| t * t).sum();
    let slack = AVERAGING_RTOL * rhs.max(f64::MIN_POSITIVE);
    Ok(AveragingCheck {
        averaged,
        lhs,
        rhs,
        holds: lhs <= rhs + slack,
        equality: (lhs - rhs).abs() <= slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoChunk,
    NoCormix,
    NoPi,
    OneBus,
    PrivateLine,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::NoChunk,
        AblationVariant::NoCormix,
        AblationVariant::NoPi,
        AblationVariant::OneBus,
        AblationVariant::PrivateLine,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoChunk => "no_chunk",
            AblationVariant::NoCormix => "no_cormix",
            AblationVariant::NoPi => "no_pi",
            AblationVariant::OneBus => "one_bus",
            AblationVariant::PrivateLine => "private_line",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn apply(&self, base: &CmosConfig) -> CmosConfig {
        let mut cfg = base.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoChunk => cfg.chunk_size = 1,
            AblationVariant::NoCormix | AblationVariant::OneBus => cfg.experts = 1,
            AblationVariant::NoPi => cfg.injection = None,
            AblationVariant::PrivateLine => {
                cfg.experts = 1;
                cfg.strategy = ChannelStrategy::PrivateLine;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub config: CmosConfig,
    pub summary: SeedSummary,
    pub param_count: ParamCount,
}

/// Trains and tests `variant` with the seeds and protocol of `train_cfg`.
pub fn run_ablation(
    data: &PreparedData,
    base_cfg: &CmosConfig,
    variant: AblationVariant,
    train_cfg: &TrainConfig,
) -> Result<AblationResult> {
    let config = variant.apply(base_cfg);
    config.validate()?;
    let summary = multi_seed(data, &config, train_cfg)?;
    Ok(AblationResult {
        variant,
        param_count: count_params(&config),
        config,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub best_epoch: Option<usize>,
}

/// The metrics report written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub variant: String,
    #[serde(rename = "L")]
    pub lookback: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub chunk_size: usize,
    #[serde(rename = "K")]
    pub experts: usize,
    #[serde(rename = "c")]
    pub kernel_size: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
    pub param_count: ParamCount,
    /// Best validation epoch of each seed, in seed order.
    pub best_epoch: Vec<Option<usize>>,
    pub lr: f64,
    pub pi_period: Option<usize>,
}

impl MetricsReport {
    pub fn new(dataset: &str, variant: &str, cfg: &CmosConfig, train_cfg: &TrainConfig, summary: &SeedSummary) -> Self {
        Self {
            dataset: dataset.to_string(),
            variant: variant.to_string(),
            lookback: cfg.lookback,
            horizon: cfg.horizon,
            chunk_size: cfg.chunk_size,
            experts: cfg.experts,
            kernel_size: cfg.kernel_size,
            seeds: summary.per_seed.iter().map(|s| s.seed).collect(),
            per_seed: summary
                .per_seed
                .iter()
                .map(|s| SeedMetrics {
                    seed: s.seed,
                    mse: s.mse,
                    mae: s.mae,
                    best_epoch: s.best_epoch,
                })
                .collect(),
            mean_mse: summary.mean_mse,
            std_mse: summary.std_mse,
            mean_mae: summary.mean_mae,
            std_mae: summary.std_mae,
            param_count: count_params(cfg),
            best_epoch: summary.per_seed.iter().map(|s| s.best_epoch).collect(),
            lr: train_cfg.lr,
            pi_period: cfg.injection.map(|p| p.period),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpretabilityExport {
    pub matrix_files: Vec<PathBuf>,
    pub allocation_file: Option<PathBuf>,
    /// Mean mixing weights per channel (`N × K`), absent for private-line models.
    pub allocation: Option<Vec<Vec<f64>>>,
}

fn matrix_csv(matrix: &[f64], in_chunks: usize) -> String {
    let mut out = (1..=in_chunks)
        .map(|j| format!("lookback_chunk_{j}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in matrix.chunks(in_chunks) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn matrix_svg(matrix: &[f64], in_chunks: usize) -> String {
    const CELL: usize = 12;
    let rows = matrix.len() / in_chunks.max(1);
    let max = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n",
        in_chunks * CELL,
        rows * CELL
    );
    for (idx, v) in matrix.iter().enumerate() {
        // darker = larger magnitude
        let shade = 255 - ((v.abs() / max) * 255.0).round() as u8;
        let _ = writeln!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({shade},{shade},{shade})\"/>",
            (idx % in_chunks) * CELL,
            (idx / in_chunks) * CELL
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean mixing weights of each channel over all windows of `split`.
pub fn mean_allocation(params: &CmosParams, cfg: &CmosConfig, data: &PreparedData, split: Split) -> Result<Option<Vec<Vec<f64>>>> {
    if !cfg.gated() {
        return Ok(None);
    }
    let k = cfg.experts;
    let mut sums = vec![vec![0.0; k]; cfg.channels];
    let mut count = 0usize;
    for batch in data.batches(split, EVAL_BATCH)? {
        let fc = forward(&batch, params, cfg)?;
        let mix = fc.mix.expect("gated model returns weights");
        for u in 0..batch.batch_size() * cfg.channels {
            for (s, w) in sums[u % cfg.channels].iter_mut().zip(mix.row(u)) {
                *s += w;
            }
        }
        count += batch.batch_size();
    }
    for row in &mut sums {
        row.iter_mut().for_each(|v| *v /= count as f64);
    }
    Ok(Some(sums))
}

/// Writes `theta_<k>.csv` (and optionally `theta_<k>.svg`) per matrix and
/// `allocation.csv` with per-channel mean mixing weights over the test split.
pub fn export_interpretability(
    params: &CmosParams,
    cfg: &CmosConfig,
    data: &PreparedData,
    dir: &Path,
    svg: bool,
) -> Result<InterpretabilityExport> {
    fs::create_dir_all(dir).map_err(|e| CmosError::io(dir, e))?;
    let mut matrix_files = Vec::new();
    for k in 0..params.n_matrices() {
        let path = dir.join(format!("theta_{k}.csv"));
        fs::write(&path, matrix_csv(params.matrix(k), cfg.in_chunks())).map_err(|e| CmosError::io(&path, e))?;
        if svg {
            let p = dir.join(format!("theta_{k}.svg"));
            fs::write(&p, matrix_svg(params.matrix(k), cfg.in_chunks())).map_err(|e| CmosError::io(&p, e))?;
        }
        matrix_files.push(path);
    }
    let allocation = mean_allocation(params, cfg, data, Split::Test)?;
    let allocation_file = match &allocation {
        Some(rows) => {
            let path = dir.join("allocation.csv");
            let mut out = String::from("channel");
            for k in 0..cfg.experts {
                let _ = write!(out, ",matrix_{k}");
            }
            out.push('\n');
            for (name, row) in data.dataset.channel_names().iter().zip(rows) {
                out.push_str(name);
                for w in row {
                    let _ = write!(out, ",{w}");
                }
                out.push('\n');
            }
            fs::write(&path, out).map_err(|e| CmosError::io(&path, e))?;
            Some(path)
        }
        None => None,
    };
    Ok(InterpretabilityExport {
        matrix_files,
        allocation_file,
        allocation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub parameters_checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Finite-difference step for [`gradient_check`].
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient is
/// ~0 are judged on absolute error.
pub const FD_REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_REL_FLOOR)
}

/// A random tiny configuration, parameters and batch for gradient checking.
pub fn random_tiny_instance(rng: &mut ChaCha8Rng) -> (CmosConfig, CmosParams, WindowBatch) {
    let chunk_size = [1usize, 2, 4][rng.random_range(0..3)];
    let lookback = chunk_size * rng.random_range(2..5usize) * 2;
    let horizon = chunk_size * rng.random_range(1..4usize);
    let kernel_size = if lookback % 4 == 0 && rng.random_bool(0.5) { 4 } else { 2 };
    let experts = rng.random_range(1..4usize);
    let channels = rng.random_range(1..4usize);
    let batch = rng.random_range(1..4usize);
    let mut cfg = CmosConfig::new(lookback, horizon, chunk_size, experts, kernel_size, channels);
    if rng.random_bool(0.15) {
        cfg.strategy = ChannelStrategy::PrivateLine;
    }
    let mut params = CmosParams::zeros(&cfg);
    for v in params.iter_mut() {
        *v = rng.random_range(-0.8..0.8);
    }
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let lb = (0..batch * channels * lookback).map(|_| normal(rng)).collect();
    let tg = (0..batch * channels * horizon).map(|_| normal(rng)).collect();
    let wb = WindowBatch::from_parts(lb, tg, batch, channels, lookback, horizon).expect("consistent shapes");
    (cfg, params, wb)
}

/// Analytic gradients against central finite differences of [`loss`].
pub fn gradient_check(instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_error = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for inst in 0..instances {
        let (cfg, params, batch) = random_tiny_instance(&mut rng);
        let (_, grad) = loss_and_grad(&batch, &params, &cfg)?;
        let flat = params.to_flat();
        let analytic = grad.to_flat();
        let mut probe = params.clone();
        for idx in 0..flat.len() {
            let mut shifted = flat.clone();
            shifted[idx] = flat[idx] + FD_STEP;
            probe.set_flat(&shifted)?;
            let up = loss(&batch, &probe, &cfg)?;
            shifted[idx] = flat[idx] - FD_STEP;
            probe.set_flat(&shifted)?;
            let down = loss(&batch, &probe, &cfg)?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[idx], numeric);
            checked += 1;
            if err > max_rel_error {
                max_rel_error = err;
                worst = format!(
                    "instance {inst} param {idx}: analytic {:e}, numeric {numeric:e}",
                    analytic[idx]
                );
            }
        }
    }
    Ok(GradCheckReport {
        instances,
        parameters_checked: checked,
        max_rel_error,
        worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremFuzzReport {
    pub trials: usize,
    pub violations: usize,
    pub equality_trials: usize,
    /// Trials whose equality flag disagrees with the exact characterization.
    pub equality_mismatches: usize,
}

/// Whether `θ*² = Σθᵢ²` must hold exactly: all θ zero, or a single nonzero
/// weight sitting on the only nonzero coefficient.
pub fn equality_expected(theta: &[f64], alpha: &[f64]) -> bool {
    if theta.iter().all(|t| *t == 0.0) {
        return true;
    }
    let nonzero: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
    nonzero.len() == 1 && theta.iter().enumerate().all(|(i, t)| i == nonzero[0] || *t == 0.0)
}

/// Fuzzes [`check_averaging_theorem`] with dense, sparse and degenerate draws.
pub fn averaging_theorem_fuzz(trials: usize, max_len: usize, seed: u64) -> TheoremFuzzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut equality_trials = 0;
    let mut equality_mismatches = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..=max_len);
        let mut theta: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut alpha: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..5.0) })
            .collect();
        match rng.random_range(0..4) {
            0 => {
                // one active weight
                let k = rng.random_range(0..n);
                alpha.iter_mut().for_each(|a| *a = 0.0);
                alpha[k] = rng.random_range(0.1..5.0);
                if rng.random_bool(0.5) {
                    theta.iter_mut().enumerate().for_each(|(i, t)| {
                        if i != k {
                            *t = 0.0
                        }
                    });
                }
            }
            1 => theta.iter_mut().for_each(|t| *t = rng.random_range(-1.4f64..1.4).round()),
            _ => {}
        }
        if alpha.iter().all(|a| *a == 0.0) {
            alpha[rng.random_range(0..n)] = 1.0;
        }
        let check = check_averaging_theorem(&theta, &alpha).expect("valid draw");
        if !check.holds {
            violations += 1;
        }
        if check.equality {
            equality_trials += 1;
        }
        if check.equality != equality_expected(&theta, &alpha) {
            equality_mismatches += 1;
        }
    }
    TheoremFuzzReport {
        trials,
        violations,
        equality_trials,
        equality_mismatches,
    }
}
