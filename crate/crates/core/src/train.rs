//! Training loop: MSE objective, AdamW with decoupled weight decay, StepLR,
//! validation-based checkpoint selection and multi-seed runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{shuffle_origins, PreparedData, Split, WindowBatches};
use crate::error::{CmosError, Result};
use crate::eval::{evaluate, Metrics};
use crate::model::{init_params, loss_and_grad, CmosConfig, CmosParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            step_size: 20,
            gamma: 0.75,
            epochs: 200,
            batch_size: 64,
            seeds: vec![1, 2, 3, 4, 5],
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CmosError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam eps must be positive");
        }
        if self.step_size == 0 || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("StepLR needs step_size > 0 and gamma in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive when set");
        }
        Ok(())
    }
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_same_len(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_same_len(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CmosError::ShapeMismatch(format!("{} vs {} elements", a.len(), b.len())));
    }
    Ok(())
}

/// AdamW moment accumulators, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: CmosParams,
    pub v: CmosParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &CmosParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// p ← p − lr·( m̂/(√v̂ + ε) + λ·p )
/// ```
pub fn adamw_step(
    params: &mut CmosParams,
    grads: &CmosParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(CmosError::ShapeMismatch("gradient and parameter shapes differ".into()));
    }
    if let Some(loc) = grads.first_non_finite() {
        return Err(CmosError::NonFiniteValue {
            what: "gradient",
            location: loc,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, wd, eps) = (cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.adam_eps);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for ((p, g), (m, v)) in params.iter_mut().zip(grads.iter()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    }
    Ok(())
}

/// `lr0 · gamma^⌊epoch / step_size⌋`
pub fn steplr(lr0: f64, epoch: usize, step_size: usize, gamma: f64) -> f64 {
    lr0 * gamma.powi((epoch / step_size.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

impl RunHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
        }
        out
    }

    pub fn val_loss_at(&self, epoch: usize) -> Option<f64> {
        self.epochs.iter().find(|r| r.epoch == epoch).map(|r| r.val_loss)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the lowest validation MSE.
    pub params: CmosParams,
    pub history: RunHistory,
    pub seed: u64,
}

/// Separates the shuffle stream from the initialization stream of one seed.
const SHUFFLE_STREAM: u64 = 0x5EED_5EED_5EED_5EED;

/// Trains from `init_params(cfg, seed)` for `train_cfg.epochs` epochs and
/// returns the checkpoint with minimal validation MSE. Epochs are numbered
/// from 1 in the history.
pub fn fit(data: &PreparedData, cfg: &CmosConfig, train_cfg: &TrainConfig, seed: u64) -> Result<FitResult> {
    fit_with(data, cfg, train_cfg, seed, |_, _| {})
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with(
    data: &PreparedData,
    cfg: &CmosConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord, &CmosParams),
) -> Result<FitResult> {
    cfg.validate()?;
    train_cfg.validate()?;
    if cfg.lookback != data.lookback || cfg.horizon != data.horizon || cfg.channels != data.dataset.n_channels() {
        return Err(CmosError::InvalidConfig(format!(
            "config (L={}, H={}, N={}) does not match prepared data (L={}, H={}, N={})",
            cfg.lookback,
            cfg.horizon,
            cfg.channels,
            data.lookback,
            data.horizon,
            data.dataset.n_channels()
        )));
    }
    let mut params = init_params(cfg, seed)?;
    let mut history = RunHistory::default();
    if train_cfg.epochs == 0 {
        return Ok(FitResult { params, history, seed });
    }
    let base_origins = data.origins(Split::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);
    let mut state = OptimizerState::new(&params);
    let mut best = params.clone();
    let mut since_best = 0usize;

    for epoch in 1..=train_cfg.epochs {
        let lr = steplr(train_cfg.lr, epoch - 1, train_cfg.step_size, train_cfg.gamma);
        let mut origins = base_origins.clone();
        shuffle_origins(&mut origins, &mut rng);
        let batches = WindowBatches::from_origins(
            &data.dataset,
            origins,
            cfg.lookback,
            cfg.horizon,
            train_cfg.batch_size,
        );
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, batch) in batches.enumerate() {
            let diverged = |loss: f64| CmosError::Diverged { epoch, batch: bi, loss };
            let (loss, grad) = match loss_and_grad(&batch, &params, cfg) {
                Ok(r) => r,
                Err(CmosError::NonFiniteValue { .. }) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            adamw_step(&mut params, &grad, &mut state, lr, train_cfg).map_err(|_| diverged(loss))?;
            loss_sum += loss * batch.batch_size() as f64;
            seen += batch.batch_size();
        }
        let val = evaluate(&params, cfg, data, Split::Val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: val.mse,
            lr,
        };
        log::debug!(
            "seed {seed} epoch {epoch}: train {:.6} val {:.6} lr {:.2e}",
            record.train_loss,
            record.val_loss,
            lr
        );
        on_epoch(&record, &params);
        if history.best_val_loss.is_none_or(|b| record.val_loss < b) {
            history.best_val_loss = Some(record.val_loss);
            history.best_epoch = Some(epoch);
            best.clone_from(&params);
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.epochs.push(record);
        if train_cfg.patience.is_some_and(|p| since_best >= p) {
            log::info!("seed {seed}: early stop after epoch {epoch}");
            break;
        }
    }
    Ok(FitResult {
        params: best,
        history,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub per_seed: Vec<SeedOutcome>,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SeedSummary {
    pub fn from_outcomes(per_seed: Vec<SeedOutcome>) -> Self {
        let mses: Vec<f64> = per_seed.iter().map(|o| o.mse).collect();
        let maes: Vec<f64> = per_seed.iter().map(|o| o.mae).collect();
        let (mean_mse, std_mse) = mean_std(&mses);
        let (mean_mae, std_mae) = mean_std(&maes);
        Self {
            per_seed,
            mean_mse,
            std_mse,
            mean_mae,
            std_mae,
        }
    }
}

/// One fitted seed with its test metrics.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub fit: FitResult,
    pub test: Metrics,
}

/// Fits and tests every seed in `train_cfg.seeds`, in order.
pub fn multi_seed_runs(data: &PreparedData, cfg: &CmosConfig, train_cfg: &TrainConfig) -> Result<Vec<SeedRun>> {
    if train_cfg.seeds.is_empty() {
        return Err(CmosError::InvalidConfig("at least one seed is required".into()));
    }
    train_cfg
        .seeds
        .iter()
        .map(|&seed| {
            let fit = fit(data, cfg, train_cfg, seed)?;
            let test = evaluate(&fit.params, cfg, data, Split::Test)?;
            Ok(SeedRun { fit, test })
        })
        .collect()
}

pub fn summarize(runs: &[SeedRun]) -> SeedSummary {
    SeedSummary::from_outcomes(
        runs.iter()
            .map(|r| SeedOutcome {
                seed: r.fit.seed,
                mse: r.test.mse,
                mae: r.test.mae,
                best_epoch: r.fit.history.best_epoch,
                best_val_loss: r.fit.history.best_val_loss,
            })
            .collect(),
    )
}

pub fn multi_seed(data: &PreparedData, cfg: &CmosConfig, train_cfg: &TrainConfig) -> Result<SeedSummary> {
    Ok(summarize(&multi_seed_runs(data, cfg, train_cfg)?))
}
