//! The CMoS network: reversible instance normalization, per-channel
//! aggregation, a shared weight allocator, softmax correlation mixing and the
//! hand-derived backward pass.

mod checkpoint;
mod forward;
mod mixing;
mod norm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CmosError, Result};
use crate::periodicity::{self, InjectionMode};

pub use checkpoint::Checkpoint;
pub use forward::{forward, loss, loss_and_grad, Forecast};
pub use mixing::{aggregate, allocate, mixing_weights, MixWeights};
pub use norm::{denormalize, normalize, NormStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStrategy {
    /// `K` shared matrices blended per channel by the softmax gate.
    CorrelationMixing,
    /// One private matrix per channel; no aggregator or allocator.
    PrivateLine,
}

impl ChannelStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelStrategy::CorrelationMixing => "correlation_mixing",
            ChannelStrategy::PrivateLine => "private_line",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicityInjection {
    pub period: usize,
    #[serde(default)]
    pub inclusive: bool,
}

impl PeriodicityInjection {
    pub fn mode(&self) -> InjectionMode {
        if self.inclusive {
            InjectionMode::Inclusive
        } else {
            InjectionMode::Strict
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmosConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub chunk_size: usize,
    pub experts: usize,
    pub kernel_size: usize,
    pub channels: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub injection: Option<PeriodicityInjection>,
    #[serde(default = "default_strategy")]
    pub strategy: ChannelStrategy,
}

fn default_eps() -> f64 {
    1e-5
}

fn default_strategy() -> ChannelStrategy {
    ChannelStrategy::CorrelationMixing
}

impl CmosConfig {
    pub fn new(lookback: usize, horizon: usize, chunk_size: usize, experts: usize, kernel_size: usize, channels: usize) -> Self {
        Self {
            lookback,
            horizon,
            chunk_size,
            experts,
            kernel_size,
            channels,
            eps: default_eps(),
            injection: None,
            strategy: ChannelStrategy::CorrelationMixing,
        }
    }

    pub fn with_injection(mut self, period: usize, inclusive: bool) -> Self {
        self.injection = Some(PeriodicityInjection { period, inclusive });
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CmosError::InvalidConfig(m));
        if self.lookback == 0 || self.horizon == 0 || self.channels == 0 {
            return bad("L, H and N must be positive".into());
        }
        if self.chunk_size == 0 || self.lookback % self.chunk_size != 0 {
            return bad(format!("chunk size {} does not divide L={}", self.chunk_size, self.lookback));
        }
        if self.horizon % self.chunk_size != 0 {
            return bad(format!("chunk size {} does not divide H={}", self.chunk_size, self.horizon));
        }
        if self.experts == 0 {
            return bad("K must be at least 1".into());
        }
        if self.strategy == ChannelStrategy::CorrelationMixing {
            let c = self.kernel_size;
            if c == 0 || c % 2 != 0 {
                return bad(format!("kernel size {c} must be even and positive"));
            }
            if c > self.lookback || (2 * self.lookback) % c != 0 {
                return bad(format!("kernel size {c} must divide 2L={} and not exceed L", 2 * self.lookback));
            }
        }
        if !(self.eps >= 0.0) {
            return bad("eps must be nonnegative".into());
        }
        if let Some(pi) = &self.injection {
            if pi.period == 0 || pi.period % self.chunk_size != 0 {
                return bad(format!("chunk size {} does not divide period {}", self.chunk_size, pi.period));
            }
            if pi.period > self.lookback {
                return bad(format!("period {} exceeds L={}", pi.period, self.lookback));
            }
        }
        Ok(())
    }

    /// `L/S`
    pub fn in_chunks(&self) -> usize {
        self.lookback / self.chunk_size
    }

    /// `H/S`
    pub fn out_chunks(&self) -> usize {
        self.horizon / self.chunk_size
    }

    /// Length of the aggregated summary, `(2L − c)/c`.
    pub fn summary_len(&self) -> usize {
        match self.strategy {
            ChannelStrategy::CorrelationMixing => (2 * self.lookback - self.kernel_size) / self.kernel_size,
            ChannelStrategy::PrivateLine => 0,
        }
    }

    /// Number of correlation matrices actually stored.
    pub fn n_matrices(&self) -> usize {
        match self.strategy {
            ChannelStrategy::CorrelationMixing => self.experts,
            ChannelStrategy::PrivateLine => self.channels,
        }
    }

    pub fn gated(&self) -> bool {
        self.strategy == ChannelStrategy::CorrelationMixing
    }
}

/// All trainable parameters, each group stored flat and row-major.
///
/// - `theta`: `[matrix][out_chunk][in_chunk]`
/// - `bias`: `[matrix][out_chunk][offset]`
/// - `kernels`: `[channel][tap]`
/// - `allocator`: `[summary_index][expert]`
#[derive(Debug, Clone, PartialEq)]
pub struct CmosParams {
    pub theta: Vec<f64>,
    pub bias: Vec<f64>,
    pub kernels: Vec<f64>,
    pub allocator: Vec<f64>,
    matrix_len: usize,
    bias_len: usize,
    kernel_len: usize,
    experts: usize,
}

impl CmosParams {
    pub fn zeros(cfg: &CmosConfig) -> Self {
        let m = cfg.n_matrices();
        let matrix_len = cfg.out_chunks() * cfg.in_chunks();
        let bias_len = cfg.horizon;
        let (kernel_len, kernels, allocator, experts) = if cfg.gated() {
            (
                cfg.kernel_size,
                vec![0.0; cfg.channels * cfg.kernel_size],
                vec![0.0; cfg.summary_len() * cfg.experts],
                cfg.experts,
            )
        } else {
            (0, Vec::new(), Vec::new(), 1)
        };
        Self {
            theta: vec![0.0; m * matrix_len],
            bias: vec![0.0; m * bias_len],
            kernels,
            allocator,
            matrix_len,
            bias_len,
            kernel_len,
            experts,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            theta: vec![0.0; self.theta.len()],
            bias: vec![0.0; self.bias.len()],
            kernels: vec![0.0; self.kernels.len()],
            allocator: vec![0.0; self.allocator.len()],
            ..*self
        }
    }

    pub fn n_matrices(&self) -> usize {
        self.theta.len() / self.matrix_len.max(1)
    }

    pub fn matrix(&self, k: usize) -> &[f64] {
        &self.theta[k * self.matrix_len..(k + 1) * self.matrix_len]
    }

    pub fn matrix_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.theta[k * self.matrix_len..(k + 1) * self.matrix_len]
    }

    pub fn bias_block(&self, k: usize) -> &[f64] {
        &self.bias[k * self.bias_len..(k + 1) * self.bias_len]
    }

    pub fn kernel(&self, n: usize) -> &[f64] {
        &self.kernels[n * self.kernel_len..(n + 1) * self.kernel_len]
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    /// Parameter groups in checkpoint order.
    pub fn segments(&self) -> [&[f64]; 4] {
        [&self.theta, &self.bias, &self.kernels, &self.allocator]
    }

    pub fn segments_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.theta, &mut self.bias, &mut self.kernels, &mut self.allocator]
    }

    pub fn len(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.theta
            .iter()
            .chain(&self.bias)
            .chain(&self.kernels)
            .chain(&self.allocator)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.theta
            .iter_mut()
            .chain(self.bias.iter_mut())
            .chain(self.kernels.iter_mut())
            .chain(self.allocator.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(CmosError::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        for (p, v) in self.iter_mut().zip(flat) {
            *p = *v;
        }
        Ok(())
    }

    /// Adds `other` elementwise.
    pub fn accumulate(&mut self, other: &CmosParams) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
    }

    /// Location of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let names = ["theta", "bias", "kernels", "allocator"];
        for (name, seg) in names.iter().zip(self.segments()) {
            if let Some(i) = seg.iter().position(|v| !v.is_finite()) {
                return Some(format!("{name}[{i}]"));
            }
        }
        None
    }
}

fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for v in out {
        *v = rng.random_range(-bound..bound);
    }
}

/// Random initialization; deterministic in `seed`. When periodicity injection
/// is configured the first matrix (every matrix for private-line models) is
/// zeroed and then injected.
pub fn init_params(cfg: &CmosConfig, seed: u64) -> Result<CmosParams> {
    cfg.validate()?;
    let mut p = CmosParams::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fill_uniform(&mut rng, &mut p.theta, 1.0 / (cfg.in_chunks() as f64).sqrt());
    if cfg.gated() {
        fill_uniform(&mut rng, &mut p.allocator, 1.0 / (cfg.summary_len() as f64).sqrt());
        fill_uniform(&mut rng, &mut p.kernels, 1.0 / (cfg.kernel_size as f64).sqrt());
    }
    if let Some(pi) = &cfg.injection {
        let targets = if cfg.gated() { 1 } else { p.n_matrices() };
        for k in 0..targets {
            let m = p.matrix_mut(k);
            m.iter_mut().for_each(|v| *v = 0.0);
            periodicity::inject_in_place(
                m,
                pi.period,
                cfg.chunk_size,
                cfg.lookback,
                cfg.horizon,
                pi.mode(),
            )?;
        }
    }
    Ok(p)
}
