//! Synthetic series: sinusoids, Gaussian noise and sparse burst noise with
//! Generalized-Pareto magnitudes, plus the chunk-versus-point robustness run.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{prepare, Dataset, SplitSpec};
use crate::error::{CmosError, Result};
use crate::model::CmosConfig;
use crate::train::{multi_seed, SeedSummary, TrainConfig};

/// `amplitude · sin(2πt/period + phases[n])` for `t in 0..len`, one channel per phase.
pub fn gen_sine(len: usize, period: f64, amplitude: f64, phases: &[f64]) -> Result<Dataset> {
    if !(period >= 2.0) || (len as f64) < 2.0 * period {
        return Err(CmosError::InvalidConfig(format!(
            "sine needs period >= 2 and T >= 2·period (period={period}, T={len})"
        )));
    }
    let columns: Vec<Vec<f64>> = phases
        .iter()
        .map(|ph| {
            (0..len)
                .map(|t| amplitude * (2.0 * PI * t as f64 / period + ph).sin())
                .collect()
        })
        .collect();
    let names = (0..phases.len()).map(|n| format!("sine_{n}")).collect();
    Ok(Dataset::from_columns("sine", names, &columns)?.with_sample_interval("1 step"))
}

pub fn add_gaussian_noise(dataset: &Dataset, mu: f64, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !mu.is_finite() {
        return Err(CmosError::InvalidConfig(format!("gaussian noise needs finite mu and sigma >= 0 (mu={mu}, sigma={sigma})")));
    }
    if sigma == 0.0 && mu == 0.0 {
        return Ok(dataset.clone());
    }
    let normal = Normal::new(mu, sigma)
        .map_err(|e| CmosError::InvalidConfig(format!("gaussian noise (mu={mu}, sigma={sigma}): {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dataset.map_values(|_, _, v| v + normal.sample(&mut rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstSpec {
    /// Exceedance threshold `u` added to every burst.
    pub threshold: f64,
    pub scale: f64,
    pub shape: f64,
    /// Burst probability per channel and time step.
    pub lambda: f64,
}

impl Default for BurstSpec {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            scale: 1.0,
            shape: 0.2,
            lambda: 0.01,
        }
    }
}

impl BurstSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !(self.shape >= 0.0) || !(0.0..=1.0).contains(&self.lambda) || !self.threshold.is_finite() {
            return Err(CmosError::InvalidConfig(format!("invalid burst spec {self:?}")));
        }
        Ok(())
    }
}

/// GPD quantile function at `u ∈ [0, 1)`.
pub fn gpd_inverse_cdf(u: f64, scale: f64, shape: f64) -> f64 {
    if shape == 0.0 {
        -scale * (-u).ln_1p()
    } else {
        scale * ((1.0 - u).powf(-shape) - 1.0) / shape
    }
}

pub fn gpd_cdf(y: f64, scale: f64, shape: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if shape == 0.0 {
        1.0 - (-y / scale).exp()
    } else {
        1.0 - (1.0 + shape * y / scale).powf(-1.0 / shape)
    }
}

pub fn sample_gpd<R: Rng + ?Sized>(rng: &mut R, scale: f64, shape: f64) -> f64 {
    gpd_inverse_cdf(rng.random::<f64>(), scale, shape)
}

/// One injected burst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub row: usize,
    pub channel: usize,
    /// Signed value added to the series.
    pub value: f64,
}

/// Burst positions and values for a `len × channels` grid; independent
/// Bernoulli(λ) arrivals per cell, magnitude `u + y`, random sign.
pub fn burst_events(len: usize, channels: usize, spec: &BurstSpec, seed: u64) -> Result<Vec<Burst>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for row in 0..len {
        for channel in 0..channels {
            if rng.random_bool(spec.lambda) {
                let magnitude = spec.threshold + sample_gpd(&mut rng, spec.scale, spec.shape);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                out.push(Burst {
                    row,
                    channel,
                    value: sign * magnitude,
                });
            }
        }
    }
    Ok(out)
}

pub fn add_burst_noise(dataset: &Dataset, spec: &BurstSpec, seed: u64) -> Result<Dataset> {
    let events = burst_events(dataset.len(), dataset.n_channels(), spec, seed)?;
    let n = dataset.n_channels();
    let mut values = dataset.values().to_vec();
    for b in &events {
        values[b.row * n + b.channel] += b.value;
    }
    Ok(Dataset::new(dataset.name(), dataset.channel_names().to_vec(), values)?
        .with_sample_interval(dataset.sample_interval()))
}

/// Construction and model sizes for the chunk-versus-point comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstExperiment {
    pub len: usize,
    pub channels: usize,
    /// Each channel is the sum of one sinusoid per period, phase-shifted by channel.
    pub periods: Vec<f64>,
    pub amplitude: f64,
    pub burst: BurstSpec,
    pub noise_seed: u64,
    pub lookback: usize,
    pub horizon: usize,
    pub chunk_size: usize,
    pub experts: usize,
    pub kernel_size: usize,
    pub train: TrainConfig,
}

impl Default for BurstExperiment {
    fn default() -> Self {
        Self {
            len: 4000,
            channels: 3,
            periods: vec![24.0, 48.0],
            amplitude: 1.0,
            burst: BurstSpec::default(),
            noise_seed: 2024,
            lookback: 96,
            horizon: 48,
            chunk_size: 8,
            experts: 2,
            kernel_size: 8,
            train: TrainConfig {
                epochs: 30,
                patience: Some(5),
                ..TrainConfig::default()
            },
        }
    }
}

impl BurstExperiment {
    pub fn clean_series(&self) -> Result<Dataset> {
        if self.periods.is_empty() || self.channels == 0 {
            return Err(CmosError::InvalidConfig("burst experiment needs periods and channels".into()));
        }
        let phases: Vec<f64> = (0..self.channels)
            .map(|n| 2.0 * PI * n as f64 / self.channels as f64)
            .collect();
        let mut sum: Option<Dataset> = None;
        for (i, p) in self.periods.iter().enumerate() {
            let amp = self.amplitude / (i + 1) as f64;
            let part = gen_sine(self.len, *p, amp, &phases)?;
            sum = Some(match sum {
                None => part,
                Some(acc) => acc.map_values(|t, n, v| v + part.value(t, n)),
            });
        }
        Ok(sum.expect("periods nonempty"))
    }

    pub fn noisy_series(&self) -> Result<Dataset> {
        add_burst_noise(&self.clean_series()?, &self.burst, self.noise_seed)
    }

    pub fn config(&self, chunk_size: usize) -> CmosConfig {
        CmosConfig::new(
            self.lookback,
            self.horizon,
            chunk_size,
            self.experts,
            self.kernel_size,
            self.channels,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkVsPoint {
    pub chunk: SeedSummary,
    pub point: SeedSummary,
}

/// Trains the chunk-level (`S = experiment.chunk_size`) and point-level
/// (`S = 1`) models on the same burst-noised data and seeds; test targets
/// carry the bursts too.
pub fn chunk_vs_point_experiment(experiment: &BurstExperiment) -> Result<ChunkVsPoint> {
    if experiment.chunk_size <= 1 {
        return Err(CmosError::InvalidConfig("chunk-level model needs S > 1".into()));
    }
    let raw = experiment.noisy_series()?;
    let data = prepare(&raw, &SplitSpec::standard(), experiment.lookback, experiment.horizon)?;
    let chunk = multi_seed(&data, &experiment.config(experiment.chunk_size), &experiment.train)?;
    let point = multi_seed(&data, &experiment.config(1), &experiment.train)?;
    Ok(ChunkVsPoint { chunk, point })
}
