#![allow(dead_code)]

use cmos::data::WindowBatch;
use cmos::model::{ChannelStrategy, CmosConfig, CmosParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forecast of one (window, channel) computed index by index from the model
/// definition, with no shared code from the library's forward pass.
pub fn oracle_channel(x: &[f64], n: usize, params: &CmosParams, cfg: &CmosConfig) -> Vec<f64> {
    let l = cfg.lookback;
    let h = cfg.horizon;
    let s = cfg.chunk_size;
    let mu = x.iter().sum::<f64>() / l as f64;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / l as f64;
    let scale = (var + cfg.eps).sqrt();
    let xn: Vec<f64> = x
        .iter()
        .map(|v| if scale > 0.0 { (v - mu) / scale } else { 0.0 })
        .collect();

    let in_chunks = l / s;
    let out_chunks = h / s;
    let matrix_len = in_chunks * out_chunks;
    let expert = |idx: usize| -> Vec<f64> {
        let mut out = vec![0.0; h];
        for i in 0..out_chunks {
            for off in 0..s {
                let mut acc = 0.0;
                for j in 0..in_chunks {
                    acc += params.theta[idx * matrix_len + i * in_chunks + j] * xn[j * s + off];
                }
                out[i * s + off] = acc + params.bias[idx * h + i * s + off];
            }
        }
        out
    };

    let yn = match cfg.strategy {
        ChannelStrategy::PrivateLine => expert(n),
        ChannelStrategy::CorrelationMixing => {
            let c = cfg.kernel_size;
            let m_len = (2 * l - c) / c;
            let z: Vec<f64> = (0..m_len)
                .map(|m| (0..c).map(|u| params.kernels[n * c + u] * xn[m * c / 2 + u]).sum())
                .collect();
            let k = cfg.experts;
            let gamma: Vec<f64> = (0..k)
                .map(|e| (0..m_len).map(|m| z[m] * params.allocator[m * k + e]).sum())
                .collect();
            let denom: f64 = gamma.iter().map(|g| g.exp()).sum();
            let mut y = vec![0.0; h];
            for e in 0..k {
                let w = gamma[e].exp() / denom;
                for (yt, v) in y.iter_mut().zip(expert(e)) {
                    *yt += w * v;
                }
            }
            y
        }
    };
    yn.iter().map(|v| v * scale + mu).collect()
}

/// Oracle forecasts for a whole batch, laid out `[b][n][h]`.
pub fn oracle_forward(batch: &WindowBatch, params: &CmosParams, cfg: &CmosConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for b in 0..batch.batch_size() {
        for n in 0..batch.channels {
            out.extend(oracle_channel(batch.lookback_of(b, n), n, params, cfg));
        }
    }
    out
}

pub fn oracle_loss(batch: &WindowBatch, params: &CmosParams, cfg: &CmosConfig) -> f64 {
    let pred = oracle_forward(batch, params, cfg);
    pred.iter().zip(&batch.target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_params(cfg: &CmosConfig, rng: &mut ChaCha8Rng, bound: f64) -> CmosParams {
    let mut p = CmosParams::zeros(cfg);
    for v in p.iter_mut() {
        *v = rng.random_range(-bound..bound);
    }
    p
}

pub fn random_batch(cfg: &CmosConfig, batch: usize, rng: &mut ChaCha8Rng) -> WindowBatch {
    let lb = (0..batch * cfg.channels * cfg.lookback).map(|_| normal(rng)).collect();
    let tg = (0..batch * cfg.channels * cfg.horizon).map(|_| normal(rng)).collect();
    WindowBatch::from_parts(lb, tg, batch, cfg.channels, cfg.lookback, cfg.horizon).unwrap()
}

/// A random small valid configuration.
pub fn random_tiny_config(rng: &mut ChaCha8Rng) -> CmosConfig {
    let s = [1usize, 2, 4][rng.random_range(0..3)];
    let l = s * 2 * rng.random_range(2..5usize);
    let h = s * rng.random_range(1..4usize);
    let c = if l % 4 == 0 && rng.random_bool(0.5) { 4 } else { 2 };
    let mut cfg = CmosConfig::new(l, h, s, rng.random_range(1..4), c, rng.random_range(1..4));
    if rng.random_bool(0.15) {
        cfg.strategy = ChannelStrategy::PrivateLine;
    }
    cfg
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Writes a line to the real stdout so it survives test output capture.
pub fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

pub const FD_STEP: f64 = 1e-4;

/// Largest relative error between analytic gradients and central differences
/// of the oracle loss over `instances` random tiny problems.
pub fn fd_gradient_check(instances: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..instances {
        let cfg = random_tiny_config(&mut rng);
        let params = random_params(&cfg, &mut rng, 0.8);
        let b = rng.random_range(1..4);
        let batch = random_batch(&cfg, b, &mut rng);
        let (_, grad) = cmos::model::loss_and_grad(&batch, &params, &cfg).unwrap();
        let analytic = grad.to_flat();
        let flat = params.to_flat();
        let mut probe = params.clone();
        for idx in 0..flat.len() {
            let mut v = flat.clone();
            v[idx] += FD_STEP;
            probe.set_flat(&v).unwrap();
            let up = oracle_loss(&batch, &probe, &cfg);
            v[idx] = flat[idx] - FD_STEP;
            probe.set_flat(&v).unwrap();
            let down = oracle_loss(&batch, &probe, &cfg);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (analytic[idx] - numeric).abs() / analytic[idx].abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}
