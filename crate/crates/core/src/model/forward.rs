use rayon::prelude::*;

use super::mixing::{aggregate, allocate, mixing_weights, MixWeights};
use super::norm::{series_stats, NormStats};
use super::{CmosConfig, CmosParams};
use crate::data::WindowBatch;
use crate::error::{CmosError, Result};

/// (window, channel) units per parallel task. Fixed so the reduction order,
/// and therefore the floating-point result, does not depend on thread count.
const UNITS_PER_TASK: usize = 16;

/// Denormalized prediction `[b][n][h]` plus the normalization statistics and,
/// for gated models, the mixing weights.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub prediction: Vec<f64>,
    pub stats: NormStats,
    pub mix: Option<MixWeights>,
}

/// Everything one (window, channel) pass produces, kept for the backward pass.
struct ChannelPass {
    mu: f64,
    var: f64,
    scale: f64,
    xn: Vec<f64>,
    z: Vec<f64>,
    gamma: Vec<f64>,
    w: Vec<f64>,
    /// `[expert][h]`, normalized space.
    expert_out: Vec<f64>,
    yn: Vec<f64>,
}

impl ChannelPass {
    fn denormalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.yn.iter().map(|v| v * self.scale + self.mu)
    }
}

fn check_shapes(batch: &WindowBatch, params: &CmosParams, cfg: &CmosConfig) -> Result<()> {
    cfg.validate()?;
    if batch.channels != cfg.channels || batch.lookback_len != cfg.lookback || batch.horizon != cfg.horizon {
        return Err(CmosError::ShapeMismatch(format!(
            "batch N={}, L={}, H={} vs config N={}, L={}, H={}",
            batch.channels, batch.lookback_len, batch.horizon, cfg.channels, cfg.lookback, cfg.horizon
        )));
    }
    let expected = CmosParams::zeros(cfg);
    if params.theta.len() != expected.theta.len()
        || params.bias.len() != expected.bias.len()
        || params.kernels.len() != expected.kernels.len()
        || params.allocator.len() != expected.allocator.len()
    {
        return Err(CmosError::ShapeMismatch("parameters do not match config".into()));
    }
    Ok(())
}

/// Matrix used by expert slot `e` for channel `n`.
fn matrix_index(cfg: &CmosConfig, e: usize, n: usize) -> usize {
    if cfg.gated() {
        e
    } else {
        n
    }
}

fn run_channel(x: &[f64], n: usize, params: &CmosParams, cfg: &CmosConfig) -> ChannelPass {
    let s = cfg.chunk_size;
    let in_chunks = cfg.in_chunks();
    let out_chunks = cfg.out_chunks();
    let h = cfg.horizon;

    let (mu, var) = series_stats(x);
    let scale = (var + cfg.eps).sqrt();
    let xn: Vec<f64> = if scale > 0.0 {
        x.iter().map(|v| (v - mu) / scale).collect()
    } else {
        vec![0.0; x.len()]
    };

    let (z, gamma, w) = if cfg.gated() {
        // shapes were validated with the config
        let z = aggregate(&xn, params.kernel(n)).expect("validated kernel size");
        let gamma = allocate(&z, &params.allocator, cfg.experts).expect("validated allocator");
        let w = mixing_weights(&gamma);
        (z, gamma, w)
    } else {
        (Vec::new(), Vec::new(), vec![1.0])
    };

    let experts = w.len();
    let mut expert_out = vec![0.0; experts * h];
    for e in 0..experts {
        let idx = matrix_index(cfg, e, n);
        let theta = params.matrix(idx);
        let out = &mut expert_out[e * h..(e + 1) * h];
        out.copy_from_slice(params.bias_block(idx));
        for i in 0..out_chunks {
            let row = &theta[i * in_chunks..(i + 1) * in_chunks];
            let target = &mut out[i * s..(i + 1) * s];
            for (j, coef) in row.iter().enumerate() {
                let src = &xn[j * s..(j + 1) * s];
                for (t, v) in target.iter_mut().zip(src) {
                    *t += coef * v;
                }
            }
        }
    }

    let mut yn = vec![0.0; h];
    for (e, we) in w.iter().enumerate() {
        for (y, v) in yn.iter_mut().zip(&expert_out[e * h..(e + 1) * h]) {
            *y += we * v;
        }
    }

    ChannelPass {
        mu,
        var,
        scale,
        xn,
        z,
        gamma,
        w,
        expert_out,
        yn,
    }
}

pub fn forward(batch: &WindowBatch, params: &CmosParams, cfg: &CmosConfig) -> Result<Forecast> {
    check_shapes(batch, params, cfg)?;
    let n_ch = cfg.channels;
    let units = batch.batch_size() * n_ch;
    let passes: Vec<ChannelPass> = (0..units)
        .into_par_iter()
        .map(|u| run_channel(batch.lookback_of(u / n_ch, u % n_ch), u % n_ch, params, cfg))
        .collect();

    let mut prediction = Vec::with_capacity(units * cfg.horizon);
    let mut mu = Vec::with_capacity(units);
    let mut sigma = Vec::with_capacity(units);
    let experts = if cfg.gated() { cfg.experts } else { 0 };
    let mut gamma = Vec::with_capacity(units * experts);
    let mut w = Vec::with_capacity(units * experts);
    for (u, pass) in passes.iter().enumerate() {
        let start = prediction.len();
        prediction.extend(pass.denormalized());
        if prediction[start..].iter().any(|v| !v.is_finite()) {
            let loc = params
                .first_non_finite()
                .map(|p| format!(", parameter {p}"))
                .unwrap_or_default();
            return Err(CmosError::NonFiniteValue {
                what: "prediction",
                location: format!("window {}, channel {}{loc}", u / n_ch, u % n_ch),
            });
        }
        mu.push(pass.mu);
        sigma.push(pass.var);
        gamma.extend(&pass.gamma);
        if cfg.gated() {
            w.extend(&pass.w);
        }
    }
    Ok(Forecast {
        prediction,
        stats: NormStats {
            mu,
            sigma,
            eps: cfg.eps,
        },
        mix: cfg.gated().then_some(MixWeights { gamma, w, experts }),
    })
}

/// Mean squared error of the denormalized forecast, computed from [`forward`]
/// alone.
pub fn loss(batch: &WindowBatch, params: &CmosParams, cfg: &CmosConfig) -> Result<f64> {
    let fc = forward(batch, params, cfg)?;
    let sse: f64 = fc
        .prediction
        .iter()
        .zip(&batch.target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / fc.prediction.len() as f64)
}

/// Accumulates one unit's gradient into `grad`; returns its squared error.
fn backward_unit(
    pass: &ChannelPass,
    target: &[f64],
    n: usize,
    norm: f64,
    params: &CmosParams,
    cfg: &CmosConfig,
    grad: &mut CmosParams,
) -> f64 {
    let s = cfg.chunk_size;
    let h = cfg.horizon;
    let in_chunks = cfg.in_chunks();
    let out_chunks = cfg.out_chunks();

    let mut sse = 0.0;
    // dLoss/d(normalized output)
    let g: Vec<f64> = pass
        .denormalized()
        .zip(target)
        .map(|(y, t)| {
            let d = y - t;
            sse += d * d;
            2.0 * d * pass.scale / norm
        })
        .collect();

    // Σ_s g[i, s] · xn[j, s], shared by every expert.
    let mut cross = vec![0.0; out_chunks * in_chunks];
    for i in 0..out_chunks {
        let gi = &g[i * s..(i + 1) * s];
        for j in 0..in_chunks {
            let xj = &pass.xn[j * s..(j + 1) * s];
            cross[i * in_chunks + j] = gi.iter().zip(xj).map(|(a, b)| a * b).sum();
        }
    }

    let experts = pass.w.len();
    let mut dw = vec![0.0; experts];
    for e in 0..experts {
        let idx = matrix_index(cfg, e, n);
        let we = pass.w[e];
        for (gt, c) in grad.matrix_mut(idx).iter_mut().zip(&cross) {
            *gt += we * c;
        }
        let gb = &mut grad.bias[idx * h..(idx + 1) * h];
        for (b, gv) in gb.iter_mut().zip(&g) {
            *b += we * gv;
        }
        dw[e] = g
            .iter()
            .zip(&pass.expert_out[e * h..(e + 1) * h])
            .map(|(a, b)| a * b)
            .sum();
    }

    if cfg.gated() {
        let k = cfg.experts;
        let mean: f64 = pass.w.iter().zip(&dw).map(|(w, d)| w * d).sum();
        let dgamma: Vec<f64> = pass.w.iter().zip(&dw).map(|(w, d)| w * (d - mean)).collect();
        let mut dz = vec![0.0; pass.z.len()];
        for (m, zm) in pass.z.iter().enumerate() {
            let row = m * k;
            for kk in 0..k {
                grad.allocator[row + kk] += zm * dgamma[kk];
                dz[m] += params.allocator[row + kk] * dgamma[kk];
            }
        }
        let c = cfg.kernel_size;
        let stride = c / 2;
        let gk = &mut grad.kernels[n * c..(n + 1) * c];
        for (m, dzm) in dz.iter().enumerate() {
            let seg = &pass.xn[m * stride..m * stride + c];
            for (gu, x) in gk.iter_mut().zip(seg) {
                *gu += dzm * x;
            }
        }
    }
    sse
}

/// Mean squared error over all `B·N·H` denormalized outputs and its gradient
/// with respect to every parameter. Normalization statistics are constants.
pub fn loss_and_grad(batch: &WindowBatch, params: &CmosParams, cfg: &CmosConfig) -> Result<(f64, CmosParams)> {
    check_shapes(batch, params, cfg)?;
    let n_ch = cfg.channels;
    let units = batch.batch_size() * n_ch;
    let norm = (units * cfg.horizon) as f64;
    let unit_ids: Vec<usize> = (0..units).collect();

    let partials: Vec<(f64, CmosParams)> = unit_ids
        .par_chunks(UNITS_PER_TASK)
        .map(|ids| {
            let mut grad = params.zeros_like();
            let mut sse = 0.0;
            for &u in ids {
                let (b, n) = (u / n_ch, u % n_ch);
                let pass = run_channel(batch.lookback_of(b, n), n, params, cfg);
                sse += backward_unit(&pass, batch.target_of(b, n), n, norm, params, cfg, &mut grad);
            }
            (sse, grad)
        })
        .collect();

    let mut grad = params.zeros_like();
    let mut sse = 0.0;
    for (s, g) in &partials {
        sse += s;
        grad.accumulate(g);
    }
    let loss = sse / norm;
    if !loss.is_finite() {
        return Err(CmosError::NonFiniteValue {
            what: "loss",
            location: params
                .first_non_finite()
                .unwrap_or_else(|| "batch forward pass".into()),
        });
    }
    if let Some(loc) = grad.first_non_finite() {
        return Err(CmosError::NonFiniteValue {
            what: "gradient",
            location: loc,
        });
    }
    Ok((loss, grad))
}
