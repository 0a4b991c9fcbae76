use crate::error::{CmosError, Result};

/// Per-window, per-channel statistics (`[b][n]`). `sigma` is the population
/// variance; both directions scale by `√(sigma + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eps: f64,
}

impl NormStats {
    pub fn scale(&self, idx: usize) -> f64 {
        (self.sigma[idx] + self.eps).sqrt()
    }
}

pub(crate) fn series_stats(x: &[f64]) -> (f64, f64) {
    let len = x.len() as f64;
    let mu = x.iter().sum::<f64>() / len;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / len;
    (mu, var)
}

/// Normalizes consecutive series of length `len` stored back to back.
///
/// A constant window with `eps = 0` maps to zeros rather than NaN.
pub fn normalize(window: &[f64], len: usize, eps: f64) -> (Vec<f64>, NormStats) {
    let mut out = Vec::with_capacity(window.len());
    let mut mu = Vec::with_capacity(window.len() / len.max(1));
    let mut sigma = Vec::with_capacity(mu.capacity());
    for series in window.chunks(len) {
        let (m, v) = series_stats(series);
        let s = (v + eps).sqrt();
        if s > 0.0 {
            out.extend(series.iter().map(|x| (x - m) / s));
        } else {
            out.extend(std::iter::repeat_n(0.0, series.len()));
        }
        mu.push(m);
        sigma.push(v);
    }
    (out, NormStats { mu, sigma, eps })
}

/// Inverse of [`normalize`] for series of length `len`.
pub fn denormalize(pred: &[f64], len: usize, stats: &NormStats) -> Result<Vec<f64>> {
    if len == 0 || pred.len() != stats.mu.len() * len || stats.mu.len() != stats.sigma.len() {
        return Err(CmosError::ShapeMismatch(format!(
            "{} predictions of length {len} vs {} statistics",
            pred.len(),
            stats.mu.len()
        )));
    }
    Ok(pred
        .chunks(len)
        .enumerate()
        .flat_map(|(i, s)| {
            let scale = stats.scale(i);
            let mu = stats.mu[i];
            s.iter().map(move |v| v * scale + mu)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn constant_window() {
        let (out, st) = normalize(&[1.0, 1.0, 1.0, 1.0], 4, 1e-5);
        assert_eq!(out, vec![0.0; 4]);
        assert_eq!(st.mu, vec![1.0]);
        assert_eq!(st.sigma, vec![0.0]);
        let (out, _) = normalize(&[2.0, 2.0], 2, 0.0);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_window() {
        let (out, st) = normalize(&[0.0, 2.0], 2, 1e-5);
        assert!((out[0] + 1.0).abs() < 1e-4 && (out[1] - 1.0).abs() < 1e-4);
        assert_eq!(st.mu, vec![1.0]);
        assert_eq!(st.sigma, vec![1.0]);
    }

    #[test]
    fn denormalize_cases() {
        let st = NormStats { mu: vec![3.0], sigma: vec![4.0], eps: 1e-5 };
        let out = denormalize(&[0.0; 5], 5, &st).unwrap();
        assert!(out.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let st = NormStats { mu: vec![0.0], sigma: vec![1.0], eps: 0.0 };
        assert_eq!(denormalize(&[1.0; 3], 3, &st).unwrap(), vec![1.0; 3]);
        assert!(denormalize(&[1.0; 4], 3, &st).is_err());
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (n, st) = normalize(&x, 8, 1e-5);
            assert!(st.sigma.iter().all(|s| *s >= 0.1));
            let back = denormalize(&n, 8, &st).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
