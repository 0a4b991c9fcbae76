//! Dominant-period search with the autocorrelation function, and periodicity
//! injection into a correlation matrix.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CmosError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub period: usize,
    pub acf_value: f64,
    /// Every strict local maximum examined, as `(lag, acf)`.
    pub candidates: Vec<(usize, f64)>,
}

impl PeriodEstimate {
    /// `lag,acf` table with a header row.
    pub fn candidates_csv(&self) -> String {
        let mut out = String::from("lag,acf\n");
        for (lag, v) in &self.candidates {
            out.push_str(&format!("{lag},{v}\n"));
        }
        out
    }
}

/// Sample autocorrelation `r(0..=max_lag)`, normalized by the lag-0 sum.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag < 1 || series.len() <= max_lag {
        return Err(CmosError::InvalidConfig(format!(
            "acf needs 1 <= max_lag < T (max_lag={max_lag}, T={})",
            series.len()
        )));
    }
    let len = series.len();
    let mean = series.iter().sum::<f64>() / len as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(CmosError::ConstantSeries);
    }
    Ok((0..=max_lag)
        .map(|lag| {
            let num: f64 = centered[..len - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum();
            num / denom
        })
        .collect())
}

/// Averages the per-channel ACFs of `range` and returns the strict local
/// maximum on `[2, max_lag]` with the largest value (smallest lag on ties).
/// Constant channels are skipped.
pub fn estimate_period_in(dataset: &Dataset, range: Range<usize>, max_lag: usize) -> Result<PeriodEstimate> {
    if max_lag < 4 {
        return Err(CmosError::InvalidConfig(format!("max_lag must be at least 4, got {max_lag}")));
    }
    let mut avg = vec![0.0; max_lag + 2];
    let mut used = 0usize;
    for n in 0..dataset.n_channels() {
        let col = dataset.column_range(n, range.clone());
        match acf(&col, max_lag + 1) {
            Ok(r) => {
                for (a, v) in avg.iter_mut().zip(&r) {
                    *a += v;
                }
                used += 1;
            }
            Err(CmosError::ConstantSeries) => continue,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(CmosError::ConstantSeries);
    }
    avg.iter_mut().for_each(|v| *v /= used as f64);

    let candidates: Vec<(usize, f64)> = (2..=max_lag)
        .filter(|&lag| avg[lag] > avg[lag - 1] && avg[lag] > avg[lag + 1])
        .map(|lag| (lag, avg[lag]))
        .collect();
    let best = candidates
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |best, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
        .ok_or(CmosError::NoPeriod(max_lag))?;
    Ok(PeriodEstimate {
        period: best.0,
        acf_value: best.1,
        candidates,
    })
}

/// Period estimate on the first `train_len` steps.
pub fn estimate_period(dataset: &Dataset, train_len: usize, max_lag: usize) -> Result<PeriodEstimate> {
    estimate_period_in(dataset, 0..train_len.min(dataset.len()), max_lag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InjectionMode {
    /// Assign only when `i + j < L/S`.
    #[default]
    Strict,
    /// Assign when `i + j <= L/S`.
    Inclusive,
}

/// Periodicity injection on an `(H/S) × (L/S)` row-major matrix, in place.
///
/// With 1-based `i` over output chunks and `j` running from `L/S − p/S` down
/// to 1 in steps of `p/S`, sets `θ[i][j + i] = p/L` whenever the bound holds.
/// Entries not hit keep their value, so the caller zeroes the matrix first.
pub fn inject_in_place(
    theta: &mut [f64],
    period: usize,
    chunk_size: usize,
    lookback: usize,
    horizon: usize,
    mode: InjectionMode,
) -> Result<()> {
    if chunk_size == 0 || lookback % chunk_size != 0 || horizon % chunk_size != 0 {
        return Err(CmosError::NotDivisible("lookback/horizon", "chunk size"));
    }
    if period == 0 || period % chunk_size != 0 {
        return Err(CmosError::NotDivisible("period", "chunk size"));
    }
    if period > lookback {
        return Err(CmosError::InvalidConfig(format!("period {period} exceeds L={lookback}")));
    }
    let in_chunks = lookback / chunk_size;
    let out_chunks = horizon / chunk_size;
    if theta.len() != in_chunks * out_chunks {
        return Err(CmosError::ShapeMismatch(format!(
            "matrix of {} entries, expected {out_chunks}×{in_chunks}",
            theta.len()
        )));
    }
    let step = period / chunk_size;
    let value = period as f64 / lookback as f64;
    for i in 1..=out_chunks {
        let mut j = in_chunks - step;
        while j >= 1 {
            let ok = match mode {
                InjectionMode::Strict => i + j < in_chunks,
                InjectionMode::Inclusive => i + j <= in_chunks,
            };
            if ok {
                theta[(i - 1) * in_chunks + (j + i - 1)] = value;
            }
            if j <= step {
                break;
            }
            j -= step;
        }
    }
    Ok(())
}

/// Copying form of [`inject_in_place`].
pub fn inject(
    theta: &[f64],
    period: usize,
    chunk_size: usize,
    lookback: usize,
    horizon: usize,
    mode: InjectionMode,
) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    inject_in_place(&mut out, period, chunk_size, lookback, horizon, mode)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn sine(len: usize, period: f64, phase: f64) -> Vec<f64> {
        (0..len).map(|t| (2.0 * PI * t as f64 / period + phase).sin()).collect()
    }

    #[test]
    fn acf_basics() {
        let s = sine(2400, 24.0, 0.0);
        let r = acf(&s, 48).unwrap();
        assert_eq!(r[0], 1.0);
        assert!(r[24] > 0.98);
        assert!(r[12] < -0.98);
        assert!(matches!(acf(&[3.0; 10], 2), Err(CmosError::ConstantSeries)));
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn acf_white_noise_is_small() {
        // |r| < 0.05 is about 5 standard errors at T = 10000.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let r = acf(&x, 100).unwrap();
        assert!(r[1..].iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn period_of_two_phase_shifted_sines() {
        let ds = Dataset::from_columns(
            "s",
            vec!["a".into(), "b".into()],
            &[sine(1200, 12.0, 0.0), sine(1200, 12.0, 1.1)],
        )
        .unwrap();
        let est = estimate_period(&ds, 1200, 50).unwrap();
        assert_eq!(est.period, 12);
        assert!(est.acf_value > 0.95);
        assert!(est.candidates.iter().any(|(l, _)| *l == 24));
        assert!(est.candidates_csv().starts_with("lag,acf\n"));
    }

    #[test]
    fn period_invariant_to_affine_rescaling() {
        let a = sine(960, 24.0, 0.3);
        let b: Vec<f64> = sine(960, 24.0, 2.0).iter().zip(sine(960, 7.0, 0.0)).map(|(x, y)| x + 0.3 * y).collect();
        let ds = Dataset::from_columns("s", vec!["a".into(), "b".into()], &[a.clone(), b.clone()]).unwrap();
        let scaled = Dataset::from_columns(
            "s",
            vec!["a".into(), "b".into()],
            &[a.iter().map(|v| 5.0 * v - 2.0).collect(), b.iter().map(|v| 0.01 * v + 100.0).collect()],
        )
        .unwrap();
        let e1 = estimate_period(&ds, 960, 60).unwrap();
        let e2 = estimate_period(&scaled, 960, 60).unwrap();
        assert_eq!(e1.period, e2.period);
        assert!((e1.acf_value - e2.acf_value).abs() < 1e-9);
    }

    #[test]
    fn no_peak_is_an_error() {
        let ramp: Vec<f64> = (0..100).map(f64::from).collect();
        let ds = Dataset::from_columns("r", vec!["a".into()], &[ramp]).unwrap();
        assert!(matches!(estimate_period(&ds, 100, 20), Err(CmosError::NoPeriod(20))));
        assert!(estimate_period(&ds, 100, 3).is_err());
    }

    #[test]
    fn hand_executed_strict() {
        let m = inject(&[0.0; 8], 4, 2, 8, 4, InjectionMode::Strict).unwrap();
        let mut expect = [0.0; 8];
        expect[2] = 0.5; // (1, 3) in 1-based indexing
        assert_eq!(m, expect);
    }

    #[test]
    fn hand_executed_inclusive() {
        let m = inject(&[0.0; 8], 4, 2, 8, 4, InjectionMode::Inclusive).unwrap();
        let mut expect = [0.0; 8];
        expect[2] = 0.5;
        expect[4 + 3] = 0.5; // (2, 4)
        assert_eq!(m, expect);
    }

    #[test]
    fn injection_errors() {
        assert!(inject(&[0.0; 8], 3, 2, 8, 4, InjectionMode::Strict).is_err());
        assert!(inject(&[0.0; 8], 10, 2, 8, 4, InjectionMode::Strict).is_err());
        assert!(inject(&[0.0; 7], 4, 2, 8, 4, InjectionMode::Strict).is_err());
        assert!(inject(&[0.0; 8], 4, 3, 8, 4, InjectionMode::Strict).is_err());
    }

    proptest::proptest! {
        #[test]
        fn injected_entries_are_lag_aligned(
            s in 1usize..5,
            step in 1usize..5,
            periods in 1usize..4,
            out_chunks in 1usize..8,
            inclusive in proptest::bool::ANY,
        ) {
            let p = s * step;
            let l = p * periods;
            let h = s * out_chunks;
            let (ic, oc) = (l / s, h / s);
            let mode = if inclusive { InjectionMode::Inclusive } else { InjectionMode::Strict };
            let m = inject(&vec![0.0; ic * oc], p, s, l, h, mode).unwrap();
            let value = p as f64 / l as f64;
            for i in 0..oc {
                for k in 0..ic {
                    let v = m[i * ic + k];
                    proptest::prop_assert!(v == 0.0 || v == value);
                    if v != 0.0 {
                        // 1-based lag L/S + i − k
                        let lag = ic + (i + 1) - (k + 1);
                        proptest::prop_assert_eq!(lag % step, 0);
                    }
                }
            }
            let again = inject(&m, p, s, l, h, mode).unwrap();
            proptest::prop_assert_eq!(again, m);
        }
    }
}
