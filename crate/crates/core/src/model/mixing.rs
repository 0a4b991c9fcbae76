use crate::error::{CmosError, Result};

/// Gate scores and softmax weights, laid out `[b][n][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    pub gamma: Vec<f64>,
    pub w: Vec<f64>,
    pub experts: usize,
}

impl MixWeights {
    pub fn row(&self, unit: usize) -> &[f64] {
        &self.w[unit * self.experts..(unit + 1) * self.experts]
    }
}

/// Valid strided cross-correlation with stride `c/2`, no bias:
/// `z[m] = Σ_u kernel[u] · x[m·c/2 + u]`.
pub fn aggregate(x: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let c = kernel.len();
    let l = x.len();
    if c == 0 || c % 2 != 0 || c > l || (l - c) % (c / 2) != 0 {
        return Err(CmosError::InvalidConfig(format!(
            "kernel size {c} incompatible with window length {l}"
        )));
    }
    let stride = c / 2;
    let out_len = (2 * l - c) / c;
    Ok((0..out_len)
        .map(|m| {
            let seg = &x[m * stride..m * stride + c];
            seg.iter().zip(kernel).map(|(a, b)| a * b).sum()
        })
        .collect())
}

/// `gamma = zᵀ · allocator`, with the allocator stored `[z.len()][experts]`.
pub fn allocate(z: &[f64], allocator: &[f64], experts: usize) -> Result<Vec<f64>> {
    if experts == 0 || allocator.len() != z.len() * experts {
        return Err(CmosError::ShapeMismatch(format!(
            "allocator of {} entries for summary {} × {experts} experts",
            allocator.len(),
            z.len()
        )));
    }
    let mut gamma = vec![0.0; experts];
    for (zm, row) in z.iter().zip(allocator.chunks(experts)) {
        for (g, a) in gamma.iter_mut().zip(row) {
            *g += zm * a;
        }
    }
    Ok(gamma)
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn mixing_weights(gamma: &[f64]) -> Vec<f64> {
    let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = gamma.iter().map(|g| (g - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
