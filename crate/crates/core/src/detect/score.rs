use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::dot;
use crate::pca::PrincipalBasis;

pub const DEFAULT_ALPHA: f64 = 3.0;

fn check_components(basis: &PrincipalBasis, dim: usize, l: usize) -> Result<()> {
    if basis.dimension() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: basis.dimension(),
        });
    }
    if l == 0 || l > basis.vectors.len() {
        return Err(Error::InvalidInput(format!(
            "cannot use {l} components from a basis of {}",
            basis.vectors.len()
        )));
    }
    Ok(())
}

/// `P = V_l V_lᵀ`, the orthogonal projector onto the first `l` directions.
pub fn projector(basis: &PrincipalBasis, l: usize) -> Result<Array2<f64>> {
    let d = basis.dimension();
    check_components(basis, d, l)?;
    let vs = &basis.vectors[..l];
    Ok(Array2::from_shape_fn((d, d), |(i, j)| {
        vs.iter().map(|v| v[i] * v[j]).sum()
    }))
}

/// Projects every row of `x` onto the span of the first `l` basis vectors,
/// i.e. `x̂ = V_l V_lᵀ x` for each row `x`.
pub fn reconstruct(
    x: ArrayView2<'_, f64>,
    basis: &PrincipalBasis,
    l: usize,
) -> Result<Array2<f64>> {
    check_components(basis, x.ncols(), l)?;
    let vs = &basis.vectors[..l];
    let mut out = Array2::zeros(x.dim());
    for (row, mut out_row) in x.rows().into_iter().zip(out.rows_mut()) {
        let row = row.to_vec();
        for v in vs {
            let c = dot(&row, v);
            for (o, vk) in out_row.iter_mut().zip(v) {
                *o += c * vk;
            }
        }
    }
    Ok(out)
}

/// Cumulative squared difference `Σ (xⱼ - x̂ⱼ)²`, accumulated left to right.
pub fn csd(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: x_hat.len(),
        });
    }
    Ok(x.iter()
        .zip(x_hat)
        .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b)))
}

/// CSD of every column of `x` against the same column of `x_hat`.
pub fn column_csd(x: ArrayView2<'_, f64>, x_hat: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if x.dim() != x_hat.dim() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {:?} vs {:?}",
            x.dim(),
            x_hat.dim()
        )));
    }
    x.columns()
        .into_iter()
        .zip(x_hat.columns())
        .map(|(a, b)| csd(&a.to_vec(), &b.to_vec()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOrigin {
    /// `mu + alpha * sigma` over clean training scores.
    Calibrated,
    /// Supplied by the caller; stored with `mu = threshold`, `sigma = 0`.
    Override,
}

/// Threshold `T = mu + alpha * sigma` and the statistics behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub origin: ThresholdOrigin,
    pub training_count: usize,
}

impl Calibration {
    pub fn fixed(threshold: f64, alpha: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "threshold override must be positive, got {threshold}"
            )));
        }
        Ok(Self {
            mu: threshold,
            sigma: 0.0,
            alpha,
            threshold,
            origin: ThresholdOrigin::Override,
            training_count: 0,
        })
    }
}

/// Mean and sample standard deviation (divisor `n - 1`) of clean scores.
pub fn calibrate_threshold(training_scores: &[f64], alpha: f64) -> Result<Calibration> {
    let n = training_scores.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 training scores to calibrate, got {n}"
        )));
    }
    ensure_finite(training_scores, "training scores")?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha"));
    }
    let mu = training_scores.iter().sum::<f64>() / n as f64;
    let var = training_scores
        .iter()
        .map(|s| (s - mu) * (s - mu))
        .sum::<f64>()
        / (n - 1) as f64;
    let sigma = var.sqrt();
    Ok(Calibration {
        mu,
        sigma,
        alpha,
        threshold: mu + alpha * sigma,
        origin: ThresholdOrigin::Calibrated,
        training_count: n,
    })
}
