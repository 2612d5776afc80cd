//! Active token detection: project each received slot onto the codebook
//! and keep rows whose per-antenna energy exceeds a threshold.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::channel::ReceivedSlot;
use crate::error::{Error, Result};
use crate::modem::ModulationCodebook;
use crate::token::TokenId;

/// Detected tokens of one slot with the projected row for each.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Token id -> projected row (the CSI estimate carried by that token).
    /// Keys are exactly the active token set.
    pub csi_estimates: BTreeMap<TokenId, Array1<Complex64>>,
    pub threshold: f64,
}

impl DetectionResult {
    pub fn active_tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.csi_estimates.keys().copied()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.csi_estimates.contains_key(&token)
    }

    pub fn len(&self) -> usize {
        self.csi_estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.csi_estimates.is_empty()
    }
}

/// `H_hat = U^H Y` (`Q x M`).
pub fn project(y: &ReceivedSlot, u: &ModulationCodebook) -> Result<Array2<Complex64>> {
    u.adjoint_apply(y.matrix.view())
}

/// Threshold of twice the noise variance.
pub fn default_threshold(sigma2: f64) -> f64 {
    2.0 * sigma2
}

/// `||row||^2 / M`.
#[inline]
pub fn row_energy<'a>(row: impl IntoIterator<Item = &'a Complex64>, m: usize) -> f64 {
    row.into_iter().map(|z| z.norm_sqr()).sum::<f64>() / m as f64
}

/// Keeps every row with energy per antenna strictly above `threshold`.
pub fn detect(h_hat: &Array2<Complex64>, threshold: f64) -> Result<DetectionResult> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!("threshold must be >= 0, got {threshold}")));
    }
    let m = h_hat.ncols();
    let csi_estimates = h_hat
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, row)| row_energy(row.iter(), m) > threshold)
        .map(|(phi, row)| (phi, row.to_owned()))
        .collect();
    Ok(DetectionResult {
        csi_estimates,
        threshold,
    })
}
