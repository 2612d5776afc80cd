//! Token error rate, collision statistics and the two latency models.

use serde::{Deserialize, Serialize};

use crate::assigner::MaskedSequence;
use crate::error::{Error, Result};
use crate::token::{one_hot, TokenSequence};

/// Per-trial summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub ter: f64,
    /// Fraction of `(device, slot)` pairs masked by the initial assignment.
    pub mask_rate: f64,
    /// Same fraction after the fine-grained update.
    pub mask_rate_after_update: f64,
    /// Fraction of slots with a nonempty residual set after the initial
    /// assignment.
    pub collision_rate: f64,
    /// Wrong tokens per device.
    pub token_errors: Vec<usize>,
    pub n_slots: usize,
}

impl TrialOutcome {
    pub fn total_errors(&self) -> usize {
        self.token_errors.iter().sum()
    }
}

fn check_shapes(k_est: usize, k_truth: usize, lens: impl Iterator<Item = (usize, usize)>) -> Result<()> {
    if k_est != k_truth {
        return Err(Error::Dimension(format!(
            "{k_est} estimated sequences, {k_truth} true"
        )));
    }
    for (a, b) in lens {
        if a != b {
            return Err(Error::Dimension(format!("sequence lengths {a} and {b} differ")));
        }
    }
    Ok(())
}

/// Mismatched `(device, slot)` positions divided by `N K`.
pub fn token_error_rate(estimated: &[TokenSequence], truth: &[TokenSequence]) -> Result<f64> {
    check_shapes(
        estimated.len(),
        truth.len(),
        estimated.iter().zip(truth).map(|(e, t)| (e.len(), t.len())),
    )?;
    let total: usize = truth.iter().map(TokenSequence::len).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let errors: usize = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            e.as_slice()
                .iter()
                .zip(t.as_slice())
                .filter(|(a, b)| a != b)
                .count()
        })
        .sum();
    Ok(errors as f64 / total as f64)
}

/// `sum_k ||B_hat_k - B_k||_0 / (2 N K)` on one-hot matrices.
pub fn one_hot_token_error_rate(
    estimated: &[TokenSequence],
    truth: &[TokenSequence],
    q: usize,
) -> Result<f64> {
    check_shapes(
        estimated.len(),
        truth.len(),
        estimated.iter().zip(truth).map(|(e, t)| (e.len(), t.len())),
    )?;
    let mut l0 = 0usize;
    let mut nk = 0usize;
    for (e, t) in estimated.iter().zip(truth) {
        let be = one_hot(e, q)?;
        let bt = one_hot(t, q)?;
        l0 += be
            .entries()
            .iter()
            .zip(bt.entries().iter())
            .filter(|(a, b)| a != b)
            .count();
        nk += t.len();
    }
    if nk == 0 {
        return Ok(0.0);
    }
    Ok(l0 as f64 / (2 * nk) as f64)
}

/// TER of sequences that may still hold MASKs; a MASK is always an error.
pub fn masked_token_error_rate(estimated: &[MaskedSequence], truth: &[TokenSequence]) -> Result<f64> {
    check_shapes(
        estimated.len(),
        truth.len(),
        estimated.iter().zip(truth).map(|(e, t)| (e.len(), t.len())),
    )?;
    let total: usize = truth.iter().map(TokenSequence::len).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let errors: usize = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| {
            e.slots()
                .iter()
                .zip(t.as_slice())
                .filter(|(a, b)| **a != Some(**b))
                .count()
        })
        .sum();
    Ok(errors as f64 / total as f64)
}

/// Probability that a given device's token is duplicated by at least one
/// of the other `K - 1` devices in a slot, for i.i.d. uniform tokens.
pub fn mask_rate_oracle(k_active: usize, q: usize) -> f64 {
    if k_active <= 1 {
        return 0.0;
    }
    1.0 - (1.0 - 1.0 / q as f64).powi(k_active as i32 - 1)
}

/// OFDM numerology and target error rate for the latency comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub n_subcarriers: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    pub target_ber: f64,
    pub snr_linear: f64,
}

impl LatencyModel {
    /// 1024 subcarriers at 15 kHz, BER 1e-3.
    pub fn ofdm_default(snr_db: f64) -> Self {
        Self {
            n_subcarriers: 1024,
            subcarrier_spacing: 15e3,
            target_ber: 1e-3,
            snr_linear: 10f64.powf(snr_db / 10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 1 {
            return Err(Error::Config("need at least one subcarrier".into()));
        }
        if self.subcarrier_spacing.is_nan() || self.subcarrier_spacing <= 0.0 {
            return Err(Error::Config("subcarrier spacing must be positive".into()));
        }
        if !(self.target_ber > 0.0 && self.target_ber < 0.2) {
            return Err(Error::Config(format!(
                "target BER must lie in (0, 0.2), got {}",
                self.target_ber
            )));
        }
        if self.snr_linear.is_nan() || self.snr_linear < 0.0 {
            return Err(Error::Config("SNR must be non-negative".into()));
        }
        Ok(())
    }

    /// Total bandwidth `N_s f_s` in Hz.
    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }
}

/// Per-device adaptive-QAM rate when the band is split evenly over `K_T`
/// devices, in bit/s.
pub fn orth_rate(k_total: usize, model: &LatencyModel) -> Result<f64> {
    model.validate()?;
    if k_total < 1 {
        return Err(Error::Config("K_T must be >= 1".into()));
    }
    let gap = 1.5 / -(5.0 * model.target_ber).ln();
    Ok(model.bandwidth() / k_total as f64 * (1.0 + gap * model.snr_linear).log2())
}

/// Seconds to deliver `N log2(Q)` bits at [`orth_rate`].
pub fn orth_latency(k_total: usize, n_tokens: usize, q: usize, model: &LatencyModel) -> Result<f64> {
    if q < 2 || !q.is_power_of_two() {
        return Err(Error::Config(format!("Q must be a power of two, got {q}")));
    }
    let bits = n_tokens as f64 * q.trailing_zeros() as f64;
    Ok(bits / orth_rate(k_total, model)?)
}

/// Seconds to send `N` codewords of `L` symbols over the full band; does
/// not depend on the number of devices.
pub fn todma_latency(l: usize, n_tokens: usize, model: &LatencyModel) -> Result<f64> {
    if l < 1 || n_tokens < 1 {
        return Err(Error::Config("L and N must be >= 1".into()));
    }
    if model.subcarrier_spacing.is_nan() || model.subcarrier_spacing <= 0.0 || model.n_subcarriers < 1 {
        return Err(Error::Config("invalid OFDM numerology".into()));
    }
    Ok((l * n_tokens) as f64 / model.bandwidth())
}

/// Smallest `K_T` at which the token-domain scheme is strictly faster.
///
/// Orth latency is linear in `K_T`, so this is
/// `floor(todma / orth_per_device) + 1`.
pub fn latency_crossover(l: usize, n_tokens: usize, q: usize, model: &LatencyModel) -> Result<usize> {
    let todma = todma_latency(l, n_tokens, model)?;
    let per_device = orth_latency(1, n_tokens, q, model)?;
    let mut k = (todma / per_device).floor() as usize;
    // guard against rounding at the boundary
    while orth_latency(k.max(1), n_tokens, q, model)? > todma && k > 1 {
        k -= 1;
    }
    while orth_latency(k.max(1), n_tokens, q, model)? <= todma {
        k += 1;
    }
    Ok(k.max(1))
}
