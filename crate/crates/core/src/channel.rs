//! Rayleigh block-fading multiple-access channel.
//!
//! Every active device sends one codeword per slot; the base station sees
//! `Y_n = sum_k x_{k,n} h_k^T + Z_n`, with `h_k` drawn once per trial and
//! held fixed across all slots.
//!
//! SNR convention: with unit-norm codewords and unit-variance fading, the
//! per-device, per-antenna SNR is `1 / sigma^2`.

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circularly-symmetric complex Gaussian sample with total variance `var`.
#[inline]
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// System dimensions for one simulated access round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Total registered devices `K_T`.
    pub k_total: usize,
    /// Active devices `K`.
    pub k_active: usize,
    /// Receive antennas `M`.
    pub m: usize,
    /// Slots (tokens per device) `N`.
    pub n_slots: usize,
    /// Token codebook size `Q`.
    pub q: usize,
    pub snr_db: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k_active < 1 || self.k_active > self.k_total {
            return bad(format!(
                "active devices must satisfy 1 <= K <= K_T, got K = {}, K_T = {}",
                self.k_active, self.k_total
            ));
        }
        if self.m < 1 {
            return bad("antenna count must be >= 1".into());
        }
        if self.n_slots < 1 {
            return bad("sequence length must be >= 1".into());
        }
        if self.q < 2 {
            return bad(format!("codebook size must be >= 2, got {}", self.q));
        }
        if !self.snr_db.is_finite() {
            return bad(format!("SNR must be finite, got {}", self.snr_db));
        }
        Ok(())
    }
}

/// `K x M` channel matrix; row `k` is `h_k^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    rows: Array2<Complex64>,
}

impl ChannelRealization {
    pub fn new(rows: Array2<Complex64>) -> Result<Self> {
        if rows.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Config("channel has non-finite entries".into()));
        }
        Ok(Self { rows })
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.rows
    }

    pub fn device(&self, k: usize) -> ArrayView1<'_, Complex64> {
        self.rows.row(k)
    }

    pub fn k(&self) -> usize {
        self.rows.nrows()
    }

    pub fn m(&self) -> usize {
        self.rows.ncols()
    }
}

/// Received `L x M` block for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSlot {
    pub matrix: Array2<Complex64>,
}

/// I.i.d. `CN(0, 1)` channel entries.
pub fn sample_rayleigh<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> ChannelRealization {
    ChannelRealization {
        rows: Array2::from_shape_simple_fn((k, m), || complex_gaussian(rng, 1.0)),
    }
}

/// `sigma^2 = 10^(-snr_db / 10)`.
pub fn snr_to_noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Superimposes `columns[k] h_k^T` over all devices and adds `CN(0, sigma2)`
/// noise. `l` is the codeword length, needed when no device transmits.
pub fn transmit_slot<R: Rng + ?Sized>(
    l: usize,
    columns: &[ArrayView1<'_, Complex64>],
    channels: &ChannelRealization,
    sigma2: f64,
    rng: &mut R,
) -> Result<ReceivedSlot> {
    if columns.len() != channels.k() {
        return Err(Error::Dimension(format!(
            "{} codewords for {} channel rows",
            columns.len(),
            channels.k()
        )));
    }
    if let Some(c) = columns.iter().find(|c| c.len() != l) {
        return Err(Error::Dimension(format!(
            "codeword length {} differs from L = {l}",
            c.len()
        )));
    }
    if sigma2.is_nan() || sigma2 < 0.0 {
        return Err(Error::Config(format!(
            "noise variance must be >= 0, got {sigma2}"
        )));
    }
    let m = channels.m();
    let mut y = if sigma2 > 0.0 {
        Array2::from_shape_simple_fn((l, m), || complex_gaussian(rng, sigma2))
    } else {
        Array2::zeros((l, m))
    };
    for (x, h) in columns.iter().zip(channels.rows.rows()) {
        for (mut y_row, &x_l) in y.rows_mut().into_iter().zip(x.iter()) {
            y_row.zip_mut_with(&h, |acc, &h_m| *acc += x_l * h_m);
        }
    }
    Ok(ReceivedSlot { matrix: y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::ModulationCodebook;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn rayleigh_shape_and_reproducible() {
        let a = sample_rayleigh(2, 3, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_rayleigh(2, 3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.matrix().dim(), (2, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn rayleigh_unit_power() {
        let h = sample_rayleigh(1000, 1000, &mut ChaCha8Rng::seed_from_u64(8));
        let mean = h.matrix().iter().map(|z| z.norm_sqr()).sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean |h|^2 = {mean}");
    }

    #[test]
    fn noise_variance_from_snr() {
        assert_eq!(snr_to_noise_variance(0.0), 1.0);
        assert!((snr_to_noise_variance(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_variance(25.0) - 3.1623e-3).abs() < 1e-7);
    }

    #[test]
    fn single_device_noiseless_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = ModulationCodebook::dft(8).unwrap();
        let h = sample_rayleigh(1, 4, &mut rng);
        let y = transmit_slot(8, &[u.codeword(3)], &h, 0.0, &mut rng).unwrap();
        let expect = Array2::from_shape_fn((8, 4), |(l, m)| u.codeword(3)[l] * h.device(0)[m]);
        assert!(max_diff(&y.matrix, &expect) < 1e-15);
    }

    #[test]
    fn collision_sums_channels_after_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = ModulationCodebook::dft(8).unwrap();
        let h = sample_rayleigh(2, 4, &mut rng);
        let y = transmit_slot(8, &[u.codeword(5), u.codeword(5)], &h, 0.0, &mut rng).unwrap();
        let proj = u.adjoint_apply(y.matrix.view()).unwrap();
        for q in 0..8 {
            for m in 0..4 {
                let expect = if q == 5 {
                    h.device(0)[m] + h.device(1)[m]
                } else {
                    Complex64::default()
                };
                assert!((proj[[q, m]] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_only_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = ChannelRealization::new(Array2::zeros((0, 100))).unwrap();
        let mut acc = 0.0;
        let sigma2 = 0.3;
        for _ in 0..100 {
            let y = transmit_slot(100, &[], &h, sigma2, &mut rng).unwrap();
            acc += y.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let var = acc / 1e6;
        assert!((var / sigma2 - 1.0).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn superposition_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = ModulationCodebook::dft(16).unwrap();
        let h = sample_rayleigh(3, 6, &mut rng);
        let cols = [u.codeword(1), u.codeword(9), u.codeword(1)];
        let all = transmit_slot(16, &cols, &h, 0.0, &mut rng).unwrap();
        let a = ChannelRealization::new(h.matrix().slice(ndarray::s![..1, ..]).to_owned()).unwrap();
        let b = ChannelRealization::new(h.matrix().slice(ndarray::s![1.., ..]).to_owned()).unwrap();
        let ya = transmit_slot(16, &cols[..1], &a, 0.0, &mut rng).unwrap();
        let yb = transmit_slot(16, &cols[1..], &b, 0.0, &mut rng).unwrap();
        assert!(max_diff(&all.matrix, &(&ya.matrix + &yb.matrix)) < 1e-14);
    }

    #[test]
    fn energy_accounting_without_collisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = ModulationCodebook::dft(32).unwrap();
        let h = sample_rayleigh(4, 8, &mut rng);
        let cols = [u.codeword(0), u.codeword(3), u.codeword(17), u.codeword(31)];
        let y = transmit_slot(32, &cols, &h, 0.0, &mut rng).unwrap();
        let fro: f64 = y.matrix.iter().map(|z| z.norm_sqr()).sum();
        let expect: f64 = h.matrix().iter().map(|z| z.norm_sqr()).sum();
        assert!((fro / expect - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dimension_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = ModulationCodebook::dft(4).unwrap();
        let h = sample_rayleigh(2, 2, &mut rng);
        assert!(transmit_slot(4, &[u.codeword(0)], &h, 0.1, &mut rng).is_err());
        assert!(transmit_slot(8, &[u.codeword(0), u.codeword(1)], &h, 0.1, &mut rng).is_err());
        assert!(transmit_slot(4, &[u.codeword(0), u.codeword(1)], &h, -1.0, &mut rng).is_err());
    }

    #[test]
    fn scenario_validation() {
        let ok = ScenarioConfig {
            k_total: 10,
            k_active: 2,
            m: 4,
            n_slots: 8,
            q: 16,
            snr_db: 25.0,
        };
        assert!(ok.validate().is_ok());
        assert!(ScenarioConfig { k_active: 0, ..ok }.validate().is_err());
        assert!(ScenarioConfig { k_active: 11, ..ok }.validate().is_err());
        assert!(ScenarioConfig { m: 0, ..ok }.validate().is_err());
        assert!(ScenarioConfig { q: 1, ..ok }.validate().is_err());
        assert!(ScenarioConfig { n_slots: 0, ..ok }.validate().is_err());
    }
}
