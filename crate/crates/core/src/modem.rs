//! Shared orthonormal modulation codebook and token modulation.
//!
//! Token `q` is transmitted as column `q` of an `L x Q` matrix `U` with
//! orthonormal columns. The default construction is the normalized DFT
//! matrix with `L = Q`; any other orthonormal basis is accepted through
//! [`ModulationCodebook::from_matrix`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::channel::complex_gaussian;
use crate::error::{Error, Result};
use crate::token::{OneHotMatrix, TokenId, TokenSequence};

/// Maximum entry of `|U^H U - I|` tolerated by [`ModulationCodebook::from_matrix`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Clone)]
pub struct ModulationCodebook {
    matrix: Array2<Complex64>,
    adjoint: Array2<Complex64>,
    // set only for the normalized DFT construction
    ifft: Option<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for ModulationCodebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModulationCodebook")
            .field("l", &self.l())
            .field("q", &self.q())
            .field("dft", &self.ifft.is_some())
            .finish()
    }
}

impl ModulationCodebook {
    /// Normalized DFT codebook: `U[l, c] = exp(-2 pi i l c / q) / sqrt(q)`, `L = q`.
    pub fn dft(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::Config(format!("codebook size must be >= 2, got {q}")));
        }
        let scale = 1.0 / (q as f64).sqrt();
        let matrix = Array2::from_shape_fn((q, q), |(l, c)| {
            // reduce the exponent first so large q keeps full phase precision
            let k = (l * c) % q;
            Complex64::from_polar(scale, -2.0 * PI * k as f64 / q as f64)
        });
        let adjoint = matrix.t().mapv(|z| z.conj());
        let ifft = FftPlanner::new().plan_fft_inverse(q);
        Ok(Self {
            matrix,
            adjoint,
            ifft: Some(ifft),
        })
    }

    /// Wraps an arbitrary `L x Q` matrix after checking column orthonormality.
    pub fn from_matrix(matrix: Array2<Complex64>) -> Result<Self> {
        let (l, q) = matrix.dim();
        if q < 2 || l < q {
            return Err(Error::Config(format!(
                "codebook must be L x Q with L >= Q >= 2, got {l} x {q}"
            )));
        }
        let adjoint = matrix.t().mapv(|z| z.conj());
        let gram = adjoint.dot(&matrix);
        let err = orthonormality_error(gram.view());
        if err > ORTHONORMAL_TOL {
            return Err(Error::Config(format!(
                "codebook columns are not orthonormal (max |U^H U - I| = {err:e})"
            )));
        }
        Ok(Self {
            matrix,
            adjoint,
            ifft: None,
        })
    }

    /// Square unitary codebook from modified Gram-Schmidt on a complex
    /// Gaussian matrix.
    pub fn random_unitary<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Result<Self> {
        if q < 2 {
            return Err(Error::Config(format!("codebook size must be >= 2, got {q}")));
        }
        let mut m = Array2::from_shape_fn((q, q), |_| complex_gaussian(rng, 1.0));
        for c in 0..q {
            for prev in 0..c {
                let proj: Complex64 = m
                    .column(prev)
                    .iter()
                    .zip(m.column(c).iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let basis = m.column(prev).to_owned();
                m.column_mut(c).zip_mut_with(&basis, |x, b| *x -= proj * b);
            }
            let norm = m.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            m.column_mut(c).mapv_inplace(|z| z / norm);
        }
        Self::from_matrix(m)
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    /// Codeword length `L`.
    pub fn l(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of codewords `Q`.
    pub fn q(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_dft(&self) -> bool {
        self.ifft.is_some()
    }

    pub fn codeword(&self, token: TokenId) -> ndarray::ArrayView1<'_, Complex64> {
        self.matrix.column(token)
    }

    /// `max |U^H U - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(self.adjoint.dot(&self.matrix).view())
    }

    /// `U^H Y` for an `L x M` block. Uses an inverse FFT per antenna column
    /// for the DFT codebook and a dense product otherwise.
    pub fn adjoint_apply(&self, y: ArrayView2<'_, Complex64>) -> Result<Array2<Complex64>> {
        if y.nrows() != self.l() {
            return Err(Error::Dimension(format!(
                "received block has {} rows, codebook has L = {}",
                y.nrows(),
                self.l()
            )));
        }
        match &self.ifft {
            Some(ifft) => {
                let q = self.q();
                let scale = 1.0 / (q as f64).sqrt();
                // column-major copy so each antenna is contiguous
                let mut out = y.t().as_standard_layout().into_owned();
                let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
                for mut col in out.axis_iter_mut(Axis(0)) {
                    let buf = col.as_slice_mut().expect("contiguous row");
                    ifft.process_with_scratch(buf, &mut scratch);
                    buf.iter_mut().for_each(|z| *z *= scale);
                }
                Ok(out.reversed_axes().as_standard_layout().into_owned())
            }
            None => Ok(self.adjoint.dot(&y)),
        }
    }

    /// `U^H Y` by explicit matrix product, regardless of construction.
    pub fn adjoint_apply_dense(&self, y: ArrayView2<'_, Complex64>) -> Result<Array2<Complex64>> {
        if y.nrows() != self.l() {
            return Err(Error::Dimension(format!(
                "received block has {} rows, codebook has L = {}",
                y.nrows(),
                self.l()
            )));
        }
        Ok(self.adjoint.dot(&y))
    }
}

fn orthonormality_error(gram: ArrayView2<'_, Complex64>) -> f64 {
    gram.indexed_iter()
        .map(|((i, j), z)| {
            let target = if i == j { 1.0 } else { 0.0 };
            (z - Complex64::new(target, 0.0)).norm()
        })
        .fold(0.0, f64::max)
}

/// `L x N` transmitted frame, one codeword column per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedFrame {
    pub matrix: Array2<Complex64>,
}

impl ModulatedFrame {
    pub fn slot(&self, n: usize) -> ndarray::ArrayView1<'_, Complex64> {
        self.matrix.column(n)
    }
}

/// `X = U B`.
pub fn modulate(b: &OneHotMatrix, u: &ModulationCodebook) -> Result<ModulatedFrame> {
    if b.q() != u.q() {
        return Err(Error::Dimension(format!(
            "one-hot matrix has {} rows, codebook has Q = {}",
            b.q(),
            u.q()
        )));
    }
    let mut matrix = Array2::zeros((u.l(), b.n()));
    for n in 0..b.n() {
        matrix.column_mut(n).assign(&u.codeword(b.token_at(n)));
    }
    Ok(ModulatedFrame { matrix })
}

/// Modulates a token sequence directly, skipping the one-hot view.
pub fn modulate_sequence(seq: &TokenSequence, u: &ModulationCodebook) -> Result<ModulatedFrame> {
    let mut matrix = Array2::zeros((u.l(), seq.len()));
    for (n, &t) in seq.as_slice().iter().enumerate() {
        if t >= u.q() {
            return Err(Error::TokenOutOfRange { id: t, q: u.q() });
        }
        matrix.column_mut(n).assign(&u.codeword(t));
    }
    Ok(ModulatedFrame { matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::one_hot;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_dft() {
        let u = ModulationCodebook::dft(2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expect = [[s, s], [s, -s]];
        for ((l, c), z) in u.matrix().indexed_iter() {
            assert!((z.re - expect[l][c]).abs() < 1e-15);
            assert!(z.im.abs() < 1e-15);
        }
    }

    #[test]
    fn dft_orthonormal_and_flat() {
        for q in [4, 64, 1024] {
            let u = ModulationCodebook::dft(q).unwrap();
            assert_eq!(u.l(), q);
            let tol = if q == 4 { 1e-12 } else { 1e-10 };
            assert!(u.orthonormality_error() <= tol);
            let target = 1.0 / (q as f64).sqrt();
            assert!(u.matrix().iter().all(|z| (z.norm() - target).abs() < 1e-12));
        }
    }

    #[test]
    fn dft_deterministic() {
        let a = ModulationCodebook::dft(64).unwrap();
        let b = ModulationCodebook::dft(64).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(ModulationCodebook::dft(1).is_err());
        assert!(ModulationCodebook::dft(0).is_err());
        let wide = Array2::<Complex64>::zeros((2, 4));
        assert!(ModulationCodebook::from_matrix(wide).is_err());
        let non_orth = Array2::from_elem((3, 3), Complex64::new(1.0, 0.0));
        assert!(ModulationCodebook::from_matrix(non_orth).is_err());
    }

    #[test]
    fn random_unitary_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = ModulationCodebook::random_unitary(32, &mut rng).unwrap();
        assert!(!u.is_dft());
        assert!(u.orthonormality_error() < 1e-12);
    }

    #[test]
    fn modulate_selects_columns() {
        let u = ModulationCodebook::dft(4).unwrap();
        let b = one_hot(&TokenSequence::new(vec![2], 4).unwrap(), 4).unwrap();
        let x = modulate(&b, &u).unwrap();
        assert_eq!(x.slot(0), u.codeword(2));

        let b = one_hot(&TokenSequence::new(vec![0, 0], 4).unwrap(), 4).unwrap();
        let x = modulate(&b, &u).unwrap();
        assert_eq!(x.slot(0), x.slot(1));
    }

    #[test]
    fn modulate_dimension_mismatch() {
        let u = ModulationCodebook::dft(4).unwrap();
        let b = one_hot(&TokenSequence::new(vec![1], 8).unwrap(), 8).unwrap();
        assert!(matches!(modulate(&b, &u), Err(Error::Dimension(_))));
    }

    #[test]
    fn fft_and_dense_projection_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for q in [2, 8, 64, 100] {
            let u = ModulationCodebook::dft(q).unwrap();
            let y = Array2::from_shape_fn((q, 5), |_| complex_gaussian(&mut rng, 1.0));
            let fast = u.adjoint_apply(y.view()).unwrap();
            let dense = u.adjoint_apply_dense(y.view()).unwrap();
            let err = (&fast - &dense).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "q={q} err={err}");
        }
    }

    proptest! {
        #[test]
        fn projection_recovers_one_hot(q in 2usize..48, raw in prop::collection::vec(0usize..1000, 1..20)) {
            let u = ModulationCodebook::dft(q).unwrap();
            let s = TokenSequence::new(raw.into_iter().map(|t| t % q).collect(), q).unwrap();
            let b = one_hot(&s, q).unwrap();
            let x = modulate(&b, &u).unwrap();
            for col in x.matrix.columns() {
                let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-10);
            }
            let back = u.adjoint_apply(x.matrix.view()).unwrap();
            for ((i, j), z) in back.indexed_iter() {
                let target = b.entries()[[i, j]] as f64;
                prop_assert!((z - Complex64::new(target, 0.0)).norm() <= 1e-9);
            }
        }
    }
}
