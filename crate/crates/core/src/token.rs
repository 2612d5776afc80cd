//! Token sequences and the synthetic token sources that stand in for a
//! learned tokenizer.
//!
//! A device's payload is a length-`N` sequence of ids into a shared token
//! codebook of size `Q`. Sequences are either drawn from an order-1 Markov
//! [`SourceModel`] or loaded from a plain-text token file produced by an
//! external tokenizer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Index into the token codebook, always `< Q`.
pub type TokenId = usize;

const STOCHASTIC_TOL: f64 = 1e-9;

/// A validated sequence of token ids over a codebook of size `q`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    q: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, q: usize) -> Result<Self> {
        if let Some(&id) = tokens.iter().find(|&&t| t >= q) {
            return Err(Error::TokenOutOfRange { id, q });
        }
        Ok(Self { tokens, q })
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_vec(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Codebook size the ids were validated against.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, slot: usize) -> Option<TokenId> {
        self.tokens.get(slot).copied()
    }
}

/// `Q x N` binary matrix with exactly one `1` per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotMatrix {
    entries: Array2<u8>,
}

impl OneHotMatrix {
    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }

    pub fn q(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    /// Row index of the single `1` in column `slot`.
    pub fn token_at(&self, slot: usize) -> TokenId {
        self.entries
            .column(slot)
            .iter()
            .position(|&b| b == 1)
            .expect("one-hot column")
    }
}

/// One-hot encoding of a sequence; column `n` is `e_{seq[n]}`.
pub fn one_hot(seq: &TokenSequence, q: usize) -> Result<OneHotMatrix> {
    let mut entries = Array2::zeros((q, seq.len()));
    for (n, &t) in seq.as_slice().iter().enumerate() {
        if t >= q {
            return Err(Error::TokenOutOfRange { id: t, q });
        }
        entries[[t, n]] = 1;
    }
    Ok(OneHotMatrix { entries })
}

pub fn from_one_hot(b: &OneHotMatrix) -> TokenSequence {
    let tokens = (0..b.n()).map(|n| b.token_at(n)).collect();
    TokenSequence { tokens, q: b.q() }
}

/// Order-1 Markov chain over token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    initial: Vec<f64>,
    transition: Array2<f64>,
    // cumulative sums for sampling; last entry of each row forced to 1
    initial_cdf: Vec<f64>,
    transition_cdf: Array2<f64>,
}

impl SourceModel {
    /// Validates that `initial` and every row of `transition` are
    /// probability vectors.
    pub fn new(initial: Vec<f64>, transition: Array2<f64>) -> Result<Self> {
        let q = initial.len();
        if q < 2 {
            return Err(Error::InvalidModel(format!("codebook size {q} < 2")));
        }
        if transition.dim() != (q, q) {
            return Err(Error::InvalidModel(format!(
                "transition is {:?}, expected ({q}, {q})",
                transition.dim()
            )));
        }
        check_stochastic(&initial, "initial distribution")?;
        for (i, row) in transition.rows().into_iter().enumerate() {
            check_stochastic(
                row.as_slice().expect("standard layout"),
                &format!("transition row {i}"),
            )?;
        }
        let initial_cdf = cumulative(&initial);
        let mut transition_cdf = Array2::zeros((q, q));
        for (i, row) in transition.rows().into_iter().enumerate() {
            let cdf = cumulative(row.as_slice().expect("standard layout"));
            transition_cdf.row_mut(i).assign(&ndarray::Array1::from(cdf));
        }
        Ok(Self {
            initial,
            transition,
            initial_cdf,
            transition_cdf,
        })
    }

    /// I.i.d. uniform tokens.
    pub fn uniform(q: usize) -> Result<Self> {
        Self::concentrated(q, 0.0, 0)
    }

    /// Uniform start with transition rows `softmax(concentration * g_i)`,
    /// where `g_i` are standard normal scores drawn from `seed`.
    ///
    /// `concentration = 0` gives i.i.d. uniform tokens; larger values make
    /// each row increasingly peaked on a few successors.
    pub fn concentrated(q: usize, concentration: f64, seed: u64) -> Result<Self> {
        if !concentration.is_finite() || concentration < 0.0 {
            return Err(Error::InvalidModel(format!(
                "concentration must be finite and >= 0, got {concentration}"
            )));
        }
        if q < 2 {
            return Err(Error::InvalidModel(format!("codebook size {q} < 2")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = Array2::zeros((q, q));
        for mut row in transition.rows_mut() {
            let logits: Vec<f64> = (0..q)
                .map(|_| concentration * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
            let total: f64 = weights.iter().sum();
            for (dst, w) in row.iter_mut().zip(&weights) {
                *dst = w / total;
            }
        }
        Self::new(vec![1.0 / q as f64; q], transition)
    }

    /// Maximum-likelihood chain with additive smoothing, estimated from
    /// observed sequences.
    pub fn fit(sequences: &[TokenSequence], q: usize, pseudocount: f64) -> Result<Self> {
        if pseudocount <= 0.0 {
            return Err(Error::InvalidModel("pseudocount must be positive".into()));
        }
        let mut initial = vec![pseudocount; q];
        let mut transition = Array2::from_elem((q, q), pseudocount);
        for seq in sequences {
            let s = seq.as_slice();
            if let Some(&first) = s.first() {
                if first >= q {
                    return Err(Error::TokenOutOfRange { id: first, q });
                }
                initial[first] += 1.0;
            }
            for w in s.windows(2) {
                if w[1] >= q {
                    return Err(Error::TokenOutOfRange { id: w[1], q });
                }
                transition[[w[0], w[1]]] += 1.0;
            }
        }
        let total: f64 = initial.iter().sum();
        initial.iter_mut().for_each(|p| *p /= total);
        for mut row in transition.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|c| c / total);
        }
        Self::new(initial, transition)
    }

    pub fn q(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &Array2<f64> {
        &self.transition
    }

    /// `P(next | prev)`.
    #[inline]
    pub fn prob(&self, prev: TokenId, next: TokenId) -> f64 {
        self.transition[[prev, next]]
    }

    /// Draws a length-`n` sequence: `token[0] ~ initial`,
    /// `token[i] ~ transition[token[i-1]]`.
    pub fn sample_sequence<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TokenSequence> {
        if n == 0 {
            return Err(Error::Config("sequence length must be >= 1".into()));
        }
        let mut tokens = Vec::with_capacity(n);
        let mut prev = draw(&self.initial_cdf, rng);
        tokens.push(prev);
        for _ in 1..n {
            let row = self.transition_cdf.row(prev);
            prev = draw(row.as_slice().expect("standard layout"), rng);
            tokens.push(prev);
        }
        Ok(TokenSequence { tokens, q: self.q() })
    }
}

fn check_stochastic(p: &[f64], what: &str) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidModel(format!("{what} has invalid entry {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    // zero-probability tail entries must never be selected
    if let Some(last) = p.iter().rposition(|&v| v > 0.0) {
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
    }
    cdf
}

fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Contents of a token file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenFile {
    pub q: usize,
    pub n: usize,
    pub sequences: Vec<TokenSequence>,
}

/// Parses a token file: a `Q=<int> N=<int>` header line followed by one
/// sequence of `N` space-separated ids per non-empty line.
pub fn load_sequences(path: impl AsRef<Path>) -> Result<TokenFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read token file {}: {e}", path.display())))?;
    parse_token_file(&text).map_err(|(line, msg)| Error::TokenFile {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

fn parse_token_file(text: &str) -> std::result::Result<TokenFile, (usize, String)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or((1, "missing header".to_string()))?;
    let (q, n) = parse_header(header).map_err(|m| (1, m))?;
    let mut sequences = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| (lineno, format!("bad token {t:?}: {e}")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if tokens.len() != n {
            return Err((lineno, format!("expected {n} tokens, found {}", tokens.len())));
        }
        let seq = TokenSequence::new(tokens, q).map_err(|e| (lineno, e.to_string()))?;
        sequences.push(seq);
    }
    Ok(TokenFile { q, n, sequences })
}

fn parse_header(header: &str) -> std::result::Result<(usize, usize), String> {
    let mut q = None;
    let mut n = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("malformed header field {field:?}"))?;
        let value: usize = value.parse().map_err(|e| format!("header {key}: {e}"))?;
        match key {
            "Q" => q = Some(value),
            "N" => n = Some(value),
            _ => return Err(format!("unknown header key {key:?}")),
        }
    }
    match (q, n) {
        (Some(q), Some(n)) if q >= 2 && n >= 1 => Ok((q, n)),
        (Some(_), Some(_)) => Err("header requires Q >= 2 and N >= 1".into()),
        _ => Err("header must declare Q=<int> N=<int>".into()),
    }
}

/// Writes sequences in the token file format.
pub fn write_sequences(path: impl AsRef<Path>, q: usize, sequences: &[TokenSequence]) -> Result<()> {
    let n = sequences.first().map_or(0, TokenSequence::len);
    if sequences.iter().any(|s| s.len() != n) {
        return Err(Error::Dimension("sequences have mixed lengths".into()));
    }
    let mut out = format!("Q={q} N={n}\n");
    for seq in sequences {
        let mut first = true;
        for t in seq.as_slice() {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{t}").expect("write to string");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
