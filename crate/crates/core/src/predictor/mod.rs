//! Masked token prediction.
//!
//! A predictor receives a device's estimated sequence with MASK slots and,
//! for every MASK, the set of candidate tokens left over by assignment. It
//! must return a full sequence that agrees with the input on every
//! committed slot. Candidate-respecting predictors additionally fill each
//! MASK from its candidate set.

pub mod bridge;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::assigner::{AssignmentState, MaskedSequence};
use crate::error::{Error, Result};
use crate::token::{SourceModel, TokenId, TokenSequence};

pub use bridge::{BridgeClient, BridgeEndpoint};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRequest {
    sequence: MaskedSequence,
    candidates: BTreeMap<usize, BTreeSet<TokenId>>,
}

impl PredictionRequest {
    /// Requires a nonempty, in-range candidate set at every MASK slot and
    /// nowhere else.
    pub fn new(sequence: MaskedSequence, candidates: BTreeMap<usize, BTreeSet<TokenId>>) -> Result<Self> {
        for n in sequence.mask_positions() {
            match candidates.get(&n) {
                Some(c) if !c.is_empty() => {
                    if let Some(&id) = c.iter().find(|&&t| t >= sequence.q()) {
                        return Err(Error::TokenOutOfRange { id, q: sequence.q() });
                    }
                }
                _ => return Err(Error::EmptyCandidates(n)),
            }
        }
        if let Some(&n) = candidates
            .keys()
            .find(|&&n| n >= sequence.len() || !sequence.is_masked(n))
        {
            return Err(Error::Config(format!(
                "candidate set given for unmasked slot {n}"
            )));
        }
        Ok(Self { sequence, candidates })
    }

    /// Request for device `k` of an assignment.
    pub fn from_assignment(state: &AssignmentState, k: usize) -> Result<Self> {
        Self::new(state.sequences[k].clone(), state.device_candidates(k))
    }

    pub fn sequence(&self) -> &MaskedSequence {
        &self.sequence
    }

    pub fn candidates(&self) -> &BTreeMap<usize, BTreeSet<TokenId>> {
        &self.candidates
    }

    pub fn q(&self) -> usize {
        self.sequence.q()
    }

    pub fn mask_count(&self) -> usize {
        self.candidates.len()
    }
}

/// Anything that can fill a [`PredictionRequest`].
pub trait MaskPredictor {
    fn predict(&mut self, request: &PredictionRequest) -> Result<TokenSequence>;
}

/// Checks the output contract: same length, agreement on committed slots,
/// and (optionally) candidate membership at MASK slots.
pub fn check_contract(
    request: &PredictionRequest,
    filled: &[TokenId],
    respect_candidates: bool,
) -> Result<()> {
    let seq = request.sequence();
    if filled.len() != seq.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} slots, request has {}",
            filled.len(),
            seq.len()
        )));
    }
    for (n, (&out, slot)) in filled.iter().zip(seq.slots()).enumerate() {
        if out >= seq.q() {
            return Err(Error::TokenOutOfRange { id: out, q: seq.q() });
        }
        match slot {
            Some(t) if *t != out => {
                return Err(Error::Config(format!(
                    "slot {n}: committed token {t} changed to {out}"
                )));
            }
            None if respect_candidates && !request.candidates[&n].contains(&out) => {
                return Err(Error::Config(format!("slot {n}: token {out} is not a candidate")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Fills MASKs left to right with the candidate maximizing
/// `P(t | left) * P(right | t)` under an order-1 Markov model.
///
/// The left neighbor may be a MASK filled earlier in the same pass; a right
/// neighbor that is still masked, like a missing neighbor at either end,
/// contributes no factor. Ties go to the smallest token id.
pub fn markov_predict(request: &PredictionRequest, model: &SourceModel) -> Result<TokenSequence> {
    if model.q() != request.q() {
        return Err(Error::Dimension(format!(
            "model has Q = {}, request has Q = {}",
            model.q(),
            request.q()
        )));
    }
    let slots = request.sequence().slots();
    let mut out: Vec<Option<TokenId>> = slots.to_vec();
    for (&n, candidates) in request.candidates() {
        let left = n.checked_sub(1).and_then(|i| out[i]);
        let right = slots.get(n + 1).copied().flatten();
        let mut best: Option<(TokenId, f64)> = None;
        for &t in candidates {
            let mut score = 1.0;
            if let Some(l) = left {
                score *= model.prob(l, t);
            }
            if let Some(r) = right {
                score *= model.prob(t, r);
            }
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((t, score));
            }
        }
        let (t, _) = best.ok_or(Error::EmptyCandidates(n))?;
        out[n] = Some(t);
    }
    let tokens = out.into_iter().map(|t| t.expect("all masks filled")).collect();
    TokenSequence::new(tokens, request.q())
}

/// Fills every MASK with a uniform draw over the whole codebook, ignoring
/// candidate sets (the context-unaware baseline).
pub fn random_predict<R: Rng + ?Sized>(
    request: &PredictionRequest,
    q: usize,
    rng: &mut R,
) -> Result<TokenSequence> {
    let tokens = request
        .sequence()
        .slots()
        .iter()
        .map(|s| s.unwrap_or_else(|| rng.random_range(0..q)))
        .collect();
    TokenSequence::new(tokens, q)
}

/// Upper-bound oracle: fills each MASK with the true token when it is a
/// candidate, else with the smallest candidate.
pub fn genie_predict(request: &PredictionRequest, truth: &TokenSequence) -> Result<TokenSequence> {
    if truth.len() != request.sequence().len() {
        return Err(Error::Dimension(format!(
            "truth has {} slots, request has {}",
            truth.len(),
            request.sequence().len()
        )));
    }
    let mut tokens: Vec<TokenId> = Vec::with_capacity(truth.len());
    for (n, slot) in request.sequence().slots().iter().enumerate() {
        let t = match slot {
            Some(t) => *t,
            None => {
                let c = &request.candidates()[&n];
                let want = truth.as_slice()[n];
                if c.contains(&want) {
                    want
                } else {
                    *c.first().ok_or(Error::EmptyCandidates(n))?
                }
            }
        };
        tokens.push(t);
    }
    TokenSequence::new(tokens, request.q())
}

/// Markov predictor over a shared model.
#[derive(Debug, Clone, Copy)]
pub struct MarkovPredictor<'a>(pub &'a SourceModel);

impl MaskPredictor for MarkovPredictor<'_> {
    fn predict(&mut self, request: &PredictionRequest) -> Result<TokenSequence> {
        markov_predict(request, self.0)
    }
}

/// Uniform-fill predictor owning its random stream.
#[derive(Debug, Clone)]
pub struct RandomPredictor<R> {
    pub q: usize,
    pub rng: R,
}

impl<R: Rng> MaskPredictor for RandomPredictor<R> {
    fn predict(&mut self, request: &PredictionRequest) -> Result<TokenSequence> {
        random_predict(request, self.q, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::{any, prop, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn masked(slots: &[Option<usize>], q: usize) -> MaskedSequence {
        MaskedSequence::new(slots.to_vec(), q).unwrap()
    }

    fn cands(entries: &[(usize, &[usize])]) -> BTreeMap<usize, BTreeSet<usize>> {
        entries
            .iter()
            .map(|(n, c)| (*n, c.iter().copied().collect()))
            .collect()
    }

    fn cyclic(q: usize) -> SourceModel {
        let t = Array2::from_shape_fn((q, q), |(i, j)| if j == (i + 1) % q { 1.0 } else { 0.0 });
        SourceModel::new(vec![1.0 / q as f64; q], t).unwrap()
    }

    #[test]
    fn singleton_candidate_wins() {
        let req = PredictionRequest::new(masked(&[Some(0), None, Some(2)], 8), cands(&[(1, &[6])])).unwrap();
        assert_eq!(markov_predict(&req, &cyclic(8)).unwrap().as_slice(), &[0, 6, 2]);
    }

    #[test]
    fn cyclic_context_picks_successor() {
        let req =
            PredictionRequest::new(masked(&[Some(0), None, Some(2)], 8), cands(&[(1, &[1, 7])])).unwrap();
        assert_eq!(markov_predict(&req, &cyclic(8)).unwrap().as_slice(), &[0, 1, 2]);
    }

    #[test]
    fn uniform_model_ties_to_smallest() {
        let req =
            PredictionRequest::new(masked(&[Some(0), None, Some(2)], 8), cands(&[(1, &[5, 3])])).unwrap();
        let m = SourceModel::uniform(8).unwrap();
        assert_eq!(markov_predict(&req, &m).unwrap().as_slice(), &[0, 3, 2]);
    }

    #[test]
    fn sequential_fill_uses_filled_left_neighbor() {
        // [0, M, M]: slot 1 -> 1 from left context, then slot 2 -> 2 given filled 1
        let req = PredictionRequest::new(
            masked(&[Some(0), None, None], 4),
            cands(&[(1, &[1, 3]), (2, &[0, 2])]),
        )
        .unwrap();
        assert_eq!(markov_predict(&req, &cyclic(4)).unwrap().as_slice(), &[0, 1, 2]);
    }

    #[test]
    fn boundary_drops_missing_factor() {
        // slot 0 has no left neighbor; right neighbor 2 selects predecessor 1
        let req = PredictionRequest::new(masked(&[None, Some(2)], 4), cands(&[(0, &[0, 1, 3])])).unwrap();
        assert_eq!(markov_predict(&req, &cyclic(4)).unwrap().as_slice(), &[1, 2]);
    }

    #[test]
    fn request_validation() {
        let seq = masked(&[Some(0), None], 4);
        assert!(matches!(
            PredictionRequest::new(seq.clone(), BTreeMap::new()),
            Err(Error::EmptyCandidates(1))
        ));
        assert!(matches!(
            PredictionRequest::new(seq.clone(), cands(&[(1, &[])])),
            Err(Error::EmptyCandidates(1))
        ));
        assert!(PredictionRequest::new(seq.clone(), cands(&[(1, &[4])])).is_err());
        assert!(PredictionRequest::new(seq, cands(&[(0, &[1]), (1, &[1])])).is_err());
    }

    #[test]
    fn model_size_mismatch() {
        let req = PredictionRequest::new(masked(&[None], 4), cands(&[(0, &[1])])).unwrap();
        assert!(markov_predict(&req, &cyclic(5)).is_err());
    }

    #[test]
    fn random_without_masks_is_identity() {
        let req = PredictionRequest::new(masked(&[Some(1), Some(2)], 4), BTreeMap::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_predict(&req, 4, &mut rng).unwrap().as_slice(), &[1, 2]);
    }

    #[test]
    fn random_is_uniform_over_codebook() {
        let q = 64;
        let req = PredictionRequest::new(masked(&[None], q), cands(&[(0, &[3])])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = vec![0usize; q];
        let trials = 100_000;
        for _ in 0..trials {
            counts[random_predict(&req, q, &mut rng).unwrap().as_slice()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / trials as f64 - 1.0 / 64.0).abs() < 0.005);
        }
    }

    #[test]
    fn genie_fills_truth_or_smallest() {
        let truth = TokenSequence::new(vec![4, 5, 6], 8).unwrap();
        let req = PredictionRequest::new(
            masked(&[Some(4), None, None], 8),
            cands(&[(1, &[2, 5]), (2, &[3, 7])]),
        )
        .unwrap();
        assert_eq!(genie_predict(&req, &truth).unwrap().as_slice(), &[4, 5, 3]);
        let short = TokenSequence::new(vec![4], 8).unwrap();
        assert!(genie_predict(&req, &short).is_err());
    }

    #[test]
    fn contract_checker() {
        let req = PredictionRequest::new(masked(&[Some(1), None], 4), cands(&[(1, &[2, 3])])).unwrap();
        assert!(check_contract(&req, &[1, 2], true).is_ok());
        assert!(check_contract(&req, &[1, 0], true).is_err());
        assert!(check_contract(&req, &[1, 0], false).is_ok());
        assert!(check_contract(&req, &[0, 2], false).is_err());
        assert!(check_contract(&req, &[1], false).is_err());
        assert!(check_contract(&req, &[1, 4], false).is_err());
    }

    proptest! {
        #[test]
        fn all_predictors_honor_contract(
            seed in any::<u64>(),
            slots in prop::collection::vec(prop::option::weighted(0.6, 0usize..16), 1..24),
        ) {
            let q = 16;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = masked(&slots, q);
            let candidates = seq
                .mask_positions()
                .map(|n| {
                    let size = rng.random_range(1..5);
                    (n, (0..size).map(|_| rng.random_range(0..q)).collect())
                })
                .collect();
            let req = PredictionRequest::new(seq, candidates).unwrap();
            let model = SourceModel::concentrated(q, 2.0, seed).unwrap();
            let truth = TokenSequence::new(slots.iter().map(|s| s.unwrap_or(0)).collect(), q).unwrap();

            let m1 = markov_predict(&req, &model).unwrap();
            check_contract(&req, m1.as_slice(), true).unwrap();
            prop_assert_eq!(markov_predict(&req, &model).unwrap(), m1);
            check_contract(&req, genie_predict(&req, &truth).unwrap().as_slice(), true).unwrap();
            check_contract(&req, random_predict(&req, q, &mut rng).unwrap().as_slice(), false).unwrap();
        }
    }
}
