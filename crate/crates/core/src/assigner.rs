//! Token assignment: match detected tokens to devices using known CSI.
//!
//! Initial assignment walks devices in order and, per slot, picks the
//! detected token whose projected row is closest to the device's channel.
//! The pick is accepted only when the squared distance per antenna is below
//! the detection threshold; otherwise the slot is masked. Detected tokens
//! nobody claimed form the slot's residual set. The fine-grained update
//! then resolves slots with exactly one residual token, and the remaining
//! residual sets become candidate sets for prediction.

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::ChannelRealization;
use crate::detector::DetectionResult;
use crate::error::{Error, Result};
use crate::token::{TokenId, TokenSequence};

/// A device's estimated sequence; `None` marks a MASK.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedSequence {
    slots: Vec<Option<TokenId>>,
    q: usize,
}

impl MaskedSequence {
    pub fn new(slots: Vec<Option<TokenId>>, q: usize) -> Result<Self> {
        if let Some(id) = slots.iter().flatten().find(|&&t| t >= q) {
            return Err(Error::TokenOutOfRange { id: *id, q });
        }
        Ok(Self { slots, q })
    }

    pub fn all_masked(n: usize, q: usize) -> Self {
        Self {
            slots: vec![None; n],
            q,
        }
    }

    pub fn slots(&self) -> &[Option<TokenId>] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, slot: usize) -> Option<TokenId> {
        self.slots[slot]
    }

    pub fn is_masked(&self, slot: usize) -> bool {
        self.slots[slot].is_none()
    }

    pub fn set(&mut self, slot: usize, token: TokenId) {
        debug_assert!(token < self.q);
        self.slots[slot] = Some(token);
    }

    pub fn mask_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(n, _)| n)
    }

    pub fn mask_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_none()).count()
    }

    /// The committed sequence, if no MASK remains.
    pub fn to_sequence(&self) -> Option<TokenSequence> {
        let tokens = self.slots.iter().copied().collect::<Option<Vec<_>>>()?;
        Some(TokenSequence::new(tokens, self.q).expect("validated on construction"))
    }
}

impl From<&TokenSequence> for MaskedSequence {
    fn from(seq: &TokenSequence) -> Self {
        Self {
            slots: seq.as_slice().iter().map(|&t| Some(t)).collect(),
            q: seq.q(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentState {
    pub sequences: Vec<MaskedSequence>,
    /// Per-slot detected tokens not yet claimed by any device.
    pub residual_sets: Vec<BTreeSet<TokenId>>,
    /// Candidate tokens for every `(device, slot)` MASK.
    pub candidate_sets: BTreeMap<(usize, usize), BTreeSet<TokenId>>,
    q: usize,
}

impl AssignmentState {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_slots(&self) -> usize {
        self.residual_sets.len()
    }

    pub fn mask_count(&self) -> usize {
        self.sequences.iter().map(MaskedSequence::mask_count).sum()
    }

    /// Fraction of `(device, slot)` pairs that are masked.
    pub fn mask_rate(&self) -> f64 {
        let total = self.sequences.len() * self.n_slots();
        if total == 0 {
            return 0.0;
        }
        self.mask_count() as f64 / total as f64
    }

    /// Number of slots with a nonempty residual set.
    pub fn slots_with_residual(&self) -> usize {
        self.residual_sets.iter().filter(|s| !s.is_empty()).count()
    }

    /// Candidate set for device `k`'s MASKs, keyed by slot.
    pub fn device_candidates(&self, k: usize) -> BTreeMap<usize, BTreeSet<TokenId>> {
        self.candidate_sets
            .range((k, 0)..(k + 1, 0))
            .map(|(&(_, n), set)| (n, set.clone()))
            .collect()
    }

    fn refresh_candidates(&mut self) {
        let full: BTreeSet<TokenId> = (0..self.q).collect();
        self.candidate_sets.clear();
        for (k, seq) in self.sequences.iter().enumerate() {
            for n in seq.mask_positions() {
                let residual = &self.residual_sets[n];
                let set = if residual.is_empty() {
                    full.clone()
                } else {
                    residual.clone()
                };
                self.candidate_sets.insert((k, n), set);
            }
        }
    }
}

/// CSI-matched first pass over devices `0..K` in order.
///
/// `detections[n]` is the detection result for slot `n`; `known_csi` has one
/// row per active device.
pub fn initial_assignment(
    detections: &[DetectionResult],
    known_csi: &ChannelRealization,
    threshold: f64,
    q: usize,
) -> Result<AssignmentState> {
    let m = known_csi.m();
    for (n, det) in detections.iter().enumerate() {
        if let Some((&phi, row)) = det.csi_estimates.iter().find(|(_, r)| r.len() != m) {
            return Err(Error::Dimension(format!(
                "slot {n} token {phi}: CSI estimate has {} antennas, known CSI has {m}",
                row.len()
            )));
        }
        if let Some(phi) = det.active_tokens().find(|&t| t >= q) {
            return Err(Error::TokenOutOfRange { id: phi, q });
        }
    }
    let n_slots = detections.len();
    let mut residual_sets: Vec<BTreeSet<TokenId>> =
        detections.iter().map(|d| d.active_tokens().collect()).collect();
    let mut sequences = Vec::with_capacity(known_csi.k());

    for k in 0..known_csi.k() {
        let h_k = known_csi.device(k);
        let mut seq = MaskedSequence::all_masked(n_slots, q);
        for (n, det) in detections.iter().enumerate() {
            let mut best: Option<(TokenId, f64)> = None;
            // ascending ids with strict improvement: ties go to the smallest id
            for (&phi, row) in &det.csi_estimates {
                let d2: f64 = h_k.iter().zip(row).map(|(a, b)| (a - b).norm_sqr()).sum();
                if best.is_none_or(|(_, b)| d2 < b) {
                    best = Some((phi, d2));
                }
            }
            if let Some((phi, d2)) = best {
                if d2 / (m as f64) < threshold {
                    seq.set(n, phi);
                    residual_sets[n].remove(&phi);
                }
            }
        }
        sequences.push(seq);
    }

    let mut state = AssignmentState {
        sequences,
        residual_sets,
        candidate_sets: BTreeMap::new(),
        q,
    };
    state.refresh_candidates();
    Ok(state)
}

/// Resolves slots whose residual set holds exactly one token by writing it
/// into every MASK of that slot.
pub fn fine_grained_update(mut state: AssignmentState) -> AssignmentState {
    for n in 0..state.n_slots() {
        if state.residual_sets[n].len() != 1 {
            continue;
        }
        let token = *state.residual_sets[n].first().expect("one element");
        for seq in &mut state.sequences {
            if seq.is_masked(n) {
                seq.set(n, token);
            }
        }
        state.residual_sets[n].clear();
    }
    state.refresh_candidates();
    state
}
