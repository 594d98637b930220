//! Comparison methods under the same cost accounting as CS-IBLT.
//!
//! Costs are in 64-bit scalars: one raw element is 1 scalar, one IBLT cell
//! is 2, and a Bloom filter of `m` bits is `ceil(m / 64)`.

use thiserror::Error;

use crate::hash;
use crate::iblt::{Element, Iblt, TableParams};
use crate::protocol::{check_deltas, classify, ElementSet, ReconcileOutcome};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaselineError {
    #[error("universe [1, {0}] is too large to enumerate")]
    UniverseTooLarge(u64),
    #[error("element {0} lies outside the universe [1, {1}]")]
    OutsideUniverse(Element, u64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
}

/// Largest universe the Bloom baseline will enumerate.
pub const MAX_UNIVERSE: u64 = 1 << 24;

/// Spare capacity of the last-resort table once every guess has failed:
/// the fallback table has `2n * FALLBACK_MARGIN` cells.
pub const FALLBACK_MARGIN: u64 = 2;

/// Receiver gets all of `S_A`; cost `|S_A|`.
pub fn naive_reconcile(s_a: &ElementSet, s_b: &ElementSet) -> ReconcileOutcome {
    ReconcileOutcome {
        delta_a: s_a.difference(s_b).copied().collect(),
        delta_b: s_b.difference(s_a).copied().collect(),
        scalars_sent: s_a.len() as u64,
        handshake_messages: 0,
        rounds: 1,
        success: true,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    words: Vec<u64>,
    bits: usize,
    hashes: usize,
    seed: u64,
}

impl BloomFilter {
    pub fn new(bits: usize, hashes: usize, seed: u64) -> Self {
        Self {
            words: vec![0; bits.div_ceil(64)],
            bits,
            hashes: hashes.max(1),
            seed,
        }
    }

    /// Filter for `items` elements at `bits_per_element` bits each, with the
    /// false-positive-optimal hash count `round(bits_per_element * ln 2)`.
    pub fn for_capacity(items: usize, bits_per_element: usize, seed: u64) -> Self {
        let hashes = ((bits_per_element as f64) * std::f64::consts::LN_2).round() as usize;
        Self::new(items * bits_per_element, hashes.clamp(1, 16), seed)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn hashes(&self) -> usize {
        self.hashes
    }

    /// Cost of shipping the bit array, in 64-bit scalars.
    pub fn scalar_cost(&self) -> u64 {
        self.bits.div_ceil(64) as u64
    }

    fn positions(&self, e: Element) -> impl Iterator<Item = usize> + '_ {
        let h1 = hash::keyed(e.get() as u64, self.seed, 0);
        let h2 = hash::keyed(e.get() as u64, self.seed, 1) | 1;
        (0..self.hashes as u64).map(move |i| hash::reduce(h1.wrapping_add(i.wrapping_mul(h2)), self.bits))
    }

    pub fn insert(&mut self, e: Element) {
        if self.bits == 0 {
            return;
        }
        let pos: Vec<usize> = self.positions(e).collect();
        for p in pos {
            self.words[p / 64] |= 1 << (p % 64);
        }
    }

    pub fn contains(&self, e: Element) -> bool {
        self.bits > 0 && self.positions(e).all(|p| self.words[p / 64] >> (p % 64) & 1 == 1)
    }
}

/// Host A ships a Bloom filter of `S_A`; host B flags members of `S_B` the
/// filter rejects as `Δ_B` and every other universe element the filter
/// accepts as `Δ_A`.
///
/// The filter never rejects a member of `S_A`, so the `Δ_B` candidates are
/// all genuine and no element of `Δ_A` is missed. False positives can hide
/// elements of `Δ_B` and add spurious elements to `Δ_A`.
pub fn bloom_reconcile(
    s_a: &ElementSet,
    s_b: &ElementSet,
    universe_max: u64,
    bits_per_element: usize,
    seed: u64,
) -> Result<ReconcileOutcome, BaselineError> {
    if universe_max > MAX_UNIVERSE {
        return Err(BaselineError::UniverseTooLarge(universe_max));
    }
    if let Some(e) = s_a.iter().chain(s_b).find(|e| u64::from(**e) > universe_max) {
        return Err(BaselineError::OutsideUniverse(*e, universe_max));
    }
    let mut filter = BloomFilter::for_capacity(s_a.len(), bits_per_element, seed);
    for e in s_a {
        filter.insert(*e);
    }

    let delta_b: ElementSet = s_b.iter().filter(|e| !filter.contains(**e)).copied().collect();
    let delta_a: ElementSet = (1..=universe_max)
        .map(|v| Element::new(v).expect("universe starts at 1"))
        .filter(|e| !s_b.contains(e) && filter.contains(*e))
        .collect();
    let success = check_deltas(s_b, &delta_a, &delta_b).is_ok();
    Ok(ReconcileOutcome {
        delta_a,
        delta_b,
        scalars_sent: filter.scalar_cost(),
        handshake_messages: 0,
        rounds: 1,
        success,
        ..Default::default()
    })
}

/// Difference-size guesses `n/2, (n + g)/2, ...` (rounded up) ending at `n`.
pub fn guess_schedule(n: u64) -> Vec<u64> {
    if n == 0 {
        return Vec::new();
    }
    let mut out = vec![n.div_ceil(2)];
    while let Some(&g) = out.last() {
        if g >= n {
            break;
        }
        out.push((n + g).div_ceil(2).min(n));
    }
    out
}

/// Cells an IBLT sized for a known difference `d` would use.
pub fn oracle_iblt_cells(d: u64) -> u64 {
    2 * d
}

/// Table length for a round: `2 * guess` cells, but never fewer than `k`.
pub fn round_cells(guess: u64, k: usize) -> u64 {
    (2 * guess).max(k as u64)
}

/// Plain IBLT reconciliation without knowing `d`: send a fresh table sized
/// for each guess in [`guess_schedule`] until one decodes, then a final
/// table of `2n * FALLBACK_MARGIN` cells if all of them failed.
pub fn iblt_guess_reconcile(
    s_a: &ElementSet,
    s_b: &ElementSet,
    n: u64,
    k: usize,
    seed: u64,
) -> Result<ReconcileOutcome, BaselineError> {
    if n == 0 || k < 2 {
        return Err(BaselineError::InvalidParameters(format!("n={n}, k={k}")));
    }
    let schedule = guess_schedule(n);
    let fallback = 2 * n * FALLBACK_MARGIN;
    let mut out = ReconcileOutcome::default();
    let sizes = schedule
        .iter()
        .map(|&g| round_cells(g, k))
        .chain(std::iter::once(fallback.max(k as u64)));

    for (round, cells) in sizes.enumerate() {
        let params = TableParams::new(cells as usize, k, hash::keyed(round as u64, seed, 7))
            .map_err(|e| BaselineError::InvalidParameters(e.to_string()))?;
        let a = Iblt::from_elements(params, s_a);
        let b = Iblt::from_elements(params, s_b);
        let diff = a.subtract(&b).expect("same parameters");
        out.rounds += 1;
        // Each round ends with a reply from B: failure notice or final ack.
        out.handshake_messages += 1;
        out.scalars_sent += 2 * cells;
        out.fallback_used = round >= schedule.len();
        if let Ok((delta_a, delta_b)) = classify(&diff.list_entries()) {
            if check_deltas(s_b, &delta_a, &delta_b).is_ok() {
                out.delta_a = delta_a;
                out.delta_b = delta_b;
                out.success = true;
                return Ok(out);
            }
        }
    }
    Ok(out)
}
