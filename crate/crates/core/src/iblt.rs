//! Signed invertible Bloom lookup table.
//!
//! Every cell holds a `(sum, count)` pair. Inserting an element adds it to
//! the `k` cells it hashes to, deleting subtracts it, so cells form a
//! commutative group and the cellwise difference of two tables built from
//! `S_A` and `S_B` is the table of `S_A \ S_B` inserted and `S_B \ S_A`
//! deleted. [`Iblt::list_entries`] peels such signed tables directly.
//!
//! Cell indices for an element `e` are found by drawing
//! `reduce(keyed(e, seed, attempt), b)` for `attempt = 0, 1, 2, ...` and
//! skipping repeats until `k` distinct indices are collected (see
//! [`crate::hash`] for the exact mixer).

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::hash;

/// Exclusive upper bound on element values.
pub const ELEMENT_LIMIT: u64 = 1 << 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IbltError {
    #[error("invalid table parameters: b={b}, k={k} (need b >= k >= 2)")]
    InvalidParameters { b: usize, k: usize },
    #[error("table parameters differ: {left:?} vs {right:?}")]
    ParameterMismatch {
        left: TableParams,
        right: TableParams,
    },
    #[error("invalid element {0}: must satisfy 1 <= e < 2^32")]
    InvalidElement(u64),
}

/// A set member. Always in `[1, 2^32)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element(u32);

impl Element {
    pub fn new(value: u64) -> Result<Self, IbltError> {
        if value == 0 || value >= ELEMENT_LIMIT {
            return Err(IbltError::InvalidElement(value));
        }
        Ok(Element(value as u32))
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u64> for Element {
    type Error = IbltError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        Element::new(value)
    }
}

impl From<Element> for u64 {
    fn from(e: Element) -> u64 {
        e.0 as u64
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IbltCell {
    pub sum: i64,
    pub count: i64,
}

impl IbltCell {
    #[inline]
    pub fn is_zero(&self) -> bool {
        self.sum == 0 && self.count == 0
    }
}

/// The shape and hashing of a table. Two tables are compatible iff these agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableParams {
    pub b: usize,
    pub k: usize,
    pub seed: u64,
}

impl TableParams {
    pub fn new(b: usize, k: usize, seed: u64) -> Result<Self, IbltError> {
        if k < 2 || b < k {
            return Err(IbltError::InvalidParameters { b, k });
        }
        Ok(Self { b, k, seed })
    }

    /// The `k` distinct cell indices of `e`.
    pub fn cell_indices(&self, e: Element) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k);
        let mut attempt = 0u64;
        while out.len() < self.k {
            let idx = hash::reduce(hash::keyed(e.get() as u64, self.seed, attempt), self.b);
            if !out.contains(&idx) {
                out.push(idx);
            }
            attempt += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Iblt {
    params: TableParams,
    cells: Vec<IbltCell>,
}

/// Extracted elements a stalled peel may rule out before giving up.
pub const MAX_BANS: usize = 2;

/// Output of peeling a (possibly signed) table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractResult {
    /// Elements peeled from cells with count `+1`.
    pub positives: BTreeSet<Element>,
    /// Elements peeled from cells with count `-1`, reported as positive values.
    pub negatives: BTreeSet<Element>,
    pub success: bool,
    pub residual_cells: usize,
}

impl Iblt {
    pub fn new(b: usize, k: usize, seed: u64) -> Result<Self, IbltError> {
        Ok(Self::with_params(TableParams::new(b, k, seed)?))
    }

    pub fn with_params(params: TableParams) -> Self {
        Self {
            params,
            cells: vec![IbltCell::default(); params.b],
        }
    }

    /// Builds a table from raw cells, e.g. a quantized recovery.
    pub fn from_cells(params: TableParams, cells: Vec<IbltCell>) -> Result<Self, IbltError> {
        if cells.len() != params.b {
            return Err(IbltError::InvalidParameters {
                b: cells.len(),
                k: params.k,
            });
        }
        Ok(Self { params, cells })
    }

    /// Table of `items` inserted into an empty table.
    pub fn from_elements<'a>(
        params: TableParams,
        items: impl IntoIterator<Item = &'a Element>,
    ) -> Self {
        let mut t = Self::with_params(params);
        for e in items {
            t.insert(*e);
        }
        t
    }

    pub fn params(&self) -> TableParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.params.b
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(IbltCell::is_zero)
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn cells(&self) -> &[IbltCell] {
        &self.cells
    }

    pub fn cell_indices(&self, e: Element) -> Vec<usize> {
        self.params.cell_indices(e)
    }

    pub fn insert(&mut self, e: Element) {
        self.apply(e, 1);
    }

    pub fn delete(&mut self, e: Element) {
        self.apply(e, -1);
    }

    fn apply(&mut self, e: Element, sign: i64) {
        let v = e.get() as i64;
        for i in self.params.cell_indices(e) {
            let cell = &mut self.cells[i];
            cell.sum = cell
                .sum
                .checked_add(sign * v)
                .expect("IBLT cell sum overflowed i64");
            cell.count = cell
                .count
                .checked_add(sign)
                .expect("IBLT cell count overflowed i64");
        }
    }

    /// Cellwise `self - other`.
    pub fn subtract(&self, other: &Iblt) -> Result<Iblt, IbltError> {
        if self.params != other.params {
            return Err(IbltError::ParameterMismatch {
                left: self.params,
                right: other.params,
            });
        }
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(a, b)| IbltCell {
                sum: a.sum - b.sum,
                count: a.count - b.count,
            })
            .collect();
        Ok(Iblt {
            params: self.params,
            cells,
        })
    }

    /// Number of nonzero cells.
    pub fn nonzero_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_zero()).count()
    }

    /// A cell is pure if it plausibly holds exactly one element: count is
    /// `±1`, the sum carries the same sign, the magnitude is a valid element
    /// and that element hashes back to this cell.
    fn pure_element(&self, idx: usize) -> Option<(Element, i64)> {
        let cell = self.cells[idx];
        if cell.count != 1 && cell.count != -1 {
            return None;
        }
        if cell.sum.signum() != cell.count {
            return None;
        }
        let e = Element::new(cell.sum.unsigned_abs()).ok()?;
        self.params
            .cell_indices(e)
            .contains(&idx)
            .then_some((e, cell.count))
    }

    /// Peels every recoverable element. The table itself is left untouched.
    ///
    /// In a signed table a cell holding several elements can still look pure
    /// and hash back by chance, and peeling it corrupts its neighbours. When a
    /// peel stalls, it is rerun with one of the extracted elements banned; the
    /// ban that leaves the fewest nonzero cells is kept and the search goes
    /// one level deeper, up to [`MAX_BANS`] elements.
    pub fn list_entries(&self) -> ExtractResult {
        let mut banned = BTreeSet::new();
        let (mut best, mut order) = self.peel(&banned);
        while !best.success && banned.len() < MAX_BANS {
            let mut next: Option<(ExtractResult, Vec<Element>, Element)> = None;
            for &e in &order {
                if banned.contains(&e) {
                    continue;
                }
                banned.insert(e);
                let (res, ord) = self.peel(&banned);
                banned.remove(&e);
                if res.success {
                    return res;
                }
                if next.as_ref().is_none_or(|(r, _, _)| res.residual_cells < r.residual_cells) {
                    next = Some((res, ord, e));
                }
            }
            let Some((res, ord, e)) = next else { break };
            banned.insert(e);
            best = res;
            order = ord;
        }
        best
    }

    /// One peeling pass that never extracts `banned` elements. Also returns
    /// the distinct elements in extraction order.
    fn peel(&self, banned: &BTreeSet<Element>) -> (ExtractResult, Vec<Element>) {
        let mut work = self.clone();
        // Net multiplicity of each peeled element; positive means it was
        // inserted, negative means it was deleted.
        let mut net: BTreeMap<Element, i64> = BTreeMap::new();
        let mut order = Vec::new();
        let mut queue: Vec<usize> = (0..work.params.b).rev().collect();
        // A genuine table needs at most one extraction per stored element,
        // and no drainable table stores more elements than it has cells.
        let mut budget = 2 * work.params.b;

        while let Some(idx) = queue.pop() {
            let Some((e, sign)) = work.pure_element(idx) else {
                continue;
            };
            if banned.contains(&e) {
                continue;
            }
            if budget == 0 {
                break;
            }
            budget -= 1;
            let m = net.entry(e).or_insert_with(|| {
                order.push(e);
                0
            });
            *m += sign;
            for i in work.params.cell_indices(e) {
                let cell = &mut work.cells[i];
                // Garbage tables may sit near the i64 limits.
                cell.sum = cell.sum.saturating_sub(sign * e.get() as i64);
                cell.count = cell.count.saturating_sub(sign);
                queue.push(i);
            }
        }

        let residual_cells = work.nonzero_cells();
        let mut out = ExtractResult {
            success: residual_cells == 0,
            residual_cells,
            ..Default::default()
        };
        for (e, m) in net {
            match m.signum() {
                1 => {
                    out.positives.insert(e);
                }
                -1 => {
                    out.negatives.insert(e);
                }
                _ => {}
            }
        }
        (out, order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(v: u64) -> Element {
        Element::new(v).unwrap()
    }

    fn set(vals: impl IntoIterator<Item = u64>) -> Vec<Element> {
        vals.into_iter().map(el).collect()
    }

    #[test]
    fn new_rejects_bad_shapes() {
        assert_eq!(
            Iblt::new(1, 2, 0).unwrap_err(),
            IbltError::InvalidParameters { b: 1, k: 2 }
        );
        assert!(Iblt::new(5, 1, 0).is_err());
        let t = Iblt::new(14, 2, 7).unwrap();
        assert_eq!(t.len(), 14);
        assert!(t.cells().iter().all(IbltCell::is_zero));
        let big = Iblt::new(2400, 3, 1).unwrap();
        assert_eq!(big.cells().iter().map(|c| c.count).sum::<i64>(), 0);
    }

    #[test]
    fn element_bounds() {
        assert!(Element::new(0).is_err());
        assert!(Element::new(1 << 32).is_err());
        assert_eq!(Element::new((1 << 32) - 1).unwrap().get(), u32::MAX);
    }

    #[test]
    fn cell_indices_golden() {
        // Frozen from the reference mixer; changing the hash breaks wire compatibility.
        let p = TableParams::new(8, 2, 42).unwrap();
        assert_eq!(p.cell_indices(el(5)), vec![0, 1]);
        assert_eq!(p.cell_indices(el(5)), p.cell_indices(el(5)));
    }

    #[test]
    fn cell_indices_distinct() {
        let p = TableParams::new(1000, 3, 9).unwrap();
        for v in 1..=10_000u64 {
            let idx = p.cell_indices(el(v * 7919));
            assert_eq!(idx.len(), 3);
            assert!(idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2]);
            assert!(idx.iter().all(|&i| i < 1000));
        }
        // b == k forces a permutation of all cells.
        let tight = TableParams::new(3, 3, 1).unwrap();
        let mut idx = tight.cell_indices(el(77));
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn insert_single_element() {
        let mut t = Iblt::new(8, 2, 42).unwrap();
        t.insert(el(5));
        let idx = t.cell_indices(el(5));
        for (i, c) in t.cells().iter().enumerate() {
            if idx.contains(&i) {
                assert_eq!(*c, IbltCell { sum: 5, count: 1 });
            } else {
                assert!(c.is_zero());
            }
        }
    }

    #[test]
    fn delete_produces_signed_cells() {
        let mut t = Iblt::new(14, 2, 0).unwrap();
        t.delete(el(8));
        for i in t.cell_indices(el(8)) {
            assert_eq!(t.cells()[i], IbltCell { sum: -8, count: -1 });
        }
        let mut u = Iblt::new(14, 2, 0).unwrap();
        u.insert(el(3));
        u.insert(el(3));
        u.delete(el(3));
        for i in u.cell_indices(el(3)) {
            assert_eq!(u.cells()[i], IbltCell { sum: 3, count: 1 });
        }
    }

    #[test]
    fn insert_then_delete_is_identity() {
        let mut t = Iblt::from_elements(TableParams::new(20, 3, 5).unwrap(), &set([10, 20, 30]));
        let before = t.clone();
        t.insert(el(99));
        t.delete(el(99));
        assert_eq!(t, before);
    }

    #[test]
    fn subtract_requires_matching_params() {
        let a = Iblt::new(14, 2, 1).unwrap();
        let b = Iblt::new(14, 2, 2).unwrap();
        assert!(matches!(
            a.subtract(&b),
            Err(IbltError::ParameterMismatch { .. })
        ));
        let x = Iblt::from_elements(a.params(), &set([4, 5, 6]));
        assert!(x.subtract(&x).unwrap().is_empty());
    }

    #[test]
    fn figure_one_difference_peels() {
        let p = TableParams::new(14, 2, 0).unwrap();
        let a = Iblt::from_elements(p, &set(1..=7));
        let b = Iblt::from_elements(p, &set(2..=8));
        assert_eq!(a.cells().iter().map(|c| c.count).sum::<i64>(), 14);
        let r = a.subtract(&b).unwrap().list_entries();
        assert!(r.success);
        assert_eq!(r.positives, set([1]).into_iter().collect());
        assert_eq!(r.negatives, set([8]).into_iter().collect());
    }

    #[test]
    fn empty_table_lists_nothing() {
        let r = Iblt::new(10, 3, 0).unwrap().list_entries();
        assert!(r.success);
        assert!(r.positives.is_empty() && r.negatives.is_empty());
        assert_eq!(r.residual_cells, 0);
    }

    #[test]
    fn unpeelable_cell_fails() {
        let p = TableParams::new(10, 2, 0).unwrap();
        let mut cells = vec![IbltCell::default(); 10];
        cells[4] = IbltCell { sum: 7, count: 2 };
        let r = Iblt::from_cells(p, cells).unwrap().list_entries();
        assert!(!r.success);
        assert_eq!(r.residual_cells, 1);
    }

    #[test]
    fn peel_rejects_elements_that_do_not_hash_back() {
        let p = TableParams::new(50, 3, 11).unwrap();
        let e = el(12345);
        let home = p.cell_indices(e);
        let foreign = (0..50).find(|i| !home.contains(i)).unwrap();
        let mut cells = vec![IbltCell::default(); 50];
        cells[foreign] = IbltCell { sum: 12345, count: 1 };
        let r = Iblt::from_cells(p, cells).unwrap().list_entries();
        assert!(!r.success);
        assert!(r.positives.is_empty());
    }

    #[test]
    fn peel_rejects_sign_mismatch() {
        let p = TableParams::new(12, 2, 3).unwrap();
        let e = el(40);
        let mut cells = vec![IbltCell::default(); 12];
        for i in p.cell_indices(e) {
            cells[i] = IbltCell { sum: -40, count: 1 };
        }
        let r = Iblt::from_cells(p, cells).unwrap().list_entries();
        assert!(!r.success);
    }

    #[test]
    fn list_entries_leaves_table_intact() {
        let t = Iblt::from_elements(TableParams::new(30, 3, 2).unwrap(), &set([3, 9, 27]));
        let before = t.clone();
        let r = t.list_entries();
        assert!(r.success);
        assert_eq!(r.positives.len(), 3);
        assert_eq!(t, before);
    }

    /// Signed tables must drain about as often as unsigned tables on the same
    /// hypergraph, even though multi-element cells can pass for pure ones.
    #[test]
    fn signed_tables_recover_from_false_peels() {
        let mut rng = hash::SplitMix64::new(99);
        let (mut plain, mut signed) = (0, 0);
        for seed in 0..300 {
            let p = TableParams::new(200, 3, seed).unwrap();
            let elems: BTreeSet<Element> = std::iter::from_fn(|| Some(el((rng.next_u64() >> 32).max(1))))
                .take(100)
                .collect();
            let mut pos = Iblt::with_params(p);
            let mut mixed = Iblt::with_params(p);
            for (i, &e) in elems.iter().enumerate() {
                pos.insert(e);
                if i % 2 == 0 {
                    mixed.insert(e);
                } else {
                    mixed.delete(e);
                }
            }
            plain += pos.list_entries().success as u32;
            let r = mixed.list_entries();
            if r.success {
                signed += 1;
                assert_eq!(r.positives.len() + r.negatives.len(), elems.len());
            }
        }
        assert!(plain >= 290, "{plain}");
        assert!(signed + 3 >= plain, "signed {signed} vs plain {plain}");
    }
}
