//! Exact blocked top-K over cosine similarities.
//!
//! No N×N similarity matrix is ever materialized: anchors are processed in
//! fixed-size blocks and each anchor keeps a bounded selection of its best
//! candidates while the data rows stream past. Selection compares
//! `(value desc, index asc)`, a total order on finite similarities, so the
//! result is independent of block size, tile size, and thread count.

use rayon::prelude::*;

use crate::embed::{fixed_order_dot, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Default number of anchor rows per block.
pub const DEFAULT_BLOCK_SIZE: usize = 4096;

/// Anchor rows per cache tile inside a block. Rows of the data matrix are
/// streamed once per tile instead of once per anchor.
const ANCHOR_TILE: usize = 64;

/// One similarity entry. Ordered by "better": larger value wins, equal
/// values go to the smaller index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SimEntry {
    pub value: f32,
    pub index: u32,
}

impl Eq for SimEntry {}

impl Ord for SimEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Finite values only; embeddings are validated on construction.
        self.value
            .partial_cmp(&other.value)
            .expect("similarity values are finite")
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for SimEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded selection of the k best entries seen so far.
///
/// Backed by a min-heap whose top is the worst retained entry; a candidate
/// replaces it only when strictly better under the `(value desc, index asc)`
/// order, which makes the retained set identical to the first k entries of
/// a full sort regardless of insertion order.
pub(crate) struct BoundedTopK {
    k: usize,
    heap: std::collections::BinaryHeap<std::cmp::Reverse<SimEntry>>,
}

impl BoundedTopK {
    pub fn new(k: usize) -> Self {
        BoundedTopK {
            k,
            heap: std::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn consider(&mut self, value: f32, index: u32) {
        let entry = SimEntry { value, index };
        if self.heap.len() < self.k {
            self.heap.push(std::cmp::Reverse(entry));
        } else if let Some(worst) = self.heap.peek() {
            if entry > worst.0 {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(entry));
            }
        }
    }

    /// Drain into `(value desc, index asc)` order.
    pub fn into_sorted(self) -> Vec<SimEntry> {
        let mut entries: Vec<SimEntry> = self.heap.into_iter().map(|r| r.0).collect();
        entries.sort_unstable_by(|a, b| b.cmp(a));
        entries
    }
}

/// Top-K similarities of one anchor row against every row (self included).
#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    /// The anchor row the similarities are measured against.
    pub anchor: usize,
    /// k sample indices sorted by descending similarity (ties: smaller index).
    pub indices: Vec<usize>,
    /// The corresponding cosine similarities, non-increasing.
    pub values: Vec<f32>,
}

/// `topk_similar` with the default block size.
pub fn topk_similar(m: &EmbeddingMatrix, anchor: usize, k: usize) -> Result<TopKResult> {
    topk_similar_with_block(m, anchor, k, DEFAULT_BLOCK_SIZE)
}

/// The k rows with largest dot product to `row(anchor)`, ties broken by
/// smaller index. Candidates are scanned in blocks of `block_size` rows.
pub fn topk_similar_with_block(
    m: &EmbeddingMatrix,
    anchor: usize,
    k: usize,
    block_size: usize,
) -> Result<TopKResult> {
    m.require_normalized()?;
    let n = m.n();
    if anchor >= n {
        return Err(Error::IndexOutOfRange { index: anchor, n });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k must satisfy 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let block_size = block_size.max(1);
    let anchor_row = m.row(anchor);
    let mut sel = BoundedTopK::new(k);
    let mut start = 0;
    while start < n {
        let end = (start + block_size).min(n);
        for j in start..end {
            sel.consider(fixed_order_dot(anchor_row, m.row(j)), j as u32);
        }
        start = end;
    }
    let entries = sel.into_sorted();
    Ok(TopKResult {
        anchor,
        indices: entries.iter().map(|e| e.index as usize).collect(),
        values: entries.iter().map(|e| e.value).collect(),
    })
}

/// Run `f(anchor, sorted_top_k)` for every anchor row and collect the
/// results in row order.
///
/// Anchors are processed in blocks of `block_size` (parallel across blocks)
/// and in tiles of [`ANCHOR_TILE`] within a block; data rows stream once per
/// tile. `f` sees entries in `(value desc, index asc)` order.
pub(crate) fn map_row_topk<T, F>(
    m: &EmbeddingMatrix,
    k: usize,
    block_size: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[SimEntry]) -> T + Sync,
{
    m.require_normalized()?;
    let n = m.n();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k must satisfy 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let block_size = block_size.max(1);
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(block_size)
        .map(|s| (s, (s + block_size).min(n)))
        .collect();

    let per_block: Vec<Vec<T>> = blocks
        .into_par_iter()
        .map(|(bs, be)| {
            let mut out = Vec::with_capacity(be - bs);
            let mut tile_start = bs;
            while tile_start < be {
                let tile_end = (tile_start + ANCHOR_TILE).min(be);
                let anchors: Vec<&[f32]> = (tile_start..tile_end).map(|i| m.row(i)).collect();
                let mut sels: Vec<BoundedTopK> =
                    (0..anchors.len()).map(|_| BoundedTopK::new(k)).collect();
                for j in 0..n {
                    let row_j = m.row(j);
                    for (a, sel) in anchors.iter().zip(sels.iter_mut()) {
                        sel.consider(fixed_order_dot(a, row_j), j as u32);
                    }
                }
                for (offset, sel) in sels.into_iter().enumerate() {
                    let entries = sel.into_sorted();
                    out.push(f(tile_start + offset, &entries));
                }
                tile_start = tile_end;
            }
            out
        })
        .collect();

    Ok(per_block.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(rows: &[Vec<f32>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap().normalize_rows().unwrap()
    }

    #[test]
    fn duplicate_anchor_hand_case() {
        let m = unit_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = topk_similar(&m, 0, 2).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        assert_eq!(r.values, vec![1.0, 1.0]);
    }

    #[test]
    fn k1_returns_self() {
        let m = unit_rows(&[vec![0.3, 0.4], vec![-0.5, 0.1], vec![0.9, 2.0]]);
        for anchor in 0..3 {
            let r = topk_similar(&m, anchor, 1).unwrap();
            assert_eq!(r.indices, vec![anchor]);
            assert!((r.values[0] - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn diagonal_tie_breaks_to_smaller_index() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let m = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]]);
        let r = topk_similar(&m, 2, 3).unwrap();
        assert_eq!(r.indices, vec![2, 0, 1]);
        assert!((r.values[0] - 1.0).abs() <= 1e-5);
        assert!((r.values[1] - s).abs() <= 1e-4);
        assert!((r.values[2] - s).abs() <= 1e-4);
        // exact tie between indices 0 and 1: both see the same dot product
        assert_eq!(r.values[1].to_bits(), r.values[2].to_bits());
    }

    #[test]
    fn k_out_of_range() {
        let m = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(topk_similar(&m, 0, 3).is_err());
        assert!(topk_similar(&m, 0, 0).is_err());
        assert!(topk_similar(&m, 2, 1).is_err());
    }

    #[test]
    fn requires_normalized_input() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        match topk_similar(&m, 0, 1) {
            Err(Error::NotNormalized) => {}
            other => panic!("expected NotNormalized, got {other:?}"),
        }
    }

    #[test]
    fn block_size_does_not_change_result() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let m = unit_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![s, s],
            vec![-1.0, 0.0],
            vec![0.6, 0.8],
        ]);
        let reference = topk_similar_with_block(&m, 4, 5, 5).unwrap();
        for block in [1, 2, 3, 7, 64] {
            let r = topk_similar_with_block(&m, 4, 5, block).unwrap();
            assert_eq!(r, reference, "block={block}");
        }
    }

    #[test]
    fn map_row_topk_consistent_with_single_anchor() {
        let m = unit_rows(&[
            vec![0.1, 0.9, 0.3],
            vec![0.8, 0.2, 0.0],
            vec![0.4, 0.4, 0.4],
            vec![-0.3, 0.5, 0.7],
        ]);
        let per_row = map_row_topk(&m, 3, 2, |anchor, entries| {
            (anchor, entries.to_vec())
        })
        .unwrap();
        for (anchor, entries) in per_row {
            let single = topk_similar(&m, anchor, 3).unwrap();
            let idx: Vec<usize> = entries.iter().map(|e| e.index as usize).collect();
            let val: Vec<f32> = entries.iter().map(|e| e.value).collect();
            assert_eq!(idx, single.indices);
            assert_eq!(val, single.values);
        }
    }
}
